//! Reverse-mode gradient tape over row-major matrices.
//!
//! Nodes are recorded in execution order; [`Tape::backward`] walks them in
//! reverse. Each op owns a hand-written adjoint, so the tape holds only what
//! the network and losses need.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::{self, MatchSet};
use crate::net::params::ParamSet;
use crate::voxel::Coord;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

pub const NEIGHBORS: usize = 27;
pub const CENTER_OFFSET: usize = 13;
const NONE: u32 = u32::MAX;

/// Neighbor table of a submanifold 3x3x3 aggregation.
///
/// Offsets are enumerated lexicographically over `{-1, 0, 1}^3`, so offset
/// `o` and `26 - o` are opposite.
#[derive(Debug, Clone)]
pub struct Rulebook {
    sites: usize,
    table: Vec<u32>,
}

impl Rulebook {
    pub fn new(coords: &[Coord]) -> Self {
        let index: HashMap<Coord, u32> = coords.iter().enumerate().map(|(i, c)| (*c, i as u32)).collect();
        let mut table = vec![NONE; coords.len() * NEIGHBORS];
        for (i, c) in coords.iter().enumerate() {
            let mut o = 0;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(&j) = index.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            table[i * NEIGHBORS + o] = j;
                        }
                        o += 1;
                    }
                }
            }
        }
        Self {
            sites: coords.len(),
            table,
        }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    #[inline]
    fn neighbor(&self, site: usize, offset: usize) -> Option<usize> {
        match self.table[site * NEIGHBORS + offset] {
            NONE => None,
            j => Some(j as usize),
        }
    }
}

enum Op {
    Constant,
    Param(String),
    SubmConv { x: Var, w: Var, b: Var, rules: Arc<Rulebook> },
    Relu(Var),
    BevMax { x: Var, arg: Vec<Option<usize>> },
    Linear { x: Var, w: Var, b: Var },
    Standardize { x: Var, inv_std: Vec<f64> },
    FixedAffine { x: Var, scale: Vec<f64> },
    MeanRows(Var),
    StackRows(Vec<Var>),
    GatherNormalize { voxels: Var, cells: Var, rows: Vec<(usize, usize)>, norms: Vec<f64> },
    InfoNce { a: Var, b: Var, grad_a: Vec<f64>, grad_b: Vec<f64> },
    CrossEntropy { logits: Var, grad: Vec<f64> },
    FlowL2 { z: Var, y: Var, grad_z: Vec<f64>, grad_y: Vec<f64> },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Standardization epsilon shared by every normalization layer.
pub const NORM_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Branch taken at every non-smooth node: ReLU gates and pooling
    /// winners. Two evaluations with equal patterns lie on one smooth piece.
    pub fn activation_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for n in &self.nodes {
            match &n.op {
                Op::Relu(x) => out.extend(self.value(*x).iter().map(|&v| (v > 0.0) as usize)),
                Op::BevMax { arg, .. } => out.extend(arg.iter().map(|a| a.map_or(0, |i| i + 1))),
                _ => {}
            }
        }
        out
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn expect_cols(&self, v: Var, cols: usize, layer: &'static str) -> Result<()> {
        let actual = self.nodes[v.0].cols;
        if actual != cols {
            return Err(Error::ChannelMismatch {
                layer,
                expected: cols,
                actual,
            });
        }
        Ok(())
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        self.push(rows, cols, value, false, Op::Constant)
    }

    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        let p = params.require(name)?;
        let (r, c) = p.matrix_shape();
        Ok(self.push(r, c, p.data.clone(), p.trainable, Op::Param(name.to_string())))
    }

    /// Submanifold aggregation: `out_i = b + sum_o W_o^T x_{n(i, o)}`.
    /// `w` is `[27 * cin, cout]`.
    pub fn subm_conv(&mut self, x: Var, w: Var, b: Var, rules: Arc<Rulebook>) -> Result<Var> {
        let (n, cin) = self.shape(x);
        let (wr, cout) = self.shape(w);
        if wr != NEIGHBORS * cin {
            return Err(Error::ChannelMismatch {
                layer: "encoder",
                expected: wr / NEIGHBORS,
                actual: cin,
            });
        }
        if n != rules.sites() {
            return Err(Error::Tape("rulebook does not match input rows".into()));
        }
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; n * cout];
        out.par_chunks_mut(cout.max(1)).enumerate().for_each(|(i, row)| {
            row.copy_from_slice(bv);
            for o in 0..NEIGHBORS {
                if let Some(j) = rules.neighbor(i, o) {
                    let xj = &xv[j * cin..(j + 1) * cin];
                    for (ci, &xval) in xj.iter().enumerate() {
                        if xval == 0.0 {
                            continue;
                        }
                        let wrow = &wv[(o * cin + ci) * cout..(o * cin + ci + 1) * cout];
                        for (r, wv) in row.iter_mut().zip(wrow) {
                            *r += xval * wv;
                        }
                    }
                }
            }
        });
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(n, cout, out, ng, Op::SubmConv { x, w, b, rules }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let v = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let ng = self.needs(x);
        self.push(r, c, v, ng, Op::Relu(x))
    }

    /// Height max-pool given the per (cell, channel) winning voxel row.
    pub fn bev_max(&mut self, x: Var, cells: usize, arg: Vec<Option<usize>>) -> Var {
        let (_, c) = self.shape(x);
        debug_assert_eq!(arg.len(), cells * c);
        let xv = self.value(x);
        let v = arg
            .iter()
            .enumerate()
            .map(|(k, a)| a.map_or(0.0, |i| xv[i * c + k % c]))
            .collect();
        let ng = self.needs(x);
        self.push(cells, c, v, ng, Op::BevMax { x, arg })
    }

    /// Row-wise `x W + b`, `W` shaped `[cin, cout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var, layer: &'static str) -> Result<Var> {
        let (n, cin) = self.shape(x);
        let (wr, cout) = self.shape(w);
        if wr != cin {
            return Err(Error::ChannelMismatch {
                layer,
                expected: wr,
                actual: cin,
            });
        }
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; n * cout];
        out.par_chunks_mut(cout.max(1)).enumerate().for_each(|(i, row)| {
            row.copy_from_slice(bv);
            for (ci, &xval) in xv[i * cin..(i + 1) * cin].iter().enumerate() {
                for (r, wv) in row.iter_mut().zip(&wv[ci * cout..(ci + 1) * cout]) {
                    *r += xval * wv;
                }
            }
        });
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(n, cout, out, ng, Op::Linear { x, w, b }))
    }

    /// Per-column standardization over rows (biased variance, [`NORM_EPS`]).
    /// Also returns the column means and variances.
    pub fn standardize(&mut self, x: Var) -> (Var, Vec<f64>, Vec<f64>) {
        let (n, c) = self.shape(x);
        let xv = self.value(x);
        let (mean, var) = column_stats(xv, n, c);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let out = xv
            .iter()
            .enumerate()
            .map(|(k, &v)| (v - mean[k % c]) * inv_std[k % c])
            .collect();
        let ng = self.needs(x);
        (self.push(n, c, out, ng, Op::Standardize { x, inv_std }), mean, var)
    }

    /// `(x - shift) * scale` per column with constant statistics.
    pub fn fixed_affine(&mut self, x: Var, shift: &[f64], scale: Vec<f64>) -> Var {
        let (n, c) = self.shape(x);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(k, &v)| (v - shift[k % c]) * scale[k % c])
            .collect();
        let ng = self.needs(x);
        self.push(n, c, out, ng, Op::FixedAffine { x, scale })
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (n, c) = self.shape(x);
        let (mean, _) = column_stats(self.value(x), n, c);
        let ng = self.needs(x);
        self.push(1, c, mean, ng, Op::MeanRows(x))
    }

    pub fn stack_rows(&mut self, parts: Vec<Var>) -> Result<Var> {
        let c = parts.first().map_or(0, |&p| self.shape(p).1);
        let mut value = Vec::new();
        let mut rows = 0;
        for &p in &parts {
            self.expect_cols(p, c, "stack")?;
            value.extend_from_slice(self.value(p));
            rows += self.shape(p).0;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(rows, c, value, ng, Op::StackRows(parts)))
    }

    /// For each `(voxel_row, cell_row)`: unit-normalized concatenation of the two rows.
    pub fn gather_normalize(&mut self, voxels: Var, cells: Var, rows: Vec<(usize, usize)>) -> Var {
        let (_, cv) = self.shape(voxels);
        let (_, cc) = self.shape(cells);
        let d = cv + cc;
        let vv = self.value(voxels);
        let cvv = self.value(cells);
        let mut out = Vec::with_capacity(rows.len() * d);
        let mut norms = Vec::with_capacity(rows.len());
        for &(v, c) in &rows {
            let mut row = Vec::with_capacity(d);
            row.extend_from_slice(&vv[v * cv..(v + 1) * cv]);
            row.extend_from_slice(&cvv[c * cc..(c + 1) * cc]);
            let (y, n) = loss::normalize_row(&row);
            out.extend(y);
            norms.push(n);
        }
        let ng = self.needs(voxels) || self.needs(cells);
        self.push(rows.len(), d, out, ng, Op::GatherNormalize { voxels, cells, rows, norms })
    }

    pub fn info_nce(&mut self, a: Var, b: Var, matches: &MatchSet, tau: f64) -> Result<Var> {
        let d = self.shape(a).1;
        self.expect_cols(b, d, "info_nce")?;
        let r = loss::info_nce_with_grad(self.value(a), self.value(b), d, matches, tau)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            1,
            1,
            vec![r.value],
            ng,
            Op::InfoNce {
                a,
                b,
                grad_a: r.grad_a,
                grad_b: r.grad_b,
            },
        ))
    }

    /// Mean cross-entropy over logit rows.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let n = self.shape(logits).1;
        let (v, grad) = loss::cross_entropy_with_grad(self.value(logits), n, labels)?;
        let ng = self.needs(logits);
        Ok(self.push(1, 1, vec![v], ng, Op::CrossEntropy { logits, grad }))
    }

    pub fn flow_l2(&mut self, z: Var, y: Var) -> Result<Var> {
        if self.shape(z) != self.shape(y) {
            return Err(Error::LengthMismatch {
                what: "flow maps",
                expected: self.value(z).len(),
                actual: self.value(y).len(),
            });
        }
        let c = self.shape(z).1;
        let (v, grad_z, grad_y) = loss::flow_l2_with_grad(self.value(z), self.value(y), c)?;
        let ng = self.needs(z) || self.needs(y);
        Ok(self.push(1, 1, vec![v], ng, Op::FlowL2 { z, y, grad_z, grad_y }))
    }

    /// `sum_i w_i * s_i` over scalar nodes, accumulated left to right.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let v = terms.iter().fold(0.0, |acc, &(s, w)| acc + w * self.scalar(s));
        let ng = terms.iter().any(|&(s, _)| self.needs(s));
        self.push(1, 1, vec![v], ng, Op::WeightedSum(terms))
    }

    /// Gradients of the scalar `loss` with respect to every parameter in
    /// `schema`; parameters that never reached the loss get zeros.
    pub fn backward(&self, loss: Var, schema: &ParamSet) -> Result<ParamSet> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Tape("loss variable does not belong to this tape".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Tape(format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = schema.zeros_like();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => {
                    let p = out.get_mut(name).ok_or_else(|| Error::Schema {
                        name: name.clone(),
                        reason: "recorded on tape but absent from the gradient schema".into(),
                    })?;
                    for (a, b) in p.data.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::SubmConv { x, w, b, rules } => {
                    self.backward_conv(&mut grads, &g, *x, *w, *b, rules);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let gx = g.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::BevMax { x, arg } => {
                    let (n, c) = self.shape(*x);
                    let mut gx = vec![0.0; n * c];
                    for (k, a) in arg.iter().enumerate() {
                        if let Some(i) = a {
                            gx[i * c + k % c] += g[k];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Linear { x, w, b } => self.backward_linear(&mut grads, &g, *x, *w, *b),
                Op::Standardize { x, inv_std } => {
                    let (n, c) = self.shape(*x);
                    let y = &node.value;
                    let mut mean_g = vec![0.0; c];
                    let mut mean_gy = vec![0.0; c];
                    for k in 0..n * c {
                        mean_g[k % c] += g[k];
                        mean_gy[k % c] += g[k] * y[k];
                    }
                    let nf = n as f64;
                    let gx = (0..n * c)
                        .map(|k| {
                            let ch = k % c;
                            inv_std[ch] * (g[k] - mean_g[ch] / nf - y[k] * mean_gy[ch] / nf)
                        })
                        .collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::FixedAffine { x, scale } => {
                    let c = scale.len();
                    let gx = g.iter().enumerate().map(|(k, g)| g * scale[k % c]).collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanRows(x) => {
                    let (n, c) = self.shape(*x);
                    let gx = (0..n * c).map(|k| g[k % c] / n as f64).collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::StackRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        accumulate(&mut grads, p, g[off..off + len].to_vec());
                        off += len;
                    }
                }
                Op::GatherNormalize { voxels, cells, rows, norms } => {
                    let (nv, cv) = self.shape(*voxels);
                    let (nc, cc) = self.shape(*cells);
                    let d = cv + cc;
                    let mut gv = vec![0.0; nv * cv];
                    let mut gc = vec![0.0; nc * cc];
                    let mut row_grad = vec![0.0; d];
                    for (r, &(v, c)) in rows.iter().enumerate() {
                        row_grad.iter_mut().for_each(|x| *x = 0.0);
                        loss::normalize_row_backward(&node.value[r * d..(r + 1) * d], norms[r], &g[r * d..(r + 1) * d], &mut row_grad);
                        for (a, b) in gv[v * cv..(v + 1) * cv].iter_mut().zip(&row_grad[..cv]) {
                            *a += b;
                        }
                        for (a, b) in gc[c * cc..(c + 1) * cc].iter_mut().zip(&row_grad[cv..]) {
                            *a += b;
                        }
                    }
                    accumulate(&mut grads, *voxels, gv);
                    accumulate(&mut grads, *cells, gc);
                }
                Op::InfoNce { a, b, grad_a, grad_b } => {
                    accumulate(&mut grads, *a, grad_a.iter().map(|v| v * g[0]).collect());
                    accumulate(&mut grads, *b, grad_b.iter().map(|v| v * g[0]).collect());
                }
                Op::CrossEntropy { logits, grad } => {
                    accumulate(&mut grads, *logits, grad.iter().map(|v| v * g[0]).collect());
                }
                Op::FlowL2 { z, y, grad_z, grad_y } => {
                    accumulate(&mut grads, *z, grad_z.iter().map(|v| v * g[0]).collect());
                    accumulate(&mut grads, *y, grad_y.iter().map(|v| v * g[0]).collect());
                }
                Op::WeightedSum(terms) => {
                    for &(s, w) in terms {
                        accumulate(&mut grads, s, vec![w * g[0]]);
                    }
                }
            }
        }
        Ok(out)
    }

    fn backward_conv(&self, grads: &mut [Option<Vec<f64>>], g: &[f64], x: Var, w: Var, b: Var, rules: &Rulebook) {
        let (n, cin) = self.shape(x);
        let cout = self.shape(w).1;
        let xv = self.value(x);
        let wv = self.value(w);
        if self.needs(b) {
            let mut gb = vec![0.0; cout];
            for row in g.chunks(cout) {
                for (a, v) in gb.iter_mut().zip(row) {
                    *a += v;
                }
            }
            accumulate(grads, b, gb);
        }
        if self.needs(w) {
            let per_offset: Vec<Vec<f64>> = (0..NEIGHBORS)
                .into_par_iter()
                .map(|o| {
                    let mut gw = vec![0.0; cin * cout];
                    for i in 0..n {
                        let Some(j) = rules.neighbor(i, o) else { continue };
                        let gi = &g[i * cout..(i + 1) * cout];
                        for (ci, &xval) in xv[j * cin..(j + 1) * cin].iter().enumerate() {
                            if xval == 0.0 {
                                continue;
                            }
                            for (a, gv) in gw[ci * cout..(ci + 1) * cout].iter_mut().zip(gi) {
                                *a += xval * gv;
                            }
                        }
                    }
                    gw
                })
                .collect();
            accumulate(grads, w, per_offset.concat());
        }
        if self.needs(x) {
            // site j at offset o of site i means i sits at offset 26 - o of j
            let mut gx = vec![0.0; n * cin];
            gx.par_chunks_mut(cin.max(1)).enumerate().for_each(|(j, row)| {
                for o in 0..NEIGHBORS {
                    let Some(i) = rules.neighbor(j, o) else { continue };
                    let gi = &g[i * cout..(i + 1) * cout];
                    let back = NEIGHBORS - 1 - o;
                    for (ci, r) in row.iter_mut().enumerate() {
                        let wrow = &wv[(back * cin + ci) * cout..(back * cin + ci + 1) * cout];
                        *r += wrow.iter().zip(gi).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            });
            accumulate(grads, x, gx);
        }
    }

    fn backward_linear(&self, grads: &mut [Option<Vec<f64>>], g: &[f64], x: Var, w: Var, b: Var) {
        let (n, cin) = self.shape(x);
        let cout = self.shape(w).1;
        let xv = self.value(x);
        let wv = self.value(w);
        if self.needs(b) {
            let mut gb = vec![0.0; cout];
            for row in g.chunks(cout) {
                for (a, v) in gb.iter_mut().zip(row) {
                    *a += v;
                }
            }
            accumulate(grads, b, gb);
        }
        if self.needs(w) {
            let mut gw = vec![0.0; cin * cout];
            gw.par_chunks_mut(cout).enumerate().for_each(|(ci, row)| {
                for i in 0..n {
                    let xval = xv[i * cin + ci];
                    if xval == 0.0 {
                        continue;
                    }
                    for (a, gv) in row.iter_mut().zip(&g[i * cout..(i + 1) * cout]) {
                        *a += xval * gv;
                    }
                }
            });
            accumulate(grads, w, gw);
        }
        if self.needs(x) {
            let mut gx = vec![0.0; n * cin];
            gx.par_chunks_mut(cin).enumerate().for_each(|(i, row)| {
                let gi = &g[i * cout..(i + 1) * cout];
                for (ci, r) in row.iter_mut().enumerate() {
                    *r = wv[ci * cout..(ci + 1) * cout].iter().zip(gi).map(|(a, b)| a * b).sum();
                }
            });
            accumulate(grads, x, gx);
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
}

/// Column means and biased variances of an `n x c` matrix.
pub(crate) fn column_stats(v: &[f64], n: usize, c: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    if n == 0 {
        return (mean, var);
    }
    for k in 0..n * c {
        mean[k % c] += v[k];
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for k in 0..n * c {
        let d = v[k] - mean[k % c];
        var[k % c] += d * d;
    }
    var.iter_mut().for_each(|s| *s /= n as f64);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::params::{filled, glorot, Role};
    use crate::rng::SeedStream;

    fn set(params: Vec<crate::net::params::Param>) -> ParamSet {
        let mut s = ParamSet::new();
        for p in params {
            s.insert(p).unwrap();
        }
        s
    }

    /// Central differences of `f` at every entry of `name`.
    fn numeric(params: &ParamSet, name: &str, f: &dyn Fn(&ParamSet) -> f64) -> Vec<f64> {
        let n = params.get(name).unwrap().numel();
        (0..n)
            .map(|k| {
                let mut p = params.clone();
                p.get_mut(name).unwrap().data[k] += 1e-6;
                let up = f(&p);
                p.get_mut(name).unwrap().data[k] -= 2e-6;
                let down = f(&p);
                (up - down) / 2e-6
            })
            .collect()
    }

    #[test]
    fn sum_of_param_has_unit_gradient() {
        let ps = set(vec![filled("a", Role::Encoder, vec![2, 3], 0.5, true), filled("b", Role::Predictor, vec![3], 1.0, true)]);
        let mut t = Tape::new();
        let a = t.param(&ps, "a").unwrap();
        let m = t.mean_rows(a);
        // loss = sum(a) expressed as 2 * 3 * mean over columns of column means
        let ones = t.constant(3, 1, vec![1.0; 3]);
        let zero = t.constant(1, 1, vec![0.0]);
        let s = t.linear(m, ones, zero, "sum").unwrap();
        let loss = t.weighted_sum(vec![(s, 2.0)]);
        assert_eq!(t.scalar(loss), 3.0);
        let g = t.backward(loss, &ps).unwrap();
        assert_eq!(g.get("a").unwrap().data, vec![1.0; 6]);
        assert_eq!(g.get("b").unwrap().data, vec![0.0; 3]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_vars() {
        let ps = set(vec![filled("a", Role::Encoder, vec![2], 0.5, true)]);
        let mut t = Tape::new();
        let a = t.param(&ps, "a").unwrap();
        assert!(t.backward(a, &ps).is_err());
        assert!(t.backward(Var(99), &ps).is_err());
    }

    #[test]
    fn conv_and_pool_gradients_match_differences() {
        let coords: Vec<Coord> = vec![[0, 0, 0], [0, 0, 1], [1, 0, 0], [1, 1, 1], [3, 3, 3]];
        let rules = Arc::new(Rulebook::new(&coords));
        let mut rng = SeedStream::new(4);
        let ps = set(vec![
            glorot("w", Role::Encoder, vec![27, 2, 3], 54, 81, &mut rng),
            glorot("b", Role::Encoder, vec![1, 3], 2, 3, &mut rng),
            glorot("x", Role::Encoder, vec![5, 2], 2, 2, &mut rng),
        ]);
        let arg_for = |t: &Tape, v: Var| {
            let (n, c) = t.shape(v);
            let vals = t.value(v);
            // columns (ix, iy) on a 4x4 map
            let mut arg: Vec<Option<usize>> = vec![None; 16 * c];
            for i in 0..n {
                let cell = coords[i][1] as usize * 4 + coords[i][0] as usize;
                for ch in 0..c {
                    let s = &mut arg[cell * c + ch];
                    if s.map_or(true, |j| vals[j * c + ch] < vals[i * c + ch]) {
                        *s = Some(i);
                    }
                }
            }
            arg
        };
        let run = |p: &ParamSet| -> (Tape, Var) {
            let mut t = Tape::new();
            let x = t.param(p, "x").unwrap();
            let w = t.param(p, "w").unwrap();
            let b = t.param(p, "b").unwrap();
            let h = t.subm_conv(x, w, b, rules.clone()).unwrap();
            let h = t.relu(h);
            let arg = arg_for(&t, h);
            let bev = t.bev_max(h, 16, arg);
            let (s, _, _) = t.standardize(bev);
            // coords[3] sits in BEV cell 1 * 4 + 1
            let sq = t.gather_normalize(h, s, vec![(0, 0), (3, 5)]);
            let target = t.constant(2, 6, vec![0.3, -0.1, 0.2, 0.5, 0.1, -0.4, 0.2, 0.2, -0.3, 0.1, 0.0, 0.6]);
            let l = t.flow_l2(sq, target).unwrap();
            let h_sum = t.mean_rows(h);
            let ce = t.cross_entropy(h_sum, &[1]).unwrap();
            let loss = t.weighted_sum(vec![(l, 1.0), (ce, 0.5)]);
            (t, loss)
        };
        let (t, loss) = run(&ps);
        let g = t.backward(loss, &ps).unwrap();
        let f = |p: &ParamSet| {
            let (t, l) = run(p);
            t.scalar(l)
        };
        for name in ["w", "b", "x"] {
            let num = numeric(&ps, name, &f);
            for (a, n) in g.get(name).unwrap().data.iter().zip(&num) {
                assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "{name}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn rulebook_offsets_are_symmetric() {
        let coords: Vec<Coord> = vec![[0, 0, 0], [1, 0, 0], [1, 1, 0]];
        let r = Rulebook::new(&coords);
        for i in 0..3 {
            assert_eq!(r.neighbor(i, CENTER_OFFSET), Some(i));
            for o in 0..NEIGHBORS {
                if let Some(j) = r.neighbor(i, o) {
                    assert_eq!(r.neighbor(j, NEIGHBORS - 1 - o), Some(i));
                }
            }
        }
    }
}
