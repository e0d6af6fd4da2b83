//! Named parameter store shared by the online and target networks.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Role {
    Encoder = 0,
    Projector = 1,
    Predictor = 2,
    Classifier = 3,
}

impl Role {
    pub fn from_u8(v: u8) -> Option<Role> {
        match v {
            0 => Some(Role::Encoder),
            1 => Some(Role::Projector),
            2 => Some(Role::Predictor),
            3 => Some(Role::Classifier),
            _ => None,
        }
    }

    /// Roles that have an EMA target counterpart.
    pub fn has_target(self) -> bool {
        matches!(self, Role::Encoder | Role::Projector)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Buffers (running statistics) are stored here but never optimized.
    pub trainable: bool,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows x cols view: the last axis is columns.
    pub fn matrix_shape(&self) -> (usize, usize) {
        match self.shape.split_last() {
            Some((&cols, lead)) => (lead.iter().product(), cols),
            None => (1, 1),
        }
    }
}

/// Ordered map from parameter name to array.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, p: Param) -> Result<()> {
        if p.shape.iter().product::<usize>() != p.data.len() {
            return Err(Error::Schema {
                name: p.name,
                reason: "shape does not match data length".into(),
            });
        }
        if self.index.contains_key(&p.name) {
            return Err(Error::Schema {
                name: p.name,
                reason: "duplicate name".into(),
            });
        }
        self.index.insert(p.name.clone(), self.params.len());
        self.params.push(p);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn require(&self, name: &str) -> Result<&Param> {
        self.get(name).ok_or_else(|| Error::Schema {
            name: name.to_string(),
            reason: "missing".into(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    /// Same schema, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        let mut out = self.clone();
        for p in out.iter_mut() {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    /// Entries whose role passes `keep`, in order.
    pub fn subset(&self, keep: impl Fn(Role) -> bool) -> ParamSet {
        let mut out = ParamSet::new();
        for p in self.params.iter().filter(|p| keep(p.role)) {
            out.insert(p.clone()).expect("names are unique in the source set");
        }
        out
    }

    /// Verifies that `other` has an entry of equal role and shape for every entry of `self`.
    pub fn check_same_schema(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            let missing = self
                .iter()
                .find(|p| other.get(&p.name).is_none())
                .or_else(|| other.iter().find(|p| self.get(&p.name).is_none()));
            return Err(Error::Schema {
                name: missing.map_or_else(|| "?".into(), |p| p.name.clone()),
                reason: format!("parameter count {} vs {}", self.len(), other.len()),
            });
        }
        for p in self.iter() {
            let q = other.get(&p.name).ok_or_else(|| Error::Schema {
                name: p.name.clone(),
                reason: "missing".into(),
            })?;
            if q.shape != p.shape || q.role != p.role {
                return Err(Error::Schema {
                    name: p.name.clone(),
                    reason: format!("expected {:?} {:?}, found {:?} {:?}", p.role, p.shape, q.role, q.shape),
                });
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> f64 {
        self.iter()
            .filter_map(|p| other.get(&p.name).map(|q| (p, q)))
            .flat_map(|(p, q)| p.data.iter().zip(&q.data).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}

/// Weights uniform in `+-sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(name: &str, role: Role, shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut SeedStream) -> Param {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Param {
        name: name.to_string(),
        role,
        shape,
        data: (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
        trainable: true,
    }
}

pub fn filled(name: &str, role: Role, shape: Vec<usize>, value: f64, trainable: bool) -> Param {
    let n = shape.iter().product();
    Param {
        name: name.to_string(),
        role,
        shape,
        data: vec![value; n],
        trainable,
    }
}
