//! Desk-scale networks, parameter storage, gradients and EMA tracking.

pub mod ema;
pub mod model;
pub mod params;
pub mod tape;

pub use ema::{ema_update, gamma_schedule, EmaSchedule};
pub use model::{
    classify_forward, encoder_forward, gather_point_features, init_online, init_target, predict_forward,
    project_forward,
};
pub use params::{Param, ParamSet, Role};
pub use tape::{Tape, Var};
