//! Continuous low-gravity quadruped jumping: terrain curriculum, reduced-order
//! pronk dynamics, phase-gated rewards, a dual-horizon state estimator and the
//! digital-twin mapping onto a gravity-offload rig.

pub mod terrain;
pub mod dynamics;
pub mod reward;
pub mod twin;
pub mod estimator;
pub mod harness;
