//! Shared fixtures for unit tests.

use crate::model::{Gtmr, GtmrParams};
use crate::ocp::{OcpConfig, Weights};
use crate::perception::CameraModel;

pub use crate::verify::{random_state, random_vec3};

pub fn quad() -> Gtmr {
    Gtmr::new(GtmrParams::coplanar_quadrotor()).unwrap()
}

pub fn config(horizon: usize) -> OcpConfig {
    OcpConfig {
        horizon,
        step: 0.015,
        weights: Weights::default(),
        standoff: 1.0,
        camera: CameraModel::default(),
        model: quad(),
    }
}
