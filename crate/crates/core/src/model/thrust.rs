//! Rotor thrust models: how a propeller speed maps to the thrust-generating
//! term fed through the allocation matrices.

use std::fmt::Debug;
use std::sync::Arc;

use crate::registry::Registry;
use crate::{Error, Result};

pub trait ThrustModel: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Thrust-generating term `w(Ω)`; rotor force is `c_f · w(Ω)`.
    fn thrust_term(&self, speed: f64) -> f64;

    fn thrust_term_derivative(&self, speed: f64) -> f64;

    /// Inverse of [`ThrustModel::thrust_term`] on the physical branch.
    fn speed_for_thrust_term(&self, term: f64) -> Result<f64>;
}

/// `w = Ω²`, the physical propeller law.
#[derive(Debug, Clone, Copy, Default)]
pub struct Quadratic;

/// `w = Ω`, the literal linear allocation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Linear;

impl ThrustModel for Quadratic {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn thrust_term(&self, speed: f64) -> f64 {
        speed * speed
    }

    fn thrust_term_derivative(&self, speed: f64) -> f64 {
        2.0 * speed
    }

    fn speed_for_thrust_term(&self, term: f64) -> Result<f64> {
        if term < 0.0 {
            return Err(Error::InvalidParams(format!(
                "negative thrust term {term} has no real rotor speed"
            )));
        }
        Ok(term.sqrt())
    }
}

impl ThrustModel for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn thrust_term(&self, speed: f64) -> f64 {
        speed
    }

    fn thrust_term_derivative(&self, _speed: f64) -> f64 {
        1.0
    }

    fn speed_for_thrust_term(&self, term: f64) -> Result<f64> {
        Ok(term)
    }
}

pub fn thrust_models() -> Registry<dyn ThrustModel> {
    let mut reg: Registry<dyn ThrustModel> = Registry::new("thrust model");
    reg.register("quadratic", || Arc::new(Quadratic));
    reg.register("linear", || Arc::new(Linear));
    reg
}
