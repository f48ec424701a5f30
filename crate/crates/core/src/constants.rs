//! Tunable constants that affect utility but never privacy.
//!
//! Persisted as plain `key = value` lines; `#` starts a comment.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Covariance-mask scale constant: `η = 1/(c1(√d + sqrt(ln(4/β))))`.
    pub c1: f64,
    /// Robust covariance-mask scale constant: `η = α/(c1(d + sqrt(d ln(4/β))))`.
    pub c1_robust: f64,
    /// Chunk size constant of the preconditioner: `s = c2(d + ln(4k/β))`.
    pub c2: f64,
    /// Chunk size constant of the refinement: `s = c_frob(d² + ln(4k/β))/a²`.
    pub c_frob: f64,
    /// Frobenius scoring radius of the refinement stage.
    pub refine_radius: f64,
    /// Robust filters trigger above `1 + filter_trigger·α·ln(1/α)` times the
    /// null variance.
    pub filter_trigger: f64,
    /// Largest corruption fraction accepted by the covariance filter.
    pub filter_alpha0: f64,
    /// Robust mean scoring radius `r = c3·α·sqrt(ln(1/α))`.
    pub c3: f64,
    /// Robust pipeline target `TV ≤ robust_tv·α·ln(1/α)`.
    pub robust_tv: f64,
}

/// Values produced by `ppme calibrate --seed 20240601` (β = 0.1,
/// d ∈ {2, 4, 8}, 10⁴ trials, ×1.5 safety), copied from
/// `config/constants.conf`; the filter constants are fixed engineering choices.
impl Default for Constants {
    fn default() -> Self {
        Constants {
            c1: 289.9653752193924,
            c1_robust: 2.9330570277810195,
            c2: 53920.67516475637,
            c_frob: 3.0079895119166133,
            refine_radius: 0.25,
            filter_trigger: 2.0,
            filter_alpha0: 0.1,
            c3: 10.0,
            robust_tv: 10.0,
        }
    }
}

const KEYS: [&str; 9] = [
    "c1",
    "c1_robust",
    "c2",
    "c_frob",
    "refine_radius",
    "filter_trigger",
    "filter_alpha0",
    "c3",
    "robust_tv",
];

impl Constants {
    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "c1" => &mut self.c1,
            "c1_robust" => &mut self.c1_robust,
            "c2" => &mut self.c2,
            "c_frob" => &mut self.c_frob,
            "refine_radius" => &mut self.refine_radius,
            "filter_trigger" => &mut self.filter_trigger,
            "filter_alpha0" => &mut self.filter_alpha0,
            "c3" => &mut self.c3,
            "robust_tv" => &mut self.robust_tv,
            _ => return None,
        })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        let mut copy = *self;
        copy.slot(key).map(|v| *v)
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::ConfigError(format!("{key} must be positive and finite, got {value}")));
        }
        match self.slot(key) {
            Some(v) => {
                *v = value;
                Ok(())
            }
            None => Err(Error::ConfigError(format!("unknown constant '{key}'"))),
        }
    }

    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }

    /// Applies `key = value` lines on top of `self`. Unknown keys are errors.
    pub fn parse_overrides(mut self, text: &str) -> Result<Self> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigError(format!("line {}: expected key = value", lineno + 1)))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::ConfigError(format!("line {}: '{}' is not a number", lineno + 1, value.trim())))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::ConfigError(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(self)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Constants::default().parse_overrides(text)
    }

    /// Serializes all constants; `header` lines are emitted as comments.
    pub fn to_config(&self, header: &[String]) -> String {
        let mut out = String::new();
        for h in header {
            let _ = writeln!(out, "# {h}");
        }
        for key in KEYS {
            let _ = writeln!(out, "{key} = {:?}", self.get(key).unwrap());
        }
        out
    }
}
