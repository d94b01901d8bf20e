//! Process parameters and the sweep envelope they are normalized over.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// The laser input tuple driving every pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessParams {
    /// Laser power P (W).
    pub power_w: f64,
    /// Scan speed V (m/s).
    pub speed_m_s: f64,
    /// Substrate temperature T_sub (K), also the initial condition.
    pub t_sub_k: f64,
    /// Laser absorptivity (dimensionless).
    pub alpha: f64,
}

impl ProcessParams {
    pub fn new(power_w: f64, speed_m_s: f64, t_sub_k: f64, alpha: f64) -> Self {
        Self { power_w, speed_m_s, t_sub_k, alpha }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.power_w, self.speed_m_s, self.t_sub_k, self.alpha]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// Per-parameter (min, max) box used for min-max normalization and for
/// the solver validity envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub power_w: (f64, f64),
    pub speed_m_s: (f64, f64),
    pub t_sub_k: (f64, f64),
    pub alpha: (f64, f64),
}

impl Default for ParamBounds {
    /// The training-sweep envelope: powers 100..500 W, speeds 0.5..2.5 m/s,
    /// substrate temperatures 300..540 K, absorptivities 0.1..0.6.
    fn default() -> Self {
        Self {
            power_w: (100.0, 500.0),
            speed_m_s: (0.5, 2.5),
            t_sub_k: (300.0, 540.0),
            alpha: (0.1, 0.6),
        }
    }
}

impl ParamBounds {
    /// The wider envelope the conduction solver is trusted over.
    pub fn solver_envelope() -> Self {
        Self {
            power_w: (50.0, 600.0),
            speed_m_s: (0.25, 3.0),
            t_sub_k: (300.0, 600.0),
            alpha: (0.05, 0.7),
        }
    }

    pub fn as_array(&self) -> [(f64, f64); 4] {
        [self.power_w, self.speed_m_s, self.t_sub_k, self.alpha]
    }

    pub fn contains(&self, p: &ProcessParams) -> bool {
        let v = p.as_array();
        self.as_array()
            .iter()
            .zip(v.iter())
            .all(|(&(lo, hi), &x)| x >= lo && x <= hi)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in ["power", "speed", "t_sub", "alpha"]
            .iter()
            .zip(self.as_array().iter())
        {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "bounds for {name} must satisfy finite lo < hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    /// Min-max normalize each component to [0, 1] over this box.
    /// Values outside the box extrapolate linearly; callers that care check
    /// [`ParamBounds::contains`] first.
    pub fn normalize(&self, p: &ProcessParams) -> [f64; 4] {
        let v = p.as_array();
        let b = self.as_array();
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = (v[i] - b[i].0) / (b[i].1 - b[i].0);
        }
        out
    }

    pub fn denormalize(&self, n: [f64; 4]) -> ProcessParams {
        let b = self.as_array();
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = b[i].0 + n[i] * (b[i].1 - b[i].0);
        }
        ProcessParams::from_array(out)
    }

    /// d(normalized component)/d(raw component), the chain-rule factor for
    /// gradients taken through normalized inputs.
    pub fn scale(&self) -> [f64; 4] {
        let b = self.as_array();
        [
            1.0 / (b[0].1 - b[0].0),
            1.0 / (b[1].1 - b[1].0),
            1.0 / (b[2].1 - b[2].0),
            1.0 / (b[3].1 - b[3].0),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_endpoints() {
        let b = ParamBounds::default();
        let lo = ProcessParams::new(100.0, 0.5, 300.0, 0.1);
        let hi = ProcessParams::new(500.0, 2.5, 540.0, 0.6);
        assert_eq!(b.normalize(&lo), [0.0, 0.0, 0.0, 0.0]);
        assert_eq!(b.normalize(&hi), [1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn normalize_round_trips() {
        let b = ParamBounds::default();
        let p = ProcessParams::new(312.5, 1.65, 415.0, 0.23);
        let q = b.denormalize(b.normalize(&p));
        for (a, c) in p.as_array().iter().zip(q.as_array().iter()) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn contains_rejects_outside() {
        let b = ParamBounds::default();
        assert!(b.contains(&ProcessParams::new(300.0, 1.5, 300.0, 0.3)));
        assert!(!b.contains(&ProcessParams::new(700.0, 1.5, 300.0, 0.3)));
    }
}
