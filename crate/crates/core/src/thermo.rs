//! Material property table and the enthalpy–temperature constitutive map.
//!
//! The solver advances specific enthalpy, so the map has to be strictly
//! increasing and invertible everywhere. Melting contributes a latent-heat
//! ramp over the mushy interval [T_s, T_l]; vaporization contributes a second
//! ramp smeared over a finite width so the inverse stays single-valued.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Temperature-independent material data. Defaults are the AlSi10Mg table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialProps {
    /// Density (kg/m³).
    pub density: f64,
    /// Solid specific heat (J/(kg·K)).
    pub c_solid: f64,
    /// Liquid specific heat (J/(kg·K)).
    pub c_liquid: f64,
    /// Latent heat of melting E (J/kg).
    pub latent_melt: f64,
    /// Latent heat of vaporization L_v (J/kg).
    pub latent_vap: f64,
    /// Solid thermal conductivity (W/(m·K)).
    pub k_solid: f64,
    /// Liquid thermal conductivity (W/(m·K)).
    pub k_liquid: f64,
    /// Solidus temperature (K).
    pub t_solidus: f64,
    /// Liquidus temperature (K).
    pub t_liquidus: f64,
    /// Boiling temperature (K).
    pub t_boiling: f64,
    /// Nominal laser absorptivity.
    pub absorptivity: f64,
}

impl Default for MaterialProps {
    fn default() -> Self {
        Self {
            density: 2670.0,
            c_solid: 546.0,
            c_liquid: 632.0,
            latent_melt: 4.23e5,
            latent_vap: 1.14e7,
            k_solid: 113.0,
            k_liquid: 133.0,
            t_solidus: 831.0,
            t_liquidus: 867.0,
            t_boiling: 2740.0,
            absorptivity: 0.3,
        }
    }
}

impl MaterialProps {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("density", self.density),
            ("c_solid", self.c_solid),
            ("c_liquid", self.c_liquid),
            ("latent_melt", self.latent_melt),
            ("latent_vap", self.latent_vap),
            ("k_solid", self.k_solid),
            ("k_liquid", self.k_liquid),
            ("t_solidus", self.t_solidus),
            ("t_liquidus", self.t_liquidus),
            ("t_boiling", self.t_boiling),
            ("absorptivity", self.absorptivity),
        ];
        for (name, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.t_solidus < self.t_liquidus && self.t_liquidus < self.t_boiling) {
            return Err(Error::Config(format!(
                "need t_solidus < t_liquidus < t_boiling, got {} / {} / {}",
                self.t_solidus, self.t_liquidus, self.t_boiling
            )));
        }
        Ok(())
    }

    /// Degenerate constant-property table (no latent heat, single phase) used
    /// by analytic validation runs such as the moving-point-source check.
    pub fn constant(conductivity: f64, specific_heat: f64, density: f64) -> Self {
        Self {
            density,
            c_solid: specific_heat,
            c_liquid: specific_heat,
            latent_melt: 0.0,
            latent_vap: 0.0,
            k_solid: conductivity,
            k_liquid: conductivity,
            ..Self::default()
        }
    }

    /// Parse a `key = value` config body; unknown keys are rejected, missing
    /// keys keep their compiled-in defaults. `#` starts a comment.
    pub fn from_config_str(body: &str) -> Result<Self> {
        let mut props = Self::default();
        for (lineno, raw) in body.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::Config(format!("line {}: bad number {:?}", lineno + 1, value.trim()))
            })?;
            match key.trim() {
                "density" => props.density = value,
                "c_solid" => props.c_solid = value,
                "c_liquid" => props.c_liquid = value,
                "latent_melt" => props.latent_melt = value,
                "latent_vap" => props.latent_vap = value,
                "k_solid" => props.k_solid = value,
                "k_liquid" => props.k_liquid = value,
                "t_solidus" => props.t_solidus = value,
                "t_liquidus" => props.t_liquidus = value,
                "t_boiling" => props.t_boiling = value,
                "absorptivity" => props.absorptivity = value,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown material key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        props.validate()?;
        Ok(props)
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }

    /// Conductivity at temperature: solid value below the solidus, liquid
    /// value above the liquidus, linear blend across the mushy zone so the
    /// diffusion operator sees no jump.
    pub fn conductivity(&self, t: f64) -> f64 {
        if t <= self.t_solidus {
            self.k_solid
        } else if t >= self.t_liquidus {
            self.k_liquid
        } else {
            let f = (t - self.t_solidus) / (self.t_liquidus - self.t_solidus);
            self.k_solid + f * (self.k_liquid - self.k_solid)
        }
    }
}

/// Piecewise-linear specific enthalpy h(T) with latent-heat ramps for melting
/// and (smeared) vaporization. h(t_ref) = 0; any constant offset is
/// physically irrelevant to the conduction equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnthalpyCurve {
    /// Reference temperature with h = 0 (K).
    pub t_ref: f64,
    /// Width of the vaporization ramp (K).
    pub dt_vap: f64,
    /// Segment start temperatures, increasing.
    breaks_t: Vec<f64>,
    /// Enthalpy at each segment start.
    breaks_h: Vec<f64>,
    /// Slope dh/dT on each segment (last slope extends to +inf, first to -inf).
    slopes: Vec<f64>,
}

impl EnthalpyCurve {
    pub fn new(props: &MaterialProps) -> Self {
        Self::with_options(props, 300.0, 50.0)
    }

    pub fn with_options(props: &MaterialProps, t_ref: f64, dt_vap: f64) -> Self {
        let t_s = props.t_solidus;
        let t_l = props.t_liquidus;
        let t_v_lo = props.t_boiling - dt_vap / 2.0;
        let t_v_hi = props.t_boiling + dt_vap / 2.0;
        // Mushy-zone sensible heat uses the average of the two specific heats.
        let c_mush = 0.5 * (props.c_solid + props.c_liquid) + props.latent_melt / (t_l - t_s);
        let c_vap = props.c_liquid + props.latent_vap / dt_vap;

        let breaks_t = vec![t_s, t_l, t_v_lo, t_v_hi];
        let slopes = vec![props.c_solid, c_mush, props.c_liquid, c_vap, props.c_liquid];

        // Accumulate h at breakpoints starting from h(t_ref) = 0 on segment 0.
        let mut breaks_h = Vec::with_capacity(4);
        let mut h = props.c_solid * (t_s - t_ref);
        breaks_h.push(h);
        for i in 1..4 {
            h += slopes[i] * (breaks_t[i] - breaks_t[i - 1]);
            breaks_h.push(h);
        }

        Self { t_ref, dt_vap, breaks_t, breaks_h, slopes }
    }

    /// Specific enthalpy at temperature (J/kg). Errors on negative T.
    pub fn enthalpy(&self, t: f64) -> Result<f64> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::Domain(format!("temperature must be >= 0 K, got {t}")));
        }
        Ok(self.enthalpy_unchecked(t))
    }

    #[inline]
    pub fn enthalpy_unchecked(&self, t: f64) -> f64 {
        let n = self.breaks_t.len();
        if t <= self.breaks_t[0] {
            return self.slopes[0] * (t - self.t_ref);
        }
        for i in 1..n {
            if t <= self.breaks_t[i] {
                return self.breaks_h[i - 1] + self.slopes[i] * (t - self.breaks_t[i - 1]);
            }
        }
        self.breaks_h[n - 1] + self.slopes[n] * (t - self.breaks_t[n - 1])
    }

    /// Exact piecewise inverse of [`EnthalpyCurve::enthalpy`].
    #[inline]
    pub fn temperature(&self, h: f64) -> f64 {
        let n = self.breaks_h.len();
        if h <= self.breaks_h[0] {
            return self.t_ref + h / self.slopes[0];
        }
        for i in 1..n {
            if h <= self.breaks_h[i] {
                return self.breaks_t[i - 1] + (h - self.breaks_h[i - 1]) / self.slopes[i];
            }
        }
        self.breaks_t[n - 1] + (h - self.breaks_h[n - 1]) / self.slopes[n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve() -> EnthalpyCurve {
        EnthalpyCurve::new(&MaterialProps::default())
    }

    #[test]
    fn reference_point_is_zero() {
        assert_eq!(curve().enthalpy(300.0).unwrap(), 0.0);
        assert_eq!(curve().temperature(0.0), 300.0);
    }

    #[test]
    fn enthalpy_at_solidus() {
        // h(T_s) = c_s (T_s - T_ref) = 546 * 531
        let h = curve().enthalpy(831.0).unwrap();
        assert!((h - 546.0 * 531.0).abs() < 1e-9);
        assert!((h - 289_926.0).abs() < 1e-9);
        assert!((curve().temperature(289_926.0) - 831.0).abs() < 1e-9);
    }

    #[test]
    fn enthalpy_at_liquidus() {
        // h(T_l) = h(T_s) + (c_s+c_l)/2 * (T_l-T_s) + E = 289926 + 589*36 + 423000
        let h = curve().enthalpy(867.0).unwrap();
        assert!((h - 734_130.0).abs() < 1e-9);
    }

    #[test]
    fn melt_jump_is_latent_heat_exactly() {
        let p = MaterialProps::default();
        let c = curve();
        let jump = c.enthalpy(p.t_liquidus).unwrap() - c.enthalpy(p.t_solidus).unwrap();
        let sensible = 0.5 * (p.c_solid + p.c_liquid) * (p.t_liquidus - p.t_solidus);
        assert_eq!(jump - sensible, p.latent_melt);
    }

    #[test]
    fn vaporization_ramp_gains_latent_plus_sensible_exactly() {
        let p = MaterialProps::default();
        let c = curve();
        let lo = p.t_boiling - c.dt_vap / 2.0;
        let hi = p.t_boiling + c.dt_vap / 2.0;
        let gained = c.enthalpy(hi).unwrap() - c.enthalpy(lo).unwrap();
        assert_eq!(gained, p.latent_vap + p.c_liquid * c.dt_vap);
    }

    #[test]
    fn negative_temperature_rejected() {
        assert!(curve().enthalpy(-1.0).is_err());
    }

    #[test]
    fn strictly_monotone_and_round_trips() {
        let c = curve();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..10_000 {
            let t = 300.0 + 3200.0 * (i as f64) / 9_999.0;
            let h = c.enthalpy(t).unwrap();
            assert!(h > prev, "h not strictly increasing at T={t}");
            prev = h;
            let back = c.temperature(h);
            assert!((t - back).abs() < 1e-9 * t, "round trip off at T={t}: {back}");
        }
    }

    #[test]
    fn slopes_recovered_by_finite_differences() {
        let p = MaterialProps::default();
        let c = curve();
        let fd = |t: f64| {
            let d = 1e-3;
            (c.enthalpy(t + d).unwrap() - c.enthalpy(t - d).unwrap()) / (2.0 * d)
        };
        // below solidus
        let s = fd(600.0);
        assert!((s - p.c_solid).abs() / p.c_solid < 1e-6);
        // liquid stretch between liquidus and vaporization ramp
        let s = fd(1500.0);
        assert!((s - p.c_liquid).abs() / p.c_liquid < 1e-6);
    }

    #[test]
    fn conductivity_blend() {
        let p = MaterialProps::default();
        assert_eq!(p.conductivity(500.0), 113.0);
        assert_eq!(p.conductivity(1500.0), 133.0);
        // midpoint of the mushy zone
        assert!((p.conductivity(849.0) - 123.0).abs() < 1e-12);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let body = "density = 2670\nk_solid = 120 # tweaked\n";
        let p = MaterialProps::from_config_str(body).unwrap();
        assert_eq!(p.k_solid, 120.0);
        assert_eq!(p.c_solid, 546.0); // default kept
        assert!(MaterialProps::from_config_str("bogus_key = 1").is_err());
        assert!(MaterialProps::from_config_str("t_solidus = 9000").is_err());
    }
}
