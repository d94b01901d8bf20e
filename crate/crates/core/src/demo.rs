//! Virtual build of a cone-shaped part comparing a fixed-parameter print
//! against closed-loop control: per layer group the substrate temperature
//! advances through a lumped thermal model, the controlled branch re-optimizes
//! (P, V) warm-started from the previous step, and both branches log
//! temperature and roughness traces.

use crate::calibrate::{propagate_uq, GaussianSpec, UnitTag};
use crate::control::{optimize_pv, ControlConfig, SurrogateObjective};
use crate::error::{Error, Result};
use crate::features::{self, SriConstants};
use crate::params::ProcessParams;
use crate::surrogate::SurrogatePair;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoConfig {
    /// Cone base radius (μm).
    pub base_radius_um: f64,
    /// Cone top radius (μm).
    pub top_radius_um: f64,
    /// Build height (μm).
    pub height_um: f64,
    /// Powder layer thickness (μm).
    pub layer_um: f64,
    /// Layers added per control step.
    pub layers_per_step: usize,
    pub init_power_w: f64,
    pub init_speed_m_s: f64,
    /// Hatch spacing of the raster fill (μm).
    pub hatch_um: f64,
    /// Fraction of the scanned energy retained by the near-surface slab.
    pub eta_heat: f64,
    /// Effective heated slab depth (μm): the deposit warms ρ·c·δ per area.
    pub slab_depth_um: f64,
    /// Extra lumped capacity coupling to the plate (J/K).
    pub base_capacity_j_k: f64,
    /// Interlayer cooling time constant at the plate (s).
    pub tau0_s: f64,
    /// τ(h) = τ0 · (1 + tau_growth · h/H); the conduction path through the
    /// heat shunt lengthens as the part grows.
    pub tau_growth: f64,
    /// Dwell per layer (s); one control step waits layers_per_step dwells.
    pub dwell_s: f64,
    /// Ambient / plate temperature (K).
    pub t_ambient_k: f64,
    /// Run the optimizer on the controlled branch.
    pub control_enabled: bool,
    pub control: ControlConfig,
    /// Absorptivity distribution; the mean drives control, the spread feeds
    /// the optional uncertainty bands.
    pub alpha: GaussianSpec,
    /// Monte-Carlo samples per step for UQ bands; 0 disables them.
    pub uq_samples: usize,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            base_radius_um: 7_500.0,
            top_radius_um: 1_500.0,
            height_um: 30_000.0,
            layer_um: 30.0,
            layers_per_step: 10,
            init_power_w: 300.0,
            init_speed_m_s: 1.65,
            hatch_um: 100.0,
            eta_heat: 0.04,
            slab_depth_um: 3_000.0,
            base_capacity_j_k: 0.0,
            tau0_s: 5.0,
            tau_growth: 15.0,
            dwell_s: 2.0,
            t_ambient_k: 300.0,
            control_enabled: true,
            control: ControlConfig {
                sri: SriConstants::with_kappa(25.0),
                max_iters: 60,
                ..ControlConfig::default()
            },
            alpha: GaussianSpec::new(0.3, 0.02, UnitTag::Dimensionless).unwrap(),
            uq_samples: 0,
            seed: 0,
        }
    }
}

impl DemoConfig {
    pub fn n_steps(&self) -> usize {
        (self.height_um / (self.layer_um * self.layers_per_step as f64)).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers_per_step == 0 {
            return Err(Error::Config("layers_per_step must be >= 1".into()));
        }
        for (name, v) in [
            ("base_radius_um", self.base_radius_um),
            ("top_radius_um", self.top_radius_um),
            ("height_um", self.height_um),
            ("layer_um", self.layer_um),
            ("hatch_um", self.hatch_um),
            ("slab_depth_um", self.slab_depth_um),
            ("tau0_s", self.tau0_s),
            ("dwell_s", self.dwell_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        self.control.validate()
    }

    /// Cross-section radius at height h.
    fn radius_um(&self, height_um: f64) -> f64 {
        let f = (height_um / self.height_um).clamp(0.0, 1.0);
        self.base_radius_um + (self.top_radius_um - self.base_radius_um) * f
    }
}

/// Lumped interlayer recurrence: exponential relaxation toward ambient over a
/// height-dependent time constant plus the energy the layer group deposits
/// into the near-surface slab,
///   T' = T∞ + (T − T∞)·exp(−Δt/τ(h)) + η·αP·A·n/(V·s·C(h)),
/// with C(h) = ρ c δ A(h) + C_base. With the default C_base = 0 the areas
/// cancel and the deposit is η·αP·n/(V·s·ρcδ) per step; the growing time
/// constant (ever longer conduction path through the heat shunt) is what
/// drives the interlayer heat buildup.
pub fn substrate_update(
    t_sub_k: f64,
    power_w: f64,
    speed_m_s: f64,
    alpha: f64,
    height_um: f64,
    cfg: &DemoConfig,
) -> f64 {
    let props = crate::thermo::MaterialProps::default();
    let dt = cfg.dwell_s * cfg.layers_per_step as f64;
    let tau = cfg.tau0_s * (1.0 + cfg.tau_growth * (height_um / cfg.height_um).clamp(0.0, 1.0));
    let relaxed = cfg.t_ambient_k + (t_sub_k - cfg.t_ambient_k) * (-dt / tau).exp();
    let area_m2 = {
        let r = cfg.radius_um(height_um) * 1e-6;
        std::f64::consts::PI * r * r
    };
    let capacity = props.density * props.c_solid * (cfg.slab_depth_um * 1e-6) * area_m2
        + cfg.base_capacity_j_k;
    let energy = cfg.eta_heat
        * alpha
        * power_w
        * area_m2
        * cfg.layers_per_step as f64
        / (speed_m_s * cfg.hatch_um * 1e-6);
    relaxed + energy / capacity
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UqBands {
    pub t_peak_p5: f64,
    pub t_peak_p95: f64,
    pub ra_p5: f64,
    pub ra_p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildStep {
    pub step: usize,
    pub t_sub_k: f64,
    pub power_w: f64,
    pub speed_m_s: f64,
    pub t_peak_k: f64,
    pub ra_um: f64,
    /// Empty, or semicolon-joined tokens: cold, fallback, clamped.
    pub flags: String,
    pub uq: Option<UqBands>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BuildTrace {
    pub steps: Vec<BuildStep>,
}

impl BuildTrace {
    /// Fixed column order: step, T_sub_K, P_W, V_m_s, T_peak_K, Ra_um, flags.
    /// UQ bands append four extra columns when enabled.
    pub fn to_csv(&self) -> String {
        let with_uq = self.steps.iter().any(|s| s.uq.is_some());
        let mut out = String::from("step,T_sub_K,P_W,V_m_s,T_peak_K,Ra_um,flags");
        if with_uq {
            out.push_str(",T_peak_p5,T_peak_p95,Ra_p5,Ra_p95");
        }
        out.push('\n');
        for s in &self.steps {
            out.push_str(&format!(
                "{},{:.3},{:.4},{:.5},{:.2},{:.4},{}",
                s.step, s.t_sub_k, s.power_w, s.speed_m_s, s.t_peak_k, s.ra_um, s.flags
            ));
            if with_uq {
                match &s.uq {
                    Some(u) => out.push_str(&format!(
                        ",{:.2},{:.2},{:.4},{:.4}",
                        u.t_peak_p5, u.t_peak_p95, u.ra_p5, u.ra_p95
                    )),
                    None => out.push_str(",,,,"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn max_t_peak(&self) -> f64 {
        self.steps.iter().map(|s| s.t_peak_k).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_ra(&self) -> f64 {
        self.steps.iter().map(|s| s.ra_um).sum::<f64>() / self.steps.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoSummary {
    pub steps: usize,
    pub controlled_max_t_peak_k: f64,
    pub uncontrolled_max_t_peak_k: f64,
    pub controlled_mean_ra_um: f64,
    pub uncontrolled_mean_ra_um: f64,
    /// Fraction of steps where the controlled roughness is not worse.
    pub ra_not_worse_fraction: f64,
    pub t_threshold_hi_k: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoOutcome {
    pub controlled: BuildTrace,
    pub uncontrolled: BuildTrace,
    pub summary: DemoSummary,
}

fn evaluate_state(
    pair: SurrogatePair<'_>,
    params: &ProcessParams,
    consts: &SriConstants,
) -> Result<(f64, f64, bool)> {
    let xy = pair.xy.predict(params)?;
    let xz = pair.xz.predict(params)?;
    match features::extract_state(&xy, &xz, consts) {
        Ok(state) => Ok((state.t_peak_k, state.ra_um, false)),
        Err(Error::ColdPool(_)) => {
            let t_peak = features::peak_temperature(&[&xy, &xz]);
            Ok((t_peak, f64::NAN, true))
        }
        Err(e) => Err(e),
    }
}

fn run_branch(cfg: &DemoConfig, pair: SurrogatePair<'_>, controlled: bool) -> Result<BuildTrace> {
    let mut trace = BuildTrace::default();
    let mut t_sub = cfg.t_ambient_k;
    let mut power = cfg.init_power_w;
    let mut speed = cfg.init_speed_m_s;
    let alpha_mean = cfg.alpha.mean;
    for step in 0..cfg.n_steps() {
        let mut flags: Vec<&str> = Vec::new();
        if controlled {
            // warm start from the previous optimum keeps the trace smooth
            let objective = SurrogateObjective::new(pair, t_sub, alpha_mean, &cfg.control);
            match optimize_pv(&objective, power, speed, &cfg.control) {
                Ok(result) if result.aborted.is_none() => {
                    power = result.power_w;
                    speed = result.speed_m_s;
                }
                Ok(_) | Err(Error::NonFinite(_)) => {
                    // keep the previous parameters, mark the step
                    flags.push("fallback");
                }
                Err(e) => return Err(e),
            }
        }
        let params = ProcessParams::new(power, speed, t_sub, alpha_mean);
        let (t_peak, ra, cold) = evaluate_state(pair, &params, &cfg.control.sri)?;
        if cold {
            flags.push("cold");
        }
        let uq = if cfg.uq_samples > 0 {
            let report = propagate_uq(
                &cfg.alpha,
                cfg.uq_samples,
                cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                power,
                speed,
                t_sub,
                pair,
                &cfg.control.sri,
            )?;
            Some(UqBands {
                t_peak_p5: report.t_peak_k.p5,
                t_peak_p95: report.t_peak_k.p95,
                ra_p5: report.ra_um.p5,
                ra_p95: report.ra_um.p95,
            })
        } else {
            None
        };
        trace.steps.push(BuildStep {
            step,
            t_sub_k: t_sub,
            power_w: power,
            speed_m_s: speed,
            t_peak_k: t_peak,
            ra_um: ra,
            flags: flags.join(";"),
            uq,
        });
        let height = (step + 1) as f64 * cfg.layer_um * cfg.layers_per_step as f64;
        t_sub = substrate_update(t_sub, power, speed, alpha_mean, height, cfg);
    }
    Ok(trace)
}

/// Run both branches and summarize the comparison. With control disabled both
/// branches follow identical dynamics.
pub fn run_demo(cfg: &DemoConfig, pair: SurrogatePair<'_>) -> Result<DemoOutcome> {
    cfg.validate()?;
    let uncontrolled = run_branch(cfg, pair, false)?;
    let controlled = run_branch(cfg, pair, cfg.control_enabled)?;
    let n = controlled.steps.len();
    let mut not_worse = 0usize;
    for (c, u) in controlled.steps.iter().zip(uncontrolled.steps.iter()) {
        // NaN roughness (cold pool) never counts as an improvement
        if c.ra_um <= u.ra_um {
            not_worse += 1;
        }
    }
    let summary = DemoSummary {
        steps: n,
        controlled_max_t_peak_k: controlled.max_t_peak(),
        uncontrolled_max_t_peak_k: uncontrolled.max_t_peak(),
        controlled_mean_ra_um: controlled.mean_ra(),
        uncontrolled_mean_ra_um: uncontrolled.mean_ra(),
        ra_not_worse_fraction: not_worse as f64 / n.max(1) as f64,
        t_threshold_hi_k: cfg.control.t_threshold_hi_k,
    };
    Ok(DemoOutcome { controlled, uncontrolled, summary })
}
