//! Gradient-based choice of laser power and scan speed through the trained
//! surrogates: smooth roughness objective with a peak-temperature penalty,
//! projected Adam iterations on normalized (P, V), and process-window maps.

use crate::error::{Error, Result};
use crate::features::{
    self, roughness, roughness_deriv, smooth_pool, SmoothParams, SriConstants,
};
use crate::fno::Adam;
use crate::params::ProcessParams;
use crate::surrogate::SurrogatePair;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    /// Penalty weight φ (μm-equivalents of roughness).
    pub phi_weight: f64,
    /// Penalty ramp start T_t1 (K).
    pub t_threshold_lo_k: f64,
    /// Penalty ramp end T_t2 (K).
    pub t_threshold_hi_k: f64,
    pub power_bounds_w: (f64, f64),
    pub speed_bounds_m_s: (f64, f64),
    /// Adam step size in normalized coordinates.
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop when the objective changes by less than this, relatively.
    pub tol_rel: f64,
    /// Objective value standing in for a vanished melt pool (μm).
    pub cold_barrier_um: f64,
    pub sri: SriConstants,
    pub smooth: SmoothParams,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            phi_weight: 50.0,
            t_threshold_lo_k: 3000.0,
            t_threshold_hi_k: 3400.0,
            power_bounds_w: (100.0, 500.0),
            speed_bounds_m_s: (0.5, 2.5),
            step_size: 0.01,
            max_iters: 200,
            tol_rel: 1e-5,
            cold_barrier_um: 1e3,
            sri: SriConstants::default(),
            smooth: SmoothParams::default(),
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_threshold_lo_k.partial_cmp(&self.t_threshold_hi_k) != Some(std::cmp::Ordering::Less) {
            return Err(Error::Config("need T_t1 < T_t2".into()));
        }
        if !(self.power_bounds_w.0 < self.power_bounds_w.1
            && self.speed_bounds_m_s.0 < self.speed_bounds_m_s.1)
        {
            return Err(Error::Config("degenerate (P, V) bounds".into()));
        }
        self.sri.validate()
    }
}

/// Keyhole-guard penalty: 0 below T_t1, 1 above T_t2, a half-sine ramp in
/// between. C¹ everywhere: the ramp has zero slope at both thresholds.
pub fn penalty_phi(t_peak_k: f64, t_lo_k: f64, t_hi_k: f64) -> f64 {
    if t_peak_k <= t_lo_k {
        0.0
    } else if t_peak_k >= t_hi_k {
        1.0
    } else {
        let s = (t_peak_k - t_lo_k) / (t_hi_k - t_lo_k);
        0.5 + 0.5 * (std::f64::consts::PI * s - std::f64::consts::FRAC_PI_2).sin()
    }
}

pub fn penalty_phi_deriv(t_peak_k: f64, t_lo_k: f64, t_hi_k: f64) -> f64 {
    if t_peak_k <= t_lo_k || t_peak_k >= t_hi_k {
        0.0
    } else {
        let s = (t_peak_k - t_lo_k) / (t_hi_k - t_lo_k);
        0.5 * std::f64::consts::PI / (t_hi_k - t_lo_k)
            * (std::f64::consts::PI * s - std::f64::consts::FRAC_PI_2).cos()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalFlags {
    /// Melt pool vanished in the smooth sense; barrier value substituted.
    pub cold: bool,
    /// (P, V) left the configured box and was clamped.
    pub clamped: bool,
}

/// One objective evaluation with gradient and reporting scalars.
#[derive(Debug, Clone, Copy)]
pub struct PvEval {
    pub value: f64,
    pub d_p: f64,
    pub d_v: f64,
    pub t_peak_k: f64,
    pub ra_um: f64,
    pub flags: EvalFlags,
}

/// Anything the (P, V) optimizer can descend on; the product implementation
/// composes the surrogates, tests plug in analytic bowls.
pub trait PvObjective {
    fn eval(&self, p_w: f64, v_m_s: f64) -> Result<PvEval>;
}

/// Ra + φ·Φ through the surrogate pair at fixed substrate temperature and
/// absorptivity, differentiable in (P, V).
pub struct SurrogateObjective<'a> {
    pub pair: SurrogatePair<'a>,
    pub t_sub_k: f64,
    pub alpha: f64,
    pub config: &'a ControlConfig,
}

impl<'a> SurrogateObjective<'a> {
    pub fn new(pair: SurrogatePair<'a>, t_sub_k: f64, alpha: f64, config: &'a ControlConfig) -> Self {
        Self { pair, t_sub_k, alpha, config }
    }

    /// The smooth-pool floors below which the pool counts as vanished: the
    /// log-sum-exp of all-zero chords.
    fn length_floor(&self, n_rows: usize, step_m: f64) -> f64 {
        self.config.smooth.tau_len_frac * step_m * (n_rows as f64).ln()
    }
}

impl PvObjective for SurrogateObjective<'_> {
    fn eval(&self, p_w: f64, v_m_s: f64) -> Result<PvEval> {
        let cfg = self.config;
        let params = ProcessParams::new(p_w, v_m_s, self.t_sub_k, self.alpha);
        let (xy, pull_xy) = self.pair.xy.predict_grad(&params)?;
        let (xz, pull_xz) = self.pair.xz.predict_grad(&params)?;
        let pool = smooth_pool(&xy, &xz, cfg.sri.t_solidus_k, &cfg.smooth);

        let superheat = pool.t_peak.value - cfg.sri.t_solidus_k;
        let xy_rows = xy.grid.n1 + xz.grid.n1;
        let l_floor = 1.5 * self.length_floor(xy_rows, xy.grid.step0_um * 1e-6);
        let w_floor = 1.5 * self.length_floor(xy.grid.n0, xy.grid.step1_um * 1e-6);
        if superheat <= 1.0 || pool.length.value <= l_floor || pool.width.value <= w_floor {
            return Ok(PvEval {
                value: cfg.cold_barrier_um,
                d_p: 0.0,
                d_v: 0.0,
                t_peak_k: pool.t_peak.value,
                ra_um: cfg.cold_barrier_um,
                flags: EvalFlags { cold: true, clamped: false },
            });
        }

        let aspect = pool.length.value / pool.width.value;
        let sri = features::sri_from_aspect(aspect, pool.length.value, pool.t_peak.value, &cfg.sri)?;
        let (ra, _) = roughness(sri);
        let phi = penalty_phi(pool.t_peak.value, cfg.t_threshold_lo_k, cfg.t_threshold_hi_k);
        let value = ra + cfg.phi_weight * phi;

        // chain rule down to the section values
        let ra_d = roughness_deriv(sri);
        let (s_dt, s_dl, s_dw) = features::sri_partials(
            sri,
            pool.t_peak.value,
            pool.length.value,
            pool.width.value,
            &cfg.sri,
        );
        let phi_d = penalty_phi_deriv(pool.t_peak.value, cfg.t_threshold_lo_k, cfg.t_threshold_hi_k);
        let c_peak = ra_d * s_dt + cfg.phi_weight * phi_d;
        let c_len = ra_d * s_dl;
        let c_wid = ra_d * s_dw;

        let d_xy: Vec<f64> = (0..xy.values_k.len())
            .map(|i| {
                c_peak * pool.t_peak.d_xy[i]
                    + c_len * pool.length.d_xy[i]
                    + c_wid * pool.width.d_xy[i]
            })
            .collect();
        let d_xz: Vec<f64> = (0..xz.values_k.len())
            .map(|i| c_peak * pool.t_peak.d_xz[i] + c_len * pool.length.d_xz[i])
            .collect();
        let g_xy = pull_xy(&d_xy)?;
        let g_xz = pull_xz(&d_xz)?;
        Ok(PvEval {
            value,
            d_p: g_xy[0] + g_xz[0],
            d_v: g_xy[1] + g_xz[1],
            t_peak_k: pool.t_peak.value,
            ra_um: ra,
            flags: EvalFlags::default(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub power_w: f64,
    pub speed_m_s: f64,
    pub objective: f64,
    pub t_peak_k: f64,
    pub ra_um: f64,
    pub flags: EvalFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub power_w: f64,
    pub speed_m_s: f64,
    pub objective: f64,
    pub t_peak_k: f64,
    pub ra_um: f64,
    pub converged: bool,
    /// Set when the run stopped on a non-finite objective; the trace holds
    /// everything seen up to that point.
    pub aborted: Option<String>,
    pub trace: Vec<TraceEntry>,
}

impl OptimizeResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,power_w,speed_m_s,objective,t_peak_k,ra_um,cold,clamped\n");
        for t in &self.trace {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.8e},{:.3},{:.4},{},{}\n",
                t.iter, t.power_w, t.speed_m_s, t.objective, t.t_peak_k, t.ra_um,
                t.flags.cold as u8, t.flags.clamped as u8
            ));
        }
        out
    }
}

/// Projected Adam descent on normalized (P, V). The start point is projected
/// into the box before the first evaluation and every iterate stays inside.
pub fn optimize_pv(
    objective: &dyn PvObjective,
    init_power_w: f64,
    init_speed_m_s: f64,
    config: &ControlConfig,
) -> Result<OptimizeResult> {
    config.validate()?;
    let (plo, phi_b) = config.power_bounds_w;
    let (vlo, vhi) = config.speed_bounds_m_s;
    let norm = |p: f64, v: f64| [(p - plo) / (phi_b - plo), (v - vlo) / (vhi - vlo)];
    let denorm = |n: &[f64]| (plo + n[0] * (phi_b - plo), vlo + n[1] * (vhi - vlo));

    let mut x = norm(init_power_w, init_speed_m_s);
    let clamped_start = x.iter().any(|&v| !(0.0..=1.0).contains(&v));
    x[0] = x[0].clamp(0.0, 1.0);
    x[1] = x[1].clamp(0.0, 1.0);

    let mut adam = Adam::new(2);
    let mut trace = Vec::new();
    let mut prev_obj = f64::INFINITY;
    let mut converged = false;
    let mut aborted = None;

    for iter in 0..config.max_iters {
        let (p, v) = denorm(&x);
        let mut eval = objective.eval(p, v)?;
        if iter == 0 && clamped_start {
            eval.flags.clamped = true;
        }
        trace.push(TraceEntry {
            iter,
            power_w: p,
            speed_m_s: v,
            objective: eval.value,
            t_peak_k: eval.t_peak_k,
            ra_um: eval.ra_um,
            flags: eval.flags,
        });
        if !eval.value.is_finite() {
            aborted = Some(format!("non-finite objective at iteration {iter}"));
            break;
        }
        if prev_obj.is_finite()
            && (prev_obj - eval.value).abs() <= config.tol_rel * prev_obj.abs().max(1e-12)
        {
            converged = true;
            break;
        }
        prev_obj = eval.value;
        // gradients in normalized coordinates
        let g = [eval.d_p * (phi_b - plo), eval.d_v * (vhi - vlo)];
        adam.step(&mut x, &g, config.step_size);
        x[0] = x[0].clamp(0.0, 1.0);
        x[1] = x[1].clamp(0.0, 1.0);
    }
    let last = trace.last().copied().ok_or_else(|| Error::Config("no iterations ran".into()))?;
    Ok(OptimizeResult {
        power_w: last.power_w,
        speed_m_s: last.speed_m_s,
        objective: last.objective,
        t_peak_k: last.t_peak_k,
        ra_um: last.ra_um,
        converged,
        aborted,
        trace,
    })
}

/// Hard-variant roughness over an (nP × nV) grid at fixed T_sub and α.
/// Cold cells carry NaN and a flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessWindow {
    pub powers_w: Vec<f64>,
    pub speeds_m_s: Vec<f64>,
    pub t_sub_k: f64,
    pub alpha: f64,
    /// Row-major nP × nV roughness (μm); NaN where the pool is cold.
    pub ra_um: Vec<f64>,
    pub cold: Vec<bool>,
}

impl ProcessWindow {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("power_w\\speed_m_s");
        for v in &self.speeds_m_s {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
        for (i, p) in self.powers_w.iter().enumerate() {
            out.push_str(&format!("{p:.6}"));
            for j in 0..self.speeds_m_s.len() {
                out.push_str(&format!(",{:.5}", self.ra_um[i * self.speeds_m_s.len() + j]));
            }
            out.push('\n');
        }
        out
    }
}

pub fn process_window(
    pair: SurrogatePair<'_>,
    t_sub_k: f64,
    alpha: f64,
    n_power: usize,
    n_speed: usize,
    config: &ControlConfig,
) -> Result<ProcessWindow> {
    config.validate()?;
    if n_power == 0 || n_speed == 0 {
        return Err(Error::Config("window grid must be nonempty".into()));
    }
    let axis = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        if n == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        }
    };
    let powers = axis(config.power_bounds_w.0, config.power_bounds_w.1, n_power);
    let speeds = axis(config.speed_bounds_m_s.0, config.speed_bounds_m_s.1, n_speed);
    let mut ra = Vec::with_capacity(n_power * n_speed);
    let mut cold = Vec::with_capacity(n_power * n_speed);
    for &p in &powers {
        for &v in &speeds {
            let params = ProcessParams::new(p, v, t_sub_k, alpha);
            let xy = pair.xy.predict(&params)?;
            let xz = pair.xz.predict(&params)?;
            match features::extract_state(&xy, &xz, &config.sri) {
                Ok(state) => {
                    ra.push(state.ra_um);
                    cold.push(false);
                }
                Err(Error::ColdPool(_)) => {
                    ra.push(f64::NAN);
                    cold.push(true);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(ProcessWindow { powers_w: powers, speeds_m_s: speeds, t_sub_k, alpha, ra_um: ra, cold })
}
