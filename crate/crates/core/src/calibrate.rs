//! Absorptivity inference: match the surrogate-predicted melt-pool-length
//! distribution to a target Gaussian by descending a KL divergence through
//! reparameterized samples, then push the inferred distribution forward to
//! the quantities of interest.

use crate::error::{Error, Result};
use crate::features::{self, smooth_length, SmoothParams, SriConstants};
use crate::fno::Adam;
use crate::params::ProcessParams;
use crate::surrogate::SurrogatePair;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Physical clamp for sampled absorptivities.
pub const ALPHA_CLAMP: (f64, f64) = (0.02, 0.95);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitTag {
    Micrometers,
    Dimensionless,
}

/// A (μ, σ) pair; σ stays positive structurally because only log σ is stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianSpecRepr", into = "GaussianSpecRepr")]
pub struct GaussianSpec {
    pub mean: f64,
    log_sigma: f64,
    pub unit: UnitTag,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GaussianSpecRepr {
    mean: f64,
    sigma: f64,
    unit: UnitTag,
}

impl TryFrom<GaussianSpecRepr> for GaussianSpec {
    type Error = Error;
    fn try_from(r: GaussianSpecRepr) -> Result<Self> {
        GaussianSpec::new(r.mean, r.sigma, r.unit)
    }
}

impl From<GaussianSpec> for GaussianSpecRepr {
    fn from(g: GaussianSpec) -> Self {
        Self { mean: g.mean, sigma: g.sigma(), unit: g.unit }
    }
}

impl GaussianSpec {
    pub fn new(mean: f64, sigma: f64, unit: UnitTag) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("standard deviation must be positive, got {sigma}")));
        }
        Ok(Self { mean, log_sigma: sigma.ln(), unit })
    }

    /// The in-situ melt-pool-length statistics used as the default target.
    pub fn default_length_target() -> Self {
        Self::new(263.30, 36.69, UnitTag::Micrometers).unwrap()
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub fn log_sigma(&self) -> f64 {
        self.log_sigma
    }
}

/// Which closed form of the Gaussian KL divergence to descend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KlVariant {
    /// ln(σq/σp) + (σp² + (μp−μq)²)/(2σq²) − ½; zero iff the two agree.
    Standard,
    /// ln(σq/σp) + (σp² − σq² + (μp−μq)²)/2; keeps the quadratic terms
    /// unnormalized. Selectable for comparison experiments.
    Simplified,
}

pub fn kl_gaussian(p: &GaussianSpec, q: &GaussianSpec, variant: KlVariant) -> f64 {
    let (mp, sp) = (p.mean, p.sigma());
    let (mq, sq) = (q.mean, q.sigma());
    match variant {
        KlVariant::Standard => {
            (sq / sp).ln() + (sp * sp + (mp - mq) * (mp - mq)) / (2.0 * sq * sq) - 0.5
        }
        KlVariant::Simplified => {
            (sq / sp).ln() + (sp * sp - sq * sq + (mp - mq) * (mp - mq)) / 2.0
        }
    }
}

/// d KL / d(μp, σp) at fixed target.
fn kl_grad_p(p: &GaussianSpec, q: &GaussianSpec, variant: KlVariant) -> (f64, f64) {
    let (mp, sp) = (p.mean, p.sigma());
    let (mq, sq) = (q.mean, q.sigma());
    match variant {
        KlVariant::Standard => ((mp - mq) / (sq * sq), -1.0 / sp + sp / (sq * sq)),
        KlVariant::Simplified => (mp - mq, -1.0 / sp + sp),
    }
}

/// Deterministic standard normals via Box–Muller on a seeded stream.
pub fn standard_normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos());
        if out.len() < n {
            out.push(r * theta.sin());
        }
    }
    out
}

/// Reparameterized draws α_s = μ + σ·ε_s with ε fixed by the seed, clamped to
/// the physical range. Returns (samples, noise, clamped count).
pub fn sample_alpha(spec: &GaussianSpec, s: usize, seed: u64) -> (Vec<f64>, Vec<f64>, usize) {
    let eps = standard_normals(s, seed);
    let sigma = spec.sigma();
    let mut clamped = 0;
    let samples = eps
        .iter()
        .map(|&e| {
            let a = spec.mean + sigma * e;
            if !(ALPHA_CLAMP.0..=ALPHA_CLAMP.1).contains(&a) {
                clamped += 1;
                a.clamp(ALPHA_CLAMP.0, ALPHA_CLAMP.1)
            } else {
                a
            }
        })
        .collect();
    (samples, eps, clamped)
}

/// α → melt-pool length (μm) with dL/dα, the piece of the pipeline the
/// calibration differentiates through. The product implementation runs the
/// surrogates; tests plug in closed forms.
pub trait LengthModel {
    /// Returns (L in μm, dL/dα in μm); excluded (cold) samples return None.
    fn length_um(&self, alpha: f64, want_grad: bool) -> Result<Option<(f64, f64)>>;
}

/// Smooth pool length through a surrogate pair at fixed (P, V, T_sub).
pub struct SurrogateLength<'a> {
    pub pair: SurrogatePair<'a>,
    pub power_w: f64,
    pub speed_m_s: f64,
    pub t_sub_k: f64,
    pub t_solidus_k: f64,
    pub smooth: SmoothParams,
}

impl<'a> SurrogateLength<'a> {
    pub fn new(pair: SurrogatePair<'a>, power_w: f64, speed_m_s: f64, t_sub_k: f64) -> Self {
        Self {
            pair,
            power_w,
            speed_m_s,
            t_sub_k,
            t_solidus_k: crate::thermo::MaterialProps::default().t_solidus,
            smooth: SmoothParams::default(),
        }
    }
}

impl LengthModel for SurrogateLength<'_> {
    fn length_um(&self, alpha: f64, want_grad: bool) -> Result<Option<(f64, f64)>> {
        let params = ProcessParams::new(self.power_w, self.speed_m_s, self.t_sub_k, alpha);
        let (xy, pull_xy) = self.pair.xy.predict_grad(&params)?;
        let (xz, pull_xz) = self.pair.xz.predict_grad(&params)?;
        let length = smooth_length(&xy, &xz, self.t_solidus_k, &self.smooth);
        // below the log-sum-exp floor of all-cold chords the pool is gone
        let floor = 1.5
            * self.smooth.tau_len_frac
            * xy.grid.step0_um
            * 1e-6
            * ((xy.grid.n1 + xz.grid.n1) as f64).ln();
        if length.value <= floor {
            return Ok(None);
        }
        if !want_grad {
            return Ok(Some((length.value * 1e6, 0.0)));
        }
        let g_xy = pull_xy(&length.d_xy)?;
        let g_xz = pull_xz(&length.d_xz)?;
        Ok(Some((length.value * 1e6, (g_xy[3] + g_xz[3]) * 1e6)))
    }
}

/// Sample statistics of the predicted length: mean and population standard
/// deviation (divide by S). Cold samples are excluded and counted; more than
/// 20% excluded is an error.
pub fn length_stats(model: &dyn LengthModel, alphas: &[f64]) -> Result<(f64, f64, usize)> {
    let mut lengths = Vec::with_capacity(alphas.len());
    let mut excluded = 0usize;
    for &a in alphas {
        match model.length_um(a, false)? {
            Some((l, _)) => lengths.push(l),
            None => excluded += 1,
        }
    }
    if excluded * 5 > alphas.len() {
        return Err(Error::ColdPool(format!(
            "{excluded} of {} absorptivity samples produced no melt pool",
            alphas.len()
        )));
    }
    if lengths.is_empty() {
        return Err(Error::ColdPool("every sample produced a cold pool".into()));
    }
    let s = lengths.len() as f64;
    let mean = lengths.iter().sum::<f64>() / s;
    let var = lengths.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / s;
    Ok((mean, var.sqrt(), excluded))
}

/// KL divergence of the predicted length statistics against the target, with
/// its gradient in (μ_α, log σ_α) under frozen reparameterization noise.
pub fn kl_value_and_grad(
    model: &dyn LengthModel,
    mean_alpha: f64,
    log_sigma_alpha: f64,
    eps: &[f64],
    target: &GaussianSpec,
    variant: KlVariant,
) -> Result<(f64, f64, f64, (f64, f64))> {
    let sigma_alpha = log_sigma_alpha.exp();
    let s_total = eps.len();
    let mut rows: Vec<(f64, f64, f64)> = Vec::with_capacity(s_total); // (L, dL/dα, dα/dμ factor ε)
    let mut excluded = 0usize;
    for &e in eps {
        let raw = mean_alpha + sigma_alpha * e;
        let a = raw.clamp(ALPHA_CLAMP.0, ALPHA_CLAMP.1);
        let live = (ALPHA_CLAMP.0..=ALPHA_CLAMP.1).contains(&raw);
        match model.length_um(a, true)? {
            Some((l, dl)) => rows.push((l, if live { dl } else { 0.0 }, e)),
            None => excluded += 1,
        }
    }
    if excluded * 5 > s_total {
        return Err(Error::ColdPool(format!(
            "{excluded} of {s_total} absorptivity samples produced no melt pool"
        )));
    }
    let s = rows.len() as f64;
    let mean_l = rows.iter().map(|r| r.0).sum::<f64>() / s;
    let var_l = rows.iter().map(|r| (r.0 - mean_l) * (r.0 - mean_l)).sum::<f64>() / s;
    let sigma_l = var_l.sqrt().max(1e-12);
    let predicted = GaussianSpec { mean: mean_l, log_sigma: sigma_l.ln(), unit: target.unit };
    let kl = kl_gaussian(&predicted, target, variant);
    let (dkl_dmu, dkl_dsigma) = kl_grad_p(&predicted, target, variant);
    // chain through the sample statistics to (μ_α, log σ_α)
    let mut d_mu = 0.0;
    let mut d_logsig = 0.0;
    for &(l, dl, e) in &rows {
        let dstat = dkl_dmu / s + dkl_dsigma * (l - mean_l) / (s * sigma_l);
        d_mu += dstat * dl;
        d_logsig += dstat * dl * sigma_alpha * e;
    }
    Ok((kl, mean_l, sigma_l, (d_mu, d_logsig)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibTraceEntry {
    pub epoch: usize,
    pub mean_alpha: f64,
    pub sigma_alpha: f64,
    pub kl: f64,
    pub mean_length_um: f64,
    pub sigma_length_um: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibConfig {
    /// Reparameterized samples per epoch.
    pub samples: usize,
    pub epochs: usize,
    /// Adam step on (μ_α, log σ_α).
    pub step_size: f64,
    pub seed: u64,
    pub variant: KlVariant,
    /// Starting point of the search.
    pub init: GaussianSpec,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            epochs: 100,
            step_size: 0.02,
            seed: 0,
            variant: KlVariant::Standard,
            init: GaussianSpec::new(0.35, 0.06, UnitTag::Dimensionless).unwrap(),
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config("need at least 2 samples per epoch".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("need at least one epoch".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibResult {
    pub alpha: GaussianSpec,
    pub final_kl: f64,
    pub trace: Vec<CalibTraceEntry>,
}

impl CalibResult {
    pub fn trace_csv(&self) -> String {
        let mut out =
            String::from("epoch,mean_alpha,sigma_alpha,kl,mean_length_um,sigma_length_um\n");
        for t in &self.trace {
            out.push_str(&format!(
                "{},{:.8},{:.8},{:.8e},{:.4},{:.4}\n",
                t.epoch, t.mean_alpha, t.sigma_alpha, t.kl, t.mean_length_um, t.sigma_length_um
            ));
        }
        out
    }
}

/// Adam descent of the KL divergence; noise is redrawn each epoch and frozen
/// within it, so every run is deterministic per seed.
pub fn calibrate_absorptivity(
    target: &GaussianSpec,
    config: &CalibConfig,
    model: &dyn LengthModel,
) -> Result<CalibResult> {
    config.validate()?;
    let mut x = [config.init.mean, config.init.log_sigma()];
    let mut adam = Adam::new(2);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut initial_kl = None;
    for epoch in 0..config.epochs {
        let eps = standard_normals(
            config.samples,
            config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let (kl, mean_l, sigma_l, (d_mu, d_ls)) =
            kl_value_and_grad(model, x[0], x[1], &eps, target, config.variant)?;
        if !kl.is_finite() {
            return Err(Error::NonFinite(format!("KL divergence at epoch {epoch}")));
        }
        initial_kl.get_or_insert(kl);
        trace.push(CalibTraceEntry {
            epoch,
            mean_alpha: x[0],
            sigma_alpha: x[1].exp(),
            kl,
            mean_length_um: mean_l,
            sigma_length_um: sigma_l,
        });
        adam.step(&mut x, &[d_mu, d_ls], config.step_size);
    }
    let final_kl = trace.last().map(|t| t.kl).unwrap_or(f64::INFINITY);
    if let Some(kl0) = initial_kl {
        if final_kl > 10.0 * kl0.max(1e-9) {
            return Err(Error::NonConvergence(format!(
                "calibration diverged: KL went from {kl0:.3e} to {final_kl:.3e}"
            )));
        }
    }
    Ok(CalibResult {
        alpha: GaussianSpec { mean: x[0], log_sigma: x[1], unit: UnitTag::Dimensionless },
        final_kl,
        trace,
    })
}

/// Synthetic stand-in for segmented melt-pool-length observations: Gaussian
/// draws plus a fitted spec (population standard deviation, matching the
/// divide-by-S convention of the length statistics).
pub fn synthetic_length_observations(
    truth: &GaussianSpec,
    n: usize,
    seed: u64,
) -> Result<(Vec<f64>, GaussianSpec)> {
    if n < 2 {
        return Err(Error::Config("need at least 2 observations".into()));
    }
    let eps = standard_normals(n, seed);
    let sigma = truth.sigma();
    let samples: Vec<f64> = eps.iter().map(|&e| truth.mean + sigma * e).collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n as f64;
    let fitted = GaussianSpec {
        mean,
        log_sigma: var.sqrt().max(f64::MIN_POSITIVE).ln(),
        unit: truth.unit,
    };
    Ok((samples, fitted))
}

/// Fit a spec from raw observations (population standard deviation).
pub fn fit_gaussian(samples: &[f64], unit: UnitTag) -> Result<GaussianSpec> {
    if samples.len() < 2 {
        return Err(Error::Config("need at least 2 observations to fit".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::Domain("observations are all identical; σ would be zero".into()));
    }
    GaussianSpec::new(mean, var.sqrt(), unit)
}

/// One Monte-Carlo draw of the hard-variant quantities of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoiSample {
    pub t_peak_k: f64,
    pub length_um: f64,
    pub width_um: f64,
    pub ra_um: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
    pub hist_edges: Vec<f64>,
    pub hist_counts: Vec<u64>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub const HIST_BINS: usize = 30;

fn summarize(values: &[f64]) -> Summary {
    let n = values.len() as f64;
    // identical inputs have exactly zero spread; don't let the running mean
    // manufacture one out of rounding
    if values.windows(2).all(|w| w[0] == w[1]) {
        let v = values[0];
        return Summary {
            mean: v,
            std: 0.0,
            p5: v,
            p50: v,
            p95: v,
            hist_edges: vec![v, v],
            hist_counts: vec![values.len() as u64],
        };
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let (edges, counts) = if hi > lo {
        let edges: Vec<f64> =
            (0..=HIST_BINS).map(|i| lo + (hi - lo) * i as f64 / HIST_BINS as f64).collect();
        let mut counts = vec![0u64; HIST_BINS];
        for &v in values {
            let bin = (((v - lo) / (hi - lo) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            counts[bin] += 1;
        }
        (edges, counts)
    } else {
        (vec![lo, hi], vec![values.len() as u64])
    };
    Summary {
        mean,
        std: var.sqrt(),
        p5: percentile(&sorted, 0.05),
        p50: percentile(&sorted, 0.50),
        p95: percentile(&sorted, 0.95),
        hist_edges: edges,
        hist_counts: counts,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UqReport {
    pub n_samples: usize,
    pub n_excluded: usize,
    pub t_peak_k: Summary,
    pub length_um: Summary,
    pub width_um: Summary,
    pub ra_um: Summary,
}

impl UqReport {
    /// Histogram CSV: quantity, bin_lo, bin_hi, count.
    pub fn histograms_csv(&self) -> String {
        let mut out = String::from("quantity,bin_lo,bin_hi,count\n");
        for (name, s) in [
            ("t_peak_k", &self.t_peak_k),
            ("length_um", &self.length_um),
            ("width_um", &self.width_um),
            ("ra_um", &self.ra_um),
        ] {
            for (i, &c) in s.hist_counts.iter().enumerate() {
                out.push_str(&format!(
                    "{},{:.6},{:.6},{}\n",
                    name,
                    s.hist_edges[i],
                    s.hist_edges[i + 1],
                    c
                ));
            }
        }
        out
    }
}

/// Monte-Carlo propagation over caller-supplied evaluation (returns None for
/// cold pools, which are excluded under the same 20% budget).
pub fn propagate_uq_with<F>(alphas: &[f64], mut eval: F) -> Result<UqReport>
where
    F: FnMut(f64) -> Result<Option<QoiSample>>,
{
    let mut t_peak = Vec::new();
    let mut length = Vec::new();
    let mut width = Vec::new();
    let mut ra = Vec::new();
    let mut excluded = 0usize;
    for &a in alphas {
        match eval(a)? {
            Some(q) => {
                t_peak.push(q.t_peak_k);
                length.push(q.length_um);
                width.push(q.width_um);
                ra.push(q.ra_um);
            }
            None => excluded += 1,
        }
    }
    if excluded * 5 > alphas.len() || t_peak.is_empty() {
        return Err(Error::ColdPool(format!(
            "{excluded} of {} uncertainty samples produced no melt pool",
            alphas.len()
        )));
    }
    Ok(UqReport {
        n_samples: alphas.len(),
        n_excluded: excluded,
        t_peak_k: summarize(&t_peak),
        length_um: summarize(&length),
        width_um: summarize(&width),
        ra_um: summarize(&ra),
    })
}

/// Push the absorptivity distribution through the surrogates to the
/// hard-variant quantities of interest.
#[allow(clippy::too_many_arguments)]
pub fn propagate_uq(
    alpha_spec: &GaussianSpec,
    s: usize,
    seed: u64,
    power_w: f64,
    speed_m_s: f64,
    t_sub_k: f64,
    pair: SurrogatePair<'_>,
    consts: &SriConstants,
) -> Result<UqReport> {
    let (alphas, _, _) = sample_alpha(alpha_spec, s, seed);
    propagate_uq_with(&alphas, |a| {
        let params = ProcessParams::new(power_w, speed_m_s, t_sub_k, a);
        let xy = pair.xy.predict(&params)?;
        let xz = pair.xz.predict(&params)?;
        match features::extract_state(&xy, &xz, consts) {
            Ok(state) => Ok(Some(QoiSample {
                t_peak_k: state.t_peak_k,
                length_um: state.length_m * 1e6,
                width_um: state.width_m * 1e6,
                ra_um: state.ra_um,
            })),
            Err(Error::ColdPool(_)) => Ok(None),
            Err(e) => Err(e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_standard_closed_forms() {
        let p = GaussianSpec::new(0.0, 1.0, UnitTag::Dimensionless).unwrap();
        let q = GaussianSpec::new(1.0, 1.0, UnitTag::Dimensionless).unwrap();
        let kl = kl_gaussian(&p, &q, KlVariant::Standard);
        assert!((kl - 0.5).abs() < 1e-12);
        assert_eq!(kl_gaussian(&p, &p, KlVariant::Standard), 0.0);
        assert_eq!(kl_gaussian(&p, &p, KlVariant::Simplified), 0.0);
    }

    #[test]
    fn kl_standard_nonnegative_over_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let p = GaussianSpec::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(0.01..5.0),
                UnitTag::Dimensionless,
            )
            .unwrap();
            let q = GaussianSpec::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(0.01..5.0),
                UnitTag::Dimensionless,
            )
            .unwrap();
            let kl = kl_gaussian(&p, &q, KlVariant::Standard);
            assert!(kl >= -1e-14, "negative KL {kl} for {p:?} vs {q:?}");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_degenerate_sigma_collapses() {
        let spec = GaussianSpec::new(0.3, 1e-300, UnitTag::Dimensionless).unwrap();
        let (a, _, _) = sample_alpha(&spec, 50, 3);
        assert!(a.iter().all(|&v| (v - 0.3).abs() < 1e-12));
        let spec = GaussianSpec::new(0.3, 0.02, UnitTag::Dimensionless).unwrap();
        let (a1, e1, _) = sample_alpha(&spec, 64, 11);
        let (a2, e2, _) = sample_alpha(&spec, 64, 11);
        assert_eq!(a1, a2);
        assert_eq!(e1, e2);
    }

    #[test]
    fn sample_mean_obeys_law_of_large_numbers() {
        let spec = GaussianSpec::new(0.3, 0.02, UnitTag::Dimensionless).unwrap();
        let (a, _, _) = sample_alpha(&spec, 100_000, 17);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!((mean - 0.3).abs() < 3.0 * 0.02 / (100_000f64).sqrt());
    }

    #[test]
    fn clamping_is_counted() {
        let spec = GaussianSpec::new(0.9, 0.2, UnitTag::Dimensionless).unwrap();
        let (a, _, clamped) = sample_alpha(&spec, 1000, 23);
        assert!(clamped > 0);
        assert!(a.iter().all(|&v| (ALPHA_CLAMP.0..=ALPHA_CLAMP.1).contains(&v)));
    }

    /// Linear stub: L = a·α + b (μm).
    struct LinearLength {
        a: f64,
        b: f64,
    }

    impl LengthModel for LinearLength {
        fn length_um(&self, alpha: f64, _want_grad: bool) -> Result<Option<(f64, f64)>> {
            Ok(Some((self.a * alpha + self.b, self.a)))
        }
    }

    #[test]
    fn length_stats_of_linear_map() {
        // L = 1000·α, α ~ N(0.25, 0.02²) → μ_L ≈ 250, σ_L ≈ 20
        let stub = LinearLength { a: 1000.0, b: 0.0 };
        let spec = GaussianSpec::new(0.25, 0.02, UnitTag::Dimensionless).unwrap();
        let (alphas, _, _) = sample_alpha(&spec, 10_000, 29);
        let (mu, sigma, excluded) = length_stats(&stub, &alphas).unwrap();
        assert_eq!(excluded, 0);
        let se_mu = 3.0 * 20.0 / (10_000f64).sqrt();
        assert!((mu - 250.0).abs() < se_mu, "μ_L = {mu}");
        // population σ estimator has std ≈ σ/√(2S)
        let se_sigma = 3.0 * 20.0 / (2.0 * 10_000f64).sqrt();
        assert!((sigma - 20.0).abs() < se_sigma, "σ_L = {sigma}");
        // permutation invariance
        let mut rev = alphas.clone();
        rev.reverse();
        let (mu2, sigma2, _) = length_stats(&stub, &rev).unwrap();
        assert!((mu - mu2).abs() < 1e-9 && (sigma - sigma2).abs() < 1e-9);
    }

    #[test]
    fn identical_samples_have_zero_spread() {
        let stub = LinearLength { a: 1000.0, b: 0.0 };
        let alphas = vec![0.25; 40];
        let (_, sigma, _) = length_stats(&stub, &alphas).unwrap();
        assert_eq!(sigma, 0.0);
    }

    #[test]
    fn reparameterization_gradient_matches_frozen_noise_fd() {
        let stub = LinearLength { a: 900.0, b: 30.0 };
        let target = GaussianSpec::new(263.3, 36.69, UnitTag::Micrometers).unwrap();
        let eps = standard_normals(200, 31);
        let (mu0, ls0) = (0.28, (0.03f64).ln());
        let (_, _, _, (g_mu, g_ls)) =
            kl_value_and_grad(&stub, mu0, ls0, &eps, &target, KlVariant::Standard).unwrap();
        let f = |mu: f64, ls: f64| {
            kl_value_and_grad(&stub, mu, ls, &eps, &target, KlVariant::Standard).unwrap().0
        };
        let h = 1e-6;
        let fd_mu = (f(mu0 + h, ls0) - f(mu0 - h, ls0)) / (2.0 * h);
        let fd_ls = (f(mu0, ls0 + h) - f(mu0, ls0 - h)) / (2.0 * h);
        assert!((g_mu - fd_mu).abs() / fd_mu.abs().max(1e-12) < 1e-3, "{g_mu} vs {fd_mu}");
        assert!((g_ls - fd_ls).abs() / fd_ls.abs().max(1e-12) < 1e-3, "{g_ls} vs {fd_ls}");
    }

    #[test]
    fn linear_stub_calibration_recovers_closed_form() {
        // L = aα + b matching N(μt, σt²) exactly at α ~ N((μt−b)/a, (σt/a)²)
        let (a, b) = (1000.0, 20.0);
        let stub = LinearLength { a, b };
        let target = GaussianSpec::new(263.3, 36.69, UnitTag::Micrometers).unwrap();
        let cfg = CalibConfig {
            samples: 200,
            epochs: 220,
            step_size: 0.02,
            seed: 4,
            ..Default::default()
        };
        let result = calibrate_absorptivity(&target, &cfg, &stub).unwrap();
        let want_mu = (263.3 - b) / a;
        let want_sigma = 36.69 / a;
        let got = result.alpha;
        assert!(
            (got.mean - want_mu).abs() < 0.02 * want_mu,
            "μ_α = {} want {want_mu}",
            got.mean
        );
        assert!(
            (got.sigma() - want_sigma).abs() < 0.15 * want_sigma,
            "σ_α = {} want {want_sigma}",
            got.sigma()
        );
        // positivity holds along the whole trace by construction
        assert!(result.trace.iter().all(|t| t.sigma_alpha > 0.0));
    }

    #[test]
    fn stationary_start_stays_put() {
        let (a, b) = (1000.0, 20.0);
        let stub = LinearLength { a, b };
        let target = GaussianSpec::new(263.3, 36.69, UnitTag::Micrometers).unwrap();
        let init = GaussianSpec::new((263.3 - b) / a, 36.69 / a, UnitTag::Dimensionless).unwrap();
        let cfg = CalibConfig {
            samples: 4000,
            epochs: 25,
            step_size: 0.002,
            seed: 6,
            init,
            ..Default::default()
        };
        let result = calibrate_absorptivity(&target, &cfg, &stub).unwrap();
        assert!(result.trace[0].kl < 1e-3, "initial KL {}", result.trace[0].kl);
        let drift_mu = (result.alpha.mean - init.mean).abs() / init.mean;
        assert!(drift_mu < 0.01, "μ drifted {drift_mu}");
    }

    #[test]
    fn synthetic_observations_fit_within_standard_error() {
        let truth = GaussianSpec::new(263.3, 36.69, UnitTag::Micrometers).unwrap();
        let (samples, fitted) = synthetic_length_observations(&truth, 3000, 8).unwrap();
        assert_eq!(samples.len(), 3000);
        assert!((fitted.mean - 263.3).abs() < 3.0 * 36.69 / (3000f64).sqrt());
        let (s2, _) = synthetic_length_observations(&truth, 3000, 8).unwrap();
        assert_eq!(samples, s2);
        assert!(synthetic_length_observations(&truth, 1, 8).is_err());
    }

    #[test]
    fn degenerate_truth_fits_zero_sigma() {
        let truth = GaussianSpec::new(100.0, 1e-300, UnitTag::Micrometers).unwrap();
        let (_, fitted) = synthetic_length_observations(&truth, 100, 2).unwrap();
        assert!(fitted.sigma() < 1e-290);
    }

    #[test]
    fn uq_with_zero_sigma_has_zero_spread() {
        let spec = GaussianSpec::new(0.3, 1e-300, UnitTag::Dimensionless).unwrap();
        let (alphas, _, _) = sample_alpha(&spec, 64, 3);
        let report = propagate_uq_with(&alphas, |a| {
            Ok(Some(QoiSample {
                t_peak_k: 1000.0 + a,
                length_um: 200.0 * a,
                width_um: 100.0 * a,
                ra_um: 10.0 * a,
            }))
        })
        .unwrap();
        assert_eq!(report.t_peak_k.std, 0.0);
        assert_eq!(report.ra_um.std, 0.0);
    }

    #[test]
    fn affine_map_moves_percentiles_affinely() {
        let spec = GaussianSpec::new(0.3, 0.03, UnitTag::Dimensionless).unwrap();
        let (alphas, _, _) = sample_alpha(&spec, 20_000, 13);
        let (a, b) = (40.0, 3.0);
        let report = propagate_uq_with(&alphas, |al| {
            Ok(Some(QoiSample {
                t_peak_k: 1000.0,
                length_um: 100.0,
                width_um: 50.0,
                ra_um: a * al + b,
            }))
        })
        .unwrap();
        let mut sorted = alphas.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (q, got) in [(0.05, report.ra_um.p5), (0.5, report.ra_um.p50), (0.95, report.ra_um.p95)]
        {
            let want = a * percentile(&sorted, q) + b;
            assert!((got - want).abs() < 1e-9, "{q}: {got} vs {want}");
        }
    }

    #[test]
    fn doubling_samples_shifts_means_within_mc_error() {
        let spec = GaussianSpec::new(0.3, 0.03, UnitTag::Dimensionless).unwrap();
        let eval = |al: f64| {
            Ok(Some(QoiSample {
                t_peak_k: 2000.0 * al,
                length_um: 500.0 * al,
                width_um: 200.0 * al,
                ra_um: 20.0 * al,
            }))
        };
        let (a1, _, _) = sample_alpha(&spec, 2000, 19);
        let (a2, _, _) = sample_alpha(&spec, 4000, 19);
        let r1 = propagate_uq_with(&a1, eval).unwrap();
        let r2 = propagate_uq_with(&a2, eval).unwrap();
        let se = 3.0 * r1.ra_um.std / (2000f64).sqrt();
        assert!((r1.ra_um.mean - r2.ra_um.mean).abs() < se);
    }
}
