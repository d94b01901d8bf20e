//! Melt-pool scalars and defect indicators from the section planes.
//!
//! Every quantity comes in two flavors: the hard variant (exact counts and
//! maxima, the reporting ground truth) and a smooth variant (logistic steps
//! and log-sum-exp maxima) whose gradients with respect to every section
//! value feed the input-space optimizer. Hard indicators have zero gradient
//! almost everywhere, so the control path only accepts smooth variants.

use crate::error::{Error, Result};
use crate::plane::{PlaneKind, PlaneSection};
use crate::thermo::MaterialProps;
use serde::{Deserialize, Serialize};

const UM: f64 = 1e-6;

/// Constants of the roughness-index model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SriConstants {
    /// Characteristic length L̂ (m).
    pub char_length_m: f64,
    /// Contact angle β.
    pub contact_angle: f64,
    /// Characteristic energy density Ĥ (J/m²).
    pub char_energy_j_m2: f64,
    /// Surface-tension temperature derivative γ_T (N/(m·K)).
    pub gamma_t: f64,
    /// Latent heat of melting E (J/kg).
    pub latent_melt: f64,
    /// Solidus temperature (K).
    pub t_solidus_k: f64,
    /// Unit-calibration prefactor: the straight SI evaluation of the index
    /// lands far below the dimensionless range the roughness fit was built
    /// on, so pipelines that feed the fit scale it up (25 lands the nominal
    /// case inside the fit's range). Default 1 leaves the formula untouched.
    pub kappa_sri: f64,
}

impl Default for SriConstants {
    fn default() -> Self {
        let props = MaterialProps::default();
        Self {
            char_length_m: 50.0 * UM,
            contact_angle: 1.1,
            char_energy_j_m2: 150.0,
            gamma_t: 0.00035,
            latent_melt: props.latent_melt,
            t_solidus_k: props.t_solidus,
            kappa_sri: 1.0,
        }
    }
}

impl SriConstants {
    pub fn with_kappa(kappa: f64) -> Self {
        Self { kappa_sri: kappa, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("char_length_m", self.char_length_m),
            ("contact_angle", self.contact_angle),
            ("char_energy_j_m2", self.char_energy_j_m2),
            ("gamma_t", self.gamma_t),
            ("latent_melt", self.latent_melt),
            ("t_solidus_k", self.t_solidus_k),
            ("kappa_sri", self.kappa_sri),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Relaxation temperatures of the smooth variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothParams {
    /// Log-sum-exp temperature for the peak (K).
    pub tau_peak_k: f64,
    /// Logistic width of the molten indicator (K).
    pub tau_step_k: f64,
    /// Log-sum-exp temperature for row maxima, as a fraction of the x step.
    pub tau_len_frac: f64,
}

impl Default for SmoothParams {
    fn default() -> Self {
        Self { tau_peak_k: 10.0, tau_step_k: 5.0, tau_len_frac: 0.25 }
    }
}

/// Derived melt-pool scalars (hard variants).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeltPoolState {
    pub t_peak_k: f64,
    pub length_m: f64,
    pub width_m: f64,
    /// Aspect ratio ε = L/W.
    pub aspect: f64,
    /// Marangoni force (N).
    pub marangoni_n: f64,
    pub sri: f64,
    pub ra_um: f64,
    /// Set when the roughness fit went negative and was clamped to zero.
    pub ra_clamped: bool,
}

/// Hard peak: plain maximum over both sections.
pub fn peak_temperature(sections: &[&PlaneSection]) -> f64 {
    sections
        .iter()
        .flat_map(|s| s.values_k.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Hard pool length (m): longest molten x-chord, Δx · #(T > T_s) per row,
/// maximized over the rows of every section given.
pub fn pool_length(sections: &[&PlaneSection], t_solidus_k: f64) -> f64 {
    let mut best = 0.0f64;
    for s in sections {
        let step_m = s.grid.step0_um * UM;
        for i1 in 0..s.grid.n1 {
            let mut count = 0usize;
            for i0 in 0..s.grid.n0 {
                if s.at(i0, i1) > t_solidus_k {
                    count += 1;
                }
            }
            best = best.max(count as f64 * step_m);
        }
    }
    best
}

/// Hard pool width (m): longest molten y-chord of the top-surface section.
pub fn pool_width(xy: &PlaneSection, t_solidus_k: f64) -> f64 {
    debug_assert_eq!(xy.grid.kind, PlaneKind::Xy);
    let step_m = xy.grid.step1_um * UM;
    let mut best = 0.0f64;
    for i0 in 0..xy.grid.n0 {
        let mut count = 0usize;
        for i1 in 0..xy.grid.n1 {
            if xy.at(i0, i1) > t_solidus_k {
                count += 1;
            }
        }
        best = best.max(count as f64 * step_m);
    }
    best
}

/// Marangoni force F = γ_T (T_peak − T_s) · πL/2.
pub fn marangoni_force(t_peak_k: f64, length_m: f64, consts: &SriConstants) -> Result<f64> {
    if t_peak_k <= consts.t_solidus_k {
        return Err(Error::ColdPool(format!(
            "peak temperature {t_peak_k} K does not exceed the solidus {} K",
            consts.t_solidus_k
        )));
    }
    if length_m <= 0.0 {
        return Err(Error::ColdPool(format!("pool length must be positive, got {length_m} m")));
    }
    Ok(consts.gamma_t * (t_peak_k - consts.t_solidus_k) * std::f64::consts::PI * length_m / 2.0)
}

/// Roughness index from the aspect ratio form:
/// SRI = κ · E L̂² ε^0.25 √(2β / (Ĥ γ_T π L (T_peak − T_s))).
pub fn sri_from_aspect(aspect: f64, length_m: f64, t_peak_k: f64, consts: &SriConstants) -> Result<f64> {
    let superheat = t_peak_k - consts.t_solidus_k;
    for (name, v) in [("aspect ratio", aspect), ("pool length", length_m), ("superheat", superheat)] {
        if v.is_nan() || v <= 0.0 {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    let inner = 2.0 * consts.contact_angle
        / (consts.char_energy_j_m2
            * consts.gamma_t
            * std::f64::consts::PI
            * length_m
            * superheat);
    Ok(consts.kappa_sri
        * consts.latent_melt
        * consts.char_length_m
        * consts.char_length_m
        * aspect.powf(0.25)
        * inner.sqrt())
}

/// Roughness index from (T_peak, L, W).
pub fn sri(t_peak_k: f64, length_m: f64, width_m: f64, consts: &SriConstants) -> Result<f64> {
    if width_m.is_nan() || width_m <= 0.0 {
        return Err(Error::Domain(format!("pool width must be positive, got {width_m} m")));
    }
    sri_from_aspect(length_m / width_m, length_m, t_peak_k, consts)
}

/// Partials of SRI with respect to (T_peak, L, W) at a valid state:
/// ∂/∂T = −SRI/(2ΔT), ∂/∂L = −SRI/(4L), ∂/∂W = −SRI/(4W).
pub fn sri_partials(
    sri_value: f64,
    t_peak_k: f64,
    length_m: f64,
    width_m: f64,
    consts: &SriConstants,
) -> (f64, f64, f64) {
    let dt = t_peak_k - consts.t_solidus_k;
    (
        -0.5 * sri_value / dt,
        -0.25 * sri_value / length_m,
        -0.25 * sri_value / width_m,
    )
}

/// Bi-linear roughness fit (μm), clamped below at zero. The low branch is
/// negative for s < 0.10715, hence the clamp flag.
pub fn roughness(sri_value: f64) -> (f64, bool) {
    let raw = if sri_value < 0.168 {
        234.456 * sri_value - 25.123
    } else {
        18.477 * sri_value + 10.925
    };
    if raw < 0.0 {
        (0.0, true)
    } else {
        (raw, false)
    }
}

/// Slope of the active fit branch; zero where the clamp is active.
pub fn roughness_deriv(sri_value: f64) -> f64 {
    let (_, clamped) = roughness(sri_value);
    if clamped {
        0.0
    } else if sri_value < 0.168 {
        234.456
    } else {
        18.477
    }
}

/// Full hard-variant extraction. Cold pools are an error here; batch callers
/// catch it and emit their sentinel.
pub fn extract_state(xy: &PlaneSection, xz: &PlaneSection, consts: &SriConstants) -> Result<MeltPoolState> {
    let t_peak = peak_temperature(&[xy, xz]);
    let length = pool_length(&[xy, xz], consts.t_solidus_k);
    let width = pool_width(xy, consts.t_solidus_k);
    if length <= 0.0 || width <= 0.0 || t_peak <= consts.t_solidus_k {
        return Err(Error::ColdPool(format!(
            "no molten region: T_peak = {t_peak:.1} K, L = {:.1} μm, W = {:.1} μm",
            length / UM,
            width / UM
        )));
    }
    let aspect = length / width;
    let marangoni = marangoni_force(t_peak, length, consts)?;
    let s = sri_from_aspect(aspect, length, t_peak, consts)?;
    let (ra, clamped) = roughness(s);
    Ok(MeltPoolState {
        t_peak_k: t_peak,
        length_m: length,
        width_m: width,
        aspect,
        marangoni_n: marangoni,
        sri: s,
        ra_um: ra,
        ra_clamped: clamped,
    })
}

/// Batch-extraction CSV: one row per parameter set. Cold pools leave the
/// derived columns empty.
pub fn states_csv(rows: &[(crate::params::ProcessParams, Option<MeltPoolState>)]) -> String {
    let mut out = String::from(
        "power_w,speed_m_s,t_sub_k,alpha,t_peak_k,length_um,width_um,aspect,marangoni_n,sri,ra_um,ra_clamped\n",
    );
    for (p, state) in rows {
        out.push_str(&format!("{},{},{},{}", p.power_w, p.speed_m_s, p.t_sub_k, p.alpha));
        match state {
            Some(s) => out.push_str(&format!(
                ",{:.3},{:.3},{:.3},{:.5},{:.6e},{:.6e},{:.4},{}\n",
                s.t_peak_k,
                s.length_m * 1e6,
                s.width_m * 1e6,
                s.aspect,
                s.marangoni_n,
                s.sri,
                s.ra_um,
                s.ra_clamped as u8
            )),
            None => out.push_str(",,,,,,,,\n"),
        }
    }
    out
}

/// A smooth scalar with its gradient against every node of both sections.
#[derive(Debug, Clone)]
pub struct SmoothValue {
    pub value: f64,
    pub d_xy: Vec<f64>,
    pub d_xz: Vec<f64>,
}

impl SmoothValue {
    fn zeros(value: f64, xy: &PlaneSection, xz: &PlaneSection) -> Self {
        Self { value, d_xy: vec![0.0; xy.values_k.len()], d_xz: vec![0.0; xz.values_k.len()] }
    }
}

/// Smooth T_peak, L, W of one section pair.
#[derive(Debug, Clone)]
pub struct SmoothPool {
    pub t_peak: SmoothValue,
    pub length: SmoothValue,
    pub width: SmoothValue,
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Log-sum-exp peak over both sections: within τ_p·ln(N) above the true max.
pub fn smooth_peak(xy: &PlaneSection, xz: &PlaneSection, tau_k: f64) -> SmoothValue {
    let hard = peak_temperature(&[xy, xz]);
    let mut denom = 0.0;
    for s in [xy, xz] {
        for &t in &s.values_k {
            denom += ((t - hard) / tau_k).exp();
        }
    }
    let value = hard + tau_k * denom.ln();
    let mut out = SmoothValue::zeros(value, xy, xz);
    for (section, grad) in [(xy, &mut out.d_xy), (xz, &mut out.d_xz)] {
        for (g, &t) in grad.iter_mut().zip(section.values_k.iter()) {
            *g = ((t - hard) / tau_k).exp() / denom;
        }
    }
    out
}

/// Smooth pool length: logistic soft counts per row, log-sum-exp across the
/// rows of both sections.
pub fn smooth_length(
    xy: &PlaneSection,
    xz: &PlaneSection,
    t_solidus_k: f64,
    sp: &SmoothParams,
) -> SmoothValue {
    let step_m = xy.grid.step0_um * UM;
    let tau_len = sp.tau_len_frac * step_m;
    // soft chord per row of each section
    let mut chords: Vec<(usize, usize, f64)> = Vec::new(); // (section id, i1, chord)
    for (sid, s) in [xy, xz].into_iter().enumerate() {
        for i1 in 0..s.grid.n1 {
            let mut acc = 0.0;
            for i0 in 0..s.grid.n0 {
                acc += logistic((s.at(i0, i1) - t_solidus_k) / sp.tau_step_k);
            }
            chords.push((sid, i1, acc * step_m));
        }
    }
    let m = chords.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = chords.iter().map(|c| ((c.2 - m) / tau_len).exp()).sum();
    let value = m + tau_len * denom.ln();
    let mut out = SmoothValue::zeros(value, xy, xz);
    for &(sid, i1, chord) in &chords {
        let weight = ((chord - m) / tau_len).exp() / denom;
        let section = if sid == 0 { xy } else { xz };
        let grad = if sid == 0 { &mut out.d_xy } else { &mut out.d_xz };
        for i0 in 0..section.grid.n0 {
            let z = (section.at(i0, i1) - t_solidus_k) / sp.tau_step_k;
            let sig = logistic(z);
            grad[i0 * section.grid.n1 + i1] +=
                weight * step_m * sig * (1.0 - sig) / sp.tau_step_k;
        }
    }
    out
}

/// Smooth pool width over the top-surface section's columns.
pub fn smooth_width(
    xy: &PlaneSection,
    xz: &PlaneSection,
    t_solidus_k: f64,
    sp: &SmoothParams,
) -> SmoothValue {
    let step_m = xy.grid.step1_um * UM;
    let tau_len = sp.tau_len_frac * step_m;
    let mut chords: Vec<f64> = Vec::with_capacity(xy.grid.n0);
    for i0 in 0..xy.grid.n0 {
        let mut acc = 0.0;
        for i1 in 0..xy.grid.n1 {
            acc += logistic((xy.at(i0, i1) - t_solidus_k) / sp.tau_step_k);
        }
        chords.push(acc * step_m);
    }
    let m = chords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = chords.iter().map(|&c| ((c - m) / tau_len).exp()).sum();
    let value = m + tau_len * denom.ln();
    let mut out = SmoothValue::zeros(value, xy, xz);
    for (i0, &chord) in chords.iter().enumerate() {
        let weight = ((chord - m) / tau_len).exp() / denom;
        for i1 in 0..xy.grid.n1 {
            let z = (xy.at(i0, i1) - t_solidus_k) / sp.tau_step_k;
            let sig = logistic(z);
            out.d_xy[i0 * xy.grid.n1 + i1] += weight * step_m * sig * (1.0 - sig) / sp.tau_step_k;
        }
    }
    out
}

pub fn smooth_pool(
    xy: &PlaneSection,
    xz: &PlaneSection,
    t_solidus_k: f64,
    sp: &SmoothParams,
) -> SmoothPool {
    SmoothPool {
        t_peak: smooth_peak(xy, xz, sp.tau_peak_k),
        length: smooth_length(xy, xz, t_solidus_k, sp),
        width: smooth_width(xy, xz, t_solidus_k, sp),
    }
}

/// Scalar functionals of a single section, for backpropagating through a
/// surrogate to its inputs. Hard variants are rejected: their gradient is
/// zero almost everywhere.
#[derive(Debug, Clone, Copy)]
pub enum FieldFunctional {
    MeanTemperature,
    SmoothPeak { tau_k: f64 },
    HardPeak,
}

impl FieldFunctional {
    pub fn value_and_grad(&self, section: &PlaneSection) -> Result<(f64, Vec<f64>)> {
        match self {
            FieldFunctional::MeanTemperature => {
                let n = section.values_k.len() as f64;
                let value = section.values_k.iter().sum::<f64>() / n;
                Ok((value, vec![1.0 / n; section.values_k.len()]))
            }
            FieldFunctional::SmoothPeak { tau_k } => {
                let hard = section.values_k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 =
                    section.values_k.iter().map(|&t| ((t - hard) / tau_k).exp()).sum();
                let value = hard + tau_k * denom.ln();
                let grad = section
                    .values_k
                    .iter()
                    .map(|&t| ((t - hard) / tau_k).exp() / denom)
                    .collect();
                Ok((value, grad))
            }
            FieldFunctional::HardPeak => Err(Error::Domain(
                "hard extraction has zero gradient almost everywhere; request a smooth variant"
                    .into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::PlaneGrid;

    fn uniform(kind: PlaneKind, t: f64) -> PlaneSection {
        PlaneSection::uniform(PlaneGrid::chi(kind), t)
    }

    /// The synthetic ellipse fixture: T_s + 100 inside the (a, b) ellipse.
    fn ellipse_xy(a_um: f64, b_um: f64) -> PlaneSection {
        let g = PlaneGrid::chi_xy();
        let mut vals = vec![300.0; g.len()];
        let props = MaterialProps::default();
        for i0 in 0..g.n0 {
            for i1 in 0..g.n1 {
                let x = g.coord0_um(i0) / a_um;
                let y = g.coord1_um(i1) / b_um;
                if x * x + y * y < 1.0 {
                    vals[i0 * g.n1 + i1] = props.t_solidus + 100.0;
                }
            }
        }
        PlaneSection::new(g, vals).unwrap()
    }

    #[test]
    fn peak_of_constant_and_spike() {
        let xy = uniform(PlaneKind::Xy, 500.0);
        let xz = uniform(PlaneKind::Xz, 500.0);
        assert_eq!(peak_temperature(&[&xy, &xz]), 500.0);
        let mut spiked = uniform(PlaneKind::Xy, 300.0);
        spiked.values_k[1234] = 3000.0;
        assert_eq!(peak_temperature(&[&spiked, &xz]), 3000.0);
    }

    #[test]
    fn smooth_peak_respects_logsumexp_bound() {
        let mut xy = uniform(PlaneKind::Xy, 300.0);
        xy.values_k[1234] = 3000.0;
        let xz = uniform(PlaneKind::Xz, 300.0);
        let tau = 10.0;
        let n = (xy.values_k.len() + xz.values_k.len()) as f64;
        let sp = smooth_peak(&xy, &xz, tau);
        assert!(sp.value >= 3000.0);
        let bound = tau * n.ln();
        assert!(bound <= 89.8, "documented bound, got {bound}");
        assert!(sp.value - 3000.0 <= bound);
    }

    #[test]
    fn cold_pool_has_zero_length_and_width() {
        let xy = uniform(PlaneKind::Xy, 300.0);
        let xz = uniform(PlaneKind::Xz, 300.0);
        let ts = MaterialProps::default().t_solidus;
        assert_eq!(pool_length(&[&xy, &xz], ts), 0.0);
        assert_eq!(pool_width(&xy, ts), 0.0);
        assert!(extract_state(&xy, &xz, &SriConstants::default()).is_err());
    }

    #[test]
    fn ellipse_dimensions_match_chord_oracle() {
        // analytic chords: 2a = 300 μm, 2b = 120 μm, tolerance one grid step
        let xy = ellipse_xy(150.0, 60.0);
        let xz = uniform(PlaneKind::Xz, 300.0);
        let ts = MaterialProps::default().t_solidus;
        let l = pool_length(&[&xy, &xz], ts);
        let w = pool_width(&xy, ts);
        assert!((l - 300e-6).abs() <= 27.5e-6, "L = {} μm", l * 1e6);
        assert!((w - 120e-6).abs() <= 8.8e-6, "W = {} μm", w * 1e6);
    }

    #[test]
    fn smooth_matches_hard_on_ellipse_within_two_steps() {
        let xy = ellipse_xy(150.0, 60.0);
        let xz = uniform(PlaneKind::Xz, 300.0);
        let ts = MaterialProps::default().t_solidus;
        let sp = SmoothParams::default();
        let hard_l = pool_length(&[&xy, &xz], ts);
        let pool = smooth_pool(&xy, &xz, ts, &sp);
        assert!(
            (hard_l - pool.length.value).abs() <= 2.0 * 27.5e-6,
            "hard {hard_l} vs smooth {}",
            pool.length.value
        );
        let hard_w = pool_width(&xy, ts);
        assert!((hard_w - pool.width.value).abs() <= 2.0 * 8.8e-6);
        let hard_p = peak_temperature(&[&xy, &xz]);
        let n = (xy.values_k.len() + xz.values_k.len()) as f64;
        assert!(pool.t_peak.value >= hard_p && pool.t_peak.value <= hard_p + 10.0 * n.ln());
    }

    #[test]
    fn smooth_gradients_match_finite_differences() {
        // probe nodes near the melt boundary where the logistic is live
        let xy = ellipse_xy(150.0, 60.0);
        let xz = uniform(PlaneKind::Xz, 300.0);
        let ts = MaterialProps::default().t_solidus;
        let sp = SmoothParams::default();
        let pool = smooth_pool(&xy, &xz, ts, &sp);
        let g = xy.grid;
        let probes = [(50, 25), (55, 25), (50, 31), (45, 20), (60, 25)];
        type Eval<'a> = Box<dyn Fn(&PlaneSection) -> f64 + 'a>;
        let evals: [(&SmoothValue, Eval); 3] = [
            (&pool.length, Box::new(|s| smooth_length(s, &xz, ts, &sp).value)),
            (&pool.width, Box::new(|s| smooth_width(s, &xz, ts, &sp).value)),
            (&pool.t_peak, Box::new(|s| smooth_peak(s, &xz, sp.tau_peak_k).value)),
        ];
        for &(i0, i1) in &probes {
            let node = i0 * g.n1 + i1;
            let eps = 0.05;
            let mut hi = xy.clone();
            hi.values_k[node] += eps;
            let mut lo = xy.clone();
            lo.values_k[node] -= eps;
            for (field, eval) in &evals {
                let analytic = field.d_xy[node];
                let numeric = (eval(&hi) - eval(&lo)) / (2.0 * eps);
                let denom = analytic.abs().max(numeric.abs());
                if denom > 1e-12 {
                    let rel = (analytic - numeric).abs() / denom;
                    assert!(rel < 1e-4, "node ({i0},{i1}): analytic {analytic} vs fd {numeric}");
                }
            }
        }
    }

    #[test]
    fn marangoni_example_and_linearity() {
        let c = SriConstants::default();
        // γ_T (2500 − 831) π · 260 μm / 2
        let f = marangoni_force(2500.0, 260e-6, &c).unwrap();
        assert!((f - 2.386e-4).abs() < 1e-7, "F = {f}");
        let f2 = marangoni_force(2500.0, 520e-6, &c).unwrap();
        assert!((f2 - 2.0 * f).abs() < 1e-18);
        // zero-superheat limit
        let tiny = marangoni_force(c.t_solidus_k + 1e-9, 260e-6, &c).unwrap();
        assert!(tiny < 1e-12);
        assert!(marangoni_force(800.0, 260e-6, &c).is_err());
    }

    #[test]
    fn sri_example_and_power_laws() {
        let c = SriConstants::default();
        let s = sri_from_aspect(2.0, 260e-6, 2500.0, &c).unwrap();
        assert!((s - 6.972e-3).abs() < 1e-6, "sri = {s}");
        // quadrupling the aspect ratio multiplies by sqrt(2)
        let s4 = sri_from_aspect(8.0, 260e-6, 2500.0, &c).unwrap();
        assert!((s4 / s - 2.0f64.powf(0.25).powi(2)).abs() < 1e-12);
        // quadrupling L·ΔT halves it: L×4 at fixed aspect and superheat
        let sq = sri_from_aspect(2.0, 4.0 * 260e-6, 2500.0, &c).unwrap();
        assert!((sq - s / 2.0).abs() < 1e-12 * s);
        assert!(sri_from_aspect(0.0, 260e-6, 2500.0, &c).is_err());
        assert!(sri_from_aspect(2.0, 0.0, 2500.0, &c).is_err());
        assert!(sri_from_aspect(2.0, 260e-6, 500.0, &c).is_err());
    }

    #[test]
    fn sri_scale_law_is_exact() {
        let c = SriConstants::default();
        let s1 = sri_from_aspect(1.7, 260e-6, 2500.0, &c).unwrap();
        let s16 = sri_from_aspect(16.0 * 1.7, 260e-6, 2500.0, &c).unwrap();
        assert!((s16 - 2.0 * s1).abs() < 1e-14 * s16.abs());
    }

    #[test]
    fn sri_partials_match_finite_differences() {
        let c = SriConstants::default();
        let (t, l, w) = (2500.0, 260e-6, 130e-6);
        let s = sri(t, l, w, &c).unwrap();
        let (dt, dl, dw) = sri_partials(s, t, l, w, &c);
        let e = 1e-6;
        let fd_t = (sri(t + 1.0, l, w, &c).unwrap() - sri(t - 1.0, l, w, &c).unwrap()) / 2.0;
        let fd_l = (sri(t, l * (1.0 + e), w, &c).unwrap() - sri(t, l * (1.0 - e), w, &c).unwrap())
            / (2.0 * e * l);
        let fd_w = (sri(t, l, w * (1.0 + e), &c).unwrap() - sri(t, l, w * (1.0 - e), &c).unwrap())
            / (2.0 * e * w);
        assert!((dt - fd_t).abs() < 1e-6 * fd_t.abs());
        assert!((dl - fd_l).abs() < 1e-6 * fd_l.abs());
        assert!((dw - fd_w).abs() < 1e-6 * fd_w.abs());
    }

    #[test]
    fn roughness_fit_branches_and_clamp() {
        let (ra, clamped) = roughness(0.2);
        assert!((ra - 14.6204).abs() < 1e-3 && !clamped);
        // the fit's documented discontinuity at the knee
        let (lo, _) = roughness(0.168 - 1e-9);
        let (hi, _) = roughness(0.168);
        assert!((lo - 14.266).abs() < 1e-3);
        assert!((hi - 14.029).abs() < 1e-3);
        let (zero, clamped) = roughness(0.0);
        assert_eq!(zero, 0.0);
        assert!(clamped);
        // exact branch slopes
        assert_eq!(roughness_deriv(0.15), 234.456);
        assert_eq!(roughness_deriv(0.3), 18.477);
        assert_eq!(roughness_deriv(0.05), 0.0);
        // strictly increasing on each branch
        assert!(roughness(0.16).0 > roughness(0.15).0);
        assert!(roughness(0.31).0 > roughness(0.30).0);
    }

    #[test]
    fn batch_csv_handles_cold_rows() {
        let params = crate::params::ProcessParams::new(300.0, 1.5, 300.0, 0.3);
        let state = MeltPoolState {
            t_peak_k: 2000.0,
            length_m: 3e-4,
            width_m: 1e-4,
            aspect: 3.0,
            marangoni_n: 2e-4,
            sri: 0.2,
            ra_um: 14.6,
            ra_clamped: false,
        };
        let csv = states_csv(&[(params, Some(state)), (params, None)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains("300.000"));
        assert!(lines[2].ends_with(",,,,,,,"));
    }

    #[test]
    fn hard_functional_is_rejected_for_gradients() {
        let xy = uniform(PlaneKind::Xy, 400.0);
        assert!(FieldFunctional::HardPeak.value_and_grad(&xy).is_err());
        let (v, g) = FieldFunctional::MeanTemperature.value_and_grad(&xy).unwrap();
        assert_eq!(v, 400.0);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
