//! Transient 3D conduction solver with a moving Gaussian volumetric source.
//!
//! Explicit time stepping on a uniform node-centered grid. The state variable
//! is specific enthalpy; temperature is recovered through the constitutive
//! map each step, which is what carries melting and vaporization. Fluid flow,
//! keyhole, and vapor plume are out of scope.

use crate::container::{self, FIELD_FORMAT_VERSION, FIELD_MAGIC};
use crate::error::{Error, Result};
use crate::params::{ParamBounds, ProcessParams};
use crate::plane::{bilinear_clamped, PlaneGrid, PlaneKind, PlaneSection};
use crate::thermo::{EnthalpyCurve, MaterialProps};
use serde::{Deserialize, Serialize};
use std::path::Path;

const UM: f64 = 1e-6;

/// Computational box and discretization, lengths in μm.
///
/// The default is the full production domain [0,10000] x [-1000,1000] x
/// [0,1000] at 12.5 μm spacing. Tests and analytic checks shrink it; the top
/// surface must stay at z = 1000 μm because the plane grids reference it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimDomain {
    pub x_min_um: f64,
    pub x_max_um: f64,
    pub y_min_um: f64,
    pub y_max_um: f64,
    pub z_min_um: f64,
    pub z_max_um: f64,
    pub dx_um: f64,
    pub dy_um: f64,
    pub dz_um: f64,
    /// Powder layer thickness t_h (μm): the source acts in the band
    /// z ∈ [z_max - t_h, z_max].
    pub layer_um: f64,
    /// Laser 1/e² radius r_b (μm).
    pub beam_radius_um: f64,
    /// Convective coefficient on the top face (W/(m²·K)).
    pub h_conv: f64,
    /// Ambient temperature (K).
    pub t_ambient_k: f64,
    /// Scan start position (μm).
    pub laser_start_um: f64,
    /// Giving-up position: reaching it without settling is a failure (μm).
    pub laser_end_um: f64,
}

impl Default for SimDomain {
    fn default() -> Self {
        Self {
            x_min_um: 0.0,
            x_max_um: 10_000.0,
            y_min_um: -1_000.0,
            y_max_um: 1_000.0,
            z_min_um: 0.0,
            z_max_um: 1_000.0,
            dx_um: 12.5,
            dy_um: 12.5,
            dz_um: 12.5,
            layer_um: 30.0,
            beam_radius_um: 50.0,
            h_conv: 1.0,
            t_ambient_k: 300.0,
            laser_start_um: 2_000.0,
            laser_end_um: 8_000.0,
        }
    }
}

impl SimDomain {
    /// Reduced box for tests and analytic validation: x ∈ [0, x_len],
    /// y ∈ [-y_half, y_half], z ∈ [1000 - depth, 1000], uniform spacing.
    pub fn compact(
        x_len_um: f64,
        y_half_um: f64,
        depth_um: f64,
        spacing_um: f64,
        laser_start_um: f64,
        laser_end_um: f64,
    ) -> Self {
        Self {
            x_min_um: 0.0,
            x_max_um: x_len_um,
            y_min_um: -y_half_um,
            y_max_um: y_half_um,
            z_min_um: 1_000.0 - depth_um,
            z_max_um: 1_000.0,
            dx_um: spacing_um,
            dy_um: spacing_um,
            dz_um: spacing_um,
            laser_start_um,
            laser_end_um,
            ..Self::default()
        }
    }

    pub fn nx(&self) -> usize {
        ((self.x_max_um - self.x_min_um) / self.dx_um).round() as usize + 1
    }
    pub fn ny(&self) -> usize {
        ((self.y_max_um - self.y_min_um) / self.dy_um).round() as usize + 1
    }
    pub fn nz(&self) -> usize {
        ((self.z_max_um - self.z_min_um) / self.dz_um).round() as usize + 1
    }
    pub fn n_nodes(&self) -> usize {
        self.nx() * self.ny() * self.nz()
    }

    pub fn validate(&self) -> Result<()> {
        let fits = |len: f64, d: f64| {
            let n = len / d;
            (n - n.round()).abs() < 1e-6 && n.round() >= 1.0
        };
        if !fits(self.x_max_um - self.x_min_um, self.dx_um)
            || !fits(self.y_max_um - self.y_min_um, self.dy_um)
            || !fits(self.z_max_um - self.z_min_um, self.dz_um)
        {
            return Err(Error::Config("grid spacings must divide the extents".into()));
        }
        if (self.z_max_um - 1_000.0).abs() > 1e-9 {
            return Err(Error::Config("top surface must sit at z = 1000 μm".into()));
        }
        // the x-z section plane needs a node row at y = 0
        let k = -self.y_min_um / self.dy_um;
        if (k - k.round()).abs() > 1e-6 {
            return Err(Error::Config("y = 0 must be a grid plane".into()));
        }
        if self.laser_start_um < self.x_min_um || self.laser_end_um > self.x_max_um {
            return Err(Error::Config("laser track must lie inside the x extents".into()));
        }
        Ok(())
    }
}

/// Laser position and drive at one instant. The center moves along +x only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserState {
    pub x_um: f64,
    pub y_um: f64,
    pub z_um: f64,
    pub speed_m_s: f64,
    pub power_w: f64,
    pub alpha: f64,
}

impl LaserState {
    pub fn at_start(params: &ProcessParams, domain: &SimDomain) -> Self {
        Self {
            x_um: domain.laser_start_um,
            y_um: 0.0,
            z_um: domain.z_max_um,
            speed_m_s: params.speed_m_s,
            power_w: params.power_w,
            alpha: params.alpha,
        }
    }
}

/// Gridded temperature state with its companion enthalpy array.
/// Layout: idx = (ix * ny + iy) * nz + iz, z contiguous.
#[derive(Debug, Clone)]
pub struct TemperatureField3D {
    pub domain: SimDomain,
    pub temp_k: Vec<f64>,
    pub enthalpy_j_kg: Vec<f64>,
    pub laser: LaserState,
    pub time_s: f64,
}

impl TemperatureField3D {
    pub fn uniform(domain: SimDomain, t_k: f64, curve: &EnthalpyCurve, laser: LaserState) -> Self {
        let n = domain.n_nodes();
        let h = curve.enthalpy_unchecked(t_k);
        Self {
            domain,
            temp_k: vec![t_k; n],
            enthalpy_j_kg: vec![h; n],
            laser,
            time_s: 0.0,
        }
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.domain.ny() + iy) * self.domain.nz() + iz
    }

    /// Total extensive enthalpy Σ ρ h ΔV (J), the conserved quantity of the
    /// insulated, source-free update.
    pub fn total_enthalpy_j(&self, density: f64) -> f64 {
        let dv = self.domain.dx_um * UM * self.domain.dy_um * UM * self.domain.dz_um * UM;
        self.enthalpy_j_kg.iter().sum::<f64>() * density * dv
    }
}

/// Volumetric heating (W/m³) at a node. Zero below the powder band.
pub fn source_term(x_um: f64, y_um: f64, z_um: f64, laser: &LaserState, domain: &SimDomain) -> f64 {
    if z_um < domain.z_max_um - domain.layer_um - 1e-9 {
        return 0.0;
    }
    let rb_m = domain.beam_radius_um * UM;
    let th_m = domain.layer_um * UM;
    let peak = laser.alpha * laser.power_w / (std::f64::consts::PI * rb_m * rb_m * th_m);
    let dx = (x_um - laser.x_um) * UM;
    let dy = (y_um - laser.y_um) * UM;
    let dz = (z_um - laser.z_um) * UM;
    let r2 = dx * dx + dy * dy + dz * dz;
    peak * (-2.0 * r2 / (rb_m * rb_m)).exp()
}

/// Melt-pool scalars measured on the raw 3D grid in the laser frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolMetrics {
    pub t_peak_k: f64,
    pub length_um: f64,
    pub width_um: f64,
}

/// Hard-count pool metrics: for each (y,z) line the molten chord is
/// Δx · #(T > T_s); L is the longest chord, W likewise across y.
pub fn pool_metrics_3d(field: &TemperatureField3D, t_solidus: f64) -> PoolMetrics {
    let (nx, ny, nz) = (field.domain.nx(), field.domain.ny(), field.domain.nz());
    let mut max_count_yz = vec![0u32; ny * nz];
    let mut max_count_xz = vec![0u32; nx * nz];
    let mut t_peak = f64::MIN;
    for ix in 0..nx {
        for iy in 0..ny {
            let base = (ix * ny + iy) * nz;
            for iz in 0..nz {
                let t = field.temp_k[base + iz];
                if t > t_peak {
                    t_peak = t;
                }
                if t > t_solidus {
                    max_count_yz[iy * nz + iz] += 1;
                    max_count_xz[ix * nz + iz] += 1;
                }
            }
        }
    }
    let lmax = max_count_yz.iter().copied().max().unwrap_or(0);
    let wmax = max_count_xz.iter().copied().max().unwrap_or(0);
    PoolMetrics {
        t_peak_k: t_peak,
        length_um: lmax as f64 * field.domain.dx_um,
        width_um: wmax as f64 * field.domain.dy_um,
    }
}

/// Convergence report attached to a quasi-steady snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceDiag {
    pub steps: u64,
    pub time_s: f64,
    pub dt_s: f64,
    pub laser_x_um: f64,
    pub pool: PoolMetrics,
    /// Relative change of (L, W, T_peak) over the trailing window.
    pub rel_change: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct SteadyOutcome {
    pub field: TemperatureField3D,
    pub diag: ConvergenceDiag,
}

/// Explicit conduction stepper. Holds the material maps plus scratch storage
/// so repeated steps allocate nothing.
pub struct Simulator {
    pub props: MaterialProps,
    pub curve: EnthalpyCurve,
    cond: Vec<f64>,
    src_x: Vec<f64>,
    src_y: Vec<f64>,
    src_z: Vec<f64>,
}

impl Simulator {
    pub fn new(props: MaterialProps) -> Self {
        let curve = EnthalpyCurve::new(&props);
        Self { props, curve, cond: Vec::new(), src_x: Vec::new(), src_y: Vec::new(), src_z: Vec::new() }
    }

    /// Largest admissible explicit step: 0.8 · minΔ² · ρ · c_min / (6 · k_max).
    pub fn stability_limit_s(&self, domain: &SimDomain) -> f64 {
        let d = domain.dx_um.min(domain.dy_um).min(domain.dz_um) * UM;
        let c_min = self.props.c_solid.min(self.props.c_liquid);
        let k_max = self.props.k_solid.max(self.props.k_liquid);
        0.8 * d * d * self.props.density * c_min / (6.0 * k_max)
    }

    /// One explicit step: ρ Δh = dt (∇·(k∇T) + Ṡ), zero-flux sides and
    /// bottom, Robin top, then T recovered from enthalpy.
    pub fn advance(&mut self, field: &mut TemperatureField3D, dt: f64) -> Result<()> {
        let dt_max = self.stability_limit_s(&field.domain);
        if dt > dt_max * (1.0 + 1e-12) {
            return Err(Error::UnstableStep { dt, dt_max });
        }
        let dom = field.domain;
        let (nx, ny, nz) = (dom.nx(), dom.ny(), dom.nz());
        let n = nx * ny * nz;

        self.cond.resize(n, 0.0);
        for (k, &t) in self.cond.iter_mut().zip(field.temp_k.iter()) {
            *k = self.props.conductivity(t);
        }

        // Separable Gaussian factors; the z factor also carries the band cut.
        let rb_m = dom.beam_radius_um * UM;
        let th_m = dom.layer_um * UM;
        let amp = field.laser.alpha * field.laser.power_w / (std::f64::consts::PI * rb_m * rb_m * th_m);
        let gauss = |d_um: f64| (-2.0 * (d_um * UM).powi(2) / (rb_m * rb_m)).exp();
        self.src_x.clear();
        self.src_x.extend((0..nx).map(|i| gauss(dom.x_min_um + i as f64 * dom.dx_um - field.laser.x_um)));
        self.src_y.clear();
        self.src_y.extend((0..ny).map(|j| gauss(dom.y_min_um + j as f64 * dom.dy_um - field.laser.y_um)));
        self.src_z.clear();
        self.src_z.extend((0..nz).map(|k| {
            let z = dom.z_min_um + k as f64 * dom.dz_um;
            if z < dom.z_max_um - dom.layer_um - 1e-9 {
                0.0
            } else {
                gauss(z - field.laser.z_um)
            }
        }));
        let source_on = amp != 0.0;

        let inv_dx2 = 1.0 / (dom.dx_um * UM * dom.dx_um * UM);
        let inv_dy2 = 1.0 / (dom.dy_um * UM * dom.dy_um * UM);
        let inv_dz2 = 1.0 / (dom.dz_um * UM * dom.dz_um * UM);
        let robin = dom.h_conv / (dom.dz_um * UM);
        let inv_rho = 1.0 / self.props.density;
        let sx = ny * nz; // x-neighbor stride

        let temp = &field.temp_k;
        let cond = &self.cond;
        let h = &mut field.enthalpy_j_kg;
        for ix in 0..nx {
            for iy in 0..ny {
                let base = (ix * ny + iy) * nz;
                let sxy = if source_on { amp * self.src_x[ix] * self.src_y[iy] } else { 0.0 };
                for iz in 0..nz {
                    let i = base + iz;
                    let t0 = temp[i];
                    let k0 = cond[i];
                    let mut div = 0.0;
                    if ix > 0 {
                        let j = i - sx;
                        div += 0.5 * (k0 + cond[j]) * (temp[j] - t0) * inv_dx2;
                    }
                    if ix + 1 < nx {
                        let j = i + sx;
                        div += 0.5 * (k0 + cond[j]) * (temp[j] - t0) * inv_dx2;
                    }
                    if iy > 0 {
                        let j = i - nz;
                        div += 0.5 * (k0 + cond[j]) * (temp[j] - t0) * inv_dy2;
                    }
                    if iy + 1 < ny {
                        let j = i + nz;
                        div += 0.5 * (k0 + cond[j]) * (temp[j] - t0) * inv_dy2;
                    }
                    if iz > 0 {
                        let j = i - 1;
                        div += 0.5 * (k0 + cond[j]) * (temp[j] - t0) * inv_dz2;
                    }
                    if iz + 1 < nz {
                        let j = i + 1;
                        div += 0.5 * (k0 + cond[j]) * (temp[j] - t0) * inv_dz2;
                    } else {
                        // top face: -k dT/dz = h0 (T∞ - T)
                        div -= robin * (t0 - dom.t_ambient_k);
                    }
                    let s = if source_on { sxy * self.src_z[iz] } else { 0.0 };
                    h[i] += dt * (div + s) * inv_rho;
                }
            }
        }
        for (t, &hv) in field.temp_k.iter_mut().zip(field.enthalpy_j_kg.iter()) {
            *t = self.curve.temperature(hv);
        }
        field.time_s += dt;
        field.laser.x_um += field.laser.speed_m_s * dt / UM;
        Ok(())
    }

    /// March the scan until the laser-frame pool metrics (L, W, T_peak) each
    /// change by < 1e-3 relative over a trailing window of 100 steps.
    pub fn run_to_steady(
        &mut self,
        params: &ProcessParams,
        domain: &SimDomain,
    ) -> Result<SteadyOutcome> {
        domain.validate()?;
        // zero deposited power is trivially valid even though it sits outside
        // the envelope; everything else must be inside
        let no_source = params.alpha * params.power_w == 0.0;
        let env = ParamBounds::solver_envelope();
        if !no_source && !env.contains(params) {
            return Err(Error::Domain(format!(
                "process parameters {params:?} outside the solver validity envelope"
            )));
        }
        let laser = LaserState::at_start(params, domain);
        let mut field = TemperatureField3D::uniform(*domain, params.t_sub_k, &self.curve, laser);
        let dt = self.stability_limit_s(domain);

        // No deposited power: the uniform field is already the fixed point.
        if no_source {
            let pool = pool_metrics_3d(&field, self.props.t_solidus);
            return Ok(SteadyOutcome {
                field,
                diag: ConvergenceDiag {
                    steps: 0,
                    time_s: 0.0,
                    dt_s: dt,
                    laser_x_um: laser.x_um,
                    pool,
                    rel_change: [0.0; 3],
                },
            });
        }

        const CHECK_EVERY: u64 = 25;
        const TOL: f64 = 1e-3;
        // Trailing window: at least 100 steps, and at least the time the
        // laser needs to cross ten beam radii. A bare 100-step window is a
        // vanishing physical interval on fine grids and converges on the
        // early growth plateau.
        let travel_steps =
            (10.0 * domain.beam_radius_um * UM / (params.speed_m_s * dt)).ceil() as u64;
        let window_steps = travel_steps.max(100);
        let mut history: Vec<(u64, PoolMetrics)> = Vec::new();
        let mut steps: u64 = 0;
        loop {
            self.advance(&mut field, dt)?;
            steps += 1;
            if field.laser.x_um > domain.laser_end_um {
                let pool = pool_metrics_3d(&field, self.props.t_solidus);
                return Err(Error::NonConvergence(format!(
                    "laser reached x = {:.0} μm after {steps} steps; last pool: \
                     T_peak = {:.1} K, L = {:.1} μm, W = {:.1} μm",
                    field.laser.x_um, pool.t_peak_k, pool.length_um, pool.width_um
                )));
            }
            if !steps.is_multiple_of(CHECK_EVERY) {
                continue;
            }
            let pool = pool_metrics_3d(&field, self.props.t_solidus);
            history.push((steps, pool));
            let past = history
                .iter()
                .rev()
                .find(|(s, _)| steps - s >= window_steps)
                .copied();
            if let Some((_, old)) = past {
                let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-30);
                let changes = [
                    rel(pool.length_um, old.length_um),
                    rel(pool.width_um, old.width_um),
                    rel(pool.t_peak_k, old.t_peak_k),
                ];
                if changes.iter().all(|&c| c < TOL) {
                    return Ok(SteadyOutcome {
                        diag: ConvergenceDiag {
                            steps,
                            time_s: field.time_s,
                            dt_s: dt,
                            laser_x_um: field.laser.x_um,
                            pool,
                            rel_change: changes,
                        },
                        field,
                    });
                }
            }
        }
    }
}

/// Bilinearly sample the two fixed laser-centered plane grids out of a
/// converged field: x–y at the top surface, x–z on the y = 0 plane.
pub fn extract_sections(field: &TemperatureField3D) -> Result<(PlaneSection, PlaneSection)> {
    let xy = extract_section(field, &PlaneGrid::chi_xy())?;
    let xz = extract_section(field, &PlaneGrid::chi_xz())?;
    Ok((xy, xz))
}

/// Sample one plane grid; χ nodes outside the domain clamp to the boundary
/// value and raise the section's `clamped` flag.
pub fn extract_section(field: &TemperatureField3D, grid: &PlaneGrid) -> Result<PlaneSection> {
    let dom = &field.domain;
    let (nx, ny, nz) = (dom.nx(), dom.ny(), dom.nz());
    // Pull the source plane out as a dense 2D array first.
    let (pn0, pn1, plane_vals) = match grid.kind {
        PlaneKind::Xy => {
            let iz = nz - 1; // top surface z = 1000 μm
            let mut v = Vec::with_capacity(nx * ny);
            for ix in 0..nx {
                for iy in 0..ny {
                    v.push(field.temp_k[(ix * ny + iy) * nz + iz]);
                }
            }
            (nx, ny, v)
        }
        PlaneKind::Xz => {
            let fy = -dom.y_min_um / dom.dy_um;
            let iy = fy.round() as usize;
            if (fy - fy.round()).abs() > 1e-6 || iy >= ny {
                return Err(Error::Config("y = 0 is not a grid plane of this domain".into()));
            }
            let mut v = Vec::with_capacity(nx * nz);
            for ix in 0..nx {
                for iz in 0..nz {
                    v.push(field.temp_k[(ix * ny + iy) * nz + iz]);
                }
            }
            (nx, nz, v)
        }
    };
    let (start1, step1) = match grid.kind {
        PlaneKind::Xy => (dom.y_min_um, dom.dy_um),
        PlaneKind::Xz => (dom.z_min_um, dom.dz_um),
    };
    let mut values = Vec::with_capacity(grid.len());
    let mut clamped = false;
    for i0 in 0..grid.n0 {
        // χ axis 0 is laser-relative x
        let x_abs = field.laser.x_um + grid.coord0_um(i0);
        let u = (x_abs - dom.x_min_um) / dom.dx_um;
        for i1 in 0..grid.n1 {
            let v = (grid.coord1_um(i1) - start1) / step1;
            if u < -1e-9 || u > (pn0 - 1) as f64 + 1e-9 || v < -1e-9 || v > (pn1 - 1) as f64 + 1e-9
            {
                clamped = true;
            }
            values.push(bilinear_clamped(&plane_vals, pn0, pn1, u, v));
        }
    }
    let mut section = PlaneSection::new(*grid, values)?;
    section.clamped = clamped;
    Ok(section)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FieldHeader {
    kind: String,
    nx: usize,
    ny: usize,
    nz: usize,
    domain: SimDomain,
    laser: LaserState,
    time_s: f64,
}

/// JSON sidecar written next to every snapshot container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub params: ProcessParams,
    pub diag: Option<ConvergenceDiag>,
}

impl TemperatureField3D {
    /// Write the container plus its `<path>.json` sidecar.
    pub fn save(&self, path: &Path, params: &ProcessParams, diag: Option<&ConvergenceDiag>) -> Result<()> {
        let header = FieldHeader {
            kind: "field3d".into(),
            nx: self.domain.nx(),
            ny: self.domain.ny(),
            nz: self.domain.nz(),
            domain: self.domain,
            laser: self.laser,
            time_s: self.time_s,
        };
        container::write_file(path, FIELD_MAGIC, FIELD_FORMAT_VERSION, &header, &[&self.temp_k])?;
        let sidecar = Sidecar { params: *params, diag: diag.cloned() };
        std::fs::write(
            path.with_extension("json"),
            serde_json::to_vec_pretty(&sidecar)?,
        )?;
        Ok(())
    }

    pub fn load(path: &Path, props: &MaterialProps) -> Result<Self> {
        let (header, mut arrays): (FieldHeader, _) =
            container::read_file(path, FIELD_MAGIC, FIELD_FORMAT_VERSION)?;
        if arrays.len() != 1 || arrays[0].len() != header.nx * header.ny * header.nz {
            return Err(Error::Format("field array size disagrees with header".into()));
        }
        let temp = arrays.pop().unwrap();
        let curve = EnthalpyCurve::new(props);
        let enthalpy = temp.iter().map(|&t| curve.enthalpy_unchecked(t)).collect();
        Ok(Self {
            domain: header.domain,
            temp_k: temp,
            enthalpy_j_kg: enthalpy,
            laser: header.laser,
            time_s: header.time_s,
        })
    }
}
