//! Training-corpus generation: the physics sweep (resumable, expensive) and
//! the closed-form synthetic stand-in (instant, exact ground truth), plus
//! splitting and on-disk layout.

use crate::error::{Error, Result};
use crate::params::{ParamBounds, ProcessParams};
use crate::plane::{PlaneGrid, PlaneKind, PlaneSection};
use crate::sim::{extract_sections, ConvergenceDiag, SimDomain, Simulator};
use crate::surrogate::PlaneSurrogate;
use crate::thermo::MaterialProps;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

/// Cartesian sweep over process parameters, power outermost, absorptivity
/// innermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub powers_w: Vec<f64>,
    pub speeds_m_s: Vec<f64>,
    pub t_subs_k: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl SweepGrid {
    /// The production sweep: 5 powers x 5 speeds x 5 substrate temperatures
    /// x 6 absorptivities = 750 cells.
    pub fn production() -> Self {
        Self {
            powers_w: vec![100.0, 200.0, 300.0, 400.0, 500.0],
            speeds_m_s: vec![0.5, 1.0, 1.5, 2.0, 2.5],
            t_subs_k: vec![300.0, 360.0, 420.0, 480.0, 540.0],
            alphas: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
        }
    }

    pub fn len(&self) -> usize {
        self.powers_w.len() * self.speeds_m_s.len() * self.t_subs_k.len() * self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Config("sweep grid has an empty axis".into()));
        }
        let env = ParamBounds::solver_envelope();
        for p in self.cells() {
            if !env.contains(&p) {
                return Err(Error::Config(format!(
                    "sweep cell {p:?} outside the solver validity envelope"
                )));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<ProcessParams> {
        let mut out = Vec::with_capacity(self.len());
        for &p in &self.powers_w {
            for &v in &self.speeds_m_s {
                for &t in &self.t_subs_k {
                    for &a in &self.alphas {
                        out.push(ProcessParams::new(p, v, t, a));
                    }
                }
            }
        }
        out
    }
}

/// One supervised record: inputs and both section planes.
#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub params: ProcessParams,
    pub xy: PlaneSection,
    pub xz: PlaneSection,
}

/// In-memory corpus with its normalization metadata and split assignment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub bounds: ParamBounds,
    pub split_seed: u64,
    /// Indices of validation records; everything else trains.
    pub val_indices: Vec<usize>,
}

impl Dataset {
    /// Seeded shuffle, last `n_val` indices become validation. Deterministic.
    pub fn split(&mut self, n_val: usize, seed: u64) -> Result<()> {
        if n_val >= self.records.len() {
            return Err(Error::Config(format!(
                "n_val = {n_val} must be smaller than the dataset ({} records)",
                self.records.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        self.split_seed = seed;
        self.val_indices = order[order.len() - n_val..].to_vec();
        self.val_indices.sort_unstable();
        Ok(())
    }

    pub fn assert_split_sane(&self) -> Result<()> {
        let mut seen = vec![false; self.records.len()];
        for &i in &self.val_indices {
            if i >= self.records.len() || seen[i] {
                return Err(Error::Config("validation indices out of range or repeated".into()));
            }
            seen[i] = true;
        }
        Ok(())
    }

    /// Views for one plane as training samples.
    pub fn train_val(&self, kind: PlaneKind) -> (Vec<crate::fno::TrainSample>, Vec<crate::fno::TrainSample>) {
        let is_val: Vec<bool> = {
            let mut v = vec![false; self.records.len()];
            for &i in &self.val_indices {
                v[i] = true;
            }
            v
        };
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, rec) in self.records.iter().enumerate() {
            let section = match kind {
                PlaneKind::Xy => &rec.xy,
                PlaneKind::Xz => &rec.xz,
            };
            let sample = crate::fno::TrainSample {
                params: rec.params,
                target_k: section.values_k.clone(),
            };
            if is_val[i] {
                val.push(sample);
            } else {
                train.push(sample);
            }
        }
        (train, val)
    }
}

/// Constants of the closed-form synthetic family. The field is a Gaussian
/// bump riding on the substrate temperature:
///   T(x, y) = T_sub + B exp(-(x²/a(V)² + y²/b²)),   B = C_PEAK · αP/V,
///   a(V) = A0 + A1·V (melt pool stretches with scan speed), depth axis d.
pub mod synth {
    /// Peak scale (K per W·s/m): B = C_PEAK · αP/V.
    pub const C_PEAK: f64 = 20.0;
    /// Base x half-width (μm).
    pub const A0_UM: f64 = 150.0;
    /// x half-width growth per unit speed (μm per m/s).
    pub const A1_UM: f64 = 60.0;
    /// y half-width (μm).
    pub const B_UM: f64 = 60.0;
    /// z half-depth (μm).
    pub const D_UM: f64 = 40.0;

    pub fn a_um(speed_m_s: f64) -> f64 {
        A0_UM + A1_UM * speed_m_s
    }

    pub fn peak_k(power_w: f64, speed_m_s: f64, alpha: f64) -> f64 {
        C_PEAK * alpha * power_w / speed_m_s
    }
}

/// Closed-form surrogate over the synthetic family with exact gradients;
/// doubles as the generator's field evaluator and as a test stand-in for a
/// trained model.
#[derive(Debug, Clone)]
pub struct AnalyticSurrogate {
    pub grid: PlaneGrid,
}

impl AnalyticSurrogate {
    pub fn new(kind: PlaneKind) -> Self {
        Self { grid: PlaneGrid::chi(kind) }
    }

    fn eval(&self, params: &ProcessParams, node: usize) -> (f64, [f64; 4]) {
        let g = &self.grid;
        let i0 = node / g.n1;
        let i1 = node % g.n1;
        let x = g.coord0_um(i0);
        let a = synth::a_um(params.speed_m_s);
        let (c1, w1) = match g.kind {
            PlaneKind::Xy => (g.coord1_um(i1), synth::B_UM),
            PlaneKind::Xz => (g.coord1_um(i1) - 1000.0, synth::D_UM),
        };
        let b = synth::peak_k(params.power_w, params.speed_m_s, params.alpha);
        let shape = (-(x * x / (a * a) + c1 * c1 / (w1 * w1))).exp();
        let t = params.t_sub_k + b * shape;
        // exact partials
        let d_p = b / params.power_w * shape;
        let d_alpha = b / params.alpha * shape;
        let d_v = shape
            * (-b / params.speed_m_s
                + b * (2.0 * x * x * synth::A1_UM / (a * a * a)));
        (t, [d_p, d_v, 1.0, d_alpha])
    }
}

impl PlaneSurrogate for AnalyticSurrogate {
    fn grid(&self) -> &PlaneGrid {
        &self.grid
    }

    fn predict(&self, params: &ProcessParams) -> Result<PlaneSection> {
        let values = (0..self.grid.len()).map(|n| self.eval(params, n).0).collect();
        PlaneSection::new(self.grid, values)
    }

    fn predict_grad<'a>(
        &'a self,
        params: &ProcessParams,
    ) -> Result<(PlaneSection, Box<dyn FnOnce(&[f64]) -> Result<[f64; 4]> + 'a>)> {
        let n = self.grid.len();
        let mut values = Vec::with_capacity(n);
        let mut partials = Vec::with_capacity(n);
        for node in 0..n {
            let (t, d) = self.eval(params, node);
            values.push(t);
            partials.push(d);
        }
        let section = PlaneSection::new(self.grid, values)?;
        let pull = move |d_field: &[f64]| {
            if d_field.len() != partials.len() {
                return Err(Error::Shape {
                    expected: format!("{} adjoints", partials.len()),
                    got: format!("{}", d_field.len()),
                });
            }
            let mut out = [0.0; 4];
            for (df, p) in d_field.iter().zip(partials.iter()) {
                for k in 0..4 {
                    out[k] += df * p[k];
                }
            }
            Ok(out)
        };
        Ok((section, Box::new(pull)))
    }
}

/// Closed-form corpus at random parameters inside the sweep bounds; ground
/// truth is analytic so model error can be measured exactly.
pub fn synthetic_dataset(n_train: usize, n_val: usize, seed: u64) -> Result<Dataset> {
    let bounds = ParamBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xy = AnalyticSurrogate::new(PlaneKind::Xy);
    let xz = AnalyticSurrogate::new(PlaneKind::Xz);
    let n = n_train + n_val;
    let mut records = Vec::with_capacity(n);
    let b = bounds.as_array();
    for _ in 0..n {
        let params = ProcessParams::new(
            rng.random_range(b[0].0..=b[0].1),
            rng.random_range(b[1].0..=b[1].1),
            rng.random_range(b[2].0..=b[2].1),
            rng.random_range(b[3].0..=b[3].1),
        );
        records.push(DatasetRecord {
            params,
            xy: xy.predict(&params)?,
            xz: xz.predict(&params)?,
        });
    }
    let mut ds = Dataset { records, bounds, split_seed: 0, val_indices: Vec::new() };
    ds.split(n_val, seed)?;
    Ok(ds)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    index: usize,
    params: ProcessParams,
    xy_path: String,
    xz_path: String,
    field_path: Option<String>,
    diag: Option<ConvergenceDiag>,
    xy_hash: u64,
    xz_hash: u64,
    /// Interpolation used when sampling the solver grid onto χ.
    interpolation: String,
    error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    source: String,
    grid: Option<SweepGrid>,
    domain: Option<SimDomain>,
    bounds: ParamBounds,
    split_seed: u64,
    val_indices: Vec<usize>,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepReport {
    pub computed: usize,
    pub skipped: usize,
    pub failed: usize,
}

pub struct SweepOptions {
    pub workers: usize,
    pub store_fields: bool,
    pub props: MaterialProps,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { workers: 1, store_fields: false, props: MaterialProps::default() }
    }
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let tmp = dir.join("manifest.json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(manifest)?)?;
    std::fs::rename(&tmp, manifest_path(dir))?;
    Ok(())
}

fn hash_file(path: &Path) -> Result<u64> {
    Ok(crate::container::hash_bytes(&std::fs::read(path)?))
}

/// One converged simulation per sweep cell, sections extracted onto χ and
/// written incrementally: completed cells are skipped on restart, so a killed
/// sweep resumes where it stopped. Worker threads pull cells off a shared
/// queue; only this thread touches the manifest.
pub fn run_sweep(
    grid: &SweepGrid,
    domain: &SimDomain,
    out_dir: &Path,
    opts: &SweepOptions,
) -> Result<(Dataset, SweepReport)> {
    grid.validate()?;
    domain.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let cells = grid.cells();

    let mut manifest = match std::fs::read(manifest_path(out_dir)) {
        Ok(bytes) => {
            let m: Manifest = serde_json::from_slice(&bytes)?;
            if m.grid.as_ref() != Some(grid) || m.domain.as_ref() != Some(domain) {
                return Err(Error::Config(
                    "output directory holds a sweep with a different grid or domain".into(),
                ));
            }
            m
        }
        Err(_) => Manifest {
            source: "sweep".into(),
            grid: Some(grid.clone()),
            domain: Some(*domain),
            bounds: ParamBounds::default(),
            split_seed: 0,
            val_indices: Vec::new(),
            entries: Vec::new(),
        },
    };

    let mut report = SweepReport::default();
    // decide which cells still need computing
    let mut todo: Vec<usize> = Vec::new();
    for (i, params) in cells.iter().enumerate() {
        let done = manifest.entries.iter().any(|e| {
            e.index == i
                && e.error.is_none()
                && hash_file(&out_dir.join(&e.xy_path)).is_ok_and(|h| h == e.xy_hash)
                && hash_file(&out_dir.join(&e.xz_path)).is_ok_and(|h| h == e.xz_hash)
        });
        if done {
            report.skipped += 1;
        } else {
            manifest.entries.retain(|e| e.index != i);
            todo.push(i);
        }
    }

    type CellResult = (usize, std::result::Result<(PlaneSection, PlaneSection, ConvergenceDiag, Option<PathBuf>), String>);
    let (tx, rx) = mpsc::channel::<CellResult>();
    let workers = opts.workers.max(1).min(todo.len().max(1));
    let queue = std::sync::Mutex::new(todo.into_iter().collect::<Vec<_>>());
    let n_expected = queue.lock().unwrap().len();

    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let queue = &queue;
            let cells = &cells;
            let opts_ref = &opts;
            scope.spawn(move || {
                let mut sim = Simulator::new(opts_ref.props);
                loop {
                    let next = queue.lock().unwrap().pop();
                    let Some(i) = next else { break };
                    let params = cells[i];
                    let outcome = sim.run_to_steady(&params, domain).and_then(|steady| {
                        let (xy, xz) = extract_sections(&steady.field)?;
                        let field_path = if opts_ref.store_fields {
                            let p = out_dir.join(format!("rec_{i:05}_field.bin"));
                            steady.field.save(&p, &params, Some(&steady.diag))?;
                            Some(p)
                        } else {
                            None
                        };
                        Ok((xy, xz, steady.diag, field_path))
                    });
                    let msg = match outcome {
                        Ok(v) => (i, Ok(v)),
                        Err(e) => (i, Err(e.to_string())),
                    };
                    if tx.send(msg).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        // single-writer: record files and the manifest are written here
        for _ in 0..n_expected {
            let (i, outcome) = rx.recv().map_err(|_| Error::Config("sweep workers died".into()))?;
            let params = cells[i];
            match outcome {
                Ok((xy, xz, diag, field_path)) => {
                    let xy_rel = format!("rec_{i:05}_xy.bin");
                    let xz_rel = format!("rec_{i:05}_xz.bin");
                    xy.save(&out_dir.join(&xy_rel), Some(&params))?;
                    xz.save(&out_dir.join(&xz_rel), Some(&params))?;
                    manifest.entries.push(ManifestEntry {
                        index: i,
                        params,
                        xy_hash: hash_file(&out_dir.join(&xy_rel))?,
                        xz_hash: hash_file(&out_dir.join(&xz_rel))?,
                        xy_path: xy_rel,
                        xz_path: xz_rel,
                        field_path: field_path
                            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned()),
                        diag: Some(diag),
                        interpolation: "bilinear".into(),
                        error: None,
                    });
                    report.computed += 1;
                }
                Err(e) => {
                    manifest.entries.push(ManifestEntry {
                        index: i,
                        params,
                        xy_path: String::new(),
                        xz_path: String::new(),
                        field_path: None,
                        diag: None,
                        xy_hash: 0,
                        xz_hash: 0,
                        interpolation: "bilinear".into(),
                        error: Some(e),
                    });
                    report.failed += 1;
                }
            }
            manifest.entries.sort_by_key(|e| e.index);
            write_manifest(out_dir, &manifest)?;
        }
        Ok(())
    })?;

    if report.failed * 10 > cells.len() {
        return Err(Error::NonConvergence(format!(
            "{} of {} sweep cells failed (over the 10% budget)",
            report.failed,
            cells.len()
        )));
    }
    let dataset = load_dataset(out_dir)?;
    Ok((dataset, report))
}

/// Persist any in-memory dataset (synthetic or rebuilt) in the sweep layout:
/// one container per section plus a manifest.
pub fn save_dataset(dataset: &Dataset, dir: &Path, source: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(dataset.records.len());
    for (i, rec) in dataset.records.iter().enumerate() {
        let xy_rel = format!("rec_{i:05}_xy.bin");
        let xz_rel = format!("rec_{i:05}_xz.bin");
        rec.xy.save(&dir.join(&xy_rel), Some(&rec.params))?;
        rec.xz.save(&dir.join(&xz_rel), Some(&rec.params))?;
        entries.push(ManifestEntry {
            index: i,
            params: rec.params,
            xy_hash: hash_file(&dir.join(&xy_rel))?,
            xz_hash: hash_file(&dir.join(&xz_rel))?,
            xy_path: xy_rel,
            xz_path: xz_rel,
            field_path: None,
            diag: None,
            interpolation: "exact".into(),
            error: None,
        });
    }
    let manifest = Manifest {
        source: source.into(),
        grid: None,
        domain: None,
        bounds: dataset.bounds,
        split_seed: dataset.split_seed,
        val_indices: dataset.val_indices.clone(),
        entries,
    };
    write_manifest(dir, &manifest)
}

/// Load a dataset directory back into memory, verifying the split invariants.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(manifest_path(dir))?)?;
    let mut records = Vec::new();
    for entry in &manifest.entries {
        if entry.error.is_some() {
            continue;
        }
        let (xy, pxy) = PlaneSection::load(&dir.join(&entry.xy_path))?;
        let (xz, _) = PlaneSection::load(&dir.join(&entry.xz_path))?;
        let params = pxy.unwrap_or(entry.params);
        records.push(DatasetRecord { params, xy, xz });
    }
    let ds = Dataset {
        records,
        bounds: manifest.bounds,
        split_seed: manifest.split_seed,
        val_indices: manifest.val_indices,
    };
    ds.assert_split_sane()?;
    Ok(ds)
}
