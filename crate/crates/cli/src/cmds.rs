//! Subcommand implementations. Each command resolves its settings in three
//! layers: compiled defaults, then the optional `--config` JSON, then explicit
//! flags.

use meltwin_core::calibrate::{
    self, CalibConfig, GaussianSpec, KlVariant, SurrogateLength, UnitTag,
};
use meltwin_core::control::{self, ControlConfig, SurrogateObjective};
use meltwin_core::dataset::{self, SweepGrid, SweepOptions};
use meltwin_core::demo::{run_demo, DemoConfig};
use meltwin_core::error::{Error, Result};
use meltwin_core::features::{self, SriConstants};
use meltwin_core::fno::{self, FnoConfig, SurrogateModel};
use meltwin_core::params::ProcessParams;
use meltwin_core::plane::{PlaneGrid, PlaneKind};
use meltwin_core::sim::{extract_sections, SimDomain, Simulator};
use meltwin_core::surrogate::SurrogatePair;
use meltwin_core::thermo::MaterialProps;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Overlay flags on top of the config file on top of defaults. `null`s (unset
/// flags) never override; the `config` key itself is dropped.
fn resolve<A: Serialize, S: DeserializeOwned>(args: &A, config: Option<&PathBuf>) -> Result<S> {
    let mut base = match config {
        Some(path) => serde_json::from_slice::<serde_json::Value>(&std::fs::read(path)?)?,
        None => serde_json::json!({}),
    };
    if !base.is_object() {
        return Err(Error::Config("config file must hold a JSON object".into()));
    }
    let overlay = serde_json::to_value(args)?;
    if let (Some(b), Some(o)) = (base.as_object_mut(), overlay.as_object()) {
        for (k, v) in o {
            if k != "config" && !v.is_null() {
                b.insert(k.clone(), v.clone());
            }
        }
    }
    Ok(serde_json::from_value(base)?)
}

fn out_dir(explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .or_else(|| std::env::var_os("MELTWIN_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number {t:?} in list")))
        })
        .collect()
}

fn load_material(path: &Option<PathBuf>) -> Result<MaterialProps> {
    match path {
        Some(p) => MaterialProps::from_config_file(p),
        None => Ok(MaterialProps::default()),
    }
}

// ---------------------------------------------------------------- domain --

/// Flags shared by the solver-driving commands; defaults reproduce the full
/// production box.
#[derive(Debug, clap::Args, Serialize)]
pub struct DomainArgs {
    /// Track length in x (μm).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x_len_um: Option<f64>,
    /// Half width in y (μm).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    y_half_um: Option<f64>,
    /// Depth below the top surface (μm).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    depth_um: Option<f64>,
    /// Grid spacing (μm).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    spacing_um: Option<f64>,
    /// Laser start position (μm).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    laser_start_um: Option<f64>,
    /// Give-up position (μm).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    laser_end_um: Option<f64>,
    /// Beam 1/e² radius (μm).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beam_radius_um: Option<f64>,
    /// Powder layer thickness (μm).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    layer_um: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct DomainSpec {
    #[serde(default = "d_xlen")]
    x_len_um: f64,
    #[serde(default = "d_yhalf")]
    y_half_um: f64,
    #[serde(default = "d_depth")]
    depth_um: f64,
    #[serde(default = "d_spacing")]
    spacing_um: f64,
    #[serde(default = "d_lstart")]
    laser_start_um: f64,
    #[serde(default = "d_lend")]
    laser_end_um: f64,
    #[serde(default = "d_beam")]
    beam_radius_um: f64,
    #[serde(default = "d_layer")]
    layer_um: f64,
}

fn d_xlen() -> f64 {
    10_000.0
}
fn d_yhalf() -> f64 {
    1_000.0
}
fn d_depth() -> f64 {
    1_000.0
}
fn d_spacing() -> f64 {
    12.5
}
fn d_lstart() -> f64 {
    2_000.0
}
fn d_lend() -> f64 {
    8_000.0
}
fn d_beam() -> f64 {
    50.0
}
fn d_layer() -> f64 {
    30.0
}

impl DomainSpec {
    fn build(&self) -> SimDomain {
        let mut d = SimDomain::compact(
            self.x_len_um,
            self.y_half_um,
            self.depth_um,
            self.spacing_um,
            self.laser_start_um,
            self.laser_end_um,
        );
        d.beam_radius_um = self.beam_radius_um;
        d.layer_um = self.layer_um;
        d
    }
}

// -------------------------------------------------------------- simulate --

#[derive(Debug, clap::Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    power_w: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    speed_m_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_sub_k: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    /// Material property file (`key = value` lines).
    #[arg(long)]
    #[serde(skip)]
    material: Option<PathBuf>,
    /// Also store the full 3D snapshot.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    store_field: bool,
    #[command(flatten)]
    #[serde(flatten)]
    domain: DomainArgs,
    #[arg(long)]
    #[serde(skip)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct SimulateSpec {
    #[serde(default = "d_power")]
    power_w: f64,
    #[serde(default = "d_speed")]
    speed_m_s: f64,
    #[serde(default = "d_tsub")]
    t_sub_k: f64,
    #[serde(default = "d_alpha")]
    alpha: f64,
    #[serde(default)]
    store_field: bool,
    #[serde(flatten)]
    domain: DomainSpec,
}

fn d_power() -> f64 {
    300.0
}
fn d_speed() -> f64 {
    1.5
}
fn d_tsub() -> f64 {
    300.0
}
fn d_alpha() -> f64 {
    0.3
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let spec: SimulateSpec = resolve(&args, args.config.as_ref())?;
    let dir = out_dir(&args.out_dir);
    let props = load_material(&args.material)?;
    let domain = spec.domain.build();
    let params = ProcessParams::new(spec.power_w, spec.speed_m_s, spec.t_sub_k, spec.alpha);
    let mut sim = Simulator::new(props);
    let outcome = sim.run_to_steady(&params, &domain)?;
    let (xy, xz) = extract_sections(&outcome.field)?;
    std::fs::create_dir_all(&dir)?;
    if spec.store_field {
        outcome.field.save(&dir.join("field.bin"), &params, Some(&outcome.diag))?;
    }
    xy.save(&dir.join("section_xy.bin"), Some(&params))?;
    xz.save(&dir.join("section_xz.bin"), Some(&params))?;
    match features::extract_state(&xy, &xz, &SriConstants::default()) {
        Ok(state) => write_json(&dir.join("features.json"), &state)?,
        Err(Error::ColdPool(msg)) => {
            write_json(&dir.join("features.json"), &serde_json::json!({ "cold_pool": msg }))?
        }
        Err(e) => return Err(e),
    }
    write_json(&dir.join("diagnostics.json"), &outcome.diag)?;
    println!(
        "converged in {} steps: T_peak {:.1} K, L {:.1} μm, W {:.1} μm",
        outcome.diag.steps,
        outcome.diag.pool.t_peak_k,
        outcome.diag.pool.length_um,
        outcome.diag.pool.width_um
    );
    Ok(())
}

// ----------------------------------------------------------------- sweep --

#[derive(Debug, clap::Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Comma-separated powers (W).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    powers_w: Option<String>,
    /// Comma-separated speeds (m/s).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    speeds_m_s: Option<String>,
    /// Comma-separated substrate temperatures (K).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_subs_k: Option<String>,
    /// Comma-separated absorptivities.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alphas: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    workers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    store_fields: bool,
    #[arg(long)]
    #[serde(skip)]
    material: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    domain: DomainArgs,
    #[arg(long)]
    #[serde(skip)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct SweepSpec {
    #[serde(default = "d_sweep_powers")]
    powers_w: String,
    #[serde(default = "d_sweep_speeds")]
    speeds_m_s: String,
    #[serde(default = "d_sweep_tsubs")]
    t_subs_k: String,
    #[serde(default = "d_sweep_alphas")]
    alphas: String,
    #[serde(default = "d_one")]
    workers: usize,
    #[serde(default)]
    store_fields: bool,
    #[serde(flatten)]
    domain: DomainSpec,
}

fn d_sweep_powers() -> String {
    "100,200,300,400,500".into()
}
fn d_sweep_speeds() -> String {
    "0.5,1.0,1.5,2.0,2.5".into()
}
fn d_sweep_tsubs() -> String {
    "300,360,420,480,540".into()
}
fn d_sweep_alphas() -> String {
    "0.1,0.2,0.3,0.4,0.5,0.6".into()
}
fn d_one() -> usize {
    1
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let spec: SweepSpec = resolve(&args, args.config.as_ref())?;
    let dir = out_dir(&args.out_dir);
    let grid = SweepGrid {
        powers_w: parse_list(&spec.powers_w)?,
        speeds_m_s: parse_list(&spec.speeds_m_s)?,
        t_subs_k: parse_list(&spec.t_subs_k)?,
        alphas: parse_list(&spec.alphas)?,
    };
    let opts = SweepOptions {
        workers: spec.workers,
        store_fields: spec.store_fields,
        props: load_material(&args.material)?,
    };
    let domain = spec.domain.build();
    let (dataset, report) = dataset::run_sweep(&grid, &domain, &dir, &opts)?;
    // batch feature extraction over the fresh records (raw SI index scale)
    let consts = SriConstants::default();
    let rows: Vec<_> = dataset
        .records
        .iter()
        .map(|rec| {
            let state = features::extract_state(&rec.xy, &rec.xz, &consts).ok();
            (rec.params, state)
        })
        .collect();
    std::fs::write(dir.join("features.csv"), features::states_csv(&rows))?;
    println!(
        "sweep done: {} computed, {} skipped, {} failed; {} records in {}",
        report.computed,
        report.skipped,
        report.failed,
        dataset.records.len(),
        dir.display()
    );
    Ok(())
}

// ------------------------------------------------------------ synth-data --

#[derive(Debug, clap::Args, Serialize)]
pub struct SynthDataArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_train: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_val: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct SynthDataSpec {
    #[serde(default = "d_ntrain")]
    n_train: usize,
    #[serde(default = "d_nval")]
    n_val: usize,
    #[serde(default)]
    seed: u64,
}

fn d_ntrain() -> usize {
    200
}
fn d_nval() -> usize {
    20
}

pub fn synth_data(args: SynthDataArgs) -> Result<()> {
    let spec: SynthDataSpec = resolve(&args, args.config.as_ref())?;
    let dir = out_dir(&args.out_dir);
    let ds = dataset::synthetic_dataset(spec.n_train, spec.n_val, spec.seed)?;
    dataset::save_dataset(&ds, &dir, "synthetic")?;
    println!(
        "wrote {} records ({} train / {} val) to {}",
        ds.records.len(),
        ds.records.len() - ds.val_indices.len(),
        ds.val_indices.len(),
        dir.display()
    );
    Ok(())
}

// ----------------------------------------------------------------- train --

#[derive(Debug, clap::Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Dataset directory (from sweep or synth-data).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<PathBuf>,
    /// Which plane to learn: xy or xz.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    plane: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    modes0: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    modes1: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    proj_width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Stop early when validation relative L2 reaches this.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    early_stop: Option<f64>,
    /// Re-split the dataset with this many validation records if it has no
    /// stored split.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_val: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    split_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct TrainSpec {
    data: PathBuf,
    #[serde(default = "d_plane")]
    plane: String,
    #[serde(default)]
    epochs: Option<usize>,
    #[serde(default)]
    width: Option<usize>,
    #[serde(default)]
    modes0: Option<usize>,
    #[serde(default)]
    modes1: Option<usize>,
    #[serde(default)]
    proj_width: Option<usize>,
    #[serde(default)]
    learning_rate: Option<f64>,
    #[serde(default)]
    batch_size: Option<usize>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    early_stop: Option<f64>,
    #[serde(default)]
    n_val: Option<usize>,
    #[serde(default)]
    split_seed: Option<u64>,
}

fn d_plane() -> String {
    "xy".into()
}

pub fn train(args: TrainArgs) -> Result<()> {
    let spec: TrainSpec = resolve(&args, args.config.as_ref())?;
    let dir = out_dir(&args.out_dir);
    let kind = PlaneKind::parse(&spec.plane)?;
    let mut ds = dataset::load_dataset(&spec.data)?;
    if ds.val_indices.is_empty() || spec.n_val.is_some() {
        let n_val = spec.n_val.unwrap_or_else(|| (ds.records.len() / 10).max(1));
        ds.split(n_val, spec.split_seed.unwrap_or(spec.seed))?;
    }
    let (train_set, val_set) = ds.train_val(kind);
    let mut config = FnoConfig { seed: spec.seed, ..FnoConfig::default() };
    if let Some(v) = spec.epochs {
        config.epochs = v;
    }
    if let Some(v) = spec.width {
        config.width = v;
    }
    if let Some(v) = spec.modes0 {
        config.modes0 = v;
    }
    if let Some(v) = spec.modes1 {
        config.modes1 = v;
    }
    if let Some(v) = spec.proj_width {
        config.proj_width = v;
    }
    if let Some(v) = spec.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = spec.batch_size {
        config.batch_size = v;
    }
    config.early_stop_val_rel = spec.early_stop;
    let grid = PlaneGrid::chi(kind);
    let (model, report) = fno::train(&config, grid, ds.bounds, &train_set, &val_set)?;
    std::fs::create_dir_all(&dir)?;
    let model_path = dir.join(format!("model_{}.bin", kind.as_str()));
    model.save(&model_path)?;
    write_json(&dir.join(format!("train_report_{}.json", kind.as_str())), &report)?;
    std::fs::write(dir.join(format!("loss_curve_{}.csv", kind.as_str())), report.to_csv())?;
    println!(
        "trained {} epochs: best val rel L2 {:.4} at epoch {}; model at {}",
        report.epochs_run,
        report.best_val_rel_l2,
        report.best_epoch,
        model_path.display()
    );
    Ok(())
}

// --------------------------------------------------------------- predict --

#[derive(Debug, clap::Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    model_xy: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    model_xz: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    power_w: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    speed_m_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_sub_k: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    /// SRI unit-calibration prefactor for the features output.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa_sri: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct PredictSpec {
    #[serde(default = "d_power")]
    power_w: f64,
    #[serde(default = "d_speed")]
    speed_m_s: f64,
    #[serde(default = "d_tsub")]
    t_sub_k: f64,
    #[serde(default = "d_alpha")]
    alpha: f64,
    #[serde(default = "d_kappa")]
    kappa_sri: f64,
}

fn d_kappa() -> f64 {
    25.0
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let spec: PredictSpec = resolve(&args, args.config.as_ref())?;
    let dir = out_dir(&args.out_dir);
    if args.model_xy.is_none() && args.model_xz.is_none() {
        return Err(Error::Config("need --model-xy and/or --model-xz".into()));
    }
    let params = ProcessParams::new(spec.power_w, spec.speed_m_s, spec.t_sub_k, spec.alpha);
    std::fs::create_dir_all(&dir)?;
    let mut sections = Vec::new();
    for (path, kind) in [(&args.model_xy, PlaneKind::Xy), (&args.model_xz, PlaneKind::Xz)] {
        if let Some(p) = path {
            let model = SurrogateModel::load(p)?;
            if model.grid.kind != kind {
                return Err(Error::Config(format!(
                    "model at {} is a {} -plane model",
                    p.display(),
                    model.grid.kind.as_str()
                )));
            }
            let section = model.forward(&params)?;
            section.save(&dir.join(format!("prediction_{}.bin", kind.as_str())), Some(&params))?;
            println!(
                "{}: peak {:.1} K",
                kind.as_str(),
                features::peak_temperature(&[&section])
            );
            sections.push(section);
        }
    }
    if sections.len() == 2 {
        let consts = SriConstants::with_kappa(spec.kappa_sri);
        match features::extract_state(&sections[0], &sections[1], &consts) {
            Ok(state) => write_json(&dir.join("features.json"), &state)?,
            Err(Error::ColdPool(msg)) => {
                write_json(&dir.join("features.json"), &serde_json::json!({ "cold_pool": msg }))?
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- window --

fn load_pair(model_xy: &Option<PathBuf>, model_xz: &Option<PathBuf>) -> Result<(SurrogateModel, SurrogateModel)> {
    let xy_path = model_xy.as_ref().ok_or_else(|| Error::Config("need --model-xy".into()))?;
    let xz_path = model_xz.as_ref().ok_or_else(|| Error::Config("need --model-xz".into()))?;
    let xy = SurrogateModel::load(xy_path)?;
    let xz = SurrogateModel::load(xz_path)?;
    if xy.grid.kind != PlaneKind::Xy || xz.grid.kind != PlaneKind::Xz {
        return Err(Error::Config("model planes are swapped or wrong".into()));
    }
    Ok((xy, xz))
}

#[derive(Debug, clap::Args, Serialize)]
pub struct WindowArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    model_xy: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    model_xz: Option<PathBuf>,
    /// Grid as NPOWERxNSPEED, e.g. 40x25.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_sub_k: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa_sri: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct WindowSpec {
    #[serde(default = "d_window_grid")]
    grid: String,
    #[serde(default = "d_tsub")]
    t_sub_k: f64,
    #[serde(default = "d_alpha")]
    alpha: f64,
    #[serde(default = "d_kappa")]
    kappa_sri: f64,
}

fn d_window_grid() -> String {
    "40x25".into()
}

pub fn window(args: WindowArgs) -> Result<()> {
    let spec: WindowSpec = resolve(&args, args.config.as_ref())?;
    let dir = out_dir(&args.out_dir);
    let (n_power, n_speed) = spec
        .grid
        .split_once('x')
        .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
        .ok_or_else(|| Error::Config(format!("bad --grid {:?}, want e.g. 40x25", spec.grid)))?;
    let (xy, xz) = load_pair(&args.model_xy, &args.model_xz)?;
    let pair = SurrogatePair { xy: &xy, xz: &xz };
    let config = ControlConfig {
        sri: SriConstants::with_kappa(spec.kappa_sri),
        ..ControlConfig::default()
    };
    let w = control::process_window(pair, spec.t_sub_k, spec.alpha, n_power, n_speed, &config)?;
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("window.csv"), w.to_csv())?;
    println!("wrote {}x{} window to {}", n_power, n_speed, dir.join("window.csv").display());
    Ok(())
}

// -------------------------------------------------------------- optimize --

#[derive(Debug, clap::Args, Serialize)]
pub struct OptimizeArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    model_xy: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    model_xz: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    init_power_w: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    init_speed_m_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_sub_k: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    phi_weight: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_threshold_lo_k: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_threshold_hi_k: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    step_size: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa_sri: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct OptimizeSpec {
    #[serde(default = "d_power")]
    init_power_w: f64,
    #[serde(default = "d_opt_speed")]
    init_speed_m_s: f64,
    #[serde(default = "d_tsub")]
    t_sub_k: f64,
    #[serde(default = "d_alpha")]
    alpha: f64,
    #[serde(default)]
    phi_weight: Option<f64>,
    #[serde(default)]
    t_threshold_lo_k: Option<f64>,
    #[serde(default)]
    t_threshold_hi_k: Option<f64>,
    #[serde(default)]
    max_iters: Option<usize>,
    #[serde(default)]
    step_size: Option<f64>,
    #[serde(default = "d_kappa")]
    kappa_sri: f64,
}

fn d_opt_speed() -> f64 {
    1.65
}

pub fn optimize(args: OptimizeArgs) -> Result<()> {
    let spec: OptimizeSpec = resolve(&args, args.config.as_ref())?;
    let dir = out_dir(&args.out_dir);
    let (xy, xz) = load_pair(&args.model_xy, &args.model_xz)?;
    let pair = SurrogatePair { xy: &xy, xz: &xz };
    let mut config = ControlConfig {
        sri: SriConstants::with_kappa(spec.kappa_sri),
        ..ControlConfig::default()
    };
    if let Some(v) = spec.phi_weight {
        config.phi_weight = v;
    }
    if let Some(v) = spec.t_threshold_lo_k {
        config.t_threshold_lo_k = v;
    }
    if let Some(v) = spec.t_threshold_hi_k {
        config.t_threshold_hi_k = v;
    }
    if let Some(v) = spec.max_iters {
        config.max_iters = v;
    }
    if let Some(v) = spec.step_size {
        config.step_size = v;
    }
    let objective = SurrogateObjective::new(pair, spec.t_sub_k, spec.alpha, &config);
    let result = control::optimize_pv(&objective, spec.init_power_w, spec.init_speed_m_s, &config)?;
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("optimize.json"), &result)?;
    std::fs::write(dir.join("optimize_trace.csv"), result.trace_csv())?;
    println!(
        "optimum P = {:.1} W, V = {:.3} m/s: objective {:.4}, T_peak {:.0} K, Ra {:.2} μm",
        result.power_w, result.speed_m_s, result.objective, result.t_peak_k, result.ra_um
    );
    if let Some(reason) = &result.aborted {
        return Err(Error::NonFinite(format!("optimization aborted: {reason}")));
    }
    Ok(())
}

// ------------------------------------------------------------- calibrate --

#[derive(Debug, clap::Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    model_xy: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    model_xz: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    power_w: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    speed_m_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_sub_k: Option<f64>,
    /// Target length mean (μm); overrides --lengths.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    target_mean_um: Option<f64>,
    /// Target length standard deviation (μm).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    target_std_um: Option<f64>,
    /// CSV file of raw melt-pool-length observations (one value per line).
    #[arg(long)]
    #[serde(skip)]
    lengths: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    step_size: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// KL variant: standard or simplified.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kl_variant: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    init_mean: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    init_std: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct CalibrateSpec {
    power_w: f64,
    speed_m_s: f64,
    t_sub_k: f64,
    #[serde(default)]
    target_mean_um: Option<f64>,
    #[serde(default)]
    target_std_um: Option<f64>,
    #[serde(default = "d_cal_samples")]
    samples: usize,
    #[serde(default = "d_cal_epochs")]
    epochs: usize,
    #[serde(default = "d_cal_step")]
    step_size: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "d_kl")]
    kl_variant: String,
    #[serde(default = "d_init_mean")]
    init_mean: f64,
    #[serde(default = "d_init_std")]
    init_std: f64,
}

fn d_cal_samples() -> usize {
    100
}
fn d_cal_epochs() -> usize {
    100
}
fn d_cal_step() -> f64 {
    0.02
}
fn d_kl() -> String {
    "standard".into()
}
fn d_init_mean() -> f64 {
    0.35
}
fn d_init_std() -> f64 {
    0.06
}

pub fn calibrate(args: CalibrateArgs) -> Result<()> {
    let spec: CalibrateSpec = resolve(&args, args.config.as_ref())?;
    let dir = out_dir(&args.out_dir);
    let target = match (spec.target_mean_um, spec.target_std_um, &args.lengths) {
        (Some(mean), Some(std), _) => GaussianSpec::new(mean, std, UnitTag::Micrometers)?,
        (None, None, Some(path)) => {
            let body = std::fs::read_to_string(path)?;
            let samples: Vec<f64> = body
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| {
                    l.parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad length value {l:?}")))
                })
                .collect::<Result<_>>()?;
            calibrate::fit_gaussian(&samples, UnitTag::Micrometers)?
        }
        (None, None, None) => GaussianSpec::default_length_target(),
        _ => {
            return Err(Error::Config(
                "give both --target-mean-um and --target-std-um, or --lengths".into(),
            ))
        }
    };
    let variant = match spec.kl_variant.as_str() {
        "standard" => KlVariant::Standard,
        "simplified" => KlVariant::Simplified,
        other => return Err(Error::Config(format!("unknown KL variant {other:?}"))),
    };
    let (xy, xz) = load_pair(&args.model_xy, &args.model_xz)?;
    let pair = SurrogatePair { xy: &xy, xz: &xz };
    let model = SurrogateLength::new(pair, spec.power_w, spec.speed_m_s, spec.t_sub_k);
    let config = CalibConfig {
        samples: spec.samples,
        epochs: spec.epochs,
        step_size: spec.step_size,
        seed: spec.seed,
        variant,
        init: GaussianSpec::new(spec.init_mean, spec.init_std, UnitTag::Dimensionless)?,
    };
    let result = calibrate::calibrate_absorptivity(&target, &config, &model)?;
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("calibration.json"), &result)?;
    std::fs::write(dir.join("calibration_trace.csv"), result.trace_csv())?;
    println!(
        "inferred α ~ N({:.4}, {:.4}²), final KL {:.3e}",
        result.alpha.mean,
        result.alpha.sigma(),
        result.final_kl
    );
    Ok(())
}

// -------------------------------------------------------------------- uq --

#[derive(Debug, clap::Args, Serialize)]
pub struct UqArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    model_xy: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    model_xz: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    power_w: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    speed_m_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_sub_k: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_mean: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_std: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa_sri: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct UqSpec {
    #[serde(default = "d_power")]
    power_w: f64,
    #[serde(default = "d_opt_speed")]
    speed_m_s: f64,
    #[serde(default = "d_tsub")]
    t_sub_k: f64,
    #[serde(default = "d_uq_mean")]
    alpha_mean: f64,
    #[serde(default = "d_uq_std")]
    alpha_std: f64,
    #[serde(default = "d_cal_samples")]
    samples: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "d_kappa")]
    kappa_sri: f64,
}

fn d_uq_mean() -> f64 {
    0.3
}
fn d_uq_std() -> f64 {
    0.02
}

pub fn uq(args: UqArgs) -> Result<()> {
    let spec: UqSpec = resolve(&args, args.config.as_ref())?;
    let dir = out_dir(&args.out_dir);
    let (xy, xz) = load_pair(&args.model_xy, &args.model_xz)?;
    let pair = SurrogatePair { xy: &xy, xz: &xz };
    let alpha = GaussianSpec::new(spec.alpha_mean, spec.alpha_std, UnitTag::Dimensionless)?;
    let consts = SriConstants::with_kappa(spec.kappa_sri);
    let report = calibrate::propagate_uq(
        &alpha,
        spec.samples,
        spec.seed,
        spec.power_w,
        spec.speed_m_s,
        spec.t_sub_k,
        pair,
        &consts,
    )?;
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("uq.json"), &report)?;
    std::fs::write(dir.join("uq_histograms.csv"), report.histograms_csv())?;
    println!(
        "Ra: mean {:.2} μm, std {:.2}, p5 {:.2}, p95 {:.2} ({} samples, {} excluded)",
        report.ra_um.mean,
        report.ra_um.std,
        report.ra_um.p5,
        report.ra_um.p95,
        report.n_samples,
        report.n_excluded
    );
    Ok(())
}

// ------------------------------------------------------------------ demo --

#[derive(Debug, clap::Args, Serialize)]
pub struct DemoArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    model_xy: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    model_xz: Option<PathBuf>,
    /// Repeatable: on, off. Passing both compares control against none
    /// (which is also the default).
    #[arg(long)]
    #[serde(skip)]
    control: Vec<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    height_um: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    layers_per_step: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    init_power_w: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    init_speed_m_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_mean: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_std: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    uq_samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct DemoSpec {
    #[serde(default)]
    height_um: Option<f64>,
    #[serde(default)]
    layers_per_step: Option<usize>,
    #[serde(default)]
    init_power_w: Option<f64>,
    #[serde(default)]
    init_speed_m_s: Option<f64>,
    #[serde(default = "d_uq_mean")]
    alpha_mean: f64,
    #[serde(default = "d_uq_std")]
    alpha_std: f64,
    #[serde(default)]
    uq_samples: Option<usize>,
    #[serde(default)]
    seed: u64,
}

pub fn demo(args: DemoArgs) -> Result<()> {
    let spec: DemoSpec = resolve(&args, args.config.as_ref())?;
    let dir = out_dir(&args.out_dir);
    let mut control_enabled = true;
    for c in &args.control {
        match c.as_str() {
            "on" => control_enabled = true,
            "off" if args.control.iter().all(|x| x == "off") => control_enabled = false,
            "off" => {} // on+off together means: compare on vs off, the default
            other => return Err(Error::Config(format!("bad --control value {other:?}"))),
        }
    }
    let (xy, xz) = load_pair(&args.model_xy, &args.model_xz)?;
    let pair = SurrogatePair { xy: &xy, xz: &xz };
    let mut cfg = DemoConfig {
        control_enabled,
        alpha: GaussianSpec::new(spec.alpha_mean, spec.alpha_std, UnitTag::Dimensionless)?,
        seed: spec.seed,
        ..DemoConfig::default()
    };
    if let Some(v) = spec.height_um {
        cfg.height_um = v;
    }
    if let Some(v) = spec.layers_per_step {
        cfg.layers_per_step = v;
    }
    if let Some(v) = spec.init_power_w {
        cfg.init_power_w = v;
    }
    if let Some(v) = spec.init_speed_m_s {
        cfg.init_speed_m_s = v;
    }
    if let Some(v) = spec.uq_samples {
        cfg.uq_samples = v;
    }
    let outcome = run_demo(&cfg, pair)?;
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("trace_controlled.csv"), outcome.controlled.to_csv())?;
    std::fs::write(dir.join("trace_uncontrolled.csv"), outcome.uncontrolled.to_csv())?;
    write_json(&dir.join("comparison.json"), &outcome.summary)?;
    println!(
        "{} steps: mean Ra {:.2} μm controlled vs {:.2} μm uncontrolled; \
         max T_peak {:.0} K vs {:.0} K",
        outcome.summary.steps,
        outcome.summary.controlled_mean_ra_um,
        outcome.summary.uncontrolled_mean_ra_um,
        outcome.summary.controlled_max_t_peak_k,
        outcome.summary.uncontrolled_max_t_peak_k
    );
    Ok(())
}
