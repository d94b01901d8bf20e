//! `meltwin`: drive the melt-pool digital twin from the shell.
//!
//! Every subcommand accepts `--config <file.json>` holding the same keys as
//! its flags; explicit flags win over the file, compiled defaults fill the
//! rest. Outputs land in `--out-dir`, which falls back to $MELTWIN_OUT_DIR
//! and then to the current directory. Failures print a machine-readable JSON
//! error on stderr and exit nonzero.

mod cmds;

use clap::{Parser, Subcommand};
use meltwin_core::container::{FIELD_FORMAT_VERSION, MODEL_FORMAT_VERSION};

fn version_string() -> &'static str {
    static VERSION: std::sync::OnceLock<String> = std::sync::OnceLock::new();
    VERSION.get_or_init(|| {
        format!(
            "{} (field container v{FIELD_FORMAT_VERSION}, model container v{MODEL_FORMAT_VERSION})",
            env!("CARGO_PKG_VERSION")
        )
    })
}

#[derive(Parser)]
#[command(name = "meltwin", version = version_string(), about = "Melt-pool digital twin for laser powder-bed fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one conduction simulation to quasi-steady state and extract the
    /// section planes and melt-pool features.
    Simulate(cmds::SimulateArgs),
    /// Run a parameter sweep of simulations into a dataset directory
    /// (resumable: completed cells are skipped).
    Sweep(cmds::SweepArgs),
    /// Generate the closed-form synthetic dataset.
    SynthData(cmds::SynthDataArgs),
    /// Train a surrogate for one plane on a dataset directory.
    Train(cmds::TrainArgs),
    /// Forward a trained surrogate at one parameter point.
    Predict(cmds::PredictArgs),
    /// Roughness map over a power × speed grid.
    Window(cmds::WindowArgs),
    /// Gradient-descend (P, V) through the surrogates.
    Optimize(cmds::OptimizeArgs),
    /// Infer the absorptivity distribution from melt-pool-length statistics.
    Calibrate(cmds::CalibrateArgs),
    /// Monte-Carlo propagation of absorptivity uncertainty.
    Uq(cmds::UqArgs),
    /// Closed-loop virtual cone build, controlled vs uncontrolled.
    Demo(cmds::DemoArgs),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => cmds::simulate(a),
        Command::Sweep(a) => cmds::sweep(a),
        Command::SynthData(a) => cmds::synth_data(a),
        Command::Train(a) => cmds::train(a),
        Command::Predict(a) => cmds::predict(a),
        Command::Window(a) => cmds::window(a),
        Command::Optimize(a) => cmds::optimize(a),
        Command::Calibrate(a) => cmds::calibrate(a),
        Command::Uq(a) => cmds::uq(a),
        Command::Demo(a) => cmds::demo(a),
    };
    if let Err(err) = outcome {
        let payload = serde_json::json!({
            "error": err.to_string(),
            "kind": err.kind(),
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}
