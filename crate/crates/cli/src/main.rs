use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use westervelt_core::config::{parse_levels, ExperimentConfig, ExperimentKind, Preset};
use westervelt_core::mesh::{channel_mesh, focus_mesh};
use westervelt_core::study::{run_channel, run_focus, run_mms};
use westervelt_core::Error;

/// Finite element studies for Westervelt's equation.
#[derive(Parser)]
#[command(name = "westervelt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence study in the 1D channel against a fine reference level.
    Channel(StudyArgs),
    /// Focused-ultrasound study: q(u_h) per level and the power-law fit.
    Focus(StudyArgs),
    /// Manufactured-solution verification of the linear solver.
    Mms(StudyArgs),
    /// Writes a mesh in the plain-text dump format.
    DumpMesh(DumpArgs),
}

#[derive(Args)]
struct StudyArgs {
    /// `key = value` configuration file applied over the built-in defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Parameter set: `paper` (full resolutions) or `desk` (reduced).
    #[arg(long)]
    preset: Option<String>,
    /// Levels, e.g. `1..4` or `1,2,5`.
    #[arg(long)]
    levels: Option<String>,
    /// Reference level (channel only).
    #[arg(long)]
    ref_level: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of time steps.
    #[arg(long)]
    tsteps: Option<usize>,
    /// Final time in seconds.
    #[arg(long)]
    final_time: Option<f64>,
    /// Snapshot stride in steps (0 disables snapshots).
    #[arg(long)]
    stride: Option<usize>,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeshKind {
    Channel,
    Focus,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(value_enum)]
    kind: MeshKind,
    #[arg(long, default_value_t = 1)]
    level: usize,
    /// Output file; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn build_config(kind: ExperimentKind, a: &StudyArgs) -> westervelt_core::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::defaults(kind);
    if let Some(p) = &a.preset {
        cfg.apply_preset(p.parse::<Preset>()?);
    }
    if let Some(path) = &a.config {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    if let Some(l) = &a.levels {
        cfg.levels = parse_levels(l)?;
    }
    if let Some(r) = a.ref_level {
        cfg.ref_level = r;
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    if let Some(n) = a.tsteps {
        cfg.time_steps = n;
    }
    if let Some(t) = a.final_time {
        cfg.final_time = t;
    }
    if let Some(s) = a.stride {
        cfg.snapshot_stride = s;
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 2,
        Error::DegenerateState { .. } => 4,
        _ => 3,
    }
}

fn study(kind: ExperimentKind, args: &StudyArgs) -> Result<(), Error> {
    let cfg = build_config(kind, args)?;
    let out = Some(cfg.out_dir.as_path());
    let mut stdout = io::stdout().lock();
    match kind {
        ExperimentKind::Channel => {
            let o = run_channel(&cfg, out)?;
            stdout.write_all(o.table.to_csv().as_bytes())?;
        }
        ExperimentKind::Focus => {
            let o = run_focus(&cfg, out)?;
            stdout.write_all(o.to_csv().as_bytes())?;
            if let Some(fit) = &o.fit {
                stdout.write_all(fit.to_csv().as_bytes())?;
            }
        }
        ExperimentKind::Mms => {
            let o = run_mms(&cfg, out)?;
            stdout.write_all(o.table.to_csv().as_bytes())?;
        }
    }
    Ok(())
}

fn dump(args: &DumpArgs) -> Result<(), Error> {
    let mesh = match args.kind {
        MeshKind::Channel => channel_mesh(args.level),
        MeshKind::Focus => focus_mesh(args.level),
    }
    .map_err(|e| Error::Config(e.to_string()))?;
    match &args.out {
        Some(p) => mesh.write_dump(io::BufWriter::new(fs::File::create(p)?))?,
        None => mesh.write_dump(io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Channel(a) => study(ExperimentKind::Channel, a),
        Command::Focus(a) => study(ExperimentKind::Focus, a),
        Command::Mms(a) => study(ExperimentKind::Mms, a),
        Command::DumpMesh(a) => dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
