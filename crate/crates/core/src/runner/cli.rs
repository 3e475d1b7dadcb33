//! Command-line front end: `synth`, `train`, `desmoke`, `eval`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::adam::AdamConfig;
use super::desmoke::{desmoke, DesmokeOptions};
use super::train::{train, TrainConfig};
use crate::datakit::{build_synthetic_dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::netblocks::{Preset, UNetConfig};
use crate::quality::evaluate_pairs;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ulw", version, about = "Learnable Wiener filter + U-Net desmoking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate paired synthetic smoky/clean images.
    Synth(SynthArgs),
    /// Train a model on a paired dataset.
    Train(TrainArgs),
    /// Run a trained model over a directory of images.
    Desmoke(DesmokeArgs),
    /// Score predictions against targets and write a CSV report.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Directory of clean frames; procedural textures when omitted.
    #[arg(long)]
    clean_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Per-pair smoke density range `LO:HI`.
    #[arg(long, default_value = "0.3:0.7")]
    density: String,
    /// Index of the first pair (ids and sub-seeds continue from it).
    #[arg(long, default_value_t = 0)]
    start_index: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    preset: String,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = UNetConfig::default().depth)]
    depth: usize,
    #[arg(long, default_value_t = UNetConfig::default().base_channels)]
    base_channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    /// Perceptual-extractor weights in the checkpoint container format.
    #[arg(long)]
    extractor: Option<PathBuf>,
    /// Also checkpoint every N steps.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Debug, Args)]
struct DesmokeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Resample inputs whose size the network cannot take.
    #[arg(long)]
    resize: bool,
    /// Write a smoky / output / clean comparison grid PNG here.
    #[arg(long)]
    dump_grid: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::Usage(format!("expected LO:HI, got `{s}`"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    let io = |e: std::io::Error| Error::io("<stdout>", e);
    match cmd {
        Command::Synth(a) => {
            let cfg = SynthConfig {
                clean_dir: a.clean_dir,
                count: a.count,
                size: a.size,
                seed: a.seed,
                density: parse_range(&a.density)?,
                start_index: a.start_index,
            };
            let m = build_synthetic_dataset(&cfg, &a.out)?;
            writeln!(out, "event=synth out={} pairs={} size={} seed={}", a.out.display(), m.rows.len(), a.size, a.seed).map_err(io)
        }
        Command::Train(a) => {
            let preset: Preset = a.preset.parse()?;
            let mut cfg = TrainConfig::new(preset, a.data, a.out);
            let d = cfg.weights;
            cfg.weights = (a.alpha.unwrap_or(d.0), a.beta.unwrap_or(d.1), a.gamma.unwrap_or(d.2));
            cfg.adam = AdamConfig { lr: a.lr, ..AdamConfig::default() };
            cfg.steps = a.steps;
            cfg.batch_size = a.batch;
            cfg.unet = UNetConfig { depth: a.depth, base_channels: a.base_channels, ..UNetConfig::default() };
            cfg.seed = a.seed;
            cfg.image_size = a.image_size;
            cfg.extractor = a.extractor;
            cfg.checkpoint_every = a.checkpoint_every;
            let o = train(&cfg, out)?;
            writeln!(out, "event=done initial_total={} final_total={}", o.initial.total, o.last.total).map_err(io)
        }
        Command::Desmoke(a) => {
            let opts = DesmokeOptions { resize: a.resize, dump_grid: a.dump_grid };
            let s = desmoke(&a.ckpt, &a.input, &a.out, &opts, out)?;
            writeln!(out, "event=done written={}", s.written.len()).map_err(io)
        }
        Command::Eval(a) => {
            let report = evaluate_pairs(&a.pred, &a.target)?;
            report.write_csv(&a.report)?;
            let mut line = format!("event=eval report={} pairs={} skipped={}", a.report.display(), report.rows.len(), report.skipped.len());
            if let Some(m) = report.mean() {
                line += &format!(
                    " ssim_mean={} psnr_db_mean={} mse_mean={} ciede2000_mean={}",
                    fmt_metric(m[0]),
                    fmt_metric(m[1]),
                    fmt_metric(m[2]),
                    fmt_metric(m[3])
                );
            }
            writeln!(out, "{line}").map_err(io)
        }
    }
}

/// Exit status for an error: configuration and usage mistakes are 1,
/// everything that goes wrong while running is 2.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Usage(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (including the program name) and runs the command, writing
/// logs to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            let _ = writeln!(err, "event=error code={code} message={e:?}", e = e.to_string());
            code
        }
    }
}
