//! Command layer of the `collabcal` binary: argument parsing, commands and their text output.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use collabcal::config::{RunConfig, SweepFile};
use collabcal::evaluation::{
    median, read_csv, run_sweep, run_trial_on_scene, summarize, write_csv, PipelineFlags, SweepSummary, TrialReport,
    TrialResult,
};
use collabcal::scenario::{generate_scene, Scene};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "collabcal",
    version,
    about = "Multi-agent pose and delay calibration on synthetic scenes"
)]
pub struct Cli {
    /// Output directory for results.
    #[arg(long, global = true, env = "COLLABCAL_OUT_DIR")]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene and write it as JSON.
    Generate {
        /// Run config TOML; built-in defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Scene file to write; defaults to `<out-dir>/scene.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one calibration trial, or a batch of seeds.
    Calibrate(CalibrateArgs),
    /// Run a noise/delay/flag grid and write per-trial CSV plus a JSON summary.
    Sweep {
        /// Run config TOML; built-in defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sweep grid TOML.
        #[arg(long)]
        grid: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Aggregate a sweep's trials into per-cell tables.
    Report {
        /// Directory holding `trials.csv`; defaults to the output directory.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Print machine-readable JSON instead of the text table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct CalibrateArgs {
    /// Run config TOML; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene JSON; generated from the config seed when absent.
    #[arg(long, conflicts_with = "batch")]
    scene: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip pose calibration and keep the reported poses.
    #[arg(long)]
    no_pcm: bool,
    /// Max-fuse feature maps instead of compressing and refining them.
    #[arg(long)]
    no_tcm: bool,
    /// Run this many consecutive seeds and print the median improvement ratio.
    #[arg(long)]
    batch: Option<usize>,
    /// Result JSON to write; defaults to `<out-dir>/trial.json` (or `batch.json`).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        anyhow::Error::from(e).context("writing output").into()
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let config = error.chain().any(|e| {
            e.downcast_ref::<collabcal::Error>()
                .is_some_and(collabcal::Error::is_config_error)
        });
        Failure {
            code: if config { EXIT_CONFIG } else { EXIT_RUNTIME },
            error,
        }
    }
}

fn config_failure(error: anyhow::Error) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => RunConfig::load(p)
            .with_context(|| format!("loading config {}", p.display()))
            .map_err(config_failure),
    }
}

fn out_dir(cli: &Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    cli.clone()
        .or_else(|| cfg.outputs.dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn io::Write) -> Result<(), Failure> {
    match cli.command {
        Command::Generate {
            ref config,
            seed,
            out: ref scene_path,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(cfg.seed);
            let scene = generate_scene(&cfg.scene, seed).context("generating scene")?;
            let path = scene_path
                .clone()
                .unwrap_or_else(|| out_dir(&cli.out_dir, &cfg).join("scene.json"));
            write_file(&path, &scene.to_json().map_err(anyhow::Error::from)?)?;
            writeln!(
                out,
                "seed {seed} objects {} agents {} -> {}",
                scene.objects.len(),
                scene.agents.len(),
                path.display()
            )?;
            Ok(())
        }
        Command::Calibrate(ref args) => calibrate(&cli, args, out),
        Command::Sweep {
            ref config,
            ref grid,
            jobs,
        } => {
            let cfg = load_config(config.as_deref())?;
            let grid = SweepFile::load(grid)
                .with_context(|| format!("loading grid {}", grid.display()))
                .map_err(config_failure)?;
            if jobs == 0 {
                return Err(config_failure(anyhow!("--jobs must be at least 1")));
            }
            let dir = out_dir(&cli.out_dir, &cfg);
            let rows = run_sweep(&cfg.pipeline(), &grid, jobs).context("running sweep")?;
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let csv_path = dir.join("trials.csv");
            let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
            write_csv(&rows, file).context("writing trials.csv")?;
            let summary = summarize(&rows);
            write_file(&dir.join("summary.json"), &to_json(&summary)?)?;
            writeln!(
                out,
                "{} trials over {} cells -> {}",
                rows.len(),
                summary.cells.len(),
                dir.display()
            )?;
            Ok(())
        }
        Command::Report { ref results, json } => {
            let dir = results
                .clone()
                .unwrap_or_else(|| out_dir(&cli.out_dir, &RunConfig::default()));
            let csv_path = dir.join("trials.csv");
            if !csv_path.exists() {
                return Err(anyhow!("no results at {}", csv_path.display()).into());
            }
            let rows = read_csv(&csv_path).with_context(|| format!("reading {}", csv_path.display()))?;
            if rows.is_empty() {
                return Err(anyhow!("{} has no trials", csv_path.display()).into());
            }
            let summary = summarize(&rows);
            let text = to_json(&summary)?;
            write_file(&dir.join("report.json"), &text)?;
            if json {
                writeln!(out, "{text}")?;
            } else {
                write!(out, "{}", render_report(&summary))?;
            }
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn calibrate(cli: &Cli, args: &CalibrateArgs, out: &mut dyn io::Write) -> Result<(), Failure> {
    let cfg = load_config(args.config.as_deref())?;
    let flags = PipelineFlags {
        pcm: !args.no_pcm,
        tcm: !args.no_tcm,
    };
    let seed = args.seed.unwrap_or(cfg.seed);
    let pipeline = cfg.pipeline();
    pipeline.validate().map_err(|e| config_failure(e.into()))?;
    let dir = out_dir(&cli.out_dir, &cfg);

    if let Some(n) = args.batch {
        if n == 0 {
            return Err(config_failure(anyhow!("--batch must be at least 1")));
        }
        let mut results: Vec<TrialResult> = Vec::with_capacity(n);
        for k in 0..n as u64 {
            let s = seed.wrapping_add(k);
            let scene = generate_scene(&pipeline.scene, s).context("generating scene")?;
            results.push(
                run_trial_on_scene(&scene, &pipeline, flags, s)
                    .context("running trial")?
                    .result,
            );
        }
        let ratios: Vec<f64> = results
            .iter()
            .filter(|r| r.trans_rmse_before > 0.0)
            .map(|r| r.trans_rmse_after / r.trans_rmse_before)
            .collect();
        let before: Vec<f64> = results.iter().map(|r| r.trans_rmse_before).collect();
        let after: Vec<f64> = results.iter().map(|r| r.trans_rmse_after).collect();
        writeln!(out, "trials {n} flags {}", flags.label())?;
        writeln!(
            out,
            "median translation RMSE before {:.4} m after {:.4} m",
            median(&before),
            median(&after)
        )?;
        writeln!(out, "median improvement ratio (after/before) {:.4}", median(&ratios))?;
        let path = args.out.clone().unwrap_or_else(|| dir.join("batch.json"));
        write_file(&path, &to_json(&results)?)?;
        return Ok(());
    }

    let scene = match &args.scene {
        Some(p) => Scene::load(p).with_context(|| format!("loading scene {}", p.display()))?,
        None => generate_scene(&pipeline.scene, seed).context("generating scene")?,
    };
    let report = run_trial_on_scene(&scene, &pipeline, flags, seed).context("running trial")?;
    write!(out, "{}", render_trial(&report))?;
    let path = args.out.clone().unwrap_or_else(|| dir.join("trial.json"));
    write_file(&path, &to_json(&report)?)?;
    Ok(())
}

fn render_trial(report: &TrialReport) -> String {
    let r = &report.result;
    let mut s = String::new();
    let _ = writeln!(s, "seed {} flags {}", r.seed, r.flags().label());
    let _ = writeln!(s, "agent  boxes  matched  before_m  before_deg  after_m  after_deg");
    for a in &report.agents {
        let _ = writeln!(
            s,
            "{:>5}  {:>5}  {:>7}  {:>8.3}  {:>10.3}  {:>7.3}  {:>9.3}",
            a.agent_id,
            a.boxes,
            a.matched,
            a.trans_error_before,
            a.rot_error_before_deg,
            a.trans_error_after,
            a.rot_error_after_deg
        );
    }
    let _ = writeln!(
        s,
        "matching precision {:.3} recall {:.3} F1 {:.3}",
        r.match_precision, r.match_recall, r.match_f1
    );
    let _ = writeln!(
        s,
        "pose RMSE before {:.3} m / {:.3} deg, after {:.3} m / {:.3} deg",
        r.trans_rmse_before, r.rot_rmse_before, r.trans_rmse_after, r.rot_rmse_after
    );
    let _ = writeln!(s, "alignment IoU before {:.3} after {:.3}", r.iou_before, r.iou_after);
    let _ = writeln!(
        s,
        "AP@0.5 {:.3} AP@0.7 {:.3} feature MSE {:.5}",
        r.ap50, r.ap70, r.feature_mse
    );
    match &report.solver {
        Some(sol) => {
            let _ = writeln!(
                s,
                "solver {:?} after {} iterations, cost {:.4e} -> {:.4e}",
                sol.termination, sol.iterations, sol.initial_cost, sol.final_cost
            );
        }
        None => {
            let _ = writeln!(s, "solver skipped");
        }
    }
    s
}

fn render_report(summary: &SweepSummary) -> String {
    const COLUMNS: [&str; 6] = [
        "iou_after",
        "trans_rmse_after",
        "match_f1",
        "ap50",
        "ap70",
        "feature_mse",
    ];
    let mut s = String::new();
    let _ = writeln!(
        s,
        "medians per cell; AP uses {} interpolation",
        summary.ap_interpolation
    );
    let _ = write!(s, "{:>8} {:>8} {:>7} {:>8}", "sigma_t", "sigma_r", "delay", "flags");
    for c in COLUMNS {
        let _ = write!(s, " {c:>16}");
    }
    let _ = writeln!(s, " {:>6}", "trials");
    for cell in &summary.cells {
        let flags = PipelineFlags {
            pcm: cell.pcm,
            tcm: cell.tcm,
        };
        let _ = write!(
            s,
            "{:>8.3} {:>8.3} {:>7.3} {:>8}",
            cell.sigma_t,
            cell.sigma_r,
            cell.delay,
            flags.label()
        );
        for c in COLUMNS {
            let _ = write!(s, " {:>16.5}", cell.metrics[c].median);
        }
        let _ = writeln!(s, " {:>6}", cell.trials);
    }
    s
}
