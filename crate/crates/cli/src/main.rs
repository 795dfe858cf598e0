//! `uavap`: run inspection missions from scenario files.
//!
//! Exit codes: 0 when every mission finished, 2 when one failed, 1 on a
//! configuration or I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use uavap::mission::{run_batch, run_mission, run_mission_observed, summarize, MissionReport};
use uavap::raster::GrayFrame;
use uavap::report::{format_report, format_summary, plot_series};
use uavap::scenario::{parse_scenario, Scenario};

#[derive(Parser)]
#[command(name = "uavap", version, about = "Quadrotor active-perception mission simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fly one mission and write report.txt.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write every perception frame as PGM under frames/.
        #[arg(long)]
        dump_frames: bool,
    },
    /// Fly N missions with consecutive seeds and write a summary.
    Batch {
        #[command(flatten)]
        common: Common,
        /// Number of runs; overrides the scenario.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Write the confidence, pixel-error and depth series as CSV.
    PlotData {
        #[command(flatten)]
        common: Common,
    },
    /// Write perception frames as PGM.
    DumpFrames {
        #[command(flatten)]
        common: Common,
        /// Keep every k-th frame.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Turbine,
    Tower,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML). Without it the preset is used.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Built-in scenario when no file is given.
    #[arg(long, value_enum, default_value = "turbine")]
    preset: Preset,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the scenario's `output_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Configuration and I/O problems, as opposed to mission failures.
struct Setup(anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Setup {
    fn from(e: E) -> Self {
        Setup(e.into())
    }
}

impl Common {
    fn load(&self) -> Result<(Scenario, PathBuf)> {
        let mut sc = match &self.scenario {
            Some(p) => parse_scenario(p)?,
            None => match self.preset {
                Preset::Turbine => Scenario::turbine(),
                Preset::Tower => Scenario::tower(),
            },
        };
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        let out = self
            .out
            .clone()
            .or_else(|| sc.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok((sc, out))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn frame_sink(dir: PathBuf, stride: usize) -> Result<impl FnMut(&GrayFrame) -> Result<()>> {
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let stride = stride.max(1);
    let mut n = 0usize;
    Ok(move |f: &GrayFrame| {
        let i = n;
        n += 1;
        if i % stride == 0 {
            let path = dir.join(format!("frame_{:05}.pgm", i / stride));
            f.write_pgm(&path).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    })
}

/// Run with frames written to `dir`; the first write error is reported after
/// the mission.
fn run_dumping(sc: &Scenario, dir: PathBuf, stride: usize) -> Result<MissionReport> {
    let mut sink = frame_sink(dir, stride)?;
    let mut err = None;
    let report = run_mission_observed(sc, &mut |f| {
        if err.is_none() {
            err = sink(f).err();
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

fn status(report: &MissionReport) -> bool {
    let height = report.height.map_or("none".to_string(), |h| format!("{:.3} m", h.object_height));
    println!(
        "{} seed {}: {} (height {height}, truth {:.3} m)",
        report.scenario,
        report.seed,
        report.outcome.name(),
        report.height_truth
    );
    if let uavap::mission::MissionPhase::Failed(reason) = &report.outcome {
        println!("  reason: {reason}");
    }
    report.succeeded()
}

fn execute(cmd: Command) -> std::result::Result<bool, Setup> {
    match cmd {
        Command::Run { common, dump_frames } => {
            let (sc, out) = common.load()?;
            let report = if dump_frames { run_dumping(&sc, out.join("frames"), 1)? } else { run_mission(&sc) };
            write(&out.join("report.txt"), &format_report(&report))?;
            Ok(status(&report))
        }
        Command::Batch { common, runs } => {
            let (mut sc, out) = common.load()?;
            if let Some(n) = runs {
                sc.runs = n;
            }
            sc.validate()?;
            let reports = run_batch(&sc);
            for r in &reports {
                write(&out.join(format!("report_seed{}.txt", r.seed)), &format_report(r))?;
            }
            let summary = summarize(&reports);
            let text = format_summary(&summary, &reports);
            write(&out.join("summary.txt"), &text)?;
            print!("{text}");
            Ok(reports.iter().all(MissionReport::succeeded))
        }
        Command::PlotData { common } => {
            let (sc, out) = common.load()?;
            let report = run_mission(&sc);
            for (name, text) in plot_series(&report) {
                write(&out.join(name), &text)?;
            }
            Ok(status(&report))
        }
        Command::DumpFrames { common, stride } => {
            let (sc, out) = common.load()?;
            let report = run_dumping(&sc, out.join("frames"), stride)?;
            Ok(status(&report))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(Setup(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
