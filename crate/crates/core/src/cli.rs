//! `epic-rc` command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_config, write_resolved, ExperimentConfig};
use crate::diffcore::ParamStore;
use crate::error::{Error, Result};
use crate::io::container::{reservoir_matrices, store_matrices};
use crate::io::{
    read_curve, run_stem, write_container, write_report, CurveHeader, CurveWriter, MaskSnapshotWriter,
    ReportContext,
};
use crate::plot::{render_svg, smooth, PlotOptions, Series};
use crate::trainer::{
    episodes_to_threshold, run_suite_with, ConvergenceReport, CurveRow, KindSummary, Run, RunConfig,
    RunOutcome, RunSink,
};

pub const OUT_DIR_ENV: &str = "EPIC_RC_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "epic-rc-out";

#[derive(Debug, Parser)]
#[command(name = "epic-rc", version, about = "Reservoir actor-critic experiments with trainable input masks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every (configuration, seed) pair of an experiment file.
    Run(RunArgs),
    /// Draw smoothed learning curves from curve CSVs into one SVG.
    Plot(PlotArgs),
    /// Recompute the convergence report from curve CSVs.
    Report(ReportArgs),
    /// Parse and check an experiment file without running it.
    ValidateConfig(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub config: PathBuf,
    /// Comma-separated seeds, replacing the file's `seeds`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Output directory; falls back to the config's `suite.out_dir`.
    #[arg(long, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
    /// Worker threads, overriding `suite.parallelism`.
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Resuming interrupted runs is not supported; the flag exists to fail loudly.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(required = true)]
    pub curves: Vec<PathBuf>,
    /// Trailing-mean window in episodes.
    #[arg(long, default_value_t = 100)]
    pub smooth: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "")]
    pub title: String,
    #[arg(long, default_value_t = 720)]
    pub width: u32,
    #[arg(long, default_value_t = 440)]
    pub height: u32,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Curve CSVs, or directories searched for `*.csv` curve files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the value recorded in each curve's metadata line.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub config: PathBuf,
    /// Print the resolved configuration.
    #[arg(long)]
    pub print: bool,
}

/// Maps errors to exit codes: 2 for configuration and usage problems, 1 otherwise.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Usage(_) => 2,
        _ => 1,
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Plot(a) => cmd_plot(&a).map(|_| true),
        Command::Report(a) => cmd_report(&a).map(|_| true),
        Command::ValidateConfig(a) => cmd_validate(&a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("epic-rc: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

struct FileSink {
    curve: CurveWriter,
    masks: MaskSnapshotWriter,
    stem: String,
    out: PathBuf,
    dump_reservoir: bool,
    dump_checkpoint: bool,
}

impl RunSink for FileSink {
    fn start(&mut self, run: &Run) -> Result<()> {
        if self.dump_reservoir {
            let p = self.out.join("reservoirs").join(format!("{}.bin", self.stem));
            write_container(&p, &reservoir_matrices(run.reservoir()))?;
        }
        Ok(())
    }

    fn row(&mut self, row: &CurveRow) -> Result<()> {
        self.curve.write_row(row)
    }

    fn mask_snapshot(&mut self, episode: usize, values: &[f64]) -> Result<()> {
        self.masks.write_snapshot(episode, values)
    }

    fn checkpoint(&mut self, store: &ParamStore) -> Result<()> {
        let p = self.out.join("checkpoints").join(format!("{}_last_good.bin", self.stem));
        write_container(&p, &store_matrices(store))
    }

    fn finish(&mut self, run: &Run) -> Result<()> {
        if self.dump_checkpoint {
            let p = self.out.join("checkpoints").join(format!("{}.bin", self.stem));
            write_container(&p, &store_matrices(run.store()))?;
        }
        Ok(())
    }
}

fn startup_error(path: &Path, e: std::io::Error) -> Error {
    Error::usage(format!("cannot write output directory {}: {e}", path.display()))
}

/// Runs the suite; `Ok(false)` when at least one run failed.
pub fn cmd_run(args: &RunArgs) -> Result<bool> {
    if args.resume {
        return Err(Error::usage(
            "--resume is not supported: curve files are complete prefixes but optimizer state is not saved; rerun into a fresh directory",
        ));
    }
    let mut exp = parse_config(&args.config)?;
    if let Some(seeds) = &args.seeds {
        if seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        exp.seeds = seeds.clone();
    }
    if let Some(p) = args.parallelism {
        exp.suite.parallelism = p;
    }
    let out = args
        .out
        .clone()
        .or_else(|| exp.suite.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let runs = exp.runs();
    let summary = execute(&exp, &runs, &out)?;
    for line in summary.lines {
        println!("{line}");
    }
    Ok(summary.failures == 0)
}

pub struct RunSummary {
    pub report: ConvergenceReport,
    pub failures: usize,
    pub lines: Vec<String>,
}

/// Runs `runs` and writes every artifact under `out`.
pub fn execute(exp: &ExperimentConfig, runs: &[RunConfig], out: &Path) -> Result<RunSummary> {
    for sub in ["curves", "masks", "checkpoints", "reservoirs"] {
        std::fs::create_dir_all(out.join(sub)).map_err(|e| startup_error(out, e))?;
    }
    write_resolved(exp, &out.join("config.resolved.toml")).map_err(|e| match e {
        Error::Io(io) => startup_error(out, io),
        other => other,
    })?;

    let sinks = |i: usize, seed: u64| -> Result<Box<dyn RunSink>> {
        let c = &runs[i];
        let stem = run_stem(i, c, seed);
        Ok(Box::new(FileSink {
            curve: CurveWriter::create(&out.join("curves").join(format!("{stem}.csv")), &CurveHeader::for_run(c, seed))?,
            masks: MaskSnapshotWriter::create(&out.join("masks").join(format!("{stem}_mask.csv")), c.input_dim())?,
            stem,
            out: out.to_path_buf(),
            dump_reservoir: exp.suite.dump_reservoir,
            dump_checkpoint: exp.suite.dump_checkpoint,
        }))
    };
    let results = run_in_pool(exp.suite.parallelism, || run_suite_with(runs, &sinks))?;

    let report = ConvergenceReport::new(runs, &results);
    let ctx = ReportContext {
        threshold: exp.convergence_threshold,
        eval_window: exp.eval_window,
        seeds_per_config: exp.seeds.len(),
        extra: vec![
            ("num_episodes".into(), exp.num_episodes.to_string()),
            ("radius_unit".into(), format!("{:?}", exp.reservoir.radius_unit).to_lowercase()),
            ("bptt".into(), format!("{:?}", exp.bptt).to_lowercase()),
            ("discount".into(), exp.agent.discount.to_string()),
        ],
    };
    write_report(&out.join("report.csv"), &ctx, &report)?;

    let mut lines = Vec::new();
    let mut failures = 0;
    for r in &results {
        if let RunOutcome::Failed(msg) = &r.outcome {
            failures += 1;
            lines.push(format!("run {} seed {} failed: {msg}", run_stem(r.config_index, &runs[r.config_index], r.seed), r.seed));
        }
    }
    for (s, speedup) in report.summaries.iter().zip(report.speedups()) {
        lines.push(format!(
            "{:<16} noise={:<3} converged {}/{} median={} range=[{}, {}] speedup={}",
            s.label,
            s.noise_dim,
            s.converged(),
            s.episodes.len() + s.failures.len(),
            fmt_opt(s.median),
            fmt_opt(s.min),
            fmt_opt(s.max),
            speedup.map_or("-".into(), |v| format!("{v:.2}")),
        ));
    }
    lines.push(format!("wrote {}", out.display()));
    Ok(RunSummary {
        report,
        failures,
        lines,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.0}"))
}

#[cfg(feature = "parallel")]
fn run_in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::usage(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
fn run_in_pool<T: Send>(_threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(f())
}

pub fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let mut series = Vec::new();
    for path in &args.curves {
        let file = read_curve(path)?;
        let points = smooth(&file.scores(), args.smooth).map_err(|e| match e {
            Error::Usage(m) => Error::usage(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let label = match &file.header {
            Some(h) => h.label(),
            None => path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
        };
        series.push(Series { label, points });
    }
    let svg = render_svg(
        &series,
        &PlotOptions {
            width: args.width,
            height: args.height,
            title: args.title.clone(),
        },
    )?;
    std::fs::write(&args.out, svg)?;
    Ok(())
}

fn collect_curves(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let dir = if p.join("curves").is_dir() { p.join("curves") } else { p.clone() };
            let mut found: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .filter(|f| !f.to_string_lossy().ends_with("_mask.csv"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::usage("no curve CSVs found"));
    }
    Ok(out)
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    // Grouped by (kind, u_len, noise_dim) in order of first appearance.
    let mut groups: BTreeMap<usize, (CurveHeader, Vec<(u64, Option<usize>)>)> = BTreeMap::new();
    let mut order: Vec<(crate::masks::MaskKind, usize, usize)> = Vec::new();
    let mut threshold_used = None;
    let mut window_used = None;
    for path in collect_curves(&args.inputs)? {
        let file = read_curve(&path)?;
        let header = file.header.clone().ok_or_else(|| Error::Parse {
            path: path.clone(),
            line: 1,
            msg: "missing `#` metadata line".into(),
        })?;
        let threshold = args.threshold.unwrap_or(header.threshold);
        let window = args.window.unwrap_or(header.eval_window);
        threshold_used.get_or_insert(threshold);
        window_used.get_or_insert(window);
        let eps = episodes_to_threshold(&file.scores(), threshold, window).map_err(|e| match e {
            Error::Usage(m) => Error::usage(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let key = (header.kind, header.u_len, header.noise_dim);
        let idx = match order.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                order.push(key);
                order.len() - 1
            }
        };
        groups
            .entry(idx)
            .or_insert_with(|| (header.clone(), Vec::new()))
            .1
            .push((header.seed, eps));
    }
    let summaries = groups
        .into_iter()
        .map(|(i, (h, eps))| KindSummary::new(i, h.kind, h.u_len, h.noise_dim, h.num_episodes, eps, Vec::new()))
        .collect();
    let report = ConvergenceReport { summaries };
    let seeds = report.summaries.iter().map(|s| s.episodes.len()).max().unwrap_or(0);
    let ctx = ReportContext {
        threshold: threshold_used.unwrap_or(0.9),
        eval_window: window_used.unwrap_or(100),
        seeds_per_config: seeds,
        extra: Vec::new(),
    };
    write_report(&args.out, &ctx, &report)
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let exp = parse_config(&args.config)?;
    if args.print {
        print!("{}", exp.resolved().to_toml());
    } else {
        let runs = exp.runs();
        println!(
            "ok: {} configuration(s) x {} seed(s), input width {}",
            runs.len(),
            exp.seeds.len(),
            runs[0].input_dim()
        );
    }
    Ok(())
}
