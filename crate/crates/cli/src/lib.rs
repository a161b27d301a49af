//! Command-line front end for the testbench.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use vespo_core::checks;
use vespo_core::harness::{run_async_experiment, run_sync_experiment, RunSummary, TrainLog, FINAL_WINDOW};
use vespo_core::kernels::{self, AdvantageSign, LogWeight};
use vespo_core::{ClipParams, KernelParams, TrainConfig};

use crate::config::{parse_config, parse_config_str, parse_length_norm, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vespo-lab", version, about = "Importance-weight reshaping testbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// key = value config file with [policy] [kernel] [train] [async] sections
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configured seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// `section.key=value` or `key=value`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synchronous staleness-protocol run
    Train(Common),
    /// Two-clock asynchronous run
    AsyncTrain(Common),
    /// One run per axis value plus a summary table
    Sweep {
        #[command(flatten)]
        common: Common,
        /// staleness_N | c_pair | length_norm
        #[arg(long)]
        axis: String,
        /// Comma-separated values. c_pair accepts asymmetric, symmetric-pos, symmetric-neg or c1:c2/c1:c2
        #[arg(long)]
        values: String,
    },
    /// Property suites against independent oracles
    Verify {
        #[command(flatten)]
        common: Common,
        /// kernels | variational | gradient | harness-smoke; repeatable, default all
        #[arg(long = "suite")]
        suites: Vec<String>,
    },
    /// Kernel curves over a log-spaced weight grid
    KernelTable {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long, default_value_t = 0.01)]
        w_min: f64,
        #[arg(long, default_value_t = 10.0)]
        w_max: f64,
    },
    /// Summarize run directories under --out
    Report(Common),
}

/// Error carrying the exit code it should map to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_CONFIG, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: EXIT_CONFIG, error }
    }
}

pub fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("train.seed={seed}"));
    }
    match &common.config {
        Some(path) => parse_config(path, &overrides),
        None => parse_config_str("", &overrides),
    }
    .map_err(Failure::config)
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    subcommand: &'a str,
    config: &'a RunConfig,
}

fn echo_config(dir: &Path, subcommand: &str, cfg: &RunConfig) -> anyhow::Result<()> {
    write(dir, "config.echo.json", &to_json(&ConfigEcho { subcommand, config: cfg })?)
}

fn run_one(cfg: &RunConfig, asynchronous: bool) -> anyhow::Result<(TrainLog, f64)> {
    let started = Instant::now();
    let log = if asynchronous {
        run_async_experiment(&cfg.train, &cfg.async_cfg)?
    } else {
        run_sync_experiment(&cfg.train)?
    };
    Ok((log, started.elapsed().as_secs_f64()))
}

fn finish_run(dir: &Path, cfg: &RunConfig, log: &TrainLog, wall: f64, asynchronous: bool) -> anyhow::Result<RunSummary> {
    write(dir, "train_log.csv", &log.to_csv())?;
    let summary = RunSummary::new(log, &cfg.train, asynchronous.then_some(cfg.async_cfg), wall)?;
    write(dir, "summary.json", &to_json(&summary)?)?;
    Ok(summary)
}

fn cmd_train(common: &Common, asynchronous: bool) -> Result<i32, Failure> {
    let cfg = load_config(common)?;
    let name = if asynchronous { "async-train" } else { "train" };
    echo_config(&common.out, name, &cfg)?;
    let (log, wall) = run_one(&cfg, asynchronous)?;
    let summary = finish_run(&common.out, &cfg, &log, wall, asynchronous)?;
    println!(
        "{name}: {} steps, final {FINAL_WINDOW}-step reward {:.4}, eval reward {:.4}, diverged {}",
        summary.steps_completed, summary.final_reward, summary.eval_reward, summary.diverged
    );
    Ok(if summary.diverged { EXIT_DIVERGED } else { EXIT_OK })
}

/// Apply one sweep value to a base config.
pub fn apply_axis(base: &TrainConfig, axis: &str, value: &str) -> anyhow::Result<TrainConfig> {
    let mut cfg = base.clone();
    match axis {
        "staleness_N" => {
            cfg.staleness_n = value.parse().map_err(|_| anyhow!("staleness_N value '{value}' is not an integer"))?;
        }
        "c_pair" => cfg.kernel = parse_c_pair(value)?,
        "length_norm" => {
            cfg.length_norm = parse_length_norm(value).ok_or_else(|| anyhow!("unknown length_norm '{value}'"))?;
        }
        _ => bail!("unknown sweep axis '{axis}' (expected staleness_N, c_pair or length_norm)"),
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_c_pair(value: &str) -> anyhow::Result<KernelParams> {
    let d = KernelParams::default();
    Ok(match value {
        "asymmetric" => d,
        "symmetric-pos" => KernelParams::symmetric(d.c1_pos, d.c2_pos),
        "symmetric-neg" => KernelParams::symmetric(d.c1_neg, d.c2_neg),
        _ => {
            let (pos, neg) = value.split_once('/').ok_or_else(|| anyhow!("c_pair '{value}' is not c1:c2/c1:c2"))?;
            let pair = |s: &str| -> anyhow::Result<(f64, f64)> {
                let (a, b) = s.split_once(':').ok_or_else(|| anyhow!("'{s}' is not c1:c2"))?;
                Ok((a.trim().parse()?, b.trim().parse()?))
            };
            let (c1_pos, c2_pos) = pair(pos)?;
            let (c1_neg, c2_neg) = pair(neg)?;
            KernelParams { c1_pos, c2_pos, c1_neg, c2_neg }
        }
    })
}

fn cmd_sweep(common: &Common, axis: &str, values: &str) -> Result<i32, Failure> {
    let cfg = load_config(common)?;
    if !["staleness_N", "c_pair", "length_norm"].contains(&axis) {
        return Err(Failure::config(anyhow!("unknown sweep axis '{axis}'")));
    }
    echo_config(&common.out, "sweep", &cfg)?;
    let mut table = String::from("axis,value,final_reward,max_grad_norm,diverged,error\n");
    let mut any_diverged = false;
    for value in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
        let dir = common.out.join(format!("{axis}={}", value.replace(['/', ':'], "_")));
        let outcome = apply_axis(&cfg.train, axis, value).and_then(|train| {
            let child = RunConfig { train, ..cfg.clone() };
            echo_config(&dir, "sweep", &child)?;
            let (log, wall) = run_one(&child, false)?;
            finish_run(&dir, &child, &log, wall, false)
        });
        match outcome {
            Ok(s) => {
                any_diverged |= s.diverged;
                table.push_str(&format!("{axis},{value},{},{},{},\n", s.final_reward, s.max_grad_norm, s.diverged));
            }
            Err(e) => table.push_str(&format!("{axis},{value},,,,\"{}\"\n", e.to_string().replace('"', "'"))),
        }
    }
    write(&common.out, "sweep_summary.csv", &table)?;
    print!("{table}");
    Ok(if any_diverged { EXIT_DIVERGED } else { EXIT_OK })
}

fn cmd_verify(common: &Common, suites: &[String]) -> Result<i32, Failure> {
    let selected: Vec<String> = if suites.is_empty() { checks::SUITES.iter().map(|s| s.to_string()).collect() } else { suites.to_vec() };
    let mut rows = Vec::new();
    for s in &selected {
        let started = Instant::now();
        let suite_rows = checks::run_suite(s).ok_or_else(|| Failure::config(anyhow!("unknown suite '{s}'")))?;
        eprintln!("suite {s}: {} properties in {:.2}s", suite_rows.len(), started.elapsed().as_secs_f64());
        rows.extend(suite_rows);
    }
    let csv = checks::report_csv(&rows);
    write(&common.out, "verify_report.csv", &csv)?;
    for r in &rows {
        let status = if r.passed { "PASS" } else { "FAIL" };
        match &r.error {
            Some(e) => println!("{status} {}/{}: error: {e}", r.suite, r.property),
            None => println!("{status} {}/{} ({} instances, max error {:e}, tolerance {:e})", r.suite, r.property, r.instances, r.max_error, r.tolerance),
        }
    }
    Ok(if rows.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_VERIFY })
}

pub const KERNEL_TABLE_HEADER: &str = "w,phi_pos,phi_neg,f_pos,f_neg,phi_grpo_pos,phi_grpo_neg,phi_gspo_pre_clip";

/// Kernel curves at each grid weight; the GSPO column treats `w` as a sequence weight of length `length`.
pub fn kernel_table(params: &KernelParams, clip: ClipParams, length: usize, grid: &[f64]) -> anyhow::Result<String> {
    let mut out = String::from(KERNEL_TABLE_HEADER);
    out.push('\n');
    for &w in grid {
        if !(w > 0.0 && w.is_finite()) {
            bail!("kernel-table weights must be positive and finite, got {w}");
        }
        let lw = w.ln();
        let row = [
            w,
            kernels::phi_vespo(lw, params.c1_pos, params.c2_pos)?,
            kernels::phi_vespo(lw, params.c1_neg, params.c2_neg)?,
            kernels::surrogate_f(w, params.c1_pos, params.c2_pos)?,
            kernels::surrogate_f(w, params.c1_neg, params.c2_neg)?,
            kernels::phi_grpo_token(w, AdvantageSign::Positive, clip)?,
            kernels::phi_grpo_token(w, AdvantageSign::Negative, clip)?,
            kernels::gspo_pre_clip(LogWeight::new(lw, length)?),
        ];
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// `points` log-spaced weights from `w_min` to `w_max`; when 1 lies in range it is placed on the grid
/// exactly by snapping the nearest point.
pub fn log_grid(w_min: f64, w_max: f64, points: usize) -> anyhow::Result<Vec<f64>> {
    if !(w_min > 0.0 && w_max > w_min && points >= 2) {
        bail!("grid needs 0 < w_min < w_max and at least 2 points");
    }
    let (a, b) = (w_min.ln(), w_max.ln());
    let mut grid: Vec<f64> = (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect();
    grid[0] = w_min;
    grid[points - 1] = w_max;
    if w_min < 1.0 && w_max > 1.0 {
        let nearest = (0..points).min_by(|&i, &j| grid[i].ln().abs().total_cmp(&grid[j].ln().abs())).expect("non-empty");
        grid[nearest] = 1.0;
    }
    Ok(grid)
}

fn cmd_kernel_table(common: &Common, points: usize, w_min: f64, w_max: f64) -> Result<i32, Failure> {
    let cfg = load_config(common)?;
    let grid = log_grid(w_min, w_max, points).map_err(Failure::config)?;
    let clip = cfg.train.clip.unwrap_or_else(ClipParams::grpo);
    let table = kernel_table(&cfg.train.kernel, clip, cfg.train.max_len, &grid)?;
    write(&common.out, "kernel_table.csv", &table)?;
    println!("wrote {} rows to {}", grid.len(), common.out.join("kernel_table.csv").display());
    Ok(EXIT_OK)
}

fn summaries_under(dir: &Path) -> anyhow::Result<Vec<(PathBuf, serde_json::Value)>> {
    let mut found = Vec::new();
    let mut candidates = vec![dir.to_path_buf()];
    if let Ok(entries) = fs::read_dir(dir) {
        let mut subdirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
        subdirs.sort();
        candidates.extend(subdirs);
    }
    for c in candidates {
        let path = c.join("summary.json");
        if path.is_file() {
            let text = fs::read_to_string(&path)?;
            found.push((c, serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?));
        }
    }
    Ok(found)
}

fn cmd_report(common: &Common) -> Result<i32, Failure> {
    let found = summaries_under(&common.out)?;
    if found.is_empty() {
        return Err(Failure::config(anyhow!("no summary.json under {}", common.out.display())));
    }
    println!("{:<40} {:>10} {:>12} {:>8} {:>6} {:>9}", "run", "method", "final_reward", "eval", "N", "diverged");
    let mut diverged = false;
    for (path, v) in &found {
        let cfg = &v["config"];
        let d = v["diverged"].as_bool().unwrap_or(false);
        diverged |= d;
        println!(
            "{:<40} {:>10} {:>12.4} {:>8.4} {:>6} {:>9}",
            path.display(),
            cfg["method"].as_str().unwrap_or("?"),
            v["final_reward"].as_f64().unwrap_or(f64::NAN),
            v["eval_reward"].as_f64().unwrap_or(f64::NAN),
            cfg["staleness_n"].as_u64().unwrap_or(0),
            d
        );
    }
    Ok(if diverged { EXIT_DIVERGED } else { EXIT_OK })
}

pub fn run(cli: Cli) -> Result<i32, Failure> {
    match &cli.command {
        Command::Train(c) => cmd_train(c, false),
        Command::AsyncTrain(c) => cmd_train(c, true),
        Command::Sweep { common, axis, values } => cmd_sweep(common, axis, values),
        Command::Verify { common, suites } => cmd_verify(common, suites),
        Command::KernelTable { common, points, w_min, w_max } => cmd_kernel_table(common, *points, *w_min, *w_max),
        Command::Report(c) => cmd_report(c),
    }
}

/// Size the global worker pool from `VESPO_LAB_THREADS` when set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("VESPO_LAB_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow!("VESPO_LAB_THREADS must be a positive integer, got '{v}'"))?;
        if n == 0 {
            bail!("VESPO_LAB_THREADS must be ≥ 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_contains_one() {
        let g = log_grid(0.01, 10.0, 200).unwrap();
        assert_eq!(g.len(), 200);
        assert!(g.contains(&1.0));
        assert!(log_grid(0.0, 1.0, 10).is_err());
    }

    #[test]
    fn c_pairs() {
        assert_eq!(parse_c_pair("asymmetric").unwrap(), KernelParams::default());
        assert_eq!(parse_c_pair("symmetric-pos").unwrap(), KernelParams::symmetric(2.0, 3.0));
        assert_eq!(parse_c_pair("1:2/3:4").unwrap(), KernelParams { c1_pos: 1.0, c2_pos: 2.0, c1_neg: 3.0, c2_neg: 4.0 });
        assert!(parse_c_pair("1/2").is_err());
    }

    #[test]
    fn axis_values_are_validated() {
        let base = TrainConfig::default();
        assert_eq!(apply_axis(&base, "staleness_N", "8").unwrap().staleness_n, 8);
        assert!(apply_axis(&base, "staleness_N", "0").is_err());
        assert!(apply_axis(&base, "colour", "red").is_err());
        assert_eq!(apply_axis(&base, "length_norm", "sqrt").unwrap().length_norm, vespo_core::LengthNorm::Sqrt);
    }
}
