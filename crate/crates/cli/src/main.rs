use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use l96_core::demos::{series_demo, wave_demo};
use l96_core::export::{export_results, read_results_json, ExportFormat};
use l96_core::harness::{run_sweep, ExperimentConfig, InitMode, SweepMode, SweepResult};
use l96_core::model::ModelParams;

const DEFAULT_CACHE_DIR: &str = "cache";

#[derive(Parser)]
#[command(name = "l96", version, about = "Ensemble forecasting, inflation and stalking sweeps on the two-scale Lorenz '96 system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute (or load from the cache) the attractor climatology for each slow dimension.
    Climatology(Common),
    /// Forecasts with and without naive inflation on every hypersphere.
    ForecastSweep(SweepArgs),
    /// Stalking runs with and without naive inflation.
    StalkSweep(SweepArgs),
    /// Forecast or stalk sweep with the analog-cloud gate over the mu grid.
    TargetedSweep(SweepArgs),
    /// Twin runs showing how a single-site perturbation spreads around the ring.
    WaveDemo(WaveArgs),
    /// One slow variable over time for a grid of slow/fast dimensions.
    SeriesDemo(SeriesArgs),
    /// Convert a results.json file into CSV or JSON exports.
    Export(ExportArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base profile when no config file is given.
    #[arg(long, default_value = "desk", value_parser = ["desk", "full"])]
    profile: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hyperspheres: Option<usize>,
    /// Slow-variable count(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    slow: Option<Vec<usize>>,
    #[arg(long)]
    fast: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    phi: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    mu: Option<Vec<f64>>,
    /// Initial ensemble: structured or montecarlo.
    #[arg(long)]
    init: Option<String>,
    /// Climatology cache directory (default `cache`).
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::profile(&self.profile)?,
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(n) = self.hyperspheres {
            cfg.n_hyperspheres = n;
        }
        if let Some(s) = &self.slow {
            cfg.slow = s.clone();
        }
        if let Some(j) = self.fast {
            cfg.fast = j;
        }
        if let Some(p) = &self.phi {
            cfg.phi_grid = p.clone();
        }
        if let Some(m) = &self.mu {
            cfg.mu_grid = m.clone();
        }
        if let Some(i) = &self.init {
            cfg.init_mode = i.parse::<InitMode>()?;
        }
        if let Some(c) = &self.cache {
            cfg.cache_dir = Some(c.clone());
        }
        if cfg.cache_dir.is_none() {
            cfg.cache_dir = Some(PathBuf::from(DEFAULT_CACHE_DIR));
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// forecast or stalk (targeted sweeps only).
    #[arg(long, default_value = "forecast")]
    mode: String,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Export format: csv, json or both.
    #[arg(long, default_value = "both", value_parser = ["csv", "json", "both"])]
    format: String,
}

#[derive(Args)]
struct WaveArgs {
    #[arg(long, default_value_t = 40)]
    slow: usize,
    #[arg(long, default_value_t = 16)]
    fast: usize,
    /// Perturbed slow site, 1-based.
    #[arg(long, default_value_t = 13)]
    site: usize,
    #[arg(long, default_value_t = 5.0)]
    amount: f64,
    #[arg(long, default_value_t = 55.0)]
    days: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SeriesArgs {
    #[arg(long, value_delimiter = ',', default_value = "4,6,8")]
    slow: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "8,16,40")]
    fast: Vec<usize>,
    /// Slow variable to record, 1-based.
    #[arg(long, default_value_t = 3)]
    variable: usize,
    #[arg(long, default_value_t = 50.0)]
    days: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// results.json written by a sweep.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "csv", value_parser = ["csv", "json", "both"])]
    format: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn formats(name: &str) -> Vec<ExportFormat> {
    match name {
        "csv" => vec![ExportFormat::Csv],
        "json" => vec![ExportFormat::Json],
        _ => vec![ExportFormat::Csv, ExportFormat::Json],
    }
}

fn write_all(result: &SweepResult, format: &str, dir: &Path) -> Result<()> {
    for f in formats(format) {
        for p in export_results(result, f, dir)? {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn print_tallies(result: &SweepResult) {
    println!("slow  phi     mu    succ  help  indist  hurt  fail  quar  avg_days  applied/proposed");
    for t in &result.tallies {
        let mu = t.mu.map(|m| format!("{m:.2}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<5} {:<7} {:<5} {:<5} {:<5} {:<7} {:<5} {:<5} {:<5} {:<9.2} {}/{}",
            t.slow, t.phi, mu, t.succeeded, t.helped_only, t.indistinguishable, t.hurt_only, t.failed, t.quarantined, t.avg_useful_days, t.applied, t.proposed
        );
    }
}

fn sweep(args: &SweepArgs, mode: SweepMode, targeted: bool) -> Result<()> {
    let cfg = args.common.config()?;
    let result = run_sweep(&cfg, mode, targeted, args.jobs)?;
    print_tallies(&result);
    write_all(&result, &args.format, &cfg.out_dir)
}

fn climatology(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    for &slow in &cfg.slow {
        let c = cfg.climatology_for(slow)?;
        let mean_span = c.spread_scale();
        println!(
            "I={slow} J={}: tau {:.4}, mean span {:.4}, {} snapshots, digest {}",
            c.params.fast,
            c.tau,
            mean_span,
            c.snapshot_count(),
            &c.snapshot_digest()[..16]
        );
    }
    if let Some(dir) = &cfg.cache_dir {
        eprintln!("cache in {}", dir.display());
    }
    Ok(())
}

fn wave(a: &WaveArgs) -> Result<()> {
    let demo = wave_demo(&ModelParams::system(a.slow, a.fast), a.site, a.amount, a.days, a.seed)?;
    fs::create_dir_all(&a.out)?;
    let path = a.out.join("wave.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["time_days", "site", "unperturbed", "perturbed", "difference"])?;
    for p in &demo.profiles {
        for (i, d) in p.difference().iter().enumerate() {
            w.write_record([p.time_days.to_string(), (i + 1).to_string(), p.unperturbed[i].to_string(), p.perturbed[i].to_string(), d.to_string()])?;
        }
    }
    w.flush()?;
    fs::write(a.out.join("wave.json"), serde_json::to_string_pretty(&demo)?)?;
    println!("{} profiles written to {}", demo.profiles.len(), path.display());
    Ok(())
}

fn series(a: &SeriesArgs) -> Result<()> {
    let panels = series_demo(&a.slow, &a.fast, a.variable, a.days, a.seed)?;
    fs::create_dir_all(&a.out)?;
    let path = a.out.join("series_demo.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["slow", "fast", "time_days", "value"])?;
    for p in &panels {
        for (t, v) in p.times_days.iter().zip(&p.values) {
            w.write_record([p.slow.to_string(), p.fast.to_string(), t.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    fs::write(a.out.join("series_demo.json"), serde_json::to_string_pretty(&panels)?)?;
    println!("{} panels written to {}", panels.len(), path.display());
    Ok(())
}

fn export(a: &ExportArgs) -> Result<()> {
    let result = read_results_json(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    write_all(&result, &a.format, &a.out)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Climatology(c) => climatology(c),
        Command::ForecastSweep(a) => sweep(a, SweepMode::Forecast, false),
        Command::StalkSweep(a) => sweep(a, SweepMode::Stalk, false),
        Command::TargetedSweep(a) => {
            let mode: SweepMode = a.mode.parse()?;
            sweep(a, mode, true)
        }
        Command::WaveDemo(a) => wave(a),
        Command::SeriesDemo(a) => series(a),
        Command::Export(a) => export(a),
    }
}
