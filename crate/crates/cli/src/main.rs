use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use saddle_core::harness::{
    self, default_t_grid, lower_bound_certificates, separation_report, Algorithm, BoundStatus, ExperimentConfig,
    Metric,
};
use saddle_core::theory::{run_battery, BatteryConfig};
use saddle_core::ScliSpec;

#[derive(Parser)]
#[command(name = "saddle", version, about = "Saddle-point solver experiments and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for CSV and JSON outputs.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write a JSON series bundle for plotting.
    #[arg(long)]
    plot_data: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON or TOML config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Reject EG step sizes outside the bound's regime instead of warning.
        #[arg(long)]
        strict_stepsize: bool,
    },
    /// Run the lemma battery.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Trials for the matrix checks.
        #[arg(long, default_value_t = 10_000)]
        matrix_trials: usize,
        #[arg(long, default_value_t = 200)]
        polynomial_trials: usize,
        #[arg(long, default_value_t = 64)]
        decomposition_trials: usize,
    },
    /// Last-iterate versus averaged-iterate separation report for extragradient.
    Separation {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long = "lipschitz", short = 'L', default_value_t = 1.0)]
        l: f64,
        #[arg(long = "radius", short = 'D', default_value_t = 1.0)]
        d: f64,
        /// Defaults to 1/(30 L).
        #[arg(long)]
        eta: Option<f64>,
        /// Comma-separated horizons; defaults to 4 per decade over [10, 10⁴].
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<usize>>,
    },
    /// Worst-case ν certificates for a 1-SCLI spec file.
    LowerBound {
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long = "lipschitz", short = 'L', default_value_t = 1.0)]
        l: f64,
        #[arg(long = "radius", short = 'D', default_value_t = 1.0)]
        d: f64,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
        horizons: Vec<u64>,
        /// Dimension of the instance used to re-validate by simulation.
        #[arg(long, default_value_t = 2)]
        n: usize,
    },
    /// Write the trace at the config's largest horizon as CSV.
    Export {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Output file; stdout when absent and no --out-dir is given.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(path)
}

fn load_config(path: &Path, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.out_dir.is_some() {
        cfg.out_dir = common.out_dir.clone();
    }
    Ok(cfg)
}

fn run(config: &Path, common: &Common, strict: bool) -> Result<bool> {
    let mut cfg = load_config(config, common)?;
    if strict {
        if let Algorithm::Solver { strict_stepsize, .. } = &mut cfg.algorithm {
            *strict_stepsize = true;
        }
    }
    let result = harness::run_experiment(&cfg)?;
    let metrics = if cfg.metrics.is_empty() { Metric::ALL.to_vec() } else { cfg.metrics.clone() };
    if let Some(dir) = &cfg.out_dir {
        for p in result.write(dir, &metrics, common.plot_data)? {
            println!("wrote {}", p.display());
        }
    } else {
        print!("{}", result.losses_csv(&metrics)?);
    }
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    for (key, fit) in &result.fits {
        println!(
            "fit {key}: alpha = {:.4}, r2 = {:.4}, T in [{}, {}]",
            fit.exponent_alpha, fit.r_squared, fit.fit_range.0, fit.fit_range.1
        );
    }
    let failed: Vec<_> = result
        .rows
        .iter()
        .flat_map(|r| &r.bounds)
        .filter(|b| b.status == BoundStatus::Fail)
        .collect();
    for b in &failed {
        println!("bound {} failed at T = {}: observed {:e}, limit {:e}", b.kind.name(), b.t, b.observed, b.limit);
    }
    Ok(failed.is_empty())
}

fn verify(common: &Common, cfg: BatteryConfig) -> Result<bool> {
    let reports = run_battery(&cfg)?;
    let mut ok = true;
    for r in &reports {
        ok &= r.passed();
        println!(
            "{} {}: {} trials, {} violations, worst margin {:e}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.trials,
            r.violations,
            r.worst_margin
        );
    }
    if let Some(dir) = &common.out_dir {
        write_file(dir, "verify.json", &(serde_json::to_string_pretty(&reports)? + "\n"))?;
    }
    Ok(ok)
}

fn separation(common: &Common, n: usize, l: f64, d: f64, eta: f64, grid: &[usize]) -> Result<bool> {
    let rep = separation_report(n, l, d, eta, grid)?;
    println!("T,worst_nu,last_gap,averaged_gap,worst_sqrt_ham,lower,upper");
    for r in &rep.rows {
        println!(
            "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            r.t, r.nu_worst_gap, r.last_gap, r.averaged_gap, r.worst_sqrt_ham, r.lower_sqrt_ham, r.upper_sqrt_ham
        );
    }
    println!(
        "last alpha {:.4} (r2 {:.4}); averaged alpha {:.4} (r2 {:.4}); difference {:.4} ({}); bracket {}",
        rep.last_fit.exponent_alpha,
        rep.last_fit.r_squared,
        rep.averaged_fit.exponent_alpha,
        rep.averaged_fit.r_squared,
        rep.exponent_difference,
        if rep.difference_ok { "within [0.4, 0.6]" } else { "outside [0.4, 0.6]" },
        if rep.bracket_ok { "holds" } else { "violated" },
    );
    if let Some(dir) = &common.out_dir {
        write_file(dir, "separation.csv", &rep.to_csv()?)?;
        if common.plot_data {
            write_file(dir, "separation.json", &(serde_json::to_string_pretty(&rep)? + "\n"))?;
        }
    }
    Ok(rep.difference_ok && rep.bracket_ok)
}

fn lower_bound(spec: &Path, common: &Common, l: f64, d: f64, horizons: &[u64], n: usize) -> Result<bool> {
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec = ScliSpec::from_json(&text)?;
    let rows = lower_bound_certificates(&spec, l, d, horizons, n)?;
    let mut ok = true;
    for r in &rows {
        ok &= r.bound.status != BoundStatus::Fail;
        println!(
            "{} T = {}: nu* = {:.6e}, loss {:.6e}, limit {:.6e}, slack {:.3e}, revalidation {:.1e} [{}]",
            r.bound.kind.name(),
            r.bound.t,
            r.certificate.nu_star,
            r.bound.observed,
            r.bound.limit,
            r.bound.slack,
            r.revalidation_error,
            r.bound.status.name()
        );
    }
    if let Some(dir) = &common.out_dir {
        write_file(dir, "certificates.json", &(serde_json::to_string_pretty(&rows)? + "\n"))?;
    }
    Ok(ok)
}

fn export(config: &Path, common: &Common, out: Option<&Path>) -> Result<bool> {
    let cfg = load_config(config, common)?;
    let csv = harness::export_trace(&cfg)?.to_csv_string()?;
    match (out, &cfg.out_dir) {
        (Some(path), _) => {
            fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
        }
        (None, Some(dir)) => {
            let p = write_file(dir, &format!("{}_trace.csv", cfg.label()), &csv)?;
            println!("wrote {}", p.display());
        }
        (None, None) => print!("{csv}"),
    }
    Ok(true)
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            common,
            strict_stepsize,
        } => run(&config, &common, strict_stepsize),
        Command::Verify {
            common,
            matrix_trials,
            polynomial_trials,
            decomposition_trials,
        } => {
            let cfg = BatteryConfig {
                seed: common.seed.unwrap_or(0),
                matrix_trials,
                polynomial_trials,
                decomposition_trials,
            };
            verify(&common, cfg)
        }
        Command::Separation {
            common,
            n,
            l,
            d,
            eta,
            t_grid,
        } => {
            let grid = t_grid.unwrap_or_else(default_t_grid);
            separation(&common, n, l, d, eta.unwrap_or(1.0 / (30.0 * l)), &grid)
        }
        Command::LowerBound {
            spec,
            common,
            l,
            d,
            horizons,
            n,
        } => lower_bound(&spec, &common, l, d, &horizons, n),
        Command::Export { config, common, out } => export(&config, &common, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
