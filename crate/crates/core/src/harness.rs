//! Experiment grids over horizons, rate fits, bound checks and the
//! last-iterate versus averaged-iterate separation report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metrics::LossRecord;
use crate::problem::{BilinearInstance, HardInstanceParams};
use crate::scli::{self, check_consistency, LossKind, NuCertificate, ScliSpec};
use crate::solvers::{self, Method, SolverConfig, StepRule, Trace};

/// `per_decade` log-spaced integer horizons from `lo` to `hi` (both included).
pub fn log_t_grid(lo: usize, hi: usize, per_decade: usize) -> Vec<usize> {
    let (a, b) = ((lo.max(1) as f64).log10(), (hi.max(1) as f64).log10());
    let steps = ((b - a) * per_decade as f64).round() as usize;
    let mut out: Vec<usize> = (0..=steps)
        .map(|j| 10f64.powf(a + (b - a) * j as f64 / steps.max(1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

pub fn default_t_grid() -> Vec<usize> {
    log_t_grid(10, 10_000, 4)
}

/// Horizons below `10²` are treated as transient and excluded from fits by default.
pub const DEFAULT_FIT_RANGE: (usize, usize) = (100, 10_000);

/// Power law `loss ≈ C·T^α` fitted by least squares on `(log T, log loss)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent_alpha: f64,
    pub log_constant: f64,
    pub r_squared: f64,
    pub fit_range: (f64, f64),
    pub points: usize,
}

/// Fits all `(T, loss)` pairs; needs at least 5 points and positive losses.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "rate fit needs at least 5 points, got {}",
            points.len()
        )));
    }
    let bad: Vec<usize> = points
        .iter()
        .filter(|(_, v)| !(*v > 0.0 && v.is_finite()))
        .map(|(t, _)| *t as usize)
        .collect();
    if !bad.is_empty() {
        return Err(Error::NonPositiveLoss { horizons: bad });
    }
    let xs: Vec<f64> = points.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, v)| v.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all horizons are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let alpha = sxy / sxx;
    let c = my - alpha * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - c - alpha * x).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    let tmin = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let tmax = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(RateFit {
        exponent_alpha: alpha,
        log_constant: c,
        r_squared: r2,
        fit_range: (tmin, tmax),
        points: points.len(),
    })
}

/// [`fit_rate`] restricted to horizons in `[range.0, range.1]`.
pub fn fit_rate_in_range(points: &[(f64, f64)], range: (usize, usize)) -> Result<RateFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(t, _)| *t >= range.0 as f64 && *t <= range.1 as f64)
        .collect();
    fit_rate(&kept)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ham,
    SqrtHam,
    GapBilinear,
    GapResidual,
    GapLinearized,
    FuncLoss,
    DistToStar,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Ham,
        Metric::SqrtHam,
        Metric::GapBilinear,
        Metric::GapResidual,
        Metric::GapLinearized,
        Metric::FuncLoss,
        Metric::DistToStar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ham => "ham",
            Metric::SqrtHam => "sqrt_ham",
            Metric::GapBilinear => "gap_bilinear",
            Metric::GapResidual => "gap_residual",
            Metric::GapLinearized => "gap_linearized",
            Metric::FuncLoss => "func_loss",
            Metric::DistToStar => "dist_to_star",
        }
    }

    pub fn get(self, rec: &LossRecord) -> Option<f64> {
        match self {
            Metric::Ham => Some(rec.hamiltonian),
            Metric::SqrtHam => Some(rec.sqrt_hamiltonian),
            Metric::GapBilinear => rec.gap_bilinear,
            Metric::GapResidual => rec.gap_residual,
            Metric::GapLinearized => rec.gap_linearized,
            Metric::FuncLoss => rec.func_value_loss,
            Metric::DistToStar => rec.dist_to_star,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuRule {
    /// `ν = L/√T`.
    LOverSqrtT,
    WorstCaseHam,
    WorstCaseGap,
    WorstCaseFunc,
}

/// How the hard instance's `ν` is chosen for each horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NuChoice {
    Fixed(f64),
    Rule(NuRule),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub n: usize,
    pub nu: NuChoice,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "L", default = "one")]
    pub l: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Solver {
        method: Method,
        step: StepRule,
        #[serde(default)]
        strict_stepsize: bool,
        #[serde(default)]
        gap_radius: Option<f64>,
        #[serde(default)]
        inner_tol: Option<f64>,
    },
    Scli(ScliSpec),
}

impl Algorithm {
    /// The 1-SCLI form of the algorithm when one exists (constant-step EG or a spec).
    pub fn as_scli(&self) -> Option<ScliSpec> {
        match self {
            Algorithm::Scli(spec) => Some(spec.clone()),
            Algorithm::Solver {
                method: Method::Eg,
                step: StepRule::Constant { eta },
                ..
            } => Some(ScliSpec::extragradient(*eta)),
            _ => None,
        }
    }
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::SqrtHam, Metric::GapBilinear, Metric::GapResidual, Metric::FuncLoss]
}

fn default_fit_range() -> (usize, usize) {
    DEFAULT_FIT_RANGE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub instance: InstanceConfig,
    pub algorithm: Algorithm,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<usize>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub averaged: bool,
    #[serde(default = "default_fit_range")]
    pub fit_range: (usize, usize),
    #[serde(default)]
    pub bounds: Vec<BoundKind>,
    #[serde(default)]
    pub z0: Option<Vec<f64>>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(instance: InstanceConfig, algorithm: Algorithm) -> Self {
        Self {
            name: None,
            instance,
            algorithm,
            t_grid: default_t_grid(),
            metrics: default_metrics(),
            averaged: false,
            fit_range: DEFAULT_FIT_RANGE,
            bounds: Vec::new(),
            z0: None,
            out_dir: None,
            seed: 0,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads TOML for `.toml` files and JSON otherwise.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            _ => Self::from_json_str(&text),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() {
            return Err(invalid("t_grid", "must not be empty"));
        }
        if self.t_grid[0] < 1 {
            return Err(invalid("t_grid", "horizons must be at least 1"));
        }
        if self.t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("t_grid", "must be strictly increasing"));
        }
        if !(self.instance.l > 0.0) {
            return Err(invalid("L", "must be positive"));
        }
        if let NuChoice::Fixed(nu) = self.instance.nu {
            HardInstanceParams::new(self.instance.n, nu, self.instance.d).validate()?;
            if nu > self.instance.l * (1.0 + 1e-12) {
                return Err(invalid("nu", format!("must lie in (0, L], got {nu}")));
            }
        }
        if let NuChoice::Rule(r) = self.instance.nu {
            if r != NuRule::LOverSqrtT && self.algorithm.as_scli().is_none() {
                return Err(invalid("nu", "worst-case search needs a 1-SCLI algorithm"));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| "experiment".into())
    }

    /// `ν` used at horizon `t`.
    pub fn resolve_nu(&self, t: usize) -> Result<f64> {
        let inst = &self.instance;
        let kind = match inst.nu {
            NuChoice::Fixed(nu) => return Ok(nu),
            NuChoice::Rule(NuRule::LOverSqrtT) => return Ok(inst.l / (t as f64).sqrt()),
            NuChoice::Rule(NuRule::WorstCaseHam) => LossKind::Ham,
            NuChoice::Rule(NuRule::WorstCaseGap) => LossKind::Gap,
            NuChoice::Rule(NuRule::WorstCaseFunc) => LossKind::Func,
        };
        let spec = self
            .algorithm
            .as_scli()
            .ok_or_else(|| invalid("nu", "worst-case search needs a 1-SCLI algorithm"))?;
        Ok(scli::worst_case_nu_search(&spec, inst.l, inst.d, t as u64, kind)?.nu_star)
    }

    /// Runs the algorithm for `t` iterations on the instance for horizon `t`.
    pub fn run_point(&self, t: usize) -> Result<(f64, Trace)> {
        let nu = self.resolve_nu(t)?;
        let inst = BilinearInstance::hard(HardInstanceParams::new(self.instance.n, nu, self.instance.d))?;
        let z0 = match &self.z0 {
            Some(v) => DVector::from_column_slice(v),
            None => DVector::zeros(inst.n()),
        };
        let trace = match &self.algorithm {
            Algorithm::Solver {
                method,
                step,
                strict_stepsize,
                gap_radius,
                inner_tol,
            } => {
                let mut cfg = SolverConfig::new(*method, step.clone(), t).with_z0(&z0);
                cfg.strict_stepsize = *strict_stepsize;
                cfg.gap_radius = *gap_radius;
                cfg.inner_tol = *inner_tol;
                solvers::run(&inst.operator(), &cfg)?
            }
            Algorithm::Scli(spec) => scli::simulate_scli(spec, &inst, &z0, t)?,
        };
        let trace = if self.averaged {
            solvers::average_trace(&trace)?
        } else {
            trace
        };
        Ok((nu, trace))
    }
}

/// One horizon of an experiment.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentRow {
    pub t: usize,
    pub nu: Option<f64>,
    /// `"ok"`, or the error that stopped the run (divergence included).
    pub status: String,
    pub last: Option<LossRecord>,
    pub averaged: Option<LossRecord>,
    pub bounds: Vec<BoundRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentResult {
    pub name: String,
    pub seed: u64,
    pub rows: Vec<ExperimentRow>,
    /// Per metric: fit over last iterates, and over averaged iterates when requested.
    pub fits: BTreeMap<String, RateFit>,
    pub warnings: Vec<String>,
}

impl ExperimentResult {
    /// `true` unless some applicable bound check failed.
    pub fn all_bounds_pass(&self) -> bool {
        self.rows
            .iter()
            .flat_map(|r| &r.bounds)
            .all(|b| b.status != BoundStatus::Fail)
    }

    pub fn losses_csv(&self, metrics: &[Metric]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string(), "nu".into(), "status".into()];
        header.extend(metrics.iter().map(|m| m.name().to_string()));
        let any_avg = self.rows.iter().any(|r| r.averaged.is_some());
        if any_avg {
            header.extend(metrics.iter().map(|m| format!("avg_{}", m.name())));
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.t.to_string(),
                row.nu.map(|v| format!("{v:e}")).unwrap_or_default(),
                row.status.clone(),
            ];
            let cell = |r: &Option<LossRecord>, m: Metric| {
                r.as_ref().and_then(|r| m.get(r)).map(|v| format!("{v:e}")).unwrap_or_default()
            };
            rec.extend(metrics.iter().map(|m| cell(&row.last, *m)));
            if any_avg {
                rec.extend(metrics.iter().map(|m| cell(&row.averaged, *m)));
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn bounds_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "bound", "status", "observed", "limit", "slack", "note"])?;
        for row in &self.rows {
            for b in &row.bounds {
                w.write_record([
                    b.t.to_string(),
                    b.kind.name().to_string(),
                    b.status.name().to_string(),
                    format!("{:e}", b.observed),
                    format!("{:e}", b.limit),
                    format!("{:e}", b.slack),
                    b.note.clone(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// JSON bundle of `(T, value)` series for external plotting.
    pub fn plot_data(&self, metrics: &[Metric]) -> serde_json::Value {
        let mut series = serde_json::Map::new();
        for m in metrics {
            for (prefix, pick) in [("", false), ("avg_", true)] {
                let pts: Vec<(usize, f64)> = self
                    .rows
                    .iter()
                    .filter_map(|r| {
                        let rec = if pick { r.averaged.as_ref() } else { r.last.as_ref() }?;
                        Some((r.t, m.get(rec)?))
                    })
                    .collect();
                if !pts.is_empty() {
                    series.insert(format!("{prefix}{}", m.name()), serde_json::json!(pts));
                }
            }
        }
        serde_json::json!({ "name": self.name, "series": series, "fits": self.fits })
    }

    /// Writes `<name>_losses.csv`, `<name>_bounds.csv`, `<name>_fits.json` and, with
    /// `plot_data`, `<name>_series.json`. Returns the paths written.
    pub fn write(&self, dir: &Path, metrics: &[Metric], plot_data: bool) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |suffix: &str, body: String| -> Result<()> {
            let p = dir.join(format!("{}_{suffix}", self.name));
            fs::write(&p, body)?;
            written.push(p);
            Ok(())
        };
        put("losses.csv", self.losses_csv(metrics)?)?;
        put("bounds.csv", self.bounds_csv()?)?;
        put("fits.json", serde_json::to_string_pretty(&self.fits)? + "\n")?;
        if plot_data {
            put("series.json", serde_json::to_string_pretty(&self.plot_data(metrics))? + "\n")?;
        }
        Ok(written)
    }
}

/// Runs every horizon of the grid in parallel and gathers rows in grid order. Failed
/// runs (for example diverging GDA) become labelled rows.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let rows: Vec<ExperimentRow> = cfg
        .t_grid
        .par_iter()
        .map(|&t| match cfg.run_point(t) {
            Ok((nu, trace)) => {
                let ctx = BoundContext {
                    lipschitz: cfg.instance.l,
                };
                let bounds = cfg
                    .bounds
                    .iter()
                    .filter_map(|k| {
                        let check = check_trace_bound(&trace, *k, &ctx);
                        check.rows.last().cloned()
                    })
                    .collect();
                ExperimentRow {
                    t,
                    nu: Some(nu),
                    status: "ok".into(),
                    last: Some(trace.last_loss().clone()),
                    averaged: trace.averaged_losses.as_ref().and_then(|a| a.last().cloned()),
                    bounds,
                }
            }
            Err(e) => ExperimentRow {
                t,
                nu: cfg.resolve_nu(t).ok(),
                status: e.to_string(),
                last: None,
                averaged: None,
                bounds: Vec::new(),
            },
        })
        .collect();

    let mut warnings = Vec::new();
    let mut fits = BTreeMap::new();
    for m in &cfg.metrics {
        for (prefix, averaged) in [("", false), ("avg_", true)] {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter_map(|r| {
                    let rec = if averaged { r.averaged.as_ref() } else { r.last.as_ref() }?;
                    Some((r.t as f64, m.get(rec)?))
                })
                .collect();
            if pts.is_empty() {
                continue;
            }
            let key = format!("{prefix}{}", m.name());
            match fit_rate_in_range(&pts, cfg.fit_range) {
                Ok(fit) => {
                    fits.insert(key, fit);
                }
                Err(e) => {
                    let msg = format!("no fit for {key}: {e}");
                    warn!("{msg}");
                    warnings.push(msg);
                }
            }
        }
    }
    for r in rows.iter().filter(|r| r.status != "ok") {
        warnings.push(format!("T = {}: {}", r.t, r.status));
    }
    let result = ExperimentResult {
        name: cfg.label(),
        seed: cfg.seed,
        rows,
        fits,
        warnings,
    };
    Ok(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BoundKind {
    /// `‖F(z^T)‖ ≤ 2D/(η√T)` for constant-step EG.
    EgUb,
    /// `Gap(z^T) ≤ 2√2·D²/(η√T)` for constant-step EG.
    EgGapUb,
    /// `‖F(z^T)‖ ≤ D/(η√T)` for proximal point.
    PpUb,
    /// `Ham ≥ L²D²/(20Tk²)` for a worst-case certificate.
    ScliLbHam,
    /// `Gap ≥ LD²/(k√(20T))`.
    ScliLbGap,
    /// `max{loss(T), loss(2T)} ≥ LD²/(36k√T)` for function value.
    ScliLbFunc,
    /// `Gap(z^T) ≥ LD²/(4√T)` for EG with steps in `(0, 1/L)` at `ν = L/√T`.
    TimevaryingLb,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::EgUb => "EG_UB",
            BoundKind::EgGapUb => "EG_GAP_UB",
            BoundKind::PpUb => "PP_UB",
            BoundKind::ScliLbHam => "SCLI_LB_HAM",
            BoundKind::ScliLbGap => "SCLI_LB_GAP",
            BoundKind::ScliLbFunc => "SCLI_LB_FUNC",
            BoundKind::TimevaryingLb => "TIMEVARYING_LB",
        }
    }

    pub fn is_lower(self) -> bool {
        matches!(
            self,
            BoundKind::ScliLbHam | BoundKind::ScliLbGap | BoundKind::ScliLbFunc | BoundKind::TimevaryingLb
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Pass,
    Fail,
    NotApplicable,
}

impl BoundStatus {
    pub fn name(self) -> &'static str {
        match self {
            BoundStatus::Pass => "pass",
            BoundStatus::Fail => "fail",
            BoundStatus::NotApplicable => "not_applicable",
        }
    }
}

/// One horizon of a bound check. `slack` is `limit − observed` for upper bounds and
/// `observed − limit` for lower bounds; the check passes iff `slack ≥ 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundRow {
    pub kind: BoundKind,
    pub t: usize,
    pub status: BoundStatus,
    pub observed: f64,
    pub limit: f64,
    pub slack: f64,
    pub note: String,
}

impl BoundRow {
    fn measured(kind: BoundKind, t: usize, observed: f64, limit: f64) -> Self {
        let slack = if kind.is_lower() {
            observed - limit
        } else {
            limit - observed
        };
        Self {
            kind,
            t,
            status: if slack >= 0.0 { BoundStatus::Pass } else { BoundStatus::Fail },
            observed,
            limit,
            slack,
            note: String::new(),
        }
    }

    fn not_applicable(kind: BoundKind, t: usize, reason: impl Into<String>) -> Self {
        Self {
            kind,
            t,
            status: BoundStatus::NotApplicable,
            observed: f64::NAN,
            limit: f64::NAN,
            slack: f64::NAN,
            note: reason.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub kind: BoundKind,
    pub rows: Vec<BoundRow>,
}

impl BoundCheck {
    /// `Pass` iff every row passes, `NotApplicable` if no row applies.
    pub fn status(&self) -> BoundStatus {
        if self.rows.iter().any(|r| r.status == BoundStatus::Fail) {
            BoundStatus::Fail
        } else if self.rows.iter().any(|r| r.status == BoundStatus::Pass) {
            BoundStatus::Pass
        } else {
            BoundStatus::NotApplicable
        }
    }

    pub fn min_slack(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.status != BoundStatus::NotApplicable)
            .map(|r| r.slack)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundContext {
    pub lipschitz: f64,
}

fn constant_step(trace: &Trace) -> Option<f64> {
    let first = *trace.step_sizes.first()?;
    trace.step_sizes.iter().all(|&e| e == first).then_some(first)
}

/// Checks a trace-level bound at every `t ≥ 1` (upper bounds) or at the final horizon
/// (time-varying lower bound). Unmet hypotheses give a single `NotApplicable` row.
pub fn check_trace_bound(trace: &Trace, kind: BoundKind, ctx: &BoundContext) -> BoundCheck {
    let horizon = trace.horizon();
    let na = |reason: &str| BoundCheck {
        kind,
        rows: vec![BoundRow::not_applicable(kind, horizon, reason)],
    };
    if horizon == 0 {
        return na("empty trace");
    }
    let Some(d_start) = trace.hypotheses.start_distance else {
        return na("z* unknown");
    };
    let radius = trace.evaluator.region().map(|r| r.radius);
    match kind {
        BoundKind::EgUb | BoundKind::EgGapUb | BoundKind::PpUb => {
            let expected = if kind == BoundKind::PpUb { Method::Pp } else { Method::Eg };
            if trace.method != expected {
                return na("bound applies to a different method");
            }
            let Some(eta) = constant_step(trace) else {
                return na("step size is not constant");
            };
            if kind != BoundKind::PpUb && trace.hypotheses.eg_step_regime != Some(true) {
                return na("eta > min{5/(Lambda D), 1/(30 L)} or Lambda unknown");
            }
            let rows = (1..=horizon)
                .map(|t| {
                    let rec = &trace.losses[t];
                    let st = (t as f64).sqrt();
                    match kind {
                        BoundKind::EgUb => BoundRow::measured(kind, t, rec.sqrt_hamiltonian, 2.0 * d_start / (eta * st)),
                        BoundKind::PpUb => BoundRow::measured(kind, t, rec.sqrt_hamiltonian, d_start / (eta * st)),
                        _ => match (rec.gap_bilinear.or(rec.gap_linearized), radius) {
                            (Some(g), Some(r)) => BoundRow::measured(
                                kind,
                                t,
                                g,
                                2.0 * std::f64::consts::SQRT_2 * r * d_start / (eta * st),
                            ),
                            _ => BoundRow::not_applicable(kind, t, "no gap region"),
                        },
                    }
                })
                .collect();
            BoundCheck { kind, rows }
        }
        BoundKind::TimevaryingLb => {
            if !matches!(trace.method, Method::Eg | Method::EgTimevarying) {
                return na("bound applies to extragradient");
            }
            let l = ctx.lipschitz;
            if trace.step_sizes.iter().any(|&e| !(e > 0.0 && e < 1.0 / l)) {
                return na("some eta_t outside (0, 1/L)");
            }
            let Some(params) = trace.evaluator.operator().bilinear().and_then(|i| i.hard_params()) else {
                return na("not a hard instance");
            };
            let nu_t = l / (horizon as f64).sqrt();
            if (params.nu - nu_t).abs() > 1e-12 * nu_t {
                return na("nu != L/sqrt(T)");
            }
            if trace.iterates[0].iter().any(|v| *v != 0.0) {
                return na("z0 != 0");
            }
            let Some(gap) = trace.last_loss().gap_bilinear else {
                return na("no exact gap");
            };
            let d = params.d;
            BoundCheck {
                kind,
                rows: vec![BoundRow::measured(kind, horizon, gap, l * d * d / (4.0 * (horizon as f64).sqrt()))],
            }
        }
        _ => na("certificate bound; use check_certificate_bound"),
    }
}

/// Checks a 1-SCLI lower-bound certificate against its constant.
pub fn check_certificate_bound(cert: &NuCertificate, kind: BoundKind) -> BoundRow {
    let t = cert.t as usize;
    let expected = match kind {
        BoundKind::ScliLbHam => LossKind::Ham,
        BoundKind::ScliLbGap => LossKind::Gap,
        BoundKind::ScliLbFunc => LossKind::Func,
        _ => return BoundRow::not_applicable(kind, t, "not a certificate bound"),
    };
    if cert.loss != expected {
        return BoundRow::not_applicable(kind, t, "certificate is for a different loss");
    }
    if !check_consistency(&cert.spec).consistent {
        return BoundRow::not_applicable(kind, t, "spec is not consistent");
    }
    let (l, d, k, tf) = (cert.lipschitz, cert.d, cert.spec.k as f64, cert.t as f64);
    let limit = match kind {
        BoundKind::ScliLbHam => l * l * d * d / (20.0 * tf * k * k),
        BoundKind::ScliLbGap => l * d * d / (k * (20.0 * tf).sqrt()),
        _ => l * d * d / (36.0 * k * tf.sqrt()),
    };
    BoundRow::measured(kind, t, cert.loss_value, limit)
}

/// One horizon of the separation report.
#[derive(Clone, Debug, Serialize)]
pub struct SeparationRow {
    pub t: usize,
    /// Worst-case `ν` for the gap at horizon `T`.
    pub nu_worst_gap: f64,
    /// `D‖F(z^T)‖` re-simulated at `nu_worst_gap`.
    pub last_gap: f64,
    /// Exact ball gap at `nu_worst_gap`.
    pub last_gap_exact: f64,
    /// `D‖F(z^T)‖` at `ν = L/√T`.
    pub last_gap_l_over_sqrt_t: f64,
    /// `D‖F(z^T)‖` at fixed `ν = L`.
    pub last_gap_fixed_nu: f64,
    /// `D‖F(z̄^T)‖` at fixed `ν = L`.
    pub averaged_gap: f64,
    pub averaged_gap_exact: f64,
    /// Worst-case `ν` for `√Ham` at horizon `T` on `[L/(40Tk²), L]`.
    pub worst_nu: f64,
    /// `√Ham(z^T)` re-simulated at `worst_nu`.
    pub worst_sqrt_ham: f64,
    /// `LD/(k√(20T))`.
    pub lower_sqrt_ham: f64,
    /// `2D/(η√T)`.
    pub upper_sqrt_ham: f64,
    pub bracket_ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeparationReport {
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub eta: f64,
    pub rows: Vec<SeparationRow>,
    pub fit_range: (usize, usize),
    pub last_fit: RateFit,
    pub averaged_fit: RateFit,
    pub last_fit_exact: Option<RateFit>,
    pub averaged_fit_exact: Option<RateFit>,
    pub fixed_nu_last_fit: Option<RateFit>,
    pub l_over_sqrt_t_fit: Option<RateFit>,
    /// `last α − averaged α`.
    pub exponent_difference: f64,
    /// Whether the difference lies in `[0.4, 0.6]`.
    pub difference_ok: bool,
    pub bracket_ok: bool,
}

impl SeparationReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Side-by-side last-iterate (at the per-T worst-case `ν`) and averaged-iterate (at `ν = L`) gaps of
/// constant-step EG, with rate fits over `[10², 10⁴]` and the per-T bracket
/// `LD/(k√(20T)) ≤ √Ham(worst ν) ≤ 2D/(η√T)`.
pub fn separation_report(n: usize, l: f64, d: f64, eta: f64, t_grid: &[usize]) -> Result<SeparationReport> {
    separation_report_in_range(n, l, d, eta, t_grid, DEFAULT_FIT_RANGE)
}

pub fn separation_report_in_range(
    n: usize,
    l: f64,
    d: f64,
    eta: f64,
    t_grid: &[usize],
    fit_range: (usize, usize),
) -> Result<SeparationReport> {
    if !(eta > 0.0 && eta <= 1.0 / (30.0 * l) * (1.0 + 1e-12)) {
        return Err(invalid("eta", format!("need 0 < eta <= 1/(30 L), got {eta}")));
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) || t_grid.first().is_some_and(|&t| t == 0) {
        return Err(invalid("t_grid", "must be strictly increasing positive horizons"));
    }
    let in_range = t_grid.iter().filter(|&&t| t >= fit_range.0 && t <= fit_range.1).count();
    if in_range < 5 {
        return Err(Error::InsufficientData(format!(
            "separation needs at least 5 horizons in [{}, {}], got {in_range}",
            fit_range.0, fit_range.1
        )));
    }
    let t_max = *t_grid.last().expect("non-empty grid");
    let spec = ScliSpec::extragradient(eta);
    let k = spec.k as f64;

    // Averaged and fixed-ν last iterates come from one run at ν = L.
    let fixed = BilinearInstance::hard(HardInstanceParams::new(n, l, d))?;
    let fixed_trace = solvers::average_trace(&solvers::run_eg(&fixed.operator(), &SolverConfig::eg(eta, t_max))?)?;
    let fixed_avg = fixed_trace.averaged_losses.as_ref().expect("averaged");

    let rows: Vec<SeparationRow> = t_grid
        .par_iter()
        .map(|&t| -> Result<SeparationRow> {
            let run_at = |nu: f64| -> Result<Trace> {
                let inst = BilinearInstance::hard(HardInstanceParams::new(n, nu, d))?;
                solvers::run_eg(&inst.operator(), &SolverConfig::eg(eta, t))
            };
            let gap_cert = scli::worst_case_nu_search(&spec, l, d, t as u64, LossKind::Gap)?;
            let tr = run_at(gap_cert.nu_star)?;
            let last = tr.last_loss();
            let sqrt_t_trace = run_at(l / (t as f64).sqrt())?;

            let cert = scli::worst_case_nu_search(&spec, l, d, t as u64, LossKind::Ham)?;
            let worst_sqrt_ham = run_at(cert.nu_star)?.last_loss().sqrt_hamiltonian;
            let lower = l * d / (k * (20.0 * t as f64).sqrt());
            let upper = 2.0 * d / (eta * (t as f64).sqrt());

            Ok(SeparationRow {
                t,
                nu_worst_gap: gap_cert.nu_star,
                last_gap: last.gap_residual.expect("bilinear"),
                last_gap_exact: last.gap_bilinear.expect("bilinear"),
                last_gap_l_over_sqrt_t: sqrt_t_trace.last_loss().gap_residual.expect("bilinear"),
                last_gap_fixed_nu: fixed_trace.losses[t].gap_residual.expect("bilinear"),
                averaged_gap: fixed_avg[t].gap_residual.expect("bilinear"),
                averaged_gap_exact: fixed_avg[t].gap_bilinear.expect("bilinear"),
                worst_nu: cert.nu_star,
                worst_sqrt_ham,
                lower_sqrt_ham: lower,
                upper_sqrt_ham: upper,
                bracket_ok: lower <= worst_sqrt_ham && worst_sqrt_ham <= upper,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let series = |f: fn(&SeparationRow) -> f64| -> Vec<(f64, f64)> { rows.iter().map(|r| (r.t as f64, f(r))).collect() };
    let last_fit = fit_rate_in_range(&series(|r| r.last_gap), fit_range)?;
    let averaged_fit = fit_rate_in_range(&series(|r| r.averaged_gap), fit_range)?;
    let exponent_difference = last_fit.exponent_alpha - averaged_fit.exponent_alpha;
    Ok(SeparationReport {
        n,
        l,
        d,
        eta,
        last_fit_exact: fit_rate_in_range(&series(|r| r.last_gap_exact), fit_range).ok(),
        averaged_fit_exact: fit_rate_in_range(&series(|r| r.averaged_gap_exact), fit_range).ok(),
        fixed_nu_last_fit: fit_rate_in_range(&series(|r| r.last_gap_fixed_nu), fit_range).ok(),
        l_over_sqrt_t_fit: fit_rate_in_range(&series(|r| r.last_gap_l_over_sqrt_t), fit_range).ok(),
        bracket_ok: rows.iter().all(|r| r.bracket_ok),
        rows,
        fit_range,
        last_fit,
        averaged_fit,
        exponent_difference,
        difference_ok: (0.4..=0.6).contains(&exponent_difference),
    })
}

/// Runs the configuration at its largest horizon and returns the full trace.
pub fn export_trace(cfg: &ExperimentConfig) -> Result<Trace> {
    cfg.validate()?;
    let t = *cfg.t_grid.last().expect("validated grid is non-empty");
    Ok(cfg.run_point(t)?.1)
}

/// Worst-case certificates for `spec` at each horizon and loss, each re-validated by
/// simulation on an `n`-dimensional hard instance and checked against its bound.
#[derive(Clone, Debug, Serialize)]
pub struct CertificateRow {
    pub certificate: NuCertificate,
    pub revalidation_error: f64,
    pub bound: BoundRow,
}

pub fn lower_bound_certificates(
    spec: &ScliSpec,
    l: f64,
    d: f64,
    horizons: &[u64],
    n: usize,
) -> Result<Vec<CertificateRow>> {
    let mut out = Vec::new();
    for &t in horizons {
        for (loss, kind) in [
            (LossKind::Ham, BoundKind::ScliLbHam),
            (LossKind::Gap, BoundKind::ScliLbGap),
            (LossKind::Func, BoundKind::ScliLbFunc),
        ] {
            let cert = scli::worst_case_nu_search(spec, l, d, t, loss)?;
            let revalidation_error = cert.revalidate(n)?;
            let bound = check_certificate_bound(&cert, kind);
            out.push(CertificateRow {
                certificate: cert,
                revalidation_error,
                bound,
            });
        }
    }
    Ok(out)
}
