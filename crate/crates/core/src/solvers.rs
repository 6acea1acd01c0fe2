//! Extragradient, proximal point, simultaneous GDA and iterate averaging.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::metrics::{LossEvaluator, LossRecord};
use crate::problem::{BilinearInstance, OperatorHandle};

/// Iterates with a coordinate above this magnitude count as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Eg,
    EgTimevarying,
    Pp,
    Gda,
    /// Traces produced by `scli::simulate_scli`.
    Scli,
}

/// Step size `η_t` as a function of the iteration index `t` (0-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepRule {
    Constant { eta: f64 },
    /// `η_t = eta0 / √(t + shift)`.
    InvSqrt { eta0: f64, shift: f64 },
    /// `η_t = eta0 · ratio^t`.
    Geometric { eta0: f64, ratio: f64 },
    /// Explicit list, one entry per iteration.
    Schedule { etas: Vec<f64> },
}

impl StepRule {
    pub fn constant(eta: f64) -> Self {
        StepRule::Constant { eta }
    }

    pub fn eta_at(&self, t: usize) -> Option<f64> {
        match self {
            StepRule::Constant { eta } => Some(*eta),
            StepRule::InvSqrt { eta0, shift } => Some(eta0 / (t as f64 + shift).sqrt()),
            StepRule::Geometric { eta0, ratio } => Some(eta0 * ratio.powi(t as i32)),
            StepRule::Schedule { etas } => etas.get(t).copied(),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            StepRule::Constant { eta } => Some(*eta),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub step: StepRule,
    /// Number of iterations `T`.
    pub iterations: usize,
    /// Starting point; the origin when absent.
    #[serde(default)]
    pub z0: Option<Vec<f64>>,
    #[serde(default)]
    pub record_halfsteps: bool,
    /// Turn the EG step-size regime check into a hard error.
    #[serde(default)]
    pub strict_stepsize: bool,
    /// Overrides the gap-ball radius.
    #[serde(default)]
    pub gap_radius: Option<f64>,
    #[serde(default)]
    pub inner_tol: Option<f64>,
    #[serde(default = "default_inner_max_iters")]
    pub inner_max_iters: usize,
}

fn default_inner_max_iters() -> usize {
    10_000
}

impl SolverConfig {
    pub fn new(method: Method, step: StepRule, iterations: usize) -> Self {
        Self {
            method,
            step,
            iterations,
            z0: None,
            record_halfsteps: false,
            strict_stepsize: false,
            gap_radius: None,
            inner_tol: None,
            inner_max_iters: default_inner_max_iters(),
        }
    }

    pub fn eg(eta: f64, iterations: usize) -> Self {
        Self::new(Method::Eg, StepRule::constant(eta), iterations)
    }

    pub fn eg_timevarying(step: StepRule, iterations: usize) -> Self {
        Self::new(Method::EgTimevarying, step, iterations)
    }

    pub fn pp(eta: f64, iterations: usize) -> Self {
        Self::new(Method::Pp, StepRule::constant(eta), iterations)
    }

    pub fn gda(eta: f64, iterations: usize) -> Self {
        Self::new(Method::Gda, StepRule::constant(eta), iterations)
    }

    pub fn with_z0(mut self, z0: &DVector<f64>) -> Self {
        self.z0 = Some(z0.iter().copied().collect());
        self
    }

    pub fn with_halfsteps(mut self) -> Self {
        self.record_halfsteps = true;
        self
    }

    pub fn strict(mut self) -> Self {
        self.strict_stepsize = true;
        self
    }

    pub fn with_gap_radius(mut self, radius: f64) -> Self {
        self.gap_radius = Some(radius);
        self
    }

    pub fn with_inner(mut self, tol: f64, max_iters: usize) -> Self {
        self.inner_tol = Some(tol);
        self.inner_max_iters = max_iters;
        self
    }

    fn start(&self, dim: usize) -> Result<DVector<f64>> {
        match &self.z0 {
            None => Ok(DVector::zeros(dim)),
            Some(v) if v.len() == dim => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(invalid("z0", "entries must be finite"));
                }
                Ok(DVector::from_column_slice(v))
            }
            Some(v) => Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            }),
        }
    }

    fn constant_eta(&self) -> Result<f64> {
        let eta = self
            .step
            .as_constant()
            .ok_or_else(|| invalid("step", "this method needs a constant step size"))?;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid("eta", format!("must be positive, got {eta}")));
        }
        Ok(eta)
    }
}

/// Hypotheses of the upper bounds as observed for one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHypotheses {
    /// `‖z⁰ − z*‖` when `z*` is known.
    pub start_distance: Option<f64>,
    /// Whether `η ≤ min{5/(ΛD'), 1/(30L)}` holds (EG only).
    pub eg_step_regime: Option<bool>,
}

/// Full output of a solver run.
#[derive(Clone, Debug)]
pub struct Trace {
    pub method: Method,
    pub split: usize,
    pub iterates: Vec<DVector<f64>>,
    pub halfsteps: Option<Vec<DVector<f64>>>,
    pub losses: Vec<LossRecord>,
    pub averaged_iterates: Option<Vec<DVector<f64>>>,
    pub averaged_losses: Option<Vec<LossRecord>>,
    pub inner_iterations: Option<Vec<usize>>,
    /// `η_t` used at step `t → t+1`.
    pub step_sizes: Vec<f64>,
    pub hypotheses: RunHypotheses,
    pub evaluator: LossEvaluator,
}

impl Trace {
    fn start(method: Method, split: usize, z0: DVector<f64>, evaluator: LossEvaluator) -> Result<Self> {
        let rec = evaluator.evaluate(&z0)?;
        Ok(Self {
            method,
            split,
            iterates: vec![z0],
            halfsteps: None,
            losses: vec![rec],
            averaged_iterates: None,
            averaged_losses: None,
            inner_iterations: None,
            step_sizes: Vec::new(),
            hypotheses: RunHypotheses::default(),
            evaluator,
        })
    }

    pub(crate) fn from_iterates(
        method: Method,
        split: usize,
        iterates: Vec<DVector<f64>>,
        evaluator: LossEvaluator,
    ) -> Result<Self> {
        let losses = iterates
            .iter()
            .map(|z| evaluator.evaluate(z))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            method,
            split,
            iterates,
            halfsteps: None,
            losses,
            averaged_iterates: None,
            averaged_losses: None,
            inner_iterations: None,
            step_sizes: Vec::new(),
            hypotheses: RunHypotheses::default(),
            evaluator,
        })
    }

    fn push(&mut self, t: usize, z: DVector<f64>) -> Result<()> {
        check_finite(t, &z)?;
        self.losses.push(self.evaluator.evaluate(&z)?);
        self.iterates.push(z);
        Ok(())
    }

    /// Number of iterations `T` (one less than the number of iterates).
    pub fn horizon(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn last(&self) -> &DVector<f64> {
        self.iterates.last().expect("traces are never empty")
    }

    pub fn last_loss(&self) -> &LossRecord {
        self.losses.last().expect("traces are never empty")
    }

    /// `s[t] = max_{t' ≥ t} key(losses[t'])`; entries where `key` is `None` are skipped.
    pub fn suffix_max(&self, key: impl Fn(&LossRecord) -> Option<f64>) -> Vec<f64> {
        let mut out = vec![f64::NEG_INFINITY; self.losses.len()];
        let mut running = f64::NEG_INFINITY;
        for (i, rec) in self.losses.iter().enumerate().rev() {
            if let Some(v) = key(rec) {
                running = running.max(v);
            }
            out[i] = running;
        }
        out
    }

    /// Writes one row per iteration: `t, ham, sqrt_ham, gap_bilinear, gap_linearized,
    /// func_loss, dist_to_star, gap_residual` plus `avg_*` columns when averaged.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "t",
            "ham",
            "sqrt_ham",
            "gap_bilinear",
            "gap_linearized",
            "func_loss",
            "dist_to_star",
            "gap_residual",
        ];
        let avg = self.averaged_losses.as_ref();
        if avg.is_some() {
            header.extend([
                "avg_ham",
                "avg_sqrt_ham",
                "avg_gap_bilinear",
                "avg_gap_linearized",
                "avg_func_loss",
                "avg_dist_to_star",
                "avg_gap_residual",
            ]);
        }
        w.write_record(&header)?;
        for (t, rec) in self.losses.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(record_fields(rec));
            if let Some(avg) = avg {
                row.extend(record_fields(&avg[t]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

fn record_fields(rec: &LossRecord) -> Vec<String> {
    vec![
        fmt_f64(rec.hamiltonian),
        fmt_f64(rec.sqrt_hamiltonian),
        opt(rec.gap_bilinear),
        opt(rec.gap_linearized),
        opt(rec.func_value_loss),
        opt(rec.dist_to_star),
        opt(rec.gap_residual),
    ]
}

pub(crate) fn check_finite(t: usize, z: &DVector<f64>) -> Result<()> {
    let max_abs = linalg::max_abs(z);
    if !max_abs.is_finite() || max_abs > DIVERGENCE_THRESHOLD {
        return Err(Error::Diverged { t, max_abs });
    }
    Ok(())
}

fn evaluator(op: &OperatorHandle, cfg: &SolverConfig, z0: &DVector<f64>) -> Result<(usize, LossEvaluator)> {
    let split = op.bilinear().map_or(op.dim() / 2, |i| i.half()).max(1);
    if op.dim() < 2 {
        return Err(invalid("dim", "operators need at least two coordinates"));
    }
    let ev = LossEvaluator::for_operator(op.clone(), z0, split, cfg.gap_radius)?;
    Ok((split, ev))
}

fn start_distance(op: &OperatorHandle, z0: &DVector<f64>) -> Option<f64> {
    op.solution().map(|s| (z0 - s).norm())
}

/// Largest step allowed by the EG last-iterate bound; `Λ = 0` drops the `5/(ΛD)` term.
pub fn eg_step_limit(lipschitz: f64, jac_lipschitz: Option<f64>, d: Option<f64>) -> f64 {
    let mut limit = 1.0 / (30.0 * lipschitz);
    if let (Some(lam), Some(d)) = (jac_lipschitz, d) {
        if lam > 0.0 && d > 0.0 {
            limit = limit.min(5.0 / (lam * d));
        }
    }
    limit
}

fn eg_regime(op: &OperatorHandle, cfg: &SolverConfig, eta: f64, d: Option<f64>) -> Result<Option<bool>> {
    // Λ unknown means the bound cannot be applied.
    let Some(lam) = op.jac_lipschitz() else {
        return Ok(None);
    };
    if lam > 0.0 && d.is_none() {
        return Ok(None);
    }
    let limit = eg_step_limit(op.lipschitz(), Some(lam), d);
    let ok = eta <= limit;
    if !ok {
        let requirement = format!("eta <= {limit:e} (min{{5/(Lambda D), 1/(30 L)}})");
        if cfg.strict_stepsize {
            return Err(Error::StepSize { t: 0, eta, requirement });
        }
        warn!("extragradient step {eta:e} is outside the upper-bound regime: {requirement}");
    }
    Ok(Some(ok))
}

fn eg_loop(
    op: &OperatorHandle,
    cfg: &SolverConfig,
    method: Method,
    eta_at: impl Fn(usize) -> Result<f64>,
) -> Result<Trace> {
    let z0 = cfg.start(op.dim())?;
    let (split, ev) = evaluator(op, cfg, &z0)?;
    let mut trace = Trace::start(method, split, z0, ev)?;
    trace.hypotheses.start_distance = start_distance(op, &trace.iterates[0]);
    let mut halves = cfg.record_halfsteps.then(Vec::new);
    let mut z = trace.iterates[0].clone();
    for t in 0..cfg.iterations {
        let eta = eta_at(t)?;
        let half = &z - op.apply(&z) * eta;
        check_finite(t, &half)?;
        let next = &z - op.apply(&half) * eta;
        if let Some(h) = halves.as_mut() {
            h.push(half);
        }
        trace.step_sizes.push(eta);
        trace.push(t + 1, next.clone())?;
        z = next;
    }
    trace.halfsteps = halves;
    Ok(trace)
}

/// Extragradient with a constant step:
/// `z^{t+½} = z^t − ηF(z^t)`, `z^{t+1} = z^t − ηF(z^{t+½})`.
pub fn run_eg(op: &OperatorHandle, cfg: &SolverConfig) -> Result<Trace> {
    let eta = cfg.constant_eta()?;
    let d = start_distance(op, &cfg.start(op.dim())?);
    let regime = eg_regime(op, cfg, eta, d)?;
    let mut trace = eg_loop(op, cfg, Method::Eg, |_| Ok(eta))?;
    trace.hypotheses.eg_step_regime = regime;
    Ok(trace)
}

/// Extragradient with per-step sizes `η_t`, each required to lie in `(0, 1/L)`.
pub fn run_eg_timevarying(op: &OperatorHandle, cfg: &SolverConfig) -> Result<Trace> {
    let bound = 1.0 / op.lipschitz();
    let mut etas = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let eta = cfg.step.eta_at(t).ok_or_else(|| {
            invalid("step", format!("schedule has no entry for t = {t} (need {})", cfg.iterations))
        })?;
        if !(eta > 0.0 && eta < bound) {
            return Err(Error::StepSize {
                t,
                eta,
                requirement: format!("0 < eta_t < 1/L = {bound:e}"),
            });
        }
        etas.push(eta);
    }
    eg_loop(op, cfg, Method::EgTimevarying, |t| Ok(etas[t]))
}

/// Proximal point on an affine bilinear operator: each step solves
/// `(I + ηA) z^{t+1} = z^t − ηb` with one LU factorization.
pub fn run_pp_affine(inst: &BilinearInstance, cfg: &SolverConfig) -> Result<Trace> {
    let eta = cfg.constant_eta()?;
    let op = inst.operator();
    let n = inst.n();
    let z0 = cfg.start(n)?;
    let (split, ev) = evaluator(&op, cfg, &z0)?;
    let mut trace = Trace::start(Method::Pp, split, z0, ev)?;
    trace.hypotheses.start_distance = start_distance(&op, &trace.iterates[0]);

    let system = DMatrix::identity(n, n) + inst.a() * eta;
    let lu = system.lu();
    let shift = inst.b() * eta;
    let mut z = trace.iterates[0].clone();
    for t in 0..cfg.iterations {
        let rhs = &z - &shift;
        let next = lu.solve(&rhs).ok_or(Error::SingularMatrix { sigma_min: 0.0 })?;
        let residual = (&next - &z + (inst.a() * &next + inst.b()) * eta).norm();
        let allowed = 1e-10 * (1.0 + z.norm()) * (1.0 + eta * inst.lipschitz());
        if !(residual <= allowed) {
            return Err(Error::InnerSolve {
                t,
                iterations: 1,
                residual,
            });
        }
        trace.step_sizes.push(eta);
        trace.push(t + 1, next.clone())?;
        z = next;
    }
    Ok(trace)
}

/// Proximal point for a general operator. The implicit step is solved by the Picard
/// iteration `w ← z^t − ηF(w)`, which contracts when `ηL < 1`.
pub fn run_pp_general(op: &OperatorHandle, cfg: &SolverConfig) -> Result<Trace> {
    let eta = cfg.constant_eta()?;
    if eta * op.lipschitz() >= 1.0 {
        return Err(Error::StepSize {
            t: 0,
            eta,
            requirement: format!("eta * L < 1 with L = {:e}", op.lipschitz()),
        });
    }
    let z0 = cfg.start(op.dim())?;
    let (split, ev) = evaluator(op, cfg, &z0)?;
    let mut trace = Trace::start(Method::Pp, split, z0, ev)?;
    trace.hypotheses.start_distance = start_distance(op, &trace.iterates[0]);
    let mut inner = Vec::with_capacity(cfg.iterations);
    let mut z = trace.iterates[0].clone();
    for t in 0..cfg.iterations {
        let tol = cfg.inner_tol.unwrap_or(1e-12 * (1.0 + z.norm()));
        let mut w = z.clone();
        let mut iterations = 0;
        loop {
            let w_next = &z - op.apply(&w) * eta;
            iterations += 1;
            let change = (&w_next - &w).norm();
            w = w_next;
            check_finite(t, &w)?;
            if change <= tol {
                break;
            }
            if iterations >= cfg.inner_max_iters {
                return Err(Error::InnerSolve {
                    t,
                    iterations,
                    residual: change,
                });
            }
        }
        inner.push(iterations);
        trace.step_sizes.push(eta);
        trace.push(t + 1, w.clone())?;
        z = w;
    }
    trace.inner_iterations = Some(inner);
    Ok(trace)
}

/// Simultaneous gradient descent-ascent `z^{t+1} = z^t − ηF(z^t)`.
pub fn run_gda(op: &OperatorHandle, cfg: &SolverConfig) -> Result<Trace> {
    let eta = cfg.constant_eta()?;
    let z0 = cfg.start(op.dim())?;
    let (split, ev) = evaluator(op, cfg, &z0)?;
    let mut trace = Trace::start(Method::Gda, split, z0, ev)?;
    trace.hypotheses.start_distance = start_distance(op, &trace.iterates[0]);
    let mut z = trace.iterates[0].clone();
    for t in 0..cfg.iterations {
        let next = &z - op.apply(&z) * eta;
        trace.step_sizes.push(eta);
        trace.push(t + 1, next.clone())?;
        z = next;
    }
    Ok(trace)
}

/// Runs the configured method. Proximal point uses the exact affine solve for bilinear
/// operators and the Picard iteration otherwise.
pub fn run(op: &OperatorHandle, cfg: &SolverConfig) -> Result<Trace> {
    match cfg.method {
        Method::Eg => run_eg(op, cfg),
        Method::EgTimevarying => run_eg_timevarying(op, cfg),
        Method::Pp => match op.bilinear() {
            Some(inst) => run_pp_affine(inst, cfg),
            None => run_pp_general(op, cfg),
        },
        Method::Gda => run_gda(op, cfg),
        Method::Scli => Err(invalid("method", "1-SCLI traces come from scli::simulate_scli")),
    }
}

/// Running means `v^t = (z⁰ + … + z^t)/(t+1)`.
pub fn running_means(iterates: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(iterates.len());
    let Some(first) = iterates.first() else {
        return out;
    };
    let mut sum = DVector::zeros(first.len());
    for (t, z) in iterates.iter().enumerate() {
        sum += z;
        out.push(&sum / (t as f64 + 1.0));
    }
    out
}

/// Copy of `tr` with running means of the iterates and their losses filled in.
pub fn average_trace(tr: &Trace) -> Result<Trace> {
    let mut out = tr.clone();
    let avg = running_means(&tr.iterates);
    out.averaged_losses = Some(
        avg.iter()
            .map(|v| tr.evaluator.evaluate(v))
            .collect::<Result<Vec<_>>>()?,
    );
    out.averaged_iterates = Some(avg);
    Ok(out)
}

/// Compares `Σ_{t<T} η²‖F(z^t)‖²` with `‖z⁰ − z*‖²/(1 − η²L²)` for a constant-step EG
/// trace. Returns `(lhs, rhs)`; `None` if `z*` is unknown or `ηL ≥ 1`.
pub fn eg_bounded_sum(tr: &Trace, lipschitz: f64) -> Option<(f64, f64)> {
    let eta = *tr.step_sizes.first()?;
    let d = tr.hypotheses.start_distance?;
    if eta * lipschitz >= 1.0 {
        return None;
    }
    let t = tr.horizon();
    let lhs: f64 = tr.losses[..t].iter().map(|r| eta * eta * r.hamiltonian).sum();
    Some((lhs, d * d / (1.0 - eta * eta * lipschitz * lipschitz)))
}
