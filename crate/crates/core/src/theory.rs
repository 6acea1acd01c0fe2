//! Randomized verifiers for the matrix and polynomial inequalities behind the rates.
//!
//! Every check draws its trials from a ChaCha8 generator seeded with the master seed and
//! a per-trial stream, so the worst trial can be replayed exactly; its inputs are
//! returned as the report witness.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, min_sym_eigenvalue, spectral_norm};
use crate::poly;
use crate::problem::{BilinearInstance, HardInstanceParams, OperatorHandle};

/// Outcome of one randomized check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest `rhs − lhs` over all trials.
    pub worst_margin: f64,
    /// Inputs of the trial attaining `worst_margin`.
    pub witness: Value,
    pub seed: u64,
    pub tolerance: f64,
    /// Check-specific measurements (no pass/fail meaning).
    pub extra: BTreeMap<String, f64>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Trial {
    margin: f64,
    violated: bool,
    witness: Value,
    extra: Option<(String, f64)>,
}

impl Trial {
    fn new(margin: f64, tol: f64, witness: Value) -> Self {
        Self {
            margin,
            violated: margin.is_nan() || margin < -tol,
            witness,
            extra: None,
        }
    }
}

/// Deterministic generator for trial `index` of a check seeded with `seed`.
pub fn trial_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

type TrialSummary = (usize, f64, bool, Option<(String, f64)>);

fn run_trials(
    name: &str,
    seed: u64,
    trials: usize,
    tolerance: f64,
    f: impl Fn(usize, &mut ChaCha8Rng) -> Trial + Sync,
) -> CheckReport {
    let summaries: Vec<TrialSummary> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let t = f(i, &mut trial_rng(seed, i));
            (i, t.margin, t.violated, t.extra)
        })
        .collect();
    let violations = summaries.iter().filter(|s| s.2).count();
    let mut worst: Option<(usize, f64)> = None;
    let mut extra = BTreeMap::new();
    for (i, margin, _, ex) in &summaries {
        let m = if margin.is_nan() { f64::NEG_INFINITY } else { *margin };
        if worst.is_none_or(|(_, w)| m < w) {
            worst = Some((*i, m));
        }
        if let Some((key, v)) = ex {
            let e = extra.entry(key.clone()).or_insert(f64::NEG_INFINITY);
            *e = e.max(*v);
        }
    }
    let (witness, worst_margin) = match worst {
        Some((i, m)) => (f(i, &mut trial_rng(seed, i)).witness, m),
        None => (Value::Null, f64::INFINITY),
    };
    CheckReport {
        name: name.to_string(),
        trials,
        violations,
        worst_margin,
        witness,
        seed,
        tolerance,
        extra,
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

/// Supremum of `f` over `[a, b]`: dense grid (log-spaced if `log_grid`) including both
/// endpoints, then golden-section refinement around the best grid point.
pub fn sup_on_interval(f: impl Fn(f64) -> f64, a: f64, b: f64, points: usize, log_grid: bool) -> f64 {
    let points = points.max(3);
    let at = |i: usize| -> f64 {
        if i == 0 {
            a
        } else if i + 1 == points {
            b
        } else if log_grid {
            (a.ln() + (b.ln() - a.ln()) * i as f64 / (points - 1) as f64).exp()
        } else {
            a + (b - a) * i as f64 / (points - 1) as f64
        }
    };
    let mut best_i = 0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..points {
        let v = f(at(i));
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let lo = at(best_i.saturating_sub(1));
    let hi = at((best_i + 1).min(points - 1));
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut l, mut r) = (lo, hi);
    let mut c = r - inv_phi * (r - l);
    let mut d = l + inv_phi * (r - l);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if (r - l) <= 1e-14 * (1.0 + r.abs()) {
            break;
        }
        if fc >= fd {
            r = d;
            d = c;
            fd = fc;
            c = r - inv_phi * (r - l);
            fc = f(c);
        } else {
            l = c;
            c = d;
            fc = fd;
            d = l + inv_phi * (r - l);
            fd = f(d);
        }
    }
    best.max(fc).max(fd)
}

/// Real polynomial with `r(0) = 1` used by the polynomial lemmas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TestPolynomial {
    /// `Σ coeffs[j]·yʲ` with `coeffs[0] = 1`.
    Monomial { coeffs: Vec<f64> },
    /// `Π (1 − y/ρ)` over real roots and `Π |1 − y/ρ|²` over complex pairs `ρ, ρ̄`.
    Roots {
        real: Vec<f64>,
        complex: Vec<(f64, f64)>,
    },
    /// `T_k((L + μ − 2y)/(L − μ)) / T_k((L + μ)/(L − μ))`.
    ScaledChebyshev { k: usize, mu: f64, l: f64 },
}

impl TestPolynomial {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            TestPolynomial::Monomial { coeffs } => poly::eval_real(coeffs, y),
            TestPolynomial::Roots { real, complex } => {
                let mut v = 1.0;
                for r in real {
                    v *= 1.0 - y / r;
                }
                for &(re, im) in complex {
                    // (1 − y/ρ)(1 − y/ρ̄) = 1 − 2y·Re(1/ρ) + y²/|ρ|².
                    let m2 = re * re + im * im;
                    v *= 1.0 - 2.0 * y * re / m2 + y * y / m2;
                }
                v
            }
            TestPolynomial::ScaledChebyshev { k, mu, l } => {
                let x = (l + mu - 2.0 * y) / (l - mu);
                poly::chebyshev_t(*k, x) / poly::chebyshev_t(*k, (l + mu) / (l - mu))
            }
        }
    }

    pub fn degree(&self) -> usize {
        match self {
            TestPolynomial::Monomial { coeffs } => poly::degree(coeffs).unwrap_or(0),
            TestPolynomial::Roots { real, complex } => real.len() + 2 * complex.len(),
            TestPolynomial::ScaledChebyshev { k, .. } => *k,
        }
    }

    fn random<R: Rng + ?Sized>(rng: &mut R, k: usize, lo: f64, hi: f64) -> Self {
        match rng.random_range(0..3) {
            0 => {
                let sigma = log_uniform(rng, 1e-3, 10.0);
                let mut coeffs = vec![1.0];
                for j in 1..=k {
                    let c: f64 = rng.sample(rand_distr::StandardNormal);
                    coeffs.push(c * sigma / hi.powi(j as i32));
                }
                TestPolynomial::Monomial { coeffs }
            }
            1 => {
                let degree = rng.random_range(1..=k);
                let real = (0..degree).map(|_| log_uniform(rng, lo, 2.0 * hi)).collect();
                TestPolynomial::Roots {
                    real,
                    complex: Vec::new(),
                }
            }
            _ => {
                let pairs = rng.random_range(0..=k / 2);
                let singles = rng.random_range(0..=k - 2 * pairs);
                let complex = (0..pairs)
                    .map(|_| {
                        let re = log_uniform(rng, lo, 2.0 * hi);
                        let im = re * rng.random_range(-3.0..3.0);
                        (re, im)
                    })
                    .collect();
                let real = (0..singles).map(|_| log_uniform(rng, lo, 2.0 * hi)).collect();
                TestPolynomial::Roots { real, complex }
            }
        }
    }
}

/// Lower bound `1 − 6k²/(√κ − 1)²` on `sup_{y∈[μ,L]} |r(y)|`.
pub fn chebyshev_lemma_bound(k: usize, l: f64, mu: f64) -> f64 {
    let s = (l / mu).sqrt() - 1.0;
    1.0 - 6.0 * (k * k) as f64 / (s * s)
}

/// `1/T_k((κ+1)/(κ−1))`, the sup attained by the scaled Chebyshev polynomial.
pub fn chebyshev_extremal_sup(k: usize, l: f64, mu: f64) -> f64 {
    let kappa = l / mu;
    1.0 / poly::chebyshev_t(k, (kappa + 1.0) / (kappa - 1.0))
}

const SUP_GRID: usize = 4000;

/// Checks `sup_{y∈[μ,L]} |r(y)| ≥ 1 − 6k²/(√(L/μ) − 1)²` for random degree-≤k real `r`
/// with `r(0) = 1`. Trial 0 is the scaled Chebyshev polynomial and trial 1 is `r ≡ 1`.
pub fn check_chebyshev_lemma(k: usize, l: f64, mu: f64, trials: usize, seed: u64) -> Result<CheckReport> {
    if !(mu > 0.0 && l > mu) {
        return Err(invalid("mu", format!("need 0 < mu < L, got mu = {mu}, L = {l}")));
    }
    if k == 0 || (k as f64) > (l / mu).sqrt() - 1.0 {
        return Err(invalid("k", format!("need 1 <= k <= sqrt(L/mu) - 1, got k = {k}")));
    }
    let bound = chebyshev_lemma_bound(k, l, mu);
    let tol = 1e-12;
    let mut report = run_trials("chebyshev_lemma", seed, trials, tol, |i, rng| {
        let p = match i {
            0 => TestPolynomial::ScaledChebyshev { k, mu, l },
            1 => TestPolynomial::Monomial { coeffs: vec![1.0] },
            _ => TestPolynomial::random(rng, k, mu, l),
        };
        let sup = sup_on_interval(|y| p.eval(y).abs(), mu, l, SUP_GRID, false);
        Trial::new(sup - bound, tol, json!({ "k": k, "L": l, "mu": mu, "r": p, "sup": sup }))
    });
    report.extra.insert("bound".into(), bound);
    report.extra.insert("chebyshev_sup".into(), chebyshev_extremal_sup(k, l, mu));
    Ok(report)
}

/// `sup_{y∈[L/(20tk²), L]} y·|r(y)|^t`, evaluated in log space.
pub fn k2_sup(p: &TestPolynomial, k: usize, t: usize, l: f64, points: usize) -> f64 {
    let lo = l / (20.0 * t as f64 * (k * k) as f64);
    let g = |y: f64| y.ln() + t as f64 * p.eval(y).abs().ln();
    sup_on_interval(g, lo, l, points, true).exp()
}

/// Checks `sup_{y∈[L/(20tk²), L]} y|r(y)|^t > L/(40tk²)` for random degree-≤k real `r`
/// with `r(0) = 1`, including scaled Chebyshev polynomials on sub-intervals.
pub fn check_k2_lemma(k: usize, t: usize, l: f64, trials: usize, seed: u64) -> Result<CheckReport> {
    if k == 0 || t == 0 {
        return Err(invalid("k", "k and t must be at least 1"));
    }
    if !(l > 0.0) {
        return Err(invalid("L", "must be positive"));
    }
    let bound = l / (40.0 * t as f64 * (k * k) as f64);
    let lo = l / (20.0 * t as f64 * (k * k) as f64);
    let tol = 1e-12 * bound;
    let mut report = run_trials("k2_lemma", seed, trials, tol, |i, rng| {
        let p = match i {
            0 => TestPolynomial::Monomial { coeffs: vec![1.0] },
            1 => TestPolynomial::ScaledChebyshev { k, mu: lo, l },
            _ if rng.random_bool(0.25) => {
                let mu = log_uniform(rng, lo, l / 2.0);
                TestPolynomial::ScaledChebyshev { k, mu, l }
            }
            _ => TestPolynomial::random(rng, k, lo, l),
        };
        let sup = k2_sup(&p, k, t, l, SUP_GRID);
        Trial::new(sup - bound, tol, json!({ "k": k, "t": t, "L": l, "r": p, "sup": sup }))
    });
    report.extra.insert("bound".into(), bound);
    Ok(report)
}

/// `√(1 + 26‖A − B‖²) − ‖I − A + AB‖`.
pub fn ab_diff_margin(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let lhs = spectral_norm(&(DMatrix::identity(n, n) - a + a * b));
    let d = spectral_norm(&(a - b));
    (1.0 + 26.0 * d * d).sqrt() - lhs
}

/// Random matrix with PSD symmetric part and spectral norm at most `max_norm`.
fn random_monotone_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize, max_norm: f64) -> DMatrix<f64> {
    let rank = rng.random_range(1..=n);
    let p = linalg::random_psd(rng, n, rank);
    let s = linalg::random_antisymmetric(rng, n);
    let w: f64 = rng.random_range(0.0..1.0);
    // Occasionally antisymmetric-dominant.
    let w = if rng.random_bool(0.2) { w * 1e-3 } else { w };
    let m = linalg::scale_to_norm(&p, 1.0) * w + linalg::scale_to_norm(&s, 1.0) * (1.0 - w);
    linalg::scale_to_norm(&m, max_norm * rng.random_range(0.0..=1.0_f64).sqrt())
}

fn random_psd_any_rank<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let rank = rng.random_range(1..=n);
    linalg::random_psd(rng, n, rank)
}

fn rows(m: &DMatrix<f64>) -> Value {
    json!(linalg::to_rows(m))
}

/// Checks `‖I − A + AB‖ ≤ √(1 + 26‖A − B‖²)` for `A, B` with PSD symmetric parts and
/// `‖A‖, ‖B‖ ≤ 1/30`. Also records the largest `(‖I − A + AB‖² − 1)/‖A − B‖²`.
pub fn check_ab_diff(n: usize, trials: usize, seed: u64) -> CheckReport {
    let cap = 1.0 / 30.0;
    let tol = 1e-12;
    run_trials("ab_diff", seed, trials, tol, |i, rng| {
        let a = if i == 1 {
            DMatrix::zeros(n, n)
        } else {
            random_monotone_matrix(rng, n, cap)
        };
        let b = match i {
            0 => a.clone(),
            1 => random_monotone_matrix(rng, n, cap),
            _ if rng.random_bool(0.3) => {
                // Near-equal pair.
                let delta = random_monotone_matrix(rng, n, cap) * log_uniform(rng, 1e-8, 1e-1);
                let b = &a + delta;
                let s = spectral_norm(&b);
                if s > cap {
                    b * (cap / s)
                } else {
                    b
                }
            }
            _ => random_monotone_matrix(rng, n, cap),
        };
        let margin = ab_diff_margin(&a, &b);
        let mut trial = Trial::new(margin, tol, json!({ "A": rows(&a), "B": rows(&b) }));
        let d = spectral_norm(&(&a - &b));
        if d > 1e-6 {
            let lhs = spectral_norm(&(DMatrix::identity(n, n) - &a + &a * &b));
            trial.extra = Some(("max_ratio".into(), (lhs * lhs - 1.0) / (d * d)));
        }
        trial
    })
}

/// Checks `XXᵀ ⪯ 2YYᵀ + 2‖X − Y‖²I` for arbitrary `X, Y` and
/// `SR + RS ⪯ 4S² + 4‖S − R‖²I` for symmetric PSD `S, R`, via minimum eigenvalues.
/// The trial margin is the smaller of the two.
pub fn check_xy_sr_inequalities(n: usize, trials: usize, seed: u64) -> CheckReport {
    let mut report = run_trials("xy_sr_inequalities", seed, trials, 0.0, |i, rng| {
        let scale = log_uniform(rng, 1e-2, 1e2);
        let x = linalg::gaussian_matrix(rng, n, n) * scale;
        let y = match i {
            0 => x.clone(),
            _ if rng.random_bool(0.3) => &x + linalg::gaussian_matrix(rng, n, n) * (scale * log_uniform(rng, 1e-6, 1.0)),
            _ => linalg::gaussian_matrix(rng, n, n) * scale,
        };
        let s = random_psd_any_rank(rng, n) * scale;
        let r = match i {
            0 => s.clone(),
            _ if rng.random_bool(0.3) => {
                &s + random_psd_any_rank(rng, n) * (scale * log_uniform(rng, 1e-6, 1.0))
            }
            _ => random_psd_any_rank(rng, n) * scale,
        };
        let id = DMatrix::<f64>::identity(n, n);
        let dxy = spectral_norm(&(&x - &y));
        let xy = &y * y.transpose() * 2.0 + &id * (2.0 * dxy * dxy) - &x * x.transpose();
        let dsr = spectral_norm(&(&s - &r));
        let sr = &s * &s * 4.0 + &id * (4.0 * dsr * dsr) - (&s * &r + &r * &s);
        let m_xy = min_sym_eigenvalue(&xy);
        let m_sr = min_sym_eigenvalue(&sr);
        let norm_scale = spectral_norm(&x).max(spectral_norm(&y)).powi(2) + spectral_norm(&s).max(spectral_norm(&r)).powi(2);
        let tol = 1e-9 * (1.0 + norm_scale);
        let mut trial = Trial::new(
            m_xy.min(m_sr),
            tol,
            json!({ "X": rows(&x), "Y": rows(&y), "S": rows(&s), "R": rows(&r),
                    "min_eig_xy": m_xy, "min_eig_sr": m_sr }),
        );
        trial.violated = m_xy < -tol || m_sr < -tol;
        trial
    });
    report.tolerance = 1e-9;
    report
}

/// Checks that `∂F(w) + ∂F(w)ᵀ` is PSD at `w ~ N(0, scale²)`. Central differences stand in
/// for a missing Jacobian when `allow_fd`, with the tolerance widened to `1e-6` relative.
pub fn check_jacobian_psd(
    op: &OperatorHandle,
    trials: usize,
    scale: f64,
    seed: u64,
    allow_fd: bool,
) -> Result<CheckReport> {
    if !op.has_jacobian() && !allow_fd {
        return Err(Error::MissingJacobian);
    }
    let rel = if op.has_jacobian() { 1e-9 } else { 1e-6 };
    let mut report = run_trials("jacobian_psd", seed, trials, rel, |_, rng| {
        let w = linalg::gaussian_vector(rng, op.dim()) * scale;
        let j = op.jacobian_or_fd(&w, true).expect("availability checked above");
        let lam = min_sym_eigenvalue(&(&j + j.transpose()));
        let tol = rel * (1.0 + spectral_norm(&j));
        Trial::new(lam, tol, json!({ "w": w.as_slice() }))
    });
    report.extra.insert("min_eigenvalue".into(), report.worst_margin);
    Ok(report)
}

/// Composite Simpson rule for `∫₀¹ ∂F(start + α·(end − start)) dα`.
fn simpson_jacobian(
    op: &OperatorHandle,
    start: &DVector<f64>,
    end: &DVector<f64>,
    panels: usize,
) -> Result<DMatrix<f64>> {
    let n = op.dim();
    let h = 1.0 / panels as f64;
    let dir = end - start;
    let mut acc = DMatrix::zeros(n, n);
    for i in 0..=panels {
        let w = if i == 0 || i == panels {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let point = start + &dir * (i as f64 * h);
        acc += op.jacobian_or_fd(&point, false)? * w;
    }
    Ok(acc * (h / 3.0))
}

/// Doubles the panel count from `initial` until successive estimates agree to
/// `1e-12·(1 + ‖estimate‖)`; fails beyond `cap` panels.
pub fn integrate_jacobian(
    op: &OperatorHandle,
    start: &DVector<f64>,
    end: &DVector<f64>,
    initial: usize,
    cap: usize,
) -> Result<(DMatrix<f64>, usize)> {
    let mut panels = initial.max(2) & !1;
    let mut prev = simpson_jacobian(op, start, end, panels)?;
    loop {
        let next_panels = panels * 2;
        if next_panels > cap {
            let change = (&simpson_jacobian(op, start, end, panels)? - &prev).norm();
            return Err(Error::Quadrature { panels, change });
        }
        let next = simpson_jacobian(op, start, end, next_panels)?;
        let change = (&next - &prev).norm();
        if change <= 1e-12 * (1.0 + next.norm()) {
            return Ok((next, next_panels));
        }
        prev = next;
        panels = next_panels;
    }
}

/// Decomposition `F(z − ηF(z − ηF(z))) = F(z) − ηA_zF(z) + η²A_zB_zF(z)` with `A_z`, `B_z`
/// the mean Jacobians along the two extragradient segments.
#[derive(Clone, Debug)]
pub struct AbDecomposition {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub residual: f64,
    pub panels: usize,
}

pub fn ab_decomposition(op: &OperatorHandle, eta: f64, z: &DVector<f64>) -> Result<AbDecomposition> {
    let fz = op.value(z)?;
    let half = z - &fz * eta;
    let f_half = op.value(&half)?;
    let full = z - &f_half * eta;
    // B_z averages ∂F over [z − ηF(z), z]; A_z over [z − ηF(z − ηF(z)), z].
    let (b, pb) = integrate_jacobian(op, &half, z, 64, 4096)?;
    let (a, pa) = integrate_jacobian(op, &full, z, 64, 4096)?;
    let lhs = op.value(&full)?;
    let rhs = &fz - (&a * &fz) * eta + (&a * (&b * &fz)) * (eta * eta);
    Ok(AbDecomposition {
        residual: (lhs - rhs).norm(),
        a,
        b,
        panels: pa.max(pb),
    })
}

/// Verifies the decomposition identity (residual `≤ 1e-8·(1 + ‖F(z)‖)`), PSD symmetric
/// parts, `‖A_z − B_z‖ ≤ (ηΛ/2)‖F(z) − F(z − ηF(z))‖` and `‖A_z‖, ‖B_z‖ ≤ L`.
pub fn check_ab_exist_decomposition(
    op: &OperatorHandle,
    eta: f64,
    trials: usize,
    scale: f64,
    seed: u64,
) -> Result<CheckReport> {
    if !op.has_jacobian() {
        return Err(Error::MissingJacobian);
    }
    let lambda = op
        .jac_lipschitz()
        .ok_or_else(|| invalid("Lambda", "operator must declare a Jacobian Lipschitz constant"))?;
    let l = op.lipschitz();
    // Surface quadrature failures as errors rather than violations.
    for i in 0..trials.min(4) {
        let w = linalg::gaussian_vector(&mut trial_rng(seed, i), op.dim()) * scale;
        ab_decomposition(op, eta, &w)?;
    }
    let tol = 1e-9 * (1.0 + l);
    let mut report = run_trials("ab_exist_decomposition", seed, trials, tol, |_, rng| {
        let z = linalg::gaussian_vector(rng, op.dim()) * scale;
        let witness = json!({ "z": z.as_slice(), "eta": eta });
        let dec = match ab_decomposition(op, eta, &z) {
            Ok(d) => d,
            Err(_) => {
                return Trial {
                    margin: f64::NEG_INFINITY,
                    violated: true,
                    witness,
                    extra: None,
                }
            }
        };
        let fz = op.apply(&z);
        let f_half = op.apply(&(&z - &fz * eta));
        let diff_bound = eta * lambda / 2.0 * (&fz - &f_half).norm();
        let margins = [
            diff_bound - spectral_norm(&(&dec.a - &dec.b)),
            l - spectral_norm(&dec.a),
            l - spectral_norm(&dec.b),
            min_sym_eigenvalue(&(&dec.a + dec.a.transpose())),
            min_sym_eigenvalue(&(&dec.b + dec.b.transpose())),
        ];
        let margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
        let res_tol = 1e-8 * (1.0 + fz.norm());
        let mut trial = Trial::new(margin, tol, witness);
        trial.violated |= dec.residual > res_tol;
        trial.extra = Some(("max_residual".into(), dec.residual));
        trial
    });
    report.extra.insert("eta".into(), eta);
    Ok(report)
}

/// Checks `‖F(x)‖² ≤ ‖F(x + ηF(x))‖²` at `x ~ N(0, scale²)`.
pub fn check_pp_monotone(op: &OperatorHandle, eta: f64, trials: usize, scale: f64, seed: u64) -> Result<CheckReport> {
    if !(eta > 0.0) {
        return Err(invalid("eta", "must be positive"));
    }
    Ok(run_trials("pp_monotone", seed, trials, 1e-9, |_, rng| {
        let x = linalg::gaussian_vector(rng, op.dim()) * scale;
        let f = op.apply(&x);
        let g = op.apply(&(&x + &f * eta));
        let lhs = f.norm_squared();
        let margin = g.norm_squared() - lhs;
        Trial::new(margin, 1e-9 * (1.0 + lhs), json!({ "x": x.as_slice(), "eta": eta }))
    }))
}

/// [`check_pp_monotone`] over random monotone affine operators `F(z) = Mz + c` with
/// `M = P + S` (`P` PSD, `S` antisymmetric) and `η` log-uniform in `[1e-2, 1e2]`.
pub fn check_pp_monotone_affine_family(n: usize, trials: usize, seed: u64) -> CheckReport {
    run_trials("pp_monotone_affine", seed, trials, 1e-9, |_, rng| {
        let norm = log_uniform(rng, 1e-2, 1e2);
        let m = random_monotone_matrix(rng, n, norm);
        let c = linalg::gaussian_vector(rng, n);
        let eta = log_uniform(rng, 1e-2, 1e2);
        let x = linalg::gaussian_vector(rng, n) * log_uniform(rng, 1e-2, 1e2);
        let f = &m * &x + &c;
        let g = &m * (&x + &f * eta) + &c;
        let lhs = f.norm_squared();
        Trial::new(
            g.norm_squared() - lhs,
            1e-9 * (1.0 + lhs),
            json!({ "M": rows(&m), "c": c.as_slice(), "x": x.as_slice(), "eta": eta }),
        )
    })
}

/// Trial counts for [`run_battery`].
#[derive(Clone, Copy, Debug)]
pub struct BatteryConfig {
    pub seed: u64,
    pub matrix_trials: usize,
    pub polynomial_trials: usize,
    pub decomposition_trials: usize,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            matrix_trials: 10_000,
            polynomial_trials: 200,
            decomposition_trials: 64,
        }
    }
}

/// The full lemma battery: Chebyshev (`k ≤ 10`, `κ ≤ 10⁴`), k2 (`k ≤ 8`, `t ≤ 100`),
/// ab_diff (`n ∈ {2, 4, 8}`), xy/sr, PP monotonicity, Jacobian PSD and the
/// decomposition on an affine and a smoothly perturbed bilinear operator.
pub fn run_battery(cfg: &BatteryConfig) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let seed = cfg.seed;
    let mut sub = 0_u64;
    let mut next_seed = || {
        sub += 1;
        seed.wrapping_mul(1_000_003).wrapping_add(sub)
    };
    for k in 1..=10 {
        for kappa in [((k + 1) * (k + 1)) as f64, 1e2, 1e3, 1e4] {
            if (k as f64) <= kappa.sqrt() - 1.0 && kappa > 1.0 {
                let mut r = check_chebyshev_lemma(k, 1.0, 1.0 / kappa, cfg.polynomial_trials, next_seed())?;
                r.name = format!("chebyshev_lemma[k={k},kappa={kappa}]");
                out.push(r);
            }
        }
    }
    for k in [1, 2, 3, 5, 8] {
        for t in [1, 10, 100] {
            let mut r = check_k2_lemma(k, t, 1.0, cfg.polynomial_trials, next_seed())?;
            r.name = format!("k2_lemma[k={k},t={t}]");
            out.push(r);
        }
    }
    for n in [2, 4, 8] {
        let mut r = check_ab_diff(n, cfg.matrix_trials, next_seed());
        r.name = format!("ab_diff[n={n}]");
        out.push(r);
    }
    out.push(check_xy_sr_inequalities(4, cfg.matrix_trials, next_seed()));
    out.push(check_pp_monotone_affine_family(4, cfg.matrix_trials, next_seed()));

    let inst = BilinearInstance::hard(HardInstanceParams::new(4, 1.0, 1.0))?;
    let perturbed = inst.perturbed_operator(0.1);
    let mut r = check_pp_monotone(&perturbed, 0.5, cfg.decomposition_trials * 4, 2.0, next_seed())?;
    r.name = "pp_monotone[perturbed]".into();
    out.push(r);
    for (name, op) in [("bilinear", inst.operator()), ("perturbed", perturbed.clone())] {
        let mut r = check_jacobian_psd(&op, cfg.decomposition_trials, 2.0, next_seed(), false)?;
        r.name = format!("jacobian_psd[{name}]");
        out.push(r);
        let eta = 1.0 / (30.0 * op.lipschitz());
        let mut r = check_ab_exist_decomposition(&op, eta, cfg.decomposition_trials, 2.0, next_seed())?;
        r.name = format!("ab_exist_decomposition[{name}]");
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::wrap_general_operator;
    use approx::assert_relative_eq;

    #[test]
    fn chebyshev_examples() {
        let (k, l, mu) = (1, 100.0, 1.0);
        assert_relative_eq!(chebyshev_lemma_bound(k, l, mu), 1.0 - 6.0 / 81.0, epsilon = 1e-15);
        let rep = check_chebyshev_lemma(k, l, mu, 50, 3).unwrap();
        assert!(rep.passed(), "{rep:?}");

        // Affine r(y) = 1 + c·y: exact sup is max(|r(μ)|, |r(L)|).
        for c in [-0.5, -0.02, -1.0 / 50.5, 0.3] {
            let p = TestPolynomial::Monomial { coeffs: vec![1.0, c] };
            let sup = sup_on_interval(|y| p.eval(y).abs(), mu, l, SUP_GRID, false);
            let exact = (1.0 + c * mu).abs().max((1.0 + c * l).abs());
            assert_relative_eq!(sup, exact, epsilon = 1e-14);
        }

        for k in [1, 3, 7] {
            let (l, mu) = (1.0, 1e-3);
            let p = TestPolynomial::ScaledChebyshev { k, mu, l };
            assert_relative_eq!(p.eval(0.0), 1.0, epsilon = 1e-12);
            let sup = sup_on_interval(|y| p.eval(y).abs(), mu, l, SUP_GRID, false);
            assert_relative_eq!(sup, chebyshev_extremal_sup(k, l, mu), max_relative = 1e-12);
            assert!(sup > chebyshev_lemma_bound(k, l, mu));
        }
        assert!(check_chebyshev_lemma(10, 100.0, 1.0, 5, 0).is_err());
    }

    #[test]
    fn k2_examples() {
        let l = 2.0;
        let one = TestPolynomial::Monomial { coeffs: vec![1.0] };
        assert_relative_eq!(k2_sup(&one, 3, 7, l, 100), l, epsilon = 1e-12);
        let lin = TestPolynomial::Monomial { coeffs: vec![1.0, -1.0 / l] };
        assert_relative_eq!(k2_sup(&lin, 1, 1, l, SUP_GRID), l / 4.0, max_relative = 1e-12);
        assert!(check_k2_lemma(2, 10, l, 60, 4).unwrap().passed());
    }

    #[test]
    fn ab_diff_examples() {
        let mut rng = trial_rng(8, 0);
        let a = random_monotone_matrix(&mut rng, 4, 1.0 / 30.0);
        assert!(ab_diff_margin(&a, &a) >= 0.0);
        let z = DMatrix::zeros(4, 4);
        assert!(ab_diff_margin(&z, &a) >= 0.0);
        let rep = check_ab_diff(4, 300, 2);
        assert!(rep.passed());
        assert!(rep.extra.contains_key("max_ratio"));

        let w = &rep.witness;
        let parse = |key: &str| {
            let rows: Vec<Vec<f64>> = serde_json::from_value(w[key].clone()).unwrap();
            linalg::from_rows(&rows).unwrap()
        };
        let replay = ab_diff_margin(&parse("A"), &parse("B"));
        assert!((replay - rep.worst_margin).abs() <= 1e-12);
    }

    #[test]
    fn xy_sr_examples() {
        let rep = check_xy_sr_inequalities(3, 300, 1);
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn jacobian_psd_examples() {
        let inst = BilinearInstance::hard(HardInstanceParams::new(4, 1.0, 1.0)).unwrap();
        let rep = check_jacobian_psd(&inst.operator(), 20, 1.0, 0, false).unwrap();
        assert!(rep.passed());
        assert!(rep.worst_margin.abs() < 1e-12);

        let id = wrap_general_operator(
            3,
            |z: &DVector<f64>| z.clone(),
            Some(|_: &DVector<f64>| DMatrix::identity(3, 3)),
            1.0,
            Some(0.0),
        );
        let rep = check_jacobian_psd(&id, 5, 1.0, 0, false).unwrap();
        assert_relative_eq!(rep.worst_margin, 2.0, epsilon = 1e-12);

        let a = inst.a().clone();
        let b = inst.b().clone();
        let black_box = wrap_general_operator(
            4,
            move |z: &DVector<f64>| &a * z + &b,
            None::<fn(&DVector<f64>) -> DMatrix<f64>>,
            1.0,
            None,
        );
        assert!(matches!(
            check_jacobian_psd(&black_box, 5, 1.0, 0, false),
            Err(Error::MissingJacobian)
        ));
        assert!(check_jacobian_psd(&black_box, 5, 1.0, 0, true).unwrap().passed());
        let fd = black_box.finite_difference_jacobian(&DVector::from_vec(vec![0.1, 0.2, -0.3, 0.4]));
        assert!((fd - inst.a()).abs().max() < 1e-6);
    }

    #[test]
    fn ab_exist_affine_is_exact() {
        let inst = BilinearInstance::hard(HardInstanceParams::new(4, 1.0, 1.0)).unwrap();
        let op = inst.operator();
        let dec = ab_decomposition(&op, 0.1, &DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0])).unwrap();
        assert!((&dec.a - inst.a()).norm() < 1e-13);
        assert!((&dec.b - inst.a()).norm() < 1e-13);
        assert!(dec.residual < 1e-13);
        assert!(check_ab_exist_decomposition(&op, 0.1, 10, 1.0, 0).unwrap().passed());
    }

    #[test]
    fn ab_exist_perturbed() {
        let inst = BilinearInstance::hard(HardInstanceParams::new(4, 1.0, 1.0)).unwrap();
        let op = inst.perturbed_operator(0.2);
        let z = DVector::from_vec(vec![0.7, -1.1, 2.3, 0.2]);
        let eta = 1.0 / (30.0 * op.lipschitz());
        let dec = ab_decomposition(&op, eta, &z).unwrap();
        // Oracle: direct evaluation of both sides.
        let fz = op.value(&z).unwrap();
        let lhs = op.value(&(&z - op.value(&(&z - &fz * eta)).unwrap() * eta)).unwrap();
        let rhs = &fz - (&dec.a * &fz) * eta + (&dec.a * (&dec.b * &fz)) * (eta * eta);
        assert!((lhs - rhs).norm() <= 1e-8);
        assert!(check_ab_exist_decomposition(&op, eta, 16, 2.0, 5).unwrap().passed());
    }

    #[test]
    fn pp_monotone_examples() {
        let inst = BilinearInstance::hard(HardInstanceParams::new(2, 1.0, 1.0)).unwrap();
        let op = inst.operator();
        let z = inst.z_star().clone();
        let f = op.value(&z).unwrap();
        let g = op.value(&(&z + &f * 0.7)).unwrap();
        assert!(f.norm_squared() <= g.norm_squared());

        let eta = 0.7;
        let x = DVector::from_vec(vec![0.3, -1.4]);
        let fx = op.value(&x).unwrap();
        let gx = op.value(&(&x + &fx * eta)).unwrap();
        assert_relative_eq!(gx.norm_squared(), (1.0 + eta * eta) * fx.norm_squared(), max_relative = 1e-13);
        assert!(check_pp_monotone(&op, eta, 100, 1.0, 0).unwrap().passed());
        assert!(check_pp_monotone_affine_family(3, 300, 0).passed());
    }

    #[test]
    fn reports_are_reproducible() {
        let a = check_ab_diff(2, 50, 77);
        let b = check_ab_diff(2, 50, 77);
        assert_eq!(a.worst_margin, b.worst_margin);
        assert_eq!(a.witness, b.witness);
        assert_eq!(a.seed, 77);
    }
}
