//! Stationary canonical linear iterative methods `z^t = C₀(A)z^{t−1} + N(A)b` with
//! `C₀` and `N` real polynomials in the operator matrix.
//!
//! On the hard family `A² = −ν²I`, so every polynomial `p(A)` collapses to
//! `Re p(iν)·I + (Im p(iν)/ν)·A` and all losses reduce to scalar complex arithmetic.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::metrics::{self, GapRegion, LossEvaluator};
use crate::poly;
use crate::problem::{BilinearInstance, HardInstanceParams};
use crate::solvers::{self, check_finite, Method, SolverConfig, Trace};

/// A 1-SCLI method: `N(A) = Σ n_coeffs[j]·Aʲ` and `C₀(A) = Σ c0_coeffs[j]·Aʲ`, with
/// `deg N ≤ k − 1` and `deg C₀ ≤ k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScliSpec {
    pub k: usize,
    pub n_coeffs: Vec<f64>,
    pub c0_coeffs: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScliSpecJson {
    k: usize,
    n_coeffs: Option<Vec<f64>>,
    c0_coeffs: Option<Vec<f64>>,
}

impl<'de> Deserialize<'de> for ScliSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ScliSpecJson::deserialize(d)?;
        let n = raw
            .n_coeffs
            .ok_or_else(|| serde::de::Error::custom("missing `n_coeffs`: N(A) must be a polynomial"))?;
        let spec = match raw.c0_coeffs {
            Some(c0) => ScliSpec::new(raw.k, n, c0),
            None => ScliSpec::consistent(raw.k, n),
        };
        spec.map_err(serde::de::Error::custom)
    }
}

impl ScliSpec {
    pub fn new(k: usize, n_coeffs: Vec<f64>, c0_coeffs: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if n_coeffs.iter().chain(&c0_coeffs).any(|c| !c.is_finite()) {
            return Err(invalid("coeffs", "coefficients must be finite"));
        }
        if let Some(d) = poly::degree(&n_coeffs) {
            if d > k - 1 {
                return Err(invalid("n_coeffs", format!("degree {d} exceeds k - 1 = {}", k - 1)));
            }
        }
        if let Some(d) = poly::degree(&c0_coeffs) {
            if d > k {
                return Err(invalid("c0_coeffs", format!("degree {d} exceeds k = {k}")));
            }
        }
        Ok(Self {
            k,
            n_coeffs,
            c0_coeffs,
        })
    }

    /// Spec with `C₀ = I + N·A`.
    pub fn consistent(k: usize, n_coeffs: Vec<f64>) -> Result<Self> {
        let mut c0 = Vec::with_capacity(n_coeffs.len() + 1);
        c0.push(1.0);
        c0.extend_from_slice(&n_coeffs);
        Self::new(k, n_coeffs, c0)
    }

    /// Extragradient with step `η`: `C₀ = I − ηA + (ηA)²`, `N = −ηI + η²A`.
    pub fn extragradient(eta: f64) -> Self {
        Self::consistent(2, vec![-eta, eta * eta]).expect("extragradient spec is well formed")
    }

    /// `C₀ = I`, `N = 0`: never moves.
    pub fn identity() -> Self {
        Self::new(1, Vec::new(), vec![1.0]).expect("identity spec is well formed")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `q₀(y) = Σ c0_coeffs[j]·yʲ`.
    pub fn q0(&self, y: Complex64) -> Complex64 {
        poly::eval_complex(&self.c0_coeffs, y)
    }

    pub fn q0_at(&self, nu: f64) -> Complex64 {
        self.q0(Complex64::new(0.0, nu))
    }

    pub fn spectral_profile(&self, nu: f64) -> SpectralProfile {
        let q = self.q0_at(nu);
        SpectralProfile {
            nu,
            q0_at_nui: q,
            magnitude: q.norm(),
            phase_theta: q.arg().rem_euclid(2.0 * PI),
        }
    }

    pub fn c0_matrix(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::matrix_polynomial(&self.c0_coeffs, a)
    }

    pub fn n_matrix(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::matrix_polynomial(&self.n_coeffs, a)
    }
}

/// `q₀(νi)` in polar form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralProfile {
    pub nu: f64,
    pub q0_at_nui: Complex64,
    pub magnitude: f64,
    /// In `[0, 2π)`.
    pub phase_theta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Consistency {
    pub consistent: bool,
    /// Largest coefficient deviation between `C₀` and `I + N·A`.
    pub residual: f64,
}

/// Compares `c0_coeffs` with the coefficients of `1 + y·N(y)`.
pub fn check_consistency(spec: &ScliSpec) -> Consistency {
    let mut expected = vec![1.0];
    expected.extend_from_slice(&spec.n_coeffs);
    let len = expected.len().max(spec.c0_coeffs.len());
    let mut residual = 0.0_f64;
    let mut scale = 1.0_f64;
    for j in 0..len {
        let e = expected.get(j).copied().unwrap_or(0.0);
        let c = spec.c0_coeffs.get(j).copied().unwrap_or(0.0);
        residual = residual.max((e - c).abs());
        scale = scale.max(e.abs()).max(c.abs());
    }
    Consistency {
        consistent: residual <= 1e-12 * scale,
        residual,
    }
}

fn require_consistent(spec: &ScliSpec) -> Result<()> {
    let c = check_consistency(spec);
    if !c.consistent {
        return Err(Error::InconsistentSpec { residual: c.residual });
    }
    Ok(())
}

fn check_start(inst: &BilinearInstance, z0: &DVector<f64>) -> Result<()> {
    if z0.len() != inst.n() {
        return Err(Error::DimensionMismatch {
            expected: inst.n(),
            got: z0.len(),
        });
    }
    Ok(())
}

/// Iterates `z⁰ … z^T` of the recurrence, with `C₀(A)` and `N(A)` built by Horner.
pub fn simulate_iterates(
    spec: &ScliSpec,
    inst: &BilinearInstance,
    z0: &DVector<f64>,
    iterations: usize,
) -> Result<Vec<DVector<f64>>> {
    check_start(inst, z0)?;
    let c0 = spec.c0_matrix(inst.a());
    let nb = spec.n_matrix(inst.a()) * inst.b();
    let mut out = Vec::with_capacity(iterations + 1);
    out.push(z0.clone());
    let mut z = z0.clone();
    for t in 0..iterations {
        z = &c0 * &z + &nb;
        check_finite(t + 1, &z)?;
        out.push(z.clone());
    }
    Ok(out)
}

/// Simulates the spec on a bilinear instance and records all losses.
pub fn simulate_scli(
    spec: &ScliSpec,
    inst: &BilinearInstance,
    z0: &DVector<f64>,
    iterations: usize,
) -> Result<Trace> {
    let iterates = simulate_iterates(spec, inst, z0, iterations)?;
    let ev = LossEvaluator::new(inst.operator(), Some(GapRegion::for_instance(inst)));
    Trace::from_iterates(Method::Scli, inst.half(), iterates, ev)
}

/// `q₀(νi)^t` by repeated squaring.
fn q_pow(q: Complex64, t: u64) -> Complex64 {
    let mut result = Complex64::new(1.0, 0.0);
    let mut base = q;
    let mut p = t;
    while p > 0 {
        if p & 1 == 1 {
            result *= base;
        }
        p >>= 1;
        if p > 0 {
            base *= base;
        }
    }
    result
}

/// `(C₀(A)^t − I)·A⁻¹b`, the `t`-th iterate from `z⁰ = 0`. Hard instances use the scalar
/// identity; other instances fall back to [`closed_form_iterate_dense`].
pub fn closed_form_iterate(spec: &ScliSpec, inst: &BilinearInstance, t: u64) -> Result<DVector<f64>> {
    require_consistent(spec)?;
    let Some(params) = inst.hard_params() else {
        return closed_form_iterate_dense(spec, inst, t);
    };
    let p = q_pow(spec.q0_at(params.nu), t);
    // A⁻¹b = −z* and A z* = −b.
    Ok(inst.z_star() * (1.0 - p.re) + inst.b() * (p.im / params.nu))
}

/// Same formula with `C₀(A)^t` formed densely by repeated squaring.
pub fn closed_form_iterate_dense(spec: &ScliSpec, inst: &BilinearInstance, t: u64) -> Result<DVector<f64>> {
    require_consistent(spec)?;
    let n = inst.n();
    let ct = linalg::matrix_power(&spec.c0_matrix(inst.a()), t);
    Ok((ct - DMatrix::identity(n, n)) * (-inst.z_star()))
}

fn log_q(spec: &ScliSpec, nu: f64) -> (f64, f64) {
    let q = spec.q0_at(nu);
    (q.norm().ln(), q.arg())
}

/// `‖F(z^t)‖² = |q₀(νi)|^{2t}·ν²D²`.
pub fn hamiltonian_closed_form(spec: &ScliSpec, params: &HardInstanceParams, t: u64) -> f64 {
    let (lm, _) = log_q(spec, params.nu);
    (2.0 * t as f64 * lm + 2.0 * (params.nu * params.d).ln()).exp()
}

/// `D·‖F(z^t)‖ = D·|q₀(νi)|^t·νD`.
pub fn gap_closed_form(spec: &ScliSpec, params: &HardInstanceParams, t: u64) -> f64 {
    let (lm, _) = log_q(spec, params.nu);
    (t as f64 * lm + params.nu.ln() + 2.0 * params.d.ln()).exp()
}

/// Exact ball gap `D(‖Mᵀx + b₂‖ + ‖My + b₁‖)` at `z^t`, which on the hard family equals
/// `√2·νD²·|q₀(νi)|^t·max(|cos tθ|, |sin tθ|)`.
pub fn gap_exact_closed_form(spec: &ScliSpec, params: &HardInstanceParams, t: u64) -> f64 {
    let (lm, theta) = log_q(spec, params.nu);
    let phase = t as f64 * theta;
    let envelope = (t as f64 * lm + params.nu.ln() + 2.0 * params.d.ln()).exp();
    SQRT_2 * envelope * phase.cos().abs().max(phase.sin().abs())
}

/// Signed `f(z^t) − f(z*) = (νD²/2)·Re(q₀(νi)^{2t})`.
pub fn function_value_closed_form(spec: &ScliSpec, params: &HardInstanceParams, t: u64) -> f64 {
    let (lm, theta) = log_q(spec, params.nu);
    let s = 2.0 * t as f64;
    let magnitude = (s * lm + params.nu.ln() + 2.0 * params.d.ln()).exp() / 2.0;
    magnitude * (s * theta).cos()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ham,
    Gap,
    Func,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NuSearchOptions {
    pub grid_points: usize,
    /// Golden-section stopping width in `ν`, relative to `L`.
    pub tol: f64,
}

impl Default for NuSearchOptions {
    fn default() -> Self {
        Self {
            grid_points: 10_000,
            tol: 1e-10,
        }
    }
}

/// A hard instance (through `ν*`) on which the spec's loss at the given horizon is at
/// least `loss_value`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NuCertificate {
    pub spec: ScliSpec,
    pub loss: LossKind,
    pub t: u64,
    /// Horizon attaining the value: `t`, or `2t` for function-value loss.
    pub horizon: u64,
    pub lipschitz: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub nu_star: f64,
    pub loss_value: f64,
    /// Search interval `[L/(40tk²), L]`.
    pub nu_range: (f64, f64),
}

/// Log of the loss at one horizon; `−∞` where it vanishes.
fn log_loss_at(spec: &ScliSpec, loss: LossKind, nu: f64, d: f64, t: u64) -> f64 {
    let (lm, theta) = log_q(spec, nu);
    let tf = t as f64;
    match loss {
        LossKind::Ham => 2.0 * tf * lm + 2.0 * (nu * d).ln(),
        LossKind::Gap => tf * lm + nu.ln() + 2.0 * d.ln(),
        LossKind::Func => {
            let s = 2.0 * tf;
            s * lm + (nu * d * d / 2.0).ln() + (s * theta).cos().abs().ln()
        }
    }
}

fn objective(spec: &ScliSpec, loss: LossKind, nu: f64, d: f64, t: u64) -> (f64, u64) {
    let v = log_loss_at(spec, loss, nu, d, t);
    let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
    if loss == LossKind::Func {
        let w = log_loss_at(spec, loss, nu, d, 2 * t);
        let w = if w.is_nan() { f64::NEG_INFINITY } else { w };
        if w > v {
            return (w, 2 * t);
        }
    }
    (v, t)
}

/// Maximizes the closed-form loss over `ν ∈ [L/(40tk²), L]` (log grid, then golden
/// section around the best grid point). Ties go to the smallest `ν`.
pub fn worst_case_nu_search(
    spec: &ScliSpec,
    lipschitz: f64,
    d: f64,
    t: u64,
    loss: LossKind,
) -> Result<NuCertificate> {
    worst_case_nu_search_with(spec, lipschitz, d, t, loss, NuSearchOptions::default())
}

pub fn worst_case_nu_search_with(
    spec: &ScliSpec,
    lipschitz: f64,
    d: f64,
    t: u64,
    loss: LossKind,
    opts: NuSearchOptions,
) -> Result<NuCertificate> {
    require_consistent(spec)?;
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(invalid("L", format!("must be positive, got {lipschitz}")));
    }
    if !(d >= 0.0 && d.is_finite()) {
        return Err(invalid("D", format!("must be non-negative, got {d}")));
    }
    if t == 0 {
        return Err(invalid("t", "horizon must be at least 1"));
    }
    if opts.grid_points < 3 {
        return Err(invalid("grid_points", "need at least 3 grid points"));
    }
    let k = spec.k as f64;
    let lo = lipschitz / (40.0 * t as f64 * k * k);
    let hi = lipschitz;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let m = opts.grid_points;
    let grid = |i: usize| -> f64 {
        if i + 1 == m {
            hi
        } else {
            (llo + (lhi - llo) * i as f64 / (m - 1) as f64).exp()
        }
    };

    let (best_i, (best_v, _)) = (0..m)
        .into_par_iter()
        .map(|i| (i, objective(spec, loss, grid(i), d, t)))
        .reduce(
            || (usize::MAX, (f64::NEG_INFINITY, t)),
            |a, b| {
                if b.1 .0 > a.1 .0 || (b.1 .0 == a.1 .0 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            },
        );

    let mut nu_star = grid(best_i);
    let mut value = best_v;
    if best_v.is_finite() {
        let a = grid(best_i.saturating_sub(1));
        let b = grid((best_i + 1).min(m - 1));
        let (nu_g, v_g) = golden_section_max(|nu| objective(spec, loss, nu, d, t).0, a, b, opts.tol * lipschitz);
        if v_g > value {
            nu_star = nu_g;
            value = v_g;
        }
    }
    let (_, horizon) = objective(spec, loss, nu_star, d, t);
    Ok(NuCertificate {
        spec: spec.clone(),
        loss,
        t,
        horizon,
        lipschitz,
        d,
        nu_star,
        loss_value: value.exp(),
        nu_range: (lo, hi),
    })
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

impl NuCertificate {
    /// Simulates the spec step by step on the `n`-dimensional hard instance with `ν*` and
    /// returns the relative deviation of the directly measured loss from `loss_value`.
    pub fn revalidate(&self, n: usize) -> Result<f64> {
        let inst = BilinearInstance::hard(HardInstanceParams::new(n, self.nu_star, self.d))?;
        let iterates = simulate_iterates(&self.spec, &inst, &DVector::zeros(n), self.horizon as usize)?;
        let z = iterates.last().expect("at least one iterate");
        let region = GapRegion::for_instance(&inst);
        let direct = match self.loss {
            LossKind::Ham => metrics::hamiltonian(&inst.operator(), z)?,
            LossKind::Gap => metrics::gap_residual(&inst, &region, z)?,
            LossKind::Func => metrics::function_value_loss(&inst, z)?,
        };
        Ok((direct - self.loss_value).abs() / self.loss_value.abs().max(f64::MIN_POSITIVE))
    }
}

/// Horizon `T = ⌊(k−1)/2⌋` of the averaged extragradient run folded into one step.
pub fn tightness_horizon(k: usize) -> usize {
    (k.saturating_sub(1)) / 2
}

/// [`build_tightness_spec_with_step`] with `η = 1/(2L)`.
pub fn build_tightness_spec(k: usize, lipschitz: f64) -> Result<ScliSpec> {
    build_tightness_spec_with_step(k, lipschitz, 1.0 / (2.0 * lipschitz))
}

/// One-step spec with `N' = (C₀^T + 2C₀^{T−1} + … + (T+1)I)·N/(T+1)` built from
/// extragradient with step `eta`, so its first iterate from the origin is the mean of
/// the extragradient iterates `w¹ … w^{T+1}`.
///
/// `deg N' = 2T + 1`, which is `k` for odd `k`; the returned spec carries
/// `k = 2T + 2` so its degree invariants hold.
pub fn build_tightness_spec_with_step(k: usize, lipschitz: f64, eta: f64) -> Result<ScliSpec> {
    if k < 3 {
        return Err(invalid("k", format!("need k >= 3, got {k}")));
    }
    if !(lipschitz > 0.0 && eta > 0.0) {
        return Err(invalid("eta", "L and eta must be positive"));
    }
    let horizon = tightness_horizon(k);
    let c0 = [1.0, -eta, eta * eta];
    let n = [-eta, eta * eta];
    // Horner in C₀: ((1·C₀ + 2)·C₀ + 3)… + (T+1).
    let mut acc = vec![1.0];
    for j in 1..=horizon {
        acc = poly::add(&poly::mul(&acc, &c0), &[(j + 1) as f64]);
    }
    let n_prime = poly::scale(&poly::mul(&acc, &n), 1.0 / (horizon as f64 + 1.0));
    ScliSpec::consistent(2 * horizon + 2, n_prime)
}

/// Runs the two-term recurrence for running means of extragradient,
/// `v^{t+1} = (I + C)·(t+1)/(t+2)·v^t − C·t/(t+2)·v^{t−1} + N·b/(t+2)`,
/// and returns `max_t ‖v^t − z̄^t‖` against averaged [`solvers::run_eg`] iterates.
pub fn averaged_eg_as_2cli_check(
    inst: &BilinearInstance,
    eta: f64,
    iterations: usize,
    z0: Option<&DVector<f64>>,
) -> Result<f64> {
    let n = inst.n();
    let z0 = z0.cloned().unwrap_or_else(|| DVector::zeros(n));
    check_start(inst, &z0)?;
    let spec = ScliSpec::extragradient(eta);
    let c = spec.c0_matrix(inst.a());
    let i_plus_c = &c + DMatrix::identity(n, n);
    let nb = spec.n_matrix(inst.a()) * inst.b();

    let mut vs = Vec::with_capacity(iterations + 1);
    vs.push(z0.clone());
    for t in 0..iterations {
        let tf = t as f64;
        let mut next = &i_plus_c * &vs[t] * ((tf + 1.0) / (tf + 2.0)) + &nb / (tf + 2.0);
        if t > 0 {
            next -= &c * &vs[t - 1] * (tf / (tf + 2.0));
        }
        check_finite(t + 1, &next)?;
        vs.push(next);
    }

    let cfg = SolverConfig::eg(eta, iterations).with_z0(&z0);
    let trace = solvers::average_trace(&solvers::run_eg(&inst.operator(), &cfg)?)?;
    let avg = trace.averaged_iterates.expect("average_trace fills averages");
    Ok(vs
        .iter()
        .zip(&avg)
        .map(|(v, w)| (v - w).norm())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> HardInstanceParams {
        HardInstanceParams::new(2, 1.0, 1.0)
    }

    #[test]
    fn consistency_examples() {
        let eta = 0.3;
        let eg = ScliSpec::extragradient(eta);
        assert_eq!(eg.c0_coeffs, vec![1.0, -eta, eta * eta]);
        let c = check_consistency(&eg);
        assert!(c.consistent);
        assert_eq!(c.residual, 0.0);

        let bad = ScliSpec::new(2, vec![-2.0 * eta], vec![1.0, -eta]).unwrap();
        let c = check_consistency(&bad);
        assert!(!c.consistent);
        assert_relative_eq!(c.residual, eta, epsilon = 1e-15);

        let id = ScliSpec::identity();
        assert!(check_consistency(&id).consistent);
    }

    #[test]
    fn degree_limits() {
        assert!(ScliSpec::new(1, vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(ScliSpec::new(1, vec![1.0], vec![1.0, 1.0, 1.0]).is_err());
        assert!(ScliSpec::new(0, vec![], vec![1.0]).is_err());
        assert!(ScliSpec::new(2, vec![1.0, 0.0, 0.0], vec![1.0]).is_ok());
    }

    #[test]
    fn json_forms() {
        let s = ScliSpec::from_json(r#"{"k": 2, "n_coeffs": [-0.5, 0.25]}"#).unwrap();
        assert_eq!(s, ScliSpec::extragradient(0.5));
        assert!(ScliSpec::from_json(r#"{"k": 1, "c0_coeffs": [0.0]}"#).is_err());
        let back = ScliSpec::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn eg_spec_matches_solver() {
        let inst = BilinearInstance::hard(HardInstanceParams::new(4, 0.8, 1.5)).unwrap();
        let eta = 0.1;
        let sim = simulate_iterates(&ScliSpec::extragradient(eta), &inst, &DVector::zeros(4), 200).unwrap();
        let eg = solvers::run_eg(&inst.operator(), &SolverConfig::eg(eta, 200)).unwrap();
        for (a, b) in sim.iter().zip(&eg.iterates) {
            assert!((a - b).norm() <= 1e-9 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn simulation_from_zero_offset_is_zero() {
        let inst = BilinearInstance::hard(HardInstanceParams::new(2, 1.0, 0.0)).unwrap();
        let tr = simulate_scli(&ScliSpec::extragradient(0.4), &inst, &DVector::zeros(2), 10).unwrap();
        assert!(tr.iterates.iter().all(|z| z.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn closed_form_examples() {
        let inst = BilinearInstance::hard(params()).unwrap();
        let eg = ScliSpec::extragradient(0.1);
        assert!(closed_form_iterate(&eg, &inst, 0).unwrap().norm() == 0.0);
        let z1 = closed_form_iterate(&eg, &inst, 1).unwrap();
        let run = solvers::run_eg(&inst.operator(), &SolverConfig::eg(0.1, 1)).unwrap();
        assert!((&z1 - &run.iterates[1]).norm() <= 1e-12);
        let dense = closed_form_iterate_dense(&eg, &inst, 1).unwrap();
        assert!((&z1 - &dense).norm() <= 1e-12);

        let bad = ScliSpec::new(2, vec![-0.2], vec![1.0, -0.1]).unwrap();
        assert!(matches!(
            closed_form_iterate(&bad, &inst, 3),
            Err(Error::InconsistentSpec { .. })
        ));
    }

    #[test]
    fn closed_form_long_horizon() {
        let inst = BilinearInstance::hard(HardInstanceParams::new(2, 0.7, 1.0)).unwrap();
        let eg = ScliSpec::extragradient(0.05);
        let sim = simulate_iterates(&eg, &inst, &DVector::zeros(2), 10_000).unwrap();
        let cf = closed_form_iterate(&eg, &inst, 10_000).unwrap();
        let last = sim.last().unwrap();
        assert!((&cf - last).norm() <= 1e-8 * last.norm().max(inst.d()));
    }

    #[test]
    fn loss_closed_forms() {
        let p = params();
        let inst = BilinearInstance::hard(p).unwrap();
        let eg = ScliSpec::extragradient(0.1);
        assert_relative_eq!(hamiltonian_closed_form(&eg, &p, 0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(hamiltonian_closed_form(&eg, &p, 1), 0.9901, epsilon = 1e-12);
        assert_relative_eq!(gap_closed_form(&eg, &p, 0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(function_value_closed_form(&eg, &p, 0), 0.5, epsilon = 1e-15);
        let id = ScliSpec::identity();
        for t in [0, 1, 7, 1000] {
            assert_relative_eq!(gap_closed_form(&id, &p, t), 1.0, epsilon = 1e-15);
        }
        let region = GapRegion::for_instance(&inst);
        for t in [1, 2, 5, 40, 333] {
            let z = closed_form_iterate(&eg, &inst, t).unwrap();
            let ham = metrics::hamiltonian(&inst.operator(), &z).unwrap();
            assert_relative_eq!(hamiltonian_closed_form(&eg, &p, t), ham, max_relative = 1e-10);
            let gap = metrics::gap_residual(&inst, &region, &z).unwrap();
            assert_relative_eq!(gap_closed_form(&eg, &p, t), gap, max_relative = 1e-10);
            let exact = metrics::gap_bilinear(&inst, &region, &z).unwrap();
            assert_relative_eq!(gap_exact_closed_form(&eg, &p, t), exact, max_relative = 1e-10);
            let fv = inst.eval_f(&z).unwrap() - inst.eval_f(inst.z_star()).unwrap();
            assert_relative_eq!(function_value_closed_form(&eg, &p, t), fv, max_relative = 1e-9, epsilon = 1e-13);
        }
        for w in (0..50).map(|t| hamiltonian_closed_form(&eg, &p, t)).collect::<Vec<_>>().windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn function_value_vanishes_at_quarter_phase() {
        // q₀ = e^{iπ/4} gives 2tθ = π/2 at t = 1.
        let (s, c) = (PI / 4.0).sin_cos();
        let spec = ScliSpec::consistent(2, vec![-s, 1.0 - c]).unwrap();
        let q = spec.q0_at(1.0);
        assert_relative_eq!(q.re, c, epsilon = 1e-15);
        assert_relative_eq!(q.im, -s, epsilon = 1e-15);
        let v = function_value_closed_form(&spec, &params(), 1);
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn spectral_profile_roundtrip() {
        let eg = ScliSpec::extragradient(0.3);
        for nu in [0.1, 0.5, 1.0, 3.0] {
            let p = eg.spectral_profile(nu);
            assert!((Complex64::from_polar(p.magnitude, p.phase_theta) - p.q0_at_nui).norm() < 1e-12);
            assert!((0.0..2.0 * PI).contains(&p.phase_theta));
            assert_eq!(eg.q0_at(-nu), p.q0_at_nui.conj());
        }
    }

    #[test]
    fn nu_search_examples() {
        let (l, d) = (1.0, 1.0);
        let eg = ScliSpec::extragradient(1.0 / (2.0 * l));
        for t in [10_u64, 100] {
            let ham = worst_case_nu_search(&eg, l, d, t, LossKind::Ham).unwrap();
            assert!(ham.loss_value >= l * l * d * d / (20.0 * t as f64 * 4.0));
            let gap = worst_case_nu_search(&eg, l, d, t, LossKind::Gap).unwrap();
            assert!(gap.loss_value >= l * d * d / (2.0 * (20.0 * t as f64).sqrt()));
            assert!(ham.revalidate(2).unwrap() <= 1e-8);
            assert!(gap.revalidate(4).unwrap() <= 1e-8);
        }
        let id = worst_case_nu_search(&ScliSpec::identity(), l, d, 5, LossKind::Ham).unwrap();
        assert_relative_eq!(id.nu_star, l, epsilon = 1e-12);
        assert_relative_eq!(id.loss_value, l * l * d * d, max_relative = 1e-12);
    }

    #[test]
    fn tightness_k3_by_hand() {
        let l = 1.0;
        let eta = 0.5;
        let spec = build_tightness_spec(3, l).unwrap();
        // (C₀ + 2)·N/2 with C₀ = 1 − ηy + η²y², N = −η + η²y.
        let expected = poly::scale(&poly::mul(&[3.0, -eta, eta * eta], &[-eta, eta * eta]), 0.5);
        assert_eq!(spec.n_coeffs.len(), expected.len());
        for (a, b) in spec.n_coeffs.iter().zip(&expected) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        assert!(check_consistency(&spec).consistent);
        assert!(build_tightness_spec(2, l).is_err());
    }

    #[test]
    fn two_cli_small_cases() {
        let inst = BilinearInstance::hard(params()).unwrap();
        assert!(averaged_eg_as_2cli_check(&inst, 0.1, 0, None).unwrap() == 0.0);
        assert!(averaged_eg_as_2cli_check(&inst, 0.1, 200, None).unwrap() <= 1e-9);
        let zero = BilinearInstance::hard(HardInstanceParams::new(2, 1.0, 0.0)).unwrap();
        assert_eq!(averaged_eg_as_2cli_check(&zero, 0.1, 50, None).unwrap(), 0.0);
    }
}
