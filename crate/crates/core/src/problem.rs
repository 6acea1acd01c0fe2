//! Saddle-point problems, their monotone operators and the bilinear instance family.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;

/// A point `z = (x, y)` stored as one vector; `x` is the first `split` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SaddlePoint {
    data: DVector<f64>,
    split: usize,
}

impl SaddlePoint {
    pub fn new(data: DVector<f64>, split: usize) -> Result<Self> {
        let n = data.len();
        if split == 0 || split >= n {
            return Err(invalid(
                "split",
                format!("need 0 < split < n, got split = {split}, n = {n}"),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid("data", format!("entry {i} is not finite")));
        }
        Ok(Self { data, split })
    }

    pub fn zeros(n: usize, split: usize) -> Result<Self> {
        Self::new(DVector::zeros(n), split)
    }

    pub fn from_parts(x: &[f64], y: &[f64]) -> Result<Self> {
        let data = DVector::from_iterator(x.len() + y.len(), x.iter().chain(y).copied());
        Self::new(data, x.len())
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn x(&self) -> DVector<f64> {
        self.data.rows(0, self.split).into_owned()
    }

    pub fn y(&self) -> DVector<f64> {
        self.data.rows(self.split, self.data.len() - self.split).into_owned()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.data
    }
}

impl Deref for SaddlePoint {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.data
    }
}

type ValueFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacobianFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A monotone operator `F: Rⁿ → Rⁿ` with its smoothness constants.
///
/// Handles built from a [`BilinearInstance`] remember the instance so that solvers can
/// report instance-specific losses (exact gap, function value, distance to `z*`).
#[derive(Clone)]
pub struct OperatorHandle {
    dim: usize,
    value: Arc<ValueFn>,
    jacobian: Option<Arc<JacobianFn>>,
    lipschitz: f64,
    jac_lipschitz: Option<f64>,
    solution: Option<DVector<f64>>,
    instance: Option<Arc<BilinearInstance>>,
}

impl fmt::Debug for OperatorHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorHandle")
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .field("jac_lipschitz", &self.jac_lipschitz)
            .field("has_jacobian", &self.jacobian.is_some())
            .field("bilinear", &self.instance.is_some())
            .finish()
    }
}

/// Wraps a black-box operator. Monotonicity is not checked here; see
/// [`OperatorHandle::check_monotone`].
pub fn wrap_general_operator<V, J>(
    dim: usize,
    value_fn: V,
    jacobian_fn: Option<J>,
    lipschitz: f64,
    jac_lipschitz: Option<f64>,
) -> OperatorHandle
where
    V: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
{
    OperatorHandle {
        dim,
        value: Arc::new(value_fn),
        jacobian: jacobian_fn.map(|j| Arc::new(j) as Arc<JacobianFn>),
        lipschitz,
        jac_lipschitz,
        solution: None,
        instance: None,
    }
}

/// Outcome of randomized monotonicity / Lipschitz sampling.
#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityReport {
    pub pairs: usize,
    /// Smallest observed `⟨F(z) − F(z'), z − z'⟩`.
    pub worst_inner: f64,
    pub monotone_violations: usize,
    /// Largest observed `‖F(z) − F(z')‖ / ‖z − z'‖`.
    pub max_ratio: f64,
    pub lipschitz_violations: usize,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.monotone_violations == 0 && self.lipschitz_violations == 0
    }
}

pub const DEFAULT_MONOTONE_PAIRS: usize = 256;

impl OperatorHandle {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn jac_lipschitz(&self) -> Option<f64> {
        self.jac_lipschitz
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// Known root `z*` of the operator, if any.
    pub fn solution(&self) -> Option<&DVector<f64>> {
        self.solution.as_ref()
    }

    pub fn with_solution(mut self, z_star: DVector<f64>) -> Self {
        self.solution = Some(z_star);
        self
    }

    pub fn bilinear(&self) -> Option<&BilinearInstance> {
        self.instance.as_deref()
    }

    /// `F(z)` with a dimension check.
    pub fn value(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: z.len(),
            });
        }
        Ok((self.value)(z))
    }

    pub(crate) fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        (self.value)(z)
    }

    pub fn jacobian(&self, z: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(z))
    }

    /// Analytic Jacobian when available, otherwise central differences if `allow_fd`.
    pub fn jacobian_or_fd(&self, z: &DVector<f64>, allow_fd: bool) -> Result<DMatrix<f64>> {
        if let Some(j) = self.jacobian(z) {
            return Ok(j);
        }
        if !allow_fd {
            return Err(Error::MissingJacobian);
        }
        Ok(self.finite_difference_jacobian(z))
    }

    pub fn finite_difference_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * (1.0 + z[j].abs());
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let col = (self.apply(&zp) - self.apply(&zm)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        jac
    }

    /// Samples `pairs` point pairs from `N(0, scale²)` and tests monotonicity and the
    /// Lipschitz constant. Pair tolerance is `1e-8·scale·(1 + ‖ΔF‖‖Δz‖)`.
    pub fn check_monotone(&self, pairs: usize, scale: f64, seed: u64) -> MonotonicityReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = MonotonicityReport {
            pairs,
            worst_inner: f64::INFINITY,
            monotone_violations: 0,
            max_ratio: 0.0,
            lipschitz_violations: 0,
        };
        for _ in 0..pairs {
            let z = linalg::gaussian_vector(&mut rng, self.dim) * scale;
            let w = linalg::gaussian_vector(&mut rng, self.dim) * scale;
            let df = self.apply(&z) - self.apply(&w);
            let dz = &z - &w;
            let inner = df.dot(&dz);
            let tol = 1e-8 * scale * (1.0 + df.norm() * dz.norm());
            report.worst_inner = report.worst_inner.min(inner);
            if inner < -tol {
                report.monotone_violations += 1;
            }
            let dz_norm = dz.norm();
            if dz_norm > 0.0 {
                report.max_ratio = report.max_ratio.max(df.norm() / dz_norm);
            }
            if df.norm() > self.lipschitz * dz_norm + tol {
                report.lipschitz_violations += 1;
            }
        }
        report
    }
}

/// Parameters of the hard instance `M = νI`, `b₁ = b₂ = (νD/√n)·1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardInstanceParams {
    pub n: usize,
    pub nu: f64,
    #[serde(rename = "D")]
    pub d: f64,
}

impl HardInstanceParams {
    pub fn new(n: usize, nu: f64, d: f64) -> Self {
        Self { n, nu, d }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !self.n.is_multiple_of(2) {
            return Err(invalid("n", format!("must be even and positive, got {}", self.n)));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(invalid("nu", format!("must be positive, got {}", self.nu)));
        }
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return Err(invalid("D", format!("must be non-negative, got {}", self.d)));
        }
        Ok(())
    }
}

/// Bilinear problem `f(x, y) = xᵀMy + b₁ᵀx + b₂ᵀy` with operator `F(z) = Az + b`,
/// `A = [[0, M], [−Mᵀ, 0]]`, `b = (b₁, −b₂)`.
#[derive(Clone, Debug)]
pub struct BilinearInstance {
    m: DMatrix<f64>,
    b1: DVector<f64>,
    b2: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    z_star: DVector<f64>,
    d: f64,
    lipschitz: f64,
    hard: Option<HardInstanceParams>,
}

impl BilinearInstance {
    pub fn new(m: DMatrix<f64>, b1: DVector<f64>, b2: DVector<f64>) -> Result<Self> {
        let h = m.nrows();
        if h == 0 || m.ncols() != h {
            return Err(invalid(
                "M",
                format!("must be square and non-empty, got {}x{}", m.nrows(), m.ncols()),
            ));
        }
        if b1.len() != h {
            return Err(Error::DimensionMismatch {
                expected: h,
                got: b1.len(),
            });
        }
        if b2.len() != h {
            return Err(Error::DimensionMismatch {
                expected: h,
                got: b2.len(),
            });
        }
        if m.iter().chain(b1.iter()).chain(b2.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("M", "entries must be finite"));
        }
        let sv = m.singular_values();
        let (sigma_min, sigma_max) = (sv.min(), sv.max());
        if !(sigma_min > (h as f64) * f64::EPSILON * sigma_max) {
            return Err(Error::SingularMatrix { sigma_min });
        }

        let n = 2 * h;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, h), (h, h)).copy_from(&m);
        a.view_mut((h, 0), (h, h)).copy_from(&(-m.transpose()));
        let mut b = DVector::zeros(n);
        b.rows_mut(0, h).copy_from(&b1);
        b.rows_mut(h, h).copy_from(&(-&b2));

        let lu = a.clone().lu();
        let z_star = lu
            .solve(&(-&b))
            .ok_or(Error::SingularMatrix { sigma_min })?;
        let d = z_star.norm();

        Ok(Self {
            m,
            b1,
            b2,
            a,
            b,
            z_star,
            d,
            lipschitz: sigma_max,
            hard: None,
        })
    }

    /// Builds the `M = νI` instance; `D = 0` gives the already-solved instance `b = 0`.
    pub fn hard(params: HardInstanceParams) -> Result<Self> {
        params.validate()?;
        let h = params.n / 2;
        let entry = params.nu * params.d / (params.n as f64).sqrt();
        let m = DMatrix::identity(h, h) * params.nu;
        let b1 = DVector::from_element(h, entry);
        let mut inst = Self::new(m, b1.clone(), b1)?;
        inst.hard = Some(params);
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn half(&self) -> usize {
        self.m.nrows()
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn b1(&self) -> &DVector<f64> {
        &self.b1
    }

    pub fn b2(&self) -> &DVector<f64> {
        &self.b2
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn z_star(&self) -> &DVector<f64> {
        &self.z_star
    }

    pub fn z_star_point(&self) -> SaddlePoint {
        SaddlePoint {
            data: self.z_star.clone(),
            split: self.half(),
        }
    }

    /// `‖A⁻¹b‖`, the distance from the origin to `z*`.
    pub fn d(&self) -> f64 {
        self.d
    }

    /// Largest singular value of `M` (the Lipschitz constant of `F`).
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn hard_params(&self) -> Option<HardInstanceParams> {
        self.hard
    }

    pub fn origin(&self) -> SaddlePoint {
        SaddlePoint {
            data: DVector::zeros(self.n()),
            split: self.half(),
        }
    }

    fn check_dim(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: z.len(),
            });
        }
        Ok(())
    }

    /// `F(z) = Az + b`.
    pub fn eval_operator(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(z)?;
        Ok(&self.a * z + &self.b)
    }

    /// `f(x, y) = xᵀMy + b₁ᵀx + b₂ᵀy`.
    pub fn eval_f(&self, z: &DVector<f64>) -> Result<f64> {
        self.check_dim(z)?;
        Ok(self.f_unchecked(z))
    }

    pub(crate) fn f_unchecked(&self, z: &DVector<f64>) -> f64 {
        let h = self.half();
        let x = z.rows(0, h);
        let y = z.rows(h, h);
        x.dot(&(&self.m * y)) + self.b1.dot(&x) + self.b2.dot(&y)
    }

    /// Operator handle carrying `A` as its Jacobian, `L = σ_max(M)`, `Λ = 0` and `z*`.
    pub fn operator(&self) -> OperatorHandle {
        let a = self.a.clone();
        let b = self.b.clone();
        let jac = self.a.clone();
        OperatorHandle {
            dim: self.n(),
            value: Arc::new(move |z: &DVector<f64>| &a * z + &b),
            jacobian: Some(Arc::new(move |_: &DVector<f64>| jac.clone())),
            lipschitz: self.lipschitz,
            jac_lipschitz: Some(0.0),
            solution: Some(self.z_star.clone()),
            instance: Some(Arc::new(self.clone())),
        }
    }

    /// Bilinear operator plus the smooth monotone term `ε·(z − sin z)` (componentwise).
    ///
    /// The added term is the gradient of the convex `Σ(z²/2 + cos z)`, so the sum stays
    /// monotone; its Jacobian `diag(1 − cos z)` is `ε`-Lipschitz and bounded by `2ε`.
    /// The root is unchanged only when `z* = 0`, so no solution is attached.
    pub fn perturbed_operator(&self, eps: f64) -> OperatorHandle {
        let a = self.a.clone();
        let b = self.b.clone();
        let ja = self.a.clone();
        let value = move |z: &DVector<f64>| &a * z + &b + z.map(|v| eps * (v - v.sin()));
        let jacobian = move |z: &DVector<f64>| {
            let mut j = ja.clone();
            for i in 0..z.len() {
                j[(i, i)] += eps * (1.0 - z[i].cos());
            }
            j
        };
        wrap_general_operator(
            self.n(),
            value,
            Some(jacobian),
            self.lipschitz + 2.0 * eps.abs(),
            Some(eps.abs()),
        )
    }

    pub fn to_spec(&self) -> InstanceSpec {
        match self.hard {
            Some(p) => InstanceSpec::Hard(p),
            None => InstanceSpec::General {
                m: MatrixData::Rows(linalg::to_rows(&self.m)),
                b1: self.b1.iter().copied().collect(),
                b2: self.b2.iter().copied().collect(),
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_spec())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: InstanceSpec = serde_json::from_str(s)?;
        spec.build()
    }
}

/// Same as [`BilinearInstance::hard`].
pub fn make_hard_instance(params: HardInstanceParams) -> Result<BilinearInstance> {
    BilinearInstance::hard(params)
}

/// Matrix given either as nested rows or as a flat row-major array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixData {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

/// Serialized form of an instance: `{n, nu, D}` for the hard family or
/// `{M, b1, b2}` for a general bilinear problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceSpec {
    Hard(HardInstanceParams),
    General {
        #[serde(rename = "M")]
        m: MatrixData,
        b1: Vec<f64>,
        b2: Vec<f64>,
    },
}

impl InstanceSpec {
    /// Re-derives `A`, `b`, `z*`, `D`, `L` and validates the instance.
    pub fn build(&self) -> Result<BilinearInstance> {
        match self {
            InstanceSpec::Hard(p) => BilinearInstance::hard(*p),
            InstanceSpec::General { m, b1, b2 } => {
                let h = b1.len();
                let m = match m {
                    MatrixData::Rows(rows) => linalg::from_rows(rows)
                        .ok_or_else(|| invalid("M", "rows have unequal lengths"))?,
                    MatrixData::Flat(flat) => {
                        if flat.len() != h * h {
                            return Err(Error::DimensionMismatch {
                                expected: h * h,
                                got: flat.len(),
                            });
                        }
                        DMatrix::from_row_slice(h, h, flat)
                    }
                };
                BilinearInstance::new(m, DVector::from_vec(b1.clone()), DVector::from_vec(b2.clone()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn unit() -> BilinearInstance {
        BilinearInstance::hard(HardInstanceParams::new(2, 1.0, 1.0)).unwrap()
    }

    #[test]
    fn saddle_point_validation() {
        assert!(SaddlePoint::new(DVector::from_vec(vec![1.0, 2.0]), 0).is_err());
        assert!(SaddlePoint::new(DVector::from_vec(vec![1.0, 2.0]), 2).is_err());
        assert!(SaddlePoint::new(DVector::from_vec(vec![1.0, f64::NAN]), 1).is_err());
        let p = SaddlePoint::from_parts(&[1.0, 2.0], &[3.0]).unwrap();
        assert_eq!(p.split(), 2);
        assert_eq!(p.y().as_slice(), &[3.0]);
    }

    #[test]
    fn operator_examples() {
        let inst = unit();
        let f_star = inst.eval_operator(inst.z_star()).unwrap();
        assert!(f_star.norm() < 1e-15);

        let f0 = inst.eval_operator(&DVector::zeros(2)).unwrap();
        assert_relative_eq!(f0[0], S, epsilon = 1e-15);
        assert_relative_eq!(f0[1], -S, epsilon = 1e-15);

        // A = [[0,1],[-1,0]]: A·(1,0) = (0,-1).
        let f = inst.eval_operator(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_relative_eq!(f[0], S, epsilon = 1e-15);
        assert_relative_eq!(f[1], -1.0 - S, epsilon = 1e-15);

        match inst.eval_operator(&DVector::zeros(3)) {
            Err(Error::DimensionMismatch { expected: 2, got: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn function_value_examples() {
        let inst = unit();
        assert_eq!(inst.eval_f(&DVector::zeros(2)).unwrap(), 0.0);
        // x·y + b1·x + b2·y at (−1/√2, −1/√2): 1/2 − 1/2 − 1/2.
        assert_relative_eq!(inst.eval_f(inst.z_star()).unwrap(), -0.5, epsilon = 1e-15);
        let v = inst.eval_f(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(v, 1.0 + 2.0_f64.sqrt(), epsilon = 1e-15);
        assert!(inst.eval_f(&DVector::zeros(4)).is_err());
    }

    #[test]
    fn hard_instance_examples() {
        let inst = unit();
        assert_relative_eq!(inst.b()[0], S, epsilon = 1e-15);
        assert_relative_eq!(inst.b()[1], -S, epsilon = 1e-15);
        assert_relative_eq!(inst.z_star()[0], -S, epsilon = 1e-15);
        assert_relative_eq!(inst.z_star()[1], -S, epsilon = 1e-15);
        assert_relative_eq!(inst.d(), 1.0, epsilon = 1e-15);

        let four = BilinearInstance::hard(HardInstanceParams::new(4, 1.0, 1.0)).unwrap();
        for ev in four.a().complex_eigenvalues().iter() {
            assert!(ev.re.abs() <= 1e-10);
            assert_relative_eq!(ev.norm(), 1.0, max_relative = 1e-10);
        }

        let degenerate = BilinearInstance::hard(HardInstanceParams::new(2, 1.0, 0.0)).unwrap();
        assert_eq!(degenerate.b().norm(), 0.0);
        assert_eq!(degenerate.z_star().norm(), 0.0);
        assert_eq!(degenerate.d(), 0.0);
    }

    #[test]
    fn hard_instance_rejects_bad_params() {
        assert!(BilinearInstance::hard(HardInstanceParams::new(3, 1.0, 1.0)).is_err());
        assert!(BilinearInstance::hard(HardInstanceParams::new(0, 1.0, 1.0)).is_err());
        assert!(BilinearInstance::hard(HardInstanceParams::new(2, 0.0, 1.0)).is_err());
        assert!(BilinearInstance::hard(HardInstanceParams::new(2, -1.0, 1.0)).is_err());
        assert!(BilinearInstance::hard(HardInstanceParams::new(2, 1.0, -1.0)).is_err());
    }

    #[test]
    fn singular_m_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            BilinearInstance::new(m, b.clone(), b),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn wrapped_operators() {
        let inst = unit();
        let op = inst.operator();
        assert_eq!(op.value(&DVector::zeros(2)).unwrap(), *inst.b());
        assert!(op.check_monotone(DEFAULT_MONOTONE_PAIRS, 1.0, 1).passed());

        let identity = wrap_general_operator(
            3,
            |z: &DVector<f64>| z.clone(),
            Some(|_: &DVector<f64>| DMatrix::identity(3, 3)),
            1.0,
            Some(0.0),
        );
        assert!(identity.check_monotone(DEFAULT_MONOTONE_PAIRS, 1.0, 2).passed());

        let negated = wrap_general_operator(
            3,
            |z: &DVector<f64>| -z,
            None::<fn(&DVector<f64>) -> DMatrix<f64>>,
            1.0,
            None,
        );
        let rep = negated.check_monotone(DEFAULT_MONOTONE_PAIRS, 1.0, 3);
        assert!(!rep.passed());
        assert_eq!(rep.monotone_violations, DEFAULT_MONOTONE_PAIRS);
        assert!(matches!(
            negated.jacobian_or_fd(&DVector::zeros(3), false),
            Err(Error::MissingJacobian)
        ));
    }

    #[test]
    fn perturbed_operator_is_monotone_with_declared_constants() {
        let inst = BilinearInstance::hard(HardInstanceParams::new(4, 1.0, 1.0)).unwrap();
        let op = inst.perturbed_operator(0.05);
        let rep = op.check_monotone(512, 3.0, 11);
        assert!(rep.passed(), "{rep:?}");
        let z = DVector::from_vec(vec![0.3, -1.2, 2.0, 0.7]);
        let fd = op.finite_difference_jacobian(&z);
        let exact = op.jacobian(&z).unwrap();
        assert!((fd - exact).abs().max() < 1e-6);
    }

    #[test]
    fn json_round_trip() {
        let inst = unit();
        let back = BilinearInstance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(back.hard_params(), inst.hard_params());

        let general = r#"{"M": [[2.0, 1.0], [0.0, 1.0]], "b1": [1.0, 0.0], "b2": [0.5, -1.0]}"#;
        let g = BilinearInstance::from_json(general).unwrap();
        assert_relative_eq!(g.lipschitz(), g.m().singular_values().max());
        assert!(g.eval_operator(g.z_star()).unwrap().norm() < 1e-12);
        let again = BilinearInstance::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(again.m(), g.m());

        let flat = r#"{"M": [2.0, 1.0, 0.0, 1.0], "b1": [1.0, 0.0], "b2": [0.5, -1.0]}"#;
        assert_eq!(BilinearInstance::from_json(flat).unwrap().m(), g.m());

        let singular = r#"{"M": [[0.0, 0.0], [0.0, 1.0]], "b1": [1.0, 0.0], "b2": [0.5, -1.0]}"#;
        assert!(BilinearInstance::from_json(singular).is_err());
        let odd = r#"{"n": 3, "nu": 1.0, "D": 1.0}"#;
        assert!(BilinearInstance::from_json(odd).is_err());
    }
}
