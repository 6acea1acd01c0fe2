//! Solution-quality functionals: Hamiltonian, gaps over balls, function-value loss.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problem::{BilinearInstance, OperatorHandle};

/// The product of balls `Ball(x*, D) × Ball(y*, D)` over which gaps are measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRegion {
    pub center: DVector<f64>,
    pub split: usize,
    pub radius: f64,
}

impl GapRegion {
    pub fn new(center: DVector<f64>, split: usize, radius: f64) -> Result<Self> {
        if split == 0 || split >= center.len() {
            return Err(invalid("split", format!("need 0 < split < {}", center.len())));
        }
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(invalid("radius", format!("must be non-negative, got {radius}")));
        }
        Ok(Self {
            center,
            split,
            radius,
        })
    }

    /// Balls of radius `D = ‖A⁻¹b‖` around the instance's saddle point.
    pub fn for_instance(inst: &BilinearInstance) -> Self {
        Self {
            center: inst.z_star().clone(),
            split: inst.half(),
            radius: inst.d(),
        }
    }

    /// Balls around `z*` with radius `‖z⁰ − z*‖`.
    pub fn from_start(z_star: &DVector<f64>, split: usize, z0: &DVector<f64>) -> Result<Self> {
        Self::new(z_star.clone(), split, (z0 - z_star).norm())
    }

    pub fn with_radius(mut self, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(invalid("radius", format!("must be non-negative, got {radius}")));
        }
        self.radius = radius;
        Ok(self)
    }

    /// Whether `z` lies in the product of balls (with a `1e-12` relative slack).
    pub fn contains(&self, z: &DVector<f64>) -> bool {
        let h = self.split;
        let m = z.len() - h;
        let dx = (z.rows(0, h) - self.center.rows(0, h)).norm();
        let dy = (z.rows(h, m) - self.center.rows(h, m)).norm();
        let slack = 1e-12 * (1.0 + self.radius);
        dx <= self.radius + slack && dy <= self.radius + slack
    }
}

/// `‖F(z)‖²`.
pub fn hamiltonian(op: &OperatorHandle, z: &DVector<f64>) -> Result<f64> {
    Ok(op.value(z)?.norm_squared())
}

fn check_centered(inst: &BilinearInstance, region: &GapRegion) -> Result<()> {
    if region.center.len() != inst.n() {
        return Err(Error::DimensionMismatch {
            expected: inst.n(),
            got: region.center.len(),
        });
    }
    let offset = (&region.center - inst.z_star()).norm();
    if offset > 1e-10 * (1.0 + inst.z_star().norm()) {
        return Err(Error::RegionNotCentered { offset });
    }
    Ok(())
}

/// Exact primal-dual gap of a bilinear problem over balls centred at `z*`:
/// `D·‖Mᵀx + b₂‖ + D·‖My + b₁‖`.
///
/// This lies between `D‖Az + b‖` and `√2·D‖Az + b‖`; it coincides with the lower end
/// only when one of the two blocks of `F(z)` vanishes.
pub fn gap_bilinear(inst: &BilinearInstance, region: &GapRegion, z: &DVector<f64>) -> Result<f64> {
    check_centered(inst, region)?;
    let f = inst.eval_operator(z)?;
    Ok(gap_from_residual(&f, inst.half(), region.radius))
}

fn gap_from_residual(f: &DVector<f64>, half: usize, radius: f64) -> f64 {
    // F = (My + b₁, −(Mᵀx + b₂)).
    let u = f.rows(0, half).norm();
    let v = f.rows(half, f.len() - half).norm();
    radius * (u + v)
}

/// `D·‖Az + b‖`, the lower envelope of [`gap_bilinear`].
pub fn gap_residual(inst: &BilinearInstance, region: &GapRegion, z: &DVector<f64>) -> Result<f64> {
    check_centered(inst, region)?;
    Ok(region.radius * inst.eval_operator(z)?.norm())
}

/// `√2·D·‖F(z)‖`, an upper bound on the gap for any convex-concave objective.
pub fn gap_linearized(op: &OperatorHandle, region: &GapRegion, z: &DVector<f64>) -> Result<f64> {
    Ok(std::f64::consts::SQRT_2 * region.radius * op.value(z)?.norm())
}

/// `|f(z) − f(z*)|`.
pub fn function_value_loss(inst: &BilinearInstance, z: &DVector<f64>) -> Result<f64> {
    Ok((inst.eval_f(z)? - inst.f_unchecked(inst.z_star())).abs())
}

/// `‖z − z*‖`.
pub fn distance_to_star(inst: &BilinearInstance, z: &DVector<f64>) -> Result<f64> {
    if z.len() != inst.n() {
        return Err(Error::DimensionMismatch {
            expected: inst.n(),
            got: z.len(),
        });
    }
    Ok((z - inst.z_star()).norm())
}

/// All functionals at one iterate. Fields that need information the operator does not
/// carry (a bilinear instance, a known solution, a region) are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub hamiltonian: f64,
    pub sqrt_hamiltonian: f64,
    pub gap_bilinear: Option<f64>,
    pub gap_residual: Option<f64>,
    pub gap_linearized: Option<f64>,
    pub func_value_loss: Option<f64>,
    pub dist_to_star: Option<f64>,
    pub in_region: Option<bool>,
}

/// Evaluates every available functional for one operator and region.
#[derive(Clone, Debug)]
pub struct LossEvaluator {
    op: OperatorHandle,
    region: Option<GapRegion>,
}

impl LossEvaluator {
    pub fn new(op: OperatorHandle, region: Option<GapRegion>) -> Self {
        Self { op, region }
    }

    /// Default region: the instance balls for bilinear operators, otherwise balls of
    /// radius `‖z⁰ − z*‖` when `z*` is known. `radius` overrides the radius.
    pub fn for_operator(
        op: OperatorHandle,
        z0: &DVector<f64>,
        split: usize,
        radius: Option<f64>,
    ) -> Result<Self> {
        let region = if let Some(inst) = op.bilinear() {
            Some(GapRegion::for_instance(inst))
        } else if let Some(z_star) = op.solution() {
            Some(GapRegion::from_start(z_star, split, z0)?)
        } else if let Some(r) = radius {
            Some(GapRegion::new(DVector::zeros(op.dim()), split, r)?)
        } else {
            None
        };
        let region = match (region, radius) {
            (Some(g), Some(r)) => Some(g.with_radius(r)?),
            (g, _) => g,
        };
        Ok(Self { op, region })
    }

    pub fn operator(&self) -> &OperatorHandle {
        &self.op
    }

    pub fn region(&self) -> Option<&GapRegion> {
        self.region.as_ref()
    }

    pub fn evaluate(&self, z: &DVector<f64>) -> Result<LossRecord> {
        let f = self.op.value(z)?;
        let ham = f.norm_squared();
        let mut rec = LossRecord {
            hamiltonian: ham,
            sqrt_hamiltonian: ham.sqrt(),
            ..Default::default()
        };
        if let Some(region) = &self.region {
            rec.gap_linearized = Some(std::f64::consts::SQRT_2 * region.radius * f.norm());
        }
        if let Some(inst) = self.op.bilinear() {
            let region = self.region.as_ref().expect("bilinear evaluators always carry a region");
            rec.gap_bilinear = Some(gap_from_residual(&f, inst.half(), region.radius));
            rec.gap_residual = Some(region.radius * f.norm());
            rec.func_value_loss = Some((inst.f_unchecked(z) - inst.f_unchecked(inst.z_star())).abs());
            rec.in_region = Some(region.contains(z));
        } else if let Some(region) = &self.region {
            if self.op.solution().is_some() {
                rec.in_region = Some(region.contains(z));
            }
        }
        if let Some(z_star) = self.op.solution() {
            rec.dist_to_star = Some((z - z_star).norm());
        }
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::problem::HardInstanceParams;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> BilinearInstance {
        BilinearInstance::hard(HardInstanceParams::new(2, 1.0, 1.0)).unwrap()
    }

    #[test]
    fn hamiltonian_examples() {
        let inst = unit();
        let op = inst.operator();
        assert!(hamiltonian(&op, inst.z_star()).unwrap() < 1e-30);
        assert_relative_eq!(hamiltonian(&op, &DVector::zeros(2)).unwrap(), 1.0, epsilon = 1e-15);

        let z = DVector::from_vec(vec![0.4, -2.0]);
        let scaled = crate::problem::wrap_general_operator(
            2,
            {
                let op = op.clone();
                move |z: &DVector<f64>| op.value(z).unwrap() * 3.0
            },
            None::<fn(&DVector<f64>) -> nalgebra::DMatrix<f64>>,
            3.0,
            None,
        );
        assert_relative_eq!(
            hamiltonian(&scaled, &z).unwrap(),
            9.0 * hamiltonian(&op, &z).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn gap_examples() {
        let inst = unit();
        let region = GapRegion::for_instance(&inst);
        let op = inst.operator();
        assert!(gap_bilinear(&inst, &region, inst.z_star()).unwrap() < 1e-15);
        let z0 = DVector::zeros(2);
        // D‖b‖ = νD² = 1.
        assert_relative_eq!(gap_residual(&inst, &region, &z0).unwrap(), 1.0, epsilon = 1e-15);
        // Both blocks of b have norm 1/√2, so the exact gap is √2.
        assert_relative_eq!(
            gap_bilinear(&inst, &region, &z0).unwrap(),
            2.0_f64.sqrt(),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            gap_linearized(&op, &region, &z0).unwrap(),
            2.0_f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn exact_gap_matches_ball_maximization() {
        // Maximize/minimize the linear pieces over the balls directly.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = linalg::gaussian_matrix(&mut rng, 3, 3);
        let b1 = linalg::gaussian_vector(&mut rng, 3);
        let b2 = linalg::gaussian_vector(&mut rng, 3);
        let inst = BilinearInstance::new(m.clone(), b1.clone(), b2.clone()).unwrap();
        let region = GapRegion::for_instance(&inst).with_radius(0.7).unwrap();
        let zs = inst.z_star();
        let (xs, ys) = (zs.rows(0, 3).into_owned(), zs.rows(3, 3).into_owned());
        for _ in 0..20 {
            let z = linalg::gaussian_vector(&mut rng, 6);
            let (x, y) = (z.rows(0, 3).into_owned(), z.rows(3, 3).into_owned());
            let gy = m.transpose() * &x + &b2;
            let y_best = &ys + &gy * (0.7 / gy.norm());
            let gx = &m * &y + &b1;
            let x_best = &xs - &gx * (0.7 / gx.norm());
            let f = |x: &DVector<f64>, y: &DVector<f64>| x.dot(&(&m * y)) + b1.dot(x) + b2.dot(y);
            let oracle = f(&x, &y_best) - f(&x_best, &y);
            assert_relative_eq!(
                gap_bilinear(&inst, &region, &z).unwrap(),
                oracle,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn gap_sandwich_on_random_points() {
        let inst = BilinearInstance::hard(HardInstanceParams::new(6, 0.8, 2.0)).unwrap();
        let region = GapRegion::for_instance(&inst);
        let op = inst.operator();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let z = linalg::gaussian_vector(&mut rng, 6) * 3.0;
            let exact = gap_bilinear(&inst, &region, &z).unwrap();
            let resid = gap_residual(&inst, &region, &z).unwrap();
            let lin = gap_linearized(&op, &region, &z).unwrap();
            let ham = hamiltonian(&op, &z).unwrap();
            assert_relative_eq!(resid, inst.d() * ham.sqrt(), max_relative = 1e-10);
            assert!(resid <= exact * (1.0 + 1e-12));
            assert!(exact <= lin * (1.0 + 1e-12));
        }
    }

    #[test]
    fn region_must_be_centered() {
        let inst = unit();
        let region = GapRegion::new(DVector::zeros(2), 1, 1.0).unwrap();
        assert!(matches!(
            gap_bilinear(&inst, &region, &DVector::zeros(2)),
            Err(Error::RegionNotCentered { .. })
        ));
    }

    #[test]
    fn function_value_and_distance() {
        let inst = unit();
        let z0 = DVector::zeros(2);
        assert_relative_eq!(function_value_loss(&inst, &z0).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(function_value_loss(&inst, inst.z_star()).unwrap(), 0.0);
        assert_relative_eq!(distance_to_star(&inst, &z0).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(distance_to_star(&inst, inst.z_star()).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = linalg::gaussian_vector(&mut rng, 2);
            let b = linalg::gaussian_vector(&mut rng, 2);
            let da = distance_to_star(&inst, &a).unwrap();
            let db = distance_to_star(&inst, &b).unwrap();
            assert!(da <= db + (&a - &b).norm() + 1e-12);
        }
    }

    #[test]
    fn evaluator_fills_bilinear_fields() {
        let inst = unit();
        let ev = LossEvaluator::for_operator(inst.operator(), &DVector::zeros(2), 1, None).unwrap();
        let rec = ev.evaluate(&DVector::zeros(2)).unwrap();
        assert_relative_eq!(rec.hamiltonian, 1.0, epsilon = 1e-15);
        assert_relative_eq!(rec.gap_residual.unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(rec.func_value_loss.unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(rec.dist_to_star.unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(rec.in_region, Some(true));

        let far = ev.evaluate(&DVector::from_vec(vec![5.0, 5.0])).unwrap();
        assert_eq!(far.in_region, Some(false));
    }
}
