use nalgebra::{DMatrix, DVector};
use num_rational::Rational64;
use proptest::prelude::*;
use saddle_core::metrics::{gap_bilinear, gap_linearized, gap_residual};
use saddle_core::scli::{self, check_consistency};
use saddle_core::solvers::{self, running_means};
use saddle_core::{BilinearInstance, GapRegion, HardInstanceParams, ScliSpec, SolverConfig};

fn matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0_f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0..2.0_f64, n).prop_map(DVector::from_vec)
}

fn general_instance() -> impl Strategy<Value = BilinearInstance> {
    (1usize..=4)
        .prop_flat_map(|h| (matrix(h), vector(h), vector(h)))
        .prop_filter_map("singular M", |(m, b1, b2)| {
            let inst = BilinearInstance::new(m + DMatrix::identity(b1.len(), b1.len()) * 0.5, b1, b2).ok()?;
            (inst.z_star().norm() < 1e3).then_some(inst)
        })
}

fn hard_instance() -> impl Strategy<Value = BilinearInstance> {
    (1usize..=4, 0.01..=1.0_f64, 0.1..3.0_f64)
        .prop_map(|(h, nu, d)| BilinearInstance::hard(HardInstanceParams::new(2 * h, nu, d)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operator_matrix_is_antisymmetric(inst in general_instance(), seed in 0u64..1000) {
        let a = inst.a();
        prop_assert_eq!(a + a.transpose(), DMatrix::zeros(inst.n(), inst.n()));
        let rep = inst.operator().check_monotone(32, 3.0, seed);
        prop_assert!(rep.passed(), "{:?}", rep);
    }

    #[test]
    fn hard_operator_is_normal_with_imaginary_spectrum(inst in hard_instance()) {
        let a = inst.a();
        let nu = inst.hard_params().unwrap().nu;
        let ata = a.transpose() * a;
        prop_assert!((&ata - a * a.transpose()).norm() <= 1e-14);
        prop_assert!((ata - DMatrix::identity(inst.n(), inst.n()) * nu * nu).norm() <= 1e-14);
        prop_assert!((inst.z_star().norm() - inst.d()).abs() <= 1e-12 * inst.d());
    }

    #[test]
    fn gap_sandwich(inst in general_instance(), z in vector(8)) {
        let region = GapRegion::for_instance(&inst);
        let z = z.rows(0, inst.n()).into_owned();
        let resid = gap_residual(&inst, &region, &z).unwrap();
        let exact = gap_bilinear(&inst, &region, &z).unwrap();
        let lin = gap_linearized(&inst.operator(), &region, &z).unwrap();
        let tol = 1e-12 * (1.0 + lin);
        prop_assert!(resid <= exact + tol && exact <= lin + tol, "{} {} {}", resid, exact, lin);
    }

    #[test]
    fn eg_closed_form_matches_simulation(inst in hard_instance(), eta in 0.01..0.5_f64, t in 0usize..300) {
        let spec = ScliSpec::extragradient(eta);
        let sim = scli::simulate_iterates(&spec, &inst, &DVector::zeros(inst.n()), t).unwrap();
        let cf = scli::closed_form_iterate(&spec, &inst, t as u64).unwrap();
        let dense = scli::closed_form_iterate_dense(&spec, &inst, t as u64).unwrap();
        let scale = sim[t].norm().max(inst.d());
        prop_assert!((&cf - &sim[t]).norm() <= 1e-10 * scale);
        prop_assert!((&dense - &sim[t]).norm() <= 1e-10 * scale);
    }

    #[test]
    fn closed_form_losses_match_spectral_magnitude(inst in hard_instance(), eta in 0.01..0.5_f64, t in 0u64..2000) {
        let spec = ScliSpec::extragradient(eta);
        let p = inst.hard_params().unwrap();
        let q = spec.q0_at(p.nu).norm();
        let ham = scli::hamiltonian_closed_form(&spec, &p, t);
        let expected = q.powi(2 * t as i32) * p.nu * p.nu * p.d * p.d;
        prop_assert!((ham - expected).abs() <= 1e-10 * expected.max(f64::MIN_POSITIVE));
        let z = scli::closed_form_iterate(&spec, &inst, t).unwrap();
        let direct = inst.eval_operator(&z).unwrap().norm();
        // Forming Az + b loses about ε·νD absolutely.
        prop_assert!((ham.sqrt() - direct).abs() <= 1e-9 * expected.sqrt() + 1e-12 * p.nu * p.d);
    }

    #[test]
    fn eg_spec_is_consistent(eta in 1e-4..10.0_f64) {
        prop_assert!(check_consistency(&ScliSpec::extragradient(eta)).consistent);
    }

    #[test]
    fn pp_hamiltonian_never_increases(inst in general_instance(), eta in 0.01..20.0_f64) {
        let tr = solvers::run(&inst.operator(), &SolverConfig::pp(eta, 50)).unwrap();
        let scale = tr.losses[0].hamiltonian.max(1.0);
        for w in tr.losses.windows(2) {
            prop_assert!(w[1].hamiltonian <= w[0].hamiltonian + 1e-9 * scale);
        }
    }

    #[test]
    fn running_means_are_means(vs in prop::collection::vec(vector(3), 1..40)) {
        let means = running_means(&vs);
        prop_assert_eq!(means.len(), vs.len());
        for (t, m) in means.iter().enumerate() {
            let direct = vs[..=t].iter().fold(DVector::zeros(3), |acc, v| acc + v) / (t + 1) as f64;
            prop_assert!((m - &direct).norm() <= 1e-12 * (1.0 + direct.norm()));
        }
    }

    #[test]
    fn averaged_eg_two_cli(inst in general_instance(), frac in 0.05..0.9_f64) {
        let eta = frac / inst.lipschitz();
        let dev = scli::averaged_eg_as_2cli_check(&inst, eta, 200, None).unwrap();
        prop_assert!(dev <= 1e-9 * (1.0 + inst.z_star().norm()), "{}", dev);
    }
}

type RPoly = Vec<Rational64>;

fn rmul(a: &[Rational64], b: &[Rational64]) -> RPoly {
    let mut out = vec![Rational64::from_integer(0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn radd(a: &[Rational64], b: &[Rational64]) -> RPoly {
    let zero = Rational64::from_integer(0);
    (0..a.len().max(b.len()))
        .map(|i| *a.get(i).unwrap_or(&zero) + *b.get(i).unwrap_or(&zero))
        .collect()
}

/// Mean of extragradient iterates `1..=T+1` from zero as an exact polynomial in `A`
/// times `b`: `Σ_{i=0}^{T} (T+1−i)·C^i·N / (T+1)`, with `η = 1/2`.
fn tightness_oracle(k: usize) -> RPoly {
    let r = |n: i64, d: i64| Rational64::new(n, d);
    let horizon = ((k - 1) / 2) as i64;
    let c: RPoly = vec![r(1, 1), r(-1, 2), r(1, 4)];
    let n: RPoly = vec![r(-1, 2), r(1, 4)];
    let mut total: RPoly = vec![r(0, 1)];
    let mut c_pow: RPoly = vec![r(1, 1)];
    for i in 0..=horizon {
        let term: RPoly = rmul(&c_pow, &n).into_iter().map(|x| x * r(horizon + 1 - i, horizon + 1)).collect();
        total = radd(&total, &term);
        c_pow = rmul(&c_pow, &c);
    }
    total
}

#[test]
fn tightness_coefficients_match_rational_oracle() {
    for k in [3, 4, 5, 8, 9, 17] {
        let spec = scli::build_tightness_spec(k, 1.0).unwrap();
        let oracle = tightness_oracle(k);
        assert_eq!(spec.n_coeffs.len(), oracle.len(), "k = {k}");
        for (got, want) in spec.n_coeffs.iter().zip(&oracle) {
            let want = *want.numer() as f64 / *want.denom() as f64;
            assert!((got - want).abs() <= 1e-14 * (1.0 + want.abs()), "k = {k}: {got} vs {want}");
        }
        assert!(check_consistency(&spec).consistent);
    }
}
