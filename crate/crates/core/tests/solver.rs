use gridopt::solver::{admm_solve, project_psd, project_soc, rank1_gap, ADMMParams, ConicProgram, HermitianMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn soc_dist(a: &(f64, Vec<f64>), b: &(f64, Vec<f64>)) -> f64 {
    let mut s = (a.0 - b.0).powi(2);
    for (x, y) in a.1.iter().zip(&b.1) {
        s += (x - y).powi(2);
    }
    s.sqrt()
}

fn hermitian(vals: &[f64], n: usize, complex: bool) -> HermitianMatrix {
    let re = DMatrix::from_fn(n, n, |i, j| vals[i * n + j]);
    let im = if complex { DMatrix::from_fn(n, n, |i, j| vals[n * n + i * n + j]) } else { DMatrix::zeros(n, n) };
    HermitianMatrix::new(re, im).unwrap()
}

fn soc_point() -> impl Strategy<Value = (f64, Vec<f64>)> {
    (1usize..5).prop_flat_map(|k| (-5.0..5.0f64, proptest::collection::vec(-5.0..5.0f64, k)))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn soc_projection_is_idempotent_and_inside((t, u) in soc_point()) {
        let p = project_soc(t, &u);
        let norm = p.1.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= p.0 + 1e-12);
        let pp = project_soc(p.0, &p.1);
        prop_assert!(soc_dist(&p, &pp) <= 1e-10);
    }

    #[test]
    fn soc_projection_is_non_expansive(
        (t1, u1, t2, u2) in (1usize..5).prop_flat_map(|k| (
            -5.0..5.0f64,
            proptest::collection::vec(-5.0..5.0f64, k),
            -5.0..5.0f64,
            proptest::collection::vec(-5.0..5.0f64, k),
        ))
    ) {
        let (a, b) = ((t1, u1.clone()), (t2, u2.clone()));
        let d = soc_dist(&project_soc(t1, &u1), &project_soc(t2, &u2));
        prop_assert!(d <= soc_dist(&a, &b) + 1e-12);
    }

    #[test]
    fn psd_projection_is_idempotent(vals in proptest::collection::vec(-3.0..3.0f64, 18), complex in any::<bool>()) {
        let m = hermitian(&vals, 3, complex);
        let p = project_psd(&m);
        prop_assert!(p.eigenvalues().iter().all(|&l| l >= -1e-12));
        prop_assert!(project_psd(&p).frobenius_distance(&p) <= 1e-10);
    }

    #[test]
    fn psd_projection_is_non_expansive(
        a in proptest::collection::vec(-3.0..3.0f64, 18),
        b in proptest::collection::vec(-3.0..3.0f64, 18),
        complex in any::<bool>(),
    ) {
        let (ma, mb) = (hermitian(&a, 3, complex), hermitian(&b, 3, complex));
        let d = project_psd(&ma).frobenius_distance(&project_psd(&mb));
        prop_assert!(d <= ma.frobenius_distance(&mb) + 1e-12);
    }
}

#[test]
fn psd_projection_beats_random_psd_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let vals: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = hermitian(&vals, 3, false);
        let best = project_psd(&m).frobenius_distance(&m);
        for _ in 0..2_000 {
            let g = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.5..1.5f64));
            let s = HermitianMatrix::real(&g * g.transpose()).unwrap();
            assert!(s.frobenius_distance(&m) >= best - 1e-12);
        }
    }
}

#[test]
fn soc_grid_search_oracle() {
    // (0, [1, 0]) projects to (0.5, [0.5, 0]); check against a dense search of the cone
    let (t, u) = project_soc(0.0, &[1.0, 0.0]);
    let mut best = f64::INFINITY;
    let mut arg = (0.0, 0.0, 0.0);
    let steps = 200;
    for i in 0..=steps {
        let tt = 2.0 * i as f64 / steps as f64;
        for j in 0..=steps {
            let th = std::f64::consts::TAU * j as f64 / steps as f64;
            for k in 0..=20 {
                let rad = tt * k as f64 / 20.0;
                let (a, b) = (rad * th.cos(), rad * th.sin());
                let d = tt * tt + (a - 1.0).powi(2) + b * b;
                if d < best {
                    best = d;
                    arg = (tt, a, b);
                }
            }
        }
    }
    assert!((arg.0 - t).abs() < 0.02 && (arg.1 - u[0]).abs() < 0.02 && (arg.2 - u[1]).abs() < 0.02);
    assert!((t - 0.5).abs() < 1e-15 && (u[0] - 0.5).abs() < 1e-15);
}

#[test]
fn rank1_gap_examples() {
    let v = [1.0, -2.0, 0.5];
    let outer = HermitianMatrix::real(DMatrix::from_fn(3, 3, |i, j| v[i] * v[j])).unwrap();
    assert!(rank1_gap(&outer) < 1e-12);
    assert!((rank1_gap(&HermitianMatrix::identity(2)) - 1.0).abs() < 1e-12);
    let d = HermitianMatrix::real(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 0.004]))).unwrap();
    assert!((rank1_gap(&d) - 1e-3).abs() < 1e-12);
    assert_eq!(rank1_gap(&HermitianMatrix::real(DMatrix::zeros(2, 2)).unwrap()), 0.0);
}

/// min sum_i q_i x_i^2 / 2 + c_i x_i subject to sum x = s and x in [lo, hi]:
/// water-filling by bisection on the multiplier.
fn box_qp_oracle(q: &[f64], c: &[f64], lo: &[f64], hi: &[f64], s: f64) -> f64 {
    let x_of = |nu: f64| -> Vec<f64> { (0..q.len()).map(|i| ((nu - c[i]) / q[i]).clamp(lo[i], hi[i])).collect() };
    let (mut a, mut b) = (-1e6, 1e6);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if x_of(m).iter().sum::<f64>() < s {
            a = m;
        } else {
            b = m;
        }
    }
    let x = x_of(0.5 * (a + b));
    (0..q.len()).map(|i| 0.5 * q[i] * x[i] * x[i] + c[i] * x[i]).sum()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn admm_matches_box_qp_oracle(
        n in 2usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..0.0)).collect();
        let hi: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.5)).collect();
        let s = 0.5 * (lo.iter().sum::<f64>() + hi.iter().sum::<f64>());
        let mut prog = ConicProgram::new();
        let vars: Vec<_> = (0..n).map(|i| prog.add_bounded(format!("x{i}"), lo[i], hi[i])).collect();
        for i in 0..n {
            prog.set_quadratic(vars[i], q[i]);
            prog.set_linear(vars[i], c[i]);
        }
        prog.add_equality(vars.iter().map(|&v| (v, 1.0)).collect(), s);
        let params = ADMMParams { eps_abs: 1e-9, eps_rel: 1e-9, max_iter: 50_000, ..ADMMParams::default() };
        let sol = admm_solve(&prog, &params).unwrap();
        prop_assert!(sol.converged);
        let oracle = box_qp_oracle(&q, &c, &lo, &hi, s);
        prop_assert!((sol.objective - oracle).abs() <= 1e-4 * oracle.abs().max(1.0), "{} vs {}", sol.objective, oracle);
        prop_assert!(sol.primal_residual <= sol.primal_tolerance && sol.dual_residual <= sol.dual_tolerance);
    }
}

#[test]
fn solves_are_deterministic() {
    let mut prog = ConicProgram::new();
    let t = prog.add_var("t");
    let a = prog.add_var("a");
    let b = prog.add_var("b");
    prog.set_linear(t, 1.0);
    prog.add_soc(t, vec![a, b]);
    prog.add_equality(vec![(a, 1.0), (b, 1.0)], 2.0);
    let params = ADMMParams { anderson: 5, ..ADMMParams::default() };
    let s1 = admm_solve(&prog, &params).unwrap();
    let s2 = admm_solve(&prog, &params).unwrap();
    assert_eq!(s1, s2);
    // min ||(a, b)|| on a + b = 2 is sqrt(2)
    assert!((s1.objective - 2f64.sqrt()).abs() < 1e-3);
}
