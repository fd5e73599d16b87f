mod common;

use common::{phase_pf, random_unbalanced, C64};
use gridopt::grid::{Network, Phase};
use gridopt::opf3::{
    build_unbalanced_bfm, exactness_report, line_loss, solve_unbalanced_opf, write_result_csv, OPF3Result,
    Opf3Settings, PhaseLoads,
};
use gridopt::reconfig::opf_params;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn solve(net: &Network, headroom_kw: f64) -> OPF3Result {
    let settings = Opf3Settings { headroom_kw, ..Opf3Settings::default() };
    let bfm = build_unbalanced_bfm(net, &PhaseLoads::from_network(net), &settings).unwrap();
    solve_unbalanced_opf(&bfm, &opf_params()).unwrap()
}

fn loss_pu(res: &OPF3Result) -> f64 {
    res.flows.iter().map(|f| f.r * f.l).sum()
}

#[test]
fn unbalanced_four_bus_matches_per_phase_newton() {
    for seed in 0..4 {
        let net = random_unbalanced(100 + seed, 4);
        let res = solve(&net, 0.0);
        assert!(res.converged && res.exact, "seed {seed}");
        let (oracle, _) = phase_pf(&net, &|_, _| C64::new(0.0, 0.0)).unwrap();
        assert!((loss_pu(&res) - oracle).abs() <= 1e-3, "seed {seed}: {} vs {oracle}", loss_pu(&res));
        assert!(res.max_balance_residual <= 1e-6);
    }
}

#[test]
fn relaxed_loss_is_below_sampled_feasible_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..3 {
        let net = random_unbalanced(200 + seed, 5);
        let head = 60.0;
        let res = solve(&net, head);
        assert!(res.converged);
        let relaxed = loss_pu(&res);
        let mut checked = 0;
        for _ in 0..200 {
            // controls exist only on loaded bus-phases
            let g: Vec<[C64; 3]> = net
                .buses
                .iter()
                .map(|b| {
                    std::array::from_fn(|k| {
                        let ph = Phase::ALL[k];
                        if b.is_slack || b.load_p.get(ph) <= 0.0 {
                            C64::new(0.0, 0.0)
                        } else {
                            C64::new(rng.random_range(0.0..head), rng.random_range(0.0..head)) / net.base_kva
                        }
                    })
                })
                .collect();
            let Some((loss, per)) = phase_pf(&net, &|i, k| g[i][k]) else {
                continue;
            };
            let within = per.iter().all(|r| r.v.iter().all(|v| (0.81..=1.21).contains(&v.norm_sqr())));
            if within {
                checked += 1;
                assert!(relaxed <= loss + 1e-7, "relaxed {relaxed} above feasible {loss}");
            }
        }
        assert!(checked > 100);
    }
}

#[test]
fn headroom_never_increases_loss() {
    for seed in 0..5 {
        let net = random_unbalanced(300 + seed, 6);
        let base = solve(&net, 0.0);
        let opf = solve(&net, 30.0);
        assert!(base.converged && opf.converged);
        assert!(line_loss(&opf) <= line_loss(&base) + 1e-9);
        // bounds hold to 1e-6 pu on the reported (affine) copy
        let tol = 1e-6 * net.base_kva;
        assert!(opf.controls.iter().all(|c| c.p_kw >= -tol && c.p_kw <= 30.0 + tol));
    }
}

#[test]
fn balanced_loads_give_identical_phases() {
    let net = common::random_radial(9, 5);
    let res = solve(&net, 10.0);
    assert!(res.converged);
    for a in res.flows.iter().filter(|f| f.phase == Phase::A) {
        for ph in [Phase::B, Phase::C] {
            let b = res.flows.iter().find(|f| f.branch == a.branch && f.phase == ph).unwrap();
            assert!((a.p - b.p).abs() <= 1e-8 && (a.q - b.q).abs() <= 1e-8 && (a.l - b.l).abs() <= 1e-8);
        }
    }
}

#[test]
fn gaps_match_direct_eigenvalues() {
    let net = random_unbalanced(400, 5);
    let res = solve(&net, 20.0);
    let rep = exactness_report(&res);
    assert_eq!(rep.blocks.len(), res.flows.len());
    for (blk, f) in rep.blocks.iter().zip(&res.flows) {
        // closed-form eigenvalues of [[v, S], [S*, l]]
        let (tr, diff) = (f.v_from + f.l, f.v_from - f.l);
        let disc = (diff * diff + 4.0 * (f.p * f.p + f.q * f.q)).sqrt();
        let (l1, l2) = ((tr + disc) / 2.0, ((tr - disc) / 2.0).max(0.0));
        let want = if l1 > 1e-12 { (l2 / l1).min(1.0) } else { 0.0 };
        assert!((blk.gap - want).abs() <= 1e-9, "{} vs {want}", blk.gap);
    }
    assert_eq!(rep.exact, rep.max_gap <= 1e-3);
    assert_eq!(rep.exact, res.exact);
}

#[test]
fn result_csv_layout() {
    let net = random_unbalanced(500, 3);
    let res = solve(&net, 0.0);
    let mut buf = Vec::new();
    write_result_csv(&res, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("bus,phase,v2,branch_P,branch_Q,l,rank1_gap"));
    assert_eq!(lines.count(), 9);
}
