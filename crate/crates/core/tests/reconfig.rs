mod common;

use std::path::PathBuf;

use common::{brute_force_ranking, network_pf, random_radial};
use gridopt::grid::{parse_feeder, Network};
use gridopt::reconfig::{
    build_balanced_bfm, evaluate_config, opf_params, reconfigure, solve_balanced_opf, BusLoads, ReconfigError,
    EXACT_TOL,
};
use gridopt::workers::WorkerPool;

fn feeder123() -> Network {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/feeder123");
    parse_feeder(&dir.join("buses.csv"), &dir.join("branches.csv")).unwrap()
}

#[test]
fn small_feeders_match_newton_loss() {
    for seed in 0..6 {
        let n = 2 + (seed as usize % 4);
        let net = random_radial(seed, n);
        let cfg = net.initial_config();
        let bfm = build_balanced_bfm(&net, &cfg, &BusLoads::from_network(&net)).unwrap();
        let res = solve_balanced_opf(&bfm, &opf_params()).unwrap();
        assert!(res.converged, "seed {seed}");
        let closed = net.closed_branches(&cfg).unwrap();
        let pf = network_pf(&net, &closed, 1.0).unwrap();
        assert!(res.relaxation_tightness <= EXACT_TOL, "seed {seed}: tightness {}", res.relaxation_tightness);
        assert!((res.loss_pu - pf.loss).abs() <= 1e-4, "seed {seed}: {} vs {}", res.loss_pu, pf.loss);
        assert!(res.max_balance_residual <= 1e-6);
        // voltages agree with the oracle
        for (k, &(_, v2)) in res.voltages.iter().enumerate() {
            assert!((v2 - pf.v[k].norm_sqr()).abs() <= 1e-4);
        }
    }
}

#[test]
fn loop_config_is_rejected_before_solve() {
    let net = common::ring4();
    let mut cfg = net.initial_config();
    for k in net.switchable() {
        cfg.states.insert(k, gridopt::grid::SwitchState::Closed);
    }
    let err = evaluate_config(&net, &cfg, &BusLoads::from_network(&net), &opf_params()).unwrap_err();
    assert!(matches!(err, ReconfigError::NotRadial));
}

#[test]
fn base_config_of_bundled_feeder_has_positive_loss() {
    let net = feeder123();
    let (_, loss) = evaluate_config(&net, &net.initial_config(), &BusLoads::from_network(&net), &opf_params()).unwrap();
    let loss = loss.expect("base configuration is feasible");
    let pf = network_pf(&net, &net.closed_branches(&net.initial_config()).unwrap(), 1.0).unwrap();
    assert!(loss > 0.0);
    assert!((loss / net.base_kva - pf.loss).abs() <= 1e-4);
}

fn check_ranking(net: &Network) {
    let report = reconfigure(net, &BusLoads::from_network(net), &opf_params(), &WorkerPool::serial()).unwrap();
    let oracle = brute_force_ranking(net);
    let ours: Vec<Vec<usize>> = report.ranking().iter().map(|&i| report.evaluations[i].open_switches.clone()).collect();
    let theirs: Vec<Vec<usize>> = oracle.iter().map(|(open, _)| open.clone()).collect();
    assert_eq!(ours, theirs);
    for (open, loss) in &oracle {
        let e = report.evaluations.iter().find(|e| &e.open_switches == open).unwrap();
        assert!((e.loss_kw.unwrap() / net.base_kva - loss).abs() <= 1e-4);
    }
    assert!(report.best_loss_kw <= report.baseline_loss_kw);
}

#[test]
fn ring_ranking_matches_brute_force() {
    check_ranking(&common::ring4());
}

#[test]
fn double_loop_ranking_matches_brute_force() {
    check_ranking(&common::double_loop8());
}

#[test]
fn worker_count_does_not_change_report() {
    let net = common::double_loop8();
    let loads = BusLoads::from_network(&net);
    let a = reconfigure(&net, &loads, &opf_params(), &WorkerPool::serial()).unwrap();
    let b = reconfigure(&net, &loads, &opf_params(), &WorkerPool::new(3).unwrap()).unwrap();
    assert_eq!(a.evaluations, b.evaluations);
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn report_csv_layout() {
    let net = common::ring4();
    let report = reconfigure(&net, &BusLoads::from_network(&net), &opf_params(), &WorkerPool::serial()).unwrap();
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("config_id,open_switches,loss_kw,feasible"));
    assert_eq!(lines.count(), report.evaluations.len());
}

#[test]
fn overloaded_feeder_reports_infeasible_configs() {
    let net = common::ring4();
    let loads = BusLoads::from_network(&net).scaled(40.0);
    match reconfigure(&net, &loads, &opf_params(), &WorkerPool::serial()) {
        Err(ReconfigError::NoFeasible(n)) => assert_eq!(n, 2),
        other => panic!("expected NoFeasible, got {other:?}"),
    }
}
