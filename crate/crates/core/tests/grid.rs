mod common;

use std::path::PathBuf;

use common::{bus, line, uf_radial};
use gridopt::grid::{
    adjacency_matrix, enumerate_radial_configs, is_radial, parse_feeder, write_feeder, GridError, Network,
    SwitchConfig, SwitchState,
};
use proptest::prelude::*;

fn feeder123() -> Network {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/feeder123");
    parse_feeder(&dir.join("buses.csv"), &dir.join("branches.csv")).unwrap()
}

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const BUSES3: &str = "id,phases,p_a,q_a,p_b,q_b,p_c,q_c,vmin2,vmax2,slack\n\
1,abc,0,0,0,0,0,0,0.9,1.1,1\n\
2,abc,10,5,10,5,10,5,0.9,1.1,0\n\
3,a,20,8,0,0,0,0,0.9,1.1,0\n";

#[test]
fn three_bus_files_parse() {
    let dir = tempfile::tempdir().unwrap();
    let b = write(&dir, "b.csv", BUSES3);
    let e = write(&dir, "e.csv", "from,to,r_a,x_a,r_b,x_b,r_c,x_c,imax2,switchable,closed\n1,2,0.01,0.02,0.01,0.02,0.01,0.02,4,0,1\n2,3,0.01,0.02,0,0,0,0,4,0,1\n");
    let net = parse_feeder(&b, &e).unwrap();
    assert_eq!(net.num_buses(), 3);
    assert_eq!(net.branches.len(), 2);
}

#[test]
fn dangling_endpoint_is_topology_error() {
    let dir = tempfile::tempdir().unwrap();
    let b = write(&dir, "b.csv", BUSES3);
    let e = write(&dir, "e.csv", "from,to,r_a,x_a,r_b,x_b,r_c,x_c,imax2,switchable,closed\n1,2,0.01,0.02,0.01,0.02,0.01,0.02,4,0,1\n2,99,0.01,0.02,0,0,0,0,4,0,1\n");
    assert!(matches!(parse_feeder(&b, &e), Err(GridError::Topology(_))));
}

#[test]
fn malformed_row_names_row() {
    let dir = tempfile::tempdir().unwrap();
    let b = write(&dir, "b.csv", "id,phases,p_a,q_a,p_b,q_b,p_c,q_c,vmin2,vmax2,slack\n1,abc,0,0,0,0,0,0,0.9,1.1,1\n2,abc,ten,5,10,5,10,5,0.9,1.1,0\n");
    let e = write(
        &dir,
        "e.csv",
        "from,to,r_a,x_a,r_b,x_b,r_c,x_c,imax2,switchable,closed\n1,2,0.01,0.02,0.01,0.02,0.01,0.02,4,0,1\n",
    );
    match parse_feeder(&b, &e) {
        Err(GridError::Parse { row, .. }) => assert_eq!(row, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn duplicate_id_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let b = write(&dir, "b.csv", "id,phases,p_a,q_a,p_b,q_b,p_c,q_c,vmin2,vmax2,slack\n1,abc,0,0,0,0,0,0,0.9,1.1,1\n1,abc,0,0,0,0,0,0,0.9,1.1,0\n");
    let e = write(&dir, "e.csv", "from,to,r_a,x_a,r_b,x_b,r_c,x_c,imax2,switchable,closed\n");
    assert!(matches!(parse_feeder(&b, &e), Err(GridError::Validation(_))));
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nope.csv");
    assert!(matches!(parse_feeder(&p, &p), Err(GridError::Io { .. })));
}

#[test]
fn write_then_parse_round_trips() {
    let net = feeder123();
    let dir = tempfile::tempdir().unwrap();
    let (b, e) = (dir.path().join("b.csv"), dir.path().join("e.csv"));
    write_feeder(&net, &b, &e).unwrap();
    let back = parse_feeder(&b, &e).unwrap();
    assert_eq!(back.buses, net.buses);
    assert_eq!(back.branches, net.branches);
    assert_eq!(back.base_kva, net.base_kva);
}

#[test]
fn bundled_feeder_has_123_buses_and_four_ties() {
    let net = feeder123();
    assert_eq!(net.num_buses(), 123);
    assert_eq!(net.tie_switches().len(), 4);
    assert!(is_radial(&net, &net.initial_config()).unwrap());
}

#[test]
fn bundled_feeder_with_ties_closed_is_not_radial() {
    let net = feeder123();
    let mut cfg = net.initial_config();
    for k in net.tie_switches() {
        cfg.states.insert(k, SwitchState::Closed);
    }
    assert!(!is_radial(&net, &cfg).unwrap());

    // union-find oracle on the same edge set
    let idx = |id| net.bus_index(id).unwrap();
    let edges: Vec<(usize, usize)> = net
        .closed_branches(&cfg)
        .unwrap()
        .iter()
        .map(|&k| (idx(net.branches[k].from_bus), idx(net.branches[k].to_bus)))
        .collect();
    let slack: Vec<bool> = net.buses.iter().map(|b| b.is_slack).collect();
    assert!(!uf_radial(net.num_buses(), &edges, &slack));
}

#[test]
fn bundled_feeder_configs_are_radial_and_sorted() {
    let net = feeder123();
    let cfgs = enumerate_radial_configs(&net).unwrap();
    assert!(!cfgs.is_empty());
    assert!(cfgs.contains(&net.initial_config()));
    for c in &cfgs {
        assert_eq!(net.closed_branches(c).unwrap().len(), net.num_buses() - net.num_slack());
        assert!(net.tree(c).is_ok());
    }
    let enc: Vec<String> = cfgs.iter().map(|c| c.encoding()).collect();
    let mut sorted = enc.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(enc, sorted);
}

#[test]
fn four_bus_ring_keeps_only_ring_breaking_states() {
    let net = common::ring4();
    let cfgs = enumerate_radial_configs(&net).unwrap();
    // both closed forms the ring, both open strands bus 3 or 4
    let enc: Vec<String> = cfgs.iter().map(|c| c.encoding()).collect();
    assert_eq!(enc, vec!["01".to_string(), "10".to_string()]);
}

#[test]
fn opening_the_only_branch_gives_zero_matrix() {
    let net = Network::new(
        vec![bus(1, true, [0.0; 3], [0.0; 3]), bus(2, false, [0.0; 3], [0.0; 3])],
        vec![line(1, 2, 0.01, 0.02, true, true)],
        4.16,
        1000.0,
    )
    .unwrap();
    let cfg = net.config_with_open(&[0]).unwrap();
    assert_eq!(adjacency_matrix(&net, &cfg).unwrap().count_ones(), 0);
    assert!(adjacency_matrix(&net, &SwitchConfig::default()).is_err());
}

/// Random graph over `n` buses with `slack_count` slack buses; every edge switchable.
fn random_net(n: usize, slack_count: usize, edges: &[(usize, usize)]) -> Option<Network> {
    let buses = (0..n).map(|i| bus(i as u32 + 1, i < slack_count, [0.0; 3], [0.0; 3])).collect();
    let branches = edges.iter().map(|&(a, b)| line(a as u32 + 1, b as u32 + 1, 0.01, 0.01, true, true)).collect();
    Network::new(buses, branches, 1.0, 1.0).ok()
}

/// Random spanning tree (so the all-closed graph is slack-connected) plus extra edges.
fn graph_strategy() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize)>, u64)> {
    (2usize..=12).prop_flat_map(|n| {
        let tree: Vec<BoxedStrategy<(usize, usize)>> =
            (1..n).map(|k| (0..k).prop_map(move |p| (p, k)).boxed()).collect();
        let extra = proptest::collection::vec((0..n, 0..n).prop_filter("no self loop", |(a, b)| a != b), 0..=4);
        (Just(n), 1usize..=2.min(n - 1), tree, extra, any::<u64>()).prop_map(|(n, d, mut t, e, m)| {
            t.extend(e);
            (n, d, t, m)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn radiality_agrees_with_union_find((n, d, edges, mask) in graph_strategy()) {
        let net = random_net(n, d, &edges).expect("tree-based graphs are valid");
        let states = (0..edges.len())
            .map(|k| {
                // half the cases close exactly the spanning tree, the rest are random
                let closed = if mask >> 63 == 1 { k < n - 1 } else { mask >> (k % 63) & 1 == 1 };
                (k, if closed { SwitchState::Closed } else { SwitchState::Open })
            })
            .collect();
        let cfg = SwitchConfig { states };
        let closed: Vec<(usize, usize)> = (0..edges.len()).filter(|&k| cfg.is_closed(k) == Some(true)).map(|k| edges[k]).collect();
        let slack: Vec<bool> = (0..n).map(|i| i < d).collect();
        prop_assert_eq!(is_radial(&net, &cfg).unwrap(), uf_radial(n, &closed, &slack));

        let adj = adjacency_matrix(&net, &cfg).unwrap();
        for i in 0..n {
            prop_assert_eq!(adj.get(i, i), 0);
            for j in 0..n {
                prop_assert_eq!(adj.get(i, j), adj.get(j, i));
            }
        }
    }

    #[test]
    fn enumeration_is_exactly_the_radial_subset((n, d, edges, _m) in graph_strategy()) {
        prop_assume!(edges.len() <= 12);
        let net = random_net(n, d, &edges).expect("tree-based graphs are valid");
        let got = enumerate_radial_configs(&net).unwrap();
        let slack: Vec<bool> = (0..n).map(|i| i < d).collect();
        let mut expected = Vec::new();
        for mask in 0u32..(1 << edges.len()) {
            let closed: Vec<(usize, usize)> = (0..edges.len()).filter(|&k| mask >> k & 1 == 1).map(|k| edges[k]).collect();
            if uf_radial(n, &closed, &slack) {
                let states = (0..edges.len())
                    .map(|k| (k, if mask >> k & 1 == 1 { SwitchState::Closed } else { SwitchState::Open }))
                    .collect();
                expected.push(SwitchConfig { states });
            }
        }
        expected.sort_by_key(|c| c.encoding());
        prop_assert_eq!(&got, &expected);
        for c in &got {
            prop_assert_eq!(net.closed_branches(c).unwrap().len(), n - d);
        }
    }
}
