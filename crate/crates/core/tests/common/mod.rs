#![allow(dead_code)]
//! Independent oracles shared by the integration and acceptance suites.

use gridopt::grid::{Branch, Bus, BusId, Network, PhaseSet, PhaseVector};
use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type C64 = Complex<f64>;

#[derive(Debug, Clone)]
pub struct PfLine {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
}

#[derive(Debug, Clone)]
pub struct PfResult {
    pub v: Vec<C64>,
    /// resistive loss, pu
    pub loss: f64,
    /// |I|^2 per line, pu
    pub i2: Vec<f64>,
}

/// Newton-Raphson power flow in rectangular coordinates with a finite-difference
/// Jacobian. `demand[i]` is consumed power (pu); `slack` has V = 1 at angle 0.
pub fn newton_pf(n: usize, lines: &[PfLine], demand: &[C64], slack: usize) -> Option<PfResult> {
    let mut y = vec![vec![C64::new(0.0, 0.0); n]; n];
    for ln in lines {
        let g = C64::new(1.0, 0.0) / C64::new(ln.r, ln.x);
        y[ln.from][ln.from] += g;
        y[ln.to][ln.to] += g;
        y[ln.from][ln.to] -= g;
        y[ln.to][ln.from] -= g;
    }
    let unknown: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = unknown.len();
    let volt = |state: &DVector<f64>| {
        let mut v = vec![C64::new(1.0, 0.0); n];
        for (k, &i) in unknown.iter().enumerate() {
            v[i] = C64::new(state[2 * k], state[2 * k + 1]);
        }
        v
    };
    let mismatch = |state: &DVector<f64>| {
        let v = volt(state);
        let mut out = DVector::zeros(2 * m);
        for (k, &i) in unknown.iter().enumerate() {
            let mut cur = C64::new(0.0, 0.0);
            for j in 0..n {
                cur += y[i][j] * v[j];
            }
            let s = v[i] * cur.conj() + demand[i];
            out[2 * k] = s.re;
            out[2 * k + 1] = s.im;
        }
        out
    };
    let mut state = DVector::from_fn(2 * m, |k, _| if k % 2 == 0 { 1.0 } else { 0.0 });
    for _ in 0..60 {
        let f = mismatch(&state);
        if f.amax() < 1e-13 {
            break;
        }
        let h = 1e-7;
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for c in 0..2 * m {
            let mut sp = state.clone();
            let mut sm = state.clone();
            sp[c] += h;
            sm[c] -= h;
            let col = (mismatch(&sp) - mismatch(&sm)) / (2.0 * h);
            jac.set_column(c, &col);
        }
        let step = jac.lu().solve(&f)?;
        state -= step;
        if state.iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    if mismatch(&state).amax() > 1e-10 {
        return None;
    }
    let v = volt(&state);
    let mut loss = 0.0;
    let mut i2 = Vec::with_capacity(lines.len());
    for ln in lines {
        let cur = (v[ln.from] - v[ln.to]) / C64::new(ln.r, ln.x);
        i2.push(cur.norm_sqr());
        loss += ln.r * cur.norm_sqr();
    }
    Some(PfResult { v, loss, i2 })
}

/// Newton oracle on the balanced (phase-a) equivalent of a network with the
/// given closed branch ids.
pub fn network_pf(net: &Network, closed: &[usize], scale: f64) -> Option<PfResult> {
    let idx = |id: BusId| net.buses.iter().position(|b| b.id == id).unwrap();
    let lines: Vec<PfLine> = closed
        .iter()
        .map(|&k| {
            let br = &net.branches[k];
            PfLine { from: idx(br.from_bus), to: idx(br.to_bus), r: br.r.a, x: br.x.a }
        })
        .collect();
    let demand: Vec<C64> =
        net.buses.iter().map(|b| C64::new(b.load_p.a, b.load_q.a) * (scale / net.base_kva)).collect();
    let slack = net.buses.iter().position(|b| b.is_slack).unwrap();
    newton_pf(net.num_buses(), &lines, &demand, slack)
}

/// Newton oracle per phase for three-phase networks with decoupled phases.
/// `extra[i]` is an injection (pu, per phase) subtracted from demand.
pub fn phase_pf(net: &Network, inject: &dyn Fn(usize, usize) -> C64) -> Option<(f64, Vec<PfResult>)> {
    let mut total = 0.0;
    let mut per = Vec::new();
    for ph in gridopt::grid::Phase::ALL {
        let on: Vec<usize> = (0..net.num_buses()).filter(|&i| net.buses[i].phases.contains(ph)).collect();
        if on.len() < 2 {
            continue;
        }
        let pos = |id: BusId| on.iter().position(|&i| net.buses[i].id == id);
        let mut lines = Vec::new();
        for br in &net.branches {
            if br.switchable && !br.initially_closed {
                continue;
            }
            if let (Some(a), Some(b)) = (pos(br.from_bus), pos(br.to_bus)) {
                lines.push(PfLine { from: a, to: b, r: br.r.get(ph), x: br.x.get(ph) });
            }
        }
        let demand: Vec<C64> = on
            .iter()
            .map(|&i| {
                let b = &net.buses[i];
                C64::new(b.load_p.get(ph), b.load_q.get(ph)) / net.base_kva - inject(i, ph.index())
            })
            .collect();
        let slack = on.iter().position(|&i| net.buses[i].is_slack)?;
        let res = newton_pf(on.len(), &lines, &demand, slack)?;
        total += res.loss;
        per.push(res);
    }
    Some((total, per))
}

pub fn bus(id: BusId, slack: bool, p: [f64; 3], q: [f64; 3]) -> Bus {
    Bus {
        id,
        phases: PhaseSet::ABC,
        load_p: PhaseVector { a: p[0], b: p[1], c: p[2] },
        load_q: PhaseVector { a: q[0], b: q[1], c: q[2] },
        v_min: 0.81,
        v_max: 1.21,
        is_slack: slack,
    }
}

pub fn line(from: BusId, to: BusId, r: f64, x: f64, switchable: bool, closed: bool) -> Branch {
    Branch {
        from_bus: from,
        to_bus: to,
        r: PhaseVector::splat(r),
        x: PhaseVector::splat(x),
        i_max: 100.0,
        switchable,
        initially_closed: closed,
    }
}

/// Random radial feeder with `n` buses, balanced loads and wide voltage bounds.
pub fn random_radial(seed: u64, n: usize) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buses = vec![bus(1, true, [0.0; 3], [0.0; 3])];
    let mut branches = Vec::new();
    for k in 2..=n as u32 {
        let p = rng.random_range(50.0..400.0);
        let q = p * rng.random_range(0.1..0.6);
        buses.push(bus(k, false, [p; 3], [q; 3]));
        let parent = rng.random_range(1..k);
        let r = rng.random_range(0.005..0.03);
        branches.push(line(parent, k, r, r * rng.random_range(1.0..3.0), false, true));
    }
    Network::new(buses, branches, 4.16, 1000.0).unwrap()
}

/// Random radial three-phase feeder with unbalanced loads and per-phase impedances.
pub fn random_unbalanced(seed: u64, n: usize) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buses = vec![bus(1, true, [0.0; 3], [0.0; 3])];
    let mut branches = Vec::new();
    for k in 2..=n as u32 {
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(20.0..250.0));
        let q: [f64; 3] = std::array::from_fn(|i| p[i] * rng.random_range(0.1..0.5));
        buses.push(bus(k, false, p, q));
        let parent = rng.random_range(1..k);
        let mut br = line(parent, k, 0.01, 0.02, false, true);
        let r: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.005..0.025));
        br.r = PhaseVector { a: r[0], b: r[1], c: r[2] };
        br.x = PhaseVector { a: 2.0 * r[0], b: 1.8 * r[1], c: 2.2 * r[2] };
        branches.push(br);
    }
    Network::new(buses, branches, 4.16, 1000.0).unwrap()
}

/// Union-find forest check: closed edges = N - d and every bus reaches a slack.
pub fn uf_radial(n: usize, edges: &[(usize, usize)], slack: &[bool]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, a: usize) -> usize {
        if p[a] != a {
            let r = find(p, p[a]);
            p[a] = r;
        }
        p[a]
    }
    let d = slack.iter().filter(|&&s| s).count();
    if edges.len() + d != n {
        return false;
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            return false;
        }
        parent[ra] = rb;
    }
    // acyclic with N - d edges: d trees; each must hold exactly one slack
    let mut slack_in_root = std::collections::HashMap::new();
    for i in 0..n {
        if slack[i] {
            *slack_in_root.entry(find(&mut parent, i)).or_insert(0) += 1;
        }
    }
    (0..n).all(|i| slack_in_root.get(&find(&mut parent, i)).copied().unwrap_or(0) == 1)
}

/// Brute-force config ranking: every switch subset, radial ones solved by Newton.
/// Returns `(open switch ids, loss pu)` sorted by loss.
pub fn brute_force_ranking(net: &Network) -> Vec<(Vec<usize>, f64)> {
    let sw: Vec<usize> = (0..net.branches.len()).filter(|&k| net.branches[k].switchable).collect();
    let idx = |id: BusId| net.buses.iter().position(|b| b.id == id).unwrap();
    let slack: Vec<bool> = net.buses.iter().map(|b| b.is_slack).collect();
    let mut out = Vec::new();
    for mask in 0u32..(1 << sw.len()) {
        let open: Vec<usize> = sw.iter().enumerate().filter(|(p, _)| mask & (1 << p) == 0).map(|(_, &k)| k).collect();
        let closed: Vec<usize> = (0..net.branches.len()).filter(|k| !open.contains(k)).collect();
        let edges: Vec<(usize, usize)> =
            closed.iter().map(|&k| (idx(net.branches[k].from_bus), idx(net.branches[k].to_bus))).collect();
        if !uf_radial(net.num_buses(), &edges, &slack) {
            continue;
        }
        if let Some(pf) = network_pf(net, &closed, 1.0) {
            out.push((open, pf.loss));
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// 4-bus ring 1-2-3-4-1 with switches on 2-3 and 4-1 (the latter open).
pub fn ring4() -> Network {
    Network::new(
        vec![
            bus(1, true, [0.0; 3], [0.0; 3]),
            bus(2, false, [300.0; 3], [100.0; 3]),
            bus(3, false, [500.0; 3], [200.0; 3]),
            bus(4, false, [150.0; 3], [60.0; 3]),
        ],
        vec![
            line(1, 2, 0.010, 0.020, false, true),
            line(2, 3, 0.030, 0.050, true, true),
            line(3, 4, 0.012, 0.025, false, true),
            line(4, 1, 0.008, 0.018, true, false),
        ],
        4.16,
        1000.0,
    )
    .unwrap()
}

/// 8-bus network with two independent loops, each broken by two switches.
pub fn double_loop8() -> Network {
    let p = |v: f64| [v; 3];
    Network::new(
        vec![
            bus(1, true, p(0.0), p(0.0)),
            bus(2, false, p(200.0), p(80.0)),
            bus(3, false, p(350.0), p(120.0)),
            bus(4, false, p(120.0), p(40.0)),
            bus(5, false, p(260.0), p(90.0)),
            bus(6, false, p(180.0), p(70.0)),
            bus(7, false, p(400.0), p(150.0)),
            bus(8, false, p(90.0), p(30.0)),
        ],
        vec![
            // loop A: 1-2-3-4-1
            line(1, 2, 0.010, 0.020, false, true),
            line(2, 3, 0.018, 0.030, true, true),
            line(3, 4, 0.015, 0.028, false, true),
            line(4, 1, 0.022, 0.040, true, false),
            // loop B: 1-5-6-7-8-5
            line(1, 5, 0.008, 0.016, false, true),
            line(5, 6, 0.012, 0.022, false, true),
            line(6, 7, 0.025, 0.045, true, true),
            line(7, 8, 0.014, 0.026, false, true),
            line(8, 5, 0.020, 0.035, true, false),
        ],
        4.16,
        1000.0,
    )
    .unwrap()
}

/// Standard normal quantile through the Maclaurin series of the inverse error
/// function, `erfinv(z) = sum c_k / (2k + 1) (sqrt(pi) z / 2)^(2k + 1)` with
/// `c_0 = 1` and `c_k = sum_m c_m c_(k-1-m) / ((m + 1)(2m + 1))`.
pub fn normal_quantile_series(p: f64, terms: usize) -> f64 {
    let z = 2.0 * p - 1.0;
    let mut c = vec![1.0f64];
    for k in 1..terms {
        c.push((0..k).map(|m| c[m] * c[k - 1 - m] / ((m + 1) as f64 * (2 * m + 1) as f64)).sum());
    }
    let u = std::f64::consts::PI.sqrt() * z / 2.0;
    let mut pow = u;
    let mut sum = 0.0;
    for (k, ck) in c.iter().enumerate() {
        sum += ck / (2 * k + 1) as f64 * pow;
        pow *= u * u;
    }
    std::f64::consts::SQRT_2 * sum
}
