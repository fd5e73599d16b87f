//! Balanced branch-flow OPF (SOC relaxation) and loss-minimizing
//! reconfiguration over all radial switch configurations.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::grid::{self, BranchId, BusId, GridError, Network, RadialTree, SwitchConfig};
use crate::solver::{admm_solve, ADMMParams, ConicProgram, Solution, SolverError, VarId};
use crate::workers::WorkerPool;

#[derive(Debug, thiserror::Error)]
pub enum ReconfigError {
    #[error("configuration is not radial")]
    NotRadial,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("load vector has {got} entries, network has {expected} buses")]
    Loads { got: usize, expected: usize },
    #[error("no feasible radial configuration among {0} candidates")]
    NoFeasible(usize),
}

/// Per-bus balanced-equivalent demand in kW / kvar, indexed like `Network::buses`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusLoads {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl BusLoads {
    pub fn zero(n: usize) -> Self {
        Self { p: vec![0.0; n], q: vec![0.0; n] }
    }

    /// Phase-a demand of every bus, the balanced equivalent.
    pub fn from_network(net: &Network) -> Self {
        Self { p: net.buses.iter().map(|b| b.load_p.a).collect(), q: net.buses.iter().map(|b| b.load_q.a).collect() }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { p: self.p.iter().map(|v| v * factor).collect(), q: self.q.iter().map(|v| v * factor).collect() }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Index map from network elements to program variables.
#[derive(Debug, Clone)]
pub struct BalancedBFM {
    pub program: ConicProgram,
    pub tree: RadialTree,
    /// `(branch, parent_index, child_index)` per fed branch
    pub edges: Vec<(BranchId, usize, usize)>,
    pub v: Vec<VarId>,
    pub p: Vec<VarId>,
    pub q: Vec<VarId>,
    pub l: Vec<VarId>,
    pub r: Vec<f64>,
    pub x: Vec<f64>,
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    pub bus_ids: Vec<BusId>,
    pub slack: Vec<bool>,
    pub base_kva: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub branch: BranchId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub p: f64,
    pub q: f64,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OPFResultBalanced {
    pub flows: Vec<BranchFlow>,
    /// `(bus id, squared voltage)` in file order
    pub voltages: Vec<(BusId, f64)>,
    pub total_loss_kw: f64,
    pub loss_pu: f64,
    pub relaxation_tightness: f64,
    pub exact: bool,
    pub converged: bool,
    pub iterations: usize,
    pub max_balance_residual: f64,
}

/// Tightness threshold below which the SOC relaxation is called exact.
pub const EXACT_TOL: f64 = 1e-3;
const TIGHTNESS_FLOOR: f64 = 1e-6;

/// Default solver settings for branch-flow programs.
pub fn opf_params() -> ADMMParams {
    ADMMParams { eps_abs: 1e-9, eps_rel: 1e-8, max_iter: 50_000, anderson: 10, ..ADMMParams::default() }
}

pub fn build_balanced_bfm(net: &Network, cfg: &SwitchConfig, loads: &BusLoads) -> Result<BalancedBFM, ReconfigError> {
    if loads.p.len() != net.num_buses() || loads.q.len() != net.num_buses() {
        return Err(ReconfigError::Loads { got: loads.p.len().min(loads.q.len()), expected: net.num_buses() });
    }
    if !grid::is_radial(net, cfg)? {
        return Err(ReconfigError::NotRadial);
    }
    let tree = net.tree(cfg)?;
    let edges = tree.edges();
    let base = net.base_kva;
    let mut prog = ConicProgram::new();

    let v: Vec<VarId> = net
        .buses
        .iter()
        .map(|b| {
            let (lo, hi) = if b.is_slack { (1.0, 1.0) } else { (b.v_min, b.v_max) };
            prog.add_bounded(format!("v[{}]", b.id), lo, hi)
        })
        .collect();

    let mut p = Vec::with_capacity(edges.len());
    let mut q = Vec::with_capacity(edges.len());
    let mut l = Vec::with_capacity(edges.len());
    let mut rs = Vec::with_capacity(edges.len());
    let mut xs = Vec::with_capacity(edges.len());
    for &(k, _, _) in &edges {
        let br = &net.branches[k];
        p.push(prog.add_var(format!("P[{k}]")));
        q.push(prog.add_var(format!("Q[{k}]")));
        let lk = prog.add_bounded(format!("l[{k}]"), 0.0, br.i_max);
        prog.set_linear(lk, br.r.a);
        l.push(lk);
        rs.push(br.r.a);
        xs.push(br.x.a);
    }

    // bus balance: S_in - z l_in - sum S_out = demand (non-slack buses)
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); net.num_buses()];
    let mut feeding: Vec<Option<usize>> = vec![None; net.num_buses()];
    for (e, &(_, par, ch)) in edges.iter().enumerate() {
        children[par].push(e);
        feeding[ch] = Some(e);
    }
    let load_p: Vec<f64> = loads.p.iter().map(|v| v / base).collect();
    let load_q: Vec<f64> = loads.q.iter().map(|v| v / base).collect();
    for i in 0..net.num_buses() {
        if net.buses[i].is_slack {
            continue;
        }
        let e = feeding[i].expect("non-slack bus of a radial tree has a parent");
        let mut rp = vec![(p[e], 1.0), (l[e], -rs[e])];
        let mut rq = vec![(q[e], 1.0), (l[e], -xs[e])];
        for &c in &children[i] {
            rp.push((p[c], -1.0));
            rq.push((q[c], -1.0));
        }
        prog.add_equality(rp, load_p[i]);
        prog.add_equality(rq, load_q[i]);
    }

    for (e, &(k, par, ch)) in edges.iter().enumerate() {
        let (r, x) = (rs[e], xs[e]);
        // v_child = v_parent - 2(rP + xQ) + (r^2 + x^2) l
        prog.add_equality(
            vec![(v[ch], 1.0), (v[par], -1.0), (p[e], 2.0 * r), (q[e], 2.0 * x), (l[e], -(r * r + x * x))],
            0.0,
        );
        // |S|^2 <= v_parent l  <=>  ||(2P, 2Q, v - l)|| <= v + l
        let t = prog.add_var(format!("soc_t[{k}]"));
        let u: Vec<VarId> = (0..3).map(|j| prog.add_var(format!("soc_u{j}[{k}]"))).collect();
        prog.add_equality(vec![(t, 1.0), (v[par], -1.0), (l[e], -1.0)], 0.0);
        prog.add_equality(vec![(u[0], 1.0), (p[e], -2.0)], 0.0);
        prog.add_equality(vec![(u[1], 1.0), (q[e], -2.0)], 0.0);
        prog.add_equality(vec![(u[2], 1.0), (v[par], -1.0), (l[e], 1.0)], 0.0);
        prog.add_soc(t, u);
    }

    Ok(BalancedBFM {
        program: prog,
        tree,
        edges,
        v,
        p,
        q,
        l,
        r: rs,
        x: xs,
        load_p,
        load_q,
        bus_ids: net.buses.iter().map(|b| b.id).collect(),
        slack: net.buses.iter().map(|b| b.is_slack).collect(),
        base_kva: base,
    })
}

impl BalancedBFM {
    /// Largest per-bus real/reactive balance mismatch of an assignment, pu.
    pub fn balance_residual(&self, vals: &[f64]) -> f64 {
        let n = self.bus_ids.len();
        let mut mp = vec![0.0; n];
        let mut mq = vec![0.0; n];
        for (e, &(_, par, ch)) in self.edges.iter().enumerate() {
            let (pe, qe, le) = (vals[self.p[e].index()], vals[self.q[e].index()], vals[self.l[e].index()]);
            mp[ch] += pe - self.r[e] * le;
            mq[ch] += qe - self.x[e] * le;
            mp[par] -= pe;
            mq[par] -= qe;
        }
        (0..n)
            .filter(|&i| !self.slack[i])
            .map(|i| (mp[i] - self.load_p[i]).abs().max((mq[i] - self.load_q[i]).abs()))
            .fold(0.0, f64::max)
    }

    pub fn result(&self, sol: &Solution) -> OPFResultBalanced {
        let vals = &sol.values;
        let mut tight: f64 = 0.0;
        let mut loss = 0.0;
        let mut flows = Vec::with_capacity(self.edges.len());
        for (e, &(k, par, ch)) in self.edges.iter().enumerate() {
            let (pe, qe, le) = (vals[self.p[e].index()], vals[self.q[e].index()], vals[self.l[e].index()]);
            let vp = vals[self.v[par].index()];
            let lv = le * vp;
            tight = tight.max((lv - (pe * pe + qe * qe)).abs() / lv.max(TIGHTNESS_FLOOR));
            loss += self.r[e] * le;
            flows.push(BranchFlow {
                branch: k,
                from_bus: self.bus_ids[par],
                to_bus: self.bus_ids[ch],
                p: pe,
                q: qe,
                l: le,
            });
        }
        OPFResultBalanced {
            flows,
            voltages: self.bus_ids.iter().zip(&self.v).map(|(id, v)| (*id, vals[v.index()])).collect(),
            total_loss_kw: loss * self.base_kva,
            loss_pu: loss,
            relaxation_tightness: tight,
            exact: tight <= EXACT_TOL,
            converged: sol.converged,
            iterations: sol.iterations,
            max_balance_residual: self.balance_residual(vals),
        }
    }
}

pub fn solve_balanced_opf(bfm: &BalancedBFM, params: &ADMMParams) -> Result<OPFResultBalanced, ReconfigError> {
    let sol = admm_solve(&bfm.program, params)?;
    Ok(bfm.result(&sol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEvaluation {
    pub config_id: usize,
    pub config: SwitchConfig,
    pub open_switches: Vec<BranchId>,
    /// `None` marks an infeasible or non-converged configuration.
    pub loss_kw: Option<f64>,
    pub tightness: Option<f64>,
    pub iterations: usize,
}

impl ConfigEvaluation {
    pub fn feasible(&self) -> bool {
        self.loss_kw.is_some()
    }
}

/// Build and solve one configuration; solver failures mark it infeasible.
pub fn evaluate_config(
    net: &Network,
    cfg: &SwitchConfig,
    loads: &BusLoads,
    params: &ADMMParams,
) -> Result<(SwitchConfig, Option<f64>), ReconfigError> {
    let bfm = build_balanced_bfm(net, cfg, loads)?;
    let loss = match solve_balanced_opf(&bfm, params) {
        Ok(res) if res.converged => Some(res.total_loss_kw),
        _ => None,
    };
    Ok((cfg.clone(), loss))
}

fn evaluate_full(
    net: &Network,
    id: usize,
    cfg: &SwitchConfig,
    loads: &BusLoads,
    params: &ADMMParams,
) -> ConfigEvaluation {
    let res = build_balanced_bfm(net, cfg, loads).and_then(|bfm| solve_balanced_opf(&bfm, params));
    let (loss_kw, tightness, iterations) = match res {
        Ok(r) if r.converged => (Some(r.total_loss_kw), Some(r.relaxation_tightness), r.iterations),
        Ok(r) => (None, Some(r.relaxation_tightness), r.iterations),
        Err(_) => (None, None, 0),
    };
    ConfigEvaluation {
        config_id: id,
        config: cfg.clone(),
        open_switches: cfg.open_switches(),
        loss_kw,
        tightness,
        iterations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconfigReport {
    pub evaluations: Vec<ConfigEvaluation>,
    pub baseline_id: usize,
    pub baseline_loss_kw: f64,
    pub best_id: usize,
    pub best_loss_kw: f64,
    pub reduction_pct: f64,
    pub workers: usize,
    pub wall_time_s: f64,
}

impl ReconfigReport {
    pub fn best(&self) -> &ConfigEvaluation {
        &self.evaluations[self.best_id]
    }

    /// Feasible configuration ids sorted by loss, ties by open-switch set.
    pub fn ranking(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.evaluations.iter().filter(|e| e.feasible()).map(|e| e.config_id).collect();
        ids.sort_by(|&a, &b| cmp_eval(&self.evaluations[a], &self.evaluations[b]));
        ids
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["config_id", "open_switches", "loss_kw", "feasible"])?;
        for e in &self.evaluations {
            let open: Vec<String> = e.open_switches.iter().map(|b| b.to_string()).collect();
            let loss = e.loss_kw.map(|v| format!("{v:.6}")).unwrap_or_default();
            wr.write_record([e.config_id.to_string(), open.join(";"), loss, u8::from(e.feasible()).to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn cmp_eval(a: &ConfigEvaluation, b: &ConfigEvaluation) -> std::cmp::Ordering {
    let la = a.loss_kw.unwrap_or(f64::INFINITY);
    let lb = b.loss_kw.unwrap_or(f64::INFINITY);
    la.total_cmp(&lb).then_with(|| a.open_switches.cmp(&b.open_switches))
}

/// Evaluates every radial configuration on the pool and picks the minimum-loss one.
///
/// The baseline is the initial switch state of the network, which must itself
/// be radial.
pub fn reconfigure(
    net: &Network,
    loads: &BusLoads,
    params: &ADMMParams,
    pool: &WorkerPool,
) -> Result<ReconfigReport, ReconfigError> {
    let start = Instant::now();
    let configs = grid::enumerate_radial_configs(net)?;
    let baseline_cfg = net.initial_config();
    let baseline_id = configs.iter().position(|c| *c == baseline_cfg).ok_or(ReconfigError::NotRadial)?;
    let indexed: Vec<(usize, SwitchConfig)> = configs.into_iter().enumerate().collect();
    let evaluations = pool.map(&indexed, |(id, cfg)| evaluate_full(net, *id, cfg, loads, params));

    let best = evaluations
        .iter()
        .filter(|e| e.feasible())
        .min_by(|a, b| cmp_eval(a, b))
        .ok_or(ReconfigError::NoFeasible(evaluations.len()))?;
    let best_id = best.config_id;
    let best_loss_kw = best.loss_kw.unwrap_or(f64::NAN);
    let baseline_loss_kw = evaluations[baseline_id].loss_kw.unwrap_or(f64::NAN);
    let reduction_pct =
        if baseline_loss_kw > 0.0 { (baseline_loss_kw - best_loss_kw) / baseline_loss_kw * 100.0 } else { 0.0 };
    Ok(ReconfigReport {
        evaluations,
        baseline_id,
        baseline_loss_kw,
        best_id,
        best_loss_kw,
        reduction_pct,
        workers: pool.workers(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus, PhaseSet, PhaseVector};

    fn bus(id: BusId, slack: bool, p: f64, q: f64) -> Bus {
        Bus {
            id,
            phases: PhaseSet::ABC,
            load_p: PhaseVector::splat(p),
            load_q: PhaseVector::splat(q),
            v_min: 0.81,
            v_max: 1.21,
            is_slack: slack,
        }
    }

    fn line(from: BusId, to: BusId, r: f64, x: f64) -> Branch {
        Branch {
            from_bus: from,
            to_bus: to,
            r: PhaseVector::splat(r),
            x: PhaseVector::splat(x),
            i_max: 100.0,
            switchable: false,
            initially_closed: true,
        }
    }

    #[test]
    fn zero_load_gives_zero_loss() {
        let net = Network::new(
            vec![bus(1, true, 0.0, 0.0), bus(2, false, 0.0, 0.0)],
            vec![line(1, 2, 0.01, 0.02)],
            4.16,
            1000.0,
        )
        .unwrap();
        let bfm = build_balanced_bfm(&net, &SwitchConfig::default(), &BusLoads::from_network(&net)).unwrap();
        let res = solve_balanced_opf(&bfm, &opf_params()).unwrap();
        assert!(res.converged);
        assert!(res.total_loss_kw.abs() < 1e-6, "{}", res.total_loss_kw);
    }

    #[test]
    fn two_bus_loss_matches_closed_form() {
        // 1 pu load at unity pf: P = v2 * I, with v2 from the quadratic of the drop
        let net = Network::new(
            vec![bus(1, true, 0.0, 0.0), bus(2, false, 1000.0, 0.0)],
            vec![line(1, 2, 0.01, 0.0)],
            4.16,
            1000.0,
        )
        .unwrap();
        let bfm = build_balanced_bfm(&net, &SwitchConfig::default(), &BusLoads::from_network(&net)).unwrap();
        let res = solve_balanced_opf(&bfm, &opf_params()).unwrap();
        // |V2| solves V2 (1 - V2) = r P  ->  V2 = (1 + sqrt(1 - 4 r P)) / 2
        let v2 = (1.0 + (1.0f64 - 4.0 * 0.01).sqrt()) / 2.0;
        let i = 1.0 / v2;
        assert!(res.converged);
        assert!((res.loss_pu - 0.01 * i * i).abs() < 1e-6, "{} vs {}", res.loss_pu, 0.01 * i * i);
        assert!(res.exact);
        assert!(res.max_balance_residual < 1e-9);
    }

    #[test]
    fn loop_config_rejected_before_solve() {
        let mut tie = line(3, 1, 0.01, 0.01);
        tie.switchable = true;
        tie.initially_closed = false;
        let net = Network::new(
            vec![bus(1, true, 0.0, 0.0), bus(2, false, 10.0, 5.0), bus(3, false, 10.0, 5.0)],
            vec![line(1, 2, 0.01, 0.02), line(2, 3, 0.01, 0.02), tie],
            4.16,
            1000.0,
        )
        .unwrap();
        let closed = net.config_with_open(&[]).unwrap();
        assert!(matches!(
            evaluate_config(&net, &closed, &BusLoads::from_network(&net), &opf_params()),
            Err(ReconfigError::NotRadial)
        ));
    }

    #[test]
    fn single_config_has_zero_reduction() {
        let net = Network::new(
            vec![bus(1, true, 0.0, 0.0), bus(2, false, 50.0, 10.0)],
            vec![line(1, 2, 0.01, 0.02)],
            4.16,
            1000.0,
        )
        .unwrap();
        let rep = reconfigure(&net, &BusLoads::from_network(&net), &opf_params(), &WorkerPool::serial()).unwrap();
        assert_eq!(rep.evaluations.len(), 1);
        assert_eq!(rep.best_id, rep.baseline_id);
        assert_eq!(rep.reduction_pct, 0.0);
    }
}
