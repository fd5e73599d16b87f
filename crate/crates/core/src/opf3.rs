//! Three-phase unbalanced branch-flow OPF with one 2x2 Hermitian PSD block
//! per (branch, phase), rank constraint dropped.

use serde::{Deserialize, Serialize};

use crate::grid::{self, BranchId, BusId, GridError, Network, Phase, PhaseVector};
use crate::solver::{admm_solve, rank1_gap, ADMMParams, ConicProgram, HermitianMatrix, Solution, SolverError, VarId};

#[derive(Debug, thiserror::Error)]
pub enum Opf3Error {
    #[error("network is not radial in its initial switch state")]
    NotRadial,
    #[error("phase {phase} at bus {bus} has no feeding phase on its parent branch")]
    UnfedPhase { bus: BusId, phase: Phase },
    #[error("headroom must be finite and non-negative, got {0}")]
    Headroom(f64),
    #[error("load vector has {got} entries, network has {expected} buses")]
    Loads { got: usize, expected: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Per-bus per-phase demand in kW / kvar, indexed like `Network::buses`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLoads {
    pub p: Vec<PhaseVector<f64>>,
    pub q: Vec<PhaseVector<f64>>,
}

impl PhaseLoads {
    pub fn from_network(net: &Network) -> Self {
        Self { p: net.buses.iter().map(|b| b.load_p).collect(), q: net.buses.iter().map(|b| b.load_q).collect() }
    }

    pub fn scaled(&self, f: f64) -> Self {
        let sc = |v: &PhaseVector<f64>| PhaseVector { a: v.a * f, b: v.b * f, c: v.c * f };
        Self { p: self.p.iter().map(sc).collect(), q: self.q.iter().map(sc).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Opf3Settings {
    /// Bound on each control injection component, kW / kvar.
    pub headroom_kw: f64,
    /// Real-time price, $/kWh.
    pub price_rt: f64,
    /// Dispatch interval, hours.
    pub interval_h: f64,
}

impl Default for Opf3Settings {
    fn default() -> Self {
        Self { headroom_kw: 0.0, price_rt: 0.05, interval_h: 5.0 / 60.0 }
    }
}

/// Share of scheduled renewable output reserved for feeder-level regulation.
pub const HEADROOM_SHARE: f64 = 0.025;

pub fn default_headroom(renewable_kw: f64) -> f64 {
    HEADROOM_SHARE * renewable_kw
}

#[derive(Debug, Clone)]
struct PhaseEdge {
    branch: BranchId,
    phase: Phase,
    parent: usize,
    child: usize,
    r: f64,
    x: f64,
    p: VarId,
    q: VarId,
    l: VarId,
}

#[derive(Debug, Clone)]
pub struct ThreePhaseBFM {
    pub program: ConicProgram,
    edges: Vec<PhaseEdge>,
    /// `(bus index, phase, v var)`
    volts: Vec<(usize, Phase, VarId)>,
    /// `(bus index, phase, p control, q control)`
    controls: Vec<(usize, Phase, VarId, VarId)>,
    bus_ids: Vec<BusId>,
    demand: Vec<(usize, Phase, f64, f64)>,
    base_kva: f64,
    settings: Opf3Settings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseFlow {
    pub branch: BranchId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub phase: Phase,
    pub p: f64,
    pub q: f64,
    pub l: f64,
    /// `r` of the branch on this phase, pu
    pub r: f64,
    /// sending-end squared voltage
    pub v_from: f64,
    pub rank1_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseVoltage {
    pub bus: BusId,
    pub phase: Phase,
    pub v2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlInjection {
    pub bus: BusId,
    pub phase: Phase,
    pub p_kw: f64,
    pub q_kvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OPF3Result {
    pub flows: Vec<PhaseFlow>,
    pub voltages: Vec<PhaseVoltage>,
    pub controls: Vec<ControlInjection>,
    pub line_loss_kwh: f64,
    pub fee_cost: f64,
    pub max_rank1_gap: f64,
    pub exact: bool,
    pub converged: bool,
    pub iterations: usize,
    pub max_balance_residual: f64,
    pub base_kva: f64,
    pub interval_h: f64,
}

/// Gap threshold for calling the relaxation exact.
pub const EXACT_GAP: f64 = 1e-3;

pub fn build_unbalanced_bfm(
    net: &Network,
    loads: &PhaseLoads,
    settings: &Opf3Settings,
) -> Result<ThreePhaseBFM, Opf3Error> {
    let h = settings.headroom_kw;
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Opf3Error::Headroom(h));
    }
    if loads.p.len() != net.num_buses() || loads.q.len() != net.num_buses() {
        return Err(Opf3Error::Loads { got: loads.p.len().min(loads.q.len()), expected: net.num_buses() });
    }
    let cfg = net.initial_config();
    if !grid::is_radial(net, &cfg)? {
        return Err(Opf3Error::NotRadial);
    }
    let tree = net.tree(&cfg)?;
    let base = net.base_kva;
    let mut prog = ConicProgram::new();

    let mut vmap: Vec<PhaseVector<Option<VarId>>> = vec![PhaseVector::default(); net.num_buses()];
    let mut volts = Vec::new();
    for (i, b) in net.buses.iter().enumerate() {
        for ph in b.phases.iter() {
            let (lo, hi) = if b.is_slack { (1.0, 1.0) } else { (b.v_min, b.v_max) };
            let v = prog.add_bounded(format!("v[{},{ph}]", b.id), lo, hi);
            vmap[i].set(ph, Some(v));
            volts.push((i, ph, v));
        }
    }

    let mut edges = Vec::new();
    for (k, par, ch) in tree.edges() {
        let br = &net.branches[k];
        let pp = net.buses[par].phases;
        let cp = net.buses[ch].phases;
        for ph in cp.iter() {
            if !pp.contains(ph) {
                return Err(Opf3Error::UnfedPhase { bus: net.buses[ch].id, phase: ph });
            }
            let p = prog.add_var(format!("P[{k},{ph}]"));
            let q = prog.add_var(format!("Q[{k},{ph}]"));
            let l = prog.add_bounded(format!("l[{k},{ph}]"), 0.0, br.i_max);
            prog.set_linear(l, br.r.get(ph));
            edges.push(PhaseEdge {
                branch: k,
                phase: ph,
                parent: par,
                child: ch,
                r: br.r.get(ph),
                x: br.x.get(ph),
                p,
                q,
                l,
            });
        }
    }

    // controls at buses with demand on the phase; zero headroom leaves a pure power flow
    let mut controls = Vec::new();
    let mut demand = Vec::new();
    let hpu = h / base;
    for (i, b) in net.buses.iter().enumerate() {
        if b.is_slack {
            continue;
        }
        for ph in b.phases.iter() {
            let (dp, dq) = (loads.p[i].get(ph) / base, loads.q[i].get(ph) / base);
            demand.push((i, ph, dp, dq));
            if hpu > 0.0 && (dp != 0.0 || dq != 0.0) {
                let cp = prog.add_bounded(format!("gp[{},{ph}]", b.id), 0.0, hpu);
                let cq = prog.add_bounded(format!("gq[{},{ph}]", b.id), 0.0, hpu);
                controls.push((i, ph, cp, cq));
            }
        }
    }

    // per-phase balance: inflow - z l - outflow + control = demand
    for &(i, ph, dp, dq) in &demand {
        let mut rp = Vec::new();
        let mut rq = Vec::new();
        for e in &edges {
            if e.phase != ph {
                continue;
            }
            if e.child == i {
                rp.extend([(e.p, 1.0), (e.l, -e.r)]);
                rq.extend([(e.q, 1.0), (e.l, -e.x)]);
            } else if e.parent == i {
                rp.push((e.p, -1.0));
                rq.push((e.q, -1.0));
            }
        }
        if let Some(&(_, _, cp, cq)) = controls.iter().find(|c| c.0 == i && c.1 == ph) {
            rp.push((cp, 1.0));
            rq.push((cq, 1.0));
        }
        prog.add_equality(rp, dp);
        prog.add_equality(rq, dq);
    }

    let sq2 = std::f64::consts::SQRT_2;
    for e in &edges {
        let vp = vmap[e.parent].get(e.phase).expect("parent phase declared");
        let vc = vmap[e.child].get(e.phase).expect("child phase declared");
        prog.add_equality(
            vec![(vc, 1.0), (vp, -1.0), (e.p, 2.0 * e.r), (e.q, 2.0 * e.x), (e.l, -(e.r * e.r + e.x * e.x))],
            0.0,
        );
        // [[v, S], [S*, l]] in scaled svec: (v, l, sqrt2 P, sqrt2 Q)
        let tag = format!("{},{}", e.branch, e.phase);
        let b: Vec<VarId> = ["v", "l", "re", "im"].iter().map(|s| prog.add_var(format!("psd_{s}[{tag}]"))).collect();
        prog.add_equality(vec![(b[0], 1.0), (vp, -1.0)], 0.0);
        prog.add_equality(vec![(b[1], 1.0), (e.l, -1.0)], 0.0);
        prog.add_equality(vec![(b[2], 1.0), (e.p, -sq2)], 0.0);
        prog.add_equality(vec![(b[3], 1.0), (e.q, -sq2)], 0.0);
        prog.add_psd(2, true, b);
    }

    Ok(ThreePhaseBFM {
        program: prog,
        edges,
        volts,
        controls,
        bus_ids: net.buses.iter().map(|b| b.id).collect(),
        demand,
        base_kva: base,
        settings: *settings,
    })
}

impl ThreePhaseBFM {
    pub fn num_blocks(&self) -> usize {
        self.program.count_cones("PSD")
    }

    pub fn result(&self, sol: &Solution) -> OPF3Result {
        let val = |v: VarId| sol.values[v.index()];
        let mut vlookup = std::collections::HashMap::new();
        for &(i, ph, v) in &self.volts {
            vlookup.insert((i, ph), val(v));
        }
        let flows: Vec<PhaseFlow> = self
            .edges
            .iter()
            .map(|e| {
                let (p, q, l) = (val(e.p), val(e.q), val(e.l));
                let v_from = vlookup[&(e.parent, e.phase)];
                let m = block_matrix(v_from, p, q, l);
                PhaseFlow {
                    branch: e.branch,
                    from_bus: self.bus_ids[e.parent],
                    to_bus: self.bus_ids[e.child],
                    phase: e.phase,
                    p,
                    q,
                    l,
                    r: e.r,
                    v_from,
                    rank1_gap: rank1_gap(&m),
                }
            })
            .collect();

        let mut mism = 0.0f64;
        for &(i, ph, dp, dq) in &self.demand {
            let (mut bp, mut bq) = (0.0, 0.0);
            for (e, f) in self.edges.iter().zip(&flows) {
                if e.phase != ph {
                    continue;
                }
                if e.child == i {
                    bp += f.p - e.r * f.l;
                    bq += f.q - e.x * f.l;
                } else if e.parent == i {
                    bp -= f.p;
                    bq -= f.q;
                }
            }
            if let Some(&(_, _, cp, cq)) = self.controls.iter().find(|c| c.0 == i && c.1 == ph) {
                bp += val(cp);
                bq += val(cq);
            }
            mism = mism.max((bp - dp).abs()).max((bq - dq).abs());
        }

        let max_gap = flows.iter().map(|f| f.rank1_gap).fold(0.0, f64::max);
        let mut res = OPF3Result {
            voltages: self
                .volts
                .iter()
                .map(|&(i, ph, v)| PhaseVoltage { bus: self.bus_ids[i], phase: ph, v2: val(v) })
                .collect(),
            controls: self
                .controls
                .iter()
                .map(|&(i, ph, cp, cq)| ControlInjection {
                    bus: self.bus_ids[i],
                    phase: ph,
                    p_kw: val(cp) * self.base_kva,
                    q_kvar: val(cq) * self.base_kva,
                })
                .collect(),
            flows,
            line_loss_kwh: 0.0,
            fee_cost: 0.0,
            max_rank1_gap: max_gap,
            exact: max_gap <= EXACT_GAP,
            converged: sol.converged,
            iterations: sol.iterations,
            max_balance_residual: mism,
            base_kva: self.base_kva,
            interval_h: self.settings.interval_h,
        };
        res.line_loss_kwh = line_loss(&res);
        res.fee_cost = self.settings.price_rt * res.line_loss_kwh;
        res
    }
}

fn block_matrix(v: f64, p: f64, q: f64, l: f64) -> HermitianMatrix {
    let re = nalgebra::DMatrix::from_row_slice(2, 2, &[v, p, p, l]);
    let im = nalgebra::DMatrix::from_row_slice(2, 2, &[0.0, q, -q, 0.0]);
    HermitianMatrix::new(re, im).expect("2x2 block")
}

pub fn solve_unbalanced_opf(bfm: &ThreePhaseBFM, params: &ADMMParams) -> Result<OPF3Result, Opf3Error> {
    let sol = admm_solve(&bfm.program, params)?;
    Ok(bfm.result(&sol))
}

/// Resistive loss of all branches and phases integrated over the dispatch interval, kWh.
pub fn line_loss(res: &OPF3Result) -> f64 {
    res.flows.iter().map(|f| f.r * f.l).sum::<f64>() * res.base_kva * res.interval_h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockGap {
    pub branch: BranchId,
    pub phase: Phase,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactnessReport {
    pub blocks: Vec<BlockGap>,
    pub max_gap: f64,
    pub exact: bool,
}

pub fn exactness_report(res: &OPF3Result) -> ExactnessReport {
    let blocks: Vec<BlockGap> =
        res.flows.iter().map(|f| BlockGap { branch: f.branch, phase: f.phase, gap: f.rank1_gap }).collect();
    let max_gap = blocks.iter().map(|b| b.gap).fold(0.0, f64::max);
    ExactnessReport { blocks, max_gap, exact: max_gap <= EXACT_GAP }
}

/// `bus,phase,v2,branch_P,branch_Q,l,rank1_gap`; branch columns describe the
/// branch feeding the bus on that phase and are empty at the slack.
pub fn write_result_csv<W: std::io::Write>(res: &OPF3Result, w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["bus", "phase", "v2", "branch_P", "branch_Q", "l", "rank1_gap"])?;
    for v in &res.voltages {
        let feed = res.flows.iter().find(|f| f.to_bus == v.bus && f.phase == v.phase);
        let cols = match feed {
            Some(f) => {
                [format!("{:.9}", f.p), format!("{:.9}", f.q), format!("{:.9}", f.l), format!("{:.3e}", f.rank1_gap)]
            }
            None => Default::default(),
        };
        let mut rec = vec![v.bus.to_string(), v.phase.to_string(), format!("{:.9}", v.v2)];
        rec.extend(cols);
        wr.write_record(rec)?;
    }
    wr.flush()?;
    Ok(())
}
