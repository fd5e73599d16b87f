//! Feeder topology: buses, branches, switch configurations and radiality.
//!
//! Feeders are read from two CSV files (see [`parse_feeder`]). Branch ids are
//! the zero-based row order of the branch file.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub type BusId = u32;
pub type BranchId = usize;

/// Upper bound on switchable branches accepted by [`enumerate_radial_configs`].
pub const MAX_SWITCHES: usize = 30;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("{file}: row {row}: {msg}")]
    Parse { file: String, row: usize, msg: String },
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("switch configuration error: {0}")]
    Config(String),
    #[error("capacity error: {switches} switchable branches exceed the limit of {limit}")]
    Capacity { switches: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        ['a', 'b', 'c'][self.index()]
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Subset of `{a, b, c}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn single(p: Phase) -> Self {
        PhaseSet(1 << p.index())
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn insert(&mut self, p: Phase) {
        self.0 |= 1 << p.index();
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut set = PhaseSet::default();
        for ch in s.trim().chars() {
            match ch.to_ascii_lowercase() {
                'a' => set.insert(Phase::A),
                'b' => set.insert(Phase::B),
                'c' => set.insert(Phase::C),
                _ => return None,
            }
        }
        (!set.is_empty()).then_some(set)
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

/// Per-phase quantity; entries of undeclared phases are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseVector<T> {
    pub a: T,
    pub b: T,
    pub c: T,
}

impl<T: Copy> PhaseVector<T> {
    pub fn splat(v: T) -> Self {
        Self { a: v, b: v, c: v }
    }

    pub fn get(&self, p: Phase) -> T {
        match p {
            Phase::A => self.a,
            Phase::B => self.b,
            Phase::C => self.c,
        }
    }

    pub fn set(&mut self, p: Phase, v: T) {
        match p {
            Phase::A => self.a = v,
            Phase::B => self.b = v,
            Phase::C => self.c = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub phases: PhaseSet,
    /// kW per phase
    pub load_p: PhaseVector<f64>,
    /// kvar per phase
    pub load_q: PhaseVector<f64>,
    /// squared voltage magnitude bounds, pu^2
    pub v_min: f64,
    pub v_max: f64,
    pub is_slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: PhaseVector<f64>,
    pub x: PhaseVector<f64>,
    /// squared current limit, pu^2
    pub i_max: f64,
    pub switchable: bool,
    pub initially_closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub base_kv: f64,
    pub base_kva: f64,
    #[serde(skip)]
    index: HashMap<BusId, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SwitchState {
    Open,
    Closed,
}

/// Open/closed state of every switchable branch.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SwitchConfig {
    pub states: BTreeMap<BranchId, SwitchState>,
}

impl SwitchConfig {
    pub fn is_closed(&self, b: BranchId) -> Option<bool> {
        self.states.get(&b).map(|s| *s == SwitchState::Closed)
    }

    pub fn open_switches(&self) -> Vec<BranchId> {
        self.states.iter().filter(|(_, s)| **s == SwitchState::Open).map(|(b, _)| *b).collect()
    }

    /// Bit string over switch ids in ascending order, `0` = open.
    pub fn encoding(&self) -> String {
        self.states.values().map(|s| if *s == SwitchState::Closed { '1' } else { '0' }).collect()
    }
}

/// Symmetric 0/1 adjacency matrix over bus indices (file order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    data: Vec<u8>,
}

impl Adjacency {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.data.chunks(self.n.max(1)).map(|r| r.to_vec()).take(self.n).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

impl Network {
    pub fn new(buses: Vec<Bus>, branches: Vec<Branch>, base_kv: f64, base_kva: f64) -> Result<Self, GridError> {
        let mut index = HashMap::with_capacity(buses.len());
        for (k, b) in buses.iter().enumerate() {
            if index.insert(b.id, k).is_some() {
                return Err(GridError::Validation(format!("duplicate bus id {}", b.id)));
            }
        }
        let net = Network { buses, branches, base_kv, base_kva, index };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<(), GridError> {
        if !(self.base_kva > 0.0 && self.base_kv > 0.0) {
            return Err(GridError::Validation("system bases must be positive".into()));
        }
        if self.buses.is_empty() {
            return Err(GridError::Validation("network has no buses".into()));
        }
        for b in &self.buses {
            if !(b.v_min > 0.0) || b.v_min > b.v_max {
                return Err(GridError::Validation(format!(
                    "bus {}: need 0 < vmin2 <= vmax2, got [{}, {}]",
                    b.id, b.v_min, b.v_max
                )));
            }
            if b.phases.is_empty() {
                return Err(GridError::Validation(format!("bus {} declares no phase", b.id)));
            }
            for p in Phase::ALL {
                if !b.phases.contains(p) && (b.load_p.get(p) != 0.0 || b.load_q.get(p) != 0.0) {
                    return Err(GridError::Validation(format!("bus {} carries load on absent phase {p}", b.id)));
                }
            }
        }
        if self.num_slack() == 0 {
            return Err(GridError::Validation("network has no slack bus".into()));
        }
        for (k, br) in self.branches.iter().enumerate() {
            for end in [br.from_bus, br.to_bus] {
                if !self.index.contains_key(&end) {
                    return Err(GridError::Topology(format!("branch {k} references absent bus {end}")));
                }
            }
            if br.from_bus == br.to_bus {
                return Err(GridError::Validation(format!("branch {k} is a self loop on bus {}", br.from_bus)));
            }
            for p in Phase::ALL {
                if br.r.get(p) < 0.0 {
                    return Err(GridError::Validation(format!("branch {k} has negative resistance")));
                }
            }
            if !(br.i_max > 0.0) {
                return Err(GridError::Validation(format!("branch {k} needs imax2 > 0")));
            }
        }
        if !self.slack_connected(&self.initial_config()) {
            return Err(GridError::Topology("initial topology leaves buses disconnected from every slack".into()));
        }
        Ok(())
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn num_slack(&self) -> usize {
        self.buses.iter().filter(|b| b.is_slack).count()
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.bus_index(id).map(|k| &self.buses[k])
    }

    pub fn switchable(&self) -> Vec<BranchId> {
        (0..self.branches.len()).filter(|&k| self.branches[k].switchable).collect()
    }

    /// Tie switches: switchable and open in the base topology.
    pub fn tie_switches(&self) -> Vec<BranchId> {
        (0..self.branches.len())
            .filter(|&k| self.branches[k].switchable && !self.branches[k].initially_closed)
            .collect()
    }

    pub fn initial_config(&self) -> SwitchConfig {
        SwitchConfig {
            states: self
                .switchable()
                .into_iter()
                .map(|k| {
                    let s = if self.branches[k].initially_closed { SwitchState::Closed } else { SwitchState::Open };
                    (k, s)
                })
                .collect(),
        }
    }

    /// Config with the given switch ids open and every other switch closed.
    pub fn config_with_open(&self, open: &[BranchId]) -> Result<SwitchConfig, GridError> {
        let sw: BTreeSet<BranchId> = self.switchable().into_iter().collect();
        for b in open {
            if !sw.contains(b) {
                return Err(GridError::Config(format!("branch {b} is not switchable")));
            }
        }
        Ok(SwitchConfig {
            states: sw
                .into_iter()
                .map(|k| (k, if open.contains(&k) { SwitchState::Open } else { SwitchState::Closed }))
                .collect(),
        })
    }

    pub fn check_config(&self, cfg: &SwitchConfig) -> Result<(), GridError> {
        let sw = self.switchable();
        if sw.len() != cfg.states.len() || sw.iter().any(|k| !cfg.states.contains_key(k)) {
            return Err(GridError::Config(format!(
                "configuration must cover exactly the {} switchable branches",
                sw.len()
            )));
        }
        Ok(())
    }

    fn closed_unchecked(&self, k: BranchId, cfg: &SwitchConfig) -> bool {
        let br = &self.branches[k];
        !br.switchable || cfg.is_closed(k).unwrap_or(false)
    }

    /// Branch ids energized under `cfg`.
    pub fn closed_branches(&self, cfg: &SwitchConfig) -> Result<Vec<BranchId>, GridError> {
        self.check_config(cfg)?;
        Ok((0..self.branches.len()).filter(|&k| self.closed_unchecked(k, cfg)).collect())
    }

    fn slack_connected(&self, cfg: &SwitchConfig) -> bool {
        let n = self.num_buses();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, br) in self.branches.iter().enumerate() {
            if self.closed_unchecked(k, cfg) {
                let (i, j) = (self.index[&br.from_bus], self.index[&br.to_bus]);
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for (k, b) in self.buses.iter().enumerate() {
            if b.is_slack {
                seen[k] = true;
                queue.push_back(k);
            }
        }
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Parent structure of a radial configuration, rooted at the slack buses.
    pub fn tree(&self, cfg: &SwitchConfig) -> Result<RadialTree, GridError> {
        if !is_radial(self, cfg)? {
            return Err(GridError::Topology("configuration is not radial".into()));
        }
        let n = self.num_buses();
        let mut adj: Vec<Vec<(usize, BranchId)>> = vec![Vec::new(); n];
        for k in self.closed_branches(cfg)? {
            let br = &self.branches[k];
            let (i, j) = (self.index[&br.from_bus], self.index[&br.to_bus]);
            adj[i].push((j, k));
            adj[j].push((i, k));
        }
        let mut parent = vec![None; n];
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        for (k, b) in self.buses.iter().enumerate() {
            if b.is_slack {
                seen[k] = true;
                queue.push_back(k);
            }
        }
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &(j, br) in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    parent[j] = Some((i, br));
                    queue.push_back(j);
                }
            }
        }
        Ok(RadialTree { parent, order })
    }
}

/// Orientation of a radial configuration: every non-slack bus has exactly one
/// parent bus and the branch that feeds it.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTree {
    /// `parent[bus_index] = (parent_index, branch_id)`
    pub parent: Vec<Option<(usize, BranchId)>>,
    /// Breadth-first order from the slack buses.
    pub order: Vec<usize>,
}

impl RadialTree {
    /// Fed branches as `(branch_id, parent_index, child_index)` in BFS order.
    pub fn edges(&self) -> Vec<(BranchId, usize, usize)> {
        self.order.iter().filter_map(|&c| self.parent[c].map(|(p, b)| (b, p, c))).collect()
    }
}

pub fn adjacency_matrix(net: &Network, cfg: &SwitchConfig) -> Result<Adjacency, GridError> {
    let n = net.num_buses();
    let mut data = vec![0u8; n * n];
    for k in net.closed_branches(cfg)? {
        let br = &net.branches[k];
        let (i, j) = (net.index[&br.from_bus], net.index[&br.to_bus]);
        data[i * n + j] = 1;
        data[j * n + i] = 1;
    }
    Ok(Adjacency { n, data })
}

/// Closed-edge count equals `N - d` and every bus reaches a slack bus.
pub fn is_radial(net: &Network, cfg: &SwitchConfig) -> Result<bool, GridError> {
    let closed = net.closed_branches(cfg)?.len();
    Ok(closed + net.num_slack() == net.num_buses() && net.slack_connected(cfg))
}

/// All radial switch configurations, in lexicographic order over switch ids
/// with open before closed.
pub fn enumerate_radial_configs(net: &Network) -> Result<Vec<SwitchConfig>, GridError> {
    let sw = net.switchable();
    if sw.len() > MAX_SWITCHES {
        return Err(GridError::Capacity { switches: sw.len(), limit: MAX_SWITCHES });
    }
    let s = sw.len();
    let fixed = net.branches.len() - s;
    let target = net.num_buses() - net.num_slack().min(net.num_buses());
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << s) {
        // first switch is the most significant bit
        let closed = mask.count_ones() as usize;
        if fixed + closed != target {
            continue;
        }
        let cfg = SwitchConfig {
            states: sw
                .iter()
                .enumerate()
                .map(|(pos, &k)| {
                    let bit = (mask >> (s - 1 - pos)) & 1;
                    (k, if bit == 1 { SwitchState::Closed } else { SwitchState::Open })
                })
                .collect(),
        };
        if net.slack_connected(&cfg) {
            out.push(cfg);
        }
    }
    Ok(out)
}

fn read_records(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>, GridError> {
    let file = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| GridError::Io { path: file.clone(), msg: e.to_string() })?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| GridError::Parse {
            file: file.clone(),
            row: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        out.push((line, rec));
    }
    Ok(out)
}

fn check_header(path: &Path, expected: &[&str]) -> Result<(), GridError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| GridError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    let hdr =
        rdr.headers().map_err(|e| GridError::Parse { file: path.display().to_string(), row: 1, msg: e.to_string() })?;
    let got: Vec<&str> = hdr.iter().collect();
    if got != expected {
        return Err(GridError::Parse {
            file: path.display().to_string(),
            row: 1,
            msg: format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

struct Fields<'a> {
    file: &'a str,
    row: usize,
    rec: &'a csv::StringRecord,
    names: &'a [&'a str],
}

impl Fields<'_> {
    fn err(&self, msg: String) -> GridError {
        GridError::Parse { file: self.file.to_string(), row: self.row, msg }
    }

    fn str(&self, k: usize) -> Result<&str, GridError> {
        self.rec.get(k).ok_or_else(|| self.err(format!("missing column `{}`", self.names[k])))
    }

    fn num(&self, k: usize) -> Result<f64, GridError> {
        let s = self.str(k)?;
        let v: f64 = s.parse().map_err(|_| self.err(format!("column `{}`: `{s}` is not a number", self.names[k])))?;
        if !v.is_finite() {
            return Err(self.err(format!("column `{}` is not finite", self.names[k])));
        }
        Ok(v)
    }

    fn flag(&self, k: usize) -> Result<bool, GridError> {
        match self.str(k)? {
            "0" => Ok(false),
            "1" => Ok(true),
            s => Err(self.err(format!("column `{}`: expected 0 or 1, found `{s}`", self.names[k]))),
        }
    }
}

pub const BUS_HEADER: [&str; 11] =
    ["id", "phases", "p_a", "q_a", "p_b", "q_b", "p_c", "q_c", "vmin2", "vmax2", "slack"];
pub const BRANCH_HEADER: [&str; 11] =
    ["from", "to", "r_a", "x_a", "r_b", "x_b", "r_c", "x_c", "imax2", "switchable", "closed"];

fn pv(a: f64, b: f64, c: f64) -> PhaseVector<f64> {
    PhaseVector { a, b, c }
}

/// Reads and validates a feeder from its bus and branch CSV files.
///
/// Bases default to 4.16 kV / 1000 kVA unless a comment line of the bus file
/// reads `# base_kv=<v> base_kva=<v>`.
pub fn parse_feeder(bus_file: &Path, branch_file: &Path) -> Result<Network, GridError> {
    check_header(bus_file, &BUS_HEADER)?;
    check_header(branch_file, &BRANCH_HEADER)?;
    let bus_name = bus_file.display().to_string();
    let br_name = branch_file.display().to_string();

    let mut buses = Vec::new();
    for (row, rec) in read_records(bus_file)? {
        let f = Fields { file: &bus_name, row, rec: &rec, names: &BUS_HEADER };
        if rec.len() != BUS_HEADER.len() {
            return Err(f.err(format!("expected {} columns, found {}", BUS_HEADER.len(), rec.len())));
        }
        let id: BusId = f.str(0)?.parse().map_err(|_| f.err(format!("bad bus id `{}`", f.str(0).unwrap_or(""))))?;
        let phases = PhaseSet::parse(f.str(1)?)
            .ok_or_else(|| f.err(format!("bad phase string `{}`", f.str(1).unwrap_or(""))))?;
        buses.push(Bus {
            id,
            phases,
            load_p: pv(f.num(2)?, f.num(4)?, f.num(6)?),
            load_q: pv(f.num(3)?, f.num(5)?, f.num(7)?),
            v_min: f.num(8)?,
            v_max: f.num(9)?,
            is_slack: f.flag(10)?,
        });
    }

    let mut branches = Vec::new();
    for (row, rec) in read_records(branch_file)? {
        let f = Fields { file: &br_name, row, rec: &rec, names: &BRANCH_HEADER };
        if rec.len() != BRANCH_HEADER.len() {
            return Err(f.err(format!("expected {} columns, found {}", BRANCH_HEADER.len(), rec.len())));
        }
        let from: BusId = f.str(0)?.parse().map_err(|_| f.err("bad `from` bus id".into()))?;
        let to: BusId = f.str(1)?.parse().map_err(|_| f.err("bad `to` bus id".into()))?;
        branches.push(Branch {
            from_bus: from,
            to_bus: to,
            r: pv(f.num(2)?, f.num(4)?, f.num(6)?),
            x: pv(f.num(3)?, f.num(5)?, f.num(7)?),
            i_max: f.num(8)?,
            switchable: f.flag(9)?,
            initially_closed: f.flag(10)?,
        });
    }

    let (base_kv, base_kva) = read_bases(bus_file).unwrap_or((4.16, 1000.0));
    Network::new(buses, branches, base_kv, base_kva)
}

fn read_bases(path: &Path) -> Option<(f64, f64)> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut kv = None;
    let mut kva = None;
    for line in text.lines().filter(|l| l.trim_start().starts_with('#')) {
        for tok in line.trim_start_matches('#').split_whitespace() {
            if let Some(v) = tok.strip_prefix("base_kv=") {
                kv = v.parse().ok();
            } else if let Some(v) = tok.strip_prefix("base_kva=") {
                kva = v.parse().ok();
            }
        }
    }
    Some((kv?, kva?))
}

/// Writes a network back to the two CSV files accepted by [`parse_feeder`].
pub fn write_feeder(net: &Network, bus_file: &Path, branch_file: &Path) -> Result<(), GridError> {
    use std::io::Write;
    let io = |p: &Path, e: std::io::Error| GridError::Io { path: p.display().to_string(), msg: e.to_string() };
    let mut s = format!("# base_kv={} base_kva={}\n{}\n", net.base_kv, net.base_kva, BUS_HEADER.join(","));
    for b in &net.buses {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            b.id,
            b.phases,
            b.load_p.a,
            b.load_q.a,
            b.load_p.b,
            b.load_q.b,
            b.load_p.c,
            b.load_q.c,
            b.v_min,
            b.v_max,
            u8::from(b.is_slack)
        ));
    }
    std::fs::File::create(bus_file).and_then(|mut f| f.write_all(s.as_bytes())).map_err(|e| io(bus_file, e))?;
    let mut s = format!("{}\n", BRANCH_HEADER.join(","));
    for br in &net.branches {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            br.from_bus,
            br.to_bus,
            br.r.a,
            br.x.a,
            br.r.b,
            br.x.b,
            br.r.c,
            br.x.c,
            br.i_max,
            u8::from(br.switchable),
            u8::from(br.initially_closed)
        ));
    }
    std::fs::File::create(branch_file).and_then(|mut f| f.write_all(s.as_bytes())).map_err(|e| io(branch_file, e))
}
