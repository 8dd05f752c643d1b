//! Per-slot max-flow construction and solution for distributed model
//! download and upload.
//!
//! In every slot the remaining per-orbit fractions, the currently feasible
//! GSLs, and the ground dedicated lines form a source -> orbits ->
//! satellites -> stations -> sink graph. A BFS augmenting-path solver
//! (deterministic, lexicographic tie-breaking by node index) maximizes the
//! model fraction the ground side receives in that slot.

use serde::Serialize;
use std::collections::{HashSet, VecDeque};

use crate::channel::{gsl_capacity_fraction, gsl_rate_bps, LinkBudget};
use crate::constellation::{feasible_gsls, ConstellationSpec, GroundStation, SatId};
use crate::error::{Result, SimError};

/// Residual capacities below this threshold are treated as exhausted.
pub const FLOW_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NodeId {
    Source,
    Orbit(usize),
    Sat(SatId),
    Station(usize),
    Sink,
    /// Free-form node for graphs built directly from an edge list.
    Plain(usize),
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeId::Source => write!(f, "s"),
            NodeId::Orbit(m) => write!(f, "O{m}"),
            NodeId::Sat(sat) => write!(f, "{sat}"),
            NodeId::Station(g) => write!(f, "GS{g}"),
            NodeId::Sink => write!(f, "d"),
            NodeId::Plain(i) => write!(f, "N{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct RawEdge {
    from: usize,
    to: usize,
    cap: f64,
}

/// Capacitated digraph with a designated source and sink.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    labels: Vec<NodeId>,
    edges: Vec<RawEdge>,
    source: usize,
    sink: usize,
}

impl FlowGraph {
    /// Build a graph from an explicit edge list.
    pub fn from_edges(
        labels: Vec<NodeId>,
        source: usize,
        sink: usize,
        edges: &[(usize, usize, f64)],
    ) -> Result<FlowGraph> {
        let n = labels.len();
        if source >= n || sink >= n || source == sink {
            return Err(SimError::MalformedGraph(format!(
                "source {source} / sink {sink} invalid for {n} nodes"
            )));
        }
        let mut raw = Vec::with_capacity(edges.len());
        for &(from, to, cap) in edges {
            if from >= n || to >= n {
                return Err(SimError::MalformedGraph(format!(
                    "edge ({from},{to}) out of range for {n} nodes"
                )));
            }
            if !cap.is_finite() || cap < 0.0 {
                return Err(SimError::MalformedGraph(format!(
                    "edge ({from},{to}) has invalid capacity {cap}"
                )));
            }
            raw.push(RawEdge { from, to, cap });
        }
        Ok(FlowGraph {
            labels,
            edges: raw,
            source,
            sink,
        })
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, node: usize) -> NodeId {
        self.labels[node]
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn edge_list(&self) -> Vec<(usize, usize, f64)> {
        self.edges.iter().map(|e| (e.from, e.to, e.cap)).collect()
    }
}

/// One directed edge of a solved flow.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EdgeFlow {
    pub from: NodeId,
    pub to: NodeId,
    #[serde(rename = "cap")]
    pub capacity: f64,
    pub flow: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowAssignment {
    pub edges: Vec<EdgeFlow>,
    pub total_flow: f64,
    #[serde(skip)]
    node_flows: Vec<(usize, usize, f64)>,
    #[serde(skip)]
    num_nodes: usize,
    #[serde(skip)]
    source: usize,
    #[serde(skip)]
    sink: usize,
}

impl FlowAssignment {
    /// Flow leaving the source towards the orbit node `m`, if present.
    pub fn source_flow_to(&self, target: NodeId) -> f64 {
        self.edges
            .iter()
            .filter(|e| e.from == NodeId::Source && e.to == target)
            .map(|e| e.flow)
            .sum()
    }

    /// Check capacity feasibility and conservation edge-by-edge and
    /// node-by-node.
    pub fn validate(&self) -> Result<()> {
        let mut balance = vec![0.0_f64; self.num_nodes];
        for &(from, to, flow) in &self.node_flows {
            balance[from] -= flow;
            balance[to] += flow;
        }
        for e in &self.edges {
            if e.flow < -FLOW_EPS || e.flow > e.capacity + FLOW_EPS {
                return Err(SimError::MalformedGraph(format!(
                    "edge {} -> {} carries {} outside [0, {}]",
                    e.from, e.to, e.flow, e.capacity
                )));
            }
        }
        for (node, b) in balance.iter().enumerate() {
            if node == self.source || node == self.sink {
                continue;
            }
            if b.abs() > 1e-9 {
                return Err(SimError::MalformedGraph(format!(
                    "node {node} violates conservation by {b}"
                )));
            }
        }
        if (balance[self.sink] - self.total_flow).abs() > 1e-9 {
            return Err(SimError::MalformedGraph(format!(
                "sink inflow {} does not match total flow {}",
                balance[self.sink], self.total_flow
            )));
        }
        Ok(())
    }
}

/// A feasible satellite-to-station link with its per-slot capacity as a
/// fraction of one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GslCap {
    pub sat: SatId,
    pub station: usize,
    pub capacity: f64,
}

/// Assemble the per-slot graph: source edges carry the untransmitted
/// per-orbit fractions, orbit-to-satellite edges are unit capacity,
/// satellite-to-station edges come from the link model, and station-to-sink
/// edges carry the ground dedicated line budget.
pub fn build_flow_graph(
    pending: &[f64],
    gsl_caps: &[GslCap],
    gdl_caps: &[f64],
) -> Result<FlowGraph> {
    let num_orbits = pending.len();
    for (m, p) in pending.iter().enumerate() {
        if !(0.0..=1.0).contains(p) {
            return Err(SimError::MalformedGraph(format!(
                "pending fraction for orbit {m} must lie in [0,1], got {p}"
            )));
        }
    }
    let mut seen = HashSet::new();
    for cap in gsl_caps {
        if cap.sat.orbit >= num_orbits {
            return Err(SimError::MalformedGraph(format!(
                "link references orbit {} but only {} orbits are pending",
                cap.sat.orbit, num_orbits
            )));
        }
        if cap.station >= gdl_caps.len() {
            return Err(SimError::MalformedGraph(format!(
                "link references station {} but only {} GDL capacities given",
                cap.station,
                gdl_caps.len()
            )));
        }
        if !cap.capacity.is_finite() || cap.capacity < 0.0 {
            return Err(SimError::MalformedGraph(format!(
                "link {} -> GS{} has invalid capacity {}",
                cap.sat, cap.station, cap.capacity
            )));
        }
        if !seen.insert((cap.sat, cap.station)) {
            return Err(SimError::MalformedGraph(format!(
                "duplicate link {} -> GS{}",
                cap.sat, cap.station
            )));
        }
    }

    // Node order fixes the deterministic tie-breaking: source, orbits,
    // satellites (sorted), stations, sink. Satellites without a feasible
    // link cannot carry flow and are omitted.
    let mut sats: Vec<SatId> = gsl_caps.iter().map(|c| c.sat).collect();
    sats.sort_unstable();
    sats.dedup();

    let mut labels = Vec::with_capacity(2 + num_orbits + sats.len() + gdl_caps.len());
    labels.push(NodeId::Source);
    for m in 0..num_orbits {
        labels.push(NodeId::Orbit(m));
    }
    let sat_base = labels.len();
    for &sat in &sats {
        labels.push(NodeId::Sat(sat));
    }
    let station_base = labels.len();
    for g in 0..gdl_caps.len() {
        labels.push(NodeId::Station(g));
    }
    let sink = labels.len();
    labels.push(NodeId::Sink);

    let sat_index = |sat: SatId| sat_base + sats.binary_search(&sat).expect("sat present");

    let mut edges = Vec::new();
    for (m, &p) in pending.iter().enumerate() {
        edges.push((0, 1 + m, p));
    }
    for &sat in &sats {
        edges.push((1 + sat.orbit, sat_index(sat), 1.0));
    }
    for cap in gsl_caps {
        edges.push((sat_index(cap.sat), station_base + cap.station, cap.capacity));
    }
    for (g, &c) in gdl_caps.iter().enumerate() {
        edges.push((station_base + g, sink, c));
    }
    FlowGraph::from_edges(labels, 0, sink, &edges)
}

/// Maximum source-to-sink flow via shortest augmenting paths.
pub fn max_flow(graph: &FlowGraph) -> FlowAssignment {
    // Paired residual representation: edge 2i is forward, 2i+1 its reverse.
    let n = graph.node_count();
    let mut cap = Vec::with_capacity(graph.edges.len() * 2);
    let mut to = Vec::with_capacity(graph.edges.len() * 2);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &graph.edges {
        let fwd = cap.len();
        cap.push(e.cap);
        to.push(e.to);
        adj[e.from].push(fwd);
        cap.push(0.0);
        to.push(e.from);
        adj[e.to].push(fwd + 1);
    }
    for list in adj.iter_mut() {
        list.sort_by_key(|&eid| (to[eid], eid));
    }

    let mut flow = vec![0.0_f64; cap.len()];
    let mut total = 0.0;
    let mut parent: Vec<Option<usize>> = vec![None; n];
    loop {
        parent.iter_mut().for_each(|p| *p = None);
        parent[graph.source] = Some(usize::MAX);
        let mut queue = VecDeque::from([graph.source]);
        'bfs: while let Some(u) = queue.pop_front() {
            for &eid in &adj[u] {
                let v = to[eid];
                if parent[v].is_none() && cap[eid] - flow[eid] > FLOW_EPS {
                    parent[v] = Some(eid);
                    if v == graph.sink {
                        break 'bfs;
                    }
                    queue.push_back(v);
                }
            }
        }
        if parent[graph.sink].is_none() {
            break;
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = graph.sink;
        while v != graph.source {
            let eid = parent[v].expect("path edge");
            bottleneck = bottleneck.min(cap[eid] - flow[eid]);
            v = to[eid ^ 1];
        }
        let mut v = graph.sink;
        while v != graph.source {
            let eid = parent[v].expect("path edge");
            flow[eid] += bottleneck;
            flow[eid ^ 1] -= bottleneck;
            v = to[eid ^ 1];
        }
        total += bottleneck;
    }

    let mut edges = Vec::with_capacity(graph.edges.len());
    let mut node_flows = Vec::with_capacity(graph.edges.len());
    for (i, e) in graph.edges.iter().enumerate() {
        let f = flow[2 * i].max(0.0);
        edges.push(EdgeFlow {
            from: graph.labels[e.from],
            to: graph.labels[e.to],
            capacity: e.cap,
            flow: f,
        });
        node_flows.push((e.from, e.to, f));
    }
    FlowAssignment {
        edges,
        total_flow: total,
        node_flows,
        num_nodes: n,
        source: graph.source,
        sink: graph.sink,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TransferDirection {
    Down,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AccessChargeMode {
    /// Charge the access time once for each distinct (satellite, station)
    /// contact used during the transfer.
    PerNewPair,
    /// Charge the access time once for the whole transfer.
    PerTransfer,
}

#[derive(Debug, Clone, Copy)]
pub struct TransferConfig {
    pub slot_s: f64,
    pub access_time_s: f64,
    pub access_mode: AccessChargeMode,
    pub stall_horizon_s: f64,
}

/// Per-slot link state as seen by the scheduler.
pub trait LinkStateProvider: Sync {
    fn feasible_caps(&self, time_s: f64) -> Result<Vec<GslCap>>;
    fn station_count(&self) -> usize;
}

/// Link state derived from orbit geometry and the RF link budget.
pub struct GeometricLinkProvider<'a> {
    pub spec: &'a ConstellationSpec,
    pub stations: &'a [GroundStation],
    pub budget: &'a LinkBudget,
    pub slot_s: f64,
    pub model_bytes: f64,
    /// Use the rate at exactly the minimum elevation for every feasible
    /// link instead of the instantaneous slant range.
    pub fixed_elevation_rate: bool,
}

impl LinkStateProvider for GeometricLinkProvider<'_> {
    fn feasible_caps(&self, time_s: f64) -> Result<Vec<GslCap>> {
        let pairs = feasible_gsls(
            self.spec,
            self.stations,
            time_s,
            self.budget.min_elevation_deg,
        )?;
        let reference = if self.fixed_elevation_rate {
            Some(
                self.budget
                    .reference_rate_bps(self.spec.altitude_km, self.spec.earth_radius_km)?,
            )
        } else {
            None
        };
        let mut caps = Vec::with_capacity(pairs.len());
        for (sat, station, distance_km) in pairs {
            let rate = match reference {
                Some(r) => r,
                None => gsl_rate_bps(distance_km, self.budget)?,
            };
            caps.push(GslCap {
                sat,
                station,
                capacity: gsl_capacity_fraction(rate, self.slot_s, self.model_bytes),
            });
        }
        Ok(caps)
    }

    fn station_count(&self) -> usize {
        self.stations.len()
    }
}

/// Every (satellite, station) pair is always feasible at a constant
/// capacity. Used for link-ideal experiments and tests.
pub struct IdealLinkProvider {
    pub sats: Vec<SatId>,
    pub num_stations: usize,
    pub capacity_per_slot: f64,
}

impl LinkStateProvider for IdealLinkProvider {
    fn feasible_caps(&self, _time_s: f64) -> Result<Vec<GslCap>> {
        let mut caps = Vec::with_capacity(self.sats.len() * self.num_stations);
        for &sat in &self.sats {
            for station in 0..self.num_stations {
                caps.push(GslCap {
                    sat,
                    station,
                    capacity: self.capacity_per_slot,
                });
            }
        }
        Ok(caps)
    }

    fn station_count(&self) -> usize {
        self.num_stations
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub time_s: f64,
    pub assignment: FlowAssignment,
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub direction: TransferDirection,
    pub slots_used: usize,
    pub access_charges: usize,
    pub total_time_s: f64,
    pub per_slot: Vec<SlotRecord>,
}

/// Drain the per-orbit pending fractions slot by slot.
///
/// Each slot rebuilds feasibility, solves the max-flow problem, and
/// decrements the pending fractions by the realized source-edge flows. The
/// total time is `slots * slot_s` plus the configured access-time charges.
pub fn schedule_transfer(
    pending: &[f64],
    provider: &dyn LinkStateProvider,
    start_time_s: f64,
    direction: TransferDirection,
    gdl_cap_per_slot: Option<f64>,
    cfg: &TransferConfig,
) -> Result<TransferOutcome> {
    if !(cfg.slot_s > 0.0) {
        return Err(SimError::Config(format!(
            "slot_s must be positive, got {}",
            cfg.slot_s
        )));
    }
    let mut remaining = pending.to_vec();
    for (m, p) in remaining.iter().enumerate() {
        if !(0.0..=1.0).contains(p) {
            return Err(SimError::MalformedGraph(format!(
                "pending fraction for orbit {m} must lie in [0,1], got {p}"
            )));
        }
    }

    let num_stations = provider.station_count();
    let mut per_slot = Vec::new();
    let mut used_pairs: HashSet<(SatId, usize)> = HashSet::new();
    let mut any_flow = false;
    let mut slot = 0usize;
    let mut last_progress_time = start_time_s;

    while remaining.iter().any(|&p| p > 0.0) {
        let time_s = start_time_s + slot as f64 * cfg.slot_s;
        if time_s - last_progress_time > cfg.stall_horizon_s {
            let hint = next_feasible_hint(provider, time_s, cfg);
            return Err(SimError::Stall(format!(
                "no transfer progress for {:.1} s (horizon {:.1} s) at slot {}; \
                 pending {:?}; {}",
                time_s - last_progress_time,
                cfg.stall_horizon_s,
                slot,
                remaining,
                hint
            )));
        }

        let caps = provider.feasible_caps(time_s)?;
        let gdl: Vec<f64> = match gdl_cap_per_slot {
            Some(c) => vec![c; num_stations],
            None => (0..num_stations)
                .map(|g| {
                    caps.iter()
                        .filter(|c| c.station == g)
                        .map(|c| c.capacity)
                        .sum::<f64>()
                        + 1.0
                })
                .collect(),
        };
        let graph = build_flow_graph(&remaining, &caps, &gdl)?;
        let assignment = max_flow(&graph);

        for m in 0..remaining.len() {
            let moved = assignment.source_flow_to(NodeId::Orbit(m));
            remaining[m] = (remaining[m] - moved).max(0.0);
            if remaining[m] < FLOW_EPS {
                remaining[m] = 0.0;
            }
        }
        for e in &assignment.edges {
            if e.flow > FLOW_EPS {
                if let (NodeId::Sat(sat), NodeId::Station(g)) = (e.from, e.to) {
                    used_pairs.insert((sat, g));
                }
            }
        }
        if assignment.total_flow > FLOW_EPS {
            any_flow = true;
            last_progress_time = time_s;
        }
        per_slot.push(SlotRecord {
            slot,
            time_s,
            assignment,
        });
        slot += 1;
    }

    let charges = match cfg.access_mode {
        AccessChargeMode::PerNewPair => used_pairs.len(),
        AccessChargeMode::PerTransfer => usize::from(any_flow),
    };
    Ok(TransferOutcome {
        direction,
        slots_used: slot,
        access_charges: charges,
        total_time_s: slot as f64 * cfg.slot_s + charges as f64 * cfg.access_time_s,
        per_slot,
    })
}

fn next_feasible_hint(provider: &dyn LinkStateProvider, from_s: f64, cfg: &TransferConfig) -> String {
    let mut t = from_s;
    let end = from_s + cfg.stall_horizon_s;
    while t <= end {
        if let Ok(caps) = provider.feasible_caps(t) {
            if !caps.is_empty() {
                return format!("next feasible link at t = {t:.1} s");
            }
        }
        t += cfg.slot_s;
    }
    format!("no feasible link within {:.1} s", cfg.stall_horizon_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn transfer_cfg() -> TransferConfig {
        TransferConfig {
            slot_s: 1.0,
            access_time_s: 0.0,
            access_mode: AccessChargeMode::PerNewPair,
            stall_horizon_s: 100.0,
        }
    }

    /// Min-cut enumeration oracle: max flow equals the cheapest s/d
    /// partition.
    fn min_cut_value(graph: &FlowGraph) -> f64 {
        let n = graph.node_count();
        let internal: Vec<usize> = (0..n)
            .filter(|&v| v != graph.source() && v != graph.sink())
            .collect();
        let edges = graph.edge_list();
        let mut best = f64::INFINITY;
        for mask in 0..(1u32 << internal.len()) {
            let mut side = vec![false; n];
            side[graph.source()] = true;
            for (bit, &v) in internal.iter().enumerate() {
                side[v] = mask & (1 << bit) != 0;
            }
            let cut: f64 = edges
                .iter()
                .filter(|&&(from, to, _)| side[from] && !side[to])
                .map(|&(_, _, cap)| cap)
                .sum();
            best = best.min(cut);
        }
        best
    }

    fn plain_labels(n: usize) -> Vec<NodeId> {
        (0..n).map(NodeId::Plain).collect()
    }

    #[test]
    fn no_feasible_links_means_no_sat_edges() {
        let graph = build_flow_graph(&[1.0, 0.5], &[], &[5.0]).unwrap();
        assert!(graph
            .edge_list()
            .iter()
            .all(|&(from, _, _)| from == 0 || matches!(graph.label(from), NodeId::Station(_))));
        assert_eq!(max_flow(&graph).total_flow, 0.0);
    }

    #[test]
    fn single_link_bottleneck() {
        // Oracle: the only s -> O -> S -> GS -> d path carries min(1, 1, 0.4, big).
        let caps = [GslCap {
            sat: SatId::new(0, 0),
            station: 0,
            capacity: 0.4,
        }];
        let graph = build_flow_graph(&[1.0], &caps, &[100.0]).unwrap();
        let assignment = max_flow(&graph);
        assert!((assignment.total_flow - 0.4).abs() < 1e-12);
        assignment.validate().unwrap();
    }

    #[test]
    fn two_satellites_share_one_orbit_download() {
        // Two members of the same orbit with station capacities 0.4 and 0.3
        // move 0.7 of the model in one slot.
        let caps = [
            GslCap {
                sat: SatId::new(0, 0),
                station: 0,
                capacity: 0.4,
            },
            GslCap {
                sat: SatId::new(0, 1),
                station: 1,
                capacity: 0.3,
            },
        ];
        let graph = build_flow_graph(&[1.0], &caps, &[10.0, 10.0]).unwrap();
        let assignment = max_flow(&graph);
        assert!((assignment.total_flow - 0.7).abs() < 1e-12);
        assert!((min_cut_value(&graph) - 0.7).abs() < 1e-12);
        assignment.validate().unwrap();
    }

    #[test]
    fn zero_pending_gives_zero_flow() {
        let caps = [GslCap {
            sat: SatId::new(0, 0),
            station: 0,
            capacity: 0.9,
        }];
        let graph = build_flow_graph(&[0.0], &caps, &[10.0]).unwrap();
        assert_eq!(max_flow(&graph).total_flow, 0.0);
    }

    #[test]
    fn series_bottleneck_is_the_smallest_capacity() {
        let caps = [GslCap {
            sat: SatId::new(0, 0),
            station: 0,
            capacity: 0.25,
        }];
        let graph = build_flow_graph(&[1.0], &caps, &[10.0]).unwrap();
        assert!((max_flow(&graph).total_flow - 0.25).abs() < 1e-12);
    }

    #[test]
    fn duplicate_links_are_rejected() {
        let caps = [
            GslCap {
                sat: SatId::new(0, 0),
                station: 0,
                capacity: 0.4,
            },
            GslCap {
                sat: SatId::new(0, 0),
                station: 0,
                capacity: 0.3,
            },
        ];
        assert!(matches!(
            build_flow_graph(&[1.0], &caps, &[10.0]),
            Err(SimError::MalformedGraph(_))
        ));
    }

    #[test]
    fn pending_outside_unit_interval_is_rejected() {
        assert!(build_flow_graph(&[1.5], &[], &[1.0]).is_err());
        assert!(build_flow_graph(&[-0.1], &[], &[1.0]).is_err());
    }

    fn random_graph(rng: &mut ChaCha8Rng) -> FlowGraph {
        let n = rng.random_range(4usize..=12);
        let mut edges = Vec::new();
        for from in 0..n {
            for to in 0..n {
                if from == to || to == 0 || from == n - 1 {
                    continue;
                }
                if rng.random_range(0.0..1.0) < 0.45 {
                    edges.push((from, to, rng.random_range(0.0..2.0)));
                }
            }
        }
        FlowGraph::from_edges(plain_labels(n), 0, n - 1, &edges).unwrap()
    }

    #[test]
    fn random_graphs_match_min_cut_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..60 {
            let graph = random_graph(&mut rng);
            let assignment = max_flow(&graph);
            let cut = min_cut_value(&graph);
            assert!(
                (assignment.total_flow - cut).abs() < 1e-9,
                "flow {} vs cut {}",
                assignment.total_flow,
                cut
            );
            assignment.validate().unwrap();
        }
    }

    #[test]
    fn adding_an_edge_never_decreases_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let graph = random_graph(&mut rng);
            let before = max_flow(&graph).total_flow;
            let n = graph.node_count();
            let mut edges = graph.edge_list();
            let from = rng.random_range(0..n - 1);
            let mut to = rng.random_range(1..n);
            if to == from {
                to = n - 1;
            }
            edges.push((from, to, rng.random_range(0.0..2.0)));
            let bigger = FlowGraph::from_edges(plain_labels(n), 0, n - 1, &edges).unwrap();
            assert!(max_flow(&bigger).total_flow >= before - 1e-12);
        }
    }

    struct FixedProvider {
        caps: Vec<GslCap>,
        stations: usize,
    }

    impl LinkStateProvider for FixedProvider {
        fn feasible_caps(&self, _: f64) -> Result<Vec<GslCap>> {
            Ok(self.caps.clone())
        }
        fn station_count(&self) -> usize {
            self.stations
        }
    }

    #[test]
    fn nothing_pending_takes_no_slots() {
        let provider = FixedProvider {
            caps: vec![],
            stations: 1,
        };
        let out = schedule_transfer(
            &[0.0, 0.0],
            &provider,
            0.0,
            TransferDirection::Down,
            None,
            &transfer_cfg(),
        )
        .unwrap();
        assert_eq!(out.slots_used, 0);
        assert_eq!(out.total_time_s, 0.0);
    }

    #[test]
    fn constant_fifth_per_slot_drains_in_five_slots() {
        // Oracle: ceil(1.0 / 0.2) = 5.
        let provider = FixedProvider {
            caps: vec![GslCap {
                sat: SatId::new(0, 0),
                station: 0,
                capacity: 0.2,
            }],
            stations: 1,
        };
        let out = schedule_transfer(
            &[1.0],
            &provider,
            0.0,
            TransferDirection::Down,
            None,
            &transfer_cfg(),
        )
        .unwrap();
        assert_eq!(out.slots_used, 5);
        assert_eq!(out.access_charges, 1);
        // Pending decreases monotonically across slots.
        let mut last = 1.0;
        for rec in &out.per_slot {
            let moved = rec.assignment.source_flow_to(NodeId::Orbit(0));
            assert!(moved >= 0.0);
            last -= moved;
            assert!(last > -1e-12);
        }
        assert!(last.abs() < 1e-9);
    }

    #[test]
    fn disjoint_dedicated_links_download_in_parallel() {
        let caps = (0..3)
            .map(|m| GslCap {
                sat: SatId::new(m, 0),
                station: m,
                capacity: 1.0,
            })
            .collect();
        let provider = FixedProvider { caps, stations: 3 };
        let out = schedule_transfer(
            &[1.0, 1.0, 1.0],
            &provider,
            0.0,
            TransferDirection::Down,
            None,
            &transfer_cfg(),
        )
        .unwrap();
        assert_eq!(out.slots_used, 1);
    }

    #[test]
    fn stall_reports_a_diagnostic() {
        let provider = FixedProvider {
            caps: vec![],
            stations: 1,
        };
        let cfg = TransferConfig {
            stall_horizon_s: 5.0,
            ..transfer_cfg()
        };
        let err = schedule_transfer(
            &[1.0],
            &provider,
            0.0,
            TransferDirection::Down,
            None,
            &cfg,
        )
        .unwrap_err();
        match err {
            SimError::Stall(msg) => assert!(msg.contains("no feasible link"), "{msg}"),
            other => panic!("expected stall, got {other:?}"),
        }
    }

    #[test]
    fn access_time_charged_per_new_pair() {
        let caps = vec![
            GslCap {
                sat: SatId::new(0, 0),
                station: 0,
                capacity: 0.3,
            },
            GslCap {
                sat: SatId::new(0, 1),
                station: 0,
                capacity: 0.3,
            },
        ];
        let provider = FixedProvider { caps, stations: 1 };
        let cfg = TransferConfig {
            access_time_s: 10.0,
            ..transfer_cfg()
        };
        let out = schedule_transfer(
            &[1.0],
            &provider,
            0.0,
            TransferDirection::Down,
            None,
            &cfg,
        )
        .unwrap();
        // 0.6/slot over two sats: 2 slots, both pairs used.
        assert_eq!(out.slots_used, 2);
        assert_eq!(out.access_charges, 2);
        assert!((out.total_time_s - (2.0 + 20.0)).abs() < 1e-12);

        let per_transfer = TransferConfig {
            access_mode: AccessChargeMode::PerTransfer,
            ..cfg
        };
        let out = schedule_transfer(
            &[1.0],
            &provider,
            0.0,
            TransferDirection::Down,
            None,
            &per_transfer,
        )
        .unwrap();
        assert_eq!(out.access_charges, 1);
    }

    #[test]
    fn per_orbit_download_respects_unit_total() {
        let caps = vec![GslCap {
            sat: SatId::new(0, 0),
            station: 0,
            capacity: 0.7,
        }];
        let provider = FixedProvider { caps, stations: 1 };
        let out = schedule_transfer(
            &[1.0],
            &provider,
            0.0,
            TransferDirection::Down,
            None,
            &transfer_cfg(),
        )
        .unwrap();
        let moved: f64 = out
            .per_slot
            .iter()
            .map(|r| r.assignment.source_flow_to(NodeId::Orbit(0)))
            .sum();
        assert!((moved - 1.0).abs() < 1e-9);
        assert_eq!(out.slots_used, 2);
    }
}
