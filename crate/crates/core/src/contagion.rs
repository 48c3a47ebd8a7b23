//! Threshold contagion: exposure, complex diffusion and decentralized routing.
//!
//! A node is *exposed* once at least `k` distinct infected nodes are among its
//! in-neighbors: strong-tie neighbors (always symmetric) and weak-tie
//! neighbors (initiators of ties into the node when directed, either endpoint
//! when undirected). [`Simulation`] maintains exposure incrementally; a batch
//! of activations is simultaneous, so ties of nodes infected in the same step
//! only take effect once the whole batch is infected.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::step_rng;
use crate::schemes::RoutingScheme;
use crate::smallworld::{Directedness, Graph, LazyGraph, ModelParams, TieSource};
use crate::topology::{NodeId, TorusGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Inactive,
    Exposed,
    Infected,
}

/// `k` consecutive seeds along row 0, starting at the origin.
pub fn default_seeds(grid: TorusGrid, k: u32) -> Result<Vec<NodeId>> {
    if k == 0 || k > grid.side() {
        return Err(Error::Domain(format!(
            "cannot place {k} consecutive seeds on a torus of side {}",
            grid.side()
        )));
    }
    Ok((0..k as i64).map(|c| grid.node(0, c)).collect())
}

/// Lowest row-major node at maximal distance from the origin (the antipode for even `L`).
pub fn default_target(grid: TorusGrid) -> NodeId {
    let origin = grid.node(0, 0);
    grid.nodes()
        .find(|&v| grid.distance(origin, v) == grid.max_distance())
        .expect("some node attains the maximal distance")
}

/// Default step budget, `4n`.
pub fn default_budget(grid: TorusGrid) -> u64 {
    4 * grid.node_count() as u64
}

/// Fenwick tree of 0/1 membership over row-major indices.
#[derive(Debug, Clone)]
struct RankIndex {
    tree: Vec<u32>,
}

impl RankIndex {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, idx: usize, delta: i32) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] = self.tree[i].wrapping_add_signed(delta);
            i += i & i.wrapping_neg();
        }
    }

    /// Index of the `j`-th (0-based) member.
    fn nth(&self, j: usize) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut remaining = j as u32 + 1;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] < remaining {
                pos = next;
                remaining -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

/// The exposed frontier `ℰ(S)`, ordered by distance to the target and
/// addressable by rank in row-major order.
#[derive(Debug, Clone)]
pub struct Frontier {
    grid: TorusGrid,
    target: NodeId,
    by_distance: BTreeSet<(u32, u32)>,
    ranks: RankIndex,
}

impl Frontier {
    pub fn new(grid: TorusGrid, target: NodeId) -> Self {
        Self {
            grid,
            target,
            by_distance: BTreeSet::new(),
            ranks: RankIndex::new(grid.node_count()),
        }
    }

    pub fn from_nodes(grid: TorusGrid, target: NodeId, nodes: impl IntoIterator<Item = NodeId>) -> Self {
        let mut frontier = Self::new(grid, target);
        for u in nodes {
            frontier.insert(u);
        }
        frontier
    }

    fn key(&self, u: NodeId) -> (u32, u32) {
        (self.grid.distance(u, self.target), self.grid.index(u) as u32)
    }

    fn insert(&mut self, u: NodeId) -> bool {
        let inserted = self.by_distance.insert(self.key(u));
        if inserted {
            self.ranks.add(self.grid.index(u), 1);
        }
        inserted
    }

    fn remove(&mut self, u: NodeId) -> bool {
        let removed = self.by_distance.remove(&self.key(u));
        if removed {
            self.ranks.add(self.grid.index(u), -1);
        }
        removed
    }

    pub fn len(&self) -> usize {
        self.by_distance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_distance.is_empty()
    }

    pub fn contains(&self, u: NodeId) -> bool {
        self.grid.contains(u) && self.by_distance.contains(&self.key(u))
    }

    pub fn target(&self) -> NodeId {
        self.target
    }

    /// Members by increasing distance to the target, ties in row-major order.
    pub fn by_distance(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.by_distance
            .iter()
            .map(|&(_, idx)| self.grid.from_index(idx as usize))
    }

    /// The `j`-th member in row-major order.
    pub fn nth_in_index_order(&self, j: usize) -> Option<NodeId> {
        (j < self.len()).then(|| self.grid.from_index(self.ranks.nth(j)))
    }

    /// All members in row-major order.
    pub fn in_index_order(&self) -> Vec<NodeId> {
        let mut idx: Vec<u32> = self.by_distance.iter().map(|&(_, i)| i).collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| self.grid.from_index(i as usize)).collect()
    }

    pub fn nearest_distance(&self) -> Option<u32> {
        self.by_distance.first().map(|&(d, _)| d)
    }
}

/// Exposed set computed from scratch: non-activated nodes with at least `k`
/// distinct activated in-neighbors, given each activated node's revealed weak
/// neighborhood.
pub fn exposed_set<'a>(
    grid: TorusGrid,
    p: u32,
    k: u32,
    activated: impl IntoIterator<Item = (NodeId, &'a [NodeId])>,
) -> BTreeSet<NodeId> {
    let mut infected = HashSet::new();
    let mut sources: HashMap<NodeId, HashSet<NodeId>> = HashMap::new();
    for (s, ties) in activated {
        infected.insert(s);
        for d in 1..=p.min(grid.max_distance()) {
            for v in grid.nodes_at_distance(s, d).expect("shell in range") {
                sources.entry(v).or_default().insert(s);
            }
        }
        for &v in ties {
            sources.entry(v).or_default().insert(s);
        }
    }
    sources
        .into_iter()
        .filter(|(v, srcs)| !infected.contains(v) && srcs.len() >= k as usize)
        .map(|(v, _)| v)
        .collect()
}

/// `min` distance from `S ∪ ℰ(S)` to `target`.
pub fn distance_to_target(
    grid: TorusGrid,
    activated: &[NodeId],
    exposed: impl IntoIterator<Item = NodeId>,
    target: NodeId,
) -> Option<u32> {
    activated
        .iter()
        .copied()
        .chain(exposed)
        .map(|u| grid.distance(u, target))
        .min()
}

/// What a decentralized scheme may observe before step `step + 1`: the
/// activated set in activation order, the revealed weak ties of activated
/// nodes, and the frontier those determine. Nothing about non-activated
/// nodes' ties is reachable from here.
#[derive(Debug, Clone, Copy)]
pub struct DecentralizedView<'a> {
    grid: TorusGrid,
    target: NodeId,
    p: u32,
    k: u32,
    step: u64,
    activated: &'a [NodeId],
    revealed: &'a [NodeId],
    revealed_start: &'a [usize],
    frontier: &'a Frontier,
}

impl<'a> DecentralizedView<'a> {
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn target(&self) -> NodeId {
        self.target
    }

    pub fn threshold(&self) -> u32 {
        self.k
    }

    pub fn strong_radius(&self) -> u32 {
        self.p
    }

    /// Number of steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn activated(&self) -> &'a [NodeId] {
        self.activated
    }

    /// Weak neighborhood revealed when the `i`-th activated node was infected.
    pub fn weak_ties(&self, i: usize) -> &'a [NodeId] {
        &self.revealed[self.revealed_start[i]..self.revealed_start[i + 1]]
    }

    pub fn frontier(&self) -> &'a Frontier {
        self.frontier
    }

    /// Strong-tie neighbors of an activated node.
    pub fn strong_neighbors(&self, u: NodeId) -> Vec<NodeId> {
        (1..=self.p.min(self.grid.max_distance()))
            .flat_map(|d| self.grid.nodes_at_distance(u, d).expect("shell in range"))
            .collect()
    }

    /// Frontier recomputed from the activated set and revealed ties alone.
    pub fn recompute_exposed(&self) -> BTreeSet<NodeId> {
        exposed_set(
            self.grid,
            self.p,
            self.k,
            self.activated.iter().enumerate().map(|(i, &s)| (s, self.weak_ties(i))),
        )
    }

    pub fn snapshot(&self) -> ViewSnapshot {
        ViewSnapshot {
            side: self.grid.side(),
            p: self.p,
            k: self.k,
            target: self.target,
            step: self.step,
            activated: self.activated.to_vec(),
            weak_ties: (0..self.activated.len()).map(|i| self.weak_ties(i).to_vec()).collect(),
        }
    }
}

/// Owned, serializable copy of a [`DecentralizedView`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSnapshot {
    pub side: u32,
    pub p: u32,
    pub k: u32,
    pub target: NodeId,
    pub step: u64,
    pub activated: Vec<NodeId>,
    pub weak_ties: Vec<Vec<NodeId>>,
}

impl ViewSnapshot {
    /// Rebuilds a view from the snapshot, recomputing the frontier from scratch.
    pub fn rebuild(&self) -> Result<ReplayView> {
        let grid = TorusGrid::new(self.side)?;
        if self.weak_ties.len() != self.activated.len() {
            return Err(Error::Domain("snapshot tie lists do not match the activated set".into()));
        }
        if !grid.contains(self.target) || self.activated.iter().any(|&u| !grid.contains(u)) {
            return Err(Error::Domain("snapshot node outside the torus".into()));
        }
        let exposed = exposed_set(
            grid,
            self.p,
            self.k,
            self.activated
                .iter()
                .zip(&self.weak_ties)
                .map(|(&s, t)| (s, t.as_slice())),
        );
        let mut revealed_start = vec![0];
        let mut revealed = Vec::new();
        for ties in &self.weak_ties {
            revealed.extend_from_slice(ties);
            revealed_start.push(revealed.len());
        }
        Ok(ReplayView {
            grid,
            snapshot: self.clone(),
            revealed,
            revealed_start,
            frontier: Frontier::from_nodes(grid, self.target, exposed),
        })
    }
}

/// A view reconstructed from a [`ViewSnapshot`].
#[derive(Debug, Clone)]
pub struct ReplayView {
    grid: TorusGrid,
    snapshot: ViewSnapshot,
    revealed: Vec<NodeId>,
    revealed_start: Vec<usize>,
    frontier: Frontier,
}

impl ReplayView {
    pub fn view(&self) -> DecentralizedView<'_> {
        DecentralizedView {
            grid: self.grid,
            target: self.snapshot.target,
            p: self.snapshot.p,
            k: self.snapshot.k,
            step: self.snapshot.step,
            activated: &self.snapshot.activated,
            revealed: &self.revealed,
            revealed_start: &self.revealed_start,
            frontier: &self.frontier,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub node: NodeId,
    /// `d_i`: distance from `S_i ∪ ℰ(S_i)` to the target after the step.
    pub distance: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// Target infected (routing) or every node infected (diffusion without target).
    Reached { steps: u64 },
    BudgetExhausted { steps: u64 },
    FrontierEmpty { steps: u64 },
}

impl Outcome {
    pub fn steps(self) -> u64 {
        match self {
            Outcome::Reached { steps } | Outcome::BudgetExhausted { steps } | Outcome::FrontierEmpty { steps } => steps,
        }
    }

    pub fn is_reached(self) -> bool {
        matches!(self, Outcome::Reached { .. })
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Reached { steps } => write!(f, "outcome reached {steps}"),
            Outcome::BudgetExhausted { steps } => write!(f, "outcome budget-exhausted {steps}"),
            Outcome::FrontierEmpty { steps } => write!(f, "outcome frontier-empty {steps}"),
        }
    }
}

/// Activation log of one run. Seeds appear as step-0 records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub outcome: Outcome,
}

impl Trace {
    /// Routing or diffusion time; the budget when truncated.
    pub fn time(&self) -> u64 {
        self.outcome.steps()
    }

    pub fn is_truncated(&self) -> bool {
        !self.outcome.is_reached()
    }

    /// Checks that `d_i` never increases and that the last `d` is zero iff the
    /// target was reached.
    pub fn check_distances(&self, expect_target: bool) -> std::result::Result<(), String> {
        for pair in self.records.windows(2) {
            if pair[1].distance > pair[0].distance {
                return Err(format!(
                    "d increased from {} to {} at step {}",
                    pair[0].distance, pair[1].distance, pair[1].step
                ));
            }
        }
        if expect_target {
            let last = self.records.last().map(|r| r.distance);
            if (last == Some(0)) != self.outcome.is_reached() {
                return Err(format!("final d {last:?} inconsistent with {}", self.outcome));
            }
        }
        Ok(())
    }

    /// One `i row col d` line per activation, then the outcome line.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            writeln!(out, "{} {} {} {}", r.step, r.node.row(), r.node.col(), r.distance)?;
        }
        writeln!(out, "{}", self.outcome)?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn parse(text: &str, grid: TorusGrid) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields[..] {
                [] => continue,
                ["outcome", kind, steps] => {
                    let steps: u64 = steps
                        .parse()
                        .map_err(|_| Error::parse(lineno, format!("bad step count `{steps}`")))?;
                    let outcome = match kind {
                        "reached" => Outcome::Reached { steps },
                        "budget-exhausted" => Outcome::BudgetExhausted { steps },
                        "frontier-empty" => Outcome::FrontierEmpty { steps },
                        other => return Err(Error::parse(lineno, format!("unknown outcome `{other}`"))),
                    };
                    return Ok(Trace { records, outcome });
                }
                [step, row, col, d] => {
                    let num = |s: &str| -> Result<u64> {
                        s.parse().map_err(|_| Error::parse(lineno, format!("bad number `{s}`")))
                    };
                    let (row, col) = (num(row)?, num(col)?);
                    if row >= grid.side() as u64 || col >= grid.side() as u64 {
                        return Err(Error::parse(lineno, "node outside the torus"));
                    }
                    records.push(TraceRecord {
                        step: num(step)?,
                        node: grid.node(row as i64, col as i64),
                        distance: num(d)? as u32,
                    });
                }
                _ => return Err(Error::parse(lineno, "expected `i row col d` or an outcome line")),
            }
        }
        Err(Error::parse(text.lines().count() + 1, "missing outcome line"))
    }
}

/// Incremental contagion state over a tie source.
#[derive(Debug)]
pub struct Simulation<T> {
    source: T,
    grid: TorusGrid,
    p: u32,
    k: u32,
    ball: Vec<(i64, i64)>,
    target: NodeId,
    labels: Vec<Label>,
    /// Distinct infected in-neighbors per node.
    hits: Vec<u32>,
    mark: Vec<u32>,
    stamp: u32,
    frontier: Frontier,
    activated: Vec<NodeId>,
    revealed: Vec<NodeId>,
    revealed_start: Vec<usize>,
    infected: usize,
    step: u64,
    best: u32,
    records: Vec<TraceRecord>,
}

impl<T: TieSource> Simulation<T> {
    /// Infects `seeds` at step 0.
    pub fn new(source: T, seeds: &[NodeId], target: NodeId) -> Result<Self> {
        let params = *source.params();
        let grid = params.grid();
        if seeds.is_empty() {
            return Err(Error::Domain("at least one seed is required".into()));
        }
        if !grid.contains(target) || seeds.iter().any(|&s| !grid.contains(s)) {
            return Err(Error::Domain("seed or target outside the torus".into()));
        }
        if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
            return Err(Error::Domain("seeds must be distinct".into()));
        }
        let n = grid.node_count();
        let mut sim = Self {
            source,
            grid,
            p: params.p,
            k: params.k,
            ball: grid.ball_offsets(params.p),
            target,
            labels: vec![Label::Inactive; n],
            hits: vec![0; n],
            mark: vec![0; n],
            stamp: 0,
            frontier: Frontier::new(grid, target),
            activated: Vec::new(),
            revealed: Vec::new(),
            revealed_start: vec![0],
            infected: 0,
            step: 0,
            best: u32::MAX,
            records: Vec::new(),
        };
        sim.infect_batch(seeds);
        Ok(sim)
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn target(&self) -> NodeId {
        self.target
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn label(&self, u: NodeId) -> Label {
        self.labels[self.grid.index(u)]
    }

    pub fn frontier(&self) -> &Frontier {
        &self.frontier
    }

    pub fn activated(&self) -> &[NodeId] {
        &self.activated
    }

    pub fn infected_count(&self) -> usize {
        self.infected
    }

    pub fn all_infected(&self) -> bool {
        self.infected == self.grid.node_count()
    }

    pub fn is_target_infected(&self) -> bool {
        self.label(self.target) == Label::Infected
    }

    /// Current `d_i`.
    pub fn distance_to_target(&self) -> u32 {
        self.best
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn view(&self) -> DecentralizedView<'_> {
        DecentralizedView {
            grid: self.grid,
            target: self.target,
            p: self.p,
            k: self.k,
            step: self.step,
            activated: &self.activated,
            revealed: &self.revealed,
            revealed_start: &self.revealed_start,
            frontier: &self.frontier,
        }
    }

    /// Activated nodes paired with the weak ties revealed for them.
    pub fn revealed_ties(&self) -> Vec<(NodeId, Vec<NodeId>)> {
        let view = self.view();
        self.activated
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, view.weak_ties(i).to_vec()))
            .collect()
    }

    pub fn source(&self) -> &T {
        &self.source
    }

    /// Infects `chosen` simultaneously as the next step. Every node must be
    /// exposed and listed once.
    pub fn activate(&mut self, chosen: &[NodeId]) -> Result<()> {
        if chosen.is_empty() {
            return Err(Error::Domain("a step must activate at least one node".into()));
        }
        self.stamp += 1;
        for &u in chosen {
            if !self.grid.contains(u) || self.labels[self.grid.index(u)] != Label::Exposed {
                return Err(Error::NotExposed(u));
            }
            let idx = self.grid.index(u);
            if self.mark[idx] == self.stamp {
                return Err(Error::Domain(format!("node {u} selected twice")));
            }
            self.mark[idx] = self.stamp;
        }
        self.step += 1;
        self.infect_batch(chosen);
        Ok(())
    }

    pub fn into_trace(self, outcome: Outcome) -> Trace {
        Trace {
            records: self.records,
            outcome,
        }
    }

    fn infect_batch(&mut self, nodes: &[NodeId]) {
        for &u in nodes {
            let idx = self.grid.index(u);
            if self.labels[idx] == Label::Exposed {
                self.frontier.remove(u);
            }
            self.labels[idx] = Label::Infected;
            self.infected += 1;
            self.activated.push(u);
            self.best = self.best.min(self.grid.distance(u, self.target));
        }
        for &u in nodes {
            let ties = self.source.reveal(u);
            self.revealed.extend_from_slice(ties);
            let (lo, hi) = (*self.revealed_start.last().unwrap(), self.revealed.len());
            self.revealed_start.push(hi);

            self.stamp += 1;
            self.mark[self.grid.index(u)] = self.stamp;
            for i in 0..self.ball.len() {
                let (dr, dc) = self.ball[i];
                let x = self.grid.offset(u, dr, dc);
                self.mark[self.grid.index(x)] = self.stamp;
                self.touch(x);
            }
            for i in lo..hi {
                let x = self.revealed[i];
                let xi = self.grid.index(x);
                if self.mark[xi] != self.stamp {
                    self.mark[xi] = self.stamp;
                    self.touch(x);
                }
            }
        }
        for &u in nodes {
            self.records.push(TraceRecord {
                step: self.step,
                node: u,
                distance: self.best,
            });
        }
    }

    fn touch(&mut self, x: NodeId) {
        let idx = self.grid.index(x);
        if self.labels[idx] == Label::Infected {
            return;
        }
        self.hits[idx] += 1;
        if self.hits[idx] >= self.k && self.labels[idx] == Label::Inactive {
            self.labels[idx] = Label::Exposed;
            self.frontier.insert(x);
            self.best = self.best.min(self.grid.distance(x, self.target));
        }
    }
}

/// Complex diffusion on an eager graph: every exposed node is infected each step.
///
/// With a `target` the run stops once it is infected; otherwise once every node
/// is infected (and `d_i` is reported against [`default_target`]).
pub fn run_diffusion(graph: &Graph, seeds: &[NodeId], target: Option<NodeId>, step_budget: u64) -> Result<Trace> {
    let grid = graph.grid();
    let mut sim = Simulation::new(graph, seeds, target.unwrap_or_else(|| default_target(grid)))?;
    let outcome = loop {
        let done = match target {
            Some(_) => sim.is_target_infected(),
            None => sim.all_infected(),
        };
        if done {
            break Outcome::Reached { steps: sim.step() };
        }
        if sim.frontier().is_empty() {
            break Outcome::FrontierEmpty { steps: sim.step() };
        }
        if sim.step() >= step_budget {
            break Outcome::BudgetExhausted { steps: sim.step() };
        }
        let batch = sim.frontier().in_index_order();
        sim.activate(&batch)?;
    };
    Ok(sim.into_trace(outcome))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingOptions {
    /// Activations per step; [`crate::schemes::UNBOUNDED`] for no limit.
    pub m: usize,
    pub step_budget: u64,
    /// Seed of the per-step RNG streams handed to the scheme.
    pub scheme_seed: u64,
    /// Keep a snapshot of every view and the revealed ties for auditing.
    pub audit: bool,
}

impl RoutingOptions {
    pub fn new(m: usize, step_budget: u64, scheme_seed: u64) -> Self {
        Self {
            m,
            step_budget,
            scheme_seed,
            audit: false,
        }
    }

    pub fn with_audit(mut self) -> Self {
        self.audit = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RoutingRun {
    pub trace: Trace,
    /// View offered to the scheme before each step (audit mode only).
    pub views: Vec<ViewSnapshot>,
    /// Activated nodes with their revealed weak ties (audit mode only).
    pub revealed: Vec<(NodeId, Vec<NodeId>)>,
}

/// Routes from `seeds` to `target` over any tie source.
pub fn route<T: TieSource>(
    source: T,
    seeds: &[NodeId],
    target: NodeId,
    scheme: &dyn RoutingScheme,
    opts: RoutingOptions,
) -> Result<RoutingRun> {
    if opts.m == 0 {
        return Err(Error::Domain("m must be at least 1".into()));
    }
    let mut sim = Simulation::new(source, seeds, target)?;
    let mut views = Vec::new();
    let outcome = loop {
        if sim.is_target_infected() {
            break Outcome::Reached { steps: sim.step() };
        }
        if sim.frontier().is_empty() {
            break Outcome::FrontierEmpty { steps: sim.step() };
        }
        if sim.step() >= opts.step_budget {
            break Outcome::BudgetExhausted { steps: sim.step() };
        }
        let view = sim.view();
        if opts.audit {
            views.push(view.snapshot());
        }
        let mut rng = step_rng(opts.scheme_seed, view.step());
        let chosen = scheme.select(&view, opts.m, &mut rng)?;
        let expected = opts.m.min(view.frontier().len());
        if chosen.len() != expected {
            return Err(Error::ContractViolation {
                step: sim.step() + 1,
                reason: format!("selected {} nodes, expected {expected}", chosen.len()),
            });
        }
        let step = sim.step() + 1;
        sim.activate(&chosen).map_err(|e| Error::ContractViolation {
            step,
            reason: e.to_string(),
        })?;
    };
    let revealed = if opts.audit { sim.revealed_ties() } else { Vec::new() };
    Ok(RoutingRun {
        trace: sim.into_trace(outcome),
        views,
        revealed,
    })
}

/// Routes on a fresh network drawn from `params` with `graph_seed`.
///
/// Directed networks are revealed lazily, one node at activation time;
/// undirected ones are generated up front.
pub fn run_routing(
    params: ModelParams,
    graph_seed: u64,
    seeds: &[NodeId],
    target: NodeId,
    scheme: &dyn RoutingScheme,
    opts: RoutingOptions,
) -> Result<RoutingRun> {
    match params.directedness {
        Directedness::Directed => route(LazyGraph::new(params, graph_seed)?, seeds, target, scheme, opts),
        Directedness::Undirected => {
            let graph = Graph::generate(params, graph_seed)?;
            route(&graph, seeds, target, scheme, opts)
        }
    }
}

/// Checks post hoc that every non-seed activation had at least `k` distinct
/// in-neighbors activated in earlier steps, using only the revealed ties.
pub fn audit_exposure(
    grid: TorusGrid,
    p: u32,
    k: u32,
    trace: &Trace,
    revealed: &[(NodeId, Vec<NodeId>)],
) -> std::result::Result<(), String> {
    let step_of: HashMap<NodeId, u64> = trace.records.iter().map(|r| (r.node, r.step)).collect();
    let mut weak_sources: HashMap<NodeId, HashSet<NodeId>> = HashMap::new();
    for (s, ties) in revealed {
        for &x in ties {
            weak_sources.entry(x).or_default().insert(*s);
        }
    }
    for r in trace.records.iter().filter(|r| r.step > 0) {
        let earlier = |s: &NodeId| step_of.get(s).is_some_and(|&t| t < r.step);
        let mut sources: HashSet<NodeId> = (1..=p.min(grid.max_distance()))
            .flat_map(|d| grid.nodes_at_distance(r.node, d).expect("shell in range"))
            .filter(earlier)
            .collect();
        if let Some(ws) = weak_sources.get(&r.node) {
            sources.extend(ws.iter().filter(|s| earlier(s)));
        }
        if sources.len() < k as usize {
            return Err(format!(
                "{} activated at step {} with only {} infected in-neighbors",
                r.node,
                r.step,
                sources.len()
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::schemes::{ActivateAll, Greedy, UNBOUNDED};

    fn params(side: u32, alpha: f64, p: u32, q: u32, k: u32) -> ModelParams {
        ModelParams::new(side, alpha, p, q, k, Directedness::Directed).unwrap()
    }

    /// Naive synchronous diffusion: recompute the exposed set from scratch each round.
    fn naive_diffusion_rounds(graph: &Graph, seeds: &[NodeId]) -> Option<u64> {
        let grid = graph.grid();
        let p = graph.params();
        let mut infected: Vec<NodeId> = seeds.to_vec();
        let mut rounds = 0;
        while infected.len() < grid.node_count() {
            let exposed = exposed_set(grid, p.p, p.k, infected.iter().map(|&s| (s, graph.weak_neighbors(s))));
            if exposed.is_empty() {
                return None;
            }
            infected.extend(exposed);
            rounds += 1;
        }
        Some(rounds)
    }

    /// Naive greedy routing on an eager graph: full recomputation every step.
    fn naive_greedy_time(graph: &Graph, seeds: &[NodeId], target: NodeId) -> u64 {
        let grid = graph.grid();
        let p = graph.params();
        let mut infected: Vec<NodeId> = seeds.to_vec();
        let mut steps = 0;
        while !infected.contains(&target) {
            let exposed = exposed_set(grid, p.p, p.k, infected.iter().map(|&s| (s, graph.weak_neighbors(s))));
            let next = exposed
                .into_iter()
                .min_by_key(|&v| (grid.distance(v, target), grid.index(v)))
                .expect("frontier never empties when p = k");
            infected.push(next);
            steps += 1;
        }
        steps
    }

    #[test]
    fn single_seed_exposes_nothing_at_threshold_two() {
        let grid = TorusGrid::new(8).unwrap();
        let s = grid.node(3, 3);
        assert!(exposed_set(grid, 2, 2, [(s, &[][..])]).is_empty());
    }

    #[test]
    fn two_seeds_expose_the_common_strong_neighbourhood() {
        let grid = TorusGrid::new(8).unwrap();
        let (a, b) = (grid.node(0, 0), grid.node(0, 1));
        let got = exposed_set(grid, 2, 2, [(a, &[][..]), (b, &[][..])]);
        let oracle: BTreeSet<NodeId> = grid
            .nodes()
            .filter(|&v| v != a && v != b && grid.distance(v, a) <= 2 && grid.distance(v, b) <= 2)
            .collect();
        assert_eq!(got, oracle);
        assert_eq!(got.len(), 6);
        // Incremental engine agrees.
        let g = Graph::generate(params(8, 2.0, 2, 0, 2), 0).unwrap();
        let sim = Simulation::new(&g, &[a, b], default_target(grid)).unwrap();
        assert_eq!(sim.frontier().in_index_order(), oracle.into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn threshold_one_exposes_strong_and_weak_out_neighbours() {
        let grid = TorusGrid::new(8).unwrap();
        let u = grid.node(2, 2);
        let far = [grid.node(6, 6), grid.node(6, 6), grid.node(2, 3)];
        let got = exposed_set(grid, 1, 1, [(u, &far[..])]);
        let mut want: BTreeSet<NodeId> = grid.nodes_at_distance(u, 1).unwrap().into_iter().collect();
        want.insert(grid.node(6, 6));
        assert_eq!(got, want);
    }

    #[test]
    fn parallel_ties_count_once() {
        let grid = TorusGrid::new(8).unwrap();
        let u = grid.node(0, 0);
        let x = grid.node(4, 4);
        assert!(exposed_set(grid, 1, 2, [(u, &[x, x][..])]).is_empty());
    }

    #[test]
    fn diffusion_on_strong_ties_matches_naive_rounds() {
        let g = Graph::generate(params(8, 2.0, 2, 0, 2), 0).unwrap();
        let grid = g.grid();
        let seeds = default_seeds(grid, 2).unwrap();
        let trace = run_diffusion(&g, &seeds, None, default_budget(grid)).unwrap();
        let oracle = naive_diffusion_rounds(&g, &seeds).unwrap();
        assert_eq!(trace.outcome, Outcome::Reached { steps: oracle });
        assert_eq!(oracle, 4);
        assert_eq!(trace.records.len(), 64);
    }

    #[test]
    fn simple_diffusion_time_is_eccentricity() {
        for side in [4, 6, 8, 10] {
            let g = Graph::generate(params(side, 2.0, 1, 0, 1), 0).unwrap();
            let grid = g.grid();
            let trace = run_diffusion(&g, &[grid.node(0, 0)], None, default_budget(grid)).unwrap();
            assert_eq!(trace.time(), side as u64);
        }
    }

    #[test]
    fn lone_seed_at_threshold_two_stalls() {
        let g = Graph::generate(params(8, 2.0, 2, 0, 2), 0).unwrap();
        let trace = run_diffusion(&g, &[g.grid().node(0, 0)], None, 100).unwrap();
        assert_eq!(trace.outcome, Outcome::FrontierEmpty { steps: 0 });
        assert!(trace.is_truncated());
    }

    #[test]
    fn diffusion_budget_truncates() {
        let g = Graph::generate(params(8, 2.0, 2, 0, 2), 0).unwrap();
        let seeds = default_seeds(g.grid(), 2).unwrap();
        let trace = run_diffusion(&g, &seeds, None, 2).unwrap();
        assert_eq!(trace.outcome, Outcome::BudgetExhausted { steps: 2 });
    }

    #[test]
    fn adjacent_target_takes_one_step() {
        let p = params(8, 2.0, 2, 2, 2);
        let grid = p.grid();
        let seeds = default_seeds(grid, 2).unwrap();
        let target = grid.node(1, 0);
        let run = run_routing(p, 5, &seeds, target, &Greedy, RoutingOptions::new(1, 100, 0)).unwrap();
        assert_eq!(run.trace.outcome, Outcome::Reached { steps: 1 });
    }

    #[test]
    fn seed_target_takes_zero_steps() {
        let p = params(8, 2.0, 2, 2, 2);
        let seeds = default_seeds(p.grid(), 2).unwrap();
        let run = run_routing(p, 5, &seeds, seeds[1], &Greedy, RoutingOptions::new(1, 100, 0)).unwrap();
        assert_eq!(run.trace.time(), 0);
    }

    #[test]
    fn strong_tie_greedy_routing_is_deterministic() {
        let p = params(8, 2.0, 2, 0, 2);
        let grid = p.grid();
        let seeds = default_seeds(grid, 2).unwrap();
        let target = default_target(grid);
        let graph = Graph::generate(p, 0).unwrap();
        let oracle = naive_greedy_time(&graph, &seeds, target);
        assert_eq!(oracle, 7);
        for seed in 0..5 {
            let run = run_routing(p, seed, &seeds, target, &Greedy, RoutingOptions::new(1, 256, seed)).unwrap();
            assert_eq!(run.trace.outcome, Outcome::Reached { steps: oracle });
            run.trace.check_distances(true).unwrap();
        }
    }

    #[test]
    fn greedy_matches_naive_oracle_with_weak_ties() {
        for seed in 0..20 {
            let p = params(10, 2.0, 2, 2, 2);
            let graph = Graph::generate(p, seed).unwrap();
            let grid = graph.grid();
            let seeds = default_seeds(grid, 2).unwrap();
            let target = default_target(grid);
            let run = route(&graph, &seeds, target, &Greedy, RoutingOptions::new(1, 400, 0)).unwrap();
            assert_eq!(run.trace.time(), naive_greedy_time(&graph, &seeds, target), "seed {seed}");
        }
    }

    #[test]
    fn activate_all_routing_equals_diffusion() {
        for seed in 0..10 {
            let p = params(8, 1.0, 2, 2, 2);
            let graph = Graph::generate(p, seed).unwrap();
            let grid = graph.grid();
            let seeds = default_seeds(grid, 2).unwrap();
            let target = default_target(grid);
            let diffusion = run_diffusion(&graph, &seeds, Some(target), 256).unwrap();
            let routed = route(&graph, &seeds, target, &ActivateAll, RoutingOptions::new(UNBOUNDED, 256, 0)).unwrap();
            assert_eq!(routed.trace, diffusion);
        }
    }

    #[test]
    fn initial_distance_is_side_for_even_tori() {
        for side in [4u32, 8, 16] {
            let grid = TorusGrid::new(side).unwrap();
            let target = default_target(grid);
            assert_eq!(grid.distance(grid.node(0, 0), target), side);
            assert_eq!(target, grid.node(side as i64 / 2, side as i64 / 2));
        }
        let odd = TorusGrid::new(5).unwrap();
        assert_eq!(default_target(odd), odd.node(2, 2));
    }

    #[test]
    fn distance_tracks_frontier() {
        let p = params(8, 2.0, 2, 0, 2);
        let g = Graph::generate(p, 0).unwrap();
        let grid = g.grid();
        let target = grid.node(2, 0);
        let mut sim = Simulation::new(&g, &default_seeds(grid, 2).unwrap(), target).unwrap();
        // (1,0) is exposed, one away from the target.
        assert_eq!(sim.distance_to_target(), 1);
        assert_eq!(
            Some(sim.distance_to_target()),
            distance_to_target(grid, sim.activated(), sim.frontier().by_distance(), target)
        );
        sim.activate(&[grid.node(1, 0)]).unwrap();
        // Now the target itself is exposed.
        assert_eq!(sim.distance_to_target(), 0);
        assert!(sim.frontier().contains(target));
    }

    #[test]
    fn activating_a_non_exposed_node_fails() {
        let p = params(8, 2.0, 2, 0, 2);
        let g = Graph::generate(p, 0).unwrap();
        let grid = g.grid();
        let mut sim = Simulation::new(&g, &default_seeds(grid, 2).unwrap(), default_target(grid)).unwrap();
        assert!(matches!(sim.activate(&[grid.node(5, 5)]), Err(Error::NotExposed(_))));
        assert!(sim.activate(&[grid.node(1, 0), grid.node(1, 0)]).is_err());
        assert!(sim.activate(&[]).is_err());
        assert_eq!(sim.step(), 0);
    }

    #[test]
    fn misbehaving_scheme_is_a_contract_violation() {
        struct Stubborn;
        impl RoutingScheme for Stubborn {
            fn descriptor(&self) -> crate::schemes::SchemeDescriptor {
                crate::schemes::SchemeDescriptor::deterministic("stubborn")
            }
            fn select(
                &self,
                view: &DecentralizedView<'_>,
                _m: usize,
                _rng: &mut rand_chacha::ChaCha8Rng,
            ) -> Result<Vec<NodeId>> {
                Ok(vec![view.target()])
            }
        }
        let p = params(8, 2.0, 2, 0, 2);
        let seeds = default_seeds(p.grid(), 2).unwrap();
        let err = run_routing(p, 0, &seeds, default_target(p.grid()), &Stubborn, RoutingOptions::new(1, 10, 0)).unwrap_err();
        assert!(matches!(err, Error::ContractViolation { step: 1, .. }));
    }

    #[test]
    fn routing_budget_truncates() {
        let p = params(8, 2.0, 2, 0, 2);
        let grid = p.grid();
        let seeds = default_seeds(grid, 2).unwrap();
        let run = run_routing(p, 0, &seeds, default_target(grid), &Greedy, RoutingOptions::new(1, 3, 0)).unwrap();
        assert_eq!(run.trace.outcome, Outcome::BudgetExhausted { steps: 3 });
        run.trace.check_distances(true).unwrap();
    }

    #[test]
    fn trace_text_round_trip() {
        let p = params(8, 2.0, 2, 2, 2);
        let grid = p.grid();
        let seeds = default_seeds(grid, 2).unwrap();
        let run = run_routing(p, 9, &seeds, default_target(grid), &Greedy, RoutingOptions::new(2, 256, 0)).unwrap();
        let text = run.trace.to_text();
        assert!(text.starts_with("0 0 0 "));
        assert!(text.trim_end().ends_with(&format!("outcome reached {}", run.trace.time())));
        assert_eq!(Trace::parse(&text, grid).unwrap(), run.trace);
        assert!(Trace::parse("0 0 0 8\n", grid).is_err());
        assert!(Trace::parse("0 0 0 8\noutcome lost 3\n", grid).is_err());
    }

    #[test]
    fn snapshots_replay_the_frontier() {
        let p = params(10, 2.0, 2, 2, 2);
        let grid = p.grid();
        let seeds = default_seeds(grid, 2).unwrap();
        let opts = RoutingOptions::new(1, 400, 0).with_audit();
        let run = run_routing(p, 4, &seeds, default_target(grid), &Greedy, opts).unwrap();
        assert_eq!(run.views.len() as u64, run.trace.time());
        for snap in &run.views {
            let json = serde_json::to_string(snap).unwrap();
            let back: ViewSnapshot = serde_json::from_str(&json).unwrap();
            let replay = back.rebuild().unwrap();
            let view = replay.view();
            assert_eq!(view.recompute_exposed().len(), view.frontier().len());
        }
        audit_exposure(grid, 2, 2, &run.trace, &run.revealed).unwrap();
    }

    #[test]
    fn audit_catches_an_unsupported_activation() {
        let grid = TorusGrid::new(8).unwrap();
        let trace = Trace {
            records: vec![
                TraceRecord { step: 0, node: grid.node(0, 0), distance: 8 },
                TraceRecord { step: 0, node: grid.node(0, 1), distance: 8 },
                TraceRecord { step: 1, node: grid.node(4, 4), distance: 0 },
            ],
            outcome: Outcome::Reached { steps: 1 },
        };
        let revealed = vec![(grid.node(0, 0), vec![grid.node(4, 4)]), (grid.node(0, 1), vec![])];
        assert!(audit_exposure(grid, 2, 2, &trace, &revealed).is_err());
        let both = vec![(grid.node(0, 0), vec![grid.node(4, 4)]), (grid.node(0, 1), vec![grid.node(4, 4)])];
        assert!(audit_exposure(grid, 2, 2, &trace, &both).is_ok());
    }

    #[test]
    fn seed_placement() {
        let grid = TorusGrid::new(4).unwrap();
        assert_eq!(default_seeds(grid, 2).unwrap(), vec![grid.node(0, 0), grid.node(0, 1)]);
        assert!(default_seeds(grid, 5).is_err());
        assert!(default_seeds(grid, 0).is_err());
    }

    #[test]
    fn frontier_rank_queries() {
        let grid = TorusGrid::new(5).unwrap();
        let nodes = [grid.node(4, 4), grid.node(1, 3), grid.node(2, 1)];
        let f = Frontier::from_nodes(grid, grid.node(0, 0), nodes);
        assert_eq!(f.in_index_order(), vec![grid.node(1, 3), grid.node(2, 1), grid.node(4, 4)]);
        assert_eq!(f.nth_in_index_order(1), Some(grid.node(2, 1)));
        assert_eq!(f.nth_in_index_order(3), None);
        assert_eq!(f.by_distance().next(), Some(grid.node(4, 4)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn exposure_is_monotone(side in 4u32..10, seed in 0u64..1000, take in 1usize..20, extra in 1usize..10) {
            let p = params(side, 1.5, 2, 2, 2);
            let g = Graph::generate(p, seed).unwrap();
            let grid = g.grid();
            let order: Vec<NodeId> = {
                let mut v: Vec<NodeId> = grid.nodes().collect();
                let rot = (seed as usize) % v.len();
                v.rotate_left(rot);
                v
            };
            let small = &order[..take.min(order.len())];
            let large = &order[..(take + extra).min(order.len())];
            let cover = |s: &[NodeId]| -> BTreeSet<NodeId> {
                let mut set = exposed_set(grid, 2, 2, s.iter().map(|&u| (u, g.weak_neighbors(u))));
                set.extend(s.iter().copied());
                set
            };
            prop_assert!(cover(small).is_subset(&cover(large)));
        }

        #[test]
        fn canonical_routing_always_terminates(side in 4u32..12, k in 1u32..4, seed in 0u64..1000, alpha in 0.0f64..6.0) {
            prop_assume!(k <= side);
            let p = params(side, alpha, k, k, k);
            let grid = p.grid();
            let seeds = default_seeds(grid, k).unwrap();
            let n = grid.node_count() as u64;
            let run = run_routing(p, seed, &seeds, default_target(grid), &crate::schemes::UniformRandom, RoutingOptions::new(1, n, seed)).unwrap();
            prop_assert!(run.trace.outcome.is_reached());
            prop_assert!(run.trace.time() <= n);
            run.trace.check_distances(true).map_err(TestCaseError::fail)?;
        }
    }
}
