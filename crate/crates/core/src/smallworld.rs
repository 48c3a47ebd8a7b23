//! Kleinberg small-world ensemble on the torus.
//!
//! Strong ties are implicit: every pair within Manhattan distance `p`. Each node
//! draws `q` weak ties independently, landing on `v ≠ u` with probability
//! `Z·|uv|^-α`. Ties are drawn from a per-node RNG stream so an eagerly
//! generated [`Graph`] and a [`LazyGraph`] revealing ties on activation see the
//! same ties for the same seed.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::node_rng;
use crate::topology::{NodeId, TorusGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Directedness {
    /// Weak ties point from their initiator; only the initiator exposes the endpoint.
    Directed,
    /// Weak ties are symmetric edges.
    Undirected,
}

impl fmt::Display for Directedness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Directedness::Directed => "directed",
            Directedness::Undirected => "undirected",
        })
    }
}

impl FromStr for Directedness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "directed" => Ok(Directedness::Directed),
            "undirected" => Ok(Directedness::Undirected),
            other => Err(Error::Params(format!("unknown directedness `{other}`"))),
        }
    }
}

/// One random-network ensemble together with the contagion threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub side: u32,
    pub alpha: f64,
    /// Strong-tie radius.
    pub p: u32,
    /// Weak ties per node.
    pub q: u32,
    /// Contagion threshold.
    pub k: u32,
    pub directedness: Directedness,
}

impl ModelParams {
    pub fn new(side: u32, alpha: f64, p: u32, q: u32, k: u32, directedness: Directedness) -> Result<Self> {
        let params = Self {
            side,
            alpha,
            p,
            q,
            k,
            directedness,
        };
        params.validate()?;
        Ok(params)
    }

    /// The `p = q = k` ensemble, `G(n,k,α)` when directed.
    pub fn canonical(side: u32, alpha: f64, k: u32, directedness: Directedness) -> Result<Self> {
        Self::new(side, alpha, k, k, k, directedness)
    }

    pub fn validate(&self) -> Result<()> {
        TorusGrid::new(self.side).map_err(|e| Error::Params(e.to_string()))?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Params(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if self.p < 1 {
            return Err(Error::Params("strong-tie radius p must be >= 1".into()));
        }
        if self.k < 1 {
            return Err(Error::Params("threshold k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> TorusGrid {
        TorusGrid::new(self.side).expect("validated side")
    }

    pub fn node_count(&self) -> usize {
        self.grid().node_count()
    }

    /// True for `p = q = k`, where routing from `k` consecutive seeds always succeeds.
    pub fn is_canonical(&self) -> bool {
        self.p == self.q && self.q == self.k
    }
}

/// `Z = 1 / Σ_{v≠u} |uv|^-α`, accumulated shell by shell in increasing distance.
pub fn normalizing_constant(grid: TorusGrid, alpha: f64) -> f64 {
    let total: f64 = (1..=grid.max_distance())
        .map(|d| shell_weight(grid, d, alpha))
        .sum();
    1.0 / total
}

fn shell_weight(grid: TorusGrid, d: u32, alpha: f64) -> f64 {
    let count = grid.count_at_distance(d).expect("shell in range") as f64;
    count * (d as f64).powf(-alpha)
}

/// Exact inverse-CDF sampler of weak-tie endpoints.
///
/// A draw picks a distance shell from the cumulative shell weights, then a node
/// uniformly within the shell's canonical ordering. Each draw consumes exactly
/// one `f64` and one bounded integer from the RNG.
#[derive(Debug, Clone)]
pub struct WeakTieSampler {
    grid: TorusGrid,
    alpha: f64,
    /// All `n − 1` non-zero offsets, grouped by shell.
    offsets: Vec<(i32, i32)>,
    /// `shell_start[d - 1]..shell_start[d]` indexes shell `d` in `offsets`.
    shell_start: Vec<usize>,
    /// `cumulative[d - 1] = Σ_{e ≤ d} count(e)·e^-α`.
    cumulative: Vec<f64>,
    z: f64,
}

impl WeakTieSampler {
    pub fn new(grid: TorusGrid, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Params(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        let max_d = grid.max_distance();
        let mut offsets = Vec::with_capacity(grid.node_count() - 1);
        let mut shell_start = Vec::with_capacity(max_d as usize + 1);
        let mut cumulative = Vec::with_capacity(max_d as usize);
        shell_start.push(0);
        let mut acc = 0.0;
        for d in 1..=max_d {
            offsets.extend(
                grid.shell_offsets(d)?
                    .into_iter()
                    .map(|(r, c)| (r as i32, c as i32)),
            );
            shell_start.push(offsets.len());
            acc += shell_weight(grid, d, alpha);
            cumulative.push(acc);
        }
        Ok(Self {
            grid,
            alpha,
            offsets,
            shell_start,
            cumulative,
            z: 1.0 / acc,
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Normalizing constant `Z`.
    pub fn z(&self) -> f64 {
        self.z
    }

    /// Unnormalized cumulative shell weights; the last entry times `Z` is one.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Probability mass the sampler assigns to shell `d`, read off the CDF increments.
    pub fn shell_probability(&self, d: u32) -> Result<f64> {
        self.grid.count_at_distance(d)?;
        let i = d as usize - 1;
        let prev = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        Ok((self.cumulative[i] - prev) * self.z)
    }

    /// Probability of landing on one particular node at distance `d`.
    pub fn node_probability(&self, d: u32) -> Result<f64> {
        let count = self.grid.count_at_distance(d)? as f64;
        Ok(self.shell_probability(d)? / count)
    }

    /// Draws the endpoint of one weak tie initiated by `u`.
    pub fn sample<R: Rng + ?Sized>(&self, u: NodeId, rng: &mut R) -> NodeId {
        let total = *self.cumulative.last().expect("at least one shell");
        let x = rng.gen::<f64>() * total;
        let shell = self
            .cumulative
            .partition_point(|&c| c <= x)
            .min(self.cumulative.len() - 1);
        let (lo, hi) = (self.shell_start[shell], self.shell_start[shell + 1]);
        let (dr, dc) = self.offsets[rng.gen_range(lo..hi)];
        self.grid.offset(u, dr as i64, dc as i64)
    }

    fn draw_ties(&self, u: NodeId, graph_seed: u64, out: &mut [NodeId]) {
        let mut rng = node_rng(graph_seed, self.grid.index(u));
        for slot in out {
            *slot = self.sample(u, &mut rng);
        }
    }
}

/// Source of weak-tie neighborhoods for the contagion engine.
pub trait TieSource {
    fn params(&self) -> &ModelParams;

    /// Weak neighbors that an infected `u` exposes: its out-tie endpoints, plus
    /// the initiators of ties into `u` in the undirected model. Lazy sources draw
    /// the ties at the first call. May contain repeats.
    fn reveal(&mut self, u: NodeId) -> &[NodeId];
}

/// Compressed adjacency lists indexed by node.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Adjacency {
    start: Vec<usize>,
    targets: Vec<NodeId>,
}

impl Adjacency {
    fn neighbors(&self, idx: usize) -> &[NodeId] {
        &self.targets[self.start[idx]..self.start[idx + 1]]
    }
}

/// A fully materialized network.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    params: ModelParams,
    seed: u64,
    /// `q` out-ties per node, row-major by source.
    out_ties: Vec<NodeId>,
    /// Undirected weak neighborhoods (out ∪ in); `None` for directed graphs.
    undirected: Option<Adjacency>,
}

impl Graph {
    /// Draws every node's `q` weak ties from the stream `(seed, node)`.
    pub fn generate(params: ModelParams, seed: u64) -> Result<Self> {
        let sampler = WeakTieSampler::new(params.grid(), params.alpha)?;
        Self::generate_with(params, seed, &sampler)
    }

    pub fn generate_with(params: ModelParams, seed: u64, sampler: &WeakTieSampler) -> Result<Self> {
        params.validate()?;
        let grid = params.grid();
        if sampler.grid() != grid || sampler.alpha() != params.alpha {
            return Err(Error::Params("sampler built for a different grid or alpha".into()));
        }
        let q = params.q as usize;
        let mut out_ties = vec![grid.node(0, 0); grid.node_count() * q];
        if q > 0 {
            out_ties
                .par_chunks_mut(q)
                .enumerate()
                .for_each(|(idx, slots)| sampler.draw_ties(grid.from_index(idx), seed, slots));
        }
        Self::from_ties(params, seed, out_ties)
    }

    fn from_ties(params: ModelParams, seed: u64, out_ties: Vec<NodeId>) -> Result<Self> {
        let grid = params.grid();
        let q = params.q as usize;
        if out_ties.len() != grid.node_count() * q {
            return Err(Error::Params(format!(
                "expected {} weak ties, found {}",
                grid.node_count() * q,
                out_ties.len()
            )));
        }
        let undirected = match params.directedness {
            Directedness::Directed => None,
            Directedness::Undirected => Some(undirected_adjacency(grid, q, &out_ties)),
        };
        Ok(Self {
            params,
            seed,
            out_ties,
            undirected,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grid(&self) -> TorusGrid {
        self.params.grid()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Endpoints of the ties initiated by `u`, in draw order.
    pub fn out_ties(&self, u: NodeId) -> &[NodeId] {
        let q = self.params.q as usize;
        let i = self.grid().index(u) * q;
        &self.out_ties[i..i + q]
    }

    /// Every weak tie as `(source, endpoint)`, row-major by source.
    pub fn weak_ties(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        let grid = self.grid();
        let q = self.params.q.max(1) as usize;
        self.out_ties
            .iter()
            .enumerate()
            .map(move |(i, &v)| (grid.from_index(i / q), v))
    }

    pub fn weak_tie_count(&self) -> usize {
        self.out_ties.len()
    }

    /// Weak neighbors through which an infected `u` exposes other nodes.
    pub fn weak_neighbors(&self, u: NodeId) -> &[NodeId] {
        match &self.undirected {
            None => self.out_ties(u),
            Some(adj) => adj.neighbors(self.grid().index(u)),
        }
    }

    /// Writes the edge list: a header `L alpha p q k directedness seed`, then one
    /// `src_row src_col dst_row dst_col` line per weak tie.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let p = &self.params;
        writeln!(
            out,
            "{} {} {} {} {} {} {}",
            p.side, p.alpha, p.p, p.q, p.k, p.directedness, self.seed
        )?;
        for (u, v) in self.weak_ties() {
            writeln!(out, "{} {} {} {}", u.row(), u.col(), v.row(), v.col())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Parses the format produced by [`Graph::write_to`].
    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header"))?;
        let header = header?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::parse(1, "header needs `L alpha p q k directedness seed`"));
        }
        let num = |i: usize, name: &str| -> Result<u32> {
            fields[i]
                .parse()
                .map_err(|_| Error::parse(1, format!("bad {name} `{}`", fields[i])))
        };
        let alpha: f64 = fields[1]
            .parse()
            .map_err(|_| Error::parse(1, format!("bad alpha `{}`", fields[1])))?;
        let directedness: Directedness = fields[5].parse().map_err(|e: Error| Error::parse(1, e.to_string()))?;
        let seed: u64 = fields[6]
            .parse()
            .map_err(|_| Error::parse(1, format!("bad seed `{}`", fields[6])))?;
        let params = ModelParams::new(num(0, "L")?, alpha, num(2, "p")?, num(3, "q")?, num(4, "k")?, directedness)
            .map_err(|e| Error::parse(1, e.to_string()))?;
        let grid = params.grid();
        let q = params.q as usize;
        let mut ties = Vec::with_capacity(grid.node_count() * q);
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let coords: Vec<u32> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::parse(lineno, format!("bad coordinate `{t}`"))))
                .collect::<Result<_>>()?;
            let [sr, sc, dr, dc] = coords[..] else {
                return Err(Error::parse(lineno, "expected `src_row src_col dst_row dst_col`"));
            };
            if [sr, sc, dr, dc].iter().any(|&c| c >= params.side) {
                return Err(Error::parse(lineno, "coordinate outside the torus"));
            }
            let src = grid.node(sr as i64, sc as i64);
            let dst = grid.node(dr as i64, dc as i64);
            if src == dst {
                return Err(Error::parse(lineno, "weak tie is a self-loop"));
            }
            if q == 0 || grid.index(src) != ties.len() / q {
                return Err(Error::parse(lineno, format!("tie from {src} out of order")));
            }
            ties.push(dst);
        }
        Self::from_ties(params, seed, ties)
    }
}

fn undirected_adjacency(grid: TorusGrid, q: usize, out_ties: &[NodeId]) -> Adjacency {
    let n = grid.node_count();
    let mut degree = vec![q; n];
    for &v in out_ties {
        degree[grid.index(v)] += 1;
    }
    let mut start = Vec::with_capacity(n + 1);
    start.push(0);
    for d in &degree {
        start.push(start.last().unwrap() + d);
    }
    let mut fill = start[..n].to_vec();
    let mut targets = vec![grid.node(0, 0); *start.last().unwrap()];
    for (i, &v) in out_ties.iter().enumerate() {
        let u = i / q;
        targets[fill[u]] = v;
        fill[u] += 1;
    }
    for (i, &v) in out_ties.iter().enumerate() {
        let vi = grid.index(v);
        targets[fill[vi]] = grid.from_index(i / q);
        fill[vi] += 1;
    }
    Adjacency { start, targets }
}

impl TieSource for &Graph {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn reveal(&mut self, u: NodeId) -> &[NodeId] {
        self.weak_neighbors(u)
    }
}

/// Weak ties drawn on demand, the first time a node is activated.
///
/// Only the directed model can be revealed lazily: in the undirected model a
/// node's weak neighborhood includes ties initiated by nodes not yet revealed.
#[derive(Debug, Clone)]
pub struct LazyGraph {
    params: ModelParams,
    seed: u64,
    sampler: Arc<WeakTieSampler>,
    ties: Vec<NodeId>,
    revealed: Vec<bool>,
    revealed_count: usize,
}

impl LazyGraph {
    pub fn new(params: ModelParams, seed: u64) -> Result<Self> {
        let sampler = Arc::new(WeakTieSampler::new(params.grid(), params.alpha)?);
        Self::with_sampler(params, seed, sampler)
    }

    /// Shares a prebuilt sampler between many handles of the same ensemble.
    pub fn with_sampler(params: ModelParams, seed: u64, sampler: Arc<WeakTieSampler>) -> Result<Self> {
        params.validate()?;
        if params.directedness != Directedness::Directed {
            return Err(Error::Params(
                "lazy revelation needs directed weak ties; generate an eager graph instead".into(),
            ));
        }
        let grid = params.grid();
        if sampler.grid() != grid || sampler.alpha() != params.alpha {
            return Err(Error::Params("sampler built for a different grid or alpha".into()));
        }
        let n = grid.node_count();
        Ok(Self {
            params,
            seed,
            sampler,
            ties: vec![grid.node(0, 0); n * params.q as usize],
            revealed: vec![false; n],
            revealed_count: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn is_revealed(&self, u: NodeId) -> bool {
        self.revealed[self.params.grid().index(u)]
    }

    pub fn revealed_count(&self) -> usize {
        self.revealed_count
    }

    /// Draws `u`'s `q` out-ties on the first call and returns the cached list afterwards.
    pub fn reveal_out_ties(&mut self, u: NodeId) -> &[NodeId] {
        let idx = self.params.grid().index(u);
        let q = self.params.q as usize;
        let slots = &mut self.ties[idx * q..(idx + 1) * q];
        if !self.revealed[idx] {
            self.sampler.draw_ties(u, self.seed, slots);
            self.revealed[idx] = true;
            self.revealed_count += 1;
        }
        slots
    }
}

impl TieSource for LazyGraph {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn reveal(&mut self, u: NodeId) -> &[NodeId] {
        self.reveal_out_ties(u)
    }
}
