//! Seeded parameter sweeps, CSV output and log-log exponent fits.
//!
//! # Config grammar
//!
//! A sweep config is a flat text file of `key = value` lines. Blank lines and
//! lines starting with `#` are ignored; list-valued keys take comma-separated
//! values. Keys:
//!
//! | key            | value                                                   | default            |
//! |----------------|---------------------------------------------------------|--------------------|
//! | `mode`         | `simple-routing`, `complex-routing`, `complex-diffusion` | required           |
//! | `L`            | list of torus sides                                     | required           |
//! | `n`            | list of node counts (perfect squares), instead of `L`   |                    |
//! | `alpha`        | list of exponents `α ≥ 0`                               | required           |
//! | `k`            | threshold                                               | 1 for simple, else required |
//! | `p`, `q`       | strong radius, weak ties per node                       | `k`                |
//! | `m`            | activations per step, integer or `inf` (routing only)  | 1                  |
//! | `scheme`       | `greedy`, `random` (routing only)                       | `greedy`           |
//! | `directedness` | `directed` or `undirected`                              | directed for routing, undirected for diffusion |
//! | `trials`       | trials per cell, ≥ 1                                    | required           |
//! | `seed`         | master seed                                             | 0                  |
//! | `budget`       | step budget per trial                                   | `4n`               |
//! | `out`          | output CSV path                                         | stdout             |
//!
//! Trial `t` of cell `c` draws its graph and scheme streams from
//! `(seed, c, t)`, where cells are ordered by `(α, L)`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contagion::{default_budget, default_seeds, default_target, route, run_diffusion, RoutingOptions};
use crate::error::{Error, Result};
use crate::rng::TrialSeeds;
use crate::schemes::{scheme_by_name, UNBOUNDED};
use crate::smallworld::{Directedness, Graph, LazyGraph, ModelParams, WeakTieSampler};
use crate::stats::{least_squares, Summary};
use crate::topology::TorusGrid;

/// Environment variable holding the worker-pool width.
pub const WORKERS_ENV: &str = "SWC_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SimpleRouting,
    ComplexRouting,
    ComplexDiffusion,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::SimpleRouting => "simple-routing",
            Mode::ComplexRouting => "complex-routing",
            Mode::ComplexDiffusion => "complex-diffusion",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple-routing" => Ok(Mode::SimpleRouting),
            "complex-routing" => Ok(Mode::ComplexRouting),
            "complex-diffusion" => Ok(Mode::ComplexDiffusion),
            other => Err(Error::config("mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// Formats `m`, writing `inf` for an unbounded step.
pub fn format_m(m: usize) -> String {
    if m == UNBOUNDED {
        "inf".to_string()
    } else {
        m.to_string()
    }
}

pub fn parse_m(s: &str) -> Result<usize> {
    if s == "inf" {
        return Ok(UNBOUNDED);
    }
    match s.parse::<usize>() {
        Ok(m) if m >= 1 => Ok(m),
        _ => Err(Error::config("m", format!("expected a positive integer or `inf`, got `{s}`"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub mode: Mode,
    pub sides: Vec<u32>,
    pub alphas: Vec<f64>,
    pub k: u32,
    pub p: u32,
    pub q: u32,
    /// `None` for diffusion.
    pub m: Option<usize>,
    pub scheme: String,
    pub directedness: Directedness,
    pub trials: usize,
    pub seed: u64,
    pub budget: Option<u64>,
    pub out: Option<PathBuf>,
}

impl SweepConfig {
    /// A routing or diffusion sweep with the mode's defaults filled in.
    pub fn new(mode: Mode, sides: Vec<u32>, alphas: Vec<f64>, k: u32, trials: usize, seed: u64) -> Self {
        let diffusion = mode == Mode::ComplexDiffusion;
        Self {
            mode,
            sides,
            alphas,
            k,
            p: k,
            q: k,
            m: (!diffusion).then_some(1),
            scheme: if diffusion { "activate-all" } else { "greedy" }.to_string(),
            directedness: if diffusion {
                Directedness::Undirected
            } else {
                Directedness::Directed
            },
            trials,
            seed,
            budget: None,
            out: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
                return Err(Error::config(&key, "given more than once"));
            }
        }
        const KNOWN: [&str; 15] = [
            "mode", "L", "n", "alpha", "k", "p", "q", "m", "scheme", "directedness", "trials", "seed", "budget",
            "out", "workers",
        ];
        if let Some(key) = entries.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(Error::config(key, "unknown key"));
        }
        if entries.contains_key("workers") {
            return Err(Error::config("workers", format!("set the worker count with {WORKERS_ENV}")));
        }
        let get = |key: &str| entries.get(key).map(|(_, v)| v.as_str());
        fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
        }
        fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
            let items: Vec<T> = value
                .split(',')
                .map(|s| scalar(key, s.trim()))
                .collect::<Result<_>>()?;
            if items.is_empty() {
                return Err(Error::config(key, "empty list"));
            }
            Ok(items)
        }

        let mode: Mode = get("mode").ok_or_else(|| Error::config("mode", "missing"))?.parse()?;
        let sides: Vec<u32> = match (get("L"), get("n")) {
            (Some(_), Some(_)) => return Err(Error::config("n", "give either `L` or `n`, not both")),
            (Some(v), None) => list("L", v)?,
            (None, Some(v)) => list::<u64>("n", v)?
                .into_iter()
                .map(|n| {
                    TorusGrid::from_node_count(n)
                        .map(|g| g.side())
                        .map_err(|e| Error::config("n", e.to_string()))
                })
                .collect::<Result<_>>()?,
            (None, None) => return Err(Error::config("L", "missing")),
        };
        let alphas: Vec<f64> = list("alpha", get("alpha").ok_or_else(|| Error::config("alpha", "missing"))?)?;
        let k: u32 = match (get("k"), mode) {
            (Some(v), _) => scalar("k", v)?,
            (None, Mode::SimpleRouting) => 1,
            (None, _) => return Err(Error::config("k", "missing")),
        };
        let trials: usize = scalar("trials", get("trials").ok_or_else(|| Error::config("trials", "missing"))?)?;
        let mut config = SweepConfig::new(mode, sides, alphas, k, trials, 0);
        if let Some(v) = get("p") {
            config.p = scalar("p", v)?;
        }
        if let Some(v) = get("q") {
            config.q = scalar("q", v)?;
        }
        if let Some(v) = get("m") {
            if mode == Mode::ComplexDiffusion {
                return Err(Error::config("m", "diffusion activates every exposed node; `m` is not allowed"));
            }
            config.m = Some(parse_m(v)?);
        }
        if let Some(v) = get("scheme") {
            if mode == Mode::ComplexDiffusion {
                return Err(Error::config("scheme", "diffusion takes no routing scheme"));
            }
            config.scheme = v.to_string();
        }
        if let Some(v) = get("directedness") {
            config.directedness = v.parse().map_err(|e: Error| Error::config("directedness", e.to_string()))?;
        }
        if let Some(v) = get("seed") {
            config.seed = scalar("seed", v)?;
        }
        if let Some(v) = get("budget") {
            config.budget = Some(scalar("budget", v)?);
        }
        if let Some(v) = get("out") {
            config.out = Some(PathBuf::from(v));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.sides.is_empty() {
            return Err(Error::config("L", "empty list"));
        }
        for &side in &self.sides {
            TorusGrid::new(side).map_err(|e| Error::config("L", e.to_string()))?;
            if self.k > side {
                return Err(Error::config("k", format!("{} consecutive seeds do not fit on side {side}", self.k)));
            }
        }
        if self.alphas.is_empty() {
            return Err(Error::config("alpha", "empty list"));
        }
        for &alpha in &self.alphas {
            if !(alpha.is_finite() && alpha >= 0.0) {
                return Err(Error::config("alpha", format!("must be finite and >= 0, got {alpha}")));
            }
        }
        if self.p < 1 {
            return Err(Error::config("p", "must be at least 1"));
        }
        match self.mode {
            Mode::SimpleRouting if self.k != 1 => {
                return Err(Error::config("k", "simple routing has threshold 1"));
            }
            Mode::ComplexRouting | Mode::ComplexDiffusion if self.k < 2 => {
                return Err(Error::config("k", "complex contagion needs k >= 2"));
            }
            _ => {}
        }
        match (self.mode, self.m) {
            (Mode::ComplexDiffusion, Some(_)) => {
                return Err(Error::config("m", "diffusion activates every exposed node; `m` is not allowed"));
            }
            (Mode::SimpleRouting | Mode::ComplexRouting, None) => {
                return Err(Error::config("m", "routing needs m"));
            }
            (_, Some(0)) => return Err(Error::config("m", "must be at least 1")),
            _ => {}
        }
        if self.mode != Mode::ComplexDiffusion {
            scheme_by_name(&self.scheme, &BTreeMap::new())?;
        }
        if self.budget == Some(0) {
            return Err(Error::config("budget", "must be at least 1"));
        }
        Ok(())
    }

    /// Cells in output order: by `α`, then `L`.
    pub fn cells(&self) -> Vec<(f64, u32)> {
        let mut cells: Vec<(f64, u32)> = self
            .alphas
            .iter()
            .flat_map(|&a| self.sides.iter().map(move |&l| (a, l)))
            .collect();
        cells.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        cells.dedup();
        cells
    }

    pub fn model(&self, side: u32, alpha: f64) -> Result<ModelParams> {
        ModelParams::new(side, alpha, self.p, self.q, self.k, self.directedness)
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialResult {
    /// Routing or diffusion time; the budget (or stall step) when truncated.
    pub time: u64,
    pub truncated: bool,
}

/// Aggregated trials of one `(α, L)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub mode: Mode,
    pub alpha: f64,
    pub side: u32,
    pub k: u32,
    pub m: Option<usize>,
    pub scheme: String,
    pub times: Vec<u64>,
    pub summary: Summary,
    pub truncated: usize,
}

impl CellResult {
    pub fn n(&self) -> u64 {
        self.side as u64 * self.side as u64
    }

    pub fn truncation_rate(&self) -> f64 {
        self.truncated as f64 / self.times.len() as f64
    }

    pub fn to_row(&self) -> CsvRow {
        CsvRow {
            mode: self.mode,
            alpha: self.alpha,
            side: self.side,
            n: self.n(),
            k: self.k,
            m: format_m(self.m.unwrap_or(UNBOUNDED)),
            scheme: self.scheme.clone(),
            trials: self.times.len(),
            mean: self.summary.mean,
            median: self.summary.median,
            stderr: self.summary.stderr,
            truncated: self.truncated,
        }
    }
}

/// Runs every trial of one cell. `cell` selects the RNG streams.
pub fn run_cell(config: &SweepConfig, cell: u64, alpha: f64, side: u32) -> Result<CellResult> {
    let params = config.model(side, alpha)?;
    let grid = params.grid();
    let sampler = Arc::new(WeakTieSampler::new(grid, alpha)?);
    let seeds = default_seeds(grid, config.k)?;
    let target = default_target(grid);
    let budget = config.budget.unwrap_or_else(|| default_budget(grid));
    let scheme = scheme_by_name(&config.scheme, &BTreeMap::new())?;

    let trial = |t: usize| -> Result<TrialResult> {
        let s = TrialSeeds::derive(config.seed, cell, t as u64);
        let trace = match config.m {
            None => {
                let graph = Graph::generate_with(params, s.graph, &sampler)?;
                run_diffusion(&graph, &seeds, None, budget)?
            }
            Some(m) => {
                let opts = RoutingOptions::new(m, budget, s.scheme);
                match params.directedness {
                    Directedness::Directed => {
                        let lazy = LazyGraph::with_sampler(params, s.graph, Arc::clone(&sampler))?;
                        route(lazy, &seeds, target, scheme.as_ref(), opts)?.trace
                    }
                    Directedness::Undirected => {
                        let graph = Graph::generate_with(params, s.graph, &sampler)?;
                        route(&graph, &seeds, target, scheme.as_ref(), opts)?.trace
                    }
                }
            }
        };
        Ok(TrialResult {
            time: trace.time(),
            truncated: trace.is_truncated(),
        })
    };
    let results: Vec<TrialResult> = (0..config.trials)
        .into_par_iter()
        .map(trial)
        .collect::<Result<_>>()?;
    let times: Vec<u64> = results.iter().map(|r| r.time).collect();
    let as_f64: Vec<f64> = times.iter().map(|&t| t as f64).collect();
    Ok(CellResult {
        mode: config.mode,
        alpha,
        side,
        k: config.k,
        m: config.m,
        scheme: config.scheme.clone(),
        summary: Summary::of(&as_f64)?,
        truncated: results.iter().filter(|r| r.truncated).count(),
        times,
    })
}

fn worker_pool() -> Result<Option<rayon::ThreadPool>> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(None);
    };
    let width: usize = raw
        .parse()
        .ok()
        .filter(|&w| w >= 1)
        .ok_or_else(|| Error::config(WORKERS_ENV, format!("expected a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(width)
        .build()
        .map(Some)
        .map_err(|e| Error::config(WORKERS_ENV, e.to_string()))
}

/// Runs all cells of a sweep, in output order.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<CellResult>> {
    config.validate()?;
    let body = || {
        config
            .cells()
            .into_iter()
            .enumerate()
            .map(|(c, (alpha, side))| run_cell(config, c as u64, alpha, side))
            .collect::<Result<Vec<_>>>()
    };
    match worker_pool()? {
        Some(pool) => pool.install(body),
        None => body(),
    }
}

/// One line of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub mode: Mode,
    pub alpha: f64,
    #[serde(rename = "L")]
    pub side: u32,
    pub n: u64,
    pub k: u32,
    pub m: String,
    pub scheme: String,
    pub trials: usize,
    pub mean: f64,
    pub median: f64,
    pub stderr: f64,
    pub truncated: usize,
}

/// Writes `mode,alpha,L,n,k,m,scheme,trials,mean,median,stderr,truncated`.
pub fn write_csv<W: Write>(cells: &[CellResult], out: W) -> Result<()> {
    let mut rows: Vec<CsvRow> = cells.iter().map(CellResult::to_row).collect();
    rows.sort_by(|a, b| {
        a.mode
            .cmp(&b.mode)
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.side.cmp(&b.side))
    });
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Least-squares fit of `ln T = β ln n + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub beta: f64,
    pub intercept: f64,
    pub residual_norm: f64,
    pub points: usize,
    pub n_min: f64,
    pub n_max: f64,
}

/// Fits `(n, mean time)` points; needs three distinct positive `n` and positive times.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<ExponentFit> {
    if points.iter().any(|&(n, t)| !(n > 0.0 && t > 0.0 && n.is_finite() && t.is_finite())) {
        return Err(Error::Domain("exponent fit needs positive finite n and times".into()));
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Domain(format!(
            "exponent fit needs at least 3 distinct n values, got {}",
            distinct.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let line = least_squares(&xs, &ys)?;
    Ok(ExponentFit {
        beta: line.slope,
        intercept: line.intercept,
        residual_norm: line.residual_norm,
        points: points.len(),
        n_min: distinct[0],
        n_max: *distinct.last().unwrap(),
    })
}

/// One exponent per `(mode, α, k, m, scheme)` group of a sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub mode: Mode,
    pub alpha: f64,
    pub k: u32,
    pub m: String,
    pub scheme: String,
    pub points: usize,
    pub n_min: f64,
    pub n_max: f64,
    pub beta: f64,
    pub intercept: f64,
    pub residual: f64,
}

/// Fits every group; groups that cannot be fitted are returned with the reason.
pub fn fit_rows(rows: &[CsvRow]) -> (Vec<FitRow>, Vec<String>) {
    // (mode, α bits, k, m, scheme)
    type Key = (Mode, u64, u32, String, String);
    let mut groups: Vec<(Key, Vec<(f64, f64)>)> = Vec::new();
    for r in rows {
        let key = (r.mode, r.alpha.to_bits(), r.k, r.m.clone(), r.scheme.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, pts)) => pts.push((r.n as f64, r.mean)),
            None => groups.push((key, vec![(r.n as f64, r.mean)])),
        }
    }
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for ((mode, alpha_bits, k, m, scheme), pts) in groups {
        let alpha = f64::from_bits(alpha_bits);
        match fit_exponent(&pts) {
            Ok(fit) => fits.push(FitRow {
                mode,
                alpha,
                k,
                m,
                scheme,
                points: fit.points,
                n_min: fit.n_min,
                n_max: fit.n_max,
                beta: fit.beta,
                intercept: fit.intercept,
                residual: fit.residual_norm,
            }),
            Err(e) => skipped.push(format!("{mode} alpha={alpha} k={k} m={m} scheme={scheme}: {e}")),
        }
    }
    (fits, skipped)
}

pub fn write_fits<W: Write>(fits: &[FitRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for f in fits {
        writer.serialize(f)?;
    }
    writer.flush()?;
    Ok(())
}
