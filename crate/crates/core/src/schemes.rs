//! Decentralized routing schemes.
//!
//! A scheme sees only a [`DecentralizedView`] and an RNG stream and returns the
//! nodes to activate in the next step. The engine requires exactly
//! `min(m, |ℰ(S)|)` distinct exposed nodes.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contagion::DecentralizedView;
use crate::error::{Error, Result};
use crate::topology::NodeId;

/// `m` value meaning "no limit on activations per step".
pub const UNBOUNDED: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Deterministic,
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeDescriptor {
    pub name: String,
    pub kind: SchemeKind,
    pub params: BTreeMap<String, String>,
}

impl SchemeDescriptor {
    pub fn deterministic(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: SchemeKind::Deterministic,
            params: BTreeMap::new(),
        }
    }

    pub fn randomized(name: &str, rng_use: &str) -> Self {
        let mut params = BTreeMap::new();
        params.insert("rng".to_string(), rng_use.to_string());
        Self {
            name: name.to_string(),
            kind: SchemeKind::Randomized,
            params,
        }
    }
}

impl fmt::Display for SchemeDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

pub trait RoutingScheme: Send + Sync {
    fn descriptor(&self) -> SchemeDescriptor;

    /// Picks up to `m` exposed nodes. Must depend on nothing but the view and `rng`.
    fn select(&self, view: &DecentralizedView<'_>, m: usize, rng: &mut ChaCha8Rng) -> Result<Vec<NodeId>>;
}

/// The `m` exposed nodes closest to the target; ties go to the lowest row-major index.
#[derive(Debug, Clone, Copy, Default)]
pub struct Greedy;

impl RoutingScheme for Greedy {
    fn descriptor(&self) -> SchemeDescriptor {
        SchemeDescriptor::deterministic("greedy")
    }

    fn select(&self, view: &DecentralizedView<'_>, m: usize, _rng: &mut ChaCha8Rng) -> Result<Vec<NodeId>> {
        let frontier = view.frontier();
        if frontier.is_empty() {
            return Err(Error::NoCandidate { scheme: "greedy".into() });
        }
        Ok(frontier.by_distance().take(m).collect())
    }
}

/// Uniform sample without replacement from the frontier.
///
/// Draws `m` ranks with `rand::seq::index::sample` over the frontier in
/// row-major order; consumes nothing when the whole frontier is taken.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformRandom;

impl RoutingScheme for UniformRandom {
    fn descriptor(&self) -> SchemeDescriptor {
        SchemeDescriptor::randomized("random", "index::sample(|frontier|, m) per step")
    }

    fn select(&self, view: &DecentralizedView<'_>, m: usize, rng: &mut ChaCha8Rng) -> Result<Vec<NodeId>> {
        let frontier = view.frontier();
        let len = frontier.len();
        if len == 0 {
            return Err(Error::NoCandidate { scheme: "random".into() });
        }
        if m >= len {
            return Ok(frontier.in_index_order());
        }
        Ok(index::sample(rng, len, m)
            .into_iter()
            .map(|j| frontier.nth_in_index_order(j).expect("rank in range"))
            .collect())
    }
}

/// The whole frontier, row-major; with unbounded `m` this is complex diffusion.
#[derive(Debug, Clone, Copy, Default)]
pub struct ActivateAll;

impl RoutingScheme for ActivateAll {
    fn descriptor(&self) -> SchemeDescriptor {
        SchemeDescriptor::deterministic("activate-all")
    }

    fn select(&self, view: &DecentralizedView<'_>, m: usize, _rng: &mut ChaCha8Rng) -> Result<Vec<NodeId>> {
        let mut all = view.frontier().in_index_order();
        all.truncate(m);
        Ok(all)
    }
}

/// Names accepted by [`scheme_by_name`].
pub const SCHEME_NAMES: [&str; 3] = ["greedy", "random", "activate-all"];

/// Resolves a scheme by name. None of the built-in schemes take parameters.
pub fn scheme_by_name(name: &str, params: &BTreeMap<String, String>) -> Result<Box<dyn RoutingScheme>> {
    if let Some(key) = params.keys().next() {
        return Err(Error::config("scheme", format!("scheme `{name}` takes no parameter `{key}`")));
    }
    match name {
        "greedy" => Ok(Box::new(Greedy)),
        "random" => Ok(Box::new(UniformRandom)),
        "activate-all" => Ok(Box::new(ActivateAll)),
        other => Err(Error::config(
            "scheme",
            format!("unknown scheme `{other}` (expected one of {})", SCHEME_NAMES.join(", ")),
        )),
    }
}
