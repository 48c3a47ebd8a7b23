//! Contagion on Kleinberg small-world tori.
//!
//! The crate simulates three propagation regimes on a two-dimensional torus with
//! strong ties (all pairs within Manhattan distance `p`) and `q` random weak ties
//! per node whose endpoints are drawn with probability proportional to `d^-α`:
//!
//! * simple routing (`k = 1`), one activation per step,
//! * complex diffusion, where every exposed node activates at once,
//! * complex routing (`k ≥ 2`), where a decentralized scheme picks up to `m`
//!   exposed nodes per step while only seeing ties of already activated nodes.
//!
//! [`harness`] runs seeded parameter sweeps, writes CSV and fits log-log
//! scaling exponents.

pub mod cli;
pub mod contagion;
pub mod error;
pub mod harness;
pub mod rng;
pub mod schemes;
pub mod smallworld;
pub mod stats;
pub mod topology;

pub use contagion::{
    default_seeds, default_target, run_diffusion, run_routing, DecentralizedView, Label, Outcome,
    RoutingRun, Simulation, Trace, TraceRecord, ViewSnapshot,
};
pub use error::{Error, Result};
pub use schemes::{scheme_by_name, ActivateAll, Greedy, RoutingScheme, SchemeDescriptor, UniformRandom};
pub use smallworld::{
    normalizing_constant, Directedness, Graph, LazyGraph, ModelParams, TieSource, WeakTieSampler,
};
pub use topology::{NodeId, TorusGrid};
