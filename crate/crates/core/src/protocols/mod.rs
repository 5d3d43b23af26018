//! Distributed protocol right-hand sides for every regime.
//!
//! Each follower's update is computed from a [`NodeView`](access) that
//! exposes only per-node reads, so locality can be audited by swapping in
//! a recording log. Network-level Laplacian products appear only in tests.

mod access;
mod kernel;
mod leader;
mod metrics;
mod regime;
mod rhs;

use thiserror::Error;

pub use access::{Access, AccessLog, Item, NoLog, RecordingLog};
pub use kernel::MAX_DIM;
pub use leader::{ExpSinChannel, LeaderInput};
pub use metrics::{metrics, pairwise_formation_error, MetricSample};
pub use regime::{Regime, RegimeOptions};
pub use rhs::{ControlLayout, Protocol, StateLayout, Workspace};

use crate::graph::{Directedness, Topology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("topology does not satisfy {check} required by {regime}")]
    Topology { regime: Regime, check: String },
    #[error("regime {0} requires a zero leader input")]
    LeaderInputNotAllowed(Regime),
    #[error("smooth z needs δ > 0, got {0}")]
    BadDelta(f64),
    #[error("gain set lacks {0}")]
    MissingGain(&'static str),
    #[error("β = {beta} is below the leader input bound ε = {eps}")]
    BetaTooSmall { beta: f64, eps: f64 },
    #[error("bad option: {0}")]
    BadOption(String),
    #[error("c_{follower}(0) = {value} but the bounded-input protocol needs c_i(0) ≥ 1")]
    InitialWeight { follower: usize, value: f64 },
}

/// `x/‖x‖`, or `0` at the origin.
pub fn z_hard(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    z_into(x, false, 1.0, &mut out);
    out
}

/// `x/‖x‖` outside the `δ`-ball and `x/δ` inside it.
pub fn z_smooth(x: &[f64], delta: f64) -> Result<Vec<f64>, ProtocolError> {
    if !(delta > 0.0) {
        return Err(ProtocolError::BadDelta(delta));
    }
    let mut out = vec![0.0; x.len()];
    z_into(x, true, delta, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn z_into(x: &[f64], smooth: bool, delta: f64, out: &mut [f64]) {
    let nrm = kernel::norm(x);
    let scale = if smooth {
        1.0 / nrm.max(delta)
    } else if nrm > 0.0 {
        1.0 / nrm
    } else {
        0.0
    };
    for (o, v) in out.iter_mut().zip(x) {
        *o = v * scale;
    }
}

/// Graph hypotheses a regime relies on, each with its verdict.
pub fn assumption_report(regime: Regime, topo: &Topology) -> Vec<(String, bool)> {
    let leaderless = topo.pinning().iter().all(|&d| d == 0.0);
    let undirected = topo.directedness() == Directedness::Undirected && topo.is_symmetric();
    let mut out = Vec::new();
    let mut push = |name: &str, ok: bool| out.push((name.to_string(), ok));
    match regime {
        Regime::UndirectedTracking => {
            push("undirected follower graph", undirected);
            push("leader-rooted spanning tree", topo.has_spanning_tree_from_leader());
        }
        Regime::UndirectedStabilization => {
            push("undirected graph", undirected);
            push("connected graph", topo.has_spanning_tree());
            push("no leader pinning", leaderless);
        }
        Regime::DirectedTrackingFullAccess => {
            push("leader-rooted spanning tree", topo.has_spanning_tree_from_leader());
            push("every follower pinned", topo.pinning().iter().all(|&d| d > 0.0));
        }
        Regime::DirectedStabilization | Regime::DirectedStabilizationState => {
            push("strongly connected graph", topo.is_strongly_connected());
            push("no leader pinning", leaderless);
        }
        Regime::DirectedTrackingObserver
        | Regime::DirectedTrackingBoundedInput
        | Regime::DirectedTrackingObserverState => {
            push("leader-rooted spanning tree", topo.has_spanning_tree_from_leader());
        }
    }
    out
}
