use serde::{Deserialize, Serialize};

/// The controller family being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Undirected follower graph, leader-rooted, edge and pin weights.
    UndirectedTracking,
    /// Undirected connected graph, no leader, edge weights only.
    UndirectedStabilization,
    /// Directed graph, every follower pinned to the leader.
    DirectedTrackingFullAccess,
    /// Strongly connected leaderless digraph, relative outputs.
    DirectedStabilization,
    /// Leader-rooted digraph, local and distributed observers.
    DirectedTrackingObserver,
    /// As the observer regime, with a bounded leader input.
    DirectedTrackingBoundedInput,
    /// Directed stabilisation with relative state measurements.
    DirectedStabilizationState,
    /// Observer tracking with relative state measurements.
    DirectedTrackingObserverState,
}

impl Regime {
    pub const ALL: [Regime; 8] = [
        Regime::UndirectedTracking,
        Regime::UndirectedStabilization,
        Regime::DirectedTrackingFullAccess,
        Regime::DirectedStabilization,
        Regime::DirectedTrackingObserver,
        Regime::DirectedTrackingBoundedInput,
        Regime::DirectedStabilizationState,
        Regime::DirectedTrackingObserverState,
    ];

    /// Leader-follower regimes; the rest are leaderless.
    pub fn is_tracking(self) -> bool {
        !matches!(
            self,
            Regime::UndirectedStabilization
                | Regime::DirectedStabilization
                | Regime::DirectedStabilizationState
        )
    }

    /// Relative-state variants synthesised from `(A, B)` alone.
    pub fn uses_state_gains(self) -> bool {
        matches!(
            self,
            Regime::DirectedStabilizationState | Regime::DirectedTrackingObserverState
        )
    }

    /// Regimes with per-edge adaptive weights `c_ij`.
    pub fn uses_edge_weights(self) -> bool {
        matches!(self, Regime::UndirectedTracking | Regime::UndirectedStabilization)
    }

    /// Regimes that run local observers `w_i` and the leader observer `w_0`.
    pub fn uses_local_observers(self) -> bool {
        matches!(
            self,
            Regime::DirectedTrackingObserver
                | Regime::DirectedTrackingBoundedInput
                | Regime::DirectedTrackingObserverState
        )
    }

    pub fn allows_leader_input(self) -> bool {
        self == Regime::DirectedTrackingBoundedInput
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::UndirectedTracking => "undirected_tracking",
            Regime::UndirectedStabilization => "undirected_stabilization",
            Regime::DirectedTrackingFullAccess => "directed_tracking_full_access",
            Regime::DirectedStabilization => "directed_stabilization",
            Regime::DirectedTrackingObserver => "directed_tracking_observer",
            Regime::DirectedTrackingBoundedInput => "directed_tracking_bounded_input",
            Regime::DirectedStabilizationState => "directed_stabilization_state",
            Regime::DirectedTrackingObserverState => "directed_tracking_observer_state",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Protocol tuning knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeOptions {
    /// Replace the discontinuous unit-vector map with its saturated form.
    pub smooth_z: bool,
    /// Radius of the linear zone of the smooth map.
    pub delta: f64,
    /// Leakage `ε_i` pulling `c_i` towards 1; empty means zero for all.
    pub leak_eps: Vec<f64>,
    /// Edge gains `k_ij` (symmetric); `None` means 1 on every edge.
    pub k_edge: Option<Vec<Vec<f64>>>,
    /// Pin gains `k_i`; `None` means 1.
    pub k_pin: Option<Vec<f64>>,
}

impl Default for RegimeOptions {
    fn default() -> Self {
        Self {
            smooth_z: false,
            delta: 1e-3,
            leak_eps: Vec::new(),
            k_edge: None,
            k_pin: None,
        }
    }
}
