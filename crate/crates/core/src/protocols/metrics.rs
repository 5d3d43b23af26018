use serde::{Deserialize, Serialize};

use super::kernel::norm;
use super::{ControlLayout, Regime};
use crate::formation::FormationSpec;
use crate::graph::Topology;
use crate::synthesis::LtiModel;

/// Error quantities at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub t: f64,
    /// `‖y_i − y₀ − Ch_i‖` when tracking, `max_j ‖(y_i − y_j) − C(h_i − h_j)‖` otherwise.
    pub formation_error: Vec<f64>,
    pub max_formation_error: f64,
    /// `‖w₀ − x₀‖` in the observer regimes.
    pub leader_observer_error: Option<f64>,
    /// `‖w_i − (x_i − h_i)‖` in the observer regimes, else empty.
    pub local_observer_error: Vec<f64>,
    /// `‖x_i − h_i − x₀ − v_i‖` in the regimes where `v_i` estimates the tracking error, else empty.
    pub observer_error: Vec<f64>,
    pub c_node: Vec<f64>,
}

/// `max_j ‖(y_i − y_j) − C(h_i − h_j)‖` for each follower.
pub fn pairwise_formation_error(model: &LtiModel, nf: usize, x: &[f64], h: &[f64]) -> Vec<f64> {
    let (n, q) = (model.n(), model.q());
    let xbar: Vec<f64> = (0..nf * n).map(|k| x[n + k] - h[k]).collect();
    let ybar: Vec<Vec<f64>> = (0..nf)
        .map(|i| {
            let col = nalgebra::DVector::from_column_slice(&xbar[i * n..(i + 1) * n]);
            (&model.c * col).iter().copied().collect()
        })
        .collect();
    (0..nf)
        .map(|i| {
            (0..nf)
                .map(|j| {
                    let d: Vec<f64> = (0..q).map(|k| ybar[i][k] - ybar[j][k]).collect();
                    norm(&d)
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

pub fn metrics(
    model: &LtiModel,
    topo: &Topology,
    spec: &FormationSpec,
    regime: Regime,
    t: f64,
    x: &[f64],
    ctrl: &[f64],
) -> MetricSample {
    let n = model.n();
    let nf = topo.n_followers();
    let lay = ControlLayout { nf, n };
    let h = spec.offsets(t);
    let x0 = &x[..n];
    let c_out = |v: &[f64]| -> Vec<f64> {
        let col = nalgebra::DVector::from_column_slice(v);
        (&model.c * col).iter().copied().collect()
    };

    let formation_error = if regime.is_tracking() {
        (0..nf)
            .map(|i| {
                let d: Vec<f64> = (0..n).map(|k| x[(i + 1) * n + k] - x0[k] - h[i * n + k]).collect();
                norm(&c_out(&d))
            })
            .collect()
    } else {
        pairwise_formation_error(model, nf, x, &h)
    };
    let max_formation_error = formation_error.iter().copied().fold(0.0, f64::max);

    let (leader_observer_error, local_observer_error) = if regime.uses_local_observers() {
        let w0 = &ctrl[lay.w0()];
        let e0 = norm(&(0..n).map(|k| w0[k] - x0[k]).collect::<Vec<_>>());
        let w = &ctrl[lay.w()];
        let local = (0..nf)
            .map(|i| norm(&(0..n).map(|k| w[i * n + k] - (x[(i + 1) * n + k] - h[i * n + k])).collect::<Vec<_>>()))
            .collect();
        (Some(e0), local)
    } else {
        (None, Vec::new())
    };

    let observer_error = if matches!(regime, Regime::UndirectedTracking | Regime::DirectedTrackingFullAccess) {
        let v = &ctrl[lay.v()];
        (0..nf)
            .map(|i| {
                norm(
                    &(0..n)
                        .map(|k| x[(i + 1) * n + k] - h[i * n + k] - x0[k] - v[i * n + k])
                        .collect::<Vec<_>>(),
                )
            })
            .collect()
    } else {
        Vec::new()
    };

    MetricSample {
        t,
        formation_error,
        max_formation_error,
        leader_observer_error,
        local_observer_error,
        observer_error,
        c_node: ctrl[lay.c_node()].to_vec(),
    }
}
