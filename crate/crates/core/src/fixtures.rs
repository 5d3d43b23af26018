//! The two worked examples: plant matrices, printed gains, formation
//! schedules and leader inputs. Topologies are declared here since the
//! original communication graphs are only pictured.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::formation::{make_piecewise_spec, Assembly, Component, FormationSpec, HarmonicFamily, Piece};
use crate::graph::{Directedness, Topology};
use crate::linalg::{matrix_from_rows, DenseMatrix};
use crate::protocols::{ExpSinChannel, LeaderInput, Regime, RegimeOptions};
use crate::sim::{InitSpec, Scenario, SimConfig};
use crate::synthesis::{s_lmi_value, synthesize, K2Design, LtiModel};
use crate::vehicle::VehicleParams;

fn rows(r: &[&[f64]]) -> DenseMatrix {
    let v: Vec<Vec<f64>> = r.iter().map(|x| x.to_vec()).collect();
    matrix_from_rows(&v).expect("fixture rows are rectangular")
}

pub const EXAMPLE1_FOLLOWERS: usize = 6;
pub const EXAMPLE1_BETA: f64 = 4.0;
pub const EXAMPLE1_SWITCHES: [f64; 3] = [50.0, 100.0, 150.0];
pub const EXAMPLE1_HORIZON: f64 = 200.0;

/// Three decoupled oscillators, five measured coordinates.
pub fn example1_model() -> LtiModel {
    let mut a = DenseMatrix::zeros(6, 6);
    let mut b = DenseMatrix::zeros(6, 3);
    for k in 0..3 {
        a[(k, k + 3)] = 1.0;
        a[(k + 3, k)] = -1.0;
        b[(k + 3, k)] = 1.0;
    }
    let mut c = DenseMatrix::zeros(5, 6);
    for k in 0..5 {
        c[(k, k)] = 1.0;
    }
    LtiModel::new(a, b, c).expect("example 1 dimensions")
}

pub fn example1_k1() -> DenseMatrix {
    let mut k1 = DenseMatrix::zeros(3, 6);
    for k in 0..3 {
        k1[(k, k)] = -3.0;
    }
    k1
}

/// Target spectrum for `A + BK₂`.
pub fn example1_poles() -> Vec<Complex64> {
    [(-1.0, 0.0), (-5.0, 0.0), (-10.0, 10.0), (-10.0, -10.0), (-20.0, 0.0), (-50.0, 0.0)]
        .iter()
        .map(|&(re, im)| Complex64::new(re, im))
        .collect()
}

pub fn example1_k2_printed() -> DenseMatrix {
    rows(&[
        &[-111.3, 21.8, 10.7, -13.8, -11.3, -11.0],
        &[56.3, -159.0, -10.9, -1.8, -25.5, -2.5],
        &[107.6, -78.1, -71.1, 29.2, -32.4, -56.7],
    ])
}

pub fn example1_q_printed() -> DenseMatrix {
    rows(&[
        &[7.314, -0.000, -0.000, -0.000, 0.000, 0.000],
        &[-0.000, 7.314, -0.000, -0.000, 0.000, -0.000],
        &[-0.000, -0.000, 7.412, -0.000, 0.000, -0.487],
        &[-0.000, -0.000, -0.000, 7.314, -0.000, -0.000],
        &[0.000, 0.000, 0.000, -0.000, 7.314, -0.000],
        &[0.000, -0.000, -0.487, -0.000, -0.000, 7.412],
    ])
}

pub fn example1_f_printed() -> DenseMatrix {
    rows(&[
        &[-0.1367, -0.0000, -0.0000, -0.0000, 0.0000],
        &[-0.0000, -0.1367, -0.0000, -0.0000, 0.0000],
        &[-0.0000, -0.0000, -0.1355, -0.0000, 0.0000],
        &[-0.0000, -0.0000, -0.0000, -0.1367, -0.0000],
        &[0.0000, 0.0000, 0.0000, -0.0000, -0.1367],
        &[0.0000, -0.0000, -0.0089, -0.0000, -0.0000],
    ])
}

pub fn example1_s_printed() -> DenseMatrix {
    rows(&[
        &[2319.3, -422.9, -383.7, 21.1, -7.4, 21.7],
        &[-422.9, 2453.7, 186.0, -11.3, 9.3, -16.2],
        &[-383.7, 186.0, 1167.9, -6.1, 3.1, 3.9],
        &[21.1, -11.3, -6.1, 24.6, -0.7, -0.2],
        &[-7.4, 9.3, 3.1, -0.7, 19.5, -1.0],
        &[21.7, -16.2, 3.9, -0.2, -1.0, 16.9],
    ])
}

pub fn example1_family() -> HarmonicFamily {
    HarmonicFamily {
        n_followers: EXAMPLE1_FOLLOWERS,
        r: 2.0,
        w: 2.0,
        phase_step: None,
        components: vec![
            Component(-1.0, 1.0, 0),
            Component(0.0, 2.0, 0),
            Component(2.0, 0.0, 0),
            Component(1.0, 1.0, 1),
            Component(2.0, 0.0, 1),
            Component(0.0, -2.0, 1),
        ],
    }
}

fn member(j: usize) -> Vec<(usize, f64)> {
    vec![(j, 1.0)]
}

fn midpoint(a: usize, b: usize) -> Vec<(usize, f64)> {
    vec![(a, 0.5), (b, 0.5)]
}

/// Hexagon, parallelogram, triangle, hexagon.
pub fn example1_pieces() -> Vec<Piece> {
    let parallelogram: Assembly = vec![member(0), midpoint(0, 2), member(2), member(3), midpoint(3, 5), member(5)];
    let triangle: Assembly = vec![member(0), midpoint(0, 2), member(2), midpoint(2, 4), member(4), midpoint(4, 0)];
    vec![
        Piece { start: 0.0, assembly: None },
        Piece { start: 50.0, assembly: Some(parallelogram) },
        Piece { start: 100.0, assembly: Some(triangle) },
        Piece { start: 150.0, assembly: None },
    ]
}

pub fn example1_formation() -> FormationSpec {
    make_piecewise_spec(example1_family(), example1_pieces()).expect("example 1 schedule")
}

pub fn example1_leader_input() -> LeaderInput {
    LeaderInput::ExpSin {
        channels: vec![
            ExpSinChannel { offset: 1.0, exp_amp: 1.0, exp_rate: 1.0, ..Default::default() },
            ExpSinChannel { exp_amp: 1.0, exp_rate: 2.0, ..Default::default() },
            ExpSinChannel { offset: 2.0, sin_amp: 1.0, sin_freq: 0.5, ..Default::default() },
        ],
    }
}

/// Directed ring `i−1 → i` over `n` followers, leader pinned into `pinned`.
pub fn ring_adjacency(n: usize) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[(i + n - 1) % n] = 1.0;
    }
    a
}

fn pins(n: usize, pinned: &[usize]) -> Vec<f64> {
    let mut d = vec![0.0; n];
    for &i in pinned {
        d[i] = 1.0;
    }
    d
}

/// Directed follower ring with the leader feeding followers 1 and 4.
pub fn example1_topology() -> Topology {
    Topology::new(&ring_adjacency(6), &pins(6, &[0, 3]), Directedness::Directed).expect("example 1 topology")
}

pub const EXAMPLE2_FOLLOWERS: usize = 10;
pub const EXAMPLE2_BETA: f64 = 4.0;
pub const EXAMPLE2_HORIZON: f64 = 100.0;

/// Planar double integrator, both positions and the first velocity measured.
pub fn example2_model() -> LtiModel {
    LtiModel::from_rows(
        &[
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0],
        ],
        &[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        &[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]],
    )
    .expect("example 2 dimensions")
}

/// `[−w²I₂, 0]`, the unique choice making the decagon family a generator orbit.
pub fn example2_k1() -> DenseMatrix {
    rows(&[&[-0.25, 0.0, 0.0, 0.0], &[0.0, -0.25, 0.0, 0.0]])
}

pub fn example2_poles() -> Vec<Complex64> {
    [-1.0, -1.5, -2.0, -2.5].iter().map(|&re| Complex64::new(re, 0.0)).collect()
}

pub fn example2_family() -> HarmonicFamily {
    HarmonicFamily {
        n_followers: EXAMPLE2_FOLLOWERS,
        r: 10.0,
        w: 0.5,
        phase_step: Some(PI / 5.0),
        components: vec![
            Component(-1.0, 1.0, 0),
            Component(0.0, 2.0, 0),
            Component(1.0, 1.0, 1),
            Component(2.0, 0.0, 1),
        ],
    }
}

pub fn example2_formation() -> FormationSpec {
    make_piecewise_spec(example2_family(), vec![Piece { start: 0.0, assembly: None }]).expect("example 2 schedule")
}

pub fn example2_leader_input() -> LeaderInput {
    LeaderInput::ExpSin {
        channels: vec![
            ExpSinChannel { exp_amp: 1.0, exp_rate: 1.0, ..Default::default() },
            ExpSinChannel { sin_amp: 1.0, sin_freq: 0.5, rectified: true, ..Default::default() },
        ],
    }
}

/// Directed ring of ten with the leader feeding followers 1 and 6.
pub fn example2_topology() -> Topology {
    Topology::new(&ring_adjacency(10), &pins(10, &[0, 5]), Directedness::Directed).expect("example 2 topology")
}

pub fn example2_vehicle() -> VehicleParams {
    VehicleParams { mass: 10.1, inertia: 0.13, hand: 0.12 }
}

/// Bounded-input tracking with the printed `K₂` and `S`, smooth `z` and
/// `δ = 10⁻³`; `Q` and `F` come from the Riccati synthesis.
pub fn example1_scenario(seed: u64) -> Scenario {
    let model = example1_model();
    let input = example1_leader_input();
    let mut gains = synthesize(
        &model,
        Regime::DirectedTrackingBoundedInput,
        example1_k1(),
        &K2Design::Explicit(example1_k2_printed()),
        Some(input.certified_bound()),
        Some(EXAMPLE1_BETA),
    )
    .expect("example 1 synthesis");
    let s = example1_s_printed();
    gains
        .certificates
        .insert("s_lmi_lambda_max".into(), s_lmi_value(&model, &gains.k2, &s));
    gains.s_mat = Some(s);
    Scenario {
        name: "example1".into(),
        model,
        topology: example1_topology(),
        gains,
        spec: example1_formation(),
        regime: Regime::DirectedTrackingBoundedInput,
        options: RegimeOptions { smooth_z: true, delta: 1e-3, ..Default::default() },
        leader_input: input,
        sim: SimConfig { t_final: EXAMPLE1_HORIZON, dt: 1e-3, record_stride: 100, seed, init: InitSpec::default() },
        vehicle: None,
    }
}

/// Ten unicycles around a linear leader.
pub fn example2_scenario(seed: u64) -> Scenario {
    let model = example2_model();
    let input = example2_leader_input();
    let gains = synthesize(
        &model,
        Regime::DirectedTrackingBoundedInput,
        example2_k1(),
        &K2Design::Poles(example2_poles()),
        Some(input.certified_bound()),
        Some(EXAMPLE2_BETA),
    )
    .expect("example 2 synthesis");
    Scenario {
        name: "example2".into(),
        model,
        topology: example2_topology(),
        gains,
        spec: example2_formation(),
        regime: Regime::DirectedTrackingBoundedInput,
        options: RegimeOptions { smooth_z: true, delta: 1e-3, ..Default::default() },
        leader_input: input,
        sim: SimConfig { t_final: EXAMPLE2_HORIZON, dt: 1e-3, record_stride: 100, seed, init: InitSpec::default() },
        vehicle: Some(example2_vehicle()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formation::{uniform_grid, validate_spec};
    use crate::linalg::is_hurwitz;

    #[test]
    fn generators_match_k1() {
        let m = example1_model();
        let grid = uniform_grid(0.0, 200.0, 801);
        let r = validate_spec(&example1_formation(), &m.a, &m.b, &example1_k1(), &grid).unwrap();
        assert!(r.generator < 1e-9 && r.finite_difference < 1e-6, "{r:?}");
        let m2 = example2_model();
        let r = validate_spec(&example2_formation(), &m2.a, &m2.b, &example2_k1(), &uniform_grid(0.0, 100.0, 401)).unwrap();
        assert!(r.generator < 1e-9, "{r:?}");
    }

    #[test]
    fn example1_hexagon_is_centered() {
        // six equally spaced phases of a pure harmonic sum to zero
        let spec = example1_formation();
        for t in [0.0, 12.3, 160.0] {
            let h = spec.offsets(t);
            for k in 0..6 {
                let s: f64 = (0..6).map(|i| h[i * 6 + k]).sum();
                assert!(s.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn leader_bounds() {
        assert!((example1_leader_input().certified_bound() - 14f64.sqrt()).abs() < 1e-15);
        assert!((example2_leader_input().certified_bound() - 2f64.sqrt()).abs() < 1e-15);
        assert!(EXAMPLE1_BETA >= 14f64.sqrt() && EXAMPLE2_BETA >= 2f64.sqrt());
    }

    #[test]
    fn printed_k2_is_stabilizing() {
        let m = example1_model();
        assert!(is_hurwitz(&(&m.a + &m.b * example1_k2_printed()), 0.0));
    }

    #[test]
    fn topologies_have_leader_rooted_trees() {
        assert!(example1_topology().has_spanning_tree_from_leader());
        assert!(example2_topology().has_spanning_tree_from_leader());
    }
}
