//! Time-varying formation offsets `h_i(t)`.
//!
//! Offsets are closed-form harmonic signals. A base family assigns each
//! follower `j` the vector with components
//! `r · w^p · (a cos θ_j + b sin θ_j)`, `θ_j = w t + j · phase_step`, and a
//! piecewise schedule lets each follower track a fixed linear combination
//! of base members on each time interval. Linear combinations of
//! generator solutions are solutions, so every piece stays valid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::DenseMatrix;

/// Finite-difference step for the derivative cross-check.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormationError {
    #[error("formation dimensions inconsistent: {0}")]
    Dimensions(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("schedule pieces must start at 0 and increase strictly, got {0:?}")]
    Schedule(Vec<f64>),
    #[error("piece {piece}, follower {follower}: base index {index} out of range")]
    BadIndex { piece: usize, follower: usize, index: usize },
}

/// One state component of the harmonic family: `(cos coefficient, sin coefficient, power of w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component(pub f64, pub f64, pub i32);

/// Harmonic base offsets shared by all pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicFamily {
    pub n_followers: usize,
    pub r: f64,
    pub w: f64,
    /// Defaults to `2π / n_followers`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_step: Option<f64>,
    pub components: Vec<Component>,
}

impl HarmonicFamily {
    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn phase_step(&self) -> f64 {
        self.phase_step.unwrap_or(2.0 * PI / self.n_followers as f64)
    }

    /// Base offset of follower `j` (0-based) and its derivative.
    pub fn eval(&self, j: usize, t: f64, h: &mut [f64], hdot: &mut [f64]) {
        let theta = self.w * t + j as f64 * self.phase_step();
        let (s, c) = theta.sin_cos();
        for (k, &Component(a, b, p)) in self.components.iter().enumerate() {
            let amp = self.r * self.w.powi(p);
            h[k] = amp * (a * c + b * s);
            hdot[k] = amp * self.w * (b * c - a * s);
        }
    }
}

/// Per-follower linear combination of base members, `(base index, coefficient)`.
pub type Assembly = Vec<Vec<(usize, f64)>>;

/// A schedule interval `[start, next start)`; the last one extends forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    pub start: f64,
    /// `None` means follower `i` uses base member `i`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assembly: Option<Assembly>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationSpec {
    pub family: HarmonicFamily,
    pub pieces: Vec<Piece>,
}

impl FormationSpec {
    pub fn n(&self) -> usize {
        self.family.n()
    }

    pub fn n_followers(&self) -> usize {
        self.family.n_followers
    }

    /// Interior switch times, in order.
    pub fn switch_times(&self) -> Vec<f64> {
        self.pieces.iter().skip(1).map(|p| p.start).collect()
    }

    /// Index of the piece active at `t` (right-continuous).
    pub fn piece_at(&self, t: f64) -> usize {
        self.pieces
            .iter()
            .rposition(|p| p.start <= t)
            .unwrap_or(0)
    }

    /// Offsets and derivatives of every follower under piece `piece`,
    /// written row-major into `h` and `hdot` (length `N·n`).
    pub fn eval_piece(&self, piece: usize, t: f64, h: &mut [f64], hdot: &mut [f64]) {
        let n = self.n();
        let nf = self.n_followers();
        match &self.pieces[piece].assembly {
            None => {
                for i in 0..nf {
                    self.family
                        .eval(i, t, &mut h[i * n..(i + 1) * n], &mut hdot[i * n..(i + 1) * n]);
                }
            }
            Some(asm) => {
                let mut bh = vec![0.0; n];
                let mut bd = vec![0.0; n];
                h[..nf * n].fill(0.0);
                hdot[..nf * n].fill(0.0);
                for (i, combo) in asm.iter().enumerate() {
                    for &(j, coef) in combo {
                        self.family.eval(j, t, &mut bh, &mut bd);
                        for k in 0..n {
                            h[i * n + k] += coef * bh[k];
                            hdot[i * n + k] += coef * bd[k];
                        }
                    }
                }
            }
        }
    }

    /// Offsets at `t` using the right-continuous piece.
    pub fn eval(&self, t: f64, h: &mut [f64], hdot: &mut [f64]) {
        self.eval_piece(self.piece_at(t), t, h, hdot);
    }

    pub fn offsets(&self, t: f64) -> Vec<f64> {
        let len = self.n() * self.n_followers();
        let (mut h, mut d) = (vec![0.0; len], vec![0.0; len]);
        self.eval(t, &mut h, &mut d);
        h
    }

    pub fn validate_structure(&self) -> Result<(), FormationError> {
        let f = &self.family;
        if f.n_followers == 0 || f.components.is_empty() {
            return Err(FormationError::Dimensions("need at least one follower and one component".into()));
        }
        if !(f.r >= 0.0 && f.r.is_finite()) {
            return Err(FormationError::Parameter(format!("r = {}", f.r)));
        }
        if !(f.w >= 0.0 && f.w.is_finite()) {
            return Err(FormationError::Parameter(format!("w = {}", f.w)));
        }
        if f.phase_step.is_some_and(|p| !p.is_finite()) {
            return Err(FormationError::Parameter("phase_step".into()));
        }
        let starts: Vec<f64> = self.pieces.iter().map(|p| p.start).collect();
        let ordered = starts.windows(2).all(|w| w[0] < w[1]);
        if starts.first() != Some(&0.0) || !ordered || starts.iter().any(|s| !s.is_finite()) {
            return Err(FormationError::Schedule(starts));
        }
        for (pi, piece) in self.pieces.iter().enumerate() {
            if let Some(asm) = &piece.assembly {
                if asm.len() != f.n_followers {
                    return Err(FormationError::Dimensions(format!(
                        "piece {pi} assembles {} followers, family has {}",
                        asm.len(),
                        f.n_followers
                    )));
                }
                for (i, combo) in asm.iter().enumerate() {
                    if let Some(&(j, _)) = combo.iter().find(|(j, _)| *j >= f.n_followers) {
                        return Err(FormationError::BadIndex { piece: pi, follower: i, index: j });
                    }
                }
            }
        }
        Ok(())
    }
}

/// A single-piece spec where follower `i` uses base member `i`.
pub fn make_harmonic_spec(
    n: usize,
    m: usize,
    r: f64,
    w: f64,
    components: Vec<Component>,
) -> Result<FormationSpec, FormationError> {
    if components.len() != n {
        return Err(FormationError::Dimensions(format!(
            "component map has {} entries for n = {n}",
            components.len()
        )));
    }
    let spec = FormationSpec {
        family: HarmonicFamily {
            n_followers: m,
            r,
            w,
            phase_step: None,
            components,
        },
        pieces: vec![Piece { start: 0.0, assembly: None }],
    };
    spec.validate_structure()?;
    Ok(spec)
}

pub fn make_piecewise_spec(family: HarmonicFamily, pieces: Vec<Piece>) -> Result<FormationSpec, FormationError> {
    let spec = FormationSpec { family, pieces };
    spec.validate_structure()?;
    Ok(spec)
}

/// Generator and finite-difference residuals from [`validate_spec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecResidual {
    /// `max ‖ḣ_i − (A+BK₁)h_i‖` with the analytic derivative.
    pub generator: f64,
    /// `max ‖ḣ_i − (h_i(t+δ) − h_i(t−δ))/2δ‖`, scaled by `1 + ‖h_i‖`.
    pub finite_difference: f64,
}

/// Checks `ḣ_i = (A+BK₁)h_i` on `grid`. Grid points within `FD_STEP` of a
/// switch are skipped.
pub fn validate_spec(
    spec: &FormationSpec,
    a: &DenseMatrix,
    b: &DenseMatrix,
    k1: &DenseMatrix,
    grid: &[f64],
) -> Result<SpecResidual, FormationError> {
    let n = spec.n();
    if a.shape() != (n, n) || b.nrows() != n || k1.shape() != (b.ncols(), n) {
        return Err(FormationError::Dimensions(format!(
            "A {:?}, B {:?}, K₁ {:?} against n = {n}",
            a.shape(),
            b.shape(),
            k1.shape()
        )));
    }
    let gen = a + b * k1;
    let nf = spec.n_followers();
    let switches = spec.switch_times();
    let len = n * nf;
    let (mut h, mut d) = (vec![0.0; len], vec![0.0; len]);
    let (mut hp, mut hm, mut scratch) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let mut out = SpecResidual { generator: 0.0, finite_difference: 0.0 };
    for &t in grid {
        if switches.iter().any(|s| (t - s).abs() <= FD_STEP) {
            continue;
        }
        let piece = spec.piece_at(t);
        spec.eval_piece(piece, t, &mut h, &mut d);
        spec.eval_piece(piece, t + FD_STEP, &mut hp, &mut scratch);
        spec.eval_piece(piece, t - FD_STEP, &mut hm, &mut scratch);
        for i in 0..nf {
            let hi = &h[i * n..(i + 1) * n];
            let di = &d[i * n..(i + 1) * n];
            let mut gen_sq = 0.0;
            let mut fd_sq = 0.0;
            for r in 0..n {
                let mut acc = 0.0;
                for c in 0..n {
                    acc += gen[(r, c)] * hi[c];
                }
                gen_sq += (di[r] - acc).powi(2);
                let fd = (hp[i * n + r] - hm[i * n + r]) / (2.0 * FD_STEP);
                fd_sq += (di[r] - fd).powi(2);
            }
            let norm_h = hi.iter().map(|x| x * x).sum::<f64>().sqrt();
            out.generator = out.generator.max(gen_sq.sqrt());
            out.finite_difference = out.finite_difference.max(fd_sq.sqrt() / (1.0 + norm_h));
        }
    }
    Ok(out)
}

/// `max_t ‖Σ_i h_i(t)‖` over `grid`.
pub fn centering_diagnostic(spec: &FormationSpec, grid: &[f64]) -> f64 {
    let n = spec.n();
    let mut worst: f64 = 0.0;
    for &t in grid {
        let h = spec.offsets(t);
        let mut sum = vec![0.0; n];
        for row in h.chunks(n) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        worst = worst.max(sum.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    worst
}

/// Uniform grid `start, start+step, …` strictly below `end`.
pub fn uniform_grid(start: f64, end: f64, count: usize) -> Vec<f64> {
    let step = (end - start) / count as f64;
    (0..count).map(|k| start + k as f64 * step).collect()
}
