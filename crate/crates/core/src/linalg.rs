//! Small dense-matrix kernel: spectra, definiteness, Lyapunov, Sylvester,
//! pole placement and continuous algebraic Riccati equations.
//!
//! Everything here targets the desk-scale systems used by the formation
//! protocols (state dimension well below ten), so Kronecker-vectorised
//! solves are used throughout instead of Schur-based solvers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Row-major construction, column-major storage (nalgebra).
pub type DenseMatrix = DMatrix<f64>;

/// Tolerance used when deciding whether a matrix is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Residual tolerance for Lyapunov / Riccati solves.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix is not symmetric (max deviation {0:e})")]
    Asymmetric(f64),
    #[error("singular linear system in {0}")]
    Singular(&'static str),
    #[error("eigenvalue iteration did not converge")]
    EigenFailed,
    #[error("pair is not stabilizable: uncontrollable mode with real part {0:e}")]
    NotStabilizable(f64),
    #[error("Hamiltonian has eigenvalues on the imaginary axis (real part {0:e})")]
    ImaginaryAxisHamiltonian(f64),
    #[error("Newton-Kleinman iteration diverged after {iterations} steps (residual {residual:e})")]
    Diverged { iterations: usize, residual: f64 },
    #[error("target poles are not closed under conjugation")]
    NotSelfConjugate,
    #[error("pole placement failed: {0}")]
    PlacementFailed(String),
}

/// Builds a matrix from row-major nested rows.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DenseMatrix, LinalgError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(LinalgError::DimensionMismatch("ragged rows".into()));
    }
    let m = DenseMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    ensure_finite(&m)?;
    Ok(m)
}

/// Inverse of [`matrix_from_rows`].
pub fn matrix_to_rows(m: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn ensure_finite(m: &DenseMatrix) -> Result<(), LinalgError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

fn ensure_square(m: &DenseMatrix) -> Result<usize, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// Largest absolute deviation from symmetry.
pub fn asymmetry(m: &DenseMatrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DenseMatrix) -> DenseMatrix {
    (m + m.transpose()) * 0.5
}

/// All eigenvalues (with multiplicity) of a square real matrix.
pub fn eigvals(m: &DenseMatrix) -> Result<Vec<Complex64>, LinalgError> {
    let n = ensure_square(m)?;
    ensure_finite(m)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    // The QR iteration occasionally stalls on exact symmetries; a random
    // orthogonal similarity breaks them without changing the spectrum.
    let mut rng = ChaCha8Rng::seed_from_u64(0xe1c);
    let mut work = m.clone();
    for attempt in 0..6 {
        let eps = f64::EPSILON * [1.0, 16.0][attempt % 2];
        if let Some(schur) = nalgebra::linalg::Schur::try_new(work.clone(), eps, 10_000) {
            return Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| Complex64::new(z.re, z.im))
                .collect());
        }
        if attempt % 2 == 1 {
            let q = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
            work = q.transpose() * m * &q;
        }
    }
    Err(LinalgError::EigenFailed)
}

/// Maximum real part over the spectrum.
pub fn spectral_abscissa(m: &DenseMatrix) -> Result<f64, LinalgError> {
    Ok(eigvals(m)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// True iff every eigenvalue has real part below `-tol`.
pub fn is_hurwitz(m: &DenseMatrix, tol: f64) -> bool {
    matches!(spectral_abscissa(m), Ok(a) if a < -tol)
}

/// Ascending eigenvalues of the symmetric part of `m` (no symmetry check).
pub fn sym_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Positive-definiteness test on a symmetric matrix; returns `(pd, λ_min)`.
pub fn pd_check(m: &DenseMatrix) -> Result<(bool, f64), LinalgError> {
    ensure_square(m)?;
    ensure_finite(m)?;
    let dev = asymmetry(m);
    let scale = m.amax().max(1.0);
    if dev > SYMMETRY_TOL * scale {
        return Err(LinalgError::Asymmetric(dev));
    }
    let lmin = sym_eigenvalues(m).first().copied().unwrap_or(0.0);
    Ok((lmin > 0.0, lmin))
}

/// Largest eigenvalue of the symmetric part.
pub fn lambda_max_sym(m: &DenseMatrix) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Smallest eigenvalue of the symmetric part.
pub fn lambda_min_sym(m: &DenseMatrix) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Solves `aᵀ X + X a = -rhs` for symmetric `X`.
pub fn solve_lyapunov(a: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    let n = ensure_square(a)?;
    if rhs.shape() != (n, n) {
        return Err(LinalgError::DimensionMismatch(format!(
            "lyapunov rhs is {:?}, expected {n}x{n}",
            rhs.shape()
        )));
    }
    ensure_finite(a)?;
    ensure_finite(rhs)?;
    let eye = DenseMatrix::identity(n, n);
    let at = a.transpose();
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let b = DVector::from_iterator(n * n, rhs.iter().map(|v| -v));
    let sol = op
        .lu()
        .solve(&b)
        .ok_or(LinalgError::Singular("lyapunov"))?;
    let x = DenseMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(symmetrize(&x))
}

/// Solves the Sylvester equation `a X - X f = c`.
pub fn solve_sylvester(
    a: &DenseMatrix,
    f: &DenseMatrix,
    c: &DenseMatrix,
) -> Result<DenseMatrix, LinalgError> {
    let n = ensure_square(a)?;
    let m = ensure_square(f)?;
    if c.shape() != (n, m) {
        return Err(LinalgError::DimensionMismatch("sylvester rhs".into()));
    }
    let op = DenseMatrix::identity(m, m).kronecker(a) - f.transpose().kronecker(&DenseMatrix::identity(n, n));
    let b = DVector::from_column_slice(c.as_slice());
    let sol = op
        .lu()
        .solve(&b)
        .ok_or(LinalgError::Singular("sylvester"))?;
    Ok(DenseMatrix::from_column_slice(n, m, sol.as_slice()))
}

fn condition_number(m: &DenseMatrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Real block-diagonal matrix whose spectrum is `targets`.
///
/// Complex pairs become `[[re, im], [-im, re]]` blocks; repeated real
/// values are chained into Jordan blocks so single-input placement of
/// repeated poles stays solvable.
fn target_block_matrix(targets: &[Complex64]) -> Result<DenseMatrix, LinalgError> {
    let scale = targets.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    let mut reals: Vec<f64> = Vec::new();
    let mut uppers: Vec<Complex64> = Vec::new();
    let mut lowers: Vec<Complex64> = Vec::new();
    for z in targets {
        if z.im.abs() <= tol {
            reals.push(z.re);
        } else if z.im > 0.0 {
            uppers.push(*z);
        } else {
            lowers.push(*z);
        }
    }
    if uppers.len() != lowers.len() {
        return Err(LinalgError::NotSelfConjugate);
    }
    let mut unmatched = lowers.clone();
    for u in &uppers {
        let pos = unmatched
            .iter()
            .position(|l| (l.conj() - u).norm() <= tol)
            .ok_or(LinalgError::NotSelfConjugate)?;
        unmatched.swap_remove(pos);
    }
    reals.sort_by(f64::total_cmp);
    let n = targets.len();
    let mut f = DenseMatrix::zeros(n, n);
    let mut k = 0;
    for (idx, r) in reals.iter().enumerate() {
        f[(k, k)] = *r;
        if idx > 0 && (reals[idx - 1] - r).abs() <= tol {
            f[(k - 1, k)] = 1.0;
        }
        k += 1;
    }
    for u in &uppers {
        f[(k, k)] = u.re;
        f[(k + 1, k + 1)] = u.re;
        f[(k, k + 1)] = u.im;
        f[(k + 1, k)] = -u.im;
        k += 2;
    }
    Ok(f)
}

/// Greedy nearest matching; returns the worst relative mismatch.
pub fn spectrum_mismatch(actual: &[Complex64], targets: &[Complex64]) -> f64 {
    if actual.len() != targets.len() {
        return f64::INFINITY;
    }
    let mut remaining: Vec<Complex64> = actual.to_vec();
    let mut worst = 0.0_f64;
    for t in targets {
        let (idx, dist) = remaining
            .iter()
            .enumerate()
            .map(|(i, z)| (i, (z - t).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty by length check");
        remaining.swap_remove(idx);
        worst = worst.max(dist / t.norm().max(1.0));
    }
    worst
}

/// Tolerance for [`pole_place`] spectrum agreement (relative).
pub const PLACEMENT_TOL: f64 = 1e-6;

/// State feedback `K` (p×n) with `eig(a + b K) = targets`.
///
/// Uses the Sylvester parameterisation: for a random right factor `G`,
/// solve `A X - X F = B G` and set `K = -G X⁻¹`. Samples are redrawn
/// (deterministically) until `X` is well conditioned and the achieved
/// spectrum matches.
pub fn pole_place(
    a: &DenseMatrix,
    b: &DenseMatrix,
    targets: &[Complex64],
) -> Result<DenseMatrix, LinalgError> {
    let n = ensure_square(a)?;
    if b.nrows() != n {
        return Err(LinalgError::DimensionMismatch("B rows must match A".into()));
    }
    if targets.len() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "{} targets for a {n}-state system",
            targets.len()
        )));
    }
    ensure_finite(a)?;
    ensure_finite(b)?;
    let p = b.ncols();
    let f = target_block_matrix(targets)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_901e);
    let mut best: Option<(f64, DenseMatrix)> = None;
    for attempt in 0..40 {
        // Later attempts pre-shift A by a random feedback so targets that
        // coincide with open-loop eigenvalues do not make the Sylvester
        // operator singular.
        let pre = if attempt < 10 {
            DenseMatrix::zeros(p, n)
        } else {
            DenseMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0))
        };
        let a_shift = a + b * &pre;
        let g = DenseMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0));
        let Ok(x) = solve_sylvester(&a_shift, &f, &(b * &g)) else {
            continue;
        };
        let cond = condition_number(&x);
        if !cond.is_finite() || cond > 1e13 {
            continue;
        }
        let Some(x_inv) = x.clone().try_inverse() else {
            continue;
        };
        let k = &pre - g * x_inv;
        let Ok(ev) = eigvals(&(a + b * &k)) else {
            continue;
        };
        if spectrum_mismatch(&ev, targets) > PLACEMENT_TOL {
            continue;
        }
        if cond < 1e8 {
            return Ok(k);
        }
        if best.as_ref().is_none_or(|(c, _)| cond < *c) {
            best = Some((cond, k));
        }
    }
    best.map(|(_, k)| k).ok_or_else(|| {
        LinalgError::PlacementFailed(
            "no well-conditioned solution; pair may be uncontrollable".into(),
        )
    })
}

fn controllability_matrix(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let n = a.nrows();
    let p = b.ncols();
    let mut out = DenseMatrix::zeros(n, n * p);
    let mut block = b.clone();
    for k in 0..n {
        out.view_mut((0, k * p), (n, p)).copy_from(&block);
        block = a * block;
    }
    out
}

/// Rank of `[λI - A, B]` deficiency test at every eigenvalue of `a` whose
/// real part is at least `-margin`. Returns the offending real part.
fn pbh_violation(a: &DenseMatrix, b: &DenseMatrix, margin: f64) -> Result<Option<f64>, LinalgError> {
    let n = ensure_square(a)?;
    let p = b.ncols();
    let scale = a.norm().max(b.norm()).max(1.0);
    for lam in eigvals(a)? {
        if lam.re < -margin {
            continue;
        }
        let mut m = DMatrix::<nalgebra::Complex<f64>>::zeros(n, n + p);
        for i in 0..n {
            for j in 0..n {
                let diag = if i == j { nalgebra::Complex::new(lam.re, lam.im) } else { nalgebra::Complex::new(0.0, 0.0) };
                m[(i, j)] = diag - nalgebra::Complex::new(a[(i, j)], 0.0);
            }
            for j in 0..p {
                m[(i, n + j)] = nalgebra::Complex::new(b[(i, j)], 0.0);
            }
        }
        let sv = m.singular_values();
        if sv.min() <= 1e-9 * scale {
            return Ok(Some(lam.re));
        }
    }
    Ok(None)
}

/// PBH stabilizability of `(a, b)`.
pub fn is_stabilizable(a: &DenseMatrix, b: &DenseMatrix) -> Result<bool, LinalgError> {
    Ok(pbh_violation(a, b, 0.0)?.is_none())
}

/// Bass's gain `K = -Bᵀ Z⁻¹` with `(A + βI) Z + Z (A + βI)ᵀ = B Bᵀ`,
/// `β > ‖A‖`. Slower to converge from than a placed gain but does not
/// depend on eigenvector conditioning. Requires `(a, b)` controllable.
fn bass_gain(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    let n = a.nrows();
    let beta = 1.0 + a.norm();
    let m = -(a + DenseMatrix::identity(n, n) * beta).transpose();
    let z = solve_lyapunov(&m, &(b * b.transpose()))?;
    let z_inv = z.try_inverse().ok_or(LinalgError::Singular("Bass Gramian"))?;
    let k = -(b.transpose() * z_inv);
    if !is_hurwitz(&(a + b * &k), 0.0) {
        return Err(LinalgError::PlacementFailed("Bass gain check".into()));
    }
    Ok(k)
}

/// PBH detectability of `(a, c)`.
pub fn is_detectable(a: &DenseMatrix, c: &DenseMatrix) -> Result<bool, LinalgError> {
    is_stabilizable(&a.transpose(), &c.transpose())
}

/// Some `K` with `a + b K` Hurwitz.
///
/// Places the controllable part (found from the SVD of the controllability
/// matrix) well to the left of the open-loop spectrum and verifies the
/// remaining uncontrollable block is already stable.
pub fn stabilizing_gain(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    let n = ensure_square(a)?;
    let p = b.ncols();
    let shift = 1.0 + a.norm();
    let targets_for = |k: usize| -> Vec<Complex64> {
        (0..k)
            .map(|i| Complex64::new(-shift * (1.0 + i as f64 / k as f64), 0.0))
            .collect()
    };
    let wc = controllability_matrix(a, b);
    let svd = wc.clone().svd(true, false);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|s| **s > 1e-9 * smax.max(1.0))
        .count();
    if rank == n {
        return pole_place(a, b, &targets_for(n)).or_else(|_| bass_gain(a, b));
    }
    // Order left singular vectors by singular value (descending).
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut basis = DenseMatrix::zeros(n, n);
    for (col, &idx) in order.iter().take(n).enumerate() {
        basis.set_column(col, &u.column(idx));
    }
    let abar = basis.transpose() * a * &basis;
    let bbar = basis.transpose() * b;
    let unc = abar.view((rank, rank), (n - rank, n - rank)).into_owned();
    let worst = spectral_abscissa(&unc)?;
    if worst >= 0.0 {
        return Err(LinalgError::NotStabilizable(worst));
    }
    let mut kbar = DenseMatrix::zeros(p, n);
    if rank > 0 {
        let ac = abar.view((0, 0), (rank, rank)).into_owned();
        let bc = bbar.view((0, 0), (rank, p)).into_owned();
        let kc = pole_place(&ac, &bc, &targets_for(rank)).or_else(|_| bass_gain(&ac, &bc))?;
        kbar.view_mut((0, 0), (p, rank)).copy_from(&kc);
    }
    let k = kbar * basis.transpose();
    if !is_hurwitz(&(a + b * &k), 0.0) {
        return Err(LinalgError::PlacementFailed("stabilizing gain check".into()));
    }
    Ok(k)
}

/// Residual of `Aᵀ X + X A - X B R⁻¹ Bᵀ X + Q`.
pub fn care_residual(
    a: &DenseMatrix,
    b: &DenseMatrix,
    q: &DenseMatrix,
    r_inv: &DenseMatrix,
    x: &DenseMatrix,
) -> DenseMatrix {
    a.transpose() * x + x * a - x * b * r_inv * b.transpose() * x + q
}

/// Stabilising solution of `Aᵀ X + X A - X B R⁻¹ Bᵀ X + Q = 0` by
/// Newton-Kleinman iteration with Kronecker Lyapunov solves.
pub fn solve_care(
    a: &DenseMatrix,
    b: &DenseMatrix,
    q: &DenseMatrix,
    r: &DenseMatrix,
) -> Result<DenseMatrix, LinalgError> {
    let n = ensure_square(a)?;
    let p = b.ncols();
    if b.nrows() != n || q.shape() != (n, n) || r.shape() != (p, p) {
        return Err(LinalgError::DimensionMismatch("care operands".into()));
    }
    ensure_finite(a)?;
    ensure_finite(b)?;
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or(LinalgError::Singular("care weight R"))?;
    let g = b * &r_inv * b.transpose();

    // Hamiltonian imaginary-axis check.
    let mut ham = DenseMatrix::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(a);
    ham.view_mut((0, n), (n, n)).copy_from(&(-&g));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-q));
    ham.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let hscale = ham.norm().max(1.0);
    if let Some(z) = eigvals(&ham)?
        .into_iter()
        .find(|z| z.re.abs() < 1e-9 * hscale)
    {
        return Err(LinalgError::ImaginaryAxisHamiltonian(z.re));
    }

    let mut k = match hamiltonian_sign_solution(&ham, n) {
        Some(x0) => {
            let k0 = -(&r_inv * b.transpose() * &x0);
            if is_hurwitz(&(a + b * &k0), 0.0) {
                k0
            } else {
                stabilizing_gain(a, b)?
            }
        }
        None => stabilizing_gain(a, b)?,
    };
    let mut x = DenseMatrix::zeros(n, n);
    let scale = |x: &DenseMatrix| 1.0 + q.norm() + 2.0 * a.norm() * x.norm() + g.norm() * x.norm_squared();
    let max_iter = 200;
    for iter in 0..max_iter {
        let ak = a + b * &k;
        let rhs = q + k.transpose() * r * &k;
        let x_next = solve_lyapunov(&ak, &rhs)?;
        let step = (&x_next - &x).norm();
        x = x_next;
        k = -(&r_inv * b.transpose() * &x);
        let res = care_residual(a, b, q, &r_inv, &x).norm();
        if !res.is_finite() {
            return Err(LinalgError::Diverged {
                iterations: iter + 1,
                residual: res,
            });
        }
        if res <= 1e-12 * scale(&x) || step <= 1e-15 * x.norm().max(1.0) {
            break;
        }
    }
    let res = care_residual(a, b, q, &r_inv, &x).norm();
    let closed = a - &g * &x;
    let min_ev = x.symmetric_eigenvalues().min();
    if res > RESIDUAL_TOL * scale(&x) || !is_hurwitz(&closed, 0.0) || min_ev < -RESIDUAL_TOL * x.norm().max(1.0) {
        return Err(LinalgError::Diverged {
            iterations: max_iter,
            residual: res,
        });
    }
    Ok(x)
}

/// Stabilizing solution from the matrix sign of the Hamiltonian, used to
/// seed the Newton iteration. `None` if the iteration or solve breaks down.
fn hamiltonian_sign_solution(ham: &DenseMatrix, n: usize) -> Option<DenseMatrix> {
    let mut z = ham.clone();
    for _ in 0..100 {
        let lu = z.clone().lu();
        let log_det: f64 = lu.u().diagonal().iter().map(|d| d.abs().ln()).sum();
        if !log_det.is_finite() {
            return None;
        }
        let c = (-log_det / (2 * n) as f64).exp();
        let inv = lu.try_inverse()?;
        let next = (&z * c + inv / c) * 0.5;
        let step = (&next - &z).norm();
        z = next;
        if step <= 1e-13 * z.norm() {
            break;
        }
    }
    let eye = DenseMatrix::identity(n, n);
    let mut lhs = DenseMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(z.view((n, n), (n, n)) + &eye));
    let mut rhs = DenseMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(z.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-z.view((n, 0), (n, n))));
    let x = lhs.svd(true, true).solve(&rhs, 1e-14).ok()?;
    let x = (&x + x.transpose()) * 0.5;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// `X ≻ 0` solving `A X + X Aᵀ - X Cᵀ C X + I = 0` (filter-type ARE).
pub fn solve_observer_are(a: &DenseMatrix, c: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    let n = ensure_square(a)?;
    if c.ncols() != n {
        return Err(LinalgError::DimensionMismatch("C columns must match A".into()));
    }
    let q = c.nrows();
    solve_care(
        &a.transpose(),
        &c.transpose(),
        &DenseMatrix::identity(n, n),
        &DenseMatrix::identity(q, q),
    )
}

/// LQR gain `K = -R⁻¹ Bᵀ X` for `u = K x`.
pub fn lqr(
    a: &DenseMatrix,
    b: &DenseMatrix,
    q: &DenseMatrix,
    r: &DenseMatrix,
) -> Result<DenseMatrix, LinalgError> {
    let x = solve_care(a, b, q, r)?;
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or(LinalgError::Singular("care weight R"))?;
    Ok(-(r_inv * b.transpose() * x))
}

/// Serde adapters storing matrices as row-major nested arrays.
pub mod serde_rows {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::{matrix_from_rows, matrix_to_rows, DenseMatrix};

    pub fn serialize<S: Serializer>(m: &DenseMatrix, s: S) -> Result<S::Ok, S::Error> {
        matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DenseMatrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<DenseMatrix>, s: S) -> Result<S::Ok, S::Error> {
            m.as_ref().map(matrix_to_rows).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DenseMatrix>, D::Error> {
            Option::<Vec<Vec<f64>>>::deserialize(d)?
                .map(|rows| matrix_from_rows(&rows).map_err(serde::de::Error::custom))
                .transpose()
        }
    }
}
