//! Zero-forcing beamforming: the closed-form design that nulls all
//! inter-user interference, plus its dedicated waterfilling power rule.
//!
//! For a reduced channel `H` (rows = conjugated user channels) the design is
//!
//! ```text
//! G = Hᴴ (H Hᴴ)⁻¹ diag(d),   d_i = 1 / sqrt([(H Hᴴ)⁻¹]_ii)
//! ```
//!
//! The scaling makes every column exactly unit-norm, and `H G = diag(d)`, so
//! `d_i` is the effective channel gain of stream `i`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::numeric::water_level;
use crate::propagation::spectral_norm_sq;
use crate::rate::BeamformingSolution;
use crate::{Error, Result};

/// Default cap on the Gram-matrix condition number.
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

/// Complete zero-forcing design for one scheduled subset.
#[derive(Debug, Clone)]
pub struct ZfSolution {
    /// Unit-norm-column beamformer.
    pub beamformer: DMatrix<Complex64>,
    /// Effective per-stream channel gains `d_i`.
    pub gains: Vec<f64>,
    /// Waterfilled per-stream powers.
    pub powers: Vec<f64>,
    /// Lagrangian water level of the power allocation.
    pub water_level: f64,
}

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix,
/// reporting the first pivot that fails.
fn cholesky_lower(gram: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let n = gram.nrows();
    let diag_scale = (0..n)
        .map(|i| gram[(i, i)].re.abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut l: DMatrix<Complex64> = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = gram[(j, j)].re;
        for k in 0..j {
            pivot -= l[(j, k)].norm_sqr();
        }
        if pivot <= diag_scale * 1e-15 {
            return Err(Error::SingularGram { pivot: j });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = Complex64::new(ljj, 0.0);
        for i in (j + 1)..n {
            let mut s = gram[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular `L`.
fn forward_solve(l: &DMatrix<Complex64>, b: &DVector<Complex64>) -> DVector<Complex64> {
    let n = l.nrows();
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `Lᴴ x = y` for lower-triangular `L`.
fn adjoint_solve(l: &DMatrix<Complex64>, y: &DVector<Complex64>) -> DVector<Complex64> {
    let n = l.nrows();
    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)].conj() * x[k];
        }
        x[i] = s / l[(i, i)].conj();
    }
    x
}

/// Smallest eigenvalue of the Hermitian positive-definite `gram` via inverse
/// power iteration on its Cholesky factor.
fn smallest_eigenvalue(l: &DMatrix<Complex64>) -> f64 {
    let n = l.nrows();
    let mut v = DVector::from_fn(n, |i, _| {
        Complex64::new(1.0 + 0.01 * (i % 11) as f64, 0.003 * (i % 7) as f64)
    });
    v /= Complex64::new(v.norm(), 0.0);
    let mut growth = 0.0;
    for _ in 0..10_000 {
        let w = adjoint_solve(l, &forward_solve(l, &v));
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w.dotc(&v).re.abs();
        v = w / Complex64::new(norm, 0.0);
        if (next - growth).abs() <= 1e-10 * next.max(1.0) {
            return 1.0 / next;
        }
        growth = next;
    }
    1.0 / growth
}

/// Computes the zero-forcing beamformer and the effective per-stream gains.
///
/// Fails with a pivot-indexed error when the user Gram matrix `H Hᴴ` is not
/// positive definite (linearly dependent user channels, or more streams than
/// radiating elements) and with a condition error when its condition number
/// exceeds `condition_cap`.
pub fn zf_beamformer(
    h: &DMatrix<Complex64>,
    condition_cap: f64,
) -> Result<(DMatrix<Complex64>, Vec<f64>)> {
    let n = h.nrows();
    if n == 0 || h.ncols() == 0 {
        return Err(Error::Structure("empty channel matrix".into()));
    }
    let gram = h * h.adjoint();
    let l = cholesky_lower(&gram)?;

    let largest = spectral_norm_sq(&gram).sqrt();
    let smallest = smallest_eigenvalue(&l);
    let estimate = if smallest > 0.0 {
        largest / smallest
    } else {
        f64::INFINITY
    };
    if estimate > condition_cap {
        return Err(Error::IllConditioned {
            estimate,
            cap: condition_cap,
        });
    }

    // [(Gram)⁻¹]_ii = ‖L⁻¹ e_i‖², giving the gains; then the beamformer
    // columns are Hᴴ Gram⁻¹ e_i scaled by d_i.
    let mut gains = Vec::with_capacity(n);
    let mut g = DMatrix::zeros(h.ncols(), n);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = Complex64::new(1.0, 0.0);
        let y = forward_solve(&l, &e);
        let inv_ii = y.norm_squared();
        let d = 1.0 / inv_ii.sqrt();
        gains.push(d);
        let x = adjoint_solve(&l, &y);
        let col = h.adjoint() * (x * Complex64::new(d, 0.0));
        g.column_mut(i).copy_from(&col);
    }
    Ok((g, gains))
}

/// Waterfilling over the interference-free streams of a zero-forcing design:
/// `P_i = (1/μ − σ² / (ρ_i d_i²))⁺` with the budget met with equality.
/// Returns the powers and the level `μ`. A non-positive budget yields all
/// zeros (with an infinite level).
pub fn zf_waterfill(
    gains: &[f64],
    rho: &[f64],
    noise_variance: f64,
    total_power: f64,
) -> (Vec<f64>, f64) {
    assert_eq!(gains.len(), rho.len(), "one path gain per stream");
    assert!(noise_variance > 0.0, "noise variance must be positive");
    let thresholds: Vec<f64> = gains
        .iter()
        .zip(rho)
        .map(|(&d, &r)| {
            let s = r * d * d;
            if s > 0.0 {
                noise_variance / s
            } else {
                f64::INFINITY
            }
        })
        .collect();
    match water_level(&thresholds, total_power, 1e-12 * total_power.abs().max(1e-300)) {
        Some(level) => {
            let powers = thresholds
                .iter()
                .map(|&t| if level > t { level - t } else { 0.0 })
                .collect();
            (powers, 1.0 / level)
        }
        None => (vec![0.0; gains.len()], f64::INFINITY),
    }
}

/// Full zero-forcing solve: beamformer, gains, and waterfilled powers.
pub fn zf_solve(
    h: &DMatrix<Complex64>,
    rho: &[f64],
    noise_variance: f64,
    total_power: f64,
    condition_cap: f64,
) -> Result<ZfSolution> {
    if rho.len() != h.nrows() {
        return Err(Error::Structure(format!(
            "{} path gains for {} scheduled users",
            rho.len(),
            h.nrows()
        )));
    }
    let (beamformer, gains) = zf_beamformer(h, condition_cap)?;
    let (powers, level) = zf_waterfill(&gains, rho, noise_variance, total_power);
    // The constructor re-validates unit columns and the budget.
    let checked = BeamformingSolution::new(beamformer, powers, total_power)?;
    Ok(ZfSolution {
        beamformer: checked.beamformer,
        gains,
        powers: checked.powers,
        water_level: level,
    })
}
