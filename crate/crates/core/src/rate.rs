//! Link-quality metrics: per-user SINR, achievable sum rate, and the
//! interference-free closed form used by zero-forcing designs.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{Error, Result};

/// A beamforming matrix with unit-norm columns plus the per-stream transmit
/// powers that drive it. Constructing one validates the constraints, so
/// downstream code can rely on them.
#[derive(Debug, Clone)]
pub struct BeamformingSolution {
    /// `Q × N` beamformer; every column has unit Euclidean norm.
    pub beamformer: DMatrix<Complex64>,
    /// Nonnegative per-stream powers, summing to at most the budget.
    pub powers: Vec<f64>,
    /// Total transmit power budget in watts.
    pub total_power: f64,
}

impl BeamformingSolution {
    /// Validates column norms (within `1e-9` of one), power nonnegativity,
    /// and the power budget (slack `1e-9 · total_power`).
    pub fn new(
        beamformer: DMatrix<Complex64>,
        powers: Vec<f64>,
        total_power: f64,
    ) -> Result<Self> {
        if beamformer.ncols() != powers.len() {
            return Err(Error::Structure(format!(
                "{} beams but {} powers",
                beamformer.ncols(),
                powers.len()
            )));
        }
        if !(total_power > 0.0) {
            return Err(Error::Domain(format!(
                "power budget must be positive, got {total_power}"
            )));
        }
        for (i, col) in beamformer.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Structure(format!(
                    "beam {i} has norm {norm}, expected 1"
                )));
            }
        }
        let sum: f64 = powers.iter().sum();
        if powers.iter().any(|&p| p < 0.0) || sum > total_power * (1.0 + 1e-9) {
            return Err(Error::Structure(format!(
                "powers must be nonnegative and sum to at most {total_power}, got sum {sum}"
            )));
        }
        Ok(Self {
            beamformer,
            powers,
            total_power,
        })
    }

    pub fn streams(&self) -> usize {
        self.powers.len()
    }
}

/// Per-user SINR for scheduled users.
///
/// `h` is the `N × Q` reduced channel (row `i` = conjugated channel of
/// scheduled user `i`), `g` the `Q × N` beamformer, and
///
/// ```text
/// SINR_i = ρ_i P_i |h_i g_i|² / (ρ_i Σ_{i'≠i} P_{i'} |h_i g_{i'}|² + σ²)
/// ```
pub fn sinr(
    h: &DMatrix<Complex64>,
    rho: &[f64],
    g: &DMatrix<Complex64>,
    powers: &[f64],
    noise_variance: f64,
) -> Result<Vec<f64>> {
    let n = h.nrows();
    if rho.len() != n || g.ncols() != n || powers.len() != n || g.nrows() != h.ncols() {
        return Err(Error::Structure(format!(
            "inconsistent dimensions: h {}x{}, g {}x{}, {} gains, {} powers",
            h.nrows(),
            h.ncols(),
            g.nrows(),
            g.ncols(),
            rho.len(),
            powers.len()
        )));
    }
    if !(noise_variance > 0.0) {
        return Err(Error::Domain(format!(
            "noise variance must be positive, got {noise_variance}"
        )));
    }
    if powers.iter().any(|&p| p < 0.0) || rho.iter().any(|&r| r < 0.0) {
        return Err(Error::Domain("powers and path gains must be nonnegative".into()));
    }

    // cross[(i, j)] = |h_i g_j|²
    let prod = h * g;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut interference = 0.0;
        for j in 0..n {
            if j != i {
                interference += powers[j] * prod[(i, j)].norm_sqr();
            }
        }
        let signal = rho[i] * powers[i] * prod[(i, i)].norm_sqr();
        out.push(signal / (rho[i] * interference + noise_variance));
    }
    Ok(out)
}

/// Sum rate in bit/s/Hz: `Σ log2(1 + SINR_i)`.
pub fn sum_rate(sinrs: &[f64]) -> f64 {
    sinrs.iter().map(|s| (1.0 + s).log2()).sum()
}

/// Sum rate of an exactly interference-free design with per-stream channel
/// gains `d_i`: `Σ log2(1 + ρ_i P_i d_i² / σ²)`.
pub fn zf_sum_rate(gains: &[f64], powers: &[f64], rho: &[f64], noise_variance: f64) -> f64 {
    assert!(
        gains.len() == powers.len() && gains.len() == rho.len(),
        "one gain, power, and path loss per stream"
    );
    assert!(noise_variance > 0.0, "noise variance must be positive");
    gains
        .iter()
        .zip(powers)
        .zip(rho)
        .map(|((&d, &p), &r)| (1.0 + r * p * d * d / noise_variance).log2())
        .sum()
}
