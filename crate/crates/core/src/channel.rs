//! User channels: i.i.d. Rayleigh fading between the user-facing layer and
//! the single-antenna users, distance-based path loss, and thermal noise.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Fading matrix, per-user path-loss gains, and the noise floor for one
/// Monte Carlo realization.
///
/// Row `k` of `h` is the conjugated channel vector of user `k`, so
/// `(h * g)[(k, i)]` is directly the inner product between user `k`'s channel
/// and beam `i`.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// `K × Q` fading matrix with unit-variance complex normal entries.
    pub h: DMatrix<Complex64>,
    /// Linear path-loss gain per user.
    pub path_loss: Vec<f64>,
    /// Noise power in watts over the signal bandwidth.
    pub noise_variance: f64,
}

impl ChannelSet {
    /// Draws fading for `k` users against `q` radiating elements and attaches
    /// path loss computed from the given user distances.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        distances: &[f64],
        q: usize,
        wavelength: f64,
        reference_distance: f64,
        path_loss_exponent: f64,
        noise_variance: f64,
    ) -> Result<Self> {
        if noise_variance <= 0.0 {
            return Err(Error::Domain(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        let h = sample_user_channels(rng, distances.len(), q);
        let path_loss = distances
            .iter()
            .map(|&d| path_loss(d, wavelength, reference_distance, path_loss_exponent))
            .collect();
        Ok(Self {
            h,
            path_loss,
            noise_variance,
        })
    }

    pub fn users(&self) -> usize {
        self.h.nrows()
    }

    /// Restricts the channel to a scheduled subset of users.
    pub fn reduce(&self, subset: &[usize]) -> Result<(DMatrix<Complex64>, Vec<f64>)> {
        reduce(&self.h, &self.path_loss, subset)
    }
}

/// `K × Q` matrix of i.i.d. unit-variance circularly-symmetric complex
/// normal entries (real and imaginary parts each N(0, 1/2)).
pub fn sample_user_channels<R: Rng + ?Sized>(rng: &mut R, k: usize, q: usize) -> DMatrix<Complex64> {
    assert!(k >= 1 && q >= 1, "channel matrix needs positive dimensions");
    let half = Normal::new(0.0, (0.5f64).sqrt()).expect("valid normal");
    DMatrix::from_fn(k, q, |_, _| {
        Complex64::new(half.sample(rng), half.sample(rng))
    })
}

/// Linear path-loss gain at distance `d`:
/// `(wavelength / (4π d0))² · (d0 / d)^eta`.
///
/// Distances inside the reference distance are outside the model's far-field
/// validity; they are still evaluated but logged as suspicious.
pub fn path_loss(d: f64, wavelength: f64, d0: f64, eta: f64) -> f64 {
    assert!(d > 0.0 && d0 > 0.0 && wavelength > 0.0, "lengths must be positive");
    if d < d0 {
        log::warn!("user distance {d} m is inside the reference distance {d0} m");
    }
    let free_space = wavelength / (4.0 * std::f64::consts::PI * d0);
    free_space * free_space * (d0 / d).powf(eta)
}

/// Thermal noise power over the signal bandwidth from a power spectral
/// density in dBm/Hz: `10^((psd_dbm − 30)/10) · bandwidth`.
pub fn noise_variance(psd_dbm_per_hz: f64, bandwidth_hz: f64) -> f64 {
    assert!(bandwidth_hz > 0.0, "bandwidth must be positive");
    10f64.powf((psd_dbm_per_hz - 30.0) / 10.0) * bandwidth_hz
}

/// Selects the rows of `h` and entries of `rho` for a scheduled subset.
/// Indices must be in range and pairwise distinct; rows are copied bitwise.
pub fn reduce(
    h: &DMatrix<Complex64>,
    rho: &[f64],
    subset: &[usize],
) -> Result<(DMatrix<Complex64>, Vec<f64>)> {
    if rho.len() != h.nrows() {
        return Err(Error::Structure(format!(
            "{} path-loss entries for {} channel rows",
            rho.len(),
            h.nrows()
        )));
    }
    if subset.is_empty() {
        return Err(Error::Structure("empty user subset".into()));
    }
    let mut seen = vec![false; h.nrows()];
    for &u in subset {
        if u >= h.nrows() {
            return Err(Error::Structure(format!(
                "user index {u} out of range for {} users",
                h.nrows()
            )));
        }
        if seen[u] {
            return Err(Error::Structure(format!("duplicate user index {u}")));
        }
        seen[u] = true;
    }
    let mut reduced = DMatrix::zeros(subset.len(), h.ncols());
    let mut rho_out = Vec::with_capacity(subset.len());
    for (row, &u) in subset.iter().enumerate() {
        reduced.row_mut(row).copy_from(&h.row(u));
        rho_out.push(rho[u]);
    }
    Ok((reduced, rho_out))
}
