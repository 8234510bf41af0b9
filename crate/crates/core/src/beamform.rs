//! Sum-rate beamforming for the scheduled users: block-coordinate ascent
//! alternating a projected gradient step on the unit-norm beam columns with
//! an interference-aware waterfilling power update.
//!
//! The beamformer is geometry-free: it optimizes the `Q × N` matrix that the
//! radiating aperture should realize, leaving the physical synthesis of that
//! matrix to the layer-fitting stage.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::numeric::water_level;
use crate::rate::{self, BeamformingSolution};
use crate::{Error, Result};

/// Convergence metric for the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopMetric {
    /// Relative change of the sum rate between consecutive iterations.
    ObjectiveChange,
    /// Relative change of the beamformer and power iterates.
    ParameterChange,
}

/// Starting point for the beam columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Independent complex normal columns, normalized.
    RandomUnitColumns,
    /// Each beam starts aligned with its user's channel.
    MatchedFilter,
}

/// Tuning knobs of the block-coordinate optimizer.
#[derive(Debug, Clone)]
pub struct OptimizerOptions {
    /// Maximum outer iterations.
    pub max_outer: usize,
    /// Relative tolerance for the stop metric.
    pub rel_tolerance: f64,
    /// Initial backtracking step length.
    pub step_init: f64,
    /// Multiplicative step shrink per backtracking stage.
    pub step_shrink: f64,
    /// Sufficient-increase constant of the backtracking test.
    pub armijo_c: f64,
    /// Maximum backtracking stages before the step is abandoned.
    pub max_halvings: usize,
    /// Waterfilling budget tolerance, relative to the power budget.
    pub wf_rel_tolerance: f64,
    /// Damping weight on the previous powers (0 = undamped update). A beam
    /// whose power hits exactly zero has a zero gradient and can never earn
    /// power back; damping keeps shrinking powers positive so such streams
    /// stay able to realign and rejoin.
    pub power_damping: f64,
    pub stop_metric: StopMetric,
    pub init: InitStrategy,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_outer: 1000,
            rel_tolerance: 1e-8,
            step_init: 1.0,
            step_shrink: 0.5,
            armijo_c: 1e-4,
            max_halvings: 30,
            wf_rel_tolerance: 1e-12,
            power_damping: 0.0,
            stop_metric: StopMetric::ObjectiveChange,
            init: InitStrategy::RandomUnitColumns,
        }
    }
}

/// Objective values after each half of one outer iteration.
#[derive(Debug, Clone, Copy)]
pub struct IterStep {
    /// Sum rate after the beam update.
    pub after_beam: f64,
    /// Sum rate after the power update.
    pub after_power: f64,
}

/// Result of [`optimize_beamforming`].
#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub solution: BeamformingSolution,
    /// Final sum rate in bit/s/Hz.
    pub objective: f64,
    /// Outer iterations performed.
    pub iterations: usize,
    /// Whether the stop metric fell below tolerance before the iteration cap.
    pub converged: bool,
    /// Objective after each beam and power sub-step.
    pub trace: Vec<IterStep>,
}

/// New powers produced by one waterfilling pass.
#[derive(Debug, Clone)]
pub struct PowerUpdate {
    pub powers: Vec<f64>,
    /// Common water level of the active streams; `None` when every stream has
    /// zero effective gain and no power can be poured.
    pub level: Option<f64>,
}

/// Sum rate in bit/s/Hz for the current iterate.
fn objective(
    h: &DMatrix<Complex64>,
    rho: &[f64],
    g: &DMatrix<Complex64>,
    powers: &[f64],
    noise: f64,
) -> f64 {
    let sinrs = rate::sinr(h, rho, g, powers, noise).expect("validated dimensions");
    rate::sum_rate(&sinrs)
}

/// Per-stream totals `T_m = ρ_m Σ_j P_j |h_m g_j|² + σ²` and
/// interference-plus-noise `I_m = T_m − ρ_m P_m |h_m g_m|²`.
fn stream_totals(
    prod: &DMatrix<Complex64>,
    rho: &[f64],
    powers: &[f64],
    noise: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = prod.nrows();
    let mut totals = Vec::with_capacity(n);
    let mut inter = Vec::with_capacity(n);
    for m in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            sum += powers[j] * prod[(m, j)].norm_sqr();
        }
        let t = rho[m] * sum + noise;
        totals.push(t);
        inter.push(t - rho[m] * powers[m] * prod[(m, m)].norm_sqr());
    }
    (totals, inter)
}

/// Ascent direction of the natural-log sum rate with respect to the
/// conjugate coordinates of beam `i` (Wirtinger convention):
///
/// ```text
/// ∇_i = ρ_i P_i (h_iᴴ h_i g_i) / T_i
///     − Σ_{m≠i} ρ_m² P_i P_m |h_m g_m|² (h_mᴴ h_m g_i) / (T_m I_m)
/// ```
///
/// The gradient of the real parameterization is twice this vector; the
/// finite-difference tests pin that relation down.
pub fn grad_beam(
    g: &DMatrix<Complex64>,
    powers: &[f64],
    h: &DMatrix<Complex64>,
    rho: &[f64],
    noise: f64,
    beam: usize,
) -> DVector<Complex64> {
    let n = h.nrows();
    assert!(beam < n, "beam index {beam} out of range");
    let prod = h * g;
    let (totals, inter) = stream_totals(&prod, rho, powers, noise);

    // Each term is a multiple of the conjugated channel row, so the gradient
    // is hᴴ·w for a small weight vector w.
    let mut w = DVector::zeros(n);
    w[beam] = Complex64::new(rho[beam] * powers[beam] / totals[beam], 0.0) * prod[(beam, beam)];
    for m in 0..n {
        if m == beam {
            continue;
        }
        let coeff = rho[m] * rho[m] * powers[beam] * powers[m] * prod[(m, m)].norm_sqr()
            / (totals[m] * inter[m]);
        w[m] = -Complex64::new(coeff, 0.0) * prod[(m, beam)];
    }
    h.adjoint() * w
}

/// One projected gradient ascent step on all beam columns simultaneously.
///
/// Directions are the normalized per-beam gradients; a shared step length is
/// chosen by backtracking so the sum rate satisfies a sufficient-increase
/// test. Columns are re-normalized after the step (projection onto the unit
/// sphere). If every gradient vanishes or no step passes the test, the input
/// is returned unchanged, so the objective never decreases.
pub fn pga_step(
    g: &DMatrix<Complex64>,
    powers: &[f64],
    h: &DMatrix<Complex64>,
    rho: &[f64],
    noise: f64,
    opts: &OptimizerOptions,
) -> DMatrix<Complex64> {
    let n = g.ncols();
    debug_assert!(
        g.column_iter().all(|c| (c.norm() - 1.0).abs() < 1e-9),
        "pga_step expects unit-norm beam columns"
    );

    let mut directions = Vec::with_capacity(n);
    let mut slope = 0.0;
    for i in 0..n {
        let grad = grad_beam(g, powers, h, rho, noise, i);
        let norm = grad.norm();
        if norm > 0.0 {
            // Only the component orthogonal to the beam survives the sphere
            // projection (and per-beam phase leaves the rate invariant), so
            // the sufficient-increase slope uses the tangential part:
            // d/dη f(P(g + η ∇/‖∇‖)) ∝ ‖∇_tan‖² / ‖∇‖.
            let radial = g.column(i).dotc(&grad);
            let tangential = &grad - g.column(i) * radial;
            slope += tangential.norm_squared() / norm;
            directions.push(Some(grad / Complex64::new(norm, 0.0)));
        } else {
            directions.push(None);
        }
    }
    if slope == 0.0 {
        return g.clone();
    }

    let f0 = objective(h, rho, g, powers, noise);
    let mut eta = opts.step_init;
    for _ in 0..=opts.max_halvings {
        let mut candidate = g.clone();
        for (i, dir) in directions.iter().enumerate() {
            if let Some(d) = dir {
                let stepped = g.column(i) + d * Complex64::new(eta, 0.0);
                let norm = stepped.norm();
                if norm > 0.0 {
                    candidate
                        .column_mut(i)
                        .copy_from(&(stepped / Complex64::new(norm, 0.0)));
                }
            }
        }
        let f = objective(h, rho, &candidate, powers, noise);
        if f >= f0 + opts.armijo_c * eta * slope {
            return candidate;
        }
        eta *= opts.step_shrink;
    }
    g.clone()
}

/// Simultaneous waterfilling power update at fixed beams.
///
/// Stream `i` gets `P_i = max(μ − t_i, 0)` with threshold
/// `t_i = (I_i + σ²) / S_i`, where `S_i` is the effective signal gain and
/// `I_i` the interference computed from the *current* powers; the level `μ`
/// is chosen so the new powers exhaust the budget.
pub fn waterfill_interference(
    g: &DMatrix<Complex64>,
    powers: &[f64],
    h: &DMatrix<Complex64>,
    rho: &[f64],
    noise: f64,
    total_power: f64,
    rel_tolerance: f64,
) -> PowerUpdate {
    let n = h.nrows();
    assert!(total_power > 0.0, "power budget must be positive");
    let prod = h * g;
    let mut thresholds = Vec::with_capacity(n);
    for i in 0..n {
        let signal = rho[i] * prod[(i, i)].norm_sqr();
        if signal <= 0.0 {
            thresholds.push(f64::INFINITY);
            continue;
        }
        let mut interference = 0.0;
        for j in 0..n {
            if j != i {
                interference += powers[j] * prod[(i, j)].norm_sqr();
            }
        }
        thresholds.push((rho[i] * interference + noise) / signal);
    }

    match water_level(&thresholds, total_power, rel_tolerance * total_power) {
        Some(level) => {
            let new_powers = thresholds
                .iter()
                .map(|&t| if level > t { level - t } else { 0.0 })
                .collect();
            PowerUpdate {
                powers: new_powers,
                level: Some(level),
            }
        }
        None => PowerUpdate {
            powers: vec![0.0; n],
            level: None,
        },
    }
}

/// Block-coordinate sum-rate maximization: alternates [`pga_step`] and
/// [`waterfill_interference`] from a seeded start until the stop metric
/// falls below tolerance or the iteration cap is reached.
pub fn optimize_beamforming<R: Rng + ?Sized>(
    h: &DMatrix<Complex64>,
    rho: &[f64],
    noise: f64,
    total_power: f64,
    rng: &mut R,
    opts: &OptimizerOptions,
) -> Result<OptimizeReport> {
    let (n, q) = (h.nrows(), h.ncols());
    if n == 0 || q == 0 {
        return Err(Error::Structure("empty channel matrix".into()));
    }
    if rho.len() != n {
        return Err(Error::Structure(format!(
            "{} path gains for {n} scheduled users",
            rho.len()
        )));
    }
    if !(noise > 0.0) || !(total_power > 0.0) {
        return Err(Error::Domain(format!(
            "noise variance and power budget must be positive (noise={noise}, budget={total_power})"
        )));
    }

    let mut g = match opts.init {
        InitStrategy::RandomUnitColumns => {
            let mut m = DMatrix::from_fn(q, n, |_, _| {
                Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            for mut col in m.column_iter_mut() {
                let norm = col.norm();
                col.scale_mut(1.0 / norm);
            }
            m
        }
        InitStrategy::MatchedFilter => {
            let mut m = DMatrix::zeros(q, n);
            for i in 0..n {
                let col = h.row(i).adjoint();
                let norm = col.norm();
                if norm > 0.0 {
                    m.column_mut(i).copy_from(&(col / Complex64::new(norm, 0.0)));
                } else {
                    m[(i.min(q - 1), i)] = Complex64::new(1.0, 0.0);
                }
            }
            m
        }
    };
    let mut powers = vec![total_power / n as f64; n];

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut f_prev = objective(h, rho, &g, &powers, noise);
    let g_scale = (n as f64).sqrt();

    for _ in 0..opts.max_outer {
        iterations += 1;
        let g_old = g.clone();
        let p_old = powers.clone();

        g = pga_step(&g, &powers, h, rho, noise, opts);
        let after_beam = objective(h, rho, &g, &powers, noise);

        let update =
            waterfill_interference(&g, &powers, h, rho, noise, total_power, opts.wf_rel_tolerance);
        let w = opts.power_damping;
        for i in 0..n {
            powers[i] = (1.0 - w) * update.powers[i] + w * powers[i];
        }
        let after_power = objective(h, rho, &g, &powers, noise);
        trace.push(IterStep {
            after_beam,
            after_power,
        });

        let done = match opts.stop_metric {
            StopMetric::ObjectiveChange => {
                (after_power - f_prev).abs() <= opts.rel_tolerance * f_prev.abs().max(1.0)
            }
            StopMetric::ParameterChange => {
                let dg = (&g - &g_old).norm() / g_scale;
                let dp = powers
                    .iter()
                    .zip(&p_old)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / total_power;
                dg + dp <= opts.rel_tolerance
            }
        };
        f_prev = after_power;
        if done {
            converged = true;
            break;
        }
    }

    let solution = BeamformingSolution::new(g, powers, total_power)?;
    Ok(OptimizeReport {
        objective: f_prev,
        solution,
        iterations,
        converged,
        trace,
    })
}
