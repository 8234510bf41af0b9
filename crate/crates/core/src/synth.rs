//! Stage-two synthesis: programs the stack so its cascade reproduces a
//! target beamforming matrix, by cyclic projected gradient descent over the
//! layers, optionally discretizing the adjustable phases to a finite
//! alphabet.
//!
//! The objective is the squared Frobenius misfit `f(γ) = ‖G(γ) − G*‖²_F`.
//! Fixing every layer but `l` and writing `G = E_l Γ_l B_l` makes the misfit
//! an exact quadratic in that layer's coefficient vector `γ`:
//!
//! ```text
//! f(γ) = γᴴ A γ − 2 Re(γᴴ v) + ‖G*‖²_F
//! A = (EᴴE) ∘ (B* Bᵀ)        (Hadamard product, Hermitian PSD)
//! v = ((Eᴴ G*) ∘ B*) · 1
//! ```
//!
//! so each layer visit evaluates candidates in `O(Q²)` during backtracking.
//! A sweep walks the layers front-to-back; the suffix factors `E_l` are
//! precomputed once per sweep (they only involve layers not yet visited) and
//! the prefix factor `B_l` is grown incrementally from the just-updated
//! coefficients, so every visit sees exact, current partial products.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::propagation::{check_stack_dims, scale_rows, DiffractionMatrix, LayerKind, LayerStack};
use crate::{Error, Result};

/// When and how the adjustable phases are snapped to the finite alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuantizationStrategy {
    /// Keep phases continuous; never quantize.
    #[default]
    Continuous,
    /// Run the continuous descent to convergence, then quantize once.
    PostConvergence,
    /// Quantize at the end of every sweep, so iterates stay on the grid
    /// and later sweeps adapt to the rounding committed so far.
    StepByStep,
}

/// Which amplitude descent direction to use on amplitude-controlled layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AmplitudeGradient {
    /// `2 Re{diag(γ*)(Aγ − v)}`: the exact derivative scaled elementwise by
    /// the (positive) amplitudes. Same sign pattern, so still a descent
    /// direction under backtracking.
    #[default]
    AmplitudeScaled,
    /// The exact derivative `2 Re{diag(e^{−jφ})(Aγ − v)}`.
    Exact,
}

/// Knobs of the layer-sweeping fit.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Maximum number of full layer sweeps.
    pub max_sweeps: usize,
    /// Convergence: relative change of the objective between sweeps.
    pub rel_tolerance: f64,
    /// Initial backtracking step for every layer.
    pub step_init: f64,
    /// Multiplicative step reduction per rejected candidate.
    pub step_shrink: f64,
    /// Sufficient-decrease constant of the acceptance test.
    pub armijo_c: f64,
    /// Candidate evaluations per layer visit before giving up.
    pub max_halvings: u32,
    /// Phase discretization policy.
    pub quantization: QuantizationStrategy,
    /// Alphabet size exponent: `M = 2^b` phases.
    pub phase_bits: u32,
    /// Amplitude descent direction variant.
    pub amplitude_gradient: AmplitudeGradient,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 500,
            rel_tolerance: 1e-8,
            step_init: 1.0,
            step_shrink: 0.5,
            armijo_c: 1e-4,
            max_halvings: 40,
            quantization: QuantizationStrategy::Continuous,
            phase_bits: 3,
            amplitude_gradient: AmplitudeGradient::AmplitudeScaled,
        }
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// Final stack (quantized when the strategy says so).
    pub stack: LayerStack,
    /// Final misfit `‖G − G*‖²_F` of `stack`.
    pub objective: f64,
    /// The stack before the last quantization (equals `stack` when the
    /// strategy is `Continuous`).
    pub continuous_stack: LayerStack,
    /// Misfit of `continuous_stack`.
    pub continuous_objective: f64,
    /// Sweeps executed.
    pub sweeps: usize,
    /// Whether the sweep-to-sweep tolerance was met before the cap.
    pub converged: bool,
    /// End-of-sweep objective values (post-quantization values under the
    /// step-by-step strategy).
    pub trace: Vec<f64>,
}

/// Squared Frobenius distance between the stack's cascade and the target.
pub fn ls_objective(
    ws: &[DiffractionMatrix],
    stack: &LayerStack,
    target: &DMatrix<Complex64>,
) -> Result<f64> {
    let g = crate::propagation::cascade(ws, stack)?;
    if g.shape() != target.shape() {
        return Err(Error::Structure(format!(
            "target is {}x{} but the cascade is {}x{}",
            target.nrows(),
            target.ncols(),
            g.nrows(),
            g.ncols()
        )));
    }
    Ok((g - target).norm_squared())
}

/// Quadratic coupling `(A, v)` of one layer: with every other layer frozen,
/// `‖G − G*‖²_F = γᴴAγ − 2Re(γᴴv) + ‖G*‖²_F` in that layer's coefficients.
pub fn coupling(
    ws: &[DiffractionMatrix],
    stack: &LayerStack,
    target: &DMatrix<Complex64>,
    layer: usize,
) -> Result<(DMatrix<Complex64>, DVector<Complex64>)> {
    let (e, b) = crate::propagation::partial_products(ws, stack, layer)?;
    if target.nrows() != e.nrows() || target.ncols() != b.ncols() {
        return Err(Error::Structure(format!(
            "target is {}x{} but the cascade is {}x{}",
            target.nrows(),
            target.ncols(),
            e.nrows(),
            b.ncols()
        )));
    }
    Ok(coupling_from_parts(&e, &b, target))
}

fn coupling_from_parts(
    e: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    target: &DMatrix<Complex64>,
) -> (DMatrix<Complex64>, DVector<Complex64>) {
    let a = (e.adjoint() * e).component_mul(&(b * b.adjoint()).conjugate());
    let ones = DVector::from_element(b.ncols(), Complex64::new(1.0, 0.0));
    let v = (e.adjoint() * target).component_mul(&b.conjugate()) * ones;
    (a, v)
}

/// Evaluates the per-layer quadratic at a candidate coefficient vector.
fn quad(
    a: &DMatrix<Complex64>,
    v: &DVector<Complex64>,
    gamma: &DVector<Complex64>,
    target_norm_sq: f64,
) -> f64 {
    let agamma = a * gamma;
    gamma.dotc(&agamma).re - 2.0 * gamma.dotc(v).re + target_norm_sq
}

/// Misfit derivative with respect to the phases of a phase-controlled layer:
/// `2 Im{diag(γ*)(Aγ − v)}`.
pub fn grad_phase(
    a: &DMatrix<Complex64>,
    v: &DVector<Complex64>,
    gamma: &DVector<Complex64>,
) -> DVector<f64> {
    let r = a * gamma - v;
    DVector::from_fn(gamma.len(), |q, _| 2.0 * (gamma[q].conj() * r[q]).im)
}

/// Amplitude descent direction of an amplitude-controlled layer. The
/// `AmplitudeScaled` variant is `2 Re{diag(γ*)(Aγ − v)}`; dividing out the
/// positive amplitudes gives the `Exact` derivative
/// `2 Re{diag(e^{−jφ})(Aγ − v)}`.
pub fn grad_amplitude(
    a: &DMatrix<Complex64>,
    v: &DVector<Complex64>,
    gamma: &DVector<Complex64>,
    mode: AmplitudeGradient,
) -> DVector<f64> {
    let r = a * gamma - v;
    DVector::from_fn(gamma.len(), |q, _| {
        let scaled = 2.0 * (gamma[q].conj() * r[q]).re;
        match mode {
            AmplitudeGradient::AmplitudeScaled => scaled,
            AmplitudeGradient::Exact => scaled / gamma[q].norm().max(f64::MIN_POSITIVE),
        }
    })
}

/// Snaps each phase to the nearest point of the alphabet `{2πm/M}`,
/// `M = 2^bits`, in circular distance. Exact ties go to the smaller index
/// (a tie across the wrap, between `M−1` and `0`, therefore goes to `0`).
pub fn quantize_phases(phases: &DVector<f64>, bits: u32) -> DVector<f64> {
    assert!(bits <= 32, "alphabet exponent {bits} is out of range");
    let m = (1u64 << bits) as f64;
    let two_pi = 2.0 * PI;
    phases.map(|p| {
        let mut w = p.rem_euclid(two_pi);
        if w >= two_pi {
            w = 0.0;
        }
        let t = w * m / two_pi;
        let lo = t.floor();
        let frac = t - lo;
        let idx = if frac < 0.5 {
            lo
        } else if frac > 0.5 {
            lo + 1.0
        } else if lo + 1.0 >= m {
            // Equidistant across the wrap: index 0 is the smaller one.
            m
        } else {
            lo
        };
        let idx = if idx >= m { 0.0 } else { idx };
        idx * two_pi / m
    })
}

/// Quantizes the adjustable phases of every phase-controlled layer in place.
fn quantize_stack_phases(stack: &mut LayerStack, bits: u32) {
    for l in 0..stack.layer_count() {
        if stack.kind(l) == LayerKind::PhaseControlled {
            let q = quantize_phases(stack.phases(l), bits);
            stack.set_phases(l, &q);
        }
    }
}

/// One backtracking update of a single layer against its quadratic.
/// Returns the objective after the visit and updates the warm step.
fn visit_layer(
    stack: &mut LayerStack,
    layer: usize,
    a: &DMatrix<Complex64>,
    v: &DVector<Complex64>,
    target_norm_sq: f64,
    warm: &mut f64,
    opts: &FitOptions,
) -> f64 {
    let gamma = stack.coefficients(layer);
    let mut f_cur = quad(a, v, &gamma, target_norm_sq);
    match stack.kind(layer) {
        LayerKind::PhaseControlled => {
            let grad = grad_phase(a, v, &gamma);
            let slope = grad.norm_squared();
            if slope == 0.0 {
                return f_cur;
            }
            let phases = stack.phases(layer).clone_owned();
            let magnitude = stack.pc_magnitude();
            let mut lambda = *warm;
            for _ in 0..=opts.max_halvings {
                let cand = &phases - &grad * lambda;
                let gamma_new = cand.map(|p| Complex64::from_polar(magnitude, p));
                let f_new = quad(a, v, &gamma_new, target_norm_sq);
                if f_new <= f_cur - opts.armijo_c * lambda * slope {
                    stack.set_phases(layer, &cand);
                    *warm = (lambda * 2.0).min(1e100);
                    return f_new;
                }
                lambda *= opts.step_shrink;
            }
            *warm = lambda;
            f_cur
        }
        LayerKind::AmplitudeControlled => {
            let grad = grad_amplitude(a, v, &gamma, opts.amplitude_gradient);
            let amps = stack
                .amplitudes(layer)
                .expect("amplitude-controlled layer carries amplitudes")
                .clone_owned();
            let fixed = stack.phases(layer).clone_owned();
            let mut lambda = *warm;
            for _ in 0..=opts.max_halvings {
                let cand = DVector::from_fn(amps.len(), |q, _| {
                    stack.project_amplitude(amps[q] - lambda * grad[q])
                });
                let moved = (&cand - &amps).norm_squared();
                if moved == 0.0 {
                    // Every component is pinned to the box against its
                    // gradient; shrinking the step cannot unpin any of them.
                    break;
                }
                let gamma_new =
                    DVector::from_fn(amps.len(), |q, _| Complex64::from_polar(cand[q], fixed[q]));
                let f_new = quad(a, v, &gamma_new, target_norm_sq);
                // Projected-step acceptance: reduces to the plain Armijo rule
                // when no clamping occurs.
                if f_new <= f_cur - opts.armijo_c / lambda * moved {
                    stack.set_amplitudes(layer, &cand);
                    *warm = (lambda * 2.0).min(1e100);
                    return f_new;
                }
                lambda *= opts.step_shrink;
            }
            *warm = lambda;
            let gamma_now = stack.coefficients(layer);
            f_cur = quad(a, v, &gamma_now, target_norm_sq);
            f_cur
        }
    }
}

/// Fits the stack to the target by cyclic projected gradient descent.
///
/// Phase-controlled layers move along the negative phase gradient (wrapped
/// into `[0, 2π)`); amplitude-controlled layers move along the negative
/// amplitude direction and are clamped to the feasible box. Every step must
/// pass a sufficient-decrease test, so in continuous mode the objective
/// trace is nonincreasing. Step sizes are warm-started per layer: each
/// accepted step doubles the layer's next initial step, each rejected sweep
/// leaves it shrunk.
pub fn pgd_fit(
    ws: &[DiffractionMatrix],
    target: &DMatrix<Complex64>,
    stack: LayerStack,
    opts: &FitOptions,
) -> Result<FitReport> {
    check_stack_dims(ws, stack_ref(&stack))?;
    let mut stack = stack;
    let q = stack.atom_count();
    if target.nrows() != q || target.ncols() != ws[0].ncols() {
        return Err(Error::Structure(format!(
            "target is {}x{} but the cascade is {}x{}",
            target.nrows(),
            target.ncols(),
            q,
            ws[0].ncols()
        )));
    }
    if !(opts.step_init > 0.0 && opts.step_shrink > 0.0 && opts.step_shrink < 1.0) {
        return Err(Error::Config(format!(
            "step controls must satisfy init > 0 and 0 < shrink < 1, got {} and {}",
            opts.step_init, opts.step_shrink
        )));
    }

    let l_total = stack.layer_count();
    let t_norm2 = target.norm_squared();
    let atol = 1e-24 * t_norm2;
    let mut warm = vec![opts.step_init; l_total];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    let mut f_prev = ls_objective(ws, &stack, target)?;
    let mut continuous_stack = stack.clone();
    let mut continuous_objective = f_prev;

    for _ in 0..opts.max_sweeps {
        // Suffix products E_l for every layer. The sweep visits layers in
        // ascending order, so entries for not-yet-visited layers stay exact.
        let mut es: Vec<DMatrix<Complex64>> = vec![DMatrix::identity(q, q); l_total];
        for l in (0..l_total.saturating_sub(1)).rev() {
            let mut t = ws[l + 1].matrix().clone();
            scale_rows(&mut t, &stack.coefficients(l + 1));
            es[l] = &es[l + 1] * t;
        }

        let mut b = ws[0].matrix().clone();
        let mut f_sweep = f_prev;
        for l in 0..l_total {
            let (a, v) = coupling_from_parts(&es[l], &b, target);
            f_sweep = visit_layer(&mut stack, l, &a, &v, t_norm2, &mut warm[l], opts);
            if l + 1 < l_total {
                scale_rows(&mut b, &stack.coefficients(l));
                b = ws[l + 1].matrix() * b;
            }
        }
        sweeps += 1;

        let f_now = if opts.quantization == QuantizationStrategy::StepByStep {
            continuous_stack = stack.clone();
            continuous_objective = ls_objective(ws, &stack, target)?;
            quantize_stack_phases(&mut stack, opts.phase_bits);
            ls_objective(ws, &stack, target)?
        } else {
            f_sweep
        };
        trace.push(f_now);

        if f_now <= atol || (f_prev - f_now).abs() <= opts.rel_tolerance * f_prev.abs() {
            converged = true;
            break;
        }
        f_prev = f_now;
    }

    match opts.quantization {
        QuantizationStrategy::Continuous => {
            let objective = ls_objective(ws, &stack, target)?;
            Ok(FitReport {
                continuous_stack: stack.clone(),
                continuous_objective: objective,
                stack,
                objective,
                sweeps,
                converged,
                trace,
            })
        }
        QuantizationStrategy::PostConvergence => {
            continuous_stack = stack.clone();
            continuous_objective = ls_objective(ws, &stack, target)?;
            quantize_stack_phases(&mut stack, opts.phase_bits);
            let objective = ls_objective(ws, &stack, target)?;
            Ok(FitReport {
                stack,
                objective,
                continuous_stack,
                continuous_objective,
                sweeps,
                converged,
                trace,
            })
        }
        QuantizationStrategy::StepByStep => {
            let objective = ls_objective(ws, &stack, target)?;
            Ok(FitReport {
                stack,
                objective,
                continuous_stack,
                continuous_objective,
                sweeps,
                converged,
                trace,
            })
        }
    }
}

// `check_stack_dims` takes a reference; this keeps the by-value `stack`
// binding readable above.
fn stack_ref(stack: &LayerStack) -> &LayerStack {
    stack
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        })
    }

    fn random_ws(rng: &mut ChaCha8Rng, q: usize, n: usize, layers: usize) -> Vec<DiffractionMatrix> {
        let mut ws = vec![DiffractionMatrix::from_matrix(random_matrix(rng, q, n))];
        for _ in 1..layers {
            ws.push(DiffractionMatrix::from_matrix(random_matrix(rng, q, q)));
        }
        ws
    }

    fn random_stack(rng: &mut ChaCha8Rng, kinds: &[LayerKind], atoms: usize) -> LayerStack {
        let mut stack = LayerStack::new(kinds, atoms, 0.9, 0.25, 2.0).unwrap();
        stack.randomize(rng);
        for l in 0..kinds.len() {
            if kinds[l] == LayerKind::AmplitudeControlled {
                let amps = DVector::from_fn(atoms, |_, _| 0.3 + 1.5 * rng.gen::<f64>());
                stack.set_amplitudes(l, &amps);
                let fixed = DVector::from_fn(atoms, |_, _| rng.gen::<f64>() * 2.0 * PI);
                stack.set_fixed_phases(l, &fixed);
            }
        }
        stack
    }

    fn mixed_kinds(rng: &mut ChaCha8Rng, layers: usize) -> Vec<LayerKind> {
        (0..layers)
            .map(|_| {
                if rng.gen::<bool>() {
                    LayerKind::PhaseControlled
                } else {
                    LayerKind::AmplitudeControlled
                }
            })
            .collect()
    }

    #[test]
    fn objective_of_a_perfect_fit_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kinds = mixed_kinds(&mut rng, 3);
        let ws = random_ws(&mut rng, 5, 2, 3);
        let stack = random_stack(&mut rng, &kinds, 5);
        let target = crate::propagation::cascade(&ws, &stack).unwrap();
        assert_eq!(ls_objective(&ws, &stack, &target).unwrap(), 0.0);

        let zero = DMatrix::zeros(5, 2);
        let g = crate::propagation::cascade(&ws, &stack).unwrap();
        let f = ls_objective(&ws, &stack, &zero).unwrap();
        assert!((f - g.norm_squared()).abs() < 1e-12 * g.norm_squared());
    }

    #[test]
    fn objective_matches_a_hand_expanded_scalar_case() {
        // One layer, two atoms, one antenna: G = diag(γ) w, so the misfit is
        // |γ_1 w_1 − t_1|² + |γ_2 w_2 − t_2|².
        let w = DMatrix::from_column_slice(2, 1, &[
            Complex64::new(1.0, 2.0),
            Complex64::new(-0.5, 0.5),
        ]);
        let ws = vec![DiffractionMatrix::from_matrix(w.clone())];
        let mut stack =
            LayerStack::new(&[LayerKind::PhaseControlled], 2, 1.0, 0.5, 2.0).unwrap();
        stack.set_phases(0, &DVector::from_column_slice(&[0.3, 5.1]));
        let target = DMatrix::from_column_slice(2, 1, &[
            Complex64::new(0.2, -0.4),
            Complex64::new(1.0, 0.0),
        ]);
        let expected: f64 = (0..2)
            .map(|q| {
                let gamma = Complex64::from_polar(1.0, [0.3, 5.1][q]);
                (gamma * w[(q, 0)] - target[(q, 0)]).norm_sqr()
            })
            .sum();
        let got = ls_objective(&ws, &stack, &target).unwrap();
        assert!((got - expected).abs() < 1e-14 * expected);
    }

    #[test]
    fn coupling_matches_brute_force_entry_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let q = 3 + (rng.gen::<u32>() % 5) as usize;
            let n = 2;
            let layers = 2 + (rng.gen::<u32>() % 3) as usize;
            let kinds = mixed_kinds(&mut rng, layers);
            let ws = random_ws(&mut rng, q, n, layers);
            let stack = random_stack(&mut rng, &kinds, q);
            let target = random_matrix(&mut rng, q, n);
            for layer in 0..layers {
                let (e, b) = crate::propagation::partial_products(&ws, &stack, layer).unwrap();
                let (a, v) = coupling(&ws, &stack, &target, layer).unwrap();
                for r in 0..q {
                    for c in 0..q {
                        let inner_e: Complex64 =
                            (0..q).map(|i| e[(i, r)].conj() * e[(i, c)]).sum();
                        let inner_b: Complex64 =
                            (0..n).map(|j| b[(r, j)].conj() * b[(c, j)]).sum();
                        let want = inner_e * inner_b;
                        assert!((a[(r, c)] - want).norm() <= 1e-12 * want.norm().max(1.0));
                        // Hermitian structure.
                        assert!((a[(r, c)] - a[(c, r)].conj()).norm() < 1e-12);
                    }
                    let want_v: Complex64 = (0..q)
                        .map(|i| {
                            (0..n)
                                .map(|j| e[(i, r)].conj() * target[(i, j)] * b[(r, j)].conj())
                                .sum::<Complex64>()
                        })
                        .sum();
                    assert!((v[r] - want_v).norm() <= 1e-12 * want_v.norm().max(1.0));
                }
                // The quadratic reproduces the true misfit.
                let gamma = stack.coefficients(layer);
                let f_quad = quad(&a, &v, &gamma, target.norm_squared());
                let f_direct = ls_objective(&ws, &stack, &target).unwrap();
                assert!((f_quad - f_direct).abs() <= 1e-10 * f_direct.max(1.0));
                // Positive semidefiniteness along random directions.
                let probe = random_matrix(&mut rng, q, 1).column(0).clone_owned();
                assert!(probe.dotc(&(&a * &probe)).re >= -1e-12 * a.norm());
            }
        }
    }

    #[test]
    fn last_layer_coupling_is_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let kinds = [LayerKind::PhaseControlled, LayerKind::AmplitudeControlled];
        let ws = random_ws(&mut rng, 4, 3, 2);
        let stack = random_stack(&mut rng, &kinds, 4);
        let target = random_matrix(&mut rng, 4, 3);
        let (a, _) = coupling(&ws, &stack, &target, 1).unwrap();
        let (_, b) = crate::propagation::partial_products(&ws, &stack, 1).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                if r == c {
                    let row_power: f64 = (0..3).map(|j| b[(r, j)].norm_sqr()).sum();
                    assert!((a[(r, r)].re - row_power).abs() < 1e-12 * row_power);
                    assert!(a[(r, r)].im.abs() < 1e-14);
                } else {
                    assert_eq!(a[(r, c)], Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn phase_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut checked = 0;
        for _ in 0..20 {
            let q = 3 + (rng.gen::<u32>() % 4) as usize;
            let layers = 2 + (rng.gen::<u32>() % 2) as usize;
            let mut kinds = mixed_kinds(&mut rng, layers);
            kinds[0] = LayerKind::PhaseControlled;
            let ws = random_ws(&mut rng, q, 2, layers);
            let mut stack = random_stack(&mut rng, &kinds, q);
            let target = random_matrix(&mut rng, q, 2);

            for layer in 0..layers {
                if stack.kind(layer) != LayerKind::PhaseControlled {
                    continue;
                }
                let (a, v) = coupling(&ws, &stack, &target, layer).unwrap();
                let gamma = stack.coefficients(layer);
                let analytic = grad_phase(&a, &v, &gamma);
                let base = stack.phases(layer).clone_owned();
                let h = 1e-6;
                let mut fd = DVector::zeros(q);
                for qi in 0..q {
                    let mut plus = base.clone();
                    plus[qi] += h;
                    stack.set_phases(layer, &plus);
                    let fp = ls_objective(&ws, &stack, &target).unwrap();
                    let mut minus = base.clone();
                    minus[qi] -= h;
                    stack.set_phases(layer, &minus);
                    let fm = ls_objective(&ws, &stack, &target).unwrap();
                    fd[qi] = (fp - fm) / (2.0 * h);
                }
                stack.set_phases(layer, &base);
                let err = (&fd - &analytic).norm() / analytic.norm().max(1e-12);
                assert!(err < 1e-5, "relative gradient error {err}");
                checked += 1;
            }
        }
        assert!(checked >= 20, "only {checked} phase layers exercised");
    }

    #[test]
    fn amplitude_gradient_matches_finite_differences_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..20 {
            let q = 3 + (rng.gen::<u32>() % 4) as usize;
            let kinds = [
                LayerKind::AmplitudeControlled,
                LayerKind::PhaseControlled,
            ];
            let ws = random_ws(&mut rng, q, 2, 2);
            let mut stack = random_stack(&mut rng, &kinds, q);
            let target = random_matrix(&mut rng, q, 2);

            let (a, v) = coupling(&ws, &stack, &target, 0).unwrap();
            let gamma = stack.coefficients(0);
            let exact = grad_amplitude(&a, &v, &gamma, AmplitudeGradient::Exact);
            let scaled = grad_amplitude(&a, &v, &gamma, AmplitudeGradient::AmplitudeScaled);

            // The two variants differ exactly by the positive amplitudes.
            let amps = stack.amplitudes(0).unwrap().clone_owned();
            for qi in 0..q {
                assert!((scaled[qi] - amps[qi] * exact[qi]).abs() <= 1e-12 * scaled[qi].abs().max(1.0));
                assert_eq!(scaled[qi].signum(), exact[qi].signum());
            }

            // Central differences on the true objective match the exact form.
            let h = 1e-6;
            let mut fd = DVector::zeros(q);
            for qi in 0..q {
                let mut plus = amps.clone();
                plus[qi] += h;
                stack.set_amplitudes(0, &plus);
                let fp = ls_objective(&ws, &stack, &target).unwrap();
                let mut minus = amps.clone();
                minus[qi] -= h;
                stack.set_amplitudes(0, &minus);
                let fm = ls_objective(&ws, &stack, &target).unwrap();
                fd[qi] = (fp - fm) / (2.0 * h);
            }
            stack.set_amplitudes(0, &amps);
            let err = (&fd - &exact).norm() / exact.norm().max(1e-12);
            assert!(err < 1e-5, "relative gradient error {err}");
        }
    }

    #[test]
    fn single_atom_gradients_match_hand_calculus() {
        // Q = N = L = 1: G = γ w with γ = α e^{jφ}, so with r = γ|w|² − w t*
        // ... computing directly: f = |γ w − t|², df/dφ = 2 Im{γ* (|w|²γ − w* t)}
        // and df/dα = 2 Re{e^{−jφ}(|w|²γ − w* t)}.
        let w = Complex64::new(0.8, -1.1);
        let t = Complex64::new(-0.3, 0.7);
        let (alpha, phi) = (1.3, 2.1);
        let gamma = Complex64::from_polar(alpha, phi);
        let a = DMatrix::from_element(1, 1, Complex64::new(w.norm_sqr(), 0.0));
        let v = DVector::from_element(1, w.conj() * t);
        let r = a[(0, 0)] * gamma - v[0];

        let gp = grad_phase(&a, &v, &DVector::from_element(1, gamma));
        let hand_phase = 2.0 * (gamma.conj() * r).im;
        assert!((gp[0] - hand_phase).abs() < 1e-14);
        // Also against the fully expanded misfit derivative.
        let f = |phi: f64, alpha: f64| (Complex64::from_polar(alpha, phi) * w - t).norm_sqr();
        let h = 1e-7;
        let fd_phi = (f(phi + h, alpha) - f(phi - h, alpha)) / (2.0 * h);
        assert!((gp[0] - fd_phi).abs() < 1e-6 * fd_phi.abs().max(1.0));

        let ga = grad_amplitude(
            &a,
            &v,
            &DVector::from_element(1, gamma),
            AmplitudeGradient::Exact,
        );
        let fd_alpha = (f(phi, alpha + h) - f(phi, alpha - h)) / (2.0 * h);
        assert!((ga[0] - fd_alpha).abs() < 1e-6 * fd_alpha.abs().max(1.0));
    }

    #[test]
    fn fit_trace_is_nonincreasing_and_respects_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..20 {
            let q = 4 + (rng.gen::<u32>() % 5) as usize;
            let layers = 2 + (rng.gen::<u32>() % 3) as usize;
            let kinds = mixed_kinds(&mut rng, layers);
            let ws = random_ws(&mut rng, q, 2, layers);
            let stack = random_stack(&mut rng, &kinds, q);
            let target = random_matrix(&mut rng, q, 2);
            let opts = FitOptions {
                max_sweeps: 40,
                ..FitOptions::default()
            };
            let report = pgd_fit(&ws, &target, stack, &opts).unwrap();
            for pair in report.trace.windows(2) {
                assert!(
                    pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-15,
                    "trace increased: {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
            // Stack invariants survive the fit.
            let (lo, hi) = report.stack.amplitude_bounds();
            for l in 0..layers {
                match report.stack.kind(l) {
                    LayerKind::PhaseControlled => {
                        for c in report.stack.coefficients(l).iter() {
                            assert!((c.norm() - report.stack.pc_magnitude()).abs() < 1e-12);
                        }
                    }
                    LayerKind::AmplitudeControlled => {
                        for &amp in report.stack.amplitudes(l).unwrap().iter() {
                            assert!((lo..=hi).contains(&amp));
                        }
                    }
                }
            }
            // The reported objective matches the returned stack.
            let direct = ls_objective(&ws, &report.stack, &target).unwrap();
            assert!((report.objective - direct).abs() <= 1e-10 * direct.max(1.0));
        }
    }

    #[test]
    fn planted_target_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let q = 16;
        let kinds = [
            LayerKind::PhaseControlled,
            LayerKind::AmplitudeControlled,
            LayerKind::PhaseControlled,
            LayerKind::PhaseControlled,
        ];
        // One feed column keeps the parameter count above the target's real
        // dimension, matching the regime the fit is used in.
        let ws = random_ws(&mut rng, q, 1, 4);
        let plant = random_stack(&mut rng, &kinds, q);
        let target = crate::propagation::cascade(&ws, &plant).unwrap();

        let mut init = LayerStack::new(&kinds, q, 0.9, 0.25, 2.0).unwrap();
        init.randomize(&mut rng);
        for l in 0..kinds.len() {
            if kinds[l] == LayerKind::AmplitudeControlled {
                // The fixed hardware phases are part of the plant, not of the
                // adjustable state.
                init.set_fixed_phases(l, &plant.phases(l).clone_owned());
            }
        }
        let opts = FitOptions {
            max_sweeps: 2000,
            rel_tolerance: 1e-12,
            ..FitOptions::default()
        };
        let report = pgd_fit(&ws, &target, init, &opts).unwrap();
        assert!(
            report.objective <= 1e-6 * target.norm_squared(),
            "misfit {} vs target power {} after {} sweeps",
            report.objective,
            target.norm_squared(),
            report.sweeps
        );
        let fitted = crate::propagation::cascade(&ws, &report.stack).unwrap();
        let rel = (&fitted - &target).norm() / target.norm();
        assert!(rel < 1e-3, "relative cascade error {rel}");
    }

    #[test]
    fn zero_couplings_are_a_fixed_point() {
        let ws = vec![
            DiffractionMatrix::from_matrix(DMatrix::zeros(4, 2)),
            DiffractionMatrix::from_matrix(DMatrix::zeros(4, 4)),
        ];
        let kinds = [LayerKind::PhaseControlled, LayerKind::AmplitudeControlled];
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let stack = random_stack(&mut rng, &kinds, 4);
        let before_phases = stack.phases(0).clone_owned();
        let before_amps = stack.amplitudes(1).unwrap().clone_owned();
        let target = random_matrix(&mut rng, 4, 2);
        let report = pgd_fit(&ws, &target, stack, &FitOptions::default()).unwrap();
        assert_eq!(report.stack.phases(0), &before_phases);
        assert_eq!(report.stack.amplitudes(1).unwrap(), &before_amps);
        assert!((report.objective - target.norm_squared()).abs() < 1e-14);
        assert!(report.converged);
    }

    #[test]
    fn quantization_snaps_to_the_grid_with_stated_ties() {
        // Grid points are fixed points (bitwise).
        for bits in [1u32, 3, 8] {
            let m = 1u64 << bits;
            let grid: DVector<f64> =
                DVector::from_fn(m as usize, |i, _| i as f64 * 2.0 * PI / m as f64);
            let snapped = quantize_phases(&grid, bits);
            for i in 0..m as usize {
                assert_eq!(snapped[i], grid[i]);
            }
        }

        // An interior tie goes to the smaller index: with the {0, π}
        // alphabet, π/2 is equidistant and maps to 0.
        let tie = DVector::from_element(1, 0.5 * PI);
        assert_eq!(quantize_phases(&tie, 1)[0], 0.0);
        // A tie across the wrap also goes to the smaller index (0): 3π/2 is
        // equidistant from π and from 2π ≡ 0.
        let wrap_tie = DVector::from_element(1, 0.75 * (2.0 * PI));
        assert_eq!(quantize_phases(&wrap_tie, 1)[0], 0.0);

        // Negative phases wrap before snapping.
        let neg = DVector::from_element(1, -0.1);
        let snapped = quantize_phases(&neg, 3);
        assert_eq!(snapped[0], 0.0);
    }

    #[test]
    fn quantization_matches_exhaustive_nearest_point_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let two_pi = 2.0 * PI;
        for bits in [1u32, 3, 8] {
            let m = 1u64 << bits;
            let step = two_pi / m as f64;
            for _ in 0..10_000 / 3 {
                let phi = rng.gen::<f64>() * 4.0 * two_pi - 2.0 * two_pi;
                let snapped = quantize_phases(&DVector::from_element(1, phi), bits)[0];
                // Brute force over the alphabet in circular distance.
                let circ = |a: f64, b: f64| {
                    let d = (a - b).rem_euclid(two_pi);
                    d.min(two_pi - d)
                };
                let mut best = 0usize;
                for idx in 1..m as usize {
                    if circ(phi, idx as f64 * step) < circ(phi, best as f64 * step) {
                        best = idx;
                    }
                }
                assert_eq!(snapped, best as f64 * step, "phi {phi} bits {bits}");
                assert!(circ(phi, snapped) <= PI / m as f64 + 1e-12);
            }
        }
    }

    #[test]
    fn quantization_strategies_land_on_the_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let q = 6;
        let kinds = [
            LayerKind::PhaseControlled,
            LayerKind::AmplitudeControlled,
            LayerKind::PhaseControlled,
        ];
        let ws = random_ws(&mut rng, q, 2, 3);
        let target = random_matrix(&mut rng, q, 2);
        let bits = 3;
        let step = 2.0 * PI / (1u64 << bits) as f64;

        for strategy in [
            QuantizationStrategy::PostConvergence,
            QuantizationStrategy::StepByStep,
        ] {
            let stack = random_stack(&mut rng, &kinds, q);
            let opts = FitOptions {
                max_sweeps: 60,
                quantization: strategy,
                phase_bits: bits,
                ..FitOptions::default()
            };
            let report = pgd_fit(&ws, &target, stack, &opts).unwrap();
            for l in [0usize, 2] {
                for &p in report.stack.phases(l).iter() {
                    let idx = p / step;
                    assert!(
                        (idx - idx.round()).abs() < 1e-9,
                        "phase {p} is off the grid"
                    );
                }
            }
            // The reported objectives are consistent with the two stacks.
            let direct = ls_objective(&ws, &report.stack, &target).unwrap();
            assert!((report.objective - direct).abs() <= 1e-10 * direct.max(1.0));
            let cont = ls_objective(&ws, &report.continuous_stack, &target).unwrap();
            assert!((report.continuous_objective - cont).abs() <= 1e-10 * cont.max(1.0));
        }
    }

    #[test]
    fn amplitude_candidates_clamp_onto_the_box_edge() {
        let stack = LayerStack::new(
            &[LayerKind::AmplitudeControlled],
            3,
            0.9,
            0.25,
            2.0,
        )
        .unwrap();
        assert_eq!(stack.project_amplitude(10.0), 2.0);
        assert_eq!(stack.project_amplitude(0.0), 0.25);
        assert_eq!(stack.project_amplitude(1.3), 1.3);
    }
}
