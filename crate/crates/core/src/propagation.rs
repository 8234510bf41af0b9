//! Wave propagation through the layer stack: inter-plane diffraction
//! matrices, programmable layer coefficients, and the end-to-end cascade.
//!
//! Propagation between consecutive planes follows the Rayleigh–Sommerfeld
//! kernel: the coupling from element `q̃` in one plane to element `q` in the
//! next is
//!
//! ```text
//! w(q, q̃) = (A cosθ / d) · (1/(2πd) − j/λ) · exp(j 2π d / λ)
//! ```
//!
//! where `d` is the element separation, `cosθ = gap/d` the obliquity factor,
//! `A` the source element area, and `λ` the wavelength. A stack of `L`
//! programmable layers with coefficient vectors `γ_l` then acts on the feed
//! as `G = Γ_L W_L ⋯ Γ_1 W_1` with `Γ_l = diag(γ_l)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::{Error, Result};

/// Complex coupling matrix between two consecutive planes.
#[derive(Debug, Clone)]
pub struct DiffractionMatrix {
    matrix: DMatrix<Complex64>,
}

impl DiffractionMatrix {
    /// Wraps a precomputed coupling matrix (mostly useful in tests).
    pub fn from_matrix(matrix: DMatrix<Complex64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// Destination elements (rows).
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Source elements (columns).
    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Control mode of one metasurface layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Fixed transmittance magnitude, adjustable phase.
    PhaseControlled,
    /// Adjustable transmittance magnitude inside a box, fixed phase.
    AmplitudeControlled,
}

#[derive(Debug, Clone)]
enum LayerParams {
    Pc { phases: DVector<f64> },
    Ac { amplitudes: DVector<f64>, phases: DVector<f64> },
}

/// Programmable coefficients of the whole stack.
///
/// Invariants are enforced on every mutation: phase-controlled coefficients
/// keep magnitude exactly equal to the common transmittance, phases live in
/// `[0, 2π)`, and amplitude-controlled magnitudes stay inside the
/// `[amp_min, amp_max]` box while their phases stay fixed.
#[derive(Debug, Clone)]
pub struct LayerStack {
    layers: Vec<LayerParams>,
    kinds: Vec<LayerKind>,
    atoms: usize,
    pc_magnitude: f64,
    amp_min: f64,
    amp_max: f64,
}

fn wrap_phase(phi: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = phi.rem_euclid(two_pi);
    // rem_euclid can round up to exactly 2π for tiny negative inputs.
    if w >= two_pi {
        0.0
    } else {
        w
    }
}

impl LayerStack {
    /// Creates a stack with the given per-layer control modes. Initial state:
    /// phase-controlled phases at zero, amplitude-controlled magnitudes at
    /// one (clamped into the box) with fixed phases at zero.
    pub fn new(
        kinds: &[LayerKind],
        atoms: usize,
        pc_magnitude: f64,
        amp_min: f64,
        amp_max: f64,
    ) -> Result<Self> {
        if kinds.is_empty() || atoms == 0 {
            return Err(Error::Config(format!(
                "stack needs at least one layer and one atom (layers={}, atoms={atoms})",
                kinds.len()
            )));
        }
        if !(pc_magnitude > 0.0 && pc_magnitude <= 1.0) {
            return Err(Error::Config(format!(
                "phase-controlled magnitude must lie in (0, 1], got {pc_magnitude}"
            )));
        }
        if !(amp_min > 0.0 && amp_min <= amp_max && amp_max.is_finite()) {
            return Err(Error::Config(format!(
                "amplitude box must satisfy 0 < min <= max, got [{amp_min}, {amp_max}]"
            )));
        }
        let init_amp = 1.0f64.clamp(amp_min, amp_max);
        let layers = kinds
            .iter()
            .map(|kind| match kind {
                LayerKind::PhaseControlled => LayerParams::Pc {
                    phases: DVector::zeros(atoms),
                },
                LayerKind::AmplitudeControlled => LayerParams::Ac {
                    amplitudes: DVector::from_element(atoms, init_amp),
                    phases: DVector::zeros(atoms),
                },
            })
            .collect();
        Ok(Self {
            layers,
            kinds: kinds.to_vec(),
            atoms,
            pc_magnitude,
            amp_min,
            amp_max,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms
    }

    pub fn kind(&self, layer: usize) -> LayerKind {
        self.kinds[layer]
    }

    pub fn kinds(&self) -> &[LayerKind] {
        &self.kinds
    }

    pub fn pc_layer_count(&self) -> usize {
        self.kinds
            .iter()
            .filter(|k| **k == LayerKind::PhaseControlled)
            .count()
    }

    pub fn ac_layer_count(&self) -> usize {
        self.layers.len() - self.pc_layer_count()
    }

    pub fn pc_magnitude(&self) -> f64 {
        self.pc_magnitude
    }

    /// Lower and upper amplitude limits for amplitude-controlled layers.
    pub fn amplitude_bounds(&self) -> (f64, f64) {
        (self.amp_min, self.amp_max)
    }

    /// Clamps a candidate amplitude into the feasible box.
    pub fn project_amplitude(&self, a: f64) -> f64 {
        a.clamp(self.amp_min, self.amp_max)
    }

    /// Phase vector of a layer: the adjustable phases of a phase-controlled
    /// layer, or the fixed phases of an amplitude-controlled layer.
    pub fn phases(&self, layer: usize) -> &DVector<f64> {
        match &self.layers[layer] {
            LayerParams::Pc { phases } => phases,
            LayerParams::Ac { phases, .. } => phases,
        }
    }

    /// Amplitude vector of an amplitude-controlled layer.
    pub fn amplitudes(&self, layer: usize) -> Option<&DVector<f64>> {
        match &self.layers[layer] {
            LayerParams::Pc { .. } => None,
            LayerParams::Ac { amplitudes, .. } => Some(amplitudes),
        }
    }

    /// Replaces the phases of a phase-controlled layer, wrapping into `[0, 2π)`.
    pub fn set_phases(&mut self, layer: usize, phases: &DVector<f64>) {
        assert_eq!(phases.len(), self.atoms, "phase vector length mismatch");
        match &mut self.layers[layer] {
            LayerParams::Pc { phases: p } => *p = phases.map(wrap_phase),
            LayerParams::Ac { .. } => {
                panic!("layer {layer} is amplitude-controlled; its phases are fixed")
            }
        }
    }

    /// Replaces the amplitudes of an amplitude-controlled layer, clamping
    /// into the feasible box.
    pub fn set_amplitudes(&mut self, layer: usize, amplitudes: &DVector<f64>) {
        assert_eq!(amplitudes.len(), self.atoms, "amplitude vector length mismatch");
        let (lo, hi) = (self.amp_min, self.amp_max);
        match &mut self.layers[layer] {
            LayerParams::Ac { amplitudes: a, .. } => *a = amplitudes.map(|x| x.clamp(lo, hi)),
            LayerParams::Pc { .. } => {
                panic!("layer {layer} is phase-controlled; it has no adjustable amplitudes")
            }
        }
    }

    /// Configures the fixed hardware phases of an amplitude-controlled layer.
    pub fn set_fixed_phases(&mut self, layer: usize, phases: &DVector<f64>) {
        assert_eq!(phases.len(), self.atoms, "phase vector length mismatch");
        match &mut self.layers[layer] {
            LayerParams::Ac { phases: p, .. } => *p = phases.map(wrap_phase),
            LayerParams::Pc { .. } => {
                panic!("layer {layer} is phase-controlled; use set_phases instead")
            }
        }
    }

    /// Draws fresh adjustable parameters: phase-controlled phases uniform on
    /// `[0, 2π)`; amplitude-controlled magnitudes reset to one (clamped).
    pub fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let init_amp = 1.0f64.clamp(self.amp_min, self.amp_max);
        for layer in &mut self.layers {
            match layer {
                LayerParams::Pc { phases } => {
                    *phases = DVector::from_fn(self.atoms, |_, _| rng.gen::<f64>() * 2.0 * PI);
                }
                LayerParams::Ac { amplitudes, .. } => {
                    *amplitudes = DVector::from_element(self.atoms, init_amp);
                }
            }
        }
    }

    /// Complex coefficient vector `γ_l` of one layer.
    pub fn coefficients(&self, layer: usize) -> DVector<Complex64> {
        match &self.layers[layer] {
            LayerParams::Pc { phases } => {
                phases.map(|p| Complex64::from_polar(self.pc_magnitude, p))
            }
            LayerParams::Ac { amplitudes, phases } => DVector::from_fn(self.atoms, |q, _| {
                Complex64::from_polar(amplitudes[q], phases[q])
            }),
        }
    }
}

/// Rayleigh–Sommerfeld coupling matrix between a source plane (`src`,
/// columns) and a destination plane (`dst`, rows) separated axially by `gap`.
///
/// `element_area` is the effective area of one source element. Entry
/// magnitude falls off monotonically with transverse offset at fixed gap.
pub fn diffraction_matrix(
    src: &[[f64; 3]],
    dst: &[[f64; 3]],
    gap: f64,
    element_area: f64,
    wavelength: f64,
) -> Result<DiffractionMatrix> {
    if !(gap > 0.0) {
        return Err(Error::Domain(format!(
            "plane separation must be positive, got {gap}"
        )));
    }
    if !(element_area > 0.0) || !(wavelength > 0.0) {
        return Err(Error::Domain(format!(
            "element area and wavelength must be positive (area={element_area}, wavelength={wavelength})"
        )));
    }
    if src.is_empty() || dst.is_empty() {
        return Err(Error::Structure("empty point set".into()));
    }

    let mut m = DMatrix::zeros(dst.len(), src.len());
    for (i, d) in dst.iter().enumerate() {
        for (j, s) in src.iter().enumerate() {
            let dx = d[0] - s[0];
            let dy = d[1] - s[1];
            let r = (dx * dx + dy * dy + gap * gap).sqrt();
            let cos_theta = gap / r;
            let scale = element_area * cos_theta / r;
            let kernel = Complex64::new(1.0 / (2.0 * PI * r), -1.0 / wavelength);
            let phase = Complex64::from_polar(1.0, 2.0 * PI * r / wavelength);
            m[(i, j)] = scale * kernel * phase;
        }
    }
    Ok(DiffractionMatrix { matrix: m })
}

/// Builds all coupling matrices of a transmitter geometry: feed array to
/// first layer, then layer to layer. Returns `L` matrices; the first is
/// `Q × N`, the rest `Q × Q`.
pub fn stack_couplings(geo: &crate::geometry::SimGeometry) -> Result<Vec<DiffractionMatrix>> {
    let mut ws = Vec::with_capacity(geo.layer_count());
    ws.push(diffraction_matrix(
        &geo.antenna_positions,
        &geo.layer_positions[0],
        geo.array_gap,
        geo.antenna_area,
        geo.wavelength,
    )?);
    for l in 1..geo.layer_count() {
        ws.push(diffraction_matrix(
            &geo.layer_positions[l - 1],
            &geo.layer_positions[l],
            geo.layer_gap,
            geo.meta_atom_area,
            geo.wavelength,
        )?);
    }
    Ok(ws)
}

pub(crate) fn check_stack_dims(ws: &[DiffractionMatrix], stack: &LayerStack) -> Result<()> {
    if ws.is_empty() {
        return Err(Error::Structure("empty coupling list".into()));
    }
    if ws.len() != stack.layer_count() {
        return Err(Error::Structure(format!(
            "{} coupling matrices but {} layers",
            ws.len(),
            stack.layer_count()
        )));
    }
    for (l, w) in ws.iter().enumerate() {
        if w.nrows() != stack.atom_count() {
            return Err(Error::Structure(format!(
                "coupling {l} has {} rows but layers have {} atoms",
                w.nrows(),
                stack.atom_count()
            )));
        }
        if l > 0 && w.ncols() != ws[l - 1].nrows() {
            return Err(Error::Structure(format!(
                "coupling {l} has {} columns but previous plane has {} elements",
                w.ncols(),
                ws[l - 1].nrows()
            )));
        }
    }
    Ok(())
}

/// Scales row `i` of `m` by `gamma[i]`, i.e. computes `diag(gamma) * m` in place.
pub(crate) fn scale_rows(m: &mut DMatrix<Complex64>, gamma: &DVector<Complex64>) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] *= gamma[i];
        }
    }
}

/// End-to-end response of the stack: `G = Γ_L W_L ⋯ Γ_1 W_1`.
pub fn cascade(ws: &[DiffractionMatrix], stack: &LayerStack) -> Result<DMatrix<Complex64>> {
    check_stack_dims(ws, stack)?;
    let mut g = ws[0].matrix().clone();
    scale_rows(&mut g, &stack.coefficients(0));
    for l in 1..ws.len() {
        g = ws[l].matrix() * g;
        scale_rows(&mut g, &stack.coefficients(l));
    }
    Ok(g)
}

/// Suffix and prefix products around one layer: for layer `l` (0-based),
/// returns `(E_l, B_l)` with
///
/// - `E_l = Γ_L W_L ⋯ Γ_{l+2} W_{l+2}` (identity for the last layer), and
/// - `B_l = W_{l+1} Γ_l W_l ⋯ Γ_1 W_1` (just `W_1` for the first layer),
///
/// written here in 1-based math notation, so that `G = E_l Γ_l B_l`.
pub fn partial_products(
    ws: &[DiffractionMatrix],
    stack: &LayerStack,
    layer: usize,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    check_stack_dims(ws, stack)?;
    let l_total = ws.len();
    if layer >= l_total {
        return Err(Error::Structure(format!(
            "layer index {layer} out of range for {l_total} layers"
        )));
    }

    let q = stack.atom_count();
    let mut e = DMatrix::identity(q, q);
    for l in ((layer + 1)..l_total).rev() {
        let mut t = ws[l].matrix().clone();
        scale_rows(&mut t, &stack.coefficients(l));
        e *= t;
    }

    let mut b = ws[0].matrix().clone();
    for l in 1..=layer {
        scale_rows(&mut b, &stack.coefficients(l - 1));
        b = ws[l].matrix() * b;
    }

    Ok((e, b))
}

/// Total power radiated by the stack output: `Σ_i powers[i] · ‖g_i‖²` over
/// the columns of `g`.
pub fn radiated_power(g: &DMatrix<Complex64>, powers: &[f64]) -> f64 {
    assert_eq!(g.ncols(), powers.len(), "one power per beamformer column");
    g.column_iter()
        .zip(powers)
        .map(|(col, &p)| p * col.norm_squared())
        .sum()
}

/// Upper bound on the radiated power of any feasible stack configuration:
/// `amp_max^(2·L_ac) · Π_l β_max(W_lᴴ W_l) · Σ_i powers[i]`, where `β_max`
/// is the largest eigenvalue (squared spectral norm).
pub fn radiated_power_bound(
    ws: &[DiffractionMatrix],
    stack: &LayerStack,
    powers: &[f64],
) -> Result<f64> {
    check_stack_dims(ws, stack)?;
    let (_, amp_max) = stack.amplitude_bounds();
    let amp_factor = amp_max.powi(2 * stack.ac_layer_count() as i32);
    let coupling_factor: f64 = ws.iter().map(|w| spectral_norm_sq(w.matrix())).product();
    let total_power: f64 = powers.iter().sum();
    Ok(amp_factor * coupling_factor * total_power)
}

/// Largest eigenvalue of `MᴴM` (squared spectral norm of `M`), by power
/// iteration with a deterministic start vector. Converges to relative
/// tolerance `1e-10` or stops after `10^4` iterations.
pub fn spectral_norm_sq(m: &DMatrix<Complex64>) -> f64 {
    let s = m.adjoint() * m;
    let n = s.nrows();
    if n == 0 {
        return 0.0;
    }
    // Deterministic, aperiodic start vector so reruns are bit-identical.
    let mut v = DVector::from_fn(n, |i, _| {
        Complex64::new(1.0 + 0.01 * (i % 11) as f64, 0.003 * (i % 7) as f64)
    });
    v /= Complex64::new(v.norm(), 0.0);

    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let sv = &s * &v;
        let norm = sv.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = sv.dotc(&v).re.abs();
        v = sv / Complex64::new(norm, 0.0);
        if (next - lambda).abs() <= 1e-10 * next.max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}
