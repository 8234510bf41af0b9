//! Campaign configuration: the physical scenario, the schemes under
//! comparison, and the Monte Carlo controls, loadable from a TOML file.
//!
//! Every physical constant has a documented default; an empty config file
//! (or none at all) reproduces the reference scenario: a 28 GHz carrier,
//! a 4-antenna feed behind a 12-layer stack of 7×7-atom metasurfaces
//! (8 phase-controlled + 4 amplitude-controlled layers in a 5λ-thick stack),
//! 8 single-antenna users dropped uniformly on a 10 m disk under a 10 m-high
//! transmitter, 15 dBm of transmit power, 10 MHz of bandwidth at a
//! −174 dBm/Hz noise floor, and a path-loss exponent of 3.5 beyond a 1 m
//! reference distance.

use std::path::PathBuf;

use serde::Deserialize;

use crate::geometry::{build_layout, LayoutConfig, SimGeometry};
use crate::propagation::LayerKind;
use crate::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Physical and signal-processing constants of one scenario.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    /// Carrier frequency in Hz.
    pub frequency_hz: f64,
    /// Total transmit power in dBm.
    pub total_power_dbm: f64,
    /// Feed antennas (one RF chain each).
    pub antennas: usize,
    /// Users in the pool; the scheduler picks `antennas` of them.
    pub users: usize,
    /// Meta-atoms per layer; must be a perfect square (square grid).
    pub atoms_per_layer: usize,
    /// Phase-controlled layers.
    pub pc_layers: usize,
    /// Amplitude-controlled layers (may be zero for a phase-only stack).
    pub ac_layers: usize,
    /// Stack thickness in wavelengths.
    pub stack_thickness_wavelengths: f64,
    /// Fixed transmission magnitude of phase-controlled atoms.
    pub pc_magnitude: f64,
    /// Lower edge of the amplitude-controlled range, in dB.
    pub amp_min_db: f64,
    /// Upper edge of the amplitude-controlled range, in dB.
    pub amp_max_db: f64,
    /// Phase alphabet exponent for quantized variants (`M = 2^b`).
    pub phase_bits: u32,
    /// Path-loss exponent beyond the reference distance.
    pub path_loss_exponent: f64,
    /// Path-loss reference distance in meters.
    pub reference_distance_m: f64,
    /// Signal bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Noise power spectral density in dBm/Hz.
    pub noise_psd_dbm_hz: f64,
    /// Height of the feed plane above the ground, meters.
    pub bs_height_m: f64,
    /// Radius of the user drop disk, meters.
    pub cell_radius_m: f64,
    /// Effective feed-antenna aperture in squared wavelengths.
    pub antenna_area_wavelengths_sq: f64,
    /// Condition-number cap for the zero-forcing Gram inversion.
    pub zf_condition_cap: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            frequency_hz: 28e9,
            total_power_dbm: 15.0,
            antennas: 4,
            users: 8,
            atoms_per_layer: 49,
            pc_layers: 8,
            ac_layers: 4,
            stack_thickness_wavelengths: 5.0,
            pc_magnitude: 0.9,
            amp_min_db: -22.0,
            amp_max_db: 13.0,
            phase_bits: 3,
            path_loss_exponent: 3.5,
            reference_distance_m: 1.0,
            bandwidth_hz: 10e6,
            noise_psd_dbm_hz: -174.0,
            bs_height_m: 10.0,
            cell_radius_m: 10.0,
            antenna_area_wavelengths_sq: 0.25,
            zf_condition_cap: 1e12,
        }
    }
}

impl Scenario {
    /// Carrier wavelength in meters.
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency_hz
    }

    /// Transmit power budget in watts.
    pub fn total_power_w(&self) -> f64 {
        10f64.powf((self.total_power_dbm - 30.0) / 10.0)
    }

    /// Receiver noise power in watts over the signal bandwidth.
    pub fn noise_variance(&self) -> f64 {
        crate::channel::noise_variance(self.noise_psd_dbm_hz, self.bandwidth_hz)
    }

    /// Amplitude-controlled transmission range as linear magnitudes.
    pub fn amplitude_bounds(&self) -> (f64, f64) {
        (
            10f64.powf(self.amp_min_db / 20.0),
            10f64.powf(self.amp_max_db / 20.0),
        )
    }

    /// Total layer count.
    pub fn layers(&self) -> usize {
        self.pc_layers + self.ac_layers
    }

    /// Side length of the square atom grid, or an error when
    /// `atoms_per_layer` is not a perfect square.
    pub fn grid_side(&self) -> Result<usize> {
        let side = (self.atoms_per_layer as f64).sqrt().round() as usize;
        if side * side != self.atoms_per_layer || side == 0 {
            return Err(Error::Config(format!(
                "atoms_per_layer must be a positive perfect square, got {}",
                self.atoms_per_layer
            )));
        }
        Ok(side)
    }

    /// Builds the transmitter geometry for this scenario.
    pub fn geometry(&self) -> Result<SimGeometry> {
        let side = self.grid_side()?;
        let wavelength = self.wavelength();
        let mut layout = LayoutConfig::with_wavelength(
            wavelength,
            self.antennas,
            side,
            side,
            self.layers(),
            self.bs_height_m,
        );
        layout.stack_thickness = self.stack_thickness_wavelengths * wavelength;
        layout.antenna_area = self.antenna_area_wavelengths_sq * wavelength * wavelength;
        build_layout(&layout)
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.frequency_hz > 0.0) {
            return fail(format!("frequency_hz must be positive, got {}", self.frequency_hz));
        }
        if self.antennas == 0 {
            return fail("antennas must be at least 1".into());
        }
        if self.users < self.antennas {
            return fail(format!(
                "users ({}) must be at least the number of antennas ({}) so a subset can be scheduled",
                self.users, self.antennas
            ));
        }
        self.grid_side()?;
        if self.atoms_per_layer < self.antennas {
            return fail(format!(
                "atoms_per_layer ({}) must be at least the number of antennas ({})",
                self.atoms_per_layer, self.antennas
            ));
        }
        if self.layers() == 0 {
            return fail("the stack needs at least one layer".into());
        }
        if !(self.pc_magnitude > 0.0 && self.pc_magnitude <= 1.0) {
            return fail(format!(
                "pc_magnitude must lie in (0, 1], got {}",
                self.pc_magnitude
            ));
        }
        if self.amp_min_db > self.amp_max_db {
            return fail(format!(
                "amp_min_db ({}) exceeds amp_max_db ({})",
                self.amp_min_db, self.amp_max_db
            ));
        }
        if self.phase_bits == 0 || self.phase_bits > 16 {
            return fail(format!(
                "phase_bits must lie in 1..=16, got {}",
                self.phase_bits
            ));
        }
        if !(self.stack_thickness_wavelengths > 0.0) {
            return fail("stack_thickness_wavelengths must be positive".into());
        }
        if !(self.bandwidth_hz > 0.0) {
            return fail("bandwidth_hz must be positive".into());
        }
        if !(self.reference_distance_m > 0.0) {
            return fail("reference_distance_m must be positive".into());
        }
        if !(self.cell_radius_m >= 0.0) {
            return fail("cell_radius_m must be nonnegative".into());
        }
        if !(self.bs_height_m > 0.0) {
            return fail("bs_height_m must be positive".into());
        }
        if !(self.antenna_area_wavelengths_sq > 0.0) {
            return fail("antenna_area_wavelengths_sq must be positive".into());
        }
        if !(self.zf_condition_cap > 1.0) {
            return fail("zf_condition_cap must exceed 1".into());
        }
        Ok(())
    }
}

/// Transmit scheme under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Stacked-metasurface transmitter fitting the optimized beamformer.
    SimOpt,
    /// Stacked-metasurface transmitter fitting the zero-forcing beamformer.
    SimZf,
    /// Conventional array driving the optimized beamformer directly.
    MmimoOpt,
    /// Conventional array driving the zero-forcing beamformer directly.
    MmimoZf,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::SimOpt,
        Scheme::SimZf,
        Scheme::MmimoOpt,
        Scheme::MmimoZf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::SimOpt => "sim-opt",
            Scheme::SimZf => "sim-zf",
            Scheme::MmimoOpt => "mmimo-opt",
            Scheme::MmimoZf => "mmimo-zf",
        }
    }

    /// Whether this scheme radiates through the fitted stack.
    pub fn uses_stack(&self) -> bool {
        matches!(self, Scheme::SimOpt | Scheme::SimZf)
    }

    /// Whether the stage-one target comes from the iterative optimizer (as
    /// opposed to the zero-forcing closed form).
    pub fn uses_optimal_target(&self) -> bool {
        matches!(self, Scheme::SimOpt | Scheme::MmimoOpt)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Phase-handling variant of the stack fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseVariant {
    /// Continuous phases, no quantization.
    CntPhase,
    /// Quantize once after the fit converges.
    QntPhase,
    /// Quantize at every fit iteration.
    StepByStepQnt,
}

impl PhaseVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseVariant::CntPhase => "cnt-phase",
            PhaseVariant::QntPhase => "qnt-phase",
            PhaseVariant::StepByStepQnt => "step-by-step-qnt",
        }
    }

    pub fn strategy(&self) -> crate::synth::QuantizationStrategy {
        match self {
            PhaseVariant::CntPhase => crate::synth::QuantizationStrategy::Continuous,
            PhaseVariant::QntPhase => crate::synth::QuantizationStrategy::PostConvergence,
            PhaseVariant::StepByStepQnt => crate::synth::QuantizationStrategy::StepByStep,
        }
    }
}

impl std::fmt::Display for PhaseVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordering of the phase- and amplitude-controlled layers along the
/// propagation direction (the feed side is first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Arrangement {
    /// Amplitude-controlled layers nearest the feed, then phase-controlled.
    RfAcPc,
    /// Amplitude-controlled layers spread evenly through the stack.
    Interlaced,
    /// Phase-controlled layers nearest the feed, then amplitude-controlled.
    RfPcAc,
}

impl Arrangement {
    pub fn as_str(self) -> &'static str {
        match self {
            Arrangement::RfAcPc => "rf-ac-pc",
            Arrangement::Interlaced => "interlaced",
            Arrangement::RfPcAc => "rf-pc-ac",
        }
    }

    /// Layer kinds in propagation order for the given layer counts.
    pub fn kinds(&self, pc_layers: usize, ac_layers: usize) -> Vec<LayerKind> {
        let total = pc_layers + ac_layers;
        match self {
            Arrangement::RfAcPc => {
                let mut v = vec![LayerKind::AmplitudeControlled; ac_layers];
                v.extend(vec![LayerKind::PhaseControlled; pc_layers]);
                v
            }
            Arrangement::RfPcAc => {
                let mut v = vec![LayerKind::PhaseControlled; pc_layers];
                v.extend(vec![LayerKind::AmplitudeControlled; ac_layers]);
                v
            }
            Arrangement::Interlaced => {
                let mut v = vec![LayerKind::PhaseControlled; total];
                // Centers of `ac_layers` equal bins along the stack.
                for i in 0..ac_layers {
                    let pos = ((i as f64 + 0.5) * total as f64 / ac_layers as f64) as usize;
                    v[pos.min(total - 1)] = LayerKind::AmplitudeControlled;
                }
                v
            }
        }
    }
}

impl std::fmt::Display for Arrangement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which scenario quantity the campaign sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize, clap::ValueEnum)]
pub enum SweepVar {
    /// Meta-atoms per layer.
    #[serde(rename = "q")]
    #[value(name = "q")]
    Q,
    /// Phase-controlled layer count.
    #[serde(rename = "l_pc")]
    #[value(name = "l_pc")]
    LPc,
    /// Phase alphabet exponent.
    #[serde(rename = "b")]
    #[value(name = "b")]
    B,
    /// User pool size.
    #[serde(rename = "k")]
    #[value(name = "k")]
    K,
    /// Iteration budget of both optimization stages.
    #[serde(rename = "iterations")]
    #[value(name = "iterations")]
    Iterations,
}

impl SweepVar {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepVar::Q => "q",
            SweepVar::LPc => "l_pc",
            SweepVar::B => "b",
            SweepVar::K => "k",
            SweepVar::Iterations => "iterations",
        }
    }
}

impl std::fmt::Display for SweepVar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full campaign description.
#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub scenario: Scenario,
    /// Schemes to evaluate each trial.
    pub schemes: Vec<Scheme>,
    /// Fit variants evaluated per stack scheme (share each trial's channels).
    pub variants: Vec<PhaseVariant>,
    /// Layer arrangements evaluated per stack scheme.
    pub arrangements: Vec<Arrangement>,
    /// Swept quantity.
    pub sweep: SweepVar,
    /// Sweep points.
    pub sweep_values: Vec<u64>,
    /// Monte Carlo trials per sweep point.
    pub trials: usize,
    /// Master seed; every random draw derives from it.
    pub master_seed: u64,
    /// Iteration budget for the beamforming stage and the fit stage alike.
    pub max_iterations: usize,
    /// Report zero wall-clock times so repeated runs are byte-identical.
    pub deterministic_timing: bool,
    /// Directory for the CSV and summary files.
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawCampaign {
    schemes: Vec<Scheme>,
    variants: Vec<PhaseVariant>,
    arrangements: Vec<Arrangement>,
    sweep: SweepVar,
    sweep_values: Vec<u64>,
    trials: usize,
    master_seed: u64,
    max_iterations: usize,
    deterministic_timing: bool,
    output_dir: PathBuf,
}

impl Default for RawCampaign {
    fn default() -> Self {
        Self {
            schemes: Scheme::ALL.to_vec(),
            variants: vec![PhaseVariant::CntPhase],
            arrangements: vec![Arrangement::RfAcPc],
            sweep: SweepVar::Q,
            sweep_values: vec![49],
            trials: 30,
            master_seed: 7,
            max_iterations: 200,
            deterministic_timing: false,
            output_dir: PathBuf::from("results"),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    scenario: Scenario,
    campaign: RawCampaign,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let raw = RawConfig::default();
        Self::from_raw(raw)
    }
}

impl CampaignConfig {
    fn from_raw(raw: RawConfig) -> Self {
        Self {
            scenario: raw.scenario,
            schemes: raw.campaign.schemes,
            variants: raw.campaign.variants,
            arrangements: raw.campaign.arrangements,
            sweep: raw.campaign.sweep,
            sweep_values: raw.campaign.sweep_values,
            trials: raw.campaign.trials,
            master_seed: raw.campaign.master_seed,
            max_iterations: raw.campaign.max_iterations,
            deterministic_timing: raw.campaign.deterministic_timing,
            output_dir: raw.campaign.output_dir,
        }
    }

    /// Parses a TOML document; unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        let config = Self::from_raw(raw);
        config.validate()?;
        Ok(config)
    }

    /// Loads and validates a TOML config file.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Scenario and iteration budget at one sweep point.
    pub fn at_sweep_value(&self, value: u64) -> (Scenario, usize) {
        let mut scenario = self.scenario.clone();
        let mut iterations = self.max_iterations;
        match self.sweep {
            SweepVar::Q => scenario.atoms_per_layer = value as usize,
            SweepVar::LPc => scenario.pc_layers = value as usize,
            SweepVar::B => scenario.phase_bits = value as u32,
            SweepVar::K => scenario.users = value as usize,
            SweepVar::Iterations => iterations = value as usize,
        }
        (scenario, iterations)
    }

    /// Validates the campaign and every sweep point's scenario.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("schemes must not be empty".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("variants must not be empty".into()));
        }
        if self.arrangements.is_empty() {
            return Err(Error::Config("arrangements must not be empty".into()));
        }
        if self.sweep_values.is_empty() {
            return Err(Error::Config("sweep_values must not be empty".into()));
        }
        for dup_check in [
            self.schemes.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
            self.variants.iter().map(|v| v.as_str()).collect(),
            self.arrangements.iter().map(|a| a.as_str()).collect(),
        ] {
            let mut sorted = dup_check.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != dup_check.len() {
                return Err(Error::Config(format!(
                    "duplicate entries in {dup_check:?}"
                )));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        self.scenario.validate()?;
        for &value in &self.sweep_values {
            let (scenario, iterations) = self.at_sweep_value(value);
            if iterations == 0 {
                return Err(Error::Config(format!(
                    "sweep value {value} yields a zero iteration budget"
                )));
            }
            scenario.validate().map_err(|e| {
                Error::Config(format!("sweep value {value}: {e}"))
            })?;
        }
        Ok(())
    }
}
