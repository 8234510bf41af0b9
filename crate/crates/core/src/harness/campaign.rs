//! Monte Carlo campaign driver.
//!
//! Each trial draws one user drop and one fading realization and evaluates
//! every configured scheme on it, so scheme comparisons are paired. The
//! stage-one product (scheduled subset + target beamformer + power
//! allocation) is computed once per target mode and shared: the `mmimo-*`
//! schemes report its rate directly, while the `sim-*` schemes fit the stack
//! to the target and report the realized rate of the fitted cascade under
//! the same powers.
//!
//! Every random draw derives from the master seed through a fixed tree, so
//! results do not depend on execution order or thread count:
//!
//! ```text
//! trial_seed = derive(master_seed, [sweep_index, trial])
//!   channel draws       derive(trial_seed, [0])
//!   optimizer stage     derive(trial_seed, [1])   (per-subset seeds inside)
//!   zero-forcing stage  derive(trial_seed, [2])
//!   stack fit init      derive(trial_seed, [4, mode, arrangement])
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::beamform::{optimize_beamforming, OptimizerOptions};
use crate::channel::ChannelSet;
use crate::geometry::place_users;
use crate::harness::config::{
    Arrangement, CampaignConfig, PhaseVariant, Scenario, Scheme, SweepVar,
};
use crate::numeric::derive_seed;
use crate::propagation::{cascade, stack_couplings, DiffractionMatrix, LayerStack};
use crate::rate::{sinr, sum_rate, zf_sum_rate, BeamformingSolution};
use crate::scheduler::{select_best, ScheduleResult};
use crate::synth::pgd_fit;
use crate::zf::zf_solve;
use crate::{Complex64, Error, Result};

/// How a target beamformer is produced for a scheduled subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// Iterative sum-rate maximization.
    Opt,
    /// Zero-forcing closed form with waterfilled powers.
    Zf,
}

impl BaselineMode {
    fn seed_tag(self) -> u64 {
        match self {
            BaselineMode::Opt => 0,
            BaselineMode::Zf => 1,
        }
    }
}

fn arrangement_tag(a: Arrangement) -> u64 {
    match a {
        Arrangement::RfAcPc => 0,
        Arrangement::Interlaced => 1,
        Arrangement::RfPcAc => 2,
    }
}

/// Target beamformer for one scheduled subset, its idealized (directly
/// driven) sum rate, and the iterations spent producing it.
#[derive(Debug, Clone)]
pub struct TargetSolution {
    pub solution: BeamformingSolution,
    pub rate: f64,
    pub iterations: usize,
}

/// Solves one subset's beamforming problem in the requested mode.
pub fn solve_target(
    h: &DMatrix<Complex64>,
    rho: &[f64],
    noise_variance: f64,
    total_power: f64,
    mode: BaselineMode,
    max_iterations: usize,
    condition_cap: f64,
    seed: u64,
) -> Result<TargetSolution> {
    match mode {
        BaselineMode::Opt => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let opts = OptimizerOptions {
                max_outer: max_iterations,
                ..OptimizerOptions::default()
            };
            let report =
                optimize_beamforming(h, rho, noise_variance, total_power, &mut rng, &opts)?;
            Ok(TargetSolution {
                solution: report.solution,
                rate: report.objective,
                iterations: report.iterations,
            })
        }
        BaselineMode::Zf => {
            let sol = zf_solve(h, rho, noise_variance, total_power, condition_cap)?;
            let rate = zf_sum_rate(&sol.gains, &sol.powers, rho, noise_variance);
            let solution = BeamformingSolution::new(sol.beamformer, sol.powers, total_power)?;
            Ok(TargetSolution {
                solution,
                rate,
                iterations: 0,
            })
        }
    }
}

/// Digital-array baseline: the precoder is driven directly, with no stack in
/// between, using the same solvers that produce the stack-fit targets.
pub fn mmimo_baseline(
    h: &DMatrix<Complex64>,
    rho: &[f64],
    noise_variance: f64,
    total_power: f64,
    mode: BaselineMode,
    max_iterations: usize,
    condition_cap: f64,
    seed: u64,
) -> Result<BeamformingSolution> {
    solve_target(
        h,
        rho,
        noise_variance,
        total_power,
        mode,
        max_iterations,
        condition_cap,
        seed,
    )
    .map(|t| t.solution)
}

/// Runs the scheduler over all user subsets with the given target mode.
pub fn scheduled_target(
    channels: &ChannelSet,
    streams: usize,
    total_power: f64,
    mode: BaselineMode,
    max_iterations: usize,
    condition_cap: f64,
    stage_seed: u64,
) -> Result<ScheduleResult<TargetSolution>> {
    select_best(
        &channels.h,
        &channels.path_loss,
        channels.noise_variance,
        total_power,
        streams,
        stage_seed,
        |problem| {
            solve_target(
                &problem.h,
                &problem.rho,
                problem.noise_variance,
                problem.total_power,
                mode,
                max_iterations,
                condition_cap,
                problem.seed,
            )
            .map(|t| (t.rate, t))
        },
    )
}

/// One row of the per-trial CSV, plus diagnostics that stay out of the file.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial: usize,
    pub scheme: Scheme,
    /// `None` for schemes without a stack fit; written as `-`.
    pub variant: Option<PhaseVariant>,
    /// `None` for schemes without a stack; written as `-`.
    pub arrangement: Option<Arrangement>,
    pub sweep_value: u64,
    /// Reported metric: realized sum rate for stack schemes, target rate for
    /// directly-driven ones.
    pub sum_rate_bps_hz: f64,
    /// Final squared Frobenius misfit of the stack fit; zero when no fit ran.
    pub fit_residual: f64,
    /// Stage-one iterations of the winning subset plus fit sweeps.
    pub iterations: usize,
    /// Wall-clock cost in milliseconds (zero under deterministic timing).
    pub wall_ms: f64,
    /// The trial seed every draw of this trial derived from.
    pub seed: u64,
    /// Idealized rate of the stage-one target (not written to the CSV).
    pub target_rate: f64,
    /// Realized rate before the final quantization (not written to the CSV;
    /// equals `sum_rate_bps_hz` for continuous-phase rows).
    pub prequant_rate: f64,
}

/// Mean and standard error of one (scheme, variant, arrangement, sweep)
/// group.
#[derive(Debug, Clone)]
pub struct GroupSummary {
    pub scheme: Scheme,
    pub variant: Option<PhaseVariant>,
    pub arrangement: Option<Arrangement>,
    pub sweep_value: u64,
    pub n: usize,
    pub mean_rate: f64,
    pub stderr_rate: f64,
}

/// Everything a campaign produces in memory.
#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    /// All successful trial rows, ordered by (sweep point, trial, scheme
    /// order, arrangement order, variant order).
    pub rows: Vec<TrialRecord>,
    /// Grouped statistics in deterministic configuration order.
    pub groups: Vec<GroupSummary>,
    /// Trials that errored, were logged, and were skipped.
    pub failed_trials: usize,
}

struct StageOutcome {
    schedule: ScheduleResult<TargetSolution>,
    wall_ms: f64,
}

fn elapsed_ms(start: Instant, deterministic: bool) -> f64 {
    if deterministic {
        0.0
    } else {
        start.elapsed().as_secs_f64() * 1e3
    }
}

fn run_stage(
    channels: &ChannelSet,
    scenario: &Scenario,
    mode: BaselineMode,
    max_iterations: usize,
    trial_seed: u64,
    deterministic: bool,
) -> Result<StageOutcome> {
    let start = Instant::now();
    let stage_seed = derive_seed(trial_seed, &[1 + mode.seed_tag()]);
    let schedule = scheduled_target(
        channels,
        scenario.antennas,
        scenario.total_power_w(),
        mode,
        max_iterations,
        scenario.zf_condition_cap,
        stage_seed,
    )?;
    Ok(StageOutcome {
        schedule,
        wall_ms: elapsed_ms(start, deterministic),
    })
}

/// Runs one Monte Carlo trial: one channel realization, every configured
/// scheme. Returns one record per (scheme × arrangement × variant) cell, in
/// configuration order.
pub fn run_trial(
    config: &CampaignConfig,
    sweep_idx: usize,
    trial: usize,
    couplings: Option<&[DiffractionMatrix]>,
) -> Result<Vec<TrialRecord>> {
    let sweep_value = config.sweep_values[sweep_idx];
    let (scenario, max_iterations) = config.at_sweep_value(sweep_value);
    let trial_seed = derive_seed(config.master_seed, &[sweep_idx as u64, trial as u64]);
    let deterministic = config.deterministic_timing;

    let geo = scenario.geometry()?;
    let noise_variance = scenario.noise_variance();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, &[0]));
    let users = place_users(
        &mut rng,
        scenario.users,
        scenario.cell_radius_m,
        scenario.bs_height_m,
        geo.last_layer_center(),
    );
    let channels = ChannelSet::sample(
        &mut rng,
        &users.sim_distances,
        scenario.atoms_per_layer,
        scenario.wavelength(),
        scenario.reference_distance_m,
        scenario.path_loss_exponent,
        noise_variance,
    )?;

    let needs = |mode: BaselineMode| {
        config.schemes.iter().any(|s| {
            s.uses_optimal_target() == matches!(mode, BaselineMode::Opt)
        })
    };
    let opt_stage = if needs(BaselineMode::Opt) {
        Some(run_stage(
            &channels,
            &scenario,
            BaselineMode::Opt,
            max_iterations,
            trial_seed,
            deterministic,
        )?)
    } else {
        None
    };
    let zf_stage = if needs(BaselineMode::Zf) {
        Some(run_stage(
            &channels,
            &scenario,
            BaselineMode::Zf,
            max_iterations,
            trial_seed,
            deterministic,
        )?)
    } else {
        None
    };
    let stage_for = |scheme: Scheme| -> &StageOutcome {
        if scheme.uses_optimal_target() {
            opt_stage.as_ref().expect("optimizer stage was prepared")
        } else {
            zf_stage.as_ref().expect("zero-forcing stage was prepared")
        }
    };

    let mut records = Vec::new();
    for &scheme in &config.schemes {
        let stage = stage_for(scheme);
        let target = &stage.schedule.solution;
        if !scheme.uses_stack() {
            let rate = stage.schedule.rate;
            if !rate.is_finite() || rate < 0.0 {
                return Err(Error::Domain(format!(
                    "{scheme} produced an invalid sum rate {rate}"
                )));
            }
            records.push(TrialRecord {
                trial,
                scheme,
                variant: None,
                arrangement: None,
                sweep_value,
                sum_rate_bps_hz: rate,
                fit_residual: 0.0,
                iterations: target.iterations,
                wall_ms: stage.wall_ms,
                seed: trial_seed,
                target_rate: rate,
                prequant_rate: rate,
            });
            continue;
        }

        let ws = couplings.ok_or_else(|| {
            Error::Structure("stack schemes need precomputed layer couplings".into())
        })?;
        let (h_sub, rho_sub) = channels.reduce(&stage.schedule.subset)?;
        let (amp_min, amp_max) = scenario.amplitude_bounds();
        let mode = if scheme.uses_optimal_target() {
            BaselineMode::Opt
        } else {
            BaselineMode::Zf
        };
        for &arrangement in &config.arrangements {
            let kinds = arrangement.kinds(scenario.pc_layers, scenario.ac_layers);
            let mut init = LayerStack::new(
                &kinds,
                scenario.atoms_per_layer,
                scenario.pc_magnitude,
                amp_min,
                amp_max,
            )?;
            let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                trial_seed,
                &[4, mode.seed_tag(), arrangement_tag(arrangement)],
            ));
            init.randomize(&mut init_rng);

            for &variant in &config.variants {
                let start = Instant::now();
                let opts = crate::synth::FitOptions {
                    max_sweeps: max_iterations,
                    quantization: variant.strategy(),
                    phase_bits: scenario.phase_bits,
                    ..crate::synth::FitOptions::default()
                };
                let report = pgd_fit(ws, &target.solution.beamformer, init.clone(), &opts)?;
                let realized = realized_rate(
                    ws,
                    &report.stack,
                    &h_sub,
                    &rho_sub,
                    &target.solution.powers,
                    noise_variance,
                )?;
                let prequant = if variant == PhaseVariant::CntPhase {
                    realized
                } else {
                    realized_rate(
                        ws,
                        &report.continuous_stack,
                        &h_sub,
                        &rho_sub,
                        &target.solution.powers,
                        noise_variance,
                    )?
                };
                if !realized.is_finite() || realized < 0.0 {
                    return Err(Error::Domain(format!(
                        "{scheme}/{variant}/{arrangement} produced an invalid sum rate {realized}"
                    )));
                }
                records.push(TrialRecord {
                    trial,
                    scheme,
                    variant: Some(variant),
                    arrangement: Some(arrangement),
                    sweep_value,
                    sum_rate_bps_hz: realized,
                    fit_residual: report.objective,
                    iterations: target.iterations + report.sweeps,
                    wall_ms: stage.wall_ms + elapsed_ms(start, deterministic),
                    seed: trial_seed,
                    target_rate: stage.schedule.rate,
                    prequant_rate: prequant,
                });
            }
        }
    }
    Ok(records)
}

/// Sum rate the fitted stack actually delivers to the scheduled users under
/// the stage-one power allocation.
fn realized_rate(
    ws: &[DiffractionMatrix],
    stack: &LayerStack,
    h_sub: &DMatrix<Complex64>,
    rho_sub: &[f64],
    powers: &[f64],
    noise_variance: f64,
) -> Result<f64> {
    let g = cascade(ws, stack)?;
    let sinrs = sinr(h_sub, rho_sub, &g, powers, noise_variance)?;
    Ok(sum_rate(&sinrs))
}

/// Runs every (sweep point × trial) in parallel and aggregates.
///
/// Trials that fail are logged through `log::warn!` and skipped; the
/// campaign continues. The output is independent of thread count and
/// execution order.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignOutcome> {
    config.validate()?;
    let any_stack = config.schemes.iter().any(Scheme::uses_stack);
    let mut couplings: Vec<Option<Vec<DiffractionMatrix>>> = Vec::new();
    for &value in &config.sweep_values {
        if any_stack {
            let (scenario, _) = config.at_sweep_value(value);
            couplings.push(Some(stack_couplings(&scenario.geometry()?)?));
        } else {
            couplings.push(None);
        }
    }

    let tasks: Vec<(usize, usize)> = (0..config.sweep_values.len())
        .flat_map(|si| (0..config.trials).map(move |t| (si, t)))
        .collect();
    let results: Vec<(usize, usize, Result<Vec<TrialRecord>>)> = tasks
        .into_par_iter()
        .map(|(si, t)| {
            let ws = couplings[si].as_deref();
            (si, t, run_trial(config, si, t, ws))
        })
        .collect();

    let mut rows = Vec::new();
    let mut failed_trials = 0usize;
    for (si, t, result) in results {
        match result {
            Ok(records) => rows.extend(records),
            Err(e) => {
                failed_trials += 1;
                log::warn!(
                    "trial {t} at sweep value {} failed and was skipped: {e}",
                    config.sweep_values[si]
                );
            }
        }
    }
    let groups = aggregate(config, &rows);
    Ok(CampaignOutcome {
        rows,
        groups,
        failed_trials,
    })
}

fn group_key(
    scheme: Scheme,
    variant: Option<PhaseVariant>,
    arrangement: Option<Arrangement>,
    sweep_value: u64,
) -> (u64, &'static str, &'static str, &'static str) {
    (
        sweep_value,
        scheme.as_str(),
        variant.map_or("-", PhaseVariant::as_str),
        arrangement.map_or("-", Arrangement::as_str),
    )
}

/// Groups rows by (scheme, variant, arrangement, sweep value) and computes
/// mean and standard error of the sum rate. Group order follows the
/// configuration; the statistics do not depend on row order.
pub fn aggregate(config: &CampaignConfig, rows: &[TrialRecord]) -> Vec<GroupSummary> {
    let mut cells: Vec<(Scheme, Option<PhaseVariant>, Option<Arrangement>, u64)> = Vec::new();
    for &value in &config.sweep_values {
        for &scheme in &config.schemes {
            if scheme.uses_stack() {
                for &arrangement in &config.arrangements {
                    for &variant in &config.variants {
                        cells.push((scheme, Some(variant), Some(arrangement), value));
                    }
                }
            } else {
                cells.push((scheme, None, None, value));
            }
        }
    }

    cells
        .into_iter()
        .map(|(scheme, variant, arrangement, value)| {
            let key = group_key(scheme, variant, arrangement, value);
            let mut members: Vec<(usize, f64)> = rows
                .iter()
                .filter(|r| group_key(r.scheme, r.variant, r.arrangement, r.sweep_value) == key)
                .map(|r| (r.trial, r.sum_rate_bps_hz))
                .collect();
            // Summation order is pinned to the trial index so a permuted row
            // list aggregates to bitwise-identical statistics.
            members.sort_by_key(|&(trial, _)| trial);
            let n = members.len();
            let mean = if n == 0 {
                f64::NAN
            } else {
                members.iter().map(|&(_, r)| r).sum::<f64>() / n as f64
            };
            let stderr = if n < 2 {
                f64::NAN
            } else {
                let ss = members
                    .iter()
                    .map(|&(_, r)| (r - mean) * (r - mean))
                    .sum::<f64>();
                (ss / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt()
            };
            GroupSummary {
                scheme,
                variant,
                arrangement,
                sweep_value: value,
                n,
                mean_rate: mean,
                stderr_rate: stderr,
            }
        })
        .collect()
}

/// Exact header of the per-trial CSV.
pub const CSV_HEADER: &str =
    "trial,scheme,variant,arrangement,sweep_name,sweep_value,sum_rate_bps_hz,fit_residual,iterations,wall_ms,seed";

/// Renders the per-trial CSV (newline-terminated rows, full double
/// precision, dot decimal separator).
pub fn csv_document(sweep: SweepVar, rows: &[TrialRecord]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let variant = r.variant.map_or("-", |v| v.as_str());
        let arrangement = r.arrangement.map_or("-", |a| a.as_str());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.trial,
            r.scheme,
            variant,
            arrangement,
            sweep,
            r.sweep_value,
            r.sum_rate_bps_hz,
            r.fit_residual,
            r.iterations,
            r.wall_ms,
            r.seed
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Renders the grouped summary as a whitespace-separated table with comment
/// headers.
pub fn summary_document(config: &CampaignConfig, outcome: &CampaignOutcome) -> String {
    let mut out = String::new();
    out.push_str("# sum-rate summary, one group per (scheme, variant, arrangement, sweep point)\n");
    let _ = writeln!(out, "# sweep: {}", config.sweep);
    let _ = writeln!(out, "# trials requested per sweep point: {}", config.trials);
    let _ = writeln!(out, "# trials failed and skipped: {}", outcome.failed_trials);
    out.push_str("# columns: scheme variant arrangement sweep_name sweep_value n mean_rate_bps_hz stderr_rate_bps_hz\n");
    for g in &outcome.groups {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            g.scheme,
            g.variant.map_or("-", |v| v.as_str()),
            g.arrangement.map_or("-", |a| a.as_str()),
            config.sweep,
            g.sweep_value,
            g.n,
            g.mean_rate,
            g.stderr_rate
        );
    }
    out
}

/// Writes `trials.csv` and `summary.txt` into the configured output
/// directory, creating it if needed. Returns the two paths.
pub fn write_outputs(
    config: &CampaignConfig,
    outcome: &CampaignOutcome,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(&config.output_dir)?;
    let csv_path = config.output_dir.join("trials.csv");
    let summary_path = config.output_dir.join("summary.txt");
    std::fs::write(&csv_path, csv_document(config.sweep, &outcome.rows))?;
    std::fs::write(&summary_path, summary_document(config, outcome))?;
    Ok((csv_path, summary_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_user_channels;

    fn tiny_config() -> CampaignConfig {
        let mut config = CampaignConfig::default();
        config.scenario.antennas = 2;
        config.scenario.users = 4;
        config.scenario.atoms_per_layer = 16;
        config.scenario.pc_layers = 2;
        config.scenario.ac_layers = 1;
        config.scenario.phase_bits = 2;
        config.schemes = Scheme::ALL.to_vec();
        config.variants = vec![PhaseVariant::CntPhase, PhaseVariant::StepByStepQnt];
        config.arrangements = vec![Arrangement::RfAcPc, Arrangement::RfPcAc];
        config.sweep = SweepVar::Q;
        config.sweep_values = vec![16];
        config.trials = 2;
        config.master_seed = 11;
        config.max_iterations = 12;
        config.deterministic_timing = true;
        config
    }

    #[test]
    fn trial_rows_share_the_stage_products() {
        let config = tiny_config();
        let outcome = run_campaign(&config).unwrap();
        assert_eq!(outcome.failed_trials, 0);
        // 2 direct schemes + 2 stack schemes × 2 arrangements × 2 variants.
        assert_eq!(outcome.rows.len(), config.trials * (2 + 2 * 2 * 2));
        for trial in 0..config.trials {
            let rows: Vec<&TrialRecord> = outcome
                .rows
                .iter()
                .filter(|r| r.trial == trial)
                .collect();
            let mmimo_opt = rows
                .iter()
                .find(|r| r.scheme == Scheme::MmimoOpt)
                .unwrap();
            let mmimo_zf = rows.iter().find(|r| r.scheme == Scheme::MmimoZf).unwrap();
            assert_eq!(mmimo_opt.fit_residual, 0.0);
            assert_eq!(mmimo_zf.iterations, 0);
            for r in &rows {
                assert!(r.sum_rate_bps_hz.is_finite() && r.sum_rate_bps_hz >= 0.0);
                assert_eq!(r.wall_ms, 0.0);
                let expected_target = if r.scheme.uses_optimal_target() {
                    mmimo_opt.sum_rate_bps_hz
                } else {
                    mmimo_zf.sum_rate_bps_hz
                };
                // The fit target is exactly the directly-driven product.
                assert_eq!(r.target_rate, expected_target);
                if r.scheme.uses_stack() {
                    assert!(r.fit_residual >= 0.0);
                    assert!(r.iterations > 0);
                    if r.variant == Some(PhaseVariant::CntPhase) {
                        assert_eq!(r.prequant_rate, r.sum_rate_bps_hz);
                    }
                } else {
                    assert_eq!(r.variant, None);
                    assert_eq!(r.arrangement, None);
                }
            }
        }
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let config = tiny_config();
        let a = run_campaign(&config).unwrap();
        let b = run_campaign(&config).unwrap();
        assert_eq!(
            csv_document(config.sweep, &a.rows),
            csv_document(config.sweep, &b.rows)
        );
        assert_eq!(summary_document(&config, &a), summary_document(&config, &b));
        // A different master seed must change the data.
        let mut other = config.clone();
        other.master_seed ^= 0xdead_beef;
        let c = run_campaign(&other).unwrap();
        assert_ne!(
            csv_document(config.sweep, &a.rows),
            csv_document(other.sweep, &c.rows)
        );
    }

    #[test]
    fn aggregation_is_row_order_invariant_and_matches_hand_stats() {
        let config = tiny_config();
        let outcome = run_campaign(&config).unwrap();
        let mut reversed = outcome.clone();
        reversed.rows.reverse();
        let regrouped = aggregate(&config, &reversed.rows);
        assert_eq!(outcome.groups.len(), regrouped.len());
        for (a, b) in outcome.groups.iter().zip(&regrouped) {
            assert_eq!(a.n, b.n);
            assert_eq!(a.mean_rate.to_bits(), b.mean_rate.to_bits());
            assert_eq!(a.stderr_rate.to_bits(), b.stderr_rate.to_bits());
        }

        // Hand recomputation for one group.
        let g = &outcome.groups[0];
        let key_rows: Vec<f64> = outcome
            .rows
            .iter()
            .filter(|r| {
                r.scheme == g.scheme
                    && r.variant == g.variant
                    && r.arrangement == g.arrangement
                    && r.sweep_value == g.sweep_value
            })
            .map(|r| r.sum_rate_bps_hz)
            .collect();
        assert_eq!(key_rows.len(), g.n);
        let mean = key_rows.iter().sum::<f64>() / g.n as f64;
        assert!((g.mean_rate - mean).abs() <= 1e-15 * mean.abs());
        let var = key_rows.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / (g.n as f64 - 1.0);
        assert!((g.stderr_rate - (var / g.n as f64).sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn single_trial_summary_equals_that_trial() {
        let mut config = tiny_config();
        config.trials = 1;
        config.schemes = vec![Scheme::MmimoZf];
        let outcome = run_campaign(&config).unwrap();
        assert_eq!(outcome.rows.len(), 1);
        assert_eq!(outcome.groups.len(), 1);
        assert_eq!(outcome.groups[0].n, 1);
        assert_eq!(
            outcome.groups[0].mean_rate.to_bits(),
            outcome.rows[0].sum_rate_bps_hz.to_bits()
        );
        assert!(outcome.groups[0].stderr_rate.is_nan());
    }

    #[test]
    fn csv_schema_is_pinned() {
        let config = tiny_config();
        let outcome = run_campaign(&config).unwrap();
        let doc = csv_document(config.sweep, &outcome.rows);
        let mut lines = doc.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let first = lines.next().unwrap();
        let fields: Vec<&str> = first.split(',').collect();
        assert_eq!(fields.len(), 11);
        assert_eq!(fields[0], "0");
        assert_eq!(fields[4], "q");
        assert_eq!(fields[5], "16");
        // Direct schemes carry placeholder markers.
        let mmimo_line = doc
            .lines()
            .find(|l| l.starts_with("0,mmimo-opt"))
            .unwrap();
        let fields: Vec<&str> = mmimo_line.split(',').collect();
        assert_eq!(fields[2], "-");
        assert_eq!(fields[3], "-");
        assert_eq!(fields[7], "0");
        assert!(doc.ends_with('\n'));
        // Every numeric field round-trips through parse.
        for line in doc.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            f[6].parse::<f64>().unwrap();
            f[7].parse::<f64>().unwrap();
            f[8].parse::<usize>().unwrap();
            f[9].parse::<f64>().unwrap();
            f[10].parse::<u64>().unwrap();
        }
    }

    #[test]
    fn single_stream_baseline_is_a_matched_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = sample_user_channels(&mut rng, 1, 12);
        let rho = vec![2.5e-9];
        let solution = mmimo_baseline(
            &h,
            &rho,
            1e-12,
            0.05,
            BaselineMode::Opt,
            400,
            1e12,
            77,
        )
        .unwrap();
        // One stream: the optimum aligns the beam with the channel and
        // spends the whole budget.
        let g = solution.beamformer.column(0).into_owned();
        let hv = h.row(0).adjoint() / Complex64::new(h.row(0).norm(), 0.0);
        let corr = (hv.adjoint() * &g)[(0, 0)].norm();
        assert!((corr - 1.0).abs() < 1e-6, "alignment {corr}");
        assert!((solution.powers[0] - 0.05).abs() < 1e-9);

        let zf = mmimo_baseline(&h, &rho, 1e-12, 0.05, BaselineMode::Zf, 400, 1e12, 77)
            .unwrap();
        let corr_zf = (hv.adjoint() * zf.beamformer.column(0).into_owned())[(0, 0)].norm();
        assert!((corr_zf - 1.0).abs() < 1e-9);
    }
}
