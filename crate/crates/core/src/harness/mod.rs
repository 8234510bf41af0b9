//! Campaign harness: configuration, Monte Carlo driver, baselines, and
//! result emission (per-trial CSV plus grouped summary).

pub mod campaign;
pub mod config;

pub use campaign::{
    aggregate, csv_document, mmimo_baseline, run_campaign, run_trial, scheduled_target,
    solve_target, summary_document, write_outputs, BaselineMode, CampaignOutcome, GroupSummary,
    TargetSolution, TrialRecord, CSV_HEADER,
};
pub use config::{
    Arrangement, CampaignConfig, PhaseVariant, Scenario, Scheme, SweepVar, SPEED_OF_LIGHT,
};
