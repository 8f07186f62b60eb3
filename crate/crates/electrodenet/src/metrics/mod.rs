//! Objective intelligibility predictors and the paired-score correlation
//! analysis used to compare coding strategies.

pub mod corr;
pub mod ncm;
pub mod resample;
pub mod stoi;

pub use corr::{
    average_ranks, correlate, pair_scores, per_snr_breakdown, scores_from_csv, scores_to_csv,
    CorrelationReport, ScoreRow,
};
pub use ncm::{ncm, ncm_with, NcmConfig};
pub use stoi::stoi;
