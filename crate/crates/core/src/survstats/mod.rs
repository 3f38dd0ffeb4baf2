//! Survival statistics: Cox partial likelihood, Bernoulli KL distillation
//! loss, Harrell's concordance index, Kaplan–Meier and the log-rank test.

mod concordance;
mod cox;
mod gamma;
mod km;
mod kl;
mod logrank;

pub use concordance::concordance_index;
pub use cox::{cox_loss, cox_loss_value, RiskSetView};
pub use gamma::{chi_square_sf, ln_gamma, regularized_gamma_q};
pub use kl::{bernoulli_kl, kl_loss, KL_CLAMP};
pub use km::{kaplan_meier, KmCurve};
pub use logrank::{log_rank_test, LogRank};

use crate::numcore::NumError;

#[derive(Debug, thiserror::Error)]
pub enum SurvError {
    #[error("empty input")]
    Empty,
    #[error("non-finite risk score at position {0}")]
    NonFiniteScore(usize),
    #[error("{0} scores for {1} labels")]
    LengthMismatch(usize, usize),
    #[error("invalid label at position {0}: {1}")]
    InvalidLabel(usize, String),
    #[error("statistic undefined: {0}")]
    Undefined(&'static str),
    #[error(transparent)]
    Num(#[from] NumError),
}
