use serde::Serialize;

use super::{chi_square_sf, SurvError};
use crate::datamodel::SurvivalLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRank {
    pub chi_square: f64,
    pub p_value: f64,
    pub observed_a: f64,
    pub expected_a: f64,
}

/// Two-group log-rank test (1 degree of freedom). Events are thresholded
/// at 0.5.
pub fn log_rank_test(a: &[SurvivalLabel], b: &[SurvivalLabel]) -> Result<LogRank, SurvError> {
    if a.is_empty() || b.is_empty() {
        return Err(SurvError::Empty);
    }
    let mut times: Vec<f64> = a
        .iter()
        .chain(b)
        .filter(|l| l.observed())
        .map(|l| l.time)
        .collect();
    if times.is_empty() {
        return Err(SurvError::Undefined("no events in either group"));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();

    let count = |g: &[SurvivalLabel], t: f64| -> (f64, f64) {
        let at_risk = g.iter().filter(|l| l.time >= t).count() as f64;
        let events = g.iter().filter(|l| l.time == t && l.observed()).count() as f64;
        (at_risk, events)
    };
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    for t in times {
        let (na, da) = count(a, t);
        let (nb, db) = count(b, t);
        let n = na + nb;
        let d = da + db;
        observed += da;
        expected += d * na / n;
        if n > 1.0 {
            variance += d * (na / n) * (nb / n) * (n - d) / (n - 1.0);
        }
    }
    let diff = observed - expected;
    if variance <= 0.0 {
        if diff == 0.0 {
            return Ok(LogRank {
                chi_square: 0.0,
                p_value: 1.0,
                observed_a: observed,
                expected_a: expected,
            });
        }
        return Err(SurvError::Undefined("zero variance under the null"));
    }
    let chi_square = diff * diff / variance;
    Ok(LogRank {
        chi_square,
        p_value: chi_square_sf(chi_square, 1.0),
        observed_a: observed,
        expected_a: expected,
    })
}
