use super::SurvError;
use crate::datamodel::SurvivalLabel;

/// Harrell's C over comparable pairs `(i, j)` with `t_i < t_j` and an
/// observed event at `i`. Score ties earn half credit.
pub fn concordance_index(scores: &[f64], labels: &[SurvivalLabel]) -> Result<f64, SurvError> {
    if scores.len() != labels.len() {
        return Err(SurvError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.len() < 2 {
        return Err(SurvError::Undefined("concordance needs at least two samples"));
    }
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(SurvError::NonFiniteScore(i));
    }
    let mut concordant = 0.0;
    let mut comparable = 0u64;
    for (i, li) in labels.iter().enumerate() {
        if !li.observed() {
            continue;
        }
        for (j, lj) in labels.iter().enumerate() {
            if li.time < lj.time {
                comparable += 1;
                if scores[i] > scores[j] {
                    concordant += 1.0;
                } else if scores[i] == scores[j] {
                    concordant += 0.5;
                }
            }
        }
    }
    if comparable == 0 {
        return Err(SurvError::Undefined("no comparable pairs"));
    }
    Ok(concordant / comparable as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn events(times: &[f64]) -> Vec<SurvivalLabel> {
        times.iter().map(|&t| SurvivalLabel::new(t, 1.0).unwrap()).collect()
    }

    #[test]
    fn anti_ordered_scores_are_perfect() {
        let l = events(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(concordance_index(&[4.0, 3.0, 2.0, 1.0], &l).unwrap(), 1.0);
    }

    #[test]
    fn equal_scores_give_half() {
        let l = events(&[1.0, 2.0, 3.0]);
        assert_eq!(concordance_index(&[0.3; 3], &l).unwrap(), 0.5);
    }

    #[test]
    fn three_pair_enumeration() {
        let l = events(&[1.0, 2.0, 3.0]);
        let c = concordance_index(&[3.0, 1.0, 2.0], &l).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn undefined_without_comparable_pairs() {
        let l = vec![SurvivalLabel::new(1.0, 0.0).unwrap(), SurvivalLabel::new(2.0, 0.0).unwrap()];
        assert!(matches!(concordance_index(&[1.0, 2.0], &l), Err(SurvError::Undefined(_))));
        assert!(matches!(concordance_index(&[1.0], &events(&[1.0])), Err(SurvError::Undefined(_))));
    }

    #[test]
    fn mixed_events_are_thresholded() {
        let l = vec![SurvivalLabel::new(1.0, 0.6).unwrap(), SurvivalLabel::new(2.0, 0.4).unwrap()];
        assert_eq!(concordance_index(&[1.0, 0.0], &l).unwrap(), 1.0);
    }
}
