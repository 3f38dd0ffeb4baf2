use super::SurvError;
use crate::datamodel::SurvivalLabel;
use crate::numcore::{log_sum_exp, Var};

/// Risk sets `R(t_i) = { j : t_j >= t_i }` for one batch. Tied times share
/// risk sets (Breslow).
#[derive(Debug, Clone)]
pub struct RiskSetView {
    sets: Vec<Vec<usize>>,
}

impl RiskSetView {
    /// Builds all risk sets with one descending-time scan.
    pub fn new(labels: &[SurvivalLabel]) -> Self {
        let n = labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| labels[b].time.total_cmp(&labels[a].time).then(a.cmp(&b)));
        let mut sets = vec![Vec::new(); n];
        let mut members: Vec<usize> = Vec::with_capacity(n);
        let mut k = 0;
        while k < n {
            let t = labels[order[k]].time;
            let mut end = k;
            while end < n && labels[order[end]].time == t {
                members.push(order[end]);
                end += 1;
            }
            let mut snapshot = members.clone();
            snapshot.sort_unstable();
            for &i in &order[k..end] {
                sets[i] = snapshot.clone();
            }
            k = end;
        }
        Self { sets }
    }

    pub fn risk_set(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

fn check_inputs(n_scores: usize, labels: &[SurvivalLabel]) -> Result<(), SurvError> {
    if labels.is_empty() {
        return Err(SurvError::Empty);
    }
    if n_scores != labels.len() {
        return Err(SurvError::LengthMismatch(n_scores, labels.len()));
    }
    for (i, l) in labels.iter().enumerate() {
        l.validate().map_err(|e| SurvError::InvalidLabel(i, e.to_string()))?;
    }
    Ok(())
}

/// Negative Cox partial log-likelihood `-Σ δ_i (y_i - log Σ_{R(t_i)} e^{y_j})`
/// over an `n×1` score column. Fractional events weight their terms.
pub fn cox_loss<'t>(scores: Var<'t>, labels: &[SurvivalLabel]) -> Result<Var<'t>, SurvError> {
    let values = scores.value();
    if values.cols() != 1 {
        return Err(SurvError::LengthMismatch(values.len(), labels.len()));
    }
    check_inputs(values.rows(), labels)?;
    if let Some(i) = values.data().iter().position(|v| !v.is_finite()) {
        return Err(SurvError::NonFiniteScore(i));
    }
    let risk = RiskSetView::new(labels);
    let mut total: Option<Var<'t>> = None;
    for (i, label) in labels.iter().enumerate() {
        if label.event == 0.0 {
            continue;
        }
        let lse = scores.select_rows(risk.risk_set(i))?.log_sum_exp()?;
        let term = scores.select_rows(&[i])?.sub(lse)?.scale(-label.event)?;
        total = Some(match total {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(scores.scale(0.0)?.sum()?),
    }
}

/// Same quantity as [`cox_loss`] without a tape.
pub fn cox_loss_value(scores: &[f64], labels: &[SurvivalLabel]) -> Result<f64, SurvError> {
    check_inputs(scores.len(), labels)?;
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(SurvError::NonFiniteScore(i));
    }
    let risk = RiskSetView::new(labels);
    let mut total = 0.0;
    for (i, label) in labels.iter().enumerate() {
        if label.event == 0.0 {
            continue;
        }
        let members: Vec<f64> = risk.risk_set(i).iter().map(|&j| scores[j]).collect();
        total -= label.event * (scores[i] - log_sum_exp(&members));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Tape, Tensor};

    fn labels(times: &[f64], events: &[f64]) -> Vec<SurvivalLabel> {
        times.iter().zip(events).map(|(&t, &e)| SurvivalLabel::new(t, e).unwrap()).collect()
    }

    fn loss(scores: &[f64], l: &[SurvivalLabel]) -> f64 {
        let tape = Tape::new();
        let s = tape.constant(Tensor::new(scores.len(), 1, scores.to_vec()).unwrap());
        cox_loss(s, l).unwrap().item()
    }

    #[test]
    fn single_event_sample_has_zero_loss() {
        assert_eq!(loss(&[3.7], &labels(&[5.0], &[1.0])), 0.0);
    }

    #[test]
    fn all_censored_is_zero() {
        assert_eq!(loss(&[0.3, -1.0, 2.0], &labels(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0])), 0.0);
    }

    #[test]
    fn two_sample_hand_value() {
        let v = loss(&[0.0, 0.0], &labels(&[1.0, 2.0], &[1.0, 1.0]));
        assert!((v - 2f64.ln()).abs() < 1e-12, "{v}");
    }

    #[test]
    fn risk_sets_are_monotone_and_include_ties() {
        let l = labels(&[3.0, 1.0, 3.0, 2.0], &[1.0; 4]);
        let r = RiskSetView::new(&l);
        assert_eq!(r.risk_set(1), &[0, 1, 2, 3]);
        assert_eq!(r.risk_set(3), &[0, 2, 3]);
        assert_eq!(r.risk_set(0), &[0, 2]);
        assert_eq!(r.risk_set(2), &[0, 2]);
    }

    #[test]
    fn errors() {
        let tape = Tape::new();
        let s = tape.constant(Tensor::zeros(2, 1));
        assert!(matches!(cox_loss(s, &labels(&[1.0], &[1.0])), Err(SurvError::LengthMismatch(2, 1))));
        assert!(matches!(cox_loss_value(&[], &[]), Err(SurvError::Empty)));
        assert!(matches!(
            cox_loss_value(&[f64::NAN], &labels(&[1.0], &[1.0])),
            Err(SurvError::NonFiniteScore(0))
        ));
    }

    #[test]
    fn fractional_events_weight_terms() {
        let l1 = labels(&[1.0, 2.0], &[1.0, 0.0]);
        let lh = labels(&[1.0, 2.0], &[0.25, 0.0]);
        let s = [0.4, -0.2];
        assert!((loss(&s, &lh) - 0.25 * loss(&s, &l1)).abs() < 1e-15);
    }
}
