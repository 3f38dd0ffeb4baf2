use serde::Serialize;

use crate::datamodel::SurvivalLabel;

/// Product-limit survival curve, one entry per distinct event time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmCurve {
    pub times: Vec<f64>,
    /// `S(t)` just after each time.
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KmCurve {
    /// `S(t)`: 1 before the first event time.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }
}

/// Kaplan–Meier estimate with events thresholded at 0.5. Censored subjects
/// stay in the risk set at their own time and leave after it.
pub fn kaplan_meier(labels: &[SurvivalLabel]) -> KmCurve {
    let mut event_times: Vec<f64> = labels.iter().filter(|l| l.observed()).map(|l| l.time).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let mut curve = KmCurve {
        times: Vec::with_capacity(event_times.len()),
        survival: Vec::with_capacity(event_times.len()),
        at_risk: Vec::with_capacity(event_times.len()),
        events: Vec::with_capacity(event_times.len()),
    };
    let mut s = 1.0;
    for t in event_times {
        let n = labels.iter().filter(|l| l.time >= t).count();
        let d = labels.iter().filter(|l| l.time == t && l.observed()).count();
        s *= 1.0 - d as f64 / n as f64;
        curve.times.push(t);
        curve.survival.push(s);
        curve.at_risk.push(n);
        curve.events.push(d);
    }
    curve
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(t: f64, e: f64) -> SurvivalLabel {
        SurvivalLabel::new(t, e).unwrap()
    }

    #[test]
    fn distinct_events_step_equally() {
        let c = kaplan_meier(&[l(4.0, 1.0), l(1.0, 1.0), l(3.0, 1.0), l(2.0, 1.0)]);
        assert_eq!(c.times, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(c.survival, vec![0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn censored_subject_leaves_risk_set() {
        let c = kaplan_meier(&[l(1.0, 1.0), l(2.0, 0.0), l(3.0, 1.0), l(4.0, 1.0)]);
        assert_eq!(c.times, vec![1.0, 3.0, 4.0]);
        assert_eq!(c.survival, vec![0.75, 0.375, 0.0]);
        assert_eq!(c.at_risk, vec![4, 2, 1]);
        assert_eq!(c.survival_at(0.5), 1.0);
        assert_eq!(c.survival_at(2.5), 0.75);
    }

    #[test]
    fn all_censored_is_flat() {
        let c = kaplan_meier(&[l(1.0, 0.0), l(2.0, 0.0)]);
        assert!(c.times.is_empty());
        assert_eq!(c.survival_at(100.0), 1.0);
    }

    #[test]
    fn tied_events_drop_together() {
        let c = kaplan_meier(&[l(1.0, 1.0), l(1.0, 1.0), l(2.0, 0.0), l(3.0, 1.0)]);
        assert_eq!(c.survival, vec![0.5, 0.0]);
        assert_eq!(c.events, vec![2, 1]);
    }
}
