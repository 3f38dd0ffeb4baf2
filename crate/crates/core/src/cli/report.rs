use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    /// `None` when the test split had no comparable pair or constant scores.
    pub test_ci: Option<f64>,
    /// Median-split log-rank p-value on the test split.
    pub km_p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub stage: String,
    pub trials: Vec<TrialMetrics>,
    pub mean_ci: Option<f64>,
    pub std_ci: Option<f64>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `0.6834 ± 0.1331`
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.4} ± {std:.4}")
}

impl MetricsReport {
    /// Aggregates are filled only when every trial has a defined CI.
    pub fn new(stage: &str, trials: Vec<TrialMetrics>) -> Self {
        let cis: Option<Vec<f64>> = trials.iter().map(|t| t.test_ci).collect();
        let (mean_ci, std_ci) = match cis {
            Some(v) if !v.is_empty() => {
                let (m, s) = mean_std(&v);
                (Some(m), Some(s))
            }
            _ => (None, None),
        };
        Self {
            stage: stage.to_string(),
            trials,
            mean_ci,
            std_ci,
        }
    }

    pub fn has_undefined(&self) -> bool {
        self.trials.iter().any(|t| t.test_ci.is_none())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "stage: {}", self.stage).unwrap();
        writeln!(out, "{:<8}{:>10}{:>14}", "trial", "test CI", "KM p-value").unwrap();
        for t in &self.trials {
            let ci = t.test_ci.map_or("undefined".to_string(), |c| format!("{c:.4}"));
            let p = t.km_p_value.map_or("n/a".to_string(), |p| format!("{p:.4e}"));
            writeln!(out, "{:<8}{:>10}{:>14}", t.trial, ci, p).unwrap();
        }
        match (self.mean_ci, self.std_ci) {
            (Some(m), Some(s)) => writeln!(out, "CI: {}", format_mean_std(m, s)).unwrap(),
            _ => writeln!(out, "CI: undefined").unwrap(),
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain report") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_like_the_results_table() {
        assert_eq!(format_mean_std(0.683_42, 0.133_07), "0.6834 ± 0.1331");
    }

    #[test]
    fn aggregate_matches_hand_computation() {
        let cis = [0.6, 0.7, 0.65, 0.55, 0.8];
        let trials = cis
            .iter()
            .enumerate()
            .map(|(k, &c)| TrialMetrics {
                trial: k,
                test_ci: Some(c),
                km_p_value: None,
            })
            .collect();
        let r = MetricsReport::new("teacher", trials);
        assert!((r.mean_ci.unwrap() - 0.66).abs() < 1e-12);
        // deviations -.06 .04 -.01 -.11 .14 -> squares sum .037, /4
        assert!((r.std_ci.unwrap() - (0.037f64 / 4.0).sqrt()).abs() < 1e-12);
        assert!(r.to_text().contains("CI: 0.6600 ± 0.0962"));
    }

    #[test]
    fn undefined_trials_suppress_the_aggregate() {
        let r = MetricsReport::new(
            "student",
            vec![
                TrialMetrics {
                    trial: 0,
                    test_ci: Some(0.7),
                    km_p_value: Some(0.01),
                },
                TrialMetrics {
                    trial: 1,
                    test_ci: None,
                    km_p_value: None,
                },
            ],
        );
        assert!(r.has_undefined());
        assert_eq!(r.mean_ci, None);
        assert!(r.to_text().contains("undefined"));
    }
}
