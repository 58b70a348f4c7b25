//! Metric post-processing: regret series, bootstrap confidence intervals,
//! and labels-to-accuracy quantile tables.

use rand::Rng;

use crate::acquisition::AcquisitionHistory;
use crate::benchfuncs::NoisyObjective;

use super::csvio::{HistoryRow, MetricRow};

/// Per-step immediate regret: noiseless objective at the recommended input
/// minus the known optimum, clamped at zero. No monotonicity is enforced —
/// under noise the series may rise between consecutive steps.
pub fn compute_regret(history: &AcquisitionHistory, objective: &NoisyObjective) -> Vec<f64> {
    history
        .records
        .iter()
        .map(|record| match &record.recommended {
            Some(x) => (objective.evaluate(x) - objective.optimum_value()).max(0.0),
            None => f64::NAN,
        })
        .collect()
}

/// Regret per parsed history row, for the `regret` CLI subcommand.
pub fn compute_regret_rows(rows: &[HistoryRow], objective: &NoisyObjective) -> Vec<(usize, f64)> {
    rows.iter()
        .filter_map(|row| {
            row.recommended.as_ref().map(|x| {
                (
                    row.step,
                    (objective.evaluate(x) - objective.optimum_value()).max(0.0),
                )
            })
        })
        .collect()
}

/// Labels-to-accuracy quantiles computed straight from raw metric rows:
/// one (method, threshold, q25, q50, q75) tuple per combination, in the
/// order methods appear.
pub fn labels_quantiles_from_rows(
    rows: &[MetricRow],
    thresholds: &[f64],
    initial_labels: usize,
) -> Vec<(String, f64, Option<f64>, Option<f64>, Option<f64>)> {
    let mut methods: Vec<String> = Vec::new();
    for row in rows {
        if !methods.contains(&row.method) {
            methods.push(row.method.clone());
        }
    }
    let mut out = Vec::new();
    for method in &methods {
        let mut replications: Vec<usize> = rows
            .iter()
            .filter(|r| &r.method == method)
            .map(|r| r.replication)
            .collect();
        replications.sort_unstable();
        replications.dedup();
        for &threshold in thresholds {
            let mut first: Vec<f64> = replications
                .iter()
                .map(|&rep| {
                    rows.iter()
                        .filter(|r| &r.method == method && r.replication == rep)
                        .filter(|r| r.value >= threshold)
                        .map(|r| (initial_labels + r.step) as f64)
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            first.sort_by(f64::total_cmp);
            let pick = |q: f64| {
                let v = quantile(&first, q);
                v.is_finite().then_some(v)
            };
            out.push((
                method.clone(),
                threshold,
                pick(0.25),
                pick(0.5),
                pick(0.75),
            ));
        }
    }
    out
}

/// Linear-interpolation quantile of a sorted slice. Infinite entries survive
/// as infinities, letting callers detect censored quantiles.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let position = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = position.floor() as usize;
    let hi = position.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = position - lo as f64;
        // interpolation with an infinite endpoint stays infinite
        if sorted[hi].is_infinite() {
            if w == 0.0 {
                sorted[lo]
            } else {
                sorted[hi]
            }
        } else {
            sorted[lo] * (1.0 - w) + sorted[hi] * w
        }
    }
}

/// Percentile bootstrap of the mean. Deterministic given the rng state.
pub fn bootstrap_ci<R: Rng + ?Sized>(
    values: &[f64],
    n_boot: usize,
    level: f64,
    rng: &mut R,
) -> (f64, f64) {
    assert!(values.len() >= 2, "need at least two values");
    assert!(n_boot >= 100, "need at least 100 bootstrap resamples");
    let n = values.len();
    let mut means = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += values[rng.gen_range(0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    (quantile(&means, alpha), quantile(&means, 1.0 - alpha))
}

/// Quantiles (25/50/75) of the number of labels needed to reach each accuracy
/// threshold. `None` marks a censored quantile (threshold not reached within
/// the run for enough replications).
#[derive(Debug, Clone)]
pub struct QuantileTable {
    pub thresholds: Vec<f64>,
    /// rows\[t\] = (q25, q50, q75) in label counts, censored as None
    pub rows: Vec<(Option<f64>, Option<f64>, Option<f64>)>,
}

pub fn labels_to_accuracy(
    histories: &[AcquisitionHistory],
    thresholds: &[f64],
    initial_labels: usize,
) -> QuantileTable {
    let mut rows = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let mut first: Vec<f64> = histories
            .iter()
            .map(|history| {
                history
                    .records
                    .iter()
                    .find(|record| record.metric >= threshold)
                    .map(|record| (initial_labels + record.step) as f64)
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        first.sort_by(f64::total_cmp);
        let pick = |q: f64| {
            let v = quantile(&first, q);
            if v.is_finite() {
                Some(v)
            } else {
                None
            }
        };
        rows.push((pick(0.25), pick(0.5), pick(0.75)));
    }
    QuantileTable {
        thresholds: thresholds.to_vec(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{LoopStatus, StepRecord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn history_with_metrics(metrics: &[f64]) -> AcquisitionHistory {
        AcquisitionHistory {
            records: metrics
                .iter()
                .enumerate()
                .map(|(step, &metric)| StepRecord {
                    step,
                    chosen_id: None,
                    chosen_input: None,
                    observed_label: None,
                    score: None,
                    goal_value: None,
                    metric,
                    recommended: None,
                    solver: None,
                })
                .collect(),
            status: LoopStatus::Completed,
        }
    }

    #[test]
    fn constant_values_give_zero_width_interval() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (lo, hi) = bootstrap_ci(&[3.0; 10], 500, 0.95, &mut rng);
        assert_eq!(lo, 3.0);
        assert_eq!(hi, 3.0);
    }

    #[test]
    fn two_point_interval_stays_in_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (lo, hi) = bootstrap_ci(&[0.0, 1.0], 1000, 0.95, &mut rng);
        assert!(lo >= 0.0);
        assert!(hi <= 1.0);
        assert!(lo <= hi);
    }

    #[test]
    fn bootstrap_covers_the_truth_most_of_the_time() {
        let mut coverage = 0usize;
        let trials = 100;
        for trial in 0..trials {
            let mut rng = ChaCha20Rng::seed_from_u64(1000 + trial);
            let values: Vec<f64> = (0..1000)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let (lo, hi) = bootstrap_ci(&values, 2000, 0.95, &mut rng);
            if lo <= 0.0 && 0.0 <= hi {
                coverage += 1;
            }
        }
        assert!(coverage >= 93, "coverage {coverage}/100");
    }

    #[test]
    fn quantiles_of_uniform_hits() {
        let histories: Vec<_> = (0..5)
            .map(|_| history_with_metrics(&[0.1, 0.3, 0.85, 0.92, 0.95]))
            .collect();
        let table = labels_to_accuracy(&histories, &[0.8, 0.9], 2);
        // 0.8 first reached at step 2 → labels 4; 0.9 at step 3 → labels 5
        assert_eq!(table.rows[0], (Some(4.0), Some(4.0), Some(4.0)));
        assert_eq!(table.rows[1], (Some(5.0), Some(5.0), Some(5.0)));
    }

    #[test]
    fn unreached_threshold_is_censored() {
        let histories = vec![history_with_metrics(&[0.1, 0.2, 0.3])];
        let table = labels_to_accuracy(&histories, &[0.99], 2);
        assert_eq!(table.rows[0], (None, None, None));
    }

    #[test]
    fn interpolated_quantiles() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&sorted, 0.0), 1.0);
        assert_eq!(quantile(&sorted, 1.0), 4.0);
        assert!((quantile(&sorted, 0.5) - 2.5).abs() < 1e-15);
    }
}
