//! Deterministic CSV emission and parsing.
//!
//! The metrics file carries exactly the columns
//! (experiment, method, replication, step, metric_name, value, seed) in that
//! order. History files carry the full per-step acquisition trace. Floats are
//! written with Rust's shortest round-trip formatting, so identical runs
//! produce byte-identical files.

use crate::acquisition::AcquisitionHistory;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub experiment: String,
    pub method: String,
    pub replication: usize,
    pub step: usize,
    pub metric_name: String,
    pub value: f64,
    pub seed: u64,
}

pub const METRIC_HEADER: &str = "experiment,method,replication,step,metric_name,value,seed";

pub fn metric_rows_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 48 + METRIC_HEADER.len() + 1);
    out.push_str(METRIC_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.experiment, row.method, row.replication, row.step, row.metric_name, row.value,
            row.seed
        ));
    }
    out
}

/// Splits a CSV with a header line into records; no quoting (the writers
/// never emit commas inside fields; vectors are ';'-joined).
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), HarnessError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(HarnessError::CsvParse {
        line: 0,
        message: "empty file".into(),
    })?;
    let header: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != header.len() {
            return Err(HarnessError::CsvParse {
                line: index + 1,
                message: format!("expected {} fields, got {}", header.len(), fields.len()),
            });
        }
        rows.push(fields);
    }
    Ok((header, rows))
}

pub fn parse_metric_rows(text: &str) -> Result<Vec<MetricRow>, HarnessError> {
    let (header, rows) = read_csv(text)?;
    let expected: Vec<&str> = METRIC_HEADER.split(',').collect();
    if header != expected {
        return Err(HarnessError::CsvParse {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut out = Vec::with_capacity(rows.len());
    for (i, fields) in rows.iter().enumerate() {
        let parse = |field: &str, what: &str| -> Result<f64, HarnessError> {
            field.parse::<f64>().map_err(|_| HarnessError::CsvParse {
                line: i + 2,
                message: format!("bad {what}: {field}"),
            })
        };
        out.push(MetricRow {
            experiment: fields[0].clone(),
            method: fields[1].clone(),
            replication: parse(&fields[2], "replication")? as usize,
            step: parse(&fields[3], "step")? as usize,
            metric_name: fields[4].clone(),
            value: parse(&fields[5], "value")?,
            seed: fields[6].parse::<u64>().map_err(|_| HarnessError::CsvParse {
                line: i + 2,
                message: format!("bad seed: {}", fields[6]),
            })?,
        });
    }
    Ok(out)
}

pub const HISTORY_HEADER: &str = "experiment,problem,method,replication,seed,step,chosen_input,observed_label,score,goal_value,metric,recommended,solver_iters,solver_residual,solver_damping";

fn join_vec(x: &Option<Vec<f64>>) -> String {
    match x {
        Some(v) => v
            .iter()
            .map(|f| f.to_string())
            .collect::<Vec<_>>()
            .join(";"),
        None => String::new(),
    }
}

fn opt_num<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

/// One history file per (method, replication).
pub fn write_history_csv(
    experiment: &str,
    problem: &str,
    method: &str,
    replication: usize,
    seed: u64,
    history: &AcquisitionHistory,
) -> String {
    let mut out = String::new();
    out.push_str(HISTORY_HEADER);
    out.push('\n');
    for record in &history.records {
        let (iters, residual, damping) = match &record.solver {
            Some(s) => (
                s.iterations.to_string(),
                s.residual.to_string(),
                s.damping.to_string(),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        out.push_str(&format!(
            "{experiment},{problem},{method},{replication},{seed},{},{},{},{},{},{},{},{iters},{residual},{damping}\n",
            record.step,
            join_vec(&record.chosen_input),
            opt_num(&record.observed_label),
            opt_num(&record.score),
            opt_num(&record.goal_value),
            record.metric,
            join_vec(&record.recommended),
        ));
    }
    out
}

/// A parsed history row; only the fields downstream commands need.
#[derive(Debug, Clone)]
pub struct HistoryRow {
    pub experiment: String,
    pub problem: String,
    pub method: String,
    pub replication: usize,
    pub seed: u64,
    pub step: usize,
    pub metric: f64,
    pub recommended: Option<Vec<f64>>,
}

pub fn parse_history_rows(text: &str) -> Result<Vec<HistoryRow>, HarnessError> {
    let (header, rows) = read_csv(text)?;
    let expected: Vec<&str> = HISTORY_HEADER.split(',').collect();
    if header != expected {
        return Err(HarnessError::CsvParse {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut out = Vec::with_capacity(rows.len());
    for (i, fields) in rows.iter().enumerate() {
        let recommended = if fields[11].is_empty() {
            None
        } else {
            let parsed: Result<Vec<f64>, _> =
                fields[11].split(';').map(str::parse::<f64>).collect();
            Some(parsed.map_err(|_| HarnessError::CsvParse {
                line: i + 2,
                message: format!("bad recommended vector: {}", fields[11]),
            })?)
        };
        out.push(HistoryRow {
            experiment: fields[0].clone(),
            problem: fields[1].clone(),
            method: fields[2].clone(),
            replication: fields[3].parse().map_err(|_| HarnessError::CsvParse {
                line: i + 2,
                message: "bad replication".into(),
            })?,
            seed: fields[4].parse().map_err(|_| HarnessError::CsvParse {
                line: i + 2,
                message: "bad seed".into(),
            })?,
            step: fields[5].parse().map_err(|_| HarnessError::CsvParse {
                line: i + 2,
                message: "bad step".into(),
            })?,
            metric: fields[10].parse().map_err(|_| HarnessError::CsvParse {
                line: i + 2,
                message: "bad metric".into(),
            })?,
            recommended,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{LoopStatus, StepRecord};

    #[test]
    fn metric_csv_round_trip() {
        let rows = vec![
            MetricRow {
                experiment: "noisy_opt".into(),
                method: "goimda".into(),
                replication: 0,
                step: 3,
                metric_name: "immediate_regret".into(),
                value: 0.12345678901234567,
                seed: 42,
            },
            MetricRow {
                experiment: "noisy_opt".into(),
                method: "ei".into(),
                replication: 1,
                step: 0,
                metric_name: "immediate_regret".into(),
                value: 2.0,
                seed: 43,
            },
        ];
        let text = metric_rows_to_csv(&rows);
        let parsed = parse_metric_rows(&text).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn history_csv_round_trip() {
        let history = AcquisitionHistory {
            records: vec![
                StepRecord {
                    step: 0,
                    chosen_id: Some(7),
                    chosen_input: Some(vec![0.25, 0.5]),
                    observed_label: Some(1.5),
                    score: Some(0.125),
                    goal_value: Some(-0.5),
                    metric: 0.75,
                    recommended: Some(vec![0.1, 0.9]),
                    solver: None,
                },
                StepRecord {
                    step: 1,
                    chosen_id: None,
                    chosen_input: None,
                    observed_label: None,
                    score: None,
                    goal_value: None,
                    metric: 0.5,
                    recommended: None,
                    solver: None,
                },
            ],
            status: LoopStatus::Completed,
        };
        let text = write_history_csv("noisy_opt", "branin", "goimda", 2, 99, &history);
        let rows = parse_history_rows(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].recommended, Some(vec![0.1, 0.9]));
        assert_eq!(rows[0].metric, 0.75);
        assert_eq!(rows[1].recommended, None);
        assert_eq!(rows[1].seed, 99);
    }
}
