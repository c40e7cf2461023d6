//! Report assembly and emission. JSON is the canonical format: every report
//! embeds the tool version and the fully resolved configuration (seeds
//! included), so a report is sufficient to reproduce itself. Study tables
//! and per-replicate dumps are also available as CSV mirrors.

use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use gce::error::Result;
use gce::estimate::{GceEstimate, Target};
use gce::sim::{ReplicateOutcome, StudyReport, Truth};

use crate::config::FileConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Report for `analyze`: one estimate per requested target.
#[derive(Debug, Serialize)]
pub struct AnalyzeReport<'a> {
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a FileConfig,
    /// Non-fatal conditions from data loading (e.g. assignment probability
    /// taken from the data).
    pub warnings: Vec<String>,
    pub results: Vec<GceEstimate>,
}

/// Report for `simulate`: the aggregated study table.
#[derive(Debug, Serialize)]
pub struct SimulateReport<'a> {
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a FileConfig,
    pub study: &'a StudyReport,
}

/// Report for `truth`: oracle estimand values per target.
#[derive(Debug, Serialize)]
pub struct TruthReport<'a> {
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a FileConfig,
    pub results: Vec<TruthResult>,
}

#[derive(Debug, Serialize)]
pub struct TruthResult {
    pub target: Target,
    #[serde(flatten)]
    pub truth: Truth,
}

/// Serialize a report to canonical JSON: pretty-printed with struct field
/// order, one trailing newline. Identical inputs produce identical bytes.
pub fn to_json<T: Serialize>(report: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| gce::error::Error::Numerical(format!("report serialization: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// The study table as a CSV mirror of the JSON rows. Arm columns follow the
/// library convention: `_1` is the treated-first quantity, `_0` control-first.
pub fn study_csv(report: &StudyReport) -> String {
    let mut out = String::from(
        "estimator,target,n_used,n_failed,bias_1,bias_0,ese_1,ese_0,ase_1,ase_0,\
         ecp_1,ecp_0,ase_df_1,ase_df_0,ecp_df_1,ecp_df_0\n",
    );
    for row in &report.rows {
        let df = |v: &Option<[f64; 2]>, a: usize| match v {
            Some(x) => x[a].to_string(),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.estimator,
            row.target,
            row.n_used,
            row.n_failed,
            row.bias[0],
            row.bias[1],
            row.ese[0],
            row.ese[1],
            row.ase[0],
            row.ase[1],
            row.ecp[0],
            row.ecp[1],
            df(&row.ase_df, 0),
            df(&row.ase_df, 1),
            df(&row.ecp_df, 0),
            df(&row.ecp_df, 1),
        ));
    }
    out
}

/// Per-replicate raw estimates as CSV, one row per (replicate, estimator,
/// target). Failed replicates keep their row with the error message in the
/// final column.
pub fn raw_csv(records: &[ReplicateOutcome], estimator_names: &[&str]) -> String {
    let mut out = String::from(
        "replicate,estimator,target,status,lambda_1,lambda_0,se_1,se_0,\
         ci_1_lo,ci_1_hi,ci_0_lo,ci_0_hi,df_se_1,df_se_0,\
         df_ci_1_lo,df_ci_1_hi,df_ci_0_lo,df_ci_0_hi,error\n",
    );
    for record in records {
        for (e_idx, name) in estimator_names.iter().enumerate() {
            for (t_idx, target) in ["C", "I"].into_iter().enumerate() {
                match &record.results[e_idx][t_idx] {
                    Ok(r) => {
                        let df_se = |a: usize| {
                            r.df_se.map(|v| v[a].to_string()).unwrap_or_default()
                        };
                        let df_ci = |a: usize, hi: bool| {
                            r.df_ci
                                .map(|v| if hi { v[a].hi } else { v[a].lo }.to_string())
                                .unwrap_or_default()
                        };
                        out.push_str(&format!(
                            "{},{},{},ok,{},{},{},{},{},{},{},{},{},{},{},{},{},{},\n",
                            record.replicate,
                            name,
                            target,
                            r.lambda[0],
                            r.lambda[1],
                            r.se[0],
                            r.se[1],
                            r.ci[0].lo,
                            r.ci[0].hi,
                            r.ci[1].lo,
                            r.ci[1].hi,
                            df_se(0),
                            df_se(1),
                            df_ci(0, false),
                            df_ci(0, true),
                            df_ci(1, false),
                            df_ci(1, true),
                        ));
                    }
                    Err(msg) => {
                        // Quote the message so commas inside it stay in one cell.
                        let quoted = format!("\"{}\"", msg.replace('"', "\"\""));
                        out.push_str(&format!(
                            "{},{},{},error,,,,,,,,,,,,,,,{quoted}\n",
                            record.replicate, name, target,
                        ));
                    }
                }
            }
        }
    }
    out
}

/// Write text to a file, or to stdout when no path is given.
pub fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use gce::estimate::Interval;
    use gce::sim::RepEstimate;

    #[test]
    fn raw_csv_keeps_failed_replicates_with_quoted_errors() {
        let records = vec![ReplicateOutcome {
            replicate: 3,
            results: vec![[
                Ok(RepEstimate {
                    lambda: [0.6, 0.4],
                    se: [0.05, 0.05],
                    ci: [
                        Interval { lo: 0.5, hi: 0.7 },
                        Interval { lo: 0.3, hi: 0.5 },
                    ],
                    df_se: None,
                    df_ci: None,
                }),
                Err("cross-fitting cell (0,1) infeasible: one arm empty".into()),
            ]],
        }];
        let csv = raw_csv(&records, &["dml"]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("3,dml,C,ok,0.6,0.4,"));
        assert!(lines[2].starts_with("3,dml,I,error,"));
        assert!(lines[2].contains("\"cross-fitting cell (0,1) infeasible: one arm empty\""));
    }

    #[test]
    fn identical_reports_serialize_to_identical_bytes() {
        let cfg = FileConfig::default();
        let report = TruthReport {
            version: VERSION,
            command: "truth",
            config: &cfg,
            results: vec![],
        };
        assert_eq!(to_json(&report).unwrap(), to_json(&report).unwrap());
    }
}
