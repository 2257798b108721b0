//! Alignment reports and the CSV tables behind method-comparison and
//! context-size plots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mean, sample_std, Metric};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question_id: String,
    pub similarity: f64,
}

/// Scores of one group under one split seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub group_id: String,
    pub seed: u64,
    pub mean: f64,
    pub questions: Vec<QuestionScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group_id: String,
    pub mean: f64,
}

/// Alignment of one method on a set of groups, repeated over split seeds.
///
/// A seed's score is the mean over groups of that group's per-question mean;
/// `mean` and `std` summarize the per-seed scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub schema_version: u32,
    pub method: String,
    pub metric: Metric,
    pub context_questions: usize,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellReport>,
    pub group_means: Vec<GroupSummary>,
    pub seed_means: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl AlignmentReport {
    /// `cells` must hold one entry per (group, seed), groups in order and
    /// seeds in `seeds` order within each group.
    pub fn from_cells(
        method: impl Into<String>,
        metric: Metric,
        context_questions: usize,
        seeds: Vec<u64>,
        cells: Vec<CellReport>,
    ) -> Self {
        let per_group = seeds.len().max(1);
        let group_means: Vec<GroupSummary> = cells
            .chunks(per_group)
            .map(|c| GroupSummary {
                group_id: c[0].group_id.clone(),
                mean: mean(c.iter().map(|x| x.mean)),
            })
            .collect();
        let seed_means: Vec<f64> = (0..seeds.len())
            .map(|s| mean(cells.chunks(per_group).map(|c| c[s].mean)))
            .collect();
        AlignmentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            method: method.into(),
            metric,
            context_questions,
            seeds,
            cells,
            group_means,
            mean: mean(seed_means.iter().copied()),
            std: sample_std(&seed_means),
            seed_means,
            notes: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let version = raw.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(REPORT_SCHEMA_VERSION as u64) {
            return Err(Error::Format(format!(
                "report schema version {version:?}, expected {REPORT_SCHEMA_VERSION}"
            )));
        }
        Ok(serde_json::from_value(raw)?)
    }

    /// One row per scored question: `group_id,seed,question_id,similarity`.
    pub fn question_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["group_id", "seed", "question_id", "similarity"])
            .map_err(csv_err)?;
        for c in &self.cells {
            for q in &c.questions {
                w.write_record([
                    c.group_id.as_str(),
                    &c.seed.to_string(),
                    &q.question_id,
                    &q.similarity.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        finish(w)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("csv: {e}")))
}

/// `method,metric,context_questions,n_seeds,mean,std`, one row per report in
/// input order.
pub fn summary_csv(reports: &[AlignmentReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "metric", "context_questions", "n_seeds", "mean", "std"])
        .map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.method.clone(),
            r.metric.to_string(),
            r.context_questions.to_string(),
            r.seeds.len().to_string(),
            r.mean.to_string(),
            r.std.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// Long-format alignment-vs-context-size table,
/// `method,metric,context_questions,mean,std`, sorted by method then size.
pub fn context_curve_csv(reports: &[AlignmentReport]) -> Result<String> {
    let mut rows: Vec<&AlignmentReport> = reports.iter().collect();
    rows.sort_by(|a, b| {
        (a.method.as_str(), a.metric.to_string(), a.context_questions)
            .cmp(&(b.method.as_str(), b.metric.to_string(), b.context_questions))
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "metric", "context_questions", "mean", "std"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.metric.to_string(),
            r.context_questions.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}
