use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluation line of a metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub seed: u64,
    pub method: String,
    pub fid_mean: f64,
    pub is_mean: f64,
    pub embedder_id: String,
    pub n_fake: usize,
    pub n_sets: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_percent: Option<f64>,
    /// Set on the final record of a run that diverged.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub collapsed: bool,
}

impl MetricsRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("metrics record serializes")
    }
}

/// Parses a JSON-lines metrics log; blank lines are skipped.
pub fn parse_metrics_jsonl(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: MetricsRecord =
            serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        if r.method.is_empty() || r.n_sets == 0 {
            return Err(Error::Parse { line: i + 1, msg: "record needs a method and at least one set".into() });
        }
        out.push(r);
    }
    Ok(out)
}
