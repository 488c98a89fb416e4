//! Report records shared by the library and the command line front end.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::stats::CorrelationRow;

pub const SCHEMA_VERSION: u32 = 1;

/// Named metric values with the configuration and inputs that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema: u32,
    /// Which pipeline produced the report, e.g. `"ifid"`.
    pub kind: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub correlations: Vec<CorrelationRow>,
    /// Named pass/fail checks, e.g. expected orderings.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub checks: BTreeMap<String, bool>,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub tool_version: String,
    #[serde(default)]
    pub duration_secs: f64,
    /// Input file name → SHA-256 of its contents.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    /// Output file name → SHA-256 of what was written.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outputs: BTreeMap<String, String>,
    /// Reserved for classifier-free guidance scale; never populated.
    #[serde(default)]
    pub guidance: Option<f64>,
}

impl MetricReport {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            kind: kind.into(),
            metrics: BTreeMap::new(),
            correlations: Vec::new(),
            checks: BTreeMap::new(),
            config: serde_json::Value::Null,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            duration_secs: 0.0,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            guidance: None,
        }
    }

    pub fn metric(mut self, name: impl Into<String>, value: f64) -> Self {
        self.metrics.insert(name.into(), value);
        self
    }

    /// Whether two reports agree on every computed field, bit for bit.
    /// Timing and tool version are ignored.
    pub fn same_results(&self, other: &Self) -> bool {
        let bits = |m: &BTreeMap<String, f64>| m.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect::<Vec<_>>();
        let corr = |c: &[CorrelationRow]| {
            c.iter()
                .map(|r| (r.metric.clone(), r.pcc.to_bits(), r.srcc.to_bits(), r.n))
                .collect::<Vec<_>>()
        };
        self.kind == other.kind
            && bits(&self.metrics) == bits(&other.metrics)
            && corr(&self.correlations) == corr(&other.correlations)
            && self.checks == other.checks
            && self.inputs == other.inputs
            && self.outputs == other.outputs
    }
}
