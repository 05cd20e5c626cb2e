use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Published retrieval accuracies on real recordings; kept in every report
/// for comparison and not expected to match synthetic results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReference {
    pub pairs: usize,
    pub top1: f64,
    pub top3: f64,
    pub top5: f64,
    pub note: String,
}

impl Default for RetrievalReference {
    fn default() -> Self {
        Self {
            pairs: 1319,
            top1: 0.70,
            top3: 0.90,
            top5: 0.95,
            note: "real-data reference, not reproducible on synthetic data".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub top1_min: f64,
    pub top3_min: f64,
    pub av_align_min: f64,
    pub dual_gap_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { top1_min: 0.90, top3_min: 0.97, av_align_min: 0.5, dual_gap_min: 0.2 }
    }
}

/// Every metric keyed by name, plus pass/fail flags. `BTreeMap` keeps the
/// JSON key order stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub pass: BTreeMap<String, bool>,
    pub counts: BTreeMap<String, usize>,
    pub reference: RetrievalReference,
}

impl EvalReport {
    pub fn set(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn check(&mut self, key: &str, ok: bool) {
        self.pass.insert(key.to_string(), ok);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
