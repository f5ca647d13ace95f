use std::collections::BTreeMap;

use serde::Serialize;

use crate::inputs::InputDigest;

/// Everything needed to replay a run: what was invoked, with which settings,
/// on which exact inputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    /// Wall-clock milliseconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    /// Pretty JSON with sorted keys.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.value()).expect("value serializes")
    }

    /// Single-line JSON with sorted keys.
    pub fn to_compact_json(&self) -> String {
        serde_json::to_string(&self.value()).expect("value serializes")
    }

    fn value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("manifest serializes")
    }
}
