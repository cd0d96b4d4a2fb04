//! JSON wire types shared by the service and the client.

use serde::{Deserialize, Serialize};

pub const CLASSIFY_PATH: &str = "/api/classify";
pub const MODELS_PATH: &str = "/api/models";

fn default_top_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub model: String,
    /// Base64 (standard alphabet, padded) PNG or JPEG bytes.
    pub image: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub labels_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionWire {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub model: String,
    pub predictions: Vec<PredictionWire>,
    pub served_by: usize,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
}

pub fn class_label(class: usize) -> String {
    format!("class_{class}")
}

pub fn parse_class_label(label: &str) -> Option<usize> {
    label.strip_prefix("class_")?.parse().ok()
}
