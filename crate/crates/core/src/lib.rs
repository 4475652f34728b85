//! Federated intrusion-detection lab: per-client teacher/student distillation,
//! per-round prototype aggregation, final-round model aggregation, and the
//! surrounding data pipeline, metrics and rule-based intervention.

pub mod data;
pub mod experiment;
pub mod fl;
pub mod intervention;
pub mod metrics;
pub mod nn;
