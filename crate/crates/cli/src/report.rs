//! Machine-readable run summary, written as a flat JSON object.

use std::collections::BTreeMap;
use std::path::Path;

use rclab_core::{DerivedConstants, StepBound};
use serde_json::{Map, Value};

use crate::error::{io_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub steps: usize,
    pub final_mass: f64,
    pub final_s: Option<f64>,
    /// Largest excess of the entropy change over its dissipation bound.
    pub max_entropy_violation: Option<f64>,
    pub max_fp_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsdSummary {
    pub kkt_residual: f64,
    pub persistence_count: usize,
    pub h_at_min: f64,
    pub iterations: usize,
    pub unique: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// `|f - f~|_1 / |f~|_1`, or `|f|_1` when `f~ = 0`.
    pub l1_distance_f: f64,
    pub linf_distance_r: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub command: String,
    pub scenario_name: String,
    pub constants: Option<DerivedConstants>,
    pub trajectory_summary: Option<TrajectorySummary>,
    pub esd_summary: Option<EsdSummary>,
    pub comparison: Option<Comparison>,
    pub verdicts: BTreeMap<String, bool>,
    /// Command-specific extras, flattened under `details.`.
    pub details: BTreeMap<String, Value>,
    pub error: Option<String>,
}

fn num(x: f64) -> Value {
    // serde_json has no representation for non-finite numbers
    if x.is_finite() {
        Value::from(x)
    } else if x.is_nan() {
        Value::Null
    } else if x > 0.0 {
        Value::from("inf")
    } else {
        Value::from("-inf")
    }
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

impl RunReport {
    pub fn new(command: &str, scenario_name: &str) -> Self {
        Self {
            command: command.to_string(),
            scenario_name: scenario_name.to_string(),
            ..Default::default()
        }
    }

    pub fn verdict(&mut self, name: &str, pass: bool) {
        self.verdicts.insert(name.to_string(), pass);
    }

    pub fn detail(&mut self, key: impl Into<String>, value: impl Into<Value>) {
        self.details.insert(key.into(), value.into());
    }

    pub fn detail_num(&mut self, key: impl Into<String>, value: f64) {
        self.details.insert(key.into(), num(value));
    }

    /// True when no error occurred and every verdict passed.
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.verdicts.values().all(|v| *v)
    }

    pub fn to_flat(&self) -> Map<String, Value> {
        let mut out = Map::new();
        out.insert("command".into(), Value::from(self.command.as_str()));
        out.insert("scenario_name".into(), Value::from(self.scenario_name.as_str()));
        if let Some(c) = &self.constants {
            out.insert("constants.gamma".into(), num(c.gamma));
            out.insert("constants.K_M".into(), num(c.k_max));
            out.insert("constants.m_lower".into(), num(c.m_lower));
            out.insert("constants.m_upper".into(), num(c.m_upper));
            out.insert("constants.beta".into(), num(c.beta));
            out.insert("constants.M0".into(), num(c.m0));
            out.insert("constants.M_tilde".into(), num(c.m_tilde));
            let mu0 = match c.mu0 {
                StepBound::Finite(v) => num(v),
                StepBound::Unbounded => Value::from("unbounded"),
            };
            out.insert("constants.mu0".into(), mu0);
        }
        if let Some(t) = &self.trajectory_summary {
            out.insert("trajectory_summary.steps".into(), Value::from(t.steps));
            out.insert("trajectory_summary.final_mass".into(), num(t.final_mass));
            out.insert("trajectory_summary.final_S".into(), opt(t.final_s));
            out.insert(
                "trajectory_summary.max_entropy_violation".into(),
                opt(t.max_entropy_violation),
            );
            out.insert(
                "trajectory_summary.max_fp_iterations".into(),
                t.max_fp_iterations.map_or(Value::Null, Value::from),
            );
        }
        if let Some(e) = &self.esd_summary {
            out.insert("esd_summary.kkt_residual".into(), num(e.kkt_residual));
            out.insert("esd_summary.persistence_count".into(), Value::from(e.persistence_count));
            out.insert("esd_summary.H_at_min".into(), num(e.h_at_min));
            out.insert("esd_summary.iterations".into(), Value::from(e.iterations));
            out.insert("esd_summary.unique".into(), Value::from(e.unique));
        }
        if let Some(c) = &self.comparison {
            out.insert("comparison.L1_distance_f".into(), num(c.l1_distance_f));
            out.insert("comparison.Linf_distance_R".into(), num(c.linf_distance_r));
        }
        for (k, v) in &self.verdicts {
            out.insert(format!("verdicts.{k}"), Value::from(*v));
        }
        for (k, v) in &self.details {
            out.insert(format!("details.{k}"), v.clone());
        }
        out.insert("passed".into(), Value::from(self.passed()));
        if let Some(e) = &self.error {
            out.insert("error".into(), Value::from(e.as_str()));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(&Value::Object(self.to_flat()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(io_err(path))
    }
}
