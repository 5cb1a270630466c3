use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::MetricsReport;

/// Response families scored by the evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// Non-slack bus angles, radians.
    Angle,
    /// Branch angle differences, radians.
    AngleDifference,
    /// Load-bus voltage magnitudes, per-unit.
    Magnitude,
    /// From-side active branch flows, per-unit.
    ActiveFlow,
    /// From-side reactive branch flows, per-unit.
    ReactiveFlow,
}

impl Quantity {
    pub const ALL: [Quantity; 5] = [
        Quantity::Angle,
        Quantity::AngleDifference,
        Quantity::Magnitude,
        Quantity::ActiveFlow,
        Quantity::ReactiveFlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Angle => "angle",
            Quantity::AngleDifference => "angle_difference",
            Quantity::Magnitude => "magnitude",
            Quantity::ActiveFlow => "active_flow",
            Quantity::ReactiveFlow => "reactive_flow",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Quantity::Angle | Quantity::AngleDifference => "rad",
            _ => "pu",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub quantity: Quantity,
    pub metrics: MetricsReport,
}

/// Metrics for every evaluated method and quantity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

pub const CSV_HEADER: &str = "method,quantity,avg_rmse,awd,e1,e2";

impl EvalReport {
    pub fn get(&self, method: &str, quantity: Quantity) -> Option<&MetricsReport> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.quantity == quantity)
            .map(|r| &r.metrics)
    }

    fn methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method.as_str()) {
                out.push(&r.method);
            }
        }
        out
    }

    /// One line per (method, quantity), full precision.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let m = &r.metrics;
            writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.method,
                r.quantity.name(),
                m.avg_rmse,
                m.awd,
                m.e1,
                m.e2
            )
            .unwrap();
        }
        out
    }

    /// One aligned table per quantity with methods as rows.
    pub fn to_text(&self) -> String {
        let methods = self.methods();
        let mut out = String::new();
        for q in Quantity::ALL {
            if !self.rows.iter().any(|r| r.quantity == q) {
                continue;
            }
            writeln!(out, "{} [{}]", q.name(), q.unit()).unwrap();
            writeln!(out, "{:<8} {:>13} {:>13} {:>13} {:>13}", "method", "avg_rmse", "awd", "e1", "e2").unwrap();
            for &method in &methods {
                if let Some(m) = self.get(method, q) {
                    writeln!(
                        out,
                        "{:<8} {:>13.6e} {:>13.6e} {:>13.6e} {:>13.6e}",
                        method, m.avg_rmse, m.awd, m.e1, m.e2
                    )
                    .unwrap();
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Per-response Wasserstein distances sorted in descending order, for
/// plotting distance curves. Ties keep the response order.
pub fn wd_csv(metrics: &MetricsReport, labels: &[String]) -> String {
    let mut order: Vec<usize> = (0..metrics.per_response_wd.len()).collect();
    order.sort_by(|&a, &b| metrics.per_response_wd[b].total_cmp(&metrics.per_response_wd[a]));
    let mut out = String::from("rank,response,w1\n");
    for (rank, &i) in order.iter().enumerate() {
        writeln!(out, "{},{},{:.16e}", rank + 1, labels[i], metrics.per_response_wd[i]).unwrap();
    }
    out
}
