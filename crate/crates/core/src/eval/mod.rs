//! Downstream evaluation and diagnostics.

mod classifiers;
mod metrics;

pub use classifiers::{fit, mean_std, train_and_test, AccuracyStats, ClassifierKind, Fitted};
pub use metrics::{
    diversity_metrics, gauss_moment_distance, mmd2_unbiased, nll_report, representativeness_score, ClassDiversity,
    Diversity, NllReport, Representativeness, COLLAPSE_TRACE, REPRESENTATIVENESS_CAP,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Everything measured about one distilled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: Vec<AccuracyStats>,
    pub representativeness: BTreeMap<usize, Representativeness>,
    pub diversity: Option<Diversity>,
    pub nll: Option<NllReport>,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    /// Mean representativeness over classes.
    pub fn mean_representativeness(&self) -> f64 {
        let n = self.representativeness.len() as f64;
        self.representativeness.values().map(|r| r.score).sum::<f64>() / n
    }

    /// `metric,key,value` rows, one per measured quantity.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,key,value\n");
        let mut row = |m: &str, k: &str, v: String| {
            let _ = writeln!(s, "{m},{k},{v}");
        };
        for (k, v) in &self.metadata {
            row("meta", k, v.replace(',', ";"));
        }
        for a in &self.accuracy {
            row("accuracy_mean", &a.classifier, format!("{:?}", a.mean));
            row("accuracy_std", &a.classifier, format!("{:?}", a.std));
        }
        for (c, r) in &self.representativeness {
            row("representativeness", &format!("class{c}"), format!("{:?}", r.score));
            if r.saturated {
                row("representativeness_saturated", &format!("class{c}"), "1".into());
            }
        }
        if let Some(d) = &self.diversity {
            for (c, cd) in &d.per_class {
                row("cov_trace", &format!("class{c}"), format!("{:?}", cd.cov_trace));
            }
            row("mmd2", "mean", format!("{:?}", d.mmd2));
            row("gauss_moment_distance", "mean", format!("{:?}", d.gauss_moment_distance));
        }
        if let Some(n) = &self.nll {
            for (k, v) in [("train", n.train), ("test", n.test), ("gap", n.gap)] {
                if let Some(v) = v {
                    row("nll", k, format!("{v:?}"));
                }
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}
