use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Averaging, EvalConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub k: usize,
    pub mr: f64,
    pub mmr: f64,
    pub hmr: f64,
    /// Recall per relation class in percent; `None` for classes without
    /// ground truth.
    pub per_class_recall: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBreakdown {
    pub image: String,
    pub ground_truth: usize,
    pub predictions: usize,
    /// Recalled ground-truth triplets at each K.
    pub recalled: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub relation_names: Vec<String>,
    pub gt_per_class: Vec<usize>,
    pub metrics: Vec<KMetrics>,
    pub images: Vec<ImageBreakdown>,
}

fn averaging_name(a: Averaging) -> &'static str {
    match a {
        Averaging::Micro => "micro",
        Averaging::Macro => "macro",
    }
}

impl EvalReport {
    pub fn header(&self) -> String {
        let c = &self.config;
        format!(
            "task={} box_mode={} iou_threshold={} averaging={}",
            c.task,
            c.box_mode,
            c.iou_threshold,
            averaging_name(c.averaging)
        )
    }

    fn joined(&self, f: impl Fn(&KMetrics) -> f64) -> String {
        self.metrics.iter().map(|m| format!("{:.2}", f(m))).collect::<Vec<_>>().join("/")
    }

    fn ks(&self) -> String {
        self.metrics.iter().map(|m| m.k.to_string()).collect::<Vec<_>>().join("/")
    }

    /// Comment header plus one row: `MR@k1/k2,mMR@k1/k2,HMR@k1/k2`.
    pub fn to_csv(&self, method: &str) -> String {
        let ks = self.ks();
        format!(
            "# {}\nmethod,MR@{ks},mMR@{ks},HMR@{ks}\n{},{},{},{}\n",
            self.header(),
            method,
            self.joined(|m| m.mr),
            self.joined(|m| m.mmr),
            self.joined(|m| m.hmr)
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.header());
        let _ = writeln!(s, "images={} gt_triplets={}", self.images.len(), self.gt_per_class.iter().sum::<usize>());
        let ks = self.ks();
        let _ = writeln!(s, "MR@{ks}  {}", self.joined(|m| m.mr));
        let _ = writeln!(s, "mMR@{ks} {}", self.joined(|m| m.mmr));
        let _ = writeln!(s, "HMR@{ks} {}", self.joined(|m| m.hmr));
        let _ = writeln!(s, "per-class recall@{ks}:");
        for (c, name) in self.relation_names.iter().enumerate() {
            let vals: Vec<String> = self
                .metrics
                .iter()
                .map(|m| m.per_class_recall[c].map_or_else(|| "-".to_string(), |v| format!("{v:.2}")))
                .collect();
            let _ = writeln!(s, "  {name:<36} gt={:<6} {}", self.gt_per_class[c], vals.join("/"));
        }
        s
    }
}
