use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ndcg_at_k, recall_at_k, CandidateSet, EvalError, Result};
use crate::features::Modality;
use crate::numerics::Tensor;

/// Recall and NDCG at one cutoff for one user.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffScores {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

/// Per-user top-K metrics for one ranking method.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricTable {
    pub ks: Vec<usize>,
    /// `(user, scores per cutoff)`, cutoffs in `ks` order.
    pub rows: Vec<(usize, Vec<CutoffScores>)>,
}

impl MetricTable {
    /// Scores `rankings[u]` against the positives of `candidates.users[u]`.
    pub fn score(candidates: &CandidateSet, rankings: &[Vec<usize>], ks: &[usize]) -> Self {
        let rows = candidates
            .users
            .iter()
            .zip(rankings)
            .map(|(c, ranked)| {
                let cells = ks
                    .iter()
                    .map(|&k| CutoffScores {
                        k,
                        recall: recall_at_k(ranked, &c.positives, k),
                        ndcg: ndcg_at_k(ranked, &c.positives, k),
                    })
                    .collect();
                (c.user, cells)
            })
            .collect();
        MetricTable { ks: ks.to_vec(), rows }
    }

    fn mean_of(&self, k: usize, pick: impl Fn(&CutoffScores) -> f64) -> Option<f64> {
        let col = self.ks.iter().position(|&x| x == k)?;
        if self.rows.is_empty() {
            return Some(0.0);
        }
        Some(self.rows.iter().map(|(_, cells)| pick(&cells[col])).sum::<f64>() / self.rows.len() as f64)
    }

    pub fn mean_recall(&self, k: usize) -> Option<f64> {
        self.mean_of(k, |c| c.recall)
    }

    pub fn mean_ndcg(&self, k: usize) -> Option<f64> {
        self.mean_of(k, |c| c.ndcg)
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }
}

/// Mean and quartiles of one modality's raw attention scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreSummary {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Raw per-user attention scores in `Modality::ALL` order.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionReport {
    pub rows: Vec<(usize, [f64; 4])>,
    pub summary: [ScoreSummary; 4],
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Collects rows `users` of a `[n_users, 4]` score table.
pub fn attention_report(scores: &Tensor, users: &[usize]) -> AttentionReport {
    let rows: Vec<(usize, [f64; 4])> = users
        .iter()
        .map(|&u| {
            let r = scores.row(u);
            (u, [r[0], r[1], r[2], r[3]])
        })
        .collect();
    let summary = [0, 1, 2, 3].map(|m| {
        let mut col: Vec<f64> = rows.iter().map(|(_, s)| s[m]).collect();
        col.sort_by(f64::total_cmp);
        ScoreSummary {
            mean: if col.is_empty() { 0.0 } else { col.iter().sum::<f64>() / col.len() as f64 },
            q1: quantile(&col, 0.25),
            median: quantile(&col, 0.5),
            q3: quantile(&col, 0.75),
        }
    });
    AttentionReport { rows, summary }
}

/// Everything produced by one evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub metadata: BTreeMap<String, String>,
    pub model: MetricTable,
    pub popularity: MetricTable,
    pub attention: AttentionReport,
    pub skipped_users: usize,
    pub exhausted_users: usize,
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl EvalReport {
    /// `user,metric,k,value` rows for the model's per-user metrics.
    pub fn metrics_csv(&self, user_names: &[String]) -> String {
        let mut out = String::from("user,metric,k,value\n");
        for (u, cells) in &self.model.rows {
            for c in cells {
                let _ = writeln!(out, "{},recall,{},{}", user_names[*u], c.k, c.recall);
                let _ = writeln!(out, "{},ndcg,{},{}", user_names[*u], c.k, c.ndcg);
            }
        }
        out
    }

    /// `user,img_score,txt_score,price_score,txn_score` rows.
    pub fn attention_csv(&self, user_names: &[String]) -> String {
        let mut out = String::from("user,img_score,txt_score,price_score,txn_score\n");
        for (u, s) in &self.attention.rows {
            let _ = writeln!(out, "{},{},{},{},{}", user_names[*u], s[0], s[1], s[2], s[3]);
        }
        out
    }

    /// Flat `key = value` summary: metadata, mean metrics and attention
    /// statistics.
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "evaluated_users = {}", self.model.n_users());
        let _ = writeln!(out, "skipped_users = {}", self.skipped_users);
        let _ = writeln!(out, "exhausted_users = {}", self.exhausted_users);
        for (name, table) in [("model", &self.model), ("pop", &self.popularity)] {
            for &k in &table.ks {
                let _ = writeln!(out, "{name}.recall@{k} = {}", table.mean_recall(k).unwrap_or(0.0));
                let _ = writeln!(out, "{name}.ndcg@{k} = {}", table.mean_ndcg(k).unwrap_or(0.0));
            }
        }
        for (m, s) in Modality::ALL.iter().zip(&self.attention.summary) {
            let _ = writeln!(out, "attention.{m}.mean = {}", s.mean);
            let _ = writeln!(out, "attention.{m}.q1 = {}", s.q1);
            let _ = writeln!(out, "attention.{m}.median = {}", s.median);
            let _ = writeln!(out, "attention.{m}.q3 = {}", s.q3);
        }
        out
    }

    /// Writes `metrics.csv`, `attention.csv` and `summary.txt` into `dir`.
    pub fn write_to(&self, dir: &Path, user_names: &[String]) -> Result<()> {
        write(&dir.join("metrics.csv"), self.metrics_csv(user_names))?;
        write(&dir.join("attention.csv"), self.attention_csv(user_names))?;
        write(&dir.join("summary.txt"), self.summary_text())
    }
}
