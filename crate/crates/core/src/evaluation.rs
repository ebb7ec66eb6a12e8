//! Structure-recovery scores: true and false positive rates and ROC area.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphEstimate, PathPoint};

/// Rates with `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

fn normalize(edges: &[(usize, usize)], p: usize) -> Result<BTreeSet<(usize, usize)>> {
    edges
        .iter()
        .map(|&(a, b)| {
            if a == b || a >= p || b >= p {
                Err(Error::InvalidDimension(format!("edge ({a},{b}) invalid for p={p}")))
            } else {
                Ok((a.min(b), a.max(b)))
            }
        })
        .collect()
}

/// Rates of `est` against the 0-based `truth` edges.
pub fn tpr_fpr(est: &GraphEstimate, truth: &[(usize, usize)], p: usize) -> Result<Rates> {
    if est.p != p {
        return Err(Error::InvalidDimension(format!(
            "estimate has p={} but truth has p={p}",
            est.p
        )));
    }
    let truth = normalize(truth, p)?;
    let est = normalize(&est.edge_list(), p)?;
    let pairs = p * (p - 1) / 2;
    let hits = est.intersection(&truth).count();
    let false_pos = est.len() - hits;
    let negatives = pairs - truth.len();
    Ok(Rates {
        tpr: (!truth.is_empty()).then(|| hits as f64 / truth.len() as f64),
        fpr: (negatives > 0).then(|| false_pos as f64 / negatives as f64),
    })
}

/// Trapezoidal area under `(fpr, tpr)` points after adding `(0,0)` and
/// `(1,1)`. Points sharing an fpr keep the largest tpr.
pub fn roc_auc(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(f, t)| f.is_finite() && t.is_finite())
        .chain([(0.0, 0.0), (1.0, 1.0)])
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.dedup_by(|later, first| later.0 == first.0);
    pts.windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[1].1 + w[0].1))
        .sum()
}

/// One ROC row per tuning-path point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRow {
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub edges: usize,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

pub fn roc_rows(path: &[PathPoint], truth: &[(usize, usize)], p: usize) -> Result<Vec<RocRow>> {
    path.iter()
        .map(|pt| {
            let r = tpr_fpr(&pt.graph, truth, p)?;
            Ok(RocRow {
                lambda: pt.config.lambda,
                beta: pt.config.beta,
                gamma: pt.config.gamma,
                edges: pt.edges(),
                tpr: r.tpr,
                fpr: r.fpr,
            })
        })
        .collect()
}

/// AUC over the rows whose rates are both defined.
pub fn rows_auc(rows: &[RocRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.fpr?, r.tpr?)))
        .collect();
    roc_auc(&pts)
}
