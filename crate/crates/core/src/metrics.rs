//! Graph-recovery scores.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{GhsError, Result};
use crate::model::Adjacency;

fn same_p(a: &Adjacency, b: &Adjacency) -> Result<()> {
    if a.p() != b.p() {
        return Err(GhsError::contract(format!(
            "graphs have {} and {} nodes",
            a.p(),
            b.p()
        )));
    }
    Ok(())
}

fn shared_edges(a: &Adjacency, b: &Adjacency) -> usize {
    a.edges()
        .into_iter()
        .filter(|&(i, j)| b.has_edge(i, j))
        .count()
}

/// `(precision, recall)` of `estimated` against `truth`.
///
/// Precision is 1 when nothing is inferred and recall is 1 when the truth has
/// no edges.
pub fn precision_recall(estimated: &Adjacency, truth: &Adjacency) -> Result<(f64, f64)> {
    same_p(estimated, truth)?;
    let tp = shared_edges(estimated, truth) as f64;
    let inferred = estimated.edge_count() as f64;
    let actual = truth.edge_count() as f64;
    let precision = if inferred == 0.0 { 1.0 } else { tp / inferred };
    let recall = if actual == 0.0 { 1.0 } else { tp / actual };
    Ok((precision, recall))
}

/// Mean of the two directed fractions: edges of `a` absent from `b` over
/// `|E_a|`, and edges of `b` absent from `a` over `|E_b|`. An empty edge set
/// contributes a fraction of 0; two empty graphs score 0.
pub fn edge_disagreement(a: &Adjacency, b: &Adjacency) -> Result<f64> {
    same_p(a, b)?;
    let shared = shared_edges(a, b);
    let directed = |own: usize| {
        if own == 0 {
            0.0
        } else {
            (own - shared) as f64 / own as f64
        }
    };
    Ok(0.5 * (directed(a.edge_count()) + directed(b.edge_count())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    /// `|score|` cut-off; pairs with `|score| >= threshold` are selected.
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub recall_cap: f64,
    pub auprc: f64,
}

impl PrCurve {
    /// CSV with columns `threshold,recall,precision`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["threshold", "recall", "precision"])?;
        for pt in &self.points {
            wtr.serialize((pt.threshold, pt.recall, pt.precision))?;
        }
        wtr.flush().map_err(|e| GhsError::io("<csv>", e))?;
        Ok(())
    }
}

/// Precision-recall curve obtained by lowering a cut-off on `|score|`, and
/// its trapezoidal area up to `recall_cap`.
///
/// Pairs with equal `|score|` enter together; pairs scoring exactly zero are
/// never selected. The curve starts at `(0, p_1)` where `p_1` is the
/// precision of the first cut-off. If it ends before `recall_cap` the
/// remainder contributes no area.
pub fn cutoff_pr_curve(
    scores: &DMatrix<f64>,
    truth: &Adjacency,
    recall_cap: f64,
) -> Result<PrCurve> {
    let p = truth.p();
    if scores.shape() != (p, p) {
        return Err(GhsError::contract(
            "score matrix and truth differ in dimension",
        ));
    }
    if !(recall_cap > 0.0 && recall_cap <= 1.0) {
        return Err(GhsError::contract(format!(
            "recall cap must be in (0, 1], got {recall_cap}"
        )));
    }
    let total = truth.edge_count();
    if total == 0 {
        return Err(GhsError::contract(
            "precision-recall curve needs a nonempty truth",
        ));
    }
    let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in (i + 1)..p {
            let s = scores[(i, j)].abs();
            if !s.is_finite() {
                return Err(GhsError::domain(format!("non-finite score at ({i}, {j})")));
            }
            if s > 0.0 {
                pairs.push((s, truth.has_edge(i, j)));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let (mut tp, mut selected) = (0usize, 0usize);
    let mut k = 0;
    while k < pairs.len() {
        let level = pairs[k].0;
        while k < pairs.len() && pairs[k].0 == level {
            selected += 1;
            tp += pairs[k].1 as usize;
            k += 1;
        }
        points.push(PrPoint {
            threshold: level,
            recall: tp as f64 / total as f64,
            precision: tp as f64 / selected as f64,
        });
    }

    let mut auprc = 0.0;
    if let Some(first) = points.first() {
        let (mut r0, mut p0) = (0.0, first.precision);
        for pt in &points {
            if pt.recall >= recall_cap {
                let t = if pt.recall > r0 {
                    (recall_cap - r0) / (pt.recall - r0)
                } else {
                    0.0
                };
                let p_cap = p0 + t * (pt.precision - p0);
                auprc += 0.5 * (p0 + p_cap) * (recall_cap - r0);
                break;
            }
            auprc += 0.5 * (p0 + pt.precision) * (pt.recall - r0);
            r0 = pt.recall;
            p0 = pt.precision;
        }
    }
    Ok(PrCurve {
        points,
        recall_cap,
        auprc,
    })
}
