//! Bayesian-bootstrap check of whether a network is suited to a joint fit.
//!
//! Each bootstrap sample reweights the observations with flat-Dirichlet
//! weights and refits the single-network model at a fixed `tau^2`. An edge of
//! the joint estimate is flagged when its scaled magnitude exceeds the chosen
//! percentile of the bootstrap magnitudes: the joint fit has pulled that edge
//! further than the network's own data support.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GhsError, Result};
use crate::model::{Dataset, PrecisionMatrix};
use crate::simulate::{rng_for, STREAM_BOOTSTRAP};
use crate::single::{fit_scatter, EcmConfig, TauMode};

pub const DEFAULT_SAMPLES: usize = 100;
pub const MIN_SAMPLES: usize = 50;
pub const DEFAULT_LEVEL: f64 = 0.95;
/// Largest tolerated share of failed or non-converged bootstrap fits.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

/// `S_w = (n - 1) / (1 - sum w_i^2) * X_w^T X_w` with rows of the centred
/// data scaled by `sqrt(w_i)`.
pub fn weighted_scatter(data: &Dataset, weights: &[f64]) -> Result<DMatrix<f64>> {
    let x = data.observations();
    let n = x.nrows();
    if weights.len() != n {
        return Err(GhsError::contract(format!(
            "{} weights for {n} samples",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(GhsError::contract("weights must be nonnegative and finite"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(GhsError::contract(format!("weights sum to {total}, not 1")));
    }
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if 1.0 - sum_sq <= 0.0 {
        return Err(GhsError::domain(
            "degenerate weights: all mass on one sample",
        ));
    }
    let mut xw = x.clone();
    for (mut row, w) in xw.row_iter_mut().zip(weights) {
        row *= w.sqrt();
    }
    let mut s = xw.tr_mul(&xw) * ((n as f64 - 1.0) / (1.0 - sum_sq));
    crate::linalg::symmetrize(&mut s);
    Ok(s)
}

/// Flat-Dirichlet weights for bootstrap sample `b`.
pub fn dirichlet_weights(n: usize, seed: u64, b: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, STREAM_BOOTSTRAP + b as u64);
    let mut w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Linearly interpolated empirical quantile (type 7) of unsorted values.
pub fn quantile(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(GhsError::contract("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(GhsError::contract(format!(
            "quantile level {level} outside [0, 1]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

fn scaled(theta: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    theta[(i, j)] / (theta[(i, i)] * theta[(j, j)]).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCheck {
    pub i: usize,
    pub j: usize,
    pub joint_scaled_estimate: f64,
    pub percentile_95: f64,
    pub exceeds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub per_edge: Vec<EdgeCheck>,
    pub exceed_fraction: f64,
    /// Requested bootstrap samples.
    pub samples: usize,
    /// Samples excluded because their fit failed or did not converge.
    pub failed: usize,
    pub level: f64,
}

impl BootstrapReport {
    /// One line per edge, starred when the joint estimate exceeds the
    /// bootstrap percentile.
    pub fn to_table(&self, names: Option<&[String]>) -> String {
        let label = |k: usize| match names {
            Some(n) => n[k].clone(),
            None => (k + 1).to_string(),
        };
        let mut out = format!("{:<24} {:>10} {:>10}\n", "edge", "estimate", "q95");
        for e in &self.per_edge {
            let edge = format!("{}-{}", label(e.i), label(e.j));
            let star = if e.exceeds { " *" } else { "" };
            let _ = writeln!(
                out,
                "{edge:<24} {:>10.4} {:>10.4}{star}",
                e.joint_scaled_estimate, e.percentile_95
            );
        }
        let _ = writeln!(
            out,
            "{} of {} edges exceed ({:.1}%), {} samples, {} failed",
            self.per_edge.iter().filter(|e| e.exceeds).count(),
            self.per_edge.len(),
            100.0 * self.exceed_fraction,
            self.samples,
            self.failed
        );
        out
    }
}

/// Absolute scaled bootstrap values of each edge, one vector per edge over
/// the successful samples.
#[derive(Debug, Clone)]
pub struct BootstrapDraws {
    pub edges: Vec<(usize, usize)>,
    pub magnitudes: Vec<Vec<f64>>,
    pub samples: usize,
    pub failed: usize,
}

impl BootstrapDraws {
    /// Compares `joint_theta` against the `level` percentile of each edge.
    pub fn report(&self, joint_theta: &PrecisionMatrix, level: f64) -> Result<BootstrapReport> {
        let theta = joint_theta.as_matrix();
        let mut per_edge = Vec::with_capacity(self.edges.len());
        for (&(i, j), draws) in self.edges.iter().zip(&self.magnitudes) {
            let q = quantile(draws, level)?;
            let est = scaled(theta, i, j);
            per_edge.push(EdgeCheck {
                i,
                j,
                joint_scaled_estimate: est,
                percentile_95: q,
                exceeds: est.abs() > q,
            });
        }
        let exceeded = per_edge.iter().filter(|e| e.exceeds).count();
        Ok(BootstrapReport {
            exceed_fraction: exceeded as f64 / per_edge.len() as f64,
            per_edge,
            samples: self.samples,
            failed: self.failed,
            level,
        })
    }
}

/// Runs `samples` weighted refits at the fixed `tau^2` of `config`.
///
/// Samples run in parallel on the current rayon pool; the result depends only
/// on `seed`.
pub fn bootstrap_draws(
    data: &Dataset,
    edges: &[(usize, usize)],
    samples: usize,
    config: &EcmConfig,
    seed: u64,
) -> Result<BootstrapDraws> {
    if samples < MIN_SAMPLES {
        return Err(GhsError::contract(format!(
            "need at least {MIN_SAMPLES} bootstrap samples, got {samples}"
        )));
    }
    if edges.is_empty() {
        return Err(GhsError::contract(
            "bootstrap check needs at least one edge",
        ));
    }
    let p = data.p();
    if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= p || j >= p || i == j) {
        return Err(GhsError::contract(format!(
            "invalid edge ({i}, {j}) for p = {p}"
        )));
    }
    if matches!(config.tau_mode, TauMode::Updated(_)) {
        return Err(GhsError::contract("bootstrap fits need a fixed tau^2"));
    }
    config.validate()?;
    let n = data.n() as f64;
    let outcomes: Vec<Option<Vec<f64>>> = (0..samples)
        .into_par_iter()
        .map(|b| {
            let w = dirichlet_weights(data.n(), seed, b);
            let s = weighted_scatter(data, &w).ok()?;
            match fit_scatter(&s, n, config, None, None) {
                Ok(fit) if fit.converged => {
                    let theta = fit.theta.as_matrix();
                    Some(
                        edges
                            .iter()
                            .map(|&(i, j)| scaled(theta, i, j).abs())
                            .collect(),
                    )
                }
                Ok(_) => {
                    log::warn!("bootstrap sample {b} did not converge");
                    None
                }
                Err(e) => {
                    log::warn!("bootstrap sample {b} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    if failed as f64 > MAX_FAILURE_FRACTION * samples as f64 {
        return Err(GhsError::BootstrapFailures {
            failed,
            total: samples,
        });
    }
    let mut magnitudes = vec![Vec::with_capacity(samples - failed); edges.len()];
    for draw in outcomes.into_iter().flatten() {
        for (m, v) in magnitudes.iter_mut().zip(draw) {
            m.push(v);
        }
    }
    Ok(BootstrapDraws {
        edges: edges.to_vec(),
        magnitudes,
        samples,
        failed,
    })
}

/// 95th-percentile check of `joint_theta` on `edges` against `samples`
/// bootstrap refits of `data`.
pub fn bootstrap_edge_check(
    data: &Dataset,
    joint_theta: &PrecisionMatrix,
    edges: &[(usize, usize)],
    samples: usize,
    config: &EcmConfig,
    seed: u64,
) -> Result<BootstrapReport> {
    if joint_theta.p() != data.p() {
        return Err(GhsError::contract(
            "joint estimate and data differ in dimension",
        ));
    }
    bootstrap_draws(data, edges, samples, config, seed)?.report(joint_theta, DEFAULT_LEVEL)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset::new(DMatrix::from_row_slice(
            4,
            2,
            &[1.0, 2.0, -1.0, 0.5, 3.0, -2.0, 0.0, 1.0],
        ))
        .unwrap()
    }

    #[test]
    fn equal_weights_give_plain_scatter() {
        let d = toy();
        let s = weighted_scatter(&d, &[0.25; 4]).unwrap();
        let diff = (&s - d.scatter()).abs().max();
        assert!(diff <= 1e-12 * d.scatter().abs().max(), "{diff}");
    }

    #[test]
    fn two_sample_hand_expansion() {
        let d = Dataset::new(DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, -1.0])).unwrap();
        // centred rows: (-1, 2), (1, -2); sum w^2 = 0.625
        let s = weighted_scatter(&d, &[0.75, 0.25]).unwrap();
        let c = 1.0 / 0.375;
        let expected = [c * 1.0, c * -2.0, c * -2.0, c * 4.0];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn weight_checks() {
        let d = toy();
        assert!(matches!(
            weighted_scatter(&d, &[1.0, 0.0, 0.0, 0.0]),
            Err(GhsError::Domain(_))
        ));
        assert!(weighted_scatter(&d, &[0.5, 0.5, 0.5, -0.5]).is_err());
        assert!(weighted_scatter(&d, &[0.3, 0.3, 0.3, 0.3]).is_err());
        assert!(weighted_scatter(&d, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn dirichlet_weights_are_simplex_and_seeded() {
        let w = dirichlet_weights(30, 9, 3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(w.iter().all(|&v| v > 0.0));
        assert_eq!(w, dirichlet_weights(30, 9, 3));
        assert_ne!(w, dirichlet_weights(30, 9, 4));
    }

    #[test]
    fn type7_quantile() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&v, 0.5).unwrap(), 3.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 5.0);
        assert!((quantile(&v, 0.95).unwrap() - 4.8).abs() < 1e-12);
        assert_eq!(quantile(&[7.0], 0.95).unwrap(), 7.0);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn check_preconditions() {
        let d = toy();
        let theta = PrecisionMatrix::identity(2);
        let cfg = EcmConfig::default();
        assert!(bootstrap_edge_check(&d, &theta, &[(0, 1)], 10, &cfg, 1).is_err());
        assert!(bootstrap_edge_check(&d, &theta, &[], 50, &cfg, 1).is_err());
        assert!(bootstrap_edge_check(&d, &theta, &[(0, 2)], 50, &cfg, 1).is_err());
    }

    #[test]
    fn table_marks_exceeding_edges() {
        let report = BootstrapReport {
            per_edge: vec![
                EdgeCheck {
                    i: 0,
                    j: 1,
                    joint_scaled_estimate: 0.3,
                    percentile_95: 0.1,
                    exceeds: true,
                },
                EdgeCheck {
                    i: 1,
                    j: 2,
                    joint_scaled_estimate: 0.05,
                    percentile_95: 0.1,
                    exceeds: false,
                },
            ],
            exceed_fraction: 0.5,
            samples: 100,
            failed: 0,
            level: 0.95,
        };
        let table = report.to_table(None);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[1].starts_with("1-2") && lines[1].ends_with(" *"));
        assert!(!lines[2].ends_with('*'));
    }
}
