//! Global-scale selection by AIC over an increasing grid of `tau^2` values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GhsError, Result};
use crate::linalg;
use crate::model::{self, Dataset, GlobalScale, PrecisionMatrix};
use crate::single::{fit_scatter, EcmConfig, EcmFit, TauMode};

pub const DEFAULT_AIC_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauGrid {
    values: Vec<f64>,
    aic_epsilon: f64,
}

impl TauGrid {
    pub fn new(values: Vec<f64>, aic_epsilon: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(GhsError::contract("tau grid needs at least two values"));
        }
        if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(GhsError::contract(
                "tau grid values must be positive and finite",
            ));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GhsError::contract("tau grid must be strictly increasing"));
        }
        if !(aic_epsilon > 0.0) {
            return Err(GhsError::contract("aic_epsilon must be positive"));
        }
        Ok(Self {
            values,
            aic_epsilon,
        })
    }

    /// `count` log-spaced values from `low` to `high` inclusive.
    pub fn geometric(low: f64, high: f64, count: usize, aic_epsilon: f64) -> Result<Self> {
        if !(low > 0.0 && high > low) || count < 2 {
            return Err(GhsError::contract(
                "geometric grid needs 0 < low < high and count >= 2",
            ));
        }
        let step = (high / low).ln() / (count - 1) as f64;
        let mut values: Vec<f64> = (0..count).map(|m| low * (step * m as f64).exp()).collect();
        values[count - 1] = high;
        Self::new(values, aic_epsilon)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn aic_epsilon(&self) -> f64 {
        self.aic_epsilon
    }

    pub fn with_epsilon(mut self, aic_epsilon: f64) -> Result<Self> {
        if !(aic_epsilon > 0.0) {
            return Err(GhsError::contract("aic_epsilon must be positive"));
        }
        self.aic_epsilon = aic_epsilon;
        Ok(self)
    }
}

impl Default for TauGrid {
    /// 18 log-spaced points from `1e-4` to `10`.
    fn default() -> Self {
        Self::geometric(1e-4, 10.0, 18, DEFAULT_AIC_EPSILON).expect("valid default grid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSelection {
    pub chosen_tau_sq: f64,
    /// `(tau^2, AIC)` for every grid point that was fitted, in grid order.
    pub aic_trace: Vec<(f64, f64)>,
    pub stabilized: bool,
}

/// `n/(n-1) tr(S Theta) - n log det Theta + 2|E|`.
pub fn aic_score(fit: &EcmFit, data: &Dataset, threshold: f64) -> Result<f64> {
    aic_from_scatter(&fit.theta, data.scatter(), data.n() as f64, threshold)
}

pub fn aic_from_scatter(
    theta: &PrecisionMatrix,
    scatter: &DMatrix<f64>,
    n: f64,
    threshold: f64,
) -> Result<f64> {
    let edges = model::extract_graph(theta, threshold)?.edge_count();
    let fit_term = n / (n - 1.0) * linalg::trace_of_product(scatter, theta.as_matrix());
    Ok(fit_term - n * theta.log_det()? + 2.0 * edges as f64)
}

/// First index `m` with `|aic[m] - aic[m-1]| < epsilon`, counting only steps
/// after the trace has first moved by at least `epsilon`.
///
/// At very small `tau^2` every fit is the empty graph and the AIC is flat; the
/// leading plateau is overshrinkage, not stabilisation.
pub fn stabilization_index(aics: &[f64], epsilon: f64) -> Option<usize> {
    let moved = (1..aics.len()).find(|&m| (aics[m] - aics[m - 1]).abs() >= epsilon)?;
    (moved + 1..aics.len()).find(|&m| (aics[m] - aics[m - 1]).abs() < epsilon)
}

/// Fits the grid in ascending order and stops at the first stabilised point.
///
/// Every grid point starts from `Theta = I`, `Lambda = 1`. Warm starts are
/// not used: a fit at small `tau^2` drives the local scales of most pairs to
/// the floor, and the zero entry is a fixed point of the updates, so the next
/// grid point would inherit the empty graph.
pub fn select_tau(
    data: &Dataset,
    grid: &TauGrid,
    config: &EcmConfig,
    threshold: f64,
) -> Result<TauSelection> {
    select_tau_with_fit(data, grid, config, threshold).map(|(sel, _)| sel)
}

/// As [`select_tau`], also returning the fit at the chosen value.
pub fn select_tau_with_fit(
    data: &Dataset,
    grid: &TauGrid,
    config: &EcmConfig,
    threshold: f64,
) -> Result<(TauSelection, EcmFit)> {
    select_tau_scatter(data.scatter(), data.n() as f64, grid, config, threshold)
}

pub fn select_tau_scatter(
    scatter: &DMatrix<f64>,
    n: f64,
    grid: &TauGrid,
    config: &EcmConfig,
    threshold: f64,
) -> Result<(TauSelection, EcmFit)> {
    let mut aic_trace = Vec::with_capacity(grid.values.len());
    let mut aics = Vec::with_capacity(grid.values.len());
    let mut previous: Option<EcmFit> = None;
    for &tau_sq in &grid.values {
        let cfg = EcmConfig {
            tau_mode: TauMode::Fixed(GlobalScale::new(tau_sq)?),
            ..*config
        };
        let wrap = |e| GhsError::GridPoint {
            tau_sq,
            source: Box::new(e),
        };
        let fit = fit_scatter(scatter, n, &cfg, None, None).map_err(wrap)?;
        let aic = aic_from_scatter(&fit.theta, scatter, n, threshold).map_err(wrap)?;
        log::debug!(
            "tau_sq = {tau_sq:.3e}: AIC = {aic:.4}, {} iterations",
            fit.iterations
        );
        aic_trace.push((tau_sq, aic));
        aics.push(aic);
        if stabilization_index(&aics, grid.aic_epsilon).is_some() {
            return Ok((
                TauSelection {
                    chosen_tau_sq: tau_sq,
                    aic_trace,
                    stabilized: true,
                },
                fit,
            ));
        }
        previous = Some(fit);
    }
    let fit = previous.expect("grid has at least two points");
    Ok((
        TauSelection {
            chosen_tau_sq: fit.tau_sq.get(),
            aic_trace,
            stabilized: false,
        },
        fit,
    ))
}

/// Single-network fit whose edge count is as close as possible to
/// `target_edges`, by bisection on `log tau^2` within `[low, high]`.
pub fn fit_matching_sparsity(
    data: &Dataset,
    target_edges: usize,
    config: &EcmConfig,
    threshold: f64,
    (low, high): (f64, f64),
    steps: usize,
) -> Result<EcmFit> {
    if !(low > 0.0 && high > low) {
        return Err(GhsError::contract("sparsity matching needs 0 < low < high"));
    }
    let fit_at = |tau_sq: f64| -> Result<(EcmFit, usize)> {
        let cfg = EcmConfig {
            tau_mode: TauMode::Fixed(GlobalScale::new(tau_sq)?),
            ..*config
        };
        let fit = fit_scatter(data.scatter(), data.n() as f64, &cfg, None, None)?;
        let edges = fit.graph(threshold)?.edge_count();
        Ok((fit, edges))
    };
    let (mut lo, mut hi) = (low.ln(), high.ln());
    let mut best = fit_at(high)?;
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        let (fit, edges) = fit_at(mid.exp())?;
        let closer = edges.abs_diff(target_edges) < best.1.abs_diff(target_edges);
        let at_target = edges == target_edges;
        if edges > target_edges {
            hi = mid;
        } else {
            lo = mid;
        }
        if closer {
            best = (fit, edges);
        }
        if at_target {
            break;
        }
    }
    Ok(best.0)
}
