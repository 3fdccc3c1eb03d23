//! Single-network graphical horseshoe ECM.
//!
//! Each iteration runs one E-step over the latent `nu_ij`, a sweep of
//! closed-form local-scale updates, and a sweep of blockwise column updates of
//! the precision matrix. Every CM update maximises the ECM objective in its
//! own block, so the latent-integrated log posterior never decreases, and
//! each column update keeps the precision matrix positive definite.
//!
//! The inverse `Sigma = Theta^{-1}` is carried alongside `Theta` so that a
//! column update needs `Theta_{-j,-j}^{-1}` only through a rank-one downdate of
//! `Sigma`; `Sigma` is recomputed from scratch after every full sweep.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GhsError, Result};
use crate::linalg;
use crate::model::{
    self, Dataset, GlobalScale, GraphEstimate, LatentSummary, PrecisionMatrix, ScaleMatrix,
    EULER_GAMMA,
};

/// Local scales never drop below this value; without a floor a null edge
/// halves its scale each iteration and eventually underflows.
pub const LAMBDA_SQ_FLOOR: f64 = 1e-100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "tau_sq", rename_all = "snake_case")]
pub enum TauMode {
    /// Global scale held fixed (normally chosen by AIC).
    Fixed(GlobalScale),
    /// Global scale re-estimated every iteration from the given start value.
    /// Diagnostic only: the estimate collapses towards zero.
    Updated(GlobalScale),
}

impl TauMode {
    pub fn initial(self) -> GlobalScale {
        match self {
            TauMode::Fixed(t) | TauMode::Updated(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcmConfig {
    /// Convergence threshold on the largest elementwise change of `Theta`.
    pub tol: f64,
    pub max_iter: usize,
    pub tau_mode: TauMode,
    /// Diagonal jitter for the column solve if its Cholesky factorisation
    /// fails numerically.
    pub epsilon_eig: f64,
    /// Scaled magnitude `|theta_ij| / sqrt(theta_ii theta_jj)` below which an
    /// entry counts as zero. Entries above it must also stop shrinking
    /// geometrically before a fit is declared converged.
    pub zero_tol: f64,
}

impl Default for EcmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 10_000,
            tau_mode: TauMode::Fixed(GlobalScale::new(1.0).expect("positive")),
            epsilon_eig: 1e-10,
            zero_tol: 1e-8,
        }
    }
}

impl EcmConfig {
    pub fn with_tau_sq(tau_sq: f64) -> Result<Self> {
        Ok(Self {
            tau_mode: TauMode::Fixed(GlobalScale::new(tau_sq)?),
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(GhsError::contract(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter < 1 {
            return Err(GhsError::contract("max_iter must be at least 1"));
        }
        if !(self.epsilon_eig > 0.0) {
            return Err(GhsError::contract("epsilon_eig must be positive"));
        }
        if !(self.zero_tol > 0.0) {
            return Err(GhsError::contract("zero_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EcmFit {
    pub theta: PrecisionMatrix,
    pub lambda_sq: ScaleMatrix,
    pub tau_sq: GlobalScale,
    pub iterations: usize,
    pub converged: bool,
    /// Latent-integrated log posterior after each iteration.
    pub objective_trace: Vec<f64>,
    /// `tau^2` after each iteration; constant unless the scale is updated.
    pub tau_trace: Vec<f64>,
}

impl EcmFit {
    pub fn graph(&self, threshold: f64) -> Result<GraphEstimate> {
        model::extract_graph(&self.theta, threshold)
    }
}

/// Starting point for a fit; defaults to `Theta = I`, `Lambda = 1`.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub theta: PrecisionMatrix,
    pub lambda_sq: ScaleMatrix,
}

impl From<&EcmFit> for WarmStart {
    fn from(fit: &EcmFit) -> Self {
        Self {
            theta: fit.theta.clone(),
            lambda_sq: fit.lambda_sq.clone(),
        }
    }
}

/// Progress notifications emitted by the fitting loops.
#[derive(Debug)]
pub enum FitEvent<'a> {
    /// State of one network at the end of `iteration` (`0` is the start value).
    State {
        iteration: usize,
        network: usize,
        theta: &'a DMatrix<f64>,
        lambda_sq: &'a ScaleMatrix,
        tau_sq: f64,
    },
    /// E-step of `iteration` finished.
    EStep {
        iteration: usize,
        latent: &'a LatentSummary,
    },
    /// One column of network `network` was updated.
    Column {
        iteration: usize,
        network: usize,
        col: usize,
        theta: &'a DMatrix<f64>,
    },
}

pub type Observer<'o> = &'o mut dyn FnMut(&FitEvent<'_>);

/// E-step: moments of `nu_ij | lambda_ij^2 ~ InvGamma(1, 1 + 1/lambda_ij^2)`.
pub fn e_step_single(lambda_sq: &ScaleMatrix) -> Result<LatentSummary> {
    let m = lambda_sq.as_matrix();
    if let Some(v) = m.iter().find(|v| !(**v > 0.0)) {
        return Err(GhsError::domain(format!(
            "local scale must be positive, got {v}"
        )));
    }
    let inv_nu_expect = m.map(|l2| 1.0 / (1.0 + 1.0 / l2));
    let log_nu_expect = m.map(|l2| (1.0 + 1.0 / l2).ln() + EULER_GAMMA);
    Ok(LatentSummary {
        inv_nu_expect,
        log_nu_expect,
    })
}

/// Closed-form maximiser of the objective in one `lambda_ij^2`.
pub fn cm_lambda(theta_ij: f64, inv_nu: f64, tau_sq: f64) -> f64 {
    (inv_nu + theta_ij * theta_ij / (2.0 * tau_sq)) / 2.0
}

/// Closed-form maximiser of the objective in `tau^2` when the global scale
/// carries its own half-Cauchy prior.
pub fn cm_tau_update(theta: &PrecisionMatrix, lambda_sq: &ScaleMatrix, tau_sq_prev: f64) -> f64 {
    let p = theta.p();
    let th = theta.as_matrix();
    let tau_star = tau_sq_prev / (tau_sq_prev + 1.0);
    let mut ratio_sum = 0.0;
    for j in 1..p {
        for i in 0..j {
            ratio_sum += th[(i, j)] * th[(i, j)] / lambda_sq.get(i, j);
        }
    }
    (2.0 * ratio_sum + 4.0 * tau_star) / ((p * (p - 1)) as f64 + 6.0)
}

/// A precision matrix together with its inverse.
#[derive(Debug, Clone)]
pub struct PrecisionState {
    theta: DMatrix<f64>,
    sigma: DMatrix<f64>,
    jitter: f64,
}

impl PrecisionState {
    pub fn new(theta: &PrecisionMatrix, jitter: f64) -> Result<Self> {
        let sigma = linalg::spd_inverse(theta.as_matrix())?;
        Ok(Self {
            theta: theta.as_matrix().clone(),
            sigma,
            jitter,
        })
    }

    pub fn p(&self) -> usize {
        self.theta.nrows()
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Recomputes `Sigma` by full inversion, failing if `Theta` lost
    /// positive definiteness.
    pub fn refresh_inverse(&mut self) -> Result<()> {
        linalg::symmetrize(&mut self.theta);
        self.sigma = linalg::spd_inverse(&self.theta)?;
        Ok(())
    }

    pub fn to_precision(&self) -> PrecisionMatrix {
        PrecisionMatrix::from_trusted(self.theta.clone())
    }
}

/// Blockwise update of column (and row) `col` of `Theta`, treating it as the
/// last one:
///
/// ```text
/// theta_{-j,j} = -(s_jj Theta_{-j,-j}^{-1} + diag(tau^2 lambda_{-j,j}^2)^{-1})^{-1} s_{-j,j}
/// theta_jj     = theta_{-j,j}^T Theta_{-j,-j}^{-1} theta_{-j,j} + n / s_jj
/// ```
///
/// `Sigma` is updated in place to the inverse of the new `Theta`.
pub fn cm_theta_column(
    state: &mut PrecisionState,
    lambda_sq: &ScaleMatrix,
    tau_sq: f64,
    scatter: &DMatrix<f64>,
    n: f64,
    col: usize,
) -> Result<()> {
    let p = state.p();
    if col >= p || lambda_sq.p() != p || scatter.nrows() != p {
        return Err(GhsError::contract(format!(
            "column {col} / dimension mismatch for p = {p}"
        )));
    }
    let s_jj = scatter[(col, col)];
    if !(s_jj > 0.0) {
        return Err(GhsError::domain(format!(
            "column {col} has nonpositive scatter diagonal {s_jj}"
        )));
    }
    let idx = linalg::complement(p, col);
    let q = idx.len();

    // Theta_{-j,-j}^{-1} from the blockwise inverse identity.
    let sigma_jj = state.sigma[(col, col)];
    let sigma_col = linalg::gather_vec(&state.sigma, &idx, col);
    let mut block_inv = linalg::gather_block(&state.sigma, &idx);
    block_inv.ger(-1.0 / sigma_jj, &sigma_col, &sigma_col, 1.0);

    let prior: Vec<f64> = idx
        .iter()
        .map(|&i| 1.0 / (tau_sq * lambda_sq.get(i, col)))
        .collect();
    let s_col = linalg::gather_vec(scatter, &idx, col);
    let beta = solve_column(&block_inv, s_jj, &prior, &s_col, state.jitter).map_err(|_| {
        GhsError::domain(format!(
            "column {col}: update system is not positive definite"
        ))
    })?;
    let u = &block_inv * &beta;
    let gamma = n / s_jj;
    let theta_jj = beta.dot(&u) + gamma;

    for a in 0..q {
        state.theta[(idx[a], col)] = beta[a];
        state.theta[(col, idx[a])] = beta[a];
    }
    state.theta[(col, col)] = theta_jj;

    for b in 0..q {
        for a in 0..q {
            state.sigma[(idx[a], idx[b])] = block_inv[(a, b)] + u[a] * u[b] / gamma;
        }
        state.sigma[(idx[b], col)] = -u[b] / gamma;
        state.sigma[(col, idx[b])] = -u[b] / gamma;
    }
    state.sigma[(col, col)] = 1.0 / gamma;
    Ok(())
}

/// Prior precisions this many times larger than the likelihood curvature are
/// handled by a diagonal refinement instead of the dense solve. The neglected
/// coupling is of relative order `1/INACTIVE_RATIO^2`, below double precision.
const INACTIVE_RATIO: f64 = 1e8;

/// Solves `(s_jj B + diag(prior)) beta = -s`.
///
/// Coordinates whose prior precision dwarfs `s_jj B` are solved by one
/// refinement step around `-s_a / prior_a`; only the remaining ones go through
/// a Cholesky factorisation. Once most local scales have collapsed this makes
/// the column update `O(p^2)` instead of `O(p^3)`.
fn solve_column(
    block_inv: &DMatrix<f64>,
    s_jj: f64,
    prior: &[f64],
    s_col: &DVector<f64>,
    jitter: f64,
) -> std::result::Result<DVector<f64>, ()> {
    let q = prior.len();
    let curvature = s_jj * block_inv.diagonal().max();
    let (active, inactive): (Vec<usize>, Vec<usize>) =
        (0..q).partition(|&a| prior[a] <= INACTIVE_RATIO * curvature);

    let mut beta = DVector::zeros(q);
    for &a in &inactive {
        beta[a] = -s_col[a] / prior[a];
    }
    if !active.is_empty() {
        let m = active.len();
        let mut system = DMatrix::from_fn(m, m, |x, y| s_jj * block_inv[(active[x], active[y])]);
        let mut rhs = DVector::from_fn(m, |x, _| -s_col[active[x]]);
        for (x, &a) in active.iter().enumerate() {
            system[(x, x)] += prior[a];
            let coupled: f64 = inactive.iter().map(|&b| block_inv[(a, b)] * beta[b]).sum();
            rhs[x] -= s_jj * coupled;
        }
        let chol = match Cholesky::new(system.clone()) {
            Some(c) => c,
            None => {
                for x in 0..m {
                    system[(x, x)] += jitter;
                }
                Cholesky::new(system).ok_or(())?
            }
        };
        let sol = chol.solve(&rhs);
        for (x, &a) in active.iter().enumerate() {
            beta[a] = sol[x];
        }
    }
    if !inactive.is_empty() {
        let previous = beta.clone();
        for &a in &inactive {
            let coupled = block_inv.column(a).dot(&previous) - block_inv[(a, a)] * previous[a];
            beta[a] = -(s_col[a] + s_jj * coupled) / (prior[a] + s_jj * block_inv[(a, a)]);
        }
    }
    Ok(beta)
}

/// Mutable state of one network during ECM iterations.
#[derive(Debug, Clone)]
pub(crate) struct NetworkState {
    pub prec: PrecisionState,
    pub lambda_sq: ScaleMatrix,
    pub tau_sq: f64,
}

impl NetworkState {
    pub fn new(p: usize, tau_sq: f64, warm: Option<&WarmStart>, jitter: f64) -> Result<Self> {
        let (theta, lambda_sq) = match warm {
            Some(w) => {
                if w.theta.p() != p || w.lambda_sq.p() != p {
                    return Err(GhsError::contract("warm start has the wrong dimension"));
                }
                (w.theta.clone(), w.lambda_sq.clone())
            }
            None => (PrecisionMatrix::identity(p), ScaleMatrix::ones(p)),
        };
        Ok(Self {
            prec: PrecisionState::new(&theta, jitter)?,
            lambda_sq,
            tau_sq,
        })
    }

    pub fn emit_state(
        &self,
        iteration: usize,
        network: usize,
        observer: &mut Option<Observer<'_>>,
    ) {
        if let Some(obs) = observer.as_mut() {
            obs(&FitEvent::State {
                iteration,
                network,
                theta: self.prec.theta(),
                lambda_sq: &self.lambda_sq,
                tau_sq: self.tau_sq,
            });
        }
    }

    pub fn lambda_sweep(&mut self, inv_nu: &DMatrix<f64>) {
        let p = self.prec.p();
        let theta = &self.prec.theta;
        let lambda = self.lambda_sq.as_matrix_mut();
        for j in 1..p {
            for i in 0..j {
                let v = cm_lambda(theta[(i, j)], inv_nu[(i, j)], self.tau_sq).max(LAMBDA_SQ_FLOOR);
                lambda[(i, j)] = v;
                lambda[(j, i)] = v;
            }
        }
    }

    /// Full column sweep followed by a refresh of `Sigma`.
    pub fn theta_sweep(
        &mut self,
        scatter: &DMatrix<f64>,
        n: f64,
        iteration: usize,
        network: usize,
        observer: &mut Option<Observer<'_>>,
    ) -> Result<SweepChange> {
        let before = self.prec.theta.clone();
        for col in 0..self.prec.p() {
            cm_theta_column(
                &mut self.prec,
                &self.lambda_sq,
                self.tau_sq,
                scatter,
                n,
                col,
            )?;
            if let Some(obs) = observer.as_mut() {
                obs(&FitEvent::Column {
                    iteration,
                    network,
                    col,
                    theta: self.prec.theta(),
                });
            }
        }
        self.prec.refresh_inverse()?;
        Ok(SweepChange::between(&before, &self.prec.theta))
    }
}

/// How much `Theta` moved during one sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SweepChange {
    pub max_abs: f64,
    /// Largest scaled magnitude among off-diagonal entries that lost more
    /// than a third of their size in the sweep (still collapsing to zero).
    pub collapsing: f64,
}

impl SweepChange {
    fn between(before: &DMatrix<f64>, after: &DMatrix<f64>) -> Self {
        let p = after.nrows();
        let mut collapsing: f64 = 0.0;
        for j in 1..p {
            for i in 0..j {
                let (old, new) = (before[(i, j)], after[(i, j)]);
                if (new - old).abs() > 0.5 * new.abs() {
                    let scale = (after[(i, i)] * after[(j, j)]).sqrt();
                    collapsing = collapsing.max(new.abs() / scale);
                }
            }
        }
        Self {
            max_abs: linalg::max_abs_diff(before, after),
            collapsing,
        }
    }

    pub fn converged(&self, config: &EcmConfig) -> bool {
        self.max_abs < config.tol && self.collapsing < config.zero_tol
    }
}

pub fn fit_single(data: &Dataset, config: &EcmConfig) -> Result<EcmFit> {
    fit_scatter(data.scatter(), data.n() as f64, config, None, None)
}

/// Single-network ECM on a scatter matrix `S` computed from `n` samples.
pub fn fit_scatter(
    scatter: &DMatrix<f64>,
    n: f64,
    config: &EcmConfig,
    warm: Option<&WarmStart>,
    mut observer: Option<Observer<'_>>,
) -> Result<EcmFit> {
    config.validate()?;
    let p = scatter.nrows();
    if p < 2 || !scatter.is_square() {
        return Err(GhsError::contract(
            "scatter matrix must be square with p >= 2",
        ));
    }
    if let Some(j) = (0..p).find(|&j| !(scatter[(j, j)] > 0.0)) {
        return Err(GhsError::domain(format!("column {j} has zero variance")));
    }
    let updating = matches!(config.tau_mode, TauMode::Updated(_));
    let mut net = NetworkState::new(p, config.tau_mode.initial().get(), warm, config.epsilon_eig)?;
    net.emit_state(0, 0, &mut observer);

    let mut objective_trace = Vec::new();
    let mut tau_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        let latent = e_step_single(&net.lambda_sq)?;
        if let Some(obs) = observer.as_mut() {
            obs(&FitEvent::EStep {
                iteration: iterations,
                latent: &latent,
            });
        }
        net.lambda_sweep(&latent.inv_nu_expect);
        let change = net.theta_sweep(scatter, n, iterations, 0, &mut observer)?;
        if updating {
            let theta = net.prec.to_precision();
            net.tau_sq = cm_tau_update(&theta, &net.lambda_sq, net.tau_sq);
        }
        net.emit_state(iterations, 0, &mut observer);

        let theta = net.prec.to_precision();
        objective_trace.push(model::log_posterior(
            &[&theta],
            &[&net.lambda_sq],
            &[net.tau_sq],
            &[scatter],
            &[n],
            updating,
        )?);
        tau_trace.push(net.tau_sq);
        if change.converged(config) {
            converged = true;
            break;
        }
    }
    log::debug!("single ECM: p = {p}, {iterations} iterations, converged = {converged}");
    Ok(EcmFit {
        theta: net.prec.to_precision(),
        lambda_sq: net.lambda_sq,
        tau_sq: GlobalScale::new(net.tau_sq)?,
        iterations,
        converged,
        objective_trace,
        tau_trace,
    })
}
