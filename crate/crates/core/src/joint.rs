//! Joint graphical horseshoe over `K` networks.
//!
//! The networks keep their own precision matrices, local scales and global
//! scales, and share one latent `nu_ij` per node pair. The E-step computes the
//! shared expectation of `1/nu_ij` from all `K` local scales; given it, the
//! networks' CM sweeps are independent and may run in parallel.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GhsError, Result};
use crate::model::{self, digamma_half_integer, Dataset, GlobalScale, LatentSummary, ScaleMatrix};
use crate::single::{
    cm_lambda, EcmConfig, EcmFit, FitEvent, NetworkState, Observer, SweepChange, TauMode, WarmStart,
};

/// Which expectation of `1/nu_ij` the E-step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMode {
    /// `K / (2b)`, the published formula.
    #[default]
    PaperPrinted,
    /// `(K + 1) / (2b)`, the mean of the `InvGamma((K+1)/2, b)` conditional.
    /// Reduces exactly to the single-network E-step when `K = 1`.
    InvGammaMoment,
}

/// Shared E-step. With `b = 1 + sum_k 1/lambda_ijk^2`,
/// `E[log nu] = log b - digamma((K+1)/2)` and `E[1/nu]` follows `mode`.
pub fn e_step_joint(lambda_sqs: &[&ScaleMatrix], mode: MomentMode) -> Result<LatentSummary> {
    let k = lambda_sqs.len();
    if k == 0 {
        return Err(GhsError::contract(
            "e_step_joint needs at least one network",
        ));
    }
    let p = lambda_sqs[0].p();
    if lambda_sqs.iter().any(|l| l.p() != p) {
        return Err(GhsError::contract("local scale matrices differ in shape"));
    }
    for l in lambda_sqs {
        if let Some(v) = l.as_matrix().iter().find(|v| !(**v > 0.0)) {
            return Err(GhsError::domain(format!(
                "local scale must be positive, got {v}"
            )));
        }
    }
    let kf = k as f64;
    let psi = digamma_half_integer((kf + 1.0) / 2.0)?;
    let numerator = match mode {
        MomentMode::PaperPrinted => kf,
        MomentMode::InvGammaMoment => kf + 1.0,
    };
    let mut rate = DMatrix::from_element(p, p, 1.0);
    for l in lambda_sqs {
        rate.zip_apply(l.as_matrix(), |b, l2| *b += 1.0 / l2);
    }
    Ok(LatentSummary {
        inv_nu_expect: rate.map(|b| numerator / (2.0 * b)),
        log_nu_expect: rate.map(|b| b.ln() - psi),
    })
}

/// Local-scale update for network `k` given the shared `E[1/nu_ij]`.
pub fn cm_lambda_joint(theta_ijk: f64, shared_inv_nu: f64, tau_sq_k: f64) -> f64 {
    cm_lambda(theta_ijk, shared_inv_nu, tau_sq_k)
}

/// Datasets over the same variables with one global scale each.
#[derive(Debug, Clone)]
pub struct JointProblem {
    datasets: Vec<Dataset>,
    tau_sqs: Vec<GlobalScale>,
}

impl JointProblem {
    pub fn new(datasets: Vec<Dataset>, tau_sqs: Vec<GlobalScale>) -> Result<Self> {
        if datasets.is_empty() {
            return Err(GhsError::contract(
                "joint problem needs at least one dataset",
            ));
        }
        if datasets.len() != tau_sqs.len() {
            return Err(GhsError::contract(format!(
                "{} datasets but {} global scales",
                datasets.len(),
                tau_sqs.len()
            )));
        }
        let p = datasets[0].p();
        for (k, d) in datasets.iter().enumerate() {
            if d.p() != p {
                return Err(GhsError::contract(format!(
                    "dataset {k} has {} variables, expected {p}",
                    d.p()
                )));
            }
            if d.names() != datasets[0].names() {
                return Err(GhsError::contract(format!(
                    "dataset {k} has a different variable ordering"
                )));
            }
        }
        Ok(Self { datasets, tau_sqs })
    }

    pub fn k(&self) -> usize {
        self.datasets.len()
    }

    pub fn p(&self) -> usize {
        self.datasets[0].p()
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn tau_sqs(&self) -> &[GlobalScale] {
        &self.tau_sqs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointConfig {
    pub ecm: EcmConfig,
    pub moment_mode: MomentMode,
    /// Run the per-network sweeps on the rayon pool.
    pub parallel: bool,
}

#[derive(Debug, Clone)]
pub struct JointFit {
    /// Per-network results. Their `objective_trace` is left empty; the joint
    /// objective is in [`JointFit::objective_trace`].
    pub fits: Vec<EcmFit>,
    /// Final `E[1/nu_ij]` from the last E-step.
    pub shared_inv_nu: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Latent-integrated joint log posterior after each iteration. Guaranteed
    /// non-decreasing only under [`MomentMode::InvGammaMoment`].
    pub objective_trace: Vec<f64>,
}

pub fn fit_joint(problem: &JointProblem, config: &JointConfig) -> Result<JointFit> {
    let scatters: Vec<&DMatrix<f64>> = problem.datasets.iter().map(|d| d.scatter()).collect();
    let ns: Vec<f64> = problem.datasets.iter().map(|d| d.n() as f64).collect();
    let taus: Vec<f64> = problem.tau_sqs.iter().map(|t| t.get()).collect();
    fit_joint_scatters(&scatters, &ns, &taus, config, None, None)
}

/// Joint ECM on bare scatter matrices.
pub fn fit_joint_scatters(
    scatters: &[&DMatrix<f64>],
    ns: &[f64],
    tau_sqs: &[f64],
    config: &JointConfig,
    warm: Option<&[WarmStart]>,
    mut observer: Option<Observer<'_>>,
) -> Result<JointFit> {
    config.ecm.validate()?;
    if matches!(config.ecm.tau_mode, TauMode::Updated(_)) {
        return Err(GhsError::contract(
            "joint fits take fixed global scales; select them per network first",
        ));
    }
    let k = scatters.len();
    if k == 0 || ns.len() != k || tau_sqs.len() != k {
        return Err(GhsError::contract("inconsistent number of networks"));
    }
    if let Some(w) = warm {
        if w.len() != k {
            return Err(GhsError::contract(
                "warm start count differs from network count",
            ));
        }
    }
    let p = scatters[0].nrows();
    for (net, s) in scatters.iter().enumerate() {
        if s.nrows() != p || !s.is_square() {
            return Err(GhsError::contract("scatter matrices differ in shape").in_network(net));
        }
        GlobalScale::new(tau_sqs[net]).map_err(|e| e.in_network(net))?;
    }

    let mut states = Vec::with_capacity(k);
    for net in 0..k {
        let state = NetworkState::new(
            p,
            tau_sqs[net],
            warm.map(|w| &w[net]),
            config.ecm.epsilon_eig,
        )
        .map_err(|e| e.in_network(net))?;
        state.emit_state(0, net, &mut observer);
        states.push(state);
    }

    let parallel = config.parallel && observer.is_none();
    let mut objective_trace = Vec::new();
    let mut shared_inv_nu = DMatrix::zeros(p, p);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.ecm.max_iter {
        iterations += 1;
        let lambdas: Vec<&ScaleMatrix> = states.iter().map(|s| &s.lambda_sq).collect();
        let latent = e_step_joint(&lambdas, config.moment_mode)?;
        if let Some(obs) = observer.as_mut() {
            obs(&FitEvent::EStep {
                iteration: iterations,
                latent: &latent,
            });
        }
        let inv_nu = &latent.inv_nu_expect;

        let changes: Vec<SweepChange> = if parallel {
            states
                .par_iter_mut()
                .enumerate()
                .map(|(net, st)| {
                    st.lambda_sweep(inv_nu);
                    st.theta_sweep(scatters[net], ns[net], iterations, net, &mut None)
                        .map_err(|e| e.in_network(net))
                })
                .collect::<Result<_>>()?
        } else {
            let mut out = Vec::with_capacity(k);
            for (net, st) in states.iter_mut().enumerate() {
                st.lambda_sweep(inv_nu);
                let change = st
                    .theta_sweep(scatters[net], ns[net], iterations, net, &mut observer)
                    .map_err(|e| e.in_network(net))?;
                st.emit_state(iterations, net, &mut observer);
                out.push(change);
            }
            out
        };
        shared_inv_nu = latent.inv_nu_expect;

        let thetas: Vec<_> = states.iter().map(|s| s.prec.to_precision()).collect();
        let theta_refs: Vec<_> = thetas.iter().collect();
        let lambda_refs: Vec<_> = states.iter().map(|s| &s.lambda_sq).collect();
        objective_trace.push(model::log_posterior(
            &theta_refs,
            &lambda_refs,
            tau_sqs,
            scatters,
            ns,
            false,
        )?);

        if changes.iter().all(|c| c.converged(&config.ecm)) {
            converged = true;
            break;
        }
    }
    log::debug!("joint ECM: K = {k}, p = {p}, {iterations} iterations, converged = {converged}");

    let fits = states
        .into_iter()
        .map(|st| {
            Ok(EcmFit {
                theta: st.prec.to_precision(),
                tau_sq: GlobalScale::new(st.tau_sq)?,
                lambda_sq: st.lambda_sq,
                iterations,
                converged,
                objective_trace: Vec::new(),
                tau_trace: vec![st.tau_sq; iterations],
            })
        })
        .collect::<Result<_>>()?;
    Ok(JointFit {
        fits,
        shared_inv_nu,
        iterations,
        converged,
        objective_trace,
    })
}
