//! Independent numerical oracles for the closed-form updates: quadrature for
//! the latent moments, Brent and Nelder-Mead for the CM steps.

#![allow(dead_code)]

use argmin::core::{CostFunction, Error, Executor, State};
use argmin::solver::brent::BrentOpt;
use argmin::solver::neldermead::NelderMead;
use ghsnet_core::joint::{cm_lambda_joint, e_step_joint};
use ghsnet_core::single::{
    cm_lambda, cm_tau_update, cm_theta_column, e_step_single, PrecisionState,
};
use ghsnet_core::{MomentMode, PrecisionMatrix, ScaleMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `E[g(nu)]` under `InvGamma(shape, rate)` by double-exponential quadrature
/// on `nu = t / (1 - t)`, normalised numerically.
pub fn inv_gamma_expectation(shape: f64, rate: f64, g: impl Fn(f64) -> f64) -> f64 {
    // Work with log density relative to the mode to keep the integrand O(1).
    let mode = rate / (shape + 1.0);
    let log_kernel = |nu: f64| -(shape + 1.0) * (nu / mode).ln() - rate / nu + rate / mode;
    let weight = |t: f64, with_g: bool| {
        if t <= 0.0 || t >= 1.0 {
            return 0.0;
        }
        let nu = mode * t / (1.0 - t);
        let jac = mode / (1.0 - t).powi(2);
        let k = log_kernel(nu).exp() * jac;
        if with_g {
            k * g(nu)
        } else {
            k
        }
    };
    let num = quadrature::integrate(|t| weight(t, true), 0.0, 1.0, 1e-14).integral;
    let den = quadrature::integrate(|t| weight(t, false), 0.0, 1.0, 1e-14).integral;
    num / den
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn log_uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (r.random_range(lo.ln()..hi.ln())).exp()
}

/// Negative local-scale part of Q in `x = log lambda^2`.
pub struct LambdaCost {
    pub theta: f64,
    pub inv_nu: f64,
    pub tau_sq: f64,
}

impl CostFunction for LambdaCost {
    type Param = f64;
    type Output = f64;

    fn cost(&self, x: &f64) -> Result<f64, Error> {
        let l2 = x.exp();
        Ok(2.0 * x + self.theta * self.theta / (2.0 * self.tau_sq * l2) + self.inv_nu / l2)
    }
}

pub fn brent_argmin<C: CostFunction<Param = f64, Output = f64>>(cost: C, lo: f64, hi: f64) -> f64 {
    let solver = BrentOpt::new(lo, hi).set_tolerance(1e-14, 1e-14);
    let res = Executor::new(cost, solver)
        .configure(|s| s.max_iters(500))
        .run()
        .unwrap();
    *res.state().get_best_param().unwrap()
}

/// Negative global-scale part of the objective with the half-Cauchy prior
/// on `tau`, in `x = log tau^2`.
pub struct TauCost {
    pub pairs: f64,
    pub weighted_sq: f64,
    pub tau_star: f64,
}

impl CostFunction for TauCost {
    type Param = f64;
    type Output = f64;

    fn cost(&self, x: &f64) -> Result<f64, Error> {
        let t = x.exp();
        Ok((self.pairs / 2.0 + 1.5) * x + (self.weighted_sq / 2.0 + self.tau_star) / t)
    }
}

/// Negative `Theta`-part of Q as a function of one column (off-diagonals in
/// index order, then the diagonal entry).
pub struct ColumnCost {
    pub theta: DMatrix<f64>,
    pub scatter: DMatrix<f64>,
    pub lambda_sq: DMatrix<f64>,
    pub tau_sq: f64,
    pub n: f64,
    pub col: usize,
}

impl ColumnCost {
    pub fn with_column(&self, v: &[f64]) -> DMatrix<f64> {
        let mut m = self.theta.clone();
        let others: Vec<usize> = (0..m.nrows()).filter(|&i| i != self.col).collect();
        for (a, &i) in others.iter().enumerate() {
            m[(i, self.col)] = v[a];
            m[(self.col, i)] = v[a];
        }
        m[(self.col, self.col)] = v[others.len()];
        m
    }
}

impl CostFunction for ColumnCost {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, v: &Vec<f64>) -> Result<f64, Error> {
        let m = self.with_column(v);
        let Some(chol) = m.clone().cholesky() else {
            return Ok(f64::INFINITY);
        };
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let p = m.nrows();
        let mut q = 0.5 * self.n * log_det - 0.5 * (&self.scatter * &m).trace();
        for j in 1..p {
            for i in 0..j {
                q -= m[(i, j)].powi(2) / (2.0 * self.tau_sq * self.lambda_sq[(i, j)]);
            }
        }
        Ok(-q)
    }
}

pub fn nelder_mead(cost: &ColumnCost, start: Vec<f64>) -> Vec<f64> {
    let mut best = start;
    // Restarting from the best vertex with a fresh simplex guards against
    // premature collapse.
    for round in 0..6 {
        let step = 0.05 / 10f64.powi(round);
        let mut simplex = vec![best.clone()];
        for k in 0..best.len() {
            let mut v = best.clone();
            v[k] += step;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex).with_sd_tolerance(1e-16).unwrap();
        let problem = ColumnCost {
            theta: cost.theta.clone(),
            scatter: cost.scatter.clone(),
            lambda_sq: cost.lambda_sq.clone(),
            ..*cost
        };
        let res = Executor::new(problem, solver)
            .configure(|s| s.max_iters(20_000))
            .run()
            .unwrap();
        best = res.state().get_best_param().unwrap().clone();
    }
    best
}

pub fn random_spd(p: usize, r: &mut ChaCha8Rng, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| r.random_range(-1.0..1.0));
    let m = &a * a.transpose() + DMatrix::identity(p, p) * ridge;
    (&m + m.transpose()) * 0.5
}

/// Largest absolute error of the single E-step over `draws` random scales.
pub fn single_e_step_error(draws: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let l2 = log_uniform(&mut r, 1e-3, 1e3);
        let scale = ScaleMatrix::new(DMatrix::from_element(2, 2, l2)).unwrap();
        let latent = e_step_single(&scale).unwrap();
        let rate = 1.0 + 1.0 / l2;
        let inv = inv_gamma_expectation(1.0, rate, |v| 1.0 / v);
        let log = inv_gamma_expectation(1.0, rate, f64::ln);
        worst = worst.max((latent.inv_nu_expect[(0, 1)] - inv).abs());
        worst = worst.max((latent.log_nu_expect[(0, 1)] - log).abs());
    }
    worst
}

/// As [`single_e_step_error`] for the shared latent in inverse-gamma moment
/// mode with K in 2..=5.
pub fn joint_e_step_error(draws: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for draw in 0..draws {
        let k = 2 + draw % 4;
        let scales: Vec<ScaleMatrix> = (0..k)
            .map(|_| {
                ScaleMatrix::new(DMatrix::from_element(2, 2, log_uniform(&mut r, 1e-2, 1e2)))
                    .unwrap()
            })
            .collect();
        let refs: Vec<&ScaleMatrix> = scales.iter().collect();
        let latent = e_step_joint(&refs, MomentMode::InvGammaMoment).unwrap();
        let rate = 1.0 + scales.iter().map(|s| 1.0 / s.get(0, 1)).sum::<f64>();
        let shape = (k as f64 + 1.0) / 2.0;
        let inv = inv_gamma_expectation(shape, rate, |v| 1.0 / v);
        let log = inv_gamma_expectation(shape, rate, f64::ln);
        worst = worst.max((latent.inv_nu_expect[(0, 1)] - inv).abs());
        worst = worst.max((latent.log_nu_expect[(0, 1)] - log).abs());
    }
    worst
}

/// Largest relative gap between the local-scale updates (single and joint)
/// and a Brent maximiser.
pub fn lambda_error(draws: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let theta = r.random_range(-1.0..1.0);
        let inv_nu = r.random_range(0.01..1.0);
        let tau_sq = log_uniform(&mut r, 1e-3, 10.0);
        let x = brent_argmin(
            LambdaCost {
                theta,
                inv_nu,
                tau_sq,
            },
            -40.0,
            40.0,
        )
        .exp();
        for closed in [
            cm_lambda(theta, inv_nu, tau_sq),
            cm_lambda_joint(theta, inv_nu, tau_sq),
        ] {
            worst = worst.max((x - closed).abs() / closed);
        }
    }
    worst
}

/// Largest relative gap between the global-scale update and a Brent
/// maximiser, over `per_p` instances for each p in 2..=4.
pub fn tau_error(per_p: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for p in 2..=4 {
        for _ in 0..per_p {
            let mut th = DMatrix::identity(p, p) * 3.0;
            let mut l2 = DMatrix::from_element(p, p, 1.0);
            let mut weighted_sq = 0.0;
            for j in 1..p {
                for i in 0..j {
                    let t = r.random_range(-0.5..0.5);
                    let l = log_uniform(&mut r, 0.05, 20.0);
                    th[(i, j)] = t;
                    th[(j, i)] = t;
                    l2[(i, j)] = l;
                    l2[(j, i)] = l;
                    weighted_sq += t * t / l;
                }
            }
            let prev = log_uniform(&mut r, 1e-2, 1e2);
            let closed = cm_tau_update(
                &PrecisionMatrix::new(th).unwrap(),
                &ScaleMatrix::new(l2).unwrap(),
                prev,
            );
            let cost = TauCost {
                pairs: (p * (p - 1) / 2) as f64,
                weighted_sq,
                tau_star: prev / (prev + 1.0),
            };
            let x = brent_argmin(cost, -40.0, 40.0).exp();
            worst = worst.max((x - closed).abs() / closed);
        }
    }
    worst
}

/// Outcome of one column-update comparison.
pub struct ColumnCheck {
    pub p: usize,
    pub col: usize,
    pub before: DMatrix<f64>,
    pub closed: DMatrix<f64>,
    pub numeric: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl ColumnCheck {
    /// Elementwise gap relative to the largest entry (at least 1).
    pub fn relative_error(&self) -> f64 {
        (&self.closed - &self.numeric).abs().max() / self.closed.abs().max().max(1.0)
    }
}

/// Column updates on random instances, `per_p` for each p in 2..=4, with the
/// Nelder-Mead maximiser of the same block.
pub fn column_checks(per_p: usize, seed: u64) -> Vec<ColumnCheck> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for p in [2, 3, 4] {
        for _ in 0..per_p {
            let n = r.random_range(5.0..40.0);
            let scatter = random_spd(p, &mut r, 0.5) * n;
            let theta = random_spd(p, &mut r, 1.0);
            let mut lambda_sq = DMatrix::from_element(p, p, 1.0);
            for j in 1..p {
                for i in 0..j {
                    let l = log_uniform(&mut r, 0.05, 5.0);
                    lambda_sq[(i, j)] = l;
                    lambda_sq[(j, i)] = l;
                }
            }
            let tau_sq = log_uniform(&mut r, 0.05, 5.0);
            let col = r.random_range(0..p);

            let mut state =
                PrecisionState::new(&PrecisionMatrix::new(theta.clone()).unwrap(), 1e-10).unwrap();
            let scales = ScaleMatrix::new(lambda_sq.clone()).unwrap();
            cm_theta_column(&mut state, &scales, tau_sq, &scatter, n, col).unwrap();

            let cost = ColumnCost {
                theta: theta.clone(),
                scatter,
                lambda_sq,
                tau_sq,
                n,
                col,
            };
            let mut start: Vec<f64> = (0..p)
                .filter(|&i| i != col)
                .map(|i| theta[(i, col)])
                .collect();
            start.push(theta[(col, col)]);
            let numeric = cost.with_column(&nelder_mead(&cost, start));
            out.push(ColumnCheck {
                p,
                col,
                before: theta,
                closed: state.theta().clone(),
                numeric,
                sigma: state.sigma().clone(),
            });
        }
    }
    out
}
