//! Shared domain types, the partial-correlation transform, edge extraction
//! and the ECM objective.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GhsError, Result};
use crate::linalg;

/// Edge threshold on |partial correlation| used when no other is given.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 1e-5;

/// Euler–Mascheroni constant; `digamma(1) = -EULER_GAMMA`.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Digamma at a positive integer or half-integer argument, built by the
/// recurrence `psi(x + 1) = psi(x) + 1/x` from `psi(1)` and `psi(1/2)`.
pub fn digamma_half_integer(x: f64) -> Result<f64> {
    let twice = 2.0 * x;
    if !(x > 0.0) || (twice - twice.round()).abs() > 1e-12 {
        return Err(GhsError::domain(format!(
            "digamma only supported at positive multiples of 1/2, got {x}"
        )));
    }
    let steps = twice.round() as u64;
    let (mut value, mut arg) = if steps % 2 == 0 {
        (-EULER_GAMMA, 1.0)
    } else {
        (-EULER_GAMMA - 2.0 * std::f64::consts::LN_2, 0.5)
    };
    while arg + 0.25 < x {
        value += 1.0 / arg;
        arg += 1.0;
    }
    Ok(value)
}

/// Observations with their cached scatter matrix. Columns are centred on
/// construction and, optionally, scaled to unit variance.
#[derive(Debug, Clone)]
pub struct Dataset {
    observations: DMatrix<f64>,
    scatter: DMatrix<f64>,
    column_means: Vec<f64>,
    column_scales: Option<Vec<f64>>,
    names: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DatasetOptions {
    /// Rescale every centred column to unit sample variance.
    pub scale: bool,
}

impl Dataset {
    pub fn new(observations: DMatrix<f64>) -> Result<Self> {
        let names = (1..=observations.ncols())
            .map(|j| format!("V{j}"))
            .collect();
        Self::with_names(observations, names, DatasetOptions::default())
    }

    pub fn with_names(
        mut observations: DMatrix<f64>,
        names: Vec<String>,
        options: DatasetOptions,
    ) -> Result<Self> {
        let (n, p) = observations.shape();
        if n < 2 || p < 2 {
            return Err(GhsError::contract(format!(
                "need at least 2 samples and 2 variables, got {n}x{p}"
            )));
        }
        if names.len() != p {
            return Err(GhsError::contract(format!(
                "{} column names for {p} columns",
                names.len()
            )));
        }
        if let Some(bad) = observations.iter().position(|v| !v.is_finite()) {
            return Err(GhsError::Parse(format!(
                "non-finite value at row {}, column {}",
                bad % n,
                bad / n
            )));
        }
        let mut column_means = Vec::with_capacity(p);
        for (j, mut col) in observations.column_iter_mut().enumerate() {
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                return Err(GhsError::DegenerateColumn {
                    index: j,
                    name: names[j].clone(),
                });
            }
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            column_means.push(mean);
        }
        let column_scales = if options.scale {
            let mut scales = Vec::with_capacity(p);
            for mut col in observations.column_iter_mut() {
                let sd = (col.norm_squared() / (n as f64 - 1.0)).sqrt();
                col /= sd;
                scales.push(sd);
            }
            Some(scales)
        } else {
            None
        };
        let mut scatter = observations.tr_mul(&observations);
        linalg::symmetrize(&mut scatter);
        for j in 0..p {
            if !(scatter[(j, j)] > 0.0) {
                return Err(GhsError::DegenerateColumn {
                    index: j,
                    name: names[j].clone(),
                });
            }
        }
        Ok(Self {
            observations,
            scatter,
            column_means,
            column_scales,
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.observations.nrows()
    }

    pub fn p(&self) -> usize {
        self.observations.ncols()
    }

    /// Centred (and possibly scaled) observations.
    pub fn observations(&self) -> &DMatrix<f64> {
        &self.observations
    }

    /// `S = X^T X` of the centred observations.
    pub fn scatter(&self) -> &DMatrix<f64> {
        &self.scatter
    }

    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    pub fn column_scales(&self) -> Option<&[f64]> {
        self.column_scales.as_deref()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Symmetric positive-definite precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix(DMatrix<f64>);

impl PrecisionMatrix {
    /// Validates symmetry (to `1e-12` relative) and positive definiteness;
    /// the stored matrix is exactly symmetric.
    pub fn new(mut theta: DMatrix<f64>) -> Result<Self> {
        if !theta.is_square() || theta.nrows() < 1 {
            return Err(GhsError::contract("precision matrix must be square"));
        }
        let p = theta.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                let (a, b) = (theta[(i, j)], theta[(j, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(GhsError::domain(format!(
                        "precision matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        linalg::symmetrize(&mut theta);
        if !linalg::is_positive_definite(&theta) {
            return Err(GhsError::domain(
                "precision matrix is not positive definite",
            ));
        }
        Ok(Self(theta))
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub(crate) fn from_trusted(theta: DMatrix<f64>) -> Self {
        Self(theta)
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn log_det(&self) -> Result<f64> {
        linalg::log_det(&self.0)
    }
}

/// Squared local scales `lambda_ij^2`; the diagonal is a placeholder fixed at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMatrix(DMatrix<f64>);

impl ScaleMatrix {
    pub fn ones(p: usize) -> Self {
        Self(DMatrix::from_element(p, p, 1.0))
    }

    pub fn new(mut lambda_sq: DMatrix<f64>) -> Result<Self> {
        if !lambda_sq.is_square() {
            return Err(GhsError::contract("scale matrix must be square"));
        }
        let p = lambda_sq.nrows();
        for i in 0..p {
            for j in 0..p {
                let v = lambda_sq[(i, j)];
                if i != j && !(v > 0.0 && v.is_finite()) {
                    return Err(GhsError::domain(format!(
                        "local scale at ({i}, {j}) must be positive, got {v}"
                    )));
                }
                if (v - lambda_sq[(j, i)]).abs() > 1e-12 * v.abs().max(1.0) {
                    return Err(GhsError::domain("scale matrix not symmetric"));
                }
            }
            lambda_sq[(i, i)] = 1.0;
        }
        linalg::symmetrize(&mut lambda_sq);
        Ok(Self(lambda_sq))
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub(crate) fn as_matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.0
    }
}

/// Conditional expectations of the latent `nu_ij` used by the CM steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSummary {
    /// `E[1 / nu_ij]`.
    pub inv_nu_expect: DMatrix<f64>,
    /// `E[log nu_ij]`.
    pub log_nu_expect: DMatrix<f64>,
}

impl LatentSummary {
    pub fn p(&self) -> usize {
        self.inv_nu_expect.nrows()
    }
}

/// Global shrinkage `tau^2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GlobalScale(f64);

impl GlobalScale {
    pub fn new(tau_sq: f64) -> Result<Self> {
        if tau_sq > 0.0 && tau_sq.is_finite() {
            Ok(Self(tau_sq))
        } else {
            Err(GhsError::domain(format!(
                "tau_sq must be positive, got {tau_sq}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for GlobalScale {
    type Error = GhsError;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GlobalScale> for f64 {
    fn from(s: GlobalScale) -> f64 {
        s.0
    }
}

impl fmt::Display for GlobalScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Undirected simple graph on `p` nodes stored as a dense boolean matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "EdgeList", try_from = "EdgeList")]
pub struct Adjacency {
    p: usize,
    cells: Vec<bool>,
}

/// Serialized form of [`Adjacency`]: node count plus `i < j` edge list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeList {
    pub p: usize,
    pub edges: Vec<(usize, usize)>,
}

impl From<Adjacency> for EdgeList {
    fn from(a: Adjacency) -> Self {
        EdgeList {
            p: a.p,
            edges: a.edges(),
        }
    }
}

impl TryFrom<EdgeList> for Adjacency {
    type Error = GhsError;

    fn try_from(e: EdgeList) -> Result<Self> {
        Adjacency::from_edges(e.p, &e.edges)
    }
}

impl Adjacency {
    pub fn empty(p: usize) -> Self {
        Self {
            p,
            cells: vec![false; p * p],
        }
    }

    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = Self::empty(p);
        for &(i, j) in edges {
            if i >= p || j >= p || i == j {
                return Err(GhsError::contract(format!(
                    "invalid edge ({i}, {j}) for p = {p}"
                )));
            }
            adj.set(i, j, true);
        }
        Ok(adj)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.p + j]
    }

    /// Sets or clears the undirected edge `{i, j}`. Self-loops are ignored.
    pub fn set(&mut self, i: usize, j: usize, present: bool) {
        if i == j {
            return;
        }
        self.cells[i * self.p + j] = present;
        self.cells[j * self.p + i] = present;
    }

    /// Edges as `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.p {
            for j in (i + 1)..self.p {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count() / 2
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.p)
            .map(|i| (0..self.p).filter(|&j| self.has_edge(i, j)).count())
            .collect()
    }

    /// `2|E| / (p^2 - p)`.
    pub fn sparsity(&self) -> f64 {
        sparsity_of(self.edge_count(), self.p)
    }
}

pub(crate) fn sparsity_of(edges: usize, p: usize) -> f64 {
    if p < 2 {
        return 0.0;
    }
    2.0 * edges as f64 / (p * p - p) as f64
}

/// Binary edge set extracted from a fitted precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEstimate {
    pub adjacency: Adjacency,
    pub partial_correlations: DMatrix<f64>,
    pub sparsity: f64,
}

impl GraphEstimate {
    pub fn edge_count(&self) -> usize {
        self.adjacency.edge_count()
    }
}

/// `rho_ij = -theta_ij / sqrt(theta_ii theta_jj)` with a unit diagonal.
pub fn partial_correlations(theta: &PrecisionMatrix) -> DMatrix<f64> {
    // PD guarantees a positive diagonal.
    scaled_offdiagonals(theta.as_matrix()).expect("PD matrix has positive diagonal")
}

/// Partial correlations of an arbitrary square matrix; fails on a
/// nonpositive diagonal entry.
pub fn scaled_offdiagonals(theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = theta.nrows();
    let diag = theta.diagonal();
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(GhsError::domain(format!(
            "diagonal entry {i} is {} (must be positive)",
            diag[i]
        )));
    }
    let root: Vec<f64> = diag.iter().map(|d| d.sqrt()).collect();
    Ok(DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            -theta[(i, j)] / (root[i] * root[j])
        }
    }))
}

/// Edges are pairs whose |partial correlation| exceeds `threshold`.
pub fn extract_graph(theta: &PrecisionMatrix, threshold: f64) -> Result<GraphEstimate> {
    if !(threshold >= 0.0) {
        return Err(GhsError::contract(format!(
            "edge threshold must be nonnegative, got {threshold}"
        )));
    }
    let partial = partial_correlations(theta);
    Ok(graph_from_scores(partial, threshold))
}

pub(crate) fn graph_from_scores(partial: DMatrix<f64>, threshold: f64) -> GraphEstimate {
    let p = partial.nrows();
    let mut adjacency = Adjacency::empty(p);
    for i in 0..p {
        for j in (i + 1)..p {
            if partial[(i, j)].abs() > threshold {
                adjacency.set(i, j, true);
            }
        }
    }
    let sparsity = adjacency.sparsity();
    GraphEstimate {
        adjacency,
        partial_correlations: partial,
        sparsity,
    }
}

/// ECM objective `Q(Theta, Lambda | previous iterate)` up to its additive
/// constant, with the latent expectations supplied by an E-step.
pub fn objective_value(
    theta: &PrecisionMatrix,
    lambda_sq: &ScaleMatrix,
    latent: &LatentSummary,
    tau_sq: GlobalScale,
    data: &Dataset,
) -> Result<f64> {
    objective_value_scatter(
        theta,
        lambda_sq,
        latent,
        tau_sq,
        data.scatter(),
        data.n() as f64,
    )
}

/// [`objective_value`] for a bare scatter matrix and sample count.
pub fn objective_value_scatter(
    theta: &PrecisionMatrix,
    lambda_sq: &ScaleMatrix,
    latent: &LatentSummary,
    tau_sq: GlobalScale,
    scatter: &DMatrix<f64>,
    n: f64,
) -> Result<f64> {
    let p = theta.p();
    check_shapes(p, &[lambda_sq.p(), latent.p(), scatter.nrows()])?;
    let th = theta.as_matrix();
    let tau_sq = tau_sq.get();
    let mut q = 0.5 * n * theta.log_det()? - 0.5 * linalg::trace_of_product(scatter, th);
    for j in 1..p {
        for i in 0..j {
            let l2 = lambda_sq.get(i, j);
            let t = th[(i, j)];
            q += -2.0 * l2.ln()
                - t * t / (2.0 * tau_sq * l2)
                - 2.0 * latent.log_nu_expect[(i, j)]
                - (1.0 / l2 + 1.0) * latent.inv_nu_expect[(i, j)];
        }
    }
    Ok(q)
}

/// Log posterior of `(Theta_k, Lambda_k)_k` with the shared latent `nu`
/// integrated out, up to a constant. This is the quantity a generalized EM
/// step cannot decrease. With one network it is the single graphical
/// horseshoe posterior; `tau_prior` adds the half-Cauchy term on each
/// `tau_k` used when the global scales are updated.
pub fn log_posterior(
    thetas: &[&PrecisionMatrix],
    lambda_sqs: &[&ScaleMatrix],
    tau_sqs: &[f64],
    scatters: &[&DMatrix<f64>],
    ns: &[f64],
    tau_prior: bool,
) -> Result<f64> {
    let k = thetas.len();
    if k == 0 || lambda_sqs.len() != k || tau_sqs.len() != k || scatters.len() != k || ns.len() != k
    {
        return Err(GhsError::contract(
            "log_posterior: inconsistent network counts",
        ));
    }
    let p = thetas[0].p();
    let mut total = 0.0;
    for net in 0..k {
        check_shapes(
            p,
            &[thetas[net].p(), lambda_sqs[net].p(), scatters[net].nrows()],
        )?;
        total += 0.5 * ns[net] * thetas[net].log_det()?
            - 0.5 * linalg::trace_of_product(scatters[net], thetas[net].as_matrix());
        if tau_prior {
            total += -0.5 * tau_sqs[net].ln() - (1.0 + tau_sqs[net]).ln();
        }
    }
    let shape = (k as f64 + 1.0) / 2.0;
    for j in 1..p {
        for i in 0..j {
            let mut b = 1.0;
            for net in 0..k {
                let l2 = lambda_sqs[net].get(i, j);
                let t = thetas[net].as_matrix()[(i, j)];
                total +=
                    -0.5 * tau_sqs[net].ln() - 2.0 * l2.ln() - t * t / (2.0 * tau_sqs[net] * l2);
                b += 1.0 / l2;
            }
            total -= shape * b.ln();
        }
    }
    Ok(total)
}

fn check_shapes(p: usize, others: &[usize]) -> Result<()> {
    if others.iter().any(|&q| q != p) {
        return Err(GhsError::contract(format!(
            "dimension mismatch: expected {p}, got {others:?}"
        )));
    }
    Ok(())
}
