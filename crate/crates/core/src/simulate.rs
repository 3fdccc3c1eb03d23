//! Ground-truth generation: scale-free graphs, precision matrices with a
//! prescribed partial-correlation range, graph perturbations and Gaussian
//! samples.
//!
//! Every function is a pure function of its seed. Each purpose draws from its
//! own ChaCha stream so that, for example, changing the sample size does not
//! change the graph.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GhsError, Result};
use crate::io::DenseMatrix;
use crate::linalg;
use crate::model::{self, Adjacency, Dataset, EdgeList, PrecisionMatrix};

pub(crate) const STREAM_GRAPH: u64 = 1;
pub(crate) const STREAM_PRECISION: u64 = 2;
pub(crate) const STREAM_PERTURB: u64 = 3;
pub(crate) const STREAM_SAMPLE: u64 = 4;
pub(crate) const STREAM_BOOTSTRAP: u64 = 1 << 32;

/// Smallest eigenvalue a generated precision matrix may have.
pub const MIN_EIGENVALUE: f64 = 1e-6;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sign of the simulated partial correlations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialSign {
    #[default]
    Positive,
    /// Each edge independently positive or negative with probability 1/2.
    Mixed,
}

/// Connected graph with exactly `p` edges: a preferential-attachment tree
/// plus one extra edge whose endpoints are also drawn proportionally to degree.
pub fn generate_scale_free_graph(p: usize, seed: u64) -> Result<Adjacency> {
    if p < 3 {
        return Err(GhsError::contract(format!(
            "scale-free graph needs p >= 3, got {p}"
        )));
    }
    let mut rng = rng_for(seed, STREAM_GRAPH);
    let mut adj = Adjacency::empty(p);
    // Node ids repeated once per incident edge; sampling from it is sampling
    // proportionally to degree.
    let mut ends: Vec<usize> = Vec::with_capacity(2 * p);
    adj.set(0, 1, true);
    ends.extend([0, 1]);
    for v in 2..p {
        let u = ends[rng.random_range(0..ends.len())];
        adj.set(u, v, true);
        ends.extend([u, v]);
    }

    let mut placed = false;
    for _ in 0..1000 {
        let a = ends[rng.random_range(0..ends.len())];
        let b = ends[rng.random_range(0..ends.len())];
        if a != b && !adj.has_edge(a, b) {
            adj.set(a, b, true);
            placed = true;
            break;
        }
    }
    if !placed {
        let free: Vec<(usize, usize)> = non_edges(&adj);
        let (a, b) = free[rng.random_range(0..free.len())];
        adj.set(a, b, true);
    }
    debug_assert_eq!(adj.edge_count(), p);
    Ok(adj)
}

fn non_edges(adj: &Adjacency) -> Vec<(usize, usize)> {
    let p = adj.p();
    let mut out = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            if !adj.has_edge(i, j) {
                out.push((i, j));
            }
        }
    }
    out
}

fn check_range(low: f64, high: f64) -> Result<()> {
    if !(0.0 <= low && low <= high && high < 1.0) {
        return Err(GhsError::contract(format!(
            "partial-correlation range [{low}, {high}] must satisfy 0 <= low <= high < 1"
        )));
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Unit-diagonal precision matrix whose partial correlations are drawn
/// uniformly from `[low, high]` on the edges of `adjacency` and are exactly
/// zero elsewhere.
///
/// If the draw is not positive definite (smallest eigenvalue below
/// [`MIN_EIGENVALUE`]) the magnitudes are halved towards `low`, up to 50 times.
pub fn build_precision(
    adjacency: &Adjacency,
    partial_range: (f64, f64),
    sign: PartialSign,
    seed: u64,
) -> Result<PrecisionMatrix> {
    let (low, high) = partial_range;
    check_range(low, high)?;
    let p = adjacency.p();
    let mut rng = rng_for(seed, STREAM_PRECISION);
    let edges = adjacency.edges();
    let mut draws: Vec<(f64, f64)> = edges
        .iter()
        .map(|_| {
            let u = if high > low {
                rng.random_range(low..=high)
            } else {
                low
            };
            let s = match sign {
                PartialSign::Positive => 1.0,
                PartialSign::Mixed => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            (u, s)
        })
        .collect();

    for _ in 0..=50 {
        let mut theta = DMatrix::identity(p, p);
        for (&(i, j), &(u, s)) in edges.iter().zip(&draws) {
            theta[(i, j)] = -s * u;
            theta[(j, i)] = -s * u;
        }
        if min_eigenvalue(&theta) >= MIN_EIGENVALUE {
            return PrecisionMatrix::new(theta);
        }
        for d in draws.iter_mut() {
            d.0 = low + 0.5 * (d.0 - low);
        }
    }
    Err(GhsError::contract(format!(
        "no positive-definite precision matrix with partial correlations in [{low}, {high}] for this graph"
    )))
}

/// Simulated ground truth.
#[derive(Debug, Clone)]
pub struct TrueModel {
    pub adjacency: Adjacency,
    pub precision: PrecisionMatrix,
    pub partial_range: (f64, f64),
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TrueModelFile {
    p: usize,
    seed: u64,
    partial_range: (f64, f64),
    edges: Vec<(usize, usize)>,
    precision: DenseMatrix,
}

impl TrueModel {
    /// Scale-free graph on `p` nodes with its precision matrix.
    pub fn generate(
        p: usize,
        partial_range: (f64, f64),
        sign: PartialSign,
        seed: u64,
    ) -> Result<Self> {
        let adjacency = generate_scale_free_graph(p, seed)?;
        let precision = build_precision(&adjacency, partial_range, sign, seed)?;
        let model = Self {
            adjacency,
            precision,
            partial_range,
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks positive definiteness and that the partial correlations lie in
    /// range on edges and vanish elsewhere.
    pub fn validate(&self) -> Result<()> {
        let p = self.adjacency.p();
        if self.precision.p() != p {
            return Err(GhsError::contract(
                "adjacency and precision differ in dimension",
            ));
        }
        if min_eigenvalue(self.precision.as_matrix()) < MIN_EIGENVALUE {
            return Err(GhsError::domain(
                "true precision matrix is too close to singular",
            ));
        }
        let (low, high) = self.partial_range;
        let rho = model::partial_correlations(&self.precision);
        let slack = 1e-12;
        for i in 0..p {
            for j in (i + 1)..p {
                let r = rho[(i, j)].abs();
                let ok = if self.adjacency.has_edge(i, j) {
                    r >= low - slack && r <= high + slack
                } else {
                    self.precision.as_matrix()[(i, j)] == 0.0
                };
                if !ok {
                    return Err(GhsError::domain(format!(
                        "entry ({i}, {j}) has partial correlation {} outside the model",
                        rho[(i, j)]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.adjacency.p()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TrueModelFile {
            p: self.p(),
            seed: self.seed,
            partial_range: self.partial_range,
            edges: self.adjacency.edges(),
            precision: DenseMatrix::from(self.precision.as_matrix()),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TrueModelFile = serde_json::from_str(text)?;
        let adjacency = Adjacency::try_from(EdgeList {
            p: file.p,
            edges: file.edges,
        })?;
        let precision = PrecisionMatrix::new(file.precision.to_matrix()?)?;
        let model = Self {
            adjacency,
            precision,
            partial_range: file.partial_range,
            seed: file.seed,
        };
        model.validate()?;
        Ok(model)
    }
}

/// A second model sharing all but `round(fraction * |E|)` edges with `model`.
///
/// The removed edges are chosen uniformly from the current edges and the same
/// number of new edges uniformly from the current non-edges, so the two graphs
/// have equal edge counts. The precision matrix is redrawn with `seed`.
pub fn perturb_graph(
    model: &TrueModel,
    fraction: f64,
    sign: PartialSign,
    seed: u64,
) -> Result<TrueModel> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(GhsError::contract(format!(
            "disagreement fraction must be in [0, 1], got {fraction}"
        )));
    }
    let edges = model.adjacency.edges();
    let free = non_edges(&model.adjacency);
    let moved = (fraction * edges.len() as f64).round() as usize;
    if moved > free.len() {
        return Err(GhsError::contract(format!(
            "cannot reallocate {moved} edges into {} non-edges",
            free.len()
        )));
    }
    let mut rng = rng_for(seed, STREAM_PERTURB);
    let mut adjacency = model.adjacency.clone();
    for k in index::sample(&mut rng, edges.len(), moved) {
        let (i, j) = edges[k];
        adjacency.set(i, j, false);
    }
    for k in index::sample(&mut rng, free.len(), moved) {
        let (i, j) = free[k];
        adjacency.set(i, j, true);
    }
    let precision = build_precision(&adjacency, model.partial_range, sign, seed)?;
    let out = TrueModel {
        adjacency,
        precision,
        partial_range: model.partial_range,
        seed,
    };
    out.validate()?;
    Ok(out)
}

/// `n` draws from `N(0, Theta^{-1})`, via the Cholesky factor of the
/// covariance.
pub fn sample_gaussian(model: &TrueModel, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(GhsError::contract(format!("need n >= 2 samples, got {n}")));
    }
    let p = model.p();
    let sigma = linalg::spd_inverse(model.precision.as_matrix())?;
    let l = linalg::cholesky(&sigma)
        .ok_or_else(|| GhsError::domain("covariance is not positive definite"))?
        .unpack();
    let mut rng = rng_for(seed, STREAM_SAMPLE);
    let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    Dataset::new(z * l.transpose())
}
