//! Network, covariate and latent-factor types, the simulation graphon, and
//! egocentric sampling.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Purpose};

/// Undirected, unweighted network without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    adj: DMatrix<f64>,
}

impl Network {
    pub fn from_adjacency(adj: DMatrix<f64>) -> Result<Self> {
        check_square(&adj, "adjacency")?;
        let n = adj.nrows();
        for i in 0..n {
            if adj[(i, i)] != 0.0 {
                return invalid(format!("adjacency has a self-loop at node {i}"));
            }
            for j in (i + 1)..n {
                let v = adj[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return invalid(format!("adjacency entry ({i},{j}) = {v} is not 0/1"));
                }
                if adj[(j, i)] != v {
                    return invalid(format!("adjacency is not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(Self { adj })
    }

    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = DMatrix::zeros(n_nodes, n_nodes);
        for &(i, j) in edges {
            if i >= n_nodes || j >= n_nodes {
                return invalid(format!("edge ({i},{j}) has an endpoint outside [0, {n_nodes})"));
            }
            if i == j {
                return invalid(format!("self-loop at node {i}"));
            }
            adj[(i, j)] = 1.0;
            adj[(j, i)] = 1.0;
        }
        Ok(Self { adj })
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adj
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[(i, j)] == 1.0
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adj[(i, j)] == 1.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Fraction of unordered pairs that are linked.
    pub fn density(&self) -> f64 {
        let n = self.n_nodes();
        if n < 2 {
            return 0.0;
        }
        let pairs = (n * (n - 1) / 2) as f64;
        self.edges().len() as f64 / pairs
    }
}

/// A network observed under egocentric sampling: entry (i, j) is known iff
/// `i` or `j` is sampled. Values on the unobserved block are held at zero and
/// must not be read.
///
/// Entries are stored as reals so that noiseless test harnesses can pass a
/// probability matrix in place of a 0/1 network.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialNetwork {
    values: DMatrix<f64>,
    sampled: Vec<usize>,
    unsampled: Vec<usize>,
    in_sample: Vec<bool>,
}

impl PartialNetwork {
    pub fn new(net: &Network, sampled: &[usize]) -> Result<Self> {
        Self::from_values(net.adjacency().clone(), sampled)
    }

    /// Build from a real-valued symmetric matrix with zero diagonal.
    pub fn from_values(mut values: DMatrix<f64>, sampled: &[usize]) -> Result<Self> {
        check_square(&values, "network values")?;
        let n = values.nrows();
        let mut in_sample = vec![false; n];
        for &s in sampled {
            if s >= n {
                return invalid(format!("sampled node {s} out of range [0, {n})"));
            }
            if in_sample[s] {
                return invalid(format!("sampled node {s} listed twice"));
            }
            in_sample[s] = true;
        }
        let observed = |i: usize, j: usize| in_sample[i] || in_sample[j];
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return invalid(format!("nonzero diagonal at node {i}"));
            }
            for j in (i + 1)..n {
                if !observed(i, j) {
                    values[(i, j)] = 0.0;
                    values[(j, i)] = 0.0;
                    continue;
                }
                let v = values[(i, j)];
                if !v.is_finite() || values[(j, i)] != v {
                    return invalid(format!("observed entry ({i},{j}) is not finite and symmetric"));
                }
            }
        }
        let sampled: Vec<usize> = (0..n).filter(|&i| in_sample[i]).collect();
        let unsampled: Vec<usize> = (0..n).filter(|&i| !in_sample[i]).collect();
        Ok(Self {
            values,
            sampled,
            unsampled,
            in_sample,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }

    /// Sampled node ids in increasing order.
    pub fn sampled(&self) -> &[usize] {
        &self.sampled
    }

    pub fn unsampled(&self) -> &[usize] {
        &self.unsampled
    }

    pub fn n_sampled(&self) -> usize {
        self.sampled.len()
    }

    pub fn is_sampled(&self, i: usize) -> bool {
        self.in_sample[i]
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.in_sample[i] || self.in_sample[j]
    }

    /// Observed value of entry (i, j). Unobserved entries read as zero.
    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Sampling rate n / N.
    pub fn sampling_rate(&self) -> f64 {
        self.sampled.len() as f64 / self.n_nodes() as f64
    }

    /// Unordered missing dyads (i < j, both unsampled).
    pub fn missing_pairs(&self) -> Vec<(usize, usize)> {
        let u = &self.unsampled;
        let mut out = Vec::with_capacity(u.len() * u.len().saturating_sub(1) / 2);
        for (a, &i) in u.iter().enumerate() {
            for &j in &u[a + 1..] {
                out.push((i, j));
            }
        }
        out
    }

    /// Unordered observed dyads (i < j, at least one endpoint sampled).
    pub fn observed_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.is_observed(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Observed node covariates, one row per node. Zero columns means no covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSet {
    x: DMatrix<f64>,
}

impl CovariateSet {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("covariates contain non-finite entries");
        }
        Ok(Self { x })
    }

    pub fn empty(n_nodes: usize) -> Self {
        Self {
            x: DMatrix::zeros(n_nodes, 0),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }
}

/// Latent factors. Only the simulator reads these.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSet {
    xi: DMatrix<f64>,
}

impl LatentSet {
    pub fn new(xi: DMatrix<f64>) -> Result<Self> {
        if xi.iter().any(|v| !v.is_finite()) {
            return invalid("latent factors contain non-finite entries");
        }
        Ok(Self { xi })
    }

    pub fn n_nodes(&self) -> usize {
        self.xi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.xi.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.xi
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.xi.row(i).iter().copied().collect()
    }
}

/// Link index as a function of `(x_i, xi_i, x_j, xi_j)`.
pub type IndexFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

/// Graphon family; the link probability is the logistic transform of an index.
#[derive(Clone)]
pub enum GraphonSpec {
    /// Squared-difference homophily on X plus
    /// `xi_i1 + xi_j1 - (xi_i2 - xi_j2)^2 / 8`.
    PaperMc { beta: Vec<f64> },
    Custom(IndexFn),
}

impl fmt::Debug for GraphonSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphonSpec::PaperMc { beta } => f.debug_struct("PaperMc").field("beta", beta).finish(),
            GraphonSpec::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl GraphonSpec {
    pub fn simulation_design(beta: Vec<f64>) -> Self {
        GraphonSpec::PaperMc { beta }
    }

    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        GraphonSpec::Custom(Arc::new(f))
    }

    pub fn index(&self, x_i: &[f64], xi_i: &[f64], x_j: &[f64], xi_j: &[f64]) -> f64 {
        match self {
            GraphonSpec::PaperMc { beta } => {
                let homophily: f64 = beta
                    .iter()
                    .zip(x_i.iter().zip(x_j))
                    .map(|(b, (a, c))| b * (a - c) * (a - c))
                    .sum();
                let d2 = xi_i[1] - xi_j[1];
                homophily + (xi_i[0] + xi_j[0]) - d2 * d2 / 8.0
            }
            GraphonSpec::Custom(f) => f(x_i, xi_i, x_j, xi_j),
        }
    }
}

pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Symmetric link-probability matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    p: DMatrix<f64>,
}

impl ProbabilityMatrix {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        check_square(&p, "probability matrix")?;
        let n = p.nrows();
        for i in 0..n {
            if p[(i, i)] != 0.0 {
                return invalid(format!("probability matrix has nonzero diagonal at {i}"));
            }
            for j in 0..n {
                let v = p[(i, j)];
                if !(0.0..=1.0).contains(&v) || p[(j, i)] != v {
                    return invalid(format!("probability entry ({i},{j}) invalid"));
                }
            }
        }
        Ok(Self { p })
    }

    pub fn n_nodes(&self) -> usize {
        self.p.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[(i, j)]
    }

    /// Mean of the off-diagonal entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.n_nodes();
        if n < 2 {
            return 0.0;
        }
        self.p.sum() / (n * (n - 1)) as f64
    }
}

/// Draw covariates and latent factors for the simulation design:
/// `xi_i ~ N(0, I_2)` and `X_id = (xi_i1 + xi_i2)/2 + U[-1, 1]` for d = 1, 2.
pub fn generate_population(n_nodes: usize, seed: u64) -> Result<(CovariateSet, LatentSet)> {
    if n_nodes < 2 {
        return invalid("population needs at least two nodes");
    }
    let mut rng = stream(seed, 0, Purpose::Population);
    let unif = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let mut x = DMatrix::zeros(n_nodes, 2);
    let mut xi = DMatrix::zeros(n_nodes, 2);
    for i in 0..n_nodes {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        xi[(i, 0)] = a;
        xi[(i, 1)] = b;
        for d in 0..2 {
            x[(i, d)] = 0.5 * (a + b) + unif.sample(&mut rng);
        }
    }
    Ok((CovariateSet { x }, LatentSet { xi }))
}

pub fn probability_matrix(
    cov: &CovariateSet,
    lat: &LatentSet,
    spec: &GraphonSpec,
) -> Result<ProbabilityMatrix> {
    let n = cov.n_nodes();
    if lat.n_nodes() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate rows vs {} latent rows",
            n,
            lat.n_nodes()
        )));
    }
    if let GraphonSpec::PaperMc { beta } = spec {
        if beta.len() != cov.dim() {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries but covariates have {} columns",
                beta.len(),
                cov.dim()
            )));
        }
        if lat.dim() < 2 {
            return Err(Error::DimensionMismatch("simulation graphon needs two latent factors".into()));
        }
    }
    let xs: Vec<Vec<f64>> = (0..n).map(|i| cov.row(i)).collect();
    let ls: Vec<Vec<f64>> = (0..n).map(|i| lat.row(i)).collect();
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = logistic(spec.index(&xs[i], &ls[i], &xs[j], &ls[j]));
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    Ok(ProbabilityMatrix { p })
}

/// Independent Bernoulli draw for every unordered pair.
pub fn sample_network(p: &ProbabilityMatrix, seed: u64) -> Network {
    let n = p.n_nodes();
    let mut rng = stream(seed, 0, Purpose::Links);
    let mut adj = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let u: f64 = rng.random();
            if u < p.get(i, j) {
                adj[(i, j)] = 1.0;
                adj[(j, i)] = 1.0;
            }
        }
    }
    Network { adj }
}

/// Sample `n_sampled` nodes uniformly without replacement and record all of
/// their links.
pub fn egocentric_sample(net: &Network, n_sampled: usize, seed: u64) -> Result<PartialNetwork> {
    let n = net.n_nodes();
    if n_sampled < 2 || n_sampled >= n {
        return invalid(format!("sample size {n_sampled} must lie in [2, {n})"));
    }
    let mut rng = stream(seed, 0, Purpose::Sampling);
    let mut s = index::sample(&mut rng, n, n_sampled).into_vec();
    s.sort_unstable();
    PartialNetwork::new(net, &s)
}

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}
