use nalgebra::DMatrix;
use netimpute::baselines::{impute_method, BaselineConfig, Method};
use netimpute::downstream;
use netimpute::impute::{impute_split, impute_with_cv, EntryFlag, HGrid, ImputeConfig, ImputedNetwork};
use netimpute::montecarlo::{run_experiment as run_mc, ExperimentConfig, ExperimentKind};
use netimpute::netmodel::{self, CovariateSet, GraphonSpec, LatentSet, ProbabilityMatrix};
use netimpute::{distance, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

type Rows = Vec<Vec<f64>>;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Validation(_) | Error::DimensionMismatch(_) | Error::Parse { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: &Rows, n_cols: Option<usize>) -> PyResult<DMatrix<f64>> {
    let cols = n_cols.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn covariates(x: Option<Rows>, n: usize) -> PyResult<CovariateSet> {
    match x {
        None => Ok(CovariateSet::empty(n)),
        Some(x) if x.is_empty() => Ok(CovariateSet::empty(n)),
        Some(x) => CovariateSet::new(matrix(&x, None)?).map_err(to_py),
    }
}

/// Egocentrically sampled network: rows and columns of sampled nodes are observed.
#[pyclass(name = "PartialNetwork", frozen)]
struct PyPartialNetwork {
    inner: netmodel::PartialNetwork,
}

#[pymethods]
impl PyPartialNetwork {
    #[new]
    fn new(adjacency: Rows, sampled: Vec<usize>) -> PyResult<Self> {
        let inner = netmodel::PartialNetwork::from_values(matrix(&adjacency, None)?, &sampled).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn sampled(&self) -> Vec<usize> {
        self.inner.sampled().to_vec()
    }

    #[getter]
    fn unsampled(&self) -> Vec<usize> {
        self.inner.unsampled().to_vec()
    }

    fn is_observed(&self, i: usize, j: usize) -> bool {
        self.inner.is_observed(i, j)
    }

    fn missing_pairs(&self) -> Vec<(usize, usize)> {
        self.inner.missing_pairs()
    }

    /// Observed values with unobserved entries set to zero.
    fn values(&self) -> Rows {
        rows(self.inner.values())
    }

    fn __repr__(&self) -> String {
        format!("PartialNetwork(n_nodes={}, n_sampled={})", self.inner.n_nodes(), self.inner.n_sampled())
    }
}

/// Completed network with per-entry provenance.
#[pyclass(name = "ImputedNetwork", frozen)]
struct PyImputedNetwork {
    inner: ImputedNetwork,
    #[pyo3(get)]
    h_selected: Option<f64>,
    #[pyo3(get)]
    h_used: Option<f64>,
}

#[pymethods]
impl PyImputedNetwork {
    fn matrix(&self) -> Rows {
        rows(self.inner.matrix())
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        let n = self.inner.n_nodes();
        if i >= n || j >= n {
            return Err(PyValueError::new_err(format!("index out of range for {n} nodes")));
        }
        Ok(self.inner.get(i, j))
    }

    fn is_imputed(&self, i: usize, j: usize) -> bool {
        self.inner.flag(i, j) == EntryFlag::Imputed
    }

    #[getter]
    fn fallback_count(&self) -> usize {
        self.inner.fallback_count()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }
}

/// Draw `(covariates, latents)` for `n` nodes.
#[pyfunction]
fn generate_population(n: usize, seed: u64) -> PyResult<(Rows, Rows)> {
    let (cov, lat) = netmodel::generate_population(n, seed).map_err(to_py)?;
    Ok((rows(cov.matrix()), rows(lat.matrix())))
}

/// Link probabilities of the logistic graphon with covariate slopes `beta`.
#[pyfunction]
fn probability_matrix(covariates: Rows, latents: Rows, beta: Vec<f64>) -> PyResult<Rows> {
    let cov = CovariateSet::new(matrix(&covariates, None)?).map_err(to_py)?;
    let lat = LatentSet::new(matrix(&latents, None)?).map_err(to_py)?;
    let p = netmodel::probability_matrix(&cov, &lat, &GraphonSpec::simulation_design(beta)).map_err(to_py)?;
    Ok(rows(p.matrix()))
}

#[pyfunction]
fn sample_network(probabilities: Rows, seed: u64) -> PyResult<Rows> {
    let p = ProbabilityMatrix::new(matrix(&probabilities, None)?).map_err(to_py)?;
    Ok(rows(netmodel::sample_network(&p, seed).adjacency()))
}

#[pyfunction]
fn egocentric_sample(adjacency: Rows, n_sampled: usize, seed: u64) -> PyResult<PyPartialNetwork> {
    let net = netmodel::Network::from_adjacency(matrix(&adjacency, None)?).map_err(to_py)?;
    let inner = netmodel::egocentric_sample(&net, n_sampled, seed).map_err(to_py)?;
    Ok(PyPartialNetwork { inner })
}

/// Pseudo-distances from every node to every sampled node; `None` where undefined.
#[pyfunction]
fn pseudo_distance(network: &PyPartialNetwork) -> PyResult<Vec<Vec<Option<f64>>>> {
    let pn = &network.inner;
    let all: Vec<usize> = (0..pn.n_nodes()).collect();
    let table = distance::pseudo_distance(pn, &all, pn.sampled()).map_err(to_py)?;
    Ok(all
        .iter()
        .map(|&t| pn.sampled().iter().map(|&r| table.get(t, r)).collect())
        .collect())
}

/// Impute the missing block. `method` is one of X, LR, LPCA, LTWFE, X-LPCA,
/// X-LTWFE, X-LTWFE-SP.
#[pyfunction]
#[pyo3(signature = (network, covariates=None, method="X-LTWFE", seed=0, h_grid=None, undersmooth=1.0))]
fn impute(
    network: &PyPartialNetwork,
    covariates: Option<Rows>,
    method: &str,
    seed: u64,
    h_grid: Option<Vec<f64>>,
    undersmooth: f64,
) -> PyResult<PyImputedNetwork> {
    let pn = &network.inner;
    let method = Method::parse(method).ok_or_else(|| PyValueError::new_err(format!("unknown method {method:?}")))?;
    let cov = self::covariates(covariates, pn.n_nodes())?;
    let cfg = ImputeConfig {
        h_grid: h_grid.map_or(HGrid::Auto, HGrid::Values),
        undersmooth_multiplier: undersmooth,
        seed,
        ..ImputeConfig::default()
    };
    let kernel_run = match method {
        Method::XLtwfe => Some(impute_with_cv(pn, &cov, &cfg)),
        Method::XLtwfeSp => Some(impute_split(pn, &cov, &cfg)),
        _ => None,
    };
    if let Some(out) = kernel_run {
        let out = out.map_err(to_py)?;
        return Ok(PyImputedNetwork { inner: out.network, h_selected: Some(out.h_selected), h_used: Some(out.h_used) });
    }
    let bcfg = BaselineConfig { seed, ..BaselineConfig::default() };
    let inner = impute_method(method, pn, &cov, &cfg, &bcfg).map_err(to_py)?;
    Ok(PyImputedNetwork { inner, h_selected: None, h_used: None })
}

#[pyfunction]
fn degree_centrality(adjacency: Rows) -> PyResult<Vec<f64>> {
    let d = downstream::degree_centrality(&matrix(&adjacency, None)?).map_err(to_py)?;
    Ok(d.iter().copied().collect())
}

/// Eigenvector centrality normalized to `||c||_2 = sqrt(N)`.
#[pyfunction]
#[pyo3(signature = (adjacency, tol=1e-12, max_iter=100_000))]
fn eigenvector_centrality(adjacency: Rows, tol: f64, max_iter: usize) -> PyResult<Vec<f64>> {
    let c = downstream::eigenvector_centrality(&matrix(&adjacency, None)?, tol, max_iter).map_err(to_py)?;
    Ok(c.values.iter().copied().collect())
}

#[pyfunction]
fn row_normalize(adjacency: Rows) -> PyResult<Rows> {
    let g = downstream::row_normalize(&matrix(&adjacency, None)?).map_err(to_py)?;
    Ok(rows(g.matrix()))
}

/// Run a Monte Carlo experiment and return its report as CSV text.
#[pyfunction]
#[pyo3(signature = (experiment="imputation", replications=10, seed=0, n_nodes=200, n_networks=40, phi=None, methods=None, beta=None))]
#[allow(clippy::too_many_arguments)]
fn run_experiment(
    experiment: &str,
    replications: usize,
    seed: u64,
    n_nodes: usize,
    n_networks: usize,
    phi: Option<Vec<f64>>,
    methods: Option<Vec<String>>,
    beta: Option<Vec<f64>>,
) -> PyResult<String> {
    let kind = ExperimentKind::parse(experiment).ok_or_else(|| PyValueError::new_err(format!("unknown experiment {experiment:?}")))?;
    let mut cfg = ExperimentConfig { experiment: kind, replications, seed, n_nodes, n_networks, ..ExperimentConfig::default() };
    if let Some(phi) = phi {
        cfg.phi_list = phi;
    }
    if let Some(beta) = beta {
        cfg.beta = beta;
    }
    if let Some(ms) = methods {
        cfg.methods = ms
            .iter()
            .map(|m| Method::parse(m).ok_or_else(|| PyValueError::new_err(format!("unknown method {m:?}"))))
            .collect::<PyResult<_>>()?;
    }
    Ok(run_mc(&cfg).map_err(to_py)?.to_csv())
}

#[pymodule]
fn netimpute_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPartialNetwork>()?;
    m.add_class::<PyImputedNetwork>()?;
    m.add_function(wrap_pyfunction!(generate_population, m)?)?;
    m.add_function(wrap_pyfunction!(probability_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(sample_network, m)?)?;
    m.add_function(wrap_pyfunction!(egocentric_sample, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_distance, m)?)?;
    m.add_function(wrap_pyfunction!(impute, m)?)?;
    m.add_function(wrap_pyfunction!(degree_centrality, m)?)?;
    m.add_function(wrap_pyfunction!(eigenvector_centrality, m)?)?;
    m.add_function(wrap_pyfunction!(row_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
