//! Replication harness for imputation accuracy, centrality regressions and
//! peer-effects GMM on simulated networks.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::baselines::{impute_method, impute_methods, BaselineConfig, Method};
use crate::distance::pseudo_distance;
use crate::downstream::{
    centrality_ols, degree_centrality, eigenvector_centrality, peer_covariates, peer_effects_gmm, row_normalize,
    simulate_peer_outcomes, GmmWeight, PeerNetworkData, PeerParams,
};
use crate::error::{invalid, Error, Result};
use crate::impute::{first_stage, impute_missing, ImputeConfig, KernelSpec};
use crate::netmodel::{
    egocentric_sample, generate_population, probability_matrix, sample_network, GraphonSpec, PartialNetwork,
    ProbabilityMatrix,
};
use crate::rng::{derive_seed, stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Imputation,
    CentralityDegree,
    CentralityEigen,
    PeerEffects,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Imputation => "imputation",
            ExperimentKind::CentralityDegree => "centrality-degree",
            ExperimentKind::CentralityEigen => "centrality-eigen",
            ExperimentKind::PeerEffects => "peer-effects",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ExperimentKind::Imputation,
            ExperimentKind::CentralityDegree,
            ExperimentKind::CentralityEigen,
            ExperimentKind::PeerEffects,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n_nodes: usize,
    /// Networks per replication (downstream experiments only).
    pub n_networks: usize,
    pub beta: Vec<f64>,
    pub phi_list: Vec<f64>,
    pub methods: Vec<Method>,
    pub replications: usize,
    /// Index of the first replication; runs with disjoint ranges can be pooled.
    pub first_replication: usize,
    pub seed: u64,
    /// Drop the outcome noise in downstream experiments.
    pub noiseless: bool,
    pub impute: ImputeConfig,
    pub baseline: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Imputation,
            n_nodes: 200,
            n_networks: 40,
            beta: vec![-0.5, -0.5],
            phi_list: vec![0.2, 0.4],
            methods: vec![Method::XLtwfe],
            replications: 200,
            first_replication: 0,
            seed: 0,
            noiseless: false,
            impute: ImputeConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return invalid("at least one replication is required");
        }
        if self.phi_list.is_empty() {
            return invalid("sampling-rate list is empty");
        }
        for &phi in &self.phi_list {
            if !(phi > 0.0 && phi < 1.0) {
                return invalid(format!("sampling rate {phi} outside (0, 1)"));
            }
            let n = self.sample_size(phi);
            if n < 2 || n >= self.n_nodes {
                return invalid(format!("sampling rate {phi} gives {n} sampled nodes out of {}", self.n_nodes));
            }
        }
        if self.beta.len() != 2 {
            return invalid("the simulation design has two covariates; beta needs two entries");
        }
        if self.experiment != ExperimentKind::Imputation && self.n_networks == 0 {
            return invalid("downstream experiments need at least one network");
        }
        if self.experiment == ExperimentKind::Imputation && self.methods.is_empty() {
            return invalid("no imputation methods selected");
        }
        self.impute.validate()
    }

    pub fn sample_size(&self, phi: f64) -> usize {
        (phi * self.n_nodes as f64).round() as usize
    }
}

/// What produced the network used by an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// The complete true network.
    CompleteData,
    Imputed(Method),
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::CompleteData => "CD",
            Estimator::Imputed(m) => m.name(),
        }
    }
}

/// Per-replication results for one (estimator, sampling rate) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct McCell {
    pub estimator: Estimator,
    pub phi: f64,
    /// Per-replication values (missing-block MSE, or coefficient estimates);
    /// `None` for a replication where estimation failed.
    pub values: Vec<Option<Vec<f64>>>,
    /// Missing dyads that fell back to the first-stage value, summed.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefStat {
    pub bias: f64,
    pub std: f64,
}

impl McCell {
    pub fn replications(&self) -> usize {
        self.values.len()
    }

    pub fn failures(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    fn ok_values(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.values.iter().flatten()
    }

    /// Root of the replication-averaged missing-block MSE.
    pub fn rmse(&self) -> f64 {
        let (s, c) = self.ok_values().fold((0.0, 0usize), |(s, c), v| (s + v[0], c + 1));
        (s / c as f64).sqrt()
    }

    /// Bias against `truth` and standard deviation over replications.
    pub fn coef_stats(&self, truth: &[f64]) -> Vec<CoefStat> {
        let rows: Vec<&Vec<f64>> = self.ok_values().collect();
        let n = rows.len() as f64;
        truth
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
                let var = if rows.len() > 1 {
                    rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                CoefStat {
                    bias: mean - t,
                    std: var.sqrt(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct McReport {
    pub experiment: ExperimentKind,
    pub cells: Vec<McCell>,
    /// Coefficient names (downstream experiments).
    pub coefficients: Vec<String>,
    /// True coefficient values (downstream experiments).
    pub truth: Vec<f64>,
    pub elapsed: Duration,
}

impl PartialEq for McReport {
    fn eq(&self, other: &Self) -> bool {
        self.experiment == other.experiment
            && self.cells == other.cells
            && self.coefficients == other.coefficients
            && self.truth == other.truth
    }
}

impl McReport {
    pub fn cell(&self, estimator: Estimator, phi: f64) -> Option<&McCell> {
        self.cells.iter().find(|c| c.estimator == estimator && c.phi == phi)
    }

    /// Concatenate the replications of two runs over the same design.
    pub fn pool(mut self, other: McReport) -> Result<McReport> {
        if self.experiment != other.experiment || self.cells.len() != other.cells.len() {
            return invalid("reports describe different designs");
        }
        for (a, b) in self.cells.iter_mut().zip(other.cells) {
            if a.estimator != b.estimator || a.phi != b.phi {
                return invalid("reports describe different designs");
            }
            a.values.extend(b.values);
            a.fallbacks += b.fallbacks;
        }
        self.elapsed += other.elapsed;
        Ok(self)
    }

    /// Long-format delimited report.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,estimator,phi,replications,failures,fallbacks,quantity,value\n");
        for c in &self.cells {
            let head = format!(
                "{},{},{},{},{},{}",
                self.experiment.name(),
                c.estimator.name(),
                c.phi,
                c.replications(),
                c.failures(),
                c.fallbacks
            );
            if self.experiment == ExperimentKind::Imputation {
                let _ = writeln!(out, "{head},rmse,{:.17e}", c.rmse());
            } else {
                for (name, s) in self.coefficients.iter().zip(c.coef_stats(&self.truth)) {
                    let _ = writeln!(out, "{head},bias:{name},{:.17e}", s.bias);
                    let _ = writeln!(out, "{head},std:{name},{:.17e}", s.std);
                }
            }
        }
        out
    }

    /// Human-readable table; values in units of 0.01.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        if self.experiment == ExperimentKind::Imputation {
            let _ = writeln!(out, "{:<12} {:>6} {:>10} {:>6}", "method", "phi", "RMSE x100", "fails");
            for c in &self.cells {
                let _ = writeln!(
                    out,
                    "{:<12} {:>6.2} {:>10.2} {:>6}",
                    c.estimator.name(),
                    c.phi,
                    100.0 * c.rmse(),
                    c.failures()
                );
            }
        } else {
            let _ = writeln!(
                out,
                "{:<12} {:>6} {:<12} {:>10} {:>10} {:>6}",
                "estimator", "phi", "coef", "bias x100", "std x100", "fails"
            );
            for c in &self.cells {
                for (name, s) in self.coefficients.iter().zip(c.coef_stats(&self.truth)) {
                    let _ = writeln!(
                        out,
                        "{:<12} {:>6.2} {:<12} {:>10.2} {:>10.2} {:>6}",
                        c.estimator.name(),
                        c.phi,
                        name,
                        100.0 * s.bias,
                        100.0 * s.std,
                        c.failures()
                    );
                }
            }
        }
        out
    }
}

/// Missing-block mean squared error against the true probabilities, over
/// ordered pairs of distinct unsampled nodes.
pub fn mse_missing_block(a_hat: &DMatrix<f64>, p: &ProbabilityMatrix, sampled: &[usize]) -> Result<f64> {
    let n = p.n_nodes();
    if a_hat.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "imputed matrix is {:?}, probabilities are {n}x{n}",
            a_hat.shape()
        )));
    }
    let mut in_s = vec![false; n];
    for &s in sampled {
        if s >= n {
            return invalid(format!("sampled node {s} out of range"));
        }
        in_s[s] = true;
    }
    let u: Vec<usize> = (0..n).filter(|&i| !in_s[i]).collect();
    if u.len() < 2 {
        return invalid("missing block has no off-diagonal entries");
    }
    let mut s = 0.0;
    for &i in &u {
        for &j in &u {
            if i != j {
                s += (a_hat[(i, j)] - p.get(i, j)).powi(2);
            }
        }
    }
    Ok(s / (u.len() * (u.len() - 1)) as f64)
}

/// Single-replication RMSE on the missing block.
pub fn rmse_missing_block(a_hat: &DMatrix<f64>, p: &ProbabilityMatrix, sampled: &[usize]) -> Result<f64> {
    Ok(mse_missing_block(a_hat, p, sampled)?.sqrt())
}

fn world(n: usize, beta: &[f64], seed: u64) -> Result<(crate::netmodel::CovariateSet, crate::netmodel::LatentSet, ProbabilityMatrix)> {
    let (cov, lat) = generate_population(n, seed)?;
    let p = probability_matrix(&cov, &lat, &GraphonSpec::simulation_design(beta.to_vec()))?;
    Ok((cov, lat, p))
}

fn seeded(cfg: &ExperimentConfig, seed: u64) -> (ImputeConfig, BaselineConfig) {
    (
        ImputeConfig { seed, ..cfg.impute.clone() },
        BaselineConfig {
            seed,
            ..cfg.baseline.clone()
        },
    )
}

/// Impute with every method, isolating failures to the failing method.
fn impute_all(
    cfg: &ExperimentConfig,
    pn: &PartialNetwork,
    cov: &crate::netmodel::CovariateSet,
    seed: u64,
) -> Vec<Option<(DMatrix<f64>, usize)>> {
    let (ic, bc) = seeded(cfg, seed);
    match impute_methods(&cfg.methods, pn, cov, &ic, &bc) {
        Ok(nets) => nets
            .into_iter()
            .map(|n| {
                let f = n.fallback_count();
                Some((n.into_matrix(), f))
            })
            .collect(),
        Err(_) => cfg
            .methods
            .iter()
            .map(|&m| {
                impute_method(m, pn, cov, &ic, &bc).ok().map(|n| {
                    let f = n.fallback_count();
                    (n.into_matrix(), f)
                })
            })
            .collect(),
    }
}

/// Missing-block accuracy of each method at each sampling rate.
pub fn run_imputation_experiment(cfg: &ExperimentConfig) -> Result<McReport> {
    cfg.validate()?;
    let start = Instant::now();
    let reps: Vec<usize> = (cfg.first_replication..cfg.first_replication + cfg.replications).collect();
    let per_rep: Vec<Vec<Vec<Option<(f64, usize)>>>> = reps
        .par_iter()
        .map(|&r| -> Result<_> {
            let rep_seed = derive_seed(cfg.seed, r as u64);
            let (cov, _, p) = world(cfg.n_nodes, &cfg.beta, rep_seed)?;
            let net = sample_network(&p, rep_seed);
            cfg.phi_list
                .iter()
                .enumerate()
                .map(|(c, &phi)| {
                    let s = derive_seed(rep_seed, 1 + c as u64);
                    let pn = egocentric_sample(&net, cfg.sample_size(phi), s)?;
                    Ok(impute_all(cfg, &pn, &cov, s)
                        .into_iter()
                        .map(|o| o.and_then(|(a, f)| mse_missing_block(&a, &p, pn.sampled()).ok().map(|m| (m, f))))
                        .collect())
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (c, &phi) in cfg.phi_list.iter().enumerate() {
        for (k, &m) in cfg.methods.iter().enumerate() {
            let col: Vec<&Option<(f64, usize)>> = per_rep.iter().map(|r| &r[c][k]).collect();
            cells.push(McCell {
                estimator: Estimator::Imputed(m),
                phi,
                values: col.iter().map(|o| o.map(|(v, _)| vec![v])).collect(),
                fallbacks: col.iter().map(|o| o.map_or(0, |(_, f)| f)).sum(),
            });
        }
    }
    Ok(McReport {
        experiment: ExperimentKind::Imputation,
        cells,
        coefficients: Vec::new(),
        truth: Vec::new(),
        elapsed: start.elapsed(),
    })
}

/// Networks in one downstream replication: the true adjacency, the
/// imputations per method, and the simulation draws.
struct DownstreamNetwork {
    adj: DMatrix<f64>,
    imputed: Vec<Option<(DMatrix<f64>, usize)>>,
    cov: crate::netmodel::CovariateSet,
    lat: crate::netmodel::LatentSet,
    seed: u64,
}

fn downstream_networks(cfg: &ExperimentConfig, cell: usize, phi: f64, rep: usize) -> Result<Vec<DownstreamNetwork>> {
    let cell_seed = derive_seed(cfg.seed, cell as u64);
    (0..cfg.n_networks)
        .map(|m| {
            let seed = derive_seed(cell_seed, (rep * cfg.n_networks + m) as u64);
            let (cov, lat, p) = world(cfg.n_nodes, &cfg.beta, seed)?;
            let net = sample_network(&p, seed);
            let pn = egocentric_sample(&net, cfg.sample_size(phi), seed)?;
            let imputed = impute_all(cfg, &pn, &cov, seed);
            Ok(DownstreamNetwork {
                adj: net.adjacency().clone(),
                imputed,
                cov,
                lat,
                seed,
            })
        })
        .collect()
}

/// Standard deviations `(u_m, e)` of the centrality outcome noise.
pub const CENTRALITY_NOISE_SD: (f64, f64) = (0.25, 0.25);
/// Standard deviations `(u_m, e)` of the peer-effects outcome noise.
pub const PEER_NOISE_SD: (f64, f64) = (0.2, 1.0);

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("positive standard deviation")
}

fn centrality_of(kind: ExperimentKind, a: &DMatrix<f64>) -> Result<DVector<f64>> {
    match kind {
        ExperimentKind::CentralityEigen => Ok(eigenvector_centrality(a, 1e-10, 10_000)?.values),
        _ => degree_centrality(a),
    }
}

/// Outcomes `Y = 0.5 phi(A) + u_m + e` and OLS of `Y` on the centrality of
/// the complete and of each imputed network.
pub fn run_centrality_experiment(cfg: &ExperimentConfig) -> Result<McReport> {
    cfg.validate()?;
    if !matches!(cfg.experiment, ExperimentKind::CentralityDegree | ExperimentKind::CentralityEigen) {
        return invalid("centrality experiment needs a centrality kind");
    }
    let start = Instant::now();
    let kind = cfg.experiment;
    let n_est = 1 + cfg.methods.len();
    let mut cells = Vec::new();
    for (c, &phi) in cfg.phi_list.iter().enumerate() {
        let reps: Vec<usize> = (cfg.first_replication..cfg.first_replication + cfg.replications).collect();
        let per_rep: Vec<Vec<(Option<Vec<f64>>, usize)>> = reps
            .par_iter()
            .map(|&r| -> Result<_> {
                let nets = downstream_networks(cfg, c, phi, r)?;
                let mut ys = Vec::with_capacity(nets.len());
                let mut phis: Vec<Vec<Option<DVector<f64>>>> = vec![Vec::new(); n_est];
                let mut fallbacks = vec![0usize; n_est];
                for net in &nets {
                    let truth = centrality_of(kind, &net.adj)?;
                    let mut rng = stream(net.seed, 0, Purpose::Outcomes);
                    let n = truth.len();
                    let (u, e) = if cfg.noiseless {
                        (0.0, DVector::zeros(n))
                    } else {
                        let (su, se) = CENTRALITY_NOISE_SD;
                        let u = normal(su).sample(&mut rng);
                        (u, DVector::from_fn(n, |_, _| normal(se).sample(&mut rng)))
                    };
                    ys.push(truth.map(|v| 0.5 * v) + DVector::from_element(n, u) + e);
                    phis[0].push(Some(truth));
                    for (k, imp) in net.imputed.iter().enumerate() {
                        phis[k + 1].push(imp.as_ref().and_then(|(a, f)| {
                            fallbacks[k + 1] += f;
                            centrality_of(kind, a).ok()
                        }));
                    }
                }
                Ok(phis
                    .into_iter()
                    .zip(fallbacks)
                    .map(|(ph, f)| {
                        let est = ph
                            .into_iter()
                            .collect::<Option<Vec<_>>>()
                            .and_then(|ph| centrality_ols(&ys, &ph).ok())
                            .map(|e| vec![e.alpha_c, e.alpha_1]);
                        (est, f)
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        for k in 0..n_est {
            cells.push(McCell {
                estimator: if k == 0 {
                    Estimator::CompleteData
                } else {
                    Estimator::Imputed(cfg.methods[k - 1])
                },
                phi,
                values: per_rep.iter().map(|r| r[k].0.clone()).collect(),
                fallbacks: per_rep.iter().map(|r| r[k].1).sum(),
            });
        }
    }
    Ok(McReport {
        experiment: kind,
        cells,
        coefficients: vec!["alpha_c".into(), "alpha_1".into()],
        truth: vec![0.0, 0.5],
        elapsed: start.elapsed(),
    })
}

/// Parameters of the peer-effects simulation design.
pub fn peer_design() -> PeerParams {
    PeerParams {
        alpha_c: 0.0,
        alpha_ybar: 0.5,
        alpha_w: vec![1.0, 1.0],
        alpha_wbar: vec![1.0, 1.0],
    }
}

/// Linear-in-means outcomes on the true network; GMM with the complete and
/// each imputed network.
pub fn run_peereffects_experiment(cfg: &ExperimentConfig) -> Result<McReport> {
    cfg.validate()?;
    if cfg.experiment != ExperimentKind::PeerEffects {
        return invalid("peer-effects experiment needs the peer-effects kind");
    }
    let start = Instant::now();
    let alpha = peer_design();
    let n_est = 1 + cfg.methods.len();
    let mut cells = Vec::new();
    for (c, &phi) in cfg.phi_list.iter().enumerate() {
        let reps: Vec<usize> = (cfg.first_replication..cfg.first_replication + cfg.replications).collect();
        let per_rep: Vec<Vec<(Option<Vec<f64>>, usize)>> = reps
            .par_iter()
            .map(|&r| -> Result<_> {
                let nets = downstream_networks(cfg, c, phi, r)?;
                let mut data: Vec<Vec<Option<PeerNetworkData>>> = vec![Vec::new(); n_est];
                let mut fallbacks = vec![0usize; n_est];
                for net in &nets {
                    let g = row_normalize(&net.adj)?;
                    let w = peer_covariates(&net.cov, &net.lat)?;
                    let n = w.nrows();
                    let mut rng = stream(net.seed, 0, Purpose::Outcomes);
                    let (u, e) = if cfg.noiseless {
                        (0.0, DVector::zeros(n))
                    } else {
                        let (su, se) = PEER_NOISE_SD;
                        let u = normal(su).sample(&mut rng);
                        (u, DVector::from_fn(n, |_, _| normal(se).sample(&mut rng)))
                    };
                    let y = simulate_peer_outcomes(&g, &w, &alpha, u, &e)?;
                    for (k, imp) in net.imputed.iter().enumerate() {
                        data[k + 1].push(imp.as_ref().and_then(|(a, f)| {
                            fallbacks[k + 1] += f;
                            row_normalize(a).ok().map(|g| PeerNetworkData {
                                g,
                                w: w.clone(),
                                y: y.clone(),
                            })
                        }));
                    }
                    data[0].push(Some(PeerNetworkData { g, w, y }));
                }
                Ok(data
                    .into_iter()
                    .zip(fallbacks)
                    .map(|(d, f)| {
                        let est = d
                            .into_iter()
                            .collect::<Option<Vec<_>>>()
                            .and_then(|d| peer_effects_gmm(&d, &GmmWeight::Identity).ok())
                            .map(|e| e.alpha.iter().copied().collect());
                        (est, f)
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        for k in 0..n_est {
            cells.push(McCell {
                estimator: if k == 0 {
                    Estimator::CompleteData
                } else {
                    Estimator::Imputed(cfg.methods[k - 1])
                },
                phi,
                values: per_rep.iter().map(|r| r[k].0.clone()).collect(),
                fallbacks: per_rep.iter().map(|r| r[k].1).sum(),
            });
        }
    }
    Ok(McReport {
        experiment: ExperimentKind::PeerEffects,
        cells,
        coefficients: ["alpha_c", "alpha_ybar", "alpha_w1", "alpha_w2", "alpha_wbar1", "alpha_wbar2"]
            .map(String::from)
            .to_vec(),
        truth: alpha.to_vector().iter().copied().collect(),
        elapsed: start.elapsed(),
    })
}

/// Dispatch on `cfg.experiment`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<McReport> {
    match cfg.experiment {
        ExperimentKind::Imputation => run_imputation_experiment(cfg),
        ExperimentKind::CentralityDegree | ExperimentKind::CentralityEigen => run_centrality_experiment(cfg),
        ExperimentKind::PeerEffects => run_peereffects_experiment(cfg),
    }
}

/// Replication-averaged missing-block MSE of the covariate-adjusted TWFE
/// imputation at each fixed bandwidth in `h_grid` (no cross-validation).
pub fn bandwidth_profile(cfg: &ExperimentConfig, phi: f64, h_grid: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    if h_grid.is_empty() {
        return invalid("bandwidth grid is empty");
    }
    let kernels: Vec<KernelSpec> = h_grid
        .iter()
        .map(|&h| KernelSpec::new(cfg.impute.kernel, h))
        .collect::<Result<_>>()?;
    let reps: Vec<usize> = (cfg.first_replication..cfg.first_replication + cfg.replications).collect();
    let per_rep: Vec<Vec<f64>> = reps
        .par_iter()
        .map(|&r| -> Result<Vec<f64>> {
            let seed = derive_seed(cfg.seed, r as u64);
            let (cov, _, p) = world(cfg.n_nodes, &cfg.beta, seed)?;
            let pn = egocentric_sample(&sample_network(&p, seed), cfg.sample_size(phi), seed)?;
            let (_, res) = first_stage(&pn, &cov, &ImputeConfig { seed, ..cfg.impute.clone() })?;
            let all: Vec<usize> = (0..pn.n_nodes()).collect();
            let dist = pseudo_distance(&pn, &all, pn.sampled())?;
            kernels
                .iter()
                .map(|k| {
                    let net = impute_missing(&pn, &res, &dist, k, cfg.impute.symmetrize)?;
                    mse_missing_block(net.matrix(), &p, pn.sampled())
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = per_rep.len() as f64;
    Ok((0..h_grid.len()).map(|k| per_rep.iter().map(|r| r[k]).sum::<f64>() / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impute::ImputedNetwork;

    #[test]
    fn mse_cases() {
        let p = ProbabilityMatrix::new(DMatrix::from_fn(6, 6, |i, j| if i == j { 0.0 } else { 0.3 })).unwrap();
        let exact = p.matrix().clone();
        assert_eq!(mse_missing_block(&exact, &p, &[0, 1]).unwrap(), 0.0);
        let shifted = DMatrix::from_fn(6, 6, |i, j| if i == j { 0.0 } else { 0.4 });
        let m = mse_missing_block(&shifted, &p, &[0, 1]).unwrap();
        assert!((m - 0.01).abs() < 1e-15);
        assert!((rmse_missing_block(&shifted, &p, &[0, 1]).unwrap() - 0.1).abs() < 1e-14);
    }

    #[test]
    fn mse_hand_instance() {
        let p = ProbabilityMatrix::new(DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 0.1, 0.2, 0.3, 0.1, 0.0, 0.4, 0.5, 0.2, 0.4, 0.0, 0.6, 0.3, 0.5, 0.6, 0.0],
        ))
        .unwrap();
        let a = DMatrix::from_row_slice(4, 4, &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.9, 1.0, 1.0, 0.9, 0.0]);
        let pn = PartialNetwork::from_values(a, &[0, 1]).unwrap();
        let imp = ImputedNetwork::merge(&pn, |_, _| 0.9, 0);
        // Missing block is {2, 3}: both orderings have error 0.3.
        let m = mse_missing_block(imp.matrix(), &p, &[0, 1]).unwrap();
        assert!((m - 0.09).abs() < 1e-15);
    }

    fn tiny(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            experiment: kind,
            n_nodes: 40,
            n_networks: 3,
            phi_list: vec![0.4],
            methods: vec![Method::X, Method::XLtwfe],
            replications: 2,
            seed: 17,
            ..Default::default()
        }
    }

    #[test]
    fn single_replication_smoke() {
        let cfg = ExperimentConfig {
            replications: 1,
            ..tiny(ExperimentKind::Imputation)
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.cells.len(), 2);
        for c in &r.cells {
            assert_eq!(c.replications(), 1);
            assert!(c.rmse().is_finite());
        }
    }

    #[test]
    fn runs_are_deterministic() {
        for kind in [
            ExperimentKind::Imputation,
            ExperimentKind::CentralityDegree,
            ExperimentKind::CentralityEigen,
            ExperimentKind::PeerEffects,
        ] {
            let cfg = tiny(kind);
            let a = run_experiment(&cfg).unwrap();
            let b = run_experiment(&cfg).unwrap();
            assert_eq!(a, b, "{}", kind.name());
            assert_eq!(a.to_csv(), b.to_csv());
        }
    }

    #[test]
    fn split_runs_pool_to_single_run() {
        for kind in [ExperimentKind::Imputation, ExperimentKind::CentralityDegree] {
            let cfg = ExperimentConfig {
                replications: 4,
                ..tiny(kind)
            };
            let whole = run_experiment(&cfg).unwrap();
            let first = run_experiment(&ExperimentConfig {
                replications: 2,
                ..cfg.clone()
            })
            .unwrap();
            let second = run_experiment(&ExperimentConfig {
                replications: 2,
                first_replication: 2,
                ..cfg.clone()
            })
            .unwrap();
            assert_eq!(first.pool(second).unwrap(), whole);
        }
    }

    #[test]
    fn noiseless_complete_data_is_exact() {
        for kind in [ExperimentKind::CentralityDegree, ExperimentKind::CentralityEigen] {
            let cfg = ExperimentConfig {
                noiseless: true,
                methods: vec![],
                replications: 3,
                ..tiny(kind)
            };
            let r = run_experiment(&cfg).unwrap();
            let s = r.cell(Estimator::CompleteData, 0.4).unwrap().coef_stats(&r.truth);
            assert!(s[1].bias.abs() < 1e-10 && s[1].std < 1e-10);
        }
        let cfg = ExperimentConfig {
            noiseless: true,
            methods: vec![],
            replications: 2,
            n_networks: 3,
            n_nodes: 60,
            ..tiny(ExperimentKind::PeerEffects)
        };
        let r = run_experiment(&cfg).unwrap();
        let s = r.cell(Estimator::CompleteData, 0.4).unwrap().coef_stats(&r.truth);
        assert!(s.iter().all(|c| c.bias.abs() < 1e-6 && c.std < 1e-6));
    }

    #[test]
    fn report_formats_have_one_row_per_quantity() {
        let r = run_experiment(&tiny(ExperimentKind::PeerEffects)).unwrap();
        let csv = r.to_csv();
        // Header + 3 estimators x 6 coefficients x (bias, std).
        assert_eq!(csv.lines().count(), 1 + 3 * 6 * 2);
        assert!(r.to_table().contains("alpha_ybar"));
    }

    #[test]
    fn config_validation() {
        let bad = [
            ExperimentConfig {
                replications: 0,
                ..Default::default()
            },
            ExperimentConfig {
                phi_list: vec![1.0],
                ..Default::default()
            },
            ExperimentConfig {
                phi_list: vec![0.001],
                ..Default::default()
            },
            ExperimentConfig {
                beta: vec![1.0],
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(run_experiment(&cfg).is_err());
        }
    }
}
