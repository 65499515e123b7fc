//! Comparison imputers: covariate-only, TWFE without covariates, global
//! low-rank completion, and local low-rank (kNN + PCA) completion.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;

use crate::distance::{pseudo_distance, PseudoDistanceTable};
use crate::dyadic::{FirstStage, PiModel, ResidualTable};
use crate::error::{invalid, Error, Result};
use crate::impute::{first_stage, impute_with_cv, run, split_with, ImputeConfig, ImputeOutcome, ImputedNetwork};
use crate::netmodel::{CovariateSet, PartialNetwork};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Covariate-only first stage.
    X,
    /// Global low-rank completion.
    Lr,
    /// Local low-rank completion on raw links.
    Lpca,
    /// Local low-rank completion on first-stage residuals.
    XLpca,
    /// Local TWFE on raw links.
    Ltwfe,
    /// Local TWFE on first-stage residuals.
    XLtwfe,
    /// Local TWFE on residuals with sample splitting.
    XLtwfeSp,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::X,
        Method::Lr,
        Method::Lpca,
        Method::Ltwfe,
        Method::XLpca,
        Method::XLtwfe,
        Method::XLtwfeSp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::X => "X",
            Method::Lr => "LR",
            Method::Lpca => "LPCA",
            Method::XLpca => "X-LPCA",
            Method::Ltwfe => "LTWFE",
            Method::XLtwfe => "X-LTWFE",
            Method::XLtwfeSp => "X-LTWFE-SP",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Method::ALL.into_iter().find(|m| m.name().to_ascii_lowercase() == key)
    }

    pub fn uses_covariates(self) -> bool {
        matches!(self, Method::X | Method::XLpca | Method::XLtwfe | Method::XLtwfeSp)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Tuning for the low-rank and local low-rank baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    /// Candidate ranks for LR.
    pub rank_grid: Vec<usize>,
    /// Candidate ranks for LPCA.
    pub local_rank_grid: Vec<usize>,
    /// Candidate neighbor counts as fractions of the number of sampled nodes.
    pub k_fractions: Vec<f64>,
    /// Explicit neighbor counts; overrides `k_fractions` when nonempty.
    pub k_grid: Vec<usize>,
    /// Share of cross-block entries held out for rank / neighbor selection.
    pub holdout_fraction: f64,
    /// Upper bound on held-out pairs scored by the LPCA selection.
    pub holdout_cap: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            rank_grid: (1..=8).collect(),
            local_rank_grid: (1..=4).collect(),
            k_fractions: vec![0.25, 0.5, 1.0],
            k_grid: Vec::new(),
            holdout_fraction: 0.1,
            holdout_cap: 2000,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    fn validate(&self) -> Result<()> {
        if self.rank_grid.is_empty() || self.rank_grid.contains(&0) {
            return invalid("rank grid must be nonempty and positive");
        }
        if self.local_rank_grid.is_empty() || self.local_rank_grid.contains(&0) {
            return invalid("local rank grid must be nonempty and positive");
        }
        if self.k_grid.is_empty() && self.k_fractions.iter().all(|f| !(*f > 0.0)) {
            return invalid("neighbor grid is empty");
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return invalid(format!("holdout fraction {} outside (0, 1)", self.holdout_fraction));
        }
        Ok(())
    }

    fn neighbor_counts(&self, n_sampled: usize) -> Vec<usize> {
        let mut ks: Vec<usize> = if self.k_grid.is_empty() {
            self.k_fractions
                .iter()
                .map(|f| ((f * n_sampled as f64).round() as usize).max(1))
                .collect()
        } else {
            self.k_grid.clone()
        };
        ks.iter_mut().for_each(|k| *k = (*k).clamp(1, n_sampled));
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}

/// Missing entries set to the clamped first-stage prediction.
pub fn impute_covariate_only(pn: &PartialNetwork, cov: &CovariateSet, cfg: &ImputeConfig) -> Result<ImputedNetwork> {
    if cov.dim() == 0 {
        return invalid("covariate-only imputation needs at least one covariate");
    }
    let (_, res) = first_stage(pn, cov, cfg)?;
    Ok(covariate_only_from(pn, &res))
}

pub(crate) fn covariate_only_from(pn: &PartialNetwork, res: &ResidualTable) -> ImputedNetwork {
    ImputedNetwork::merge(pn, |i, j| res.pi(i, j), 0)
}

/// Local TWFE on the raw links (no first stage).
pub fn impute_ltwfe(pn: &PartialNetwork, cfg: &ImputeConfig) -> Result<ImputeOutcome> {
    let cfg = ImputeConfig {
        first_stage: FirstStage::None,
        ..cfg.clone()
    };
    impute_with_cv(pn, &CovariateSet::empty(pn.n_nodes()), &cfg)
}

/// Symmetric eigendecomposition sorted by decreasing |eigenvalue|, with
/// numerically zero eigenvalues dropped.
fn ranked_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .total_cmp(&eig.eigenvalues[a].abs())
            .then(a.cmp(&b))
    });
    let top = order.first().map_or(0.0, |&a| eig.eigenvalues[a].abs());
    order.retain(|&a| eig.eigenvalues[a].abs() > 1e-10 * top);
    let vals = DVector::from_iterator(order.len(), order.iter().map(|&a| eig.eigenvalues[a]));
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Global low-rank completion of the missing block from the sampled
/// submatrix, rank chosen by holdout on cross-block entries.
pub fn impute_lowrank(pn: &PartialNetwork, cfg: &BaselineConfig) -> Result<(ImputedNetwork, usize)> {
    cfg.validate()?;
    let s = pn.sampled();
    let u = pn.unsampled();
    let n = s.len();
    let a = pn.values();
    let a_ss = DMatrix::from_fn(n, n, |r, c| a[(s[r], s[c])]);
    let a_us = DMatrix::from_fn(u.len(), n, |r, c| a[(u[r], s[c])]);
    let (block, rank) = lowrank_block(a_ss, &a_us, cfg)?;
    let mut pos = vec![usize::MAX; pn.n_nodes()];
    for (k, &v) in u.iter().enumerate() {
        pos[v] = k;
    }
    let out = ImputedNetwork::merge(pn, |i, j| block[(pos[i], pos[j])], 0);
    Ok((out, rank))
}

/// Unsampled-by-unsampled block `A_uS F Lambda^{-1} F' A_Su` at the selected rank.
pub fn lowrank_block(a_ss: DMatrix<f64>, a_us: &DMatrix<f64>, cfg: &BaselineConfig) -> Result<(DMatrix<f64>, usize)> {
    let n = a_ss.nrows();
    let max_rank = *cfg.rank_grid.iter().max().unwrap();
    if max_rank >= n {
        return invalid(format!("rank {max_rank} must be below the number of sampled nodes {n}"));
    }
    let (vals, vecs) = ranked_eigen(a_ss);
    let mut grid: Vec<usize> = cfg.rank_grid.iter().copied().filter(|&r| r <= vals.len()).collect();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return invalid("sampled block has no nonzero eigenvalues");
    }
    let rank = if grid.len() == 1 || a_us.nrows() == 0 {
        grid[0]
    } else {
        select_rank(a_us, &vals, &vecs, &grid, cfg)?
    };
    let f = vecs.columns(0, rank);
    let lam_inv = DMatrix::from_diagonal(&vals.rows(0, rank).map(|v| 1.0 / v));
    let l = a_us * f;
    let block = &l * lam_inv * l.transpose();
    Ok((block, rank))
}

fn select_rank(
    a_us: &DMatrix<f64>,
    vals: &DVector<f64>,
    vecs: &DMatrix<f64>,
    grid: &[usize],
    cfg: &BaselineConfig,
) -> Result<usize> {
    let (m, n) = a_us.shape();
    let total = m * n;
    let n_hold = ((cfg.holdout_fraction * total as f64).round() as usize).clamp(1, total);
    let mut rng = stream(cfg.seed, 0, Purpose::Holdout);
    let mut masked = vec![false; total];
    for p in index::sample(&mut rng, total, n_hold).iter() {
        masked[p] = true;
    }
    let mut best: Option<(usize, f64)> = None;
    for &r in grid {
        // Loadings solve A_{u, kept} ~ l_u (F Lambda)_{kept}'.
        let g = DMatrix::from_fn(n, r, |row, c| vecs[(row, c)] * vals[c]);
        let mut sse = 0.0;
        for row in 0..m {
            let kept: Vec<usize> = (0..n).filter(|&c| !masked[row * n + c]).collect();
            if kept.len() == n {
                continue;
            }
            let gk = DMatrix::from_fn(kept.len(), r, |a, c| g[(kept[a], c)]);
            let yk = DVector::from_fn(kept.len(), |a, _| a_us[(row, kept[a])]);
            let gtg = gk.transpose() * &gk;
            let gty = gk.transpose() * yk;
            let load = match gtg.clone().cholesky() {
                Some(ch) => ch.solve(&gty),
                None => gtg.pseudo_inverse(1e-12).map_err(|e| Error::Validation(e.to_string()))? * gty,
            };
            for c in (0..n).filter(|&c| masked[row * n + c]) {
                let pred: f64 = (0..r).map(|t| g[(c, t)] * load[t]).sum();
                sse += (a_us[(row, c)] - pred).powi(2);
            }
        }
        if best.is_none_or(|(_, b)| sse < b) {
            best = Some((r, sse));
        }
    }
    Ok(best.unwrap().0)
}

/// The `k` sampled nodes closest to `node` (excluding `exclude`), ties by index.
fn nearest(dist: &PseudoDistanceTable, node: usize, k: usize, exclude: usize, buf: &mut Vec<(f64, usize)>) -> Vec<usize> {
    let row = dist.target_row(node).expect("target present");
    let d = dist.matrix();
    buf.clear();
    for (c, &r) in dist.references().iter().enumerate() {
        if r != exclude && r != node {
            buf.push((d[(row, c)], r));
        }
    }
    let k = k.min(buf.len());
    if k == 0 {
        return Vec::new();
    }
    buf.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = buf[..k].iter().map(|&(_, r)| r).collect();
    out.sort_unstable();
    out
}

/// SVD of the most recent neighborhood block, reused while the neighborhoods repeat.
#[derive(Default)]
struct BlockCache {
    ni: Vec<usize>,
    nj: Vec<usize>,
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
    // (singular value, index), descending, truncated at numerical rank
    ranked: Vec<(f64, usize)>,
}

impl BlockCache {
    fn load(&mut self, res: &ResidualTable, ni: &[usize], nj: &[usize]) {
        if !self.ranked.is_empty() && self.ni == ni && self.nj == nj {
            return;
        }
        let block = DMatrix::from_fn(ni.len(), nj.len(), |a, b| res.get(ni[a], nj[b]));
        let svd = block.svd(true, true);
        let mut ranked: Vec<(f64, usize)> = svd.singular_values.iter().copied().zip(0..).collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        let top = ranked.first().map_or(0.0, |x| x.0);
        ranked.retain(|x| x.0 > 1e-10 * top);
        self.u = svd.u.unwrap();
        self.v_t = svd.v_t.unwrap();
        self.ranked = ranked;
        self.ni = ni.to_vec();
        self.nj = nj.to_vec();
    }
}

/// Local low-rank predictions of `(i, j)` at every rank up to `max_rank`:
/// `R[i, N_j] pinv_r(R[N_i, N_j]) R[N_i, j]`. Returns fewer entries when the
/// neighborhood block has lower numerical rank.
#[cfg(test)]
fn local_predictions(res: &ResidualTable, i: usize, j: usize, ni: &[usize], nj: &[usize], max_rank: usize) -> Vec<f64> {
    local_predictions_cached(&mut BlockCache::default(), res, i, j, ni, nj, max_rank)
}

fn local_predictions_cached(
    cache: &mut BlockCache,
    res: &ResidualTable,
    i: usize,
    j: usize,
    ni: &[usize],
    nj: &[usize],
    max_rank: usize,
) -> Vec<f64> {
    if ni.is_empty() || nj.is_empty() {
        return Vec::new();
    }
    cache.load(res, ni, nj);
    let mut out = Vec::with_capacity(max_rank);
    let mut acc = 0.0;
    for &(sv, t) in cache.ranked.iter().take(max_rank) {
        let left: f64 = nj.iter().enumerate().map(|(b, &v)| cache.v_t[(t, b)] * res.get(i, v)).sum();
        let right: f64 = ni.iter().enumerate().map(|(a, &v)| cache.u[(a, t)] * res.get(v, j)).sum();
        acc += left * right / sv;
        out.push(acc);
    }
    out
}

/// Local PCA imputation: for each missing `(i, j)`, complete the cell from the
/// submatrix on the `k` nearest sampled neighbors of `i` and of `j`. `(k, r)`
/// are chosen jointly on held-out cross-block entries. Returns the network and
/// the selected `(k, r)`.
pub fn impute_local_pca(
    pn: &PartialNetwork,
    cov: &CovariateSet,
    with_x: bool,
    impute_cfg: &ImputeConfig,
    cfg: &BaselineConfig,
) -> Result<(ImputedNetwork, (usize, usize))> {
    cfg.validate()?;
    let first = if with_x {
        impute_cfg.clone()
    } else {
        ImputeConfig {
            first_stage: FirstStage::None,
            ..impute_cfg.clone()
        }
    };
    let (_, res) = first_stage(pn, cov, &first)?;
    let all: Vec<usize> = (0..pn.n_nodes()).collect();
    let dist = pseudo_distance(pn, &all, pn.sampled())?;
    local_pca_with(pn, &res, &dist, cfg)
}

pub(crate) fn local_pca_with(
    pn: &PartialNetwork,
    res: &ResidualTable,
    dist: &PseudoDistanceTable,
    cfg: &BaselineConfig,
) -> Result<(ImputedNetwork, (usize, usize))> {
    let s = dist.references();
    let u = pn.unsampled();
    let n = s.len();
    if n < 2 {
        return invalid("local PCA needs at least two sampled nodes");
    }
    let ks = cfg.neighbor_counts(n);
    let max_rank = *cfg.local_rank_grid.iter().max().unwrap();
    let mut buf = Vec::with_capacity(n);

    let (k_best, r_best) = if (ks.len() == 1 && cfg.local_rank_grid.len() == 1) || u.is_empty() {
        (ks[0], cfg.local_rank_grid[0])
    } else {
        let total = n * u.len();
        let n_hold = ((cfg.holdout_fraction * total as f64).round() as usize).clamp(1, total.min(cfg.holdout_cap));
        let mut rng = stream(cfg.seed, 0, Purpose::Holdout);
        let mut picks = index::sample(&mut rng, total, n_hold).into_vec();
        picks.sort_unstable();
        // sse[k][r], fallback to the first-stage value when rank r is unavailable.
        let mut sse = vec![vec![0.0; max_rank]; ks.len()];
        let mut caches: Vec<BlockCache> = ks.iter().map(|_| BlockCache::default()).collect();
        for p in picks {
            let (i, j) = (s[p / u.len()], u[p % u.len()]);
            let truth = pn.value(i, j);
            let base = res.pi(i, j);
            for (ki, &k) in ks.iter().enumerate() {
                let ni = nearest(dist, i, k, i, &mut buf);
                let nj = nearest(dist, j, k, i, &mut buf);
                let preds = local_predictions_cached(&mut caches[ki], res, i, j, &ni, &nj, max_rank);
                for r in 0..max_rank {
                    let pred = preds.get(r.min(preds.len().wrapping_sub(1))).map_or(base.clamp(0.0, 1.0), |v| v + base);
                    sse[ki][r] += (truth - pred).powi(2);
                }
            }
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for &r in &cfg.local_rank_grid {
            for (ki, &k) in ks.iter().enumerate() {
                let v = sse[ki][r - 1];
                if best.is_none_or(|(_, _, b)| v < b) {
                    best = Some((k, r, v));
                }
            }
        }
        let (k, r, _) = best.unwrap();
        (k, r)
    };

    let neigh: Vec<Vec<usize>> = (0..pn.n_nodes())
        .map(|v| if pn.is_sampled(v) { Vec::new() } else { nearest(dist, v, k_best, usize::MAX, &mut buf) })
        .collect();
    // The residual table is symmetric, so one orientation suffices.
    let missing = pn.missing_pairs();
    let mut cache = BlockCache::default();
    let fills: Vec<Option<f64>> = missing
        .iter()
        .map(|&(i, j)| {
            local_predictions_cached(&mut cache, res, i, j, &neigh[i], &neigh[j], r_best)
                .last()
                .map(|x| x + res.pi(i, j))
        })
        .collect();
    let fallbacks = fills.iter().filter(|f| f.is_none()).count();
    let mut it = missing.iter().zip(&fills);
    let out = ImputedNetwork::merge(
        pn,
        |i, j| {
            let (&(a, b), f) = it.next().expect("missing pairs in order");
            debug_assert_eq!((a, b), (i, j));
            f.unwrap_or_else(|| res.pi(i, j))
        },
        fallbacks,
    );
    Ok((out, (k_best, r_best)))
}

/// Run one method.
pub fn impute_method(
    method: Method,
    pn: &PartialNetwork,
    cov: &CovariateSet,
    impute_cfg: &ImputeConfig,
    cfg: &BaselineConfig,
) -> Result<ImputedNetwork> {
    Ok(impute_methods(&[method], pn, cov, impute_cfg, cfg)?.pop().unwrap())
}

/// Run several methods on one sampled network. The first stage and the
/// full-sample pseudo-distances are computed once and shared.
pub fn impute_methods(
    methods: &[Method],
    pn: &PartialNetwork,
    cov: &CovariateSet,
    impute_cfg: &ImputeConfig,
    cfg: &BaselineConfig,
) -> Result<Vec<ImputedNetwork>> {
    impute_cfg.validate()?;
    let no_x_cfg = ImputeConfig {
        first_stage: FirstStage::None,
        split: false,
        ..impute_cfg.clone()
    };
    let x_cfg = ImputeConfig {
        split: false,
        ..impute_cfg.clone()
    };
    let mut with_x: Option<(PiModel, ResidualTable)> = None;
    let mut without_x: Option<(PiModel, ResidualTable)> = None;
    let mut dist: Option<PseudoDistanceTable> = None;
    let all: Vec<usize> = (0..pn.n_nodes()).collect();
    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        if m.uses_covariates() && with_x.is_none() {
            if m == Method::X && cov.dim() == 0 {
                return invalid("covariate-only imputation needs at least one covariate");
            }
            with_x = Some(first_stage(pn, cov, &x_cfg)?);
        }
        if matches!(m, Method::Lpca | Method::Ltwfe) && without_x.is_none() {
            without_x = Some(first_stage(pn, cov, &no_x_cfg)?);
        }
        if matches!(m, Method::Lpca | Method::XLpca | Method::Ltwfe | Method::XLtwfe) && dist.is_none() {
            dist = Some(pseudo_distance(pn, &all, pn.sampled())?);
        }
        let net = match m {
            Method::X => covariate_only_from(pn, &with_x.as_ref().unwrap().1),
            Method::Lr => impute_lowrank(pn, cfg)?.0,
            Method::Lpca => local_pca_with(pn, &without_x.as_ref().unwrap().1, dist.as_ref().unwrap(), cfg)?.0,
            Method::XLpca => local_pca_with(pn, &with_x.as_ref().unwrap().1, dist.as_ref().unwrap(), cfg)?.0,
            Method::Ltwfe => {
                let (model, res) = without_x.as_ref().unwrap();
                run(pn, &no_x_cfg, model.clone(), res, dist.as_ref().unwrap(), None)?.network
            }
            Method::XLtwfe => {
                let (model, res) = with_x.as_ref().unwrap();
                run(pn, &x_cfg, model.clone(), res, dist.as_ref().unwrap(), None)?.network
            }
            Method::XLtwfeSp => {
                let (model, res) = with_x.as_ref().unwrap();
                split_with(pn, &x_cfg, model.clone(), res)?.network
            }
        };
        out.push(net);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{egocentric_sample, generate_population, probability_matrix, sample_network, GraphonSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mc_world(n: usize, k: usize, seed: u64) -> (PartialNetwork, CovariateSet) {
        let (cov, lat) = generate_population(n, seed).unwrap();
        let p = probability_matrix(&cov, &lat, &GraphonSpec::simulation_design(vec![-0.5, -0.5])).unwrap();
        (egocentric_sample(&sample_network(&p, seed), k, seed).unwrap(), cov)
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
        assert_eq!(Method::parse("x-ltwfe-sp"), Some(Method::XLtwfeSp));
        assert_eq!(Method::parse("nope"), None);
    }

    #[test]
    fn covariate_only_recovers_covariate_graphon() {
        // P depends on X only through an exactly linear function of the features.
        let n = 40;
        let (cov, _) = generate_population(n, 2).unwrap();
        let spec = crate::dyadic::DyadFeatureSpec::squared();
        let g = |i: usize, j: usize| {
            let w = crate::dyadic::dyad_features(&spec, &cov.row(i), &cov.row(j)).unwrap();
            0.6 - 0.02 * w[0] - 0.03 * w[1]
        };
        let f = |i: usize, j: usize| g(i, j).clamp(0.0, 1.0);
        let vals = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { g(i, j) });
        let sampled: Vec<usize> = (0..15).collect();
        let pn = PartialNetwork::from_values(vals, &sampled).unwrap();
        let cfg = ImputeConfig {
            first_stage: FirstStage::LinearProjection,
            ..Default::default()
        };
        let out = impute_covariate_only(&pn, &cov, &cfg).unwrap();
        for (i, j) in pn.missing_pairs() {
            assert!((out.get(i, j) - f(i, j)).abs() < 1e-8);
        }
        assert!(impute_covariate_only(&pn, &CovariateSet::empty(n), &cfg).is_err());
    }

    #[test]
    fn ltwfe_equals_xltwfe_without_covariates() {
        let (pn, _) = mc_world(50, 20, 4);
        let cfg = ImputeConfig::default();
        let a = impute_ltwfe(&pn, &cfg).unwrap();
        let b = impute_with_cv(&pn, &CovariateSet::empty(50), &cfg).unwrap();
        assert_eq!(a.network, b.network);
    }

    #[test]
    fn rank_one_block_is_reconstructed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v: Vec<f64> = (0..30).map(|_| rng.random_range(0.2..0.9)).collect();
        let a_ss = DMatrix::from_fn(10, 10, |r, c| v[r] * v[c]);
        let a_us = DMatrix::from_fn(20, 10, |r, c| v[10 + r] * v[c]);
        let cfg = BaselineConfig {
            rank_grid: vec![1, 2, 3],
            ..Default::default()
        };
        let (block, r) = lowrank_block(a_ss, &a_us, &cfg).unwrap();
        assert_eq!(r, 1);
        for p in 0..20 {
            for q in 0..20 {
                assert!((block[(p, q)] - v[10 + p] * v[10 + q]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rank_selection_prefers_true_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let f1: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.6)).collect();
        let f2: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        let p = |i: usize, j: usize| f1[i] * f1[j] + f2[i] * f2[j];
        let a_ss = DMatrix::from_fn(25, 25, |r, c| p(r, c));
        let a_us = DMatrix::from_fn(35, 25, |r, c| p(25 + r, c));
        let cfg = BaselineConfig {
            rank_grid: vec![1, 2, 3, 4],
            ..Default::default()
        };
        let (block, r) = lowrank_block(a_ss, &a_us, &cfg).unwrap();
        assert_eq!(r, 2);
        for a in 0..35 {
            for b in 0..35 {
                assert!((block[(a, b)] - p(25 + a, 25 + b)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lowrank_fill_is_symmetric_and_clamped() {
        let (pn, _) = mc_world(60, 20, 5);
        let (out, r) = impute_lowrank(&pn, &BaselineConfig::default()).unwrap();
        assert!((1..=8).contains(&r));
        for (i, j) in pn.missing_pairs() {
            assert_eq!(out.get(i, j), out.get(j, i));
            assert!((0.0..=1.0).contains(&out.get(i, j)));
        }
    }

    #[test]
    fn lowrank_rejects_large_rank() {
        let (pn, _) = mc_world(20, 5, 1);
        let cfg = BaselineConfig {
            rank_grid: vec![5],
            ..Default::default()
        };
        assert!(impute_lowrank(&pn, &cfg).is_err());
    }

    #[test]
    fn all_neighbors_local_pca_equals_global_lowrank() {
        let (pn, cov) = mc_world(40, 12, 6);
        let r = 9;
        let lr = BaselineConfig {
            rank_grid: vec![r],
            ..Default::default()
        };
        let (glob, _) = impute_lowrank(&pn, &lr).unwrap();
        let cfg = BaselineConfig {
            k_grid: vec![12],
            local_rank_grid: vec![r],
            ..Default::default()
        };
        let (loc, kr) = impute_local_pca(&pn, &cov, false, &ImputeConfig::default(), &cfg).unwrap();
        assert_eq!(kr, (12, r));
        assert_eq!(loc.fallback_count(), 0);
        for (i, j) in pn.missing_pairs() {
            assert!((loc.get(i, j) - glob.get(i, j)).abs() < 1e-8, "{} vs {}", loc.get(i, j), glob.get(i, j));
        }
    }

    #[test]
    fn all_neighbors_full_rank_matches_global_formula() {
        // With k equal to every sampled node and full rank, both reduce to
        // A_uS pinv(A_SS) A_Sv.
        let n = 16;
        let vals = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                (((i * 7 + j * 7) % 11) as f64) / 11.0
            }
        });
        let sampled: Vec<usize> = (0..6).collect();
        let pn = PartialNetwork::from_values(vals, &sampled).unwrap();
        let res = ResidualTable::from_predictions(&pn, DMatrix::zeros(n, n));
        let preds = local_predictions(&res, 8, 9, &sampled, &sampled, 6);
        let a_ss = DMatrix::from_fn(6, 6, |r, c| pn.value(r, c));
        let (ev, evec) = ranked_eigen(a_ss.clone());
        let x = DVector::from_fn(6, |c, _| pn.value(8, c));
        let y = DVector::from_fn(6, |c, _| pn.value(c, 9));
        let lam_inv = DMatrix::from_diagonal(&ev.map(|v| 1.0 / v));
        let global = (x.transpose() * &evec * lam_inv * evec.transpose() * y)[0];
        assert!((preds.last().unwrap() - global).abs() < 1e-8);
    }

    #[test]
    fn local_pca_neighbors_stay_in_block() {
        let n = 400;
        let p = crate::netmodel::ProbabilityMatrix::new(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else if i % 2 == j % 2 {
                0.8
            } else {
                0.2
            }
        }))
        .unwrap();
        let mut same = 0usize;
        let mut total = 0usize;
        for seed in 0..5 {
            let pn = egocentric_sample(&sample_network(&p, seed), 200, seed).unwrap();
            let all: Vec<usize> = (0..n).collect();
            let dist = pseudo_distance(&pn, &all, pn.sampled()).unwrap();
            let mut buf = Vec::new();
            for &v in pn.unsampled() {
                for w in nearest(&dist, v, 25, usize::MAX, &mut buf) {
                    total += 1;
                    same += usize::from(w % 2 == v % 2);
                }
            }
        }
        assert!(same as f64 >= 0.95 * total as f64, "{same}/{total}");
    }

    #[test]
    fn shared_pipeline_matches_standalone_calls() {
        let (pn, cov) = mc_world(50, 20, 13);
        let ic = ImputeConfig::default();
        let bc = BaselineConfig::default();
        let nets = impute_methods(&Method::ALL, &pn, &cov, &ic, &bc).unwrap();
        let sp = ImputeConfig { split: true, ..ic.clone() };
        let expect = [
            impute_covariate_only(&pn, &cov, &ic).unwrap(),
            impute_lowrank(&pn, &bc).unwrap().0,
            impute_local_pca(&pn, &cov, false, &ic, &bc).unwrap().0,
            impute_ltwfe(&pn, &ic).unwrap().network,
            impute_local_pca(&pn, &cov, true, &ic, &bc).unwrap().0,
            impute_with_cv(&pn, &cov, &ic).unwrap().network,
            impute_with_cv(&pn, &cov, &sp).unwrap().network,
        ];
        for ((m, a), b) in Method::ALL.iter().zip(&nets).zip(&expect) {
            assert_eq!(a, b, "{m}");
        }
    }

    #[test]
    fn every_method_emits_valid_networks() {
        let (pn, cov) = mc_world(40, 14, 9);
        for m in Method::ALL {
            let out = impute_method(m, &pn, &cov, &ImputeConfig::default(), &BaselineConfig::default()).unwrap();
            let a = out.matrix();
            for i in 0..40 {
                assert_eq!(a[(i, i)], 0.0, "{m}");
                for j in 0..40 {
                    assert!((0.0..=1.0).contains(&a[(i, j)]), "{m}");
                    assert_eq!(a[(i, j)], a[(j, i)], "{m}");
                    if pn.is_observed(i, j) {
                        assert_eq!(a[(i, j)], pn.value(i, j), "{m}");
                    }
                }
            }
        }
    }
}
