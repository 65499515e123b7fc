//! Local two-way fixed-effects imputation.
//!
//! For a missing dyad `(i, j)` with reference set `R` and kernel weights
//! `w_i[k] = K(d(i, k) / h)`, `w_j[k] = K(d(j, k) / h)`, the weighted TWFE fit
//! evaluated at the missing cell has the closed form
//!
//! ```text
//! sum_k w_j[k] R(i,k) / sum w_j  +  sum_k w_i[k] R(k,j) / sum w_i
//!   - sum_{k,l} w_i[k] w_j[l] R(k,l) / (sum w_i * sum w_j)
//! ```
//!
//! where `R` holds first-stage residuals (diagonal `-pi_kk`). The imputed link
//! adds the first-stage prediction back and truncates to `[0, 1]`.

use nalgebra::DMatrix;
use rand::seq::index;

use crate::distance::{pseudo_distance, pseudo_distance_split, PseudoDistanceTable};
use crate::dyadic::{fit_pi, predict_all, DyadFeatureSpec, FirstStage, PiModel, ResidualTable};
use crate::error::{invalid, Error, Result};
use crate::netmodel::{CovariateSet, PartialNetwork};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelFamily {
    #[default]
    Epanechnikov,
    Triangular,
    Uniform,
}

impl KernelFamily {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        let a = u.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self {
            KernelFamily::Epanechnikov => 0.75 * (1.0 - u * u),
            KernelFamily::Triangular => 1.0 - a,
            KernelFamily::Uniform => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    h: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return invalid(format!("bandwidth must be positive and finite, got {h}"));
        }
        Ok(Self { family, h })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    /// Weight of a reference at pseudo-distance `d`. No `1/h` factor.
    #[inline]
    pub fn weight(&self, d: f64) -> f64 {
        self.family.eval(d / self.h)
    }
}

pub fn kernel_eval(spec: &KernelSpec, u: f64) -> f64 {
    spec.family.eval(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryFlag {
    Observed,
    Imputed,
}

/// Completed network with per-entry provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedNetwork {
    a_hat: DMatrix<f64>,
    observed: Vec<bool>,
    fallback_count: usize,
}

impl ImputedNetwork {
    /// Merge imputed values for the missing block into the observed network.
    /// `fill(i, j)` is queried for missing pairs with `i < j` and the result is
    /// truncated to `[0, 1]`.
    pub fn merge(pn: &PartialNetwork, mut fill: impl FnMut(usize, usize) -> f64, fallback_count: usize) -> Self {
        let n = pn.n_nodes();
        let mut a_hat = pn.values().clone();
        let mut observed = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                observed[i * n + j] = i != j && pn.is_observed(i, j);
            }
        }
        for (i, j) in pn.missing_pairs() {
            let v = fill(i, j).clamp(0.0, 1.0);
            a_hat[(i, j)] = v;
            a_hat[(j, i)] = v;
        }
        for i in 0..n {
            a_hat[(i, i)] = 0.0;
        }
        Self {
            a_hat,
            observed,
            fallback_count,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a_hat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.a_hat
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a_hat[(i, j)]
    }

    /// Provenance of entry (i, j); the diagonal counts as observed.
    pub fn flag(&self, i: usize, j: usize) -> EntryFlag {
        if i == j || self.observed[i * self.n_nodes() + j] {
            EntryFlag::Observed
        } else {
            EntryFlag::Imputed
        }
    }

    /// Number of missing dyads that fell back to the first-stage value because
    /// a kernel window was empty.
    pub fn fallback_count(&self) -> usize {
        self.fallback_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HGrid {
    /// Geometric grid from the 10% quantile of the positive pseudo-distances
    /// to twice their maximum.
    Auto,
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputeConfig {
    pub kernel: KernelFamily,
    pub h_grid: HGrid,
    pub cv_pair_cap: usize,
    pub undersmooth_multiplier: f64,
    pub split: bool,
    pub symmetrize: bool,
    pub first_stage: FirstStage,
    pub features: DyadFeatureSpec,
    /// Scalar first-stage bandwidth for the local-linear mode; rule of thumb if absent.
    pub first_stage_bandwidth: Option<f64>,
    pub seed: u64,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        Self {
            kernel: KernelFamily::Epanechnikov,
            h_grid: HGrid::Auto,
            cv_pair_cap: 20_000,
            undersmooth_multiplier: 1.0,
            split: false,
            symmetrize: true,
            first_stage: FirstStage::Auto,
            features: DyadFeatureSpec::squared(),
            first_stage_bandwidth: None,
            seed: 0,
        }
    }
}

impl ImputeConfig {
    pub fn validate(&self) -> Result<()> {
        if let HGrid::Values(v) = &self.h_grid {
            if v.is_empty() {
                return invalid("bandwidth grid is empty");
            }
            if let Some(h) = v.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
                return invalid(format!("bandwidth grid entry {h} must be positive"));
            }
        }
        if self.cv_pair_cap == 0 {
            return invalid("cv_pair_cap must be positive");
        }
        let m = self.undersmooth_multiplier;
        if !(m > 0.0 && m <= 1.0) {
            return invalid(format!("undersmooth multiplier {m} outside (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputeOutcome {
    pub network: ImputedNetwork,
    /// Bandwidth chosen by cross-validation.
    pub h_selected: f64,
    /// Bandwidth actually used (`h_selected * undersmooth_multiplier`).
    pub h_used: f64,
    /// Cross-validation score per grid point; `None` when the point was unusable.
    pub cv_scores: Vec<(f64, Option<f64>)>,
    pub pi_model: PiModel,
    /// `(S1, S2)` when sample splitting was used.
    pub split: Option<(Vec<usize>, Vec<usize>)>,
}

/// Closed-form TWFE prediction of the residual at `(i, j)` from references
/// `refs` with weights `w_i`, `w_j` over `refs`.
pub fn twfe_impute_pair(
    res: &ResidualTable,
    i: usize,
    j: usize,
    refs: &[usize],
    w_i: &[f64],
    w_j: &[f64],
) -> Result<f64> {
    if w_i.len() != refs.len() || w_j.len() != refs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} references but weight vectors of length {} and {}",
            refs.len(),
            w_i.len(),
            w_j.len()
        )));
    }
    let sw_i: f64 = w_i.iter().sum();
    let sw_j: f64 = w_j.iter().sum();
    if !(sw_i > 0.0) {
        return Err(Error::NoNeighbors { node: i });
    }
    if !(sw_j > 0.0) {
        return Err(Error::NoNeighbors { node: j });
    }
    let mut row = 0.0;
    let mut col = 0.0;
    let mut grand = 0.0;
    for (a, &k) in refs.iter().enumerate() {
        row += w_j[a] * res.get(i, k);
        col += w_i[a] * res.get(k, j);
        if w_i[a] != 0.0 {
            let mut inner = 0.0;
            for (b, &l) in refs.iter().enumerate() {
                if w_j[b] != 0.0 {
                    inner += w_j[b] * res.get(k, l);
                }
            }
            grand += w_i[a] * inner;
        }
    }
    Ok(row / sw_j + col / sw_i - grand / (sw_i * sw_j))
}

fn weight_matrix(dist: &PseudoDistanceTable, nodes: &[usize], kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let m = dist.references().len();
    let rows: Vec<usize> = nodes
        .iter()
        .map(|&v| {
            dist.target_row(v)
                .ok_or_else(|| Error::Validation(format!("no pseudo-distances for node {v}")))
        })
        .collect::<Result<_>>()?;
    let d = dist.matrix();
    Ok(DMatrix::from_fn(nodes.len(), m, |a, k| kernel.weight(d[(rows[a], k)])))
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

/// Impute every missing dyad with the local TWFE estimator at a fixed
/// bandwidth. References are `dist.references()`; every unsampled node must be
/// a target of `dist`.
pub fn impute_missing(
    pn: &PartialNetwork,
    res: &ResidualTable,
    dist: &PseudoDistanceTable,
    kernel: &KernelSpec,
    symmetrize: bool,
) -> Result<ImputedNetwork> {
    if res.n_nodes() != pn.n_nodes() {
        return Err(Error::DimensionMismatch("residual table size differs from network".into()));
    }
    let refs = dist.references();
    let u = pn.unsampled();
    if u.len() < 2 {
        return Ok(ImputedNetwork::merge(pn, |_, _| unreachable!(), 0));
    }
    let w = weight_matrix(dist, u, kernel)?;
    let sw: Vec<f64> = w.row_iter().map(|r| r.sum()).collect();
    let r_ur = submatrix(res.matrix(), u, refs);
    let r_bb = submatrix(res.matrix(), refs, refs);
    let t1 = &r_ur * w.transpose();
    let g = &w * (&r_bb * w.transpose());
    let mut pos = vec![usize::MAX; pn.n_nodes()];
    for (a, &v) in u.iter().enumerate() {
        pos[v] = a;
    }
    let raw = |a: usize, b: usize| t1[(a, b)] / sw[b] + t1[(b, a)] / sw[a] - g[(a, b)] / (sw[a] * sw[b]);
    let mut fallbacks = 0;
    let out = ImputedNetwork::merge(
        pn,
        |i, j| {
            let (a, b) = (pos[i], pos[j]);
            if sw[a] > 0.0 && sw[b] > 0.0 {
                let v = if symmetrize {
                    0.5 * (raw(a, b) + raw(b, a))
                } else {
                    raw(a, b)
                };
                v + res.pi(i, j)
            } else {
                fallbacks += 1;
                res.pi(i, j)
            }
        },
        0,
    );
    Ok(ImputedNetwork {
        fallback_count: fallbacks,
        ..out
    })
}

/// Auto bandwidth grid: 8 geometric points from the 10% quantile of the
/// positive pseudo-distances up to twice the largest one, where the kernel
/// weights are nearly flat.
pub fn auto_h_grid(dist: &PseudoDistanceTable) -> Result<Vec<f64>> {
    let mut pos: Vec<f64> = dist.matrix().iter().copied().filter(|&d| d > 0.0).collect();
    if pos.is_empty() {
        return invalid("all pseudo-distances are zero; supply an explicit bandwidth grid");
    }
    pos.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let x = p * (pos.len() - 1) as f64;
        let lo = x.floor() as usize;
        let hi = x.ceil() as usize;
        pos[lo] + (x - lo as f64) * (pos[hi] - pos[lo])
    };
    let (lo, hi) = (q(0.1), 2.0 * pos[pos.len() - 1]);
    if hi <= lo {
        return Ok(vec![lo]);
    }
    let steps = 8;
    Ok((0..steps)
        .map(|s| lo * (hi / lo).powf(s as f64 / (steps - 1) as f64))
        .collect())
}

/// Leave-one-out cross-validation scores over a bandwidth grid.
///
/// Held-out pairs are `(i, j)` with `i` a reference node and `j` unsampled;
/// `i` is removed from the reference set when predicting `A_ij`. When the
/// number of pairs exceeds `cv_pair_cap` a seeded uniform subsample is scored.
/// Pairs with an empty kernel window are scored at the first-stage value; a
/// grid point where no pair is scorable gets `None`.
pub fn cv_scores(
    pn: &PartialNetwork,
    res: &ResidualTable,
    dist: &PseudoDistanceTable,
    family: KernelFamily,
    h_grid: &[f64],
    cv_pair_cap: usize,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    let refs = dist.references();
    let u = pn.unsampled();
    let m = refs.len();
    if m < 2 {
        return invalid("cross-validation needs at least two reference nodes");
    }
    if u.is_empty() {
        return invalid("cross-validation needs at least one unsampled node");
    }
    let total = m * u.len();
    let pairs: Vec<(usize, usize)> = if total > cv_pair_cap {
        let mut rng = stream(seed, 0, Purpose::CvPairs);
        let mut picks = index::sample(&mut rng, total, cv_pair_cap).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|p| (p / u.len(), p % u.len())).collect()
    } else {
        (0..total).map(|p| (p / u.len(), p % u.len())).collect()
    };

    let r_bb = submatrix(res.matrix(), refs, refs);
    let r_bu = submatrix(res.matrix(), refs, u);
    let mut out = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let kernel = KernelSpec::new(family, h)?;
        let w_s = weight_matrix(dist, refs, &kernel)?;
        let w_u = weight_matrix(dist, u, &kernel)?;
        let sw_s: Vec<f64> = w_s.row_iter().map(|r| r.sum()).collect();
        let sw_u: Vec<f64> = w_u.row_iter().map(|r| r.sum()).collect();
        // p1[k, b] = sum_l R(k, l) w_u[b, l]
        let p1 = &r_bb * w_u.transpose();
        // q[a] = sum_k w_s[a, k] R(k, a)
        let q: Vec<f64> = (0..m)
            .map(|a| (0..m).map(|k| w_s[(a, k)] * r_bb[(k, a)]).sum())
            .collect();
        let mut sse = 0.0;
        let mut scorable = 0usize;
        for &(a, b) in &pairs {
            let (i, j) = (refs[a], u[b]);
            let wi_self = w_s[(a, a)];
            let wj_self = w_u[(b, a)];
            let si = sw_s[a] - wi_self;
            let sj = sw_u[b] - wj_self;
            let pred = if si > 0.0 && sj > 0.0 {
                scorable += 1;
                let r_ii = r_bb[(a, a)];
                let t1 = p1[(a, b)] - wj_self * r_ii;
                let mut col = 0.0;
                let mut dbl = 0.0;
                for k in 0..m {
                    let wk = w_s[(a, k)];
                    if wk != 0.0 {
                        col += wk * r_bu[(k, b)];
                        dbl += wk * p1[(k, b)];
                    }
                }
                let t2 = col - wi_self * r_bu[(a, b)];
                let t3 = dbl - wi_self * p1[(a, b)] - wj_self * q[a] + wi_self * wj_self * r_ii;
                t1 / sj + t2 / si - t3 / (si * sj) + res.pi(i, j)
            } else {
                res.pi(i, j).clamp(0.0, 1.0)
            };
            let e = pn.value(i, j) - pred;
            sse += e * e;
        }
        out.push((scorable > 0).then_some(sse));
    }
    Ok(out)
}

fn select_h(grid: &[f64], scores: &[Option<f64>]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&h, s) in grid.iter().zip(scores) {
        if let Some(s) = *s {
            best = match best {
                Some((bh, bs)) if s > bs || (s == bs && h >= bh) => Some((bh, bs)),
                _ => Some((h, s)),
            };
        }
    }
    best.map(|(h, _)| h)
        .ok_or_else(|| Error::Validation("no bandwidth in the grid has a nonempty kernel window".into()))
}

/// Bandwidth minimizing the leave-one-out score; ties go to the smaller `h`.
pub fn cross_validate_h(
    pn: &PartialNetwork,
    res: &ResidualTable,
    dist: &PseudoDistanceTable,
    family: KernelFamily,
    h_grid: &[f64],
    cv_pair_cap: usize,
    seed: u64,
) -> Result<f64> {
    if h_grid.is_empty() {
        return invalid("bandwidth grid is empty");
    }
    let scores = cv_scores(pn, res, dist, family, h_grid, cv_pair_cap, seed)?;
    select_h(h_grid, &scores)
}

/// First stage for a configuration: model plus residual table.
pub fn first_stage(pn: &PartialNetwork, cov: &CovariateSet, cfg: &ImputeConfig) -> Result<(PiModel, ResidualTable)> {
    if cov.n_nodes() != pn.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate rows for {} nodes",
            cov.n_nodes(),
            pn.n_nodes()
        )));
    }
    let model = match cfg.first_stage.resolve(cov.dim()) {
        None => PiModel::Zero,
        Some(kind) => fit_pi(pn, cov, cfg.features, kind, cfg.first_stage_bandwidth)?,
    };
    let pi = predict_all(&model, cov);
    Ok((model, ResidualTable::from_predictions(pn, pi)))
}

/// Seeded split of the sampled nodes into `(S1, S2)`; S1 gets the extra node
/// when the count is odd. Both halves are sorted.
pub fn split_sample(pn: &PartialNetwork, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let s = pn.sampled();
    if s.len() < 4 {
        return invalid(format!("sample splitting needs at least 4 sampled nodes, got {}", s.len()));
    }
    let mut rng = stream(seed, 0, Purpose::Split);
    let n1 = s.len().div_ceil(2);
    let picks = index::sample(&mut rng, s.len(), n1);
    let mut in_s1 = vec![false; s.len()];
    for p in picks.iter() {
        in_s1[p] = true;
    }
    let (mut s1, mut s2) = (Vec::with_capacity(n1), Vec::with_capacity(s.len() - n1));
    for (k, &v) in s.iter().enumerate() {
        if in_s1[k] {
            s1.push(v);
        } else {
            s2.push(v);
        }
    }
    Ok((s1, s2))
}

pub(crate) fn run(
    pn: &PartialNetwork,
    cfg: &ImputeConfig,
    model: PiModel,
    res: &ResidualTable,
    dist: &PseudoDistanceTable,
    split: Option<(Vec<usize>, Vec<usize>)>,
) -> Result<ImputeOutcome> {
    let grid = match &cfg.h_grid {
        HGrid::Auto => auto_h_grid(dist)?,
        HGrid::Values(v) => v.clone(),
    };
    let scores = cv_scores(pn, res, dist, cfg.kernel, &grid, cfg.cv_pair_cap, cfg.seed)?;
    let h_selected = select_h(&grid, &scores)?;
    let h_used = h_selected * cfg.undersmooth_multiplier;
    let kernel = KernelSpec::new(cfg.kernel, h_used)?;
    let network = impute_missing(pn, res, dist, &kernel, cfg.symmetrize)?;
    Ok(ImputeOutcome {
        network,
        h_selected,
        h_used,
        cv_scores: grid.into_iter().zip(scores).collect(),
        pi_model: model,
        split,
    })
}

/// Full pipeline: first stage, pseudo-distances against the sampled nodes,
/// bandwidth cross-validation, imputation. Dispatches to [`impute_split`]
/// when `cfg.split` is set.
pub fn impute_with_cv(pn: &PartialNetwork, cov: &CovariateSet, cfg: &ImputeConfig) -> Result<ImputeOutcome> {
    cfg.validate()?;
    if cfg.split {
        return impute_split(pn, cov, cfg);
    }
    let (model, res) = first_stage(pn, cov, cfg)?;
    let all: Vec<usize> = (0..pn.n_nodes()).collect();
    let dist = pseudo_distance(pn, &all, pn.sampled())?;
    run(pn, cfg, model, &res, &dist, None)
}

/// Sample-splitting pipeline: distances from S1 anchors, references and
/// cross-validation pairs from S2.
pub fn impute_split(pn: &PartialNetwork, cov: &CovariateSet, cfg: &ImputeConfig) -> Result<ImputeOutcome> {
    cfg.validate()?;
    let (model, res) = first_stage(pn, cov, cfg)?;
    split_with(pn, cfg, model, &res)
}

pub(crate) fn split_with(pn: &PartialNetwork, cfg: &ImputeConfig, model: PiModel, res: &ResidualTable) -> Result<ImputeOutcome> {
    let (s1, s2) = split_sample(pn, cfg.seed)?;
    let mut targets: Vec<usize> = s2.iter().chain(pn.unsampled()).copied().collect();
    targets.sort_unstable();
    let dist = pseudo_distance_split(pn, &s1, &s2, &targets)?;
    run(pn, cfg, model, res, &dist, Some((s1, s2)))
}
