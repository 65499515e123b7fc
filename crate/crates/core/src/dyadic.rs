//! First-stage dyadic regression of observed links on covariate-difference
//! features.
//!
//! The fitted model predicts the part of a link probability explained by the
//! observed covariates. Residuals `A_ij - pi_hat(i, j)` on observed dyads feed the
//! local two-way fixed-effects stage.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::netmodel::{CovariateSet, PartialNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    AbsoluteDifference,
    SquaredDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DyadFeatureSpec {
    pub mode: FeatureMode,
}

impl DyadFeatureSpec {
    pub fn squared() -> Self {
        Self {
            mode: FeatureMode::SquaredDifference,
        }
    }

    pub fn absolute() -> Self {
        Self {
            mode: FeatureMode::AbsoluteDifference,
        }
    }

    #[inline]
    fn fill(&self, x_i: &[f64], x_j: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(x_i).zip(x_j) {
            let diff = a - b;
            *o = match self.mode {
                FeatureMode::AbsoluteDifference => diff.abs(),
                FeatureMode::SquaredDifference => diff * diff,
            };
        }
    }
}

impl Default for DyadFeatureSpec {
    fn default() -> Self {
        Self::squared()
    }
}

pub fn dyad_features(spec: &DyadFeatureSpec, x_i: &[f64], x_j: &[f64]) -> Result<Vec<f64>> {
    if x_i.len() != x_j.len() {
        return Err(Error::DimensionMismatch(format!(
            "covariate vectors of length {} and {}",
            x_i.len(),
            x_j.len()
        )));
    }
    let mut out = vec![0.0; x_i.len()];
    spec.fill(x_i, x_j, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiKind {
    LocalLinear,
    LinearProjection,
}

/// Which first stage to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstStage {
    /// Local-linear for up to three covariates, linear projection beyond.
    Auto,
    LocalLinear,
    LinearProjection,
    /// Skip the first stage; predictions are identically zero.
    None,
}

impl FirstStage {
    pub fn resolve(self, d_x: usize) -> Option<PiKind> {
        if d_x == 0 {
            return None;
        }
        match self {
            FirstStage::Auto if d_x <= 3 => Some(PiKind::LocalLinear),
            FirstStage::Auto => Some(PiKind::LinearProjection),
            FirstStage::LocalLinear => Some(PiKind::LocalLinear),
            FirstStage::LinearProjection => Some(PiKind::LinearProjection),
            FirstStage::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PiModel {
    /// No covariate component.
    Zero,
    /// Intercept followed by one slope per feature.
    Linear { spec: DyadFeatureSpec, coef: Vec<f64> },
    LocalLinear(LocalLinearModel),
}

impl PiModel {
    pub fn kind(&self) -> Option<PiKind> {
        match self {
            PiModel::Zero => None,
            PiModel::Linear { .. } => Some(PiKind::LinearProjection),
            PiModel::LocalLinear(_) => Some(PiKind::LocalLinear),
        }
    }

    fn spec(&self) -> Option<DyadFeatureSpec> {
        match self {
            PiModel::Zero => None,
            PiModel::Linear { spec, .. } => Some(*spec),
            PiModel::LocalLinear(m) => Some(m.spec),
        }
    }

    /// Raw prediction at a feature vector.
    pub fn predict_features(&self, w: &[f64]) -> f64 {
        match self {
            PiModel::Zero => 0.0,
            PiModel::Linear { coef, .. } => linear_predict(coef, w),
            PiModel::LocalLinear(m) => m.predict(w),
        }
    }
}

fn linear_predict(coef: &[f64], w: &[f64]) -> f64 {
    coef[0] + coef[1..].iter().zip(w).map(|(c, x)| c * x).sum::<f64>()
}

/// Local-linear smoother with a product Epanechnikov kernel. Features are
/// stored divided by the bandwidth and bucketed on a uniform grid over the
/// first two dimensions so a query only visits cells that can carry weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalLinearModel {
    spec: DyadFeatureSpec,
    dim: usize,
    bandwidth: Vec<f64>,
    /// Scaled features in grid order, row-major `m x dim`.
    scaled: Vec<f64>,
    responses: Vec<f64>,
    grid: Grid,
    /// Global OLS fit used when a query window is empty.
    global: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Grid {
    axes: usize,
    origin: [f64; 2],
    inv_width: [f64; 2],
    cells: [usize; 2],
    starts: Vec<usize>,
}

const CELL_WIDTH: f64 = 1.0 / 6.0;
const MAX_CELLS_PER_AXIS: usize = 2048;

impl Grid {
    fn build(scaled: &[f64], dim: usize) -> (Grid, Vec<usize>) {
        let m = scaled.len() / dim.max(1);
        let axes = dim.min(2);
        let mut origin = [0.0; 2];
        let mut inv_width = [1.0; 2];
        let mut cells = [1usize; 2];
        for a in 0..axes {
            let (lo, hi) = (0..m).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| {
                let v = scaled[k * dim + a];
                (lo.min(v), hi.max(v))
            });
            let range = (hi - lo).max(0.0);
            let w = CELL_WIDTH.max(range / MAX_CELLS_PER_AXIS as f64);
            origin[a] = lo;
            inv_width[a] = 1.0 / w;
            cells[a] = ((range / w).floor() as usize + 1).min(MAX_CELLS_PER_AXIS + 1);
        }
        let mut grid = Grid {
            axes,
            origin,
            inv_width,
            cells,
            starts: Vec::new(),
        };
        let ids: Vec<usize> = (0..m).map(|k| grid.cell_of(&scaled[k * dim..k * dim + dim])).collect();
        let total = grid.cells[0] * grid.cells[1];
        let mut counts = vec![0usize; total + 1];
        for &c in &ids {
            counts[c + 1] += 1;
        }
        for c in 0..total {
            counts[c + 1] += counts[c];
        }
        grid.starts = counts.clone();
        let mut order = vec![0usize; m];
        let mut next = counts;
        for (k, &c) in ids.iter().enumerate() {
            order[next[c]] = k;
            next[c] += 1;
        }
        (grid, order)
    }

    #[inline]
    fn axis_cell(&self, a: usize, v: f64) -> usize {
        let c = ((v - self.origin[a]) * self.inv_width[a]).floor();
        if c <= 0.0 {
            0
        } else {
            (c as usize).min(self.cells[a] - 1)
        }
    }

    fn cell_of(&self, s: &[f64]) -> usize {
        let mut id = 0;
        if self.axes >= 1 {
            id = self.axis_cell(0, s[0]);
        }
        if self.axes == 2 {
            id += self.cells[0] * self.axis_cell(1, s[1]);
        }
        id
    }

    /// Index ranges of grid-ordered points whose cells meet the unit box
    /// around `q`, one range per row of cells.
    fn ranges(&self, q: &[f64]) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (x_lo, x_hi) = if self.axes >= 1 {
            (self.axis_cell(0, q[0] - 1.0), self.axis_cell(0, q[0] + 1.0))
        } else {
            (0, 0)
        };
        let (y_lo, y_hi) = if self.axes == 2 {
            (self.axis_cell(1, q[1] - 1.0), self.axis_cell(1, q[1] + 1.0))
        } else {
            (0, 0)
        };
        (y_lo..=y_hi).map(move |cy| {
            let base = cy * self.cells[0];
            (self.starts[base + x_lo], self.starts[base + x_hi + 1])
        })
    }
}

#[cfg(test)]
#[inline]
fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

impl LocalLinearModel {
    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn n_train(&self) -> usize {
        self.responses.len()
    }

    /// Weighted moments of `z = (1, s - q)` for `D <= 3`, with the constant
    /// kernel factor dropped. `None` when no point carries weight.
    fn moments_fixed<const D: usize>(&self, q: &[f64]) -> Option<DMatrix<f64>> {
        let mut xtx = [[0.0f64; 4]; 4];
        let mut xty = [0.0f64; 4];
        let mut qa = [0.0f64; 3];
        qa[..D].copy_from_slice(&q[..D]);
        for (start, end) in self.grid.ranges(q) {
            let feats = &self.scaled[start * D..end * D];
            let ys = &self.responses[start..end];
            for (f, &y) in feats.chunks_exact(D).zip(ys) {
                // Branch-free: points outside the box get weight zero.
                let mut z = [1.0f64, 0.0, 0.0, 0.0];
                let mut wt = 1.0;
                for a in 0..D {
                    let u = f[a] - qa[a];
                    wt *= (1.0 - u * u).max(0.0);
                    z[a + 1] = u;
                }
                for r in 0..D + 1 {
                    let wr = wt * z[r];
                    xty[r] += wr * y;
                    for c in r..D + 1 {
                        xtx[r][c] += wr * z[c];
                    }
                }
            }
        }
        let any = xtx[0][0] > 0.0;
        any.then(|| {
            DMatrix::from_fn(D + 1, D + 2, |r, c| {
                if c == D + 1 {
                    xty[r]
                } else if r <= c {
                    xtx[r][c]
                } else {
                    xtx[c][r]
                }
            })
        })
    }

    fn moments_dyn(&self, q: &[f64]) -> Option<DMatrix<f64>> {
        let d = self.dim;
        let p = d + 1;
        let mut acc = DMatrix::<f64>::zeros(p, p + 1);
        let mut z = vec![0.0; p];
        z[0] = 1.0;
        let mut any = false;
        for (start, end) in self.grid.ranges(q) {
            'point: for k in start..end {
                let f = &self.scaled[k * d..k * d + d];
                let mut wt = 1.0;
                for a in 0..d {
                    let u = f[a] - q[a];
                    if u.abs() > 1.0 {
                        continue 'point;
                    }
                    wt *= 1.0 - u * u;
                    z[a + 1] = u;
                }
                if wt == 0.0 {
                    continue;
                }
                any = true;
                let y = self.responses[k];
                for r in 0..p {
                    let wr = wt * z[r];
                    acc[(r, p)] += wr * y;
                    for c in 0..p {
                        acc[(r, c)] += wr * z[c];
                    }
                }
            }
        }
        any.then_some(acc)
    }

    fn predict(&self, w0: &[f64]) -> f64 {
        let d = self.dim;
        let q: Vec<f64> = w0.iter().zip(&self.bandwidth).map(|(w, b)| w / b).collect();
        let m = match d {
            1 => self.moments_fixed::<1>(&q),
            2 => self.moments_fixed::<2>(&q),
            3 => self.moments_fixed::<3>(&q),
            _ => self.moments_dyn(&q),
        };
        let Some(m) = m else {
            return linear_predict(&self.global, w0);
        };
        let a = m.columns(0, d + 1).into_owned();
        let b = m.column(d + 1).into_owned();
        let local_constant = b[0] / a[(0, 0)];
        match solve_spd(a, b) {
            Some(beta) => beta[0],
            None => local_constant,
        }
    }
}

/// Cholesky solve with a relative pivot guard; `None` if the system is
/// numerically singular.
fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let p = a.nrows();
    // Scale to unit diagonal so the pivot test is scale free.
    let scale: Vec<f64> = (0..p).map(|i| a[(i, i)].sqrt()).collect();
    if scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return None;
    }
    let scaled = DMatrix::from_fn(p, p, |r, c| a[(r, c)] / (scale[r] * scale[c]));
    let chol = scaled.cholesky()?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..p {
        let v = l[(i, i)] * l[(i, i)];
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(lo > 1e-10 * hi) {
        return None;
    }
    let rhs = DVector::from_fn(p, |i, _| b[i] / scale[i]);
    let y = chol.solve(&rhs);
    Some(DVector::from_fn(p, |i, _| y[i] / scale[i]))
}

/// Ordinary least squares with an explicit collinearity report.
pub(crate) fn ols(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, p) = design.shape();
    if m < p {
        return invalid(format!("{m} observations for {p} coefficients"));
    }
    // Modified Gram-Schmidt to locate columns in the span of earlier ones.
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(p);
    let mut bad = Vec::new();
    for c in 0..p {
        let col = design.column(c).into_owned();
        let norm0 = col.norm();
        let mut v = col;
        for u in &q {
            let proj = u.dot(&v);
            v.axpy(-proj, u, 1.0);
        }
        let nv = v.norm();
        if norm0 == 0.0 || nv <= 1e-10 * norm0 {
            bad.push(c);
        } else {
            q.push(v / nv);
        }
    }
    if !bad.is_empty() {
        return Err(Error::SingularDesign { columns: bad });
    }
    let qr = design.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r()
        .solve_upper_triangular(&qty)
        .ok_or(Error::SingularDesign { columns: vec![] })
}

fn training_data(pn: &PartialNetwork, cov: &CovariateSet, spec: &DyadFeatureSpec) -> (Vec<f64>, Vec<f64>) {
    let d = cov.dim();
    let rows: Vec<Vec<f64>> = (0..cov.n_nodes()).map(|i| cov.row(i)).collect();
    let pairs = pn.observed_pairs();
    let mut feats = vec![0.0; pairs.len() * d];
    let mut ys = Vec::with_capacity(pairs.len());
    for (k, &(i, j)) in pairs.iter().enumerate() {
        spec.fill(&rows[i], &rows[j], &mut feats[k * d..k * d + d]);
        ys.push(pn.value(i, j));
    }
    (feats, ys)
}

fn linear_fit(feats: &[f64], ys: &[f64], d: usize) -> Result<Vec<f64>> {
    let m = ys.len();
    let design = DMatrix::from_fn(m, d + 1, |r, c| if c == 0 { 1.0 } else { feats[r * d + c - 1] });
    let coef = ols(&design, &DVector::from_column_slice(ys))?;
    Ok(coef.iter().copied().collect())
}

/// Rule-of-thumb first-stage bandwidth per feature: `sd * m^(-1/(4+d))`.
pub fn rule_of_thumb_bandwidth(feats: &[f64], d: usize) -> Vec<f64> {
    let m = feats.len() / d.max(1);
    let factor = (m as f64).powf(-1.0 / (4.0 + d as f64));
    (0..d)
        .map(|a| {
            let mean = (0..m).map(|k| feats[k * d + a]).sum::<f64>() / m as f64;
            let var = (0..m).map(|k| (feats[k * d + a] - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0).max(1.0);
            var.sqrt() * factor
        })
        .collect()
}

/// Fit the first stage on every observed dyad `(i < j, i or j sampled)`.
///
/// `bandwidth`, when given, is applied to every feature in local-linear mode;
/// otherwise the rule of thumb is used.
pub fn fit_pi(
    pn: &PartialNetwork,
    cov: &CovariateSet,
    spec: DyadFeatureSpec,
    kind: PiKind,
    bandwidth: Option<f64>,
) -> Result<PiModel> {
    if cov.n_nodes() != pn.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate rows for {} nodes",
            cov.n_nodes(),
            pn.n_nodes()
        )));
    }
    let d = cov.dim();
    if d == 0 {
        return Ok(PiModel::Zero);
    }
    let (feats, ys) = training_data(pn, cov, &spec);
    if ys.len() < d + 2 {
        return invalid(format!("{} observed dyads; need at least {}", ys.len(), d + 2));
    }
    match kind {
        PiKind::LinearProjection => Ok(PiModel::Linear {
            spec,
            coef: linear_fit(&feats, &ys, d)?,
        }),
        PiKind::LocalLinear => {
            let bw = match bandwidth {
                Some(h) if h > 0.0 && h.is_finite() => vec![h; d],
                Some(h) => return invalid(format!("first-stage bandwidth {h} must be positive")),
                None => rule_of_thumb_bandwidth(&feats, d),
            };
            if bw.iter().any(|&b| !(b > 0.0)) {
                return invalid("first-stage bandwidth rule gave zero (constant feature?); pass an explicit bandwidth");
            }
            let global = match linear_fit(&feats, &ys, d) {
                Ok(c) => c,
                Err(Error::SingularDesign { .. }) => {
                    let mut c = vec![0.0; d + 1];
                    c[0] = ys.iter().sum::<f64>() / ys.len() as f64;
                    c
                }
                Err(e) => return Err(e),
            };
            let scaled: Vec<f64> = feats.iter().enumerate().map(|(k, v)| v / bw[k % d]).collect();
            let (grid, order) = Grid::build(&scaled, d);
            let mut s2 = Vec::with_capacity(scaled.len());
            let mut y2 = Vec::with_capacity(ys.len());
            for &k in &order {
                s2.extend_from_slice(&scaled[k * d..k * d + d]);
                y2.push(ys[k]);
            }
            Ok(PiModel::LocalLinear(LocalLinearModel {
                spec,
                dim: d,
                bandwidth: bw,
                scaled: s2,
                responses: y2,
                grid,
                global,
            }))
        }
    }
}

pub fn predict_pi(model: &PiModel, cov: &CovariateSet, i: usize, j: usize) -> f64 {
    match model.spec() {
        None => 0.0,
        Some(spec) => {
            let mut w = vec![0.0; cov.dim()];
            spec.fill(&cov.row(i), &cov.row(j), &mut w);
            model.predict_features(&w)
        }
    }
}

/// Predictions for every pair, diagonal included (feature vector zero).
pub fn predict_all(model: &PiModel, cov: &CovariateSet) -> DMatrix<f64> {
    let n = cov.n_nodes();
    let Some(spec) = model.spec() else {
        return DMatrix::zeros(n, n);
    };
    let d = cov.dim();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| cov.row(i)).collect();
    let mut out = DMatrix::zeros(n, n);
    let diag = model.predict_features(&vec![0.0; d]);
    let mut w = vec![0.0; d];
    for i in 0..n {
        out[(i, i)] = diag;
        for j in (i + 1)..n {
            spec.fill(&rows[i], &rows[j], &mut w);
            let v = model.predict_features(&w);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Residuals of the observed network against the first stage.
///
/// Off-diagonal observed entries hold `A_ij - pi_ij`; the diagonal holds
/// `0 - pi_ii` (the two-way fixed-effects double sum runs over diagonal
/// reference pairs); unobserved entries are NaN. The full prediction matrix
/// is kept alongside for imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTable {
    r: DMatrix<f64>,
    pi: DMatrix<f64>,
}

impl ResidualTable {
    pub fn from_predictions(pn: &PartialNetwork, pi: DMatrix<f64>) -> Self {
        let n = pn.n_nodes();
        let r = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -pi[(i, i)]
            } else if pn.is_observed(i, j) {
                pn.value(i, j) - pi[(i, j)]
            } else {
                f64::NAN
            }
        });
        Self { r, pi }
    }

    /// Residual of entry (i, j); NaN when unobserved.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.r[(i, j)]
    }

    #[inline]
    pub fn pi(&self, i: usize, j: usize) -> f64 {
        self.pi[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn pi_matrix(&self) -> &DMatrix<f64> {
        &self.pi
    }

    pub fn n_nodes(&self) -> usize {
        self.r.nrows()
    }
}

pub fn residual_matrix(pn: &PartialNetwork, model: &PiModel, cov: &CovariateSet) -> ResidualTable {
    ResidualTable::from_predictions(pn, predict_all(model, cov))
}
