//! Network statistics and downstream estimators: row normalization,
//! centralities, centrality OLS and linear-in-means GMM.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::netmodel::{CovariateSet, LatentSet};

fn check_square(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return invalid(format!("{what} has non-finite entries"));
    }
    Ok(())
}

/// Row-stochastic version of a weighted adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedNetwork {
    g: DMatrix<f64>,
    zero_rows: Vec<usize>,
}

impl NormalizedNetwork {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Rows with no links; left as zero rows.
    pub fn zero_rows(&self) -> &[usize] {
        &self.zero_rows
    }

    pub fn n_nodes(&self) -> usize {
        self.g.nrows()
    }
}

pub fn row_normalize(a: &DMatrix<f64>) -> Result<NormalizedNetwork> {
    check_square(a, "adjacency")?;
    let mut g = a.clone();
    let mut zero_rows = Vec::new();
    for i in 0..g.nrows() {
        let s: f64 = g.row(i).sum();
        if s > 0.0 {
            g.row_mut(i).scale_mut(1.0 / s);
        } else {
            g.row_mut(i).fill(0.0);
            zero_rows.push(i);
        }
    }
    Ok(NormalizedNetwork { g, zero_rows })
}

/// Row means of the adjacency, `(1/N) sum_j A_ij`.
pub fn degree_centrality(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_square(a, "adjacency")?;
    let n = a.nrows() as f64;
    Ok(DVector::from_fn(a.nrows(), |i, _| a.row(i).sum() / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenCentrality {
    /// `sqrt(N)` times the leading unit eigenvector, entry sum nonnegative.
    pub values: DVector<f64>,
    /// Set when the input was the zero matrix and `values` is all zeros.
    pub degenerate: bool,
    pub iterations: usize,
}

/// Leading-eigenvector centrality by shifted power iteration.
pub fn eigenvector_centrality(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<EigenCentrality> {
    check_square(a, "adjacency")?;
    if !(tol > 0.0) || max_iter == 0 {
        return invalid("tolerance and iteration cap must be positive");
    }
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            if a[(i, j)] != a[(j, i)] || a[(i, j)] < 0.0 {
                return invalid("adjacency must be symmetric and nonnegative");
            }
        }
        if a[(i, i)] < 0.0 {
            return invalid("adjacency must be symmetric and nonnegative");
        }
    }
    let max_row = (0..n).map(|i| a.row(i).sum()).fold(0.0, f64::max);
    if n == 0 || max_row == 0.0 {
        return Ok(EigenCentrality {
            values: DVector::zeros(n),
            degenerate: true,
            iterations: 0,
        });
    }
    // The shift separates the Perron root from a mirrored negative eigenvalue.
    let shift = 0.5 * max_row;
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut y = DVector::zeros(n);
    for it in 1..=max_iter {
        a.mul_to(&x, &mut y);
        y.axpy(shift, &x, 1.0);
        let norm = y.norm();
        y /= norm;
        let diff = (&y - &x).amax();
        std::mem::swap(&mut x, &mut y);
        if diff < tol {
            if x.sum() < 0.0 {
                x.neg_mut();
            }
            return Ok(EigenCentrality {
                values: x * (n as f64).sqrt(),
                degenerate: false,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence { iterations: max_iter })
}

/// Pooled OLS coefficients with network-clustered sandwich errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredOls {
    pub coef: DVector<f64>,
    /// `None` with fewer than two clusters.
    pub se: Option<DVector<f64>>,
}

pub(crate) fn clustered_ols(x: &[DMatrix<f64>], y: &[DVector<f64>]) -> Result<ClusteredOls> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::DimensionMismatch("need one design and response per cluster".into()));
    }
    let k = x[0].ncols();
    let mut xtx = DMatrix::zeros(k, k);
    let mut xty = DVector::zeros(k);
    for (xm, ym) in x.iter().zip(y) {
        if xm.ncols() != k || xm.nrows() != ym.len() {
            return Err(Error::DimensionMismatch("cluster design and response disagree".into()));
        }
        xtx += xm.transpose() * xm;
        xty += xm.transpose() * ym;
    }
    let inv = xtx
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::SingularDesign { columns: (0..k).collect() })?;
    let coef = &inv * xty;
    let m = x.len();
    let se = (m >= 2).then(|| {
        let mut meat = DMatrix::zeros(k, k);
        for (xm, ym) in x.iter().zip(y) {
            let s = xm.transpose() * (ym - xm * &coef);
            meat += &s * s.transpose();
        }
        let v = &inv * meat * &inv * (m as f64 / (m as f64 - 1.0));
        DVector::from_fn(k, |i, _| v[(i, i)].max(0.0).sqrt())
    });
    Ok(ClusteredOls { coef, se })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralityEstimate {
    pub alpha_c: f64,
    pub alpha_1: f64,
    /// Clustered standard errors of `(alpha_c, alpha_1)`; `None` with one network.
    pub se_cluster: Option<(f64, f64)>,
}

/// Pooled regression of `y` on `(1, phi)`, clustered by network.
pub fn centrality_ols(y: &[DVector<f64>], phi: &[DVector<f64>]) -> Result<CentralityEstimate> {
    if y.len() != phi.len() {
        return Err(Error::DimensionMismatch("outcome and centrality lists differ in length".into()));
    }
    let x: Vec<DMatrix<f64>> = phi
        .iter()
        .map(|p| DMatrix::from_fn(p.len(), 2, |i, c| if c == 0 { 1.0 } else { p[i] }))
        .collect();
    let fit = clustered_ols(&x, y)?;
    Ok(CentralityEstimate {
        alpha_c: fit.coef[0],
        alpha_1: fit.coef[1],
        se_cluster: fit.se.map(|s| (s[0], s[1])),
    })
}

/// Instrument matrix `[1 | W | GW | G(GW)]`.
pub fn build_instruments(g: &NormalizedNetwork, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = g.n_nodes();
    if w.nrows() != n {
        return Err(Error::DimensionMismatch(format!("W has {} rows, network has {n} nodes", w.nrows())));
    }
    let d = w.ncols();
    let gw = g.matrix() * w;
    let ggw = g.matrix() * &gw;
    let mut z = DMatrix::zeros(n, 1 + 3 * d);
    z.column_mut(0).fill(1.0);
    z.columns_mut(1, d).copy_from(w);
    z.columns_mut(1 + d, d).copy_from(&gw);
    z.columns_mut(1 + 2 * d, d).copy_from(&ggw);
    Ok(z)
}

/// Linear-in-means coefficients `(alpha_C, alpha_Ybar, alpha_W, alpha_Wbar)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerParams {
    pub alpha_c: f64,
    pub alpha_ybar: f64,
    pub alpha_w: Vec<f64>,
    pub alpha_wbar: Vec<f64>,
}

impl PeerParams {
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = vec![self.alpha_c, self.alpha_ybar];
        v.extend(&self.alpha_w);
        v.extend(&self.alpha_wbar);
        DVector::from_vec(v)
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if v.len() < 2 || (v.len() - 2) % 2 != 0 {
            return Err(Error::DimensionMismatch(format!("parameter vector of length {}", v.len())));
        }
        let d = (v.len() - 2) / 2;
        Ok(Self {
            alpha_c: v[0],
            alpha_ybar: v[1],
            alpha_w: v.rows(2, d).iter().copied().collect(),
            alpha_wbar: v.rows(2 + d, d).iter().copied().collect(),
        })
    }
}

/// `Y = (I - alpha_Ybar G)^{-1} (alpha_C + W alpha_W + G W alpha_Wbar + u_m + e)`.
pub fn simulate_peer_outcomes(
    g: &NormalizedNetwork,
    w: &DMatrix<f64>,
    alpha: &PeerParams,
    u_m: f64,
    e: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = g.n_nodes();
    let d = w.ncols();
    if w.nrows() != n || e.len() != n || alpha.alpha_w.len() != d || alpha.alpha_wbar.len() != d {
        return Err(Error::DimensionMismatch("peer outcome inputs disagree in size".into()));
    }
    let aw = DVector::from_column_slice(&alpha.alpha_w);
    let awbar = DVector::from_column_slice(&alpha.alpha_wbar);
    let rhs = DVector::from_element(n, alpha.alpha_c + u_m) + w * aw + g.matrix() * (w * awbar) + e;
    let system = DMatrix::identity(n, n) - g.matrix() * alpha.alpha_ybar;
    system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| invalid::<()>("I - alpha_Ybar G is singular").unwrap_err())
}

/// Peer covariates `W_d = xi_d + X_d xi_d / 2` for each shared dimension.
pub fn peer_covariates(cov: &CovariateSet, lat: &LatentSet) -> Result<DMatrix<f64>> {
    let (x, xi) = (cov.matrix(), lat.matrix());
    if x.shape() != xi.shape() {
        return Err(Error::DimensionMismatch(format!(
            "covariates {:?} and latent factors {:?} differ",
            x.shape(),
            xi.shape()
        )));
    }
    Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, d| xi[(i, d)] + 0.5 * x[(i, d)] * xi[(i, d)]))
}

/// Data for one network in the peer-effects model.
#[derive(Debug, Clone)]
pub struct PeerNetworkData {
    pub g: NormalizedNetwork,
    pub w: DMatrix<f64>,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GmmWeight {
    Identity,
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerEffectsEstimate {
    /// `(alpha_C, alpha_Ybar, alpha_W..., alpha_Wbar...)`.
    pub alpha: DVector<f64>,
    /// Network-clustered standard errors; `None` with one network.
    pub se_cluster: Option<DVector<f64>>,
    pub n_networks: usize,
}

impl PeerEffectsEstimate {
    pub fn params(&self) -> PeerParams {
        PeerParams::from_vector(&self.alpha).expect("estimate has a valid layout")
    }

    pub fn alpha_ybar(&self) -> f64 {
        self.alpha[1]
    }
}

/// Regressors `[1 | GY | W | GW]`.
fn peer_regressors(d: &PeerNetworkData) -> DMatrix<f64> {
    let n = d.g.n_nodes();
    let k = d.w.ncols();
    let gy = d.g.matrix() * &d.y;
    let gw = d.g.matrix() * &d.w;
    let mut v = DMatrix::zeros(n, 2 + 2 * k);
    v.column_mut(0).fill(1.0);
    v.column_mut(1).copy_from(&gy);
    v.columns_mut(2, k).copy_from(&d.w);
    v.columns_mut(2 + k, k).copy_from(&gw);
    v
}

/// Linear GMM over networks with per-network moments `Z_m'(Y_m - V_m alpha)/N_m`.
pub fn peer_effects_gmm(data: &[PeerNetworkData], weight: &GmmWeight) -> Result<PeerEffectsEstimate> {
    if data.is_empty() {
        return invalid("no networks supplied");
    }
    let d_w = data[0].w.ncols();
    let p = 2 + 2 * d_w;
    let q = 1 + 3 * d_w;
    let sigma = match weight {
        GmmWeight::Identity => DMatrix::identity(q, q),
        GmmWeight::Matrix(s) => {
            if s.shape() != (q, q) {
                return Err(Error::DimensionMismatch(format!("weight must be {q}x{q}")));
            }
            s.clone()
        }
    };
    // Averaged moment Jacobian and intercept: psi(alpha) = zy - zv alpha.
    let mut zv = DMatrix::zeros(q, p);
    let mut zy = DVector::zeros(q);
    let mut parts = Vec::with_capacity(data.len());
    for d in data {
        let n = d.g.n_nodes();
        if d.w.nrows() != n || d.y.len() != n || d.w.ncols() != d_w {
            return Err(Error::DimensionMismatch("network data disagree in size".into()));
        }
        let z = build_instruments(&d.g, &d.w)?;
        let v = peer_regressors(d);
        let zt = z.transpose() / n as f64;
        zv += &zt * &v;
        zy += &zt * &d.y;
        parts.push((zt, v));
    }
    let m = data.len() as f64;
    zv /= m;
    zy /= m;
    let vs = zv.transpose() * &sigma;
    let h = &vs * &zv;
    let svd = h.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::WeakIdentification(format!(
            "aggregated moment matrix is singular (condition {:.3e})",
            smax / smin
        )));
    }
    let h_inv = h.try_inverse().ok_or_else(|| Error::WeakIdentification("aggregated moment matrix is singular".into()))?;
    let alpha = &h_inv * (&vs * zy);
    let se_cluster = (data.len() >= 2).then(|| {
        let mut meat = DMatrix::zeros(q, q);
        for ((zt, v), d) in parts.iter().zip(data) {
            let psi = zt * (&d.y - v * &alpha) / m;
            meat += &psi * psi.transpose();
        }
        let bread = &h_inv * &vs;
        let cov = &bread * meat * bread.transpose() * (m / (m - 1.0));
        DVector::from_fn(p, |i, _| cov[(i, i)].max(0.0).sqrt())
    });
    Ok(PeerEffectsEstimate {
        alpha,
        se_cluster,
        n_networks: data.len(),
    })
}
