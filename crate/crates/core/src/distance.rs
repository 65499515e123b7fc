//! Pseudo-distance between nodes computed from the observed links of a set of
//! anchor (sampled) nodes.
//!
//! For nodes `i`, `i'` and anchors `L`:
//!
//! ```text
//! d(i, i') = max_{k != i, i'} | (1/|L|) * sum_{l in L} A[k, l] * (A[i, l] - A[i', l]) |
//! ```
//!
//! Every entry used touches an anchor, so it is observed under egocentric
//! sampling. The inner sums for all `(k, v)` are obtained from one product
//! `A[:, L] * A[:, L]^T`; the max over `k` is then a column scan.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::netmodel::PartialNetwork;

const ABSENT: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDistanceTable {
    targets: Vec<usize>,
    references: Vec<usize>,
    d: DMatrix<f64>,
    anchor_count: usize,
    target_row: Vec<usize>,
    reference_col: Vec<usize>,
}

impl PseudoDistanceTable {
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn references(&self) -> &[usize] {
        &self.references
    }

    /// `|targets| x |references|` distance matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn anchor_count(&self) -> usize {
        self.anchor_count
    }

    pub fn target_row(&self, node: usize) -> Option<usize> {
        self.target_row.get(node).copied().filter(|&r| r != ABSENT)
    }

    pub fn reference_col(&self, node: usize) -> Option<usize> {
        self.reference_col.get(node).copied().filter(|&c| c != ABSENT)
    }

    /// Distance between target node `t` and reference node `r`.
    pub fn get(&self, t: usize, r: usize) -> Option<f64> {
        Some(self.d[(self.target_row(t)?, self.reference_col(r)?)])
    }

    /// Distances from `t` to every reference, in reference order.
    pub fn row_for(&self, t: usize) -> Option<Vec<f64>> {
        let row = self.target_row(t)?;
        Some(self.d.row(row).iter().copied().collect())
    }
}

/// Full-sample pseudo-distance: anchors are all sampled nodes.
pub fn pseudo_distance(
    pn: &PartialNetwork,
    targets: &[usize],
    references: &[usize],
) -> Result<PseudoDistanceTable> {
    distance_with_anchors(pn, pn.sampled(), targets, references)
}

/// Sample-split pseudo-distance: anchors `s1`, references `s2`.
pub fn pseudo_distance_split(
    pn: &PartialNetwork,
    s1: &[usize],
    s2: &[usize],
    targets: &[usize],
) -> Result<PseudoDistanceTable> {
    let n = pn.n_nodes();
    let mut in_s1 = vec![false; n];
    for &v in s1 {
        if v >= n || !pn.is_sampled(v) {
            return invalid(format!("anchor {v} is not a sampled node"));
        }
        in_s1[v] = true;
    }
    let mut in_s2 = vec![false; n];
    for &v in s2 {
        if v >= n || !pn.is_sampled(v) {
            return invalid(format!("reference {v} is not a sampled node"));
        }
        if in_s1[v] {
            return invalid(format!("node {v} appears in both halves of the split"));
        }
        in_s2[v] = true;
    }
    for &t in targets {
        if t >= n {
            return invalid(format!("target {t} out of range [0, {n})"));
        }
        if in_s1[t] && !in_s2[t] {
            return invalid(format!("target {t} belongs to the anchor half"));
        }
    }
    distance_with_anchors(pn, s1, targets, s2)
}

fn distance_with_anchors(
    pn: &PartialNetwork,
    anchors: &[usize],
    targets: &[usize],
    references: &[usize],
) -> Result<PseudoDistanceTable> {
    let n = pn.n_nodes();
    if anchors.is_empty() {
        return invalid("pseudo-distance needs at least one anchor node");
    }
    if let Some(&bad) = targets.iter().chain(references).find(|&&v| v >= n) {
        return invalid(format!("node index {bad} out of range [0, {n})"));
    }

    // Raw (unnormalized) inner sums; for 0/1 data these are exact integers.
    let cols = DMatrix::from_fn(n, anchors.len(), |k, l| pn.value(k, anchors[l]));
    let inner = &cols * cols.transpose();
    let scale = anchors.len() as f64;

    let mut d = DMatrix::zeros(targets.len(), references.len());
    for (ti, &t) in targets.iter().enumerate() {
        let ct = inner.column(t);
        for (ri, &r) in references.iter().enumerate() {
            if t == r {
                continue;
            }
            let cr = inner.column(r);
            let mut best = 0.0f64;
            for k in 0..n {
                if k == t || k == r {
                    continue;
                }
                let v = (ct[k] - cr[k]).abs();
                if v > best {
                    best = v;
                }
            }
            d[(ti, ri)] = best / scale;
        }
    }

    let mut target_row = vec![ABSENT; n];
    for (i, &t) in targets.iter().enumerate() {
        target_row[t] = i;
    }
    let mut reference_col = vec![ABSENT; n];
    for (i, &r) in references.iter().enumerate() {
        reference_col[r] = i;
    }
    Ok(PseudoDistanceTable {
        targets: targets.to_vec(),
        references: references.to_vec(),
        d,
        anchor_count: anchors.len(),
        target_row,
        reference_col,
    })
}
