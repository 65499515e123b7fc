//! On-disk data bundles: one directory per network.
//!
//! ```text
//! meta.txt             n_nodes=<N>
//! edges.csv            i,j          observed links (at least one sampled endpoint)
//! sampled.csv          node         surveyed nodes
//! covariates.csv       node,x1,...  optional; absent or header-only means no covariates
//! outcomes.csv         node,y       optional
//! peer_covariates.csv  node,w1,...  optional
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::netmodel::{CovariateSet, Network, PartialNetwork};

pub const META: &str = "meta.txt";
pub const EDGES: &str = "edges.csv";
pub const SAMPLED: &str = "sampled.csv";
pub const COVARIATES: &str = "covariates.csv";
pub const OUTCOMES: &str = "outcomes.csv";
pub const PEER_COVARIATES: &str = "peer_covariates.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub n_nodes: usize,
    /// Observable links, each with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub sampled: Vec<usize>,
    pub covariates: CovariateSet,
    pub outcomes: Option<DVector<f64>>,
    pub peer_covariates: Option<DMatrix<f64>>,
    /// Input edges dropped because neither endpoint was sampled.
    pub rejected_edges: usize,
}

impl DataBundle {
    pub fn partial_network(&self) -> Result<PartialNetwork> {
        let net = Network::from_edges(self.n_nodes, &self.edges)?;
        PartialNetwork::new(&net, &self.sampled)
    }

    /// Bundle of the observable part of `net` under the sample `sampled`.
    pub fn from_network(net: &Network, sampled: &[usize], covariates: CovariateSet) -> Result<Self> {
        let pn = PartialNetwork::new(net, sampled)?;
        let edges = net.edges().into_iter().filter(|&(i, j)| pn.is_observed(i, j)).collect();
        Ok(Self {
            n_nodes: net.n_nodes(),
            edges,
            sampled: pn.sampled().to_vec(),
            covariates,
            outcomes: None,
            peer_covariates: None,
            rejected_edges: 0,
        })
    }
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Non-empty data lines with their 1-based line numbers, header checked.
fn data_lines(path: &Path, text: &str, expect_first: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(parse_err(path, 1, "missing header row"));
    };
    let first = header.split(',').next().unwrap_or("").trim();
    if first != expect_first {
        return Err(parse_err(path, 1, format!("header must start with '{expect_first}', found '{first}'")));
    }
    Ok(lines
        .map(|(k, l)| (k + 1, l.split(',').map(|f| f.trim().to_string()).collect()))
        .collect())
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse '{field}'")))
}

fn read(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

pub fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read(path)?;
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(path, k + 1, "expected key=value"));
        };
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// Node-indexed table with a fixed number of value columns per row.
fn read_node_table(path: &Path, n: usize) -> Result<(usize, Vec<Vec<f64>>)> {
    let text = read(path)?;
    let header_cols = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .map_or(0, |h| h.split(',').count());
    let rows = data_lines(path, &text, "node")?;
    let width = header_cols.saturating_sub(1);
    let mut table: Vec<Option<Vec<f64>>> = vec![None; n];
    for (line, fields) in &rows {
        if fields.len() != width + 1 {
            return Err(parse_err(path, *line, format!("expected {} fields, found {}", width + 1, fields.len())));
        }
        let node: usize = parse_num(path, *line, &fields[0])?;
        if node >= n {
            return Err(parse_err(path, *line, format!("node {node} out of range [0, {n})")));
        }
        if table[node].is_some() {
            return Err(parse_err(path, *line, format!("duplicate node id {node}")));
        }
        let vals = fields[1..]
            .iter()
            .map(|f| {
                let v: f64 = parse_num(path, *line, f)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(path, *line, "non-finite value"))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        table[node] = Some(vals);
    }
    if rows.is_empty() {
        return Ok((width, Vec::new()));
    }
    let table = table
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| parse_err(path, 0, format!("no row for node {i}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((width, table))
}

fn to_matrix(n: usize, width: usize, rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(n, width, |i, d| rows[i][d])
}

/// Read and validate a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<DataBundle> {
    let meta_path = dir.join(META);
    let meta = read_key_values(&meta_path)?;
    let n: usize = meta
        .get("n_nodes")
        .ok_or_else(|| parse_err(&meta_path, 0, "missing key n_nodes"))
        .and_then(|v| parse_num(&meta_path, 0, v))?;
    if n < 2 {
        return Err(parse_err(&meta_path, 0, "n_nodes must be at least 2"));
    }

    let s_path = dir.join(SAMPLED);
    let mut in_s = vec![false; n];
    let mut sampled = Vec::new();
    for (line, fields) in data_lines(&s_path, &read(&s_path)?, "node")? {
        let v: usize = parse_num(&s_path, line, &fields[0])?;
        if v >= n {
            return Err(parse_err(&s_path, line, format!("node {v} out of range [0, {n})")));
        }
        if in_s[v] {
            return Err(parse_err(&s_path, line, format!("duplicate node id {v}")));
        }
        in_s[v] = true;
        sampled.push(v);
    }
    sampled.sort_unstable();

    let e_path = dir.join(EDGES);
    let mut edges = Vec::new();
    let mut rejected = 0;
    for (line, fields) in data_lines(&e_path, &read(&e_path)?, "i")? {
        if fields.len() != 2 {
            return Err(parse_err(&e_path, line, "expected two endpoints"));
        }
        let i: usize = parse_num(&e_path, line, &fields[0])?;
        let j: usize = parse_num(&e_path, line, &fields[1])?;
        if i >= n || j >= n {
            return Err(parse_err(&e_path, line, format!("endpoint out of range [0, {n})")));
        }
        if i == j {
            return Err(parse_err(&e_path, line, "self-loop"));
        }
        if !(in_s[i] || in_s[j]) {
            rejected += 1;
            continue;
        }
        edges.push((i.min(j), i.max(j)));
    }
    edges.sort_unstable();
    edges.dedup();

    let c_path = dir.join(COVARIATES);
    let covariates = if c_path.exists() {
        let (w, rows) = read_node_table(&c_path, n)?;
        if rows.is_empty() {
            CovariateSet::empty(n)
        } else {
            CovariateSet::new(to_matrix(n, w, &rows))?
        }
    } else {
        CovariateSet::empty(n)
    };

    let o_path = dir.join(OUTCOMES);
    let outcomes = if o_path.exists() {
        let (w, rows) = read_node_table(&o_path, n)?;
        if w != 1 || rows.is_empty() {
            return Err(parse_err(&o_path, 1, "outcomes need exactly one value per node"));
        }
        Some(DVector::from_fn(n, |i, _| rows[i][0]))
    } else {
        None
    };

    let w_path = dir.join(PEER_COVARIATES);
    let peer_covariates = if w_path.exists() {
        let (w, rows) = read_node_table(&w_path, n)?;
        if rows.is_empty() {
            return Err(parse_err(&w_path, 1, "peer covariate file has no rows"));
        }
        Some(to_matrix(n, w, &rows))
    } else {
        None
    };

    Ok(DataBundle {
        n_nodes: n,
        edges,
        sampled,
        covariates,
        outcomes,
        peer_covariates,
        rejected_edges: rejected,
    })
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn node_table(prefix: &str, m: &DMatrix<f64>) -> String {
    let mut out = String::from("node");
    for d in 0..m.ncols() {
        let _ = write!(out, ",{prefix}{}", d + 1);
    }
    out.push('\n');
    for i in 0..m.nrows() {
        let _ = write!(out, "{i}");
        for d in 0..m.ncols() {
            let _ = write!(out, ",{}", fmt_f64(m[(i, d)]));
        }
        out.push('\n');
    }
    out
}

/// Comma-separated matrix, one row per line, no header.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 24);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = read(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|f| parse_num(path, k + 1, f.trim()))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(path, k + 1, "ragged matrix row"));
            }
        }
        rows.push(row);
    }
    let c = rows.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

pub fn save_bundle(bundle: &DataBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(META), format!("n_nodes={}\n", bundle.n_nodes))?;
    let mut e = String::from("i,j\n");
    for (i, j) in &bundle.edges {
        let _ = writeln!(e, "{i},{j}");
    }
    fs::write(dir.join(EDGES), e)?;
    let mut s = String::from("node\n");
    for v in &bundle.sampled {
        let _ = writeln!(s, "{v}");
    }
    fs::write(dir.join(SAMPLED), s)?;
    fs::write(dir.join(COVARIATES), node_table("x", bundle.covariates.matrix()))?;
    if let Some(y) = &bundle.outcomes {
        fs::write(dir.join(OUTCOMES), node_table("y", &DMatrix::from_column_slice(y.len(), 1, y.as_slice())).replace("y1", "y"))?;
    }
    if let Some(w) = &bundle.peer_covariates {
        fs::write(dir.join(PEER_COVARIATES), node_table("w", w))?;
    }
    Ok(())
}
