//! Command-line front end: `simulate`, `impute`, `estimate`, `mc`.
//!
//! Every command accepts `--config FILE` (flat `key=value`); flags override
//! file values. Outputs land in `--out` under fixed file names.

pub mod bundle;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand_distr::{Distribution, Normal};

use crate::baselines::{impute_method, BaselineConfig, Method};
use crate::downstream::{
    centrality_ols, degree_centrality, eigenvector_centrality, peer_covariates, peer_effects_gmm, row_normalize,
    simulate_peer_outcomes, GmmWeight, PeerNetworkData,
};
use crate::dyadic::FirstStage;
use crate::error::{invalid, Error, Result};
use crate::impute::{impute_with_cv, EntryFlag, HGrid, ImputeConfig, ImputedNetwork, KernelFamily};
use crate::montecarlo::{peer_design, run_experiment, ExperimentConfig, ExperimentKind, CENTRALITY_NOISE_SD, PEER_NOISE_SD};
use crate::netmodel::{egocentric_sample, generate_population, probability_matrix, sample_network, GraphonSpec};
use crate::rng::{derive_seed, stream, Purpose};

use bundle::{load_bundle, matrix_csv, read_key_values, save_bundle, DataBundle};

pub const IMPUTED: &str = "imputed.csv";
pub const PROVENANCE: &str = "provenance.csv";
pub const METADATA: &str = "metadata.txt";
pub const ESTIMATE: &str = "estimate.txt";
pub const REPORT: &str = "report.csv";
pub const REPORT_TABLE: &str = "report.txt";
pub const PROBABILITIES: &str = "probabilities.csv";

#[derive(Parser, Debug)]
#[command(name = "netimpute", version, about = "Impute missing links in egocentrically sampled networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Shared {
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Flat key=value configuration file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ImputeFlags {
    /// x-ltwfe, x-ltwfe-sp, x, ltwfe, lr, lpca or x-lpca.
    #[arg(long)]
    pub method: Option<String>,
    /// Comma-separated bandwidth grid; automatic when omitted.
    #[arg(long)]
    pub h_grid: Option<String>,
    /// Multiplier in (0, 1] applied to the cross-validated bandwidth.
    #[arg(long)]
    pub undersmooth: Option<f64>,
    /// local-linear, linear-projection or auto.
    #[arg(long)]
    pub first_stage: Option<String>,
    /// epanechnikov, triangular or uniform.
    #[arg(long)]
    pub kernel: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate networks from the built-in design and write data bundles.
    Simulate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        nodes: Option<usize>,
        /// Sampling rate.
        #[arg(long)]
        phi: Option<f64>,
        /// Comma-separated homophily coefficients.
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<String>,
        /// Number of networks; more than one writes net000, net001, ...
        #[arg(long)]
        networks: Option<usize>,
        /// none, centrality-degree, centrality-eigen or peer-effects.
        #[arg(long)]
        outcome: Option<String>,
    },
    /// Impute the missing block of one bundle.
    Impute {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        flags: ImputeFlags,
    },
    /// Estimate a downstream model on imputed networks (one bundle per network).
    Estimate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, required = true, num_args = 1..)]
        bundle: Vec<PathBuf>,
        /// centrality-degree, centrality-eigen or peer-effects.
        #[arg(long)]
        model: Option<String>,
        /// GMM weight; only identity is supported.
        #[arg(long)]
        weight: Option<String>,
        #[command(flatten)]
        flags: ImputeFlags,
    },
    /// Run a Monte Carlo experiment.
    Mc {
        #[command(flatten)]
        shared: Shared,
        /// imputation, centrality-degree, centrality-eigen or peer-effects.
        #[arg(long)]
        experiment: Option<String>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        networks: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<String>,
        /// Comma-separated sampling rates.
        #[arg(long)]
        phi: Option<String>,
        /// Comma-separated method names.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        first_replication: Option<usize>,
        #[arg(long)]
        noiseless: bool,
        #[command(flatten)]
        flags: ImputeFlags,
    },
}

/// Flag values layered over a configuration file.
struct Settings {
    file: BTreeMap<String, String>,
    source: String,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Ok(Self {
                file: read_key_values(p)?,
                source: p.display().to_string(),
            }),
            None => Ok(Self {
                file: BTreeMap::new(),
                source: String::new(),
            }),
        }
    }

    fn raw(&self, flag: Option<String>, key: &str) -> Option<String> {
        flag.or_else(|| self.file.get(key).cloned())
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.file.get(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| Error::Parse {
                file: self.source.clone(),
                line: 0,
                message: format!("cannot parse value '{s}' for key {key}"),
            }),
        }
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| Error::Validation(format!("cannot parse {what} '{v}'"))))
        .collect()
}

fn parse_method(s: &str) -> Result<Method> {
    Method::parse(s).ok_or_else(|| Error::Validation(format!("unknown method '{s}'")))
}

fn parse_first_stage(s: &str) -> Result<FirstStage> {
    match s {
        "auto" => Ok(FirstStage::Auto),
        "local-linear" => Ok(FirstStage::LocalLinear),
        "linear-projection" => Ok(FirstStage::LinearProjection),
        _ => invalid(format!("unknown first stage '{s}'")),
    }
}

fn parse_kernel(s: &str) -> Result<KernelFamily> {
    match s {
        "epanechnikov" => Ok(KernelFamily::Epanechnikov),
        "triangular" => Ok(KernelFamily::Triangular),
        "uniform" => Ok(KernelFamily::Uniform),
        _ => invalid(format!("unknown kernel '{s}'")),
    }
}

fn impute_settings(st: &Settings, f: &ImputeFlags, seed: u64) -> Result<(Method, ImputeConfig)> {
    let method = parse_method(&st.raw(f.method.clone(), "method").unwrap_or_else(|| "x-ltwfe".into()))?;
    let h_grid = match st.raw(f.h_grid.clone(), "h_grid") {
        Some(s) if s != "auto" => HGrid::Values(parse_list(&s, "bandwidth")?),
        _ => HGrid::Auto,
    };
    let first_stage = parse_first_stage(&st.raw(f.first_stage.clone(), "first_stage").unwrap_or_else(|| "auto".into()))?;
    let kernel = parse_kernel(&st.raw(f.kernel.clone(), "kernel").unwrap_or_else(|| "epanechnikov".into()))?;
    let cfg = ImputeConfig {
        kernel,
        h_grid,
        cv_pair_cap: st.get(None, "cv_pair_cap", 20_000)?,
        undersmooth_multiplier: st.get(f.undersmooth, "undersmooth", 1.0)?,
        split: method == Method::XLtwfeSp,
        first_stage,
        seed,
        ..ImputeConfig::default()
    };
    cfg.validate()?;
    Ok((method, cfg))
}

/// Imputation plus the metadata lines describing it.
fn impute_bundle(b: &DataBundle, method: Method, cfg: &ImputeConfig) -> Result<(ImputedNetwork, String)> {
    let pn = b.partial_network()?;
    let mut meta = String::new();
    let _ = writeln!(meta, "method={}", method.name());
    let _ = writeln!(meta, "n_nodes={}", b.n_nodes);
    let _ = writeln!(meta, "n_sampled={}", b.sampled.len());
    let _ = writeln!(meta, "covariate_dim={}", b.covariates.dim());
    let _ = writeln!(meta, "rejected_edges={}", b.rejected_edges);
    let _ = writeln!(meta, "seed={}", cfg.seed);
    let net = match method {
        Method::XLtwfe | Method::XLtwfeSp | Method::Ltwfe => {
            let cfg = if method == Method::Ltwfe {
                ImputeConfig {
                    first_stage: FirstStage::None,
                    ..cfg.clone()
                }
            } else {
                cfg.clone()
            };
            let out = impute_with_cv(&pn, &b.covariates, &cfg)?;
            let _ = writeln!(meta, "h_selected={}", bundle::fmt_f64(out.h_selected));
            let _ = writeln!(meta, "h_used={}", bundle::fmt_f64(out.h_used));
            let grid: Vec<String> = out.cv_scores.iter().map(|(h, _)| bundle::fmt_f64(*h)).collect();
            let scores: Vec<String> = out
                .cv_scores
                .iter()
                .map(|(_, s)| s.map_or("na".into(), bundle::fmt_f64))
                .collect();
            let _ = writeln!(meta, "h_grid={}", grid.join(","));
            let _ = writeln!(meta, "cv_scores={}", scores.join(","));
            out.network
        }
        _ => {
            let bc = BaselineConfig {
                seed: cfg.seed,
                ..BaselineConfig::default()
            };
            impute_method(method, &pn, &b.covariates, cfg, &bc)?
        }
    };
    let _ = writeln!(meta, "fallback_count={}", net.fallback_count());
    Ok((net, meta))
}

fn provenance_csv(net: &ImputedNetwork) -> String {
    let n = net.n_nodes();
    let mut out = String::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            if j > 0 {
                out.push(',');
            }
            out.push(if net.flag(i, j) == EntryFlag::Imputed { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}

fn cmd_simulate(
    st: &Settings,
    seed: u64,
    out: &Path,
    nodes: Option<usize>,
    phi: Option<f64>,
    beta: Option<String>,
    networks: Option<usize>,
    outcome: Option<String>,
) -> Result<()> {
    let n: usize = st.get(nodes, "nodes", 200)?;
    let phi: f64 = st.get(phi, "phi", 0.4)?;
    let beta: Vec<f64> = parse_list(&st.raw(beta, "beta").unwrap_or_else(|| "-0.5,-0.5".into()), "beta")?;
    let m: usize = st.get(networks, "networks", 1)?;
    let outcome = st.raw(outcome, "outcome").unwrap_or_else(|| "none".into());
    if !["none", "centrality-degree", "centrality-eigen", "peer-effects"].contains(&outcome.as_str()) {
        return invalid(format!("unknown outcome model '{outcome}'"));
    }
    if !(phi > 0.0 && phi < 1.0) {
        return invalid(format!("sampling rate {phi} outside (0, 1)"));
    }
    if m == 0 {
        return invalid("at least one network is required");
    }
    let k = (phi * n as f64).round() as usize;
    for net_id in 0..m {
        let s = if m == 1 { seed } else { derive_seed(seed, net_id as u64) };
        let (cov, lat) = generate_population(n, s)?;
        let p = probability_matrix(&cov, &lat, &GraphonSpec::simulation_design(beta.clone()))?;
        let net = sample_network(&p, s);
        let pn = egocentric_sample(&net, k, s)?;
        let mut b = DataBundle::from_network(&net, pn.sampled(), cov.clone())?;
        let mut rng = stream(s, 0, Purpose::Outcomes);
        let normal = |sd: f64| Normal::new(0.0, sd).expect("positive sd");
        match outcome.as_str() {
            "centrality-degree" | "centrality-eigen" => {
                let phi_true = if outcome == "centrality-degree" {
                    degree_centrality(net.adjacency())?
                } else {
                    eigenvector_centrality(net.adjacency(), 1e-10, 10_000)?.values
                };
                let (su, se) = CENTRALITY_NOISE_SD;
                let u = normal(su).sample(&mut rng);
                b.outcomes = Some(DVector::from_fn(n, |i, _| 0.5 * phi_true[i] + u + normal(se).sample(&mut rng)));
            }
            "peer-effects" => {
                let g = row_normalize(net.adjacency())?;
                let w = peer_covariates(&cov, &lat)?;
                let (su, se) = PEER_NOISE_SD;
                let u = normal(su).sample(&mut rng);
                let e = DVector::from_fn(n, |_, _| normal(se).sample(&mut rng));
                b.outcomes = Some(simulate_peer_outcomes(&g, &w, &peer_design(), u, &e)?);
                b.peer_covariates = Some(w);
            }
            _ => {}
        }
        let dir = if m == 1 { out.to_path_buf() } else { out.join(format!("net{net_id:03}")) };
        save_bundle(&b, &dir)?;
        fs::write(dir.join(PROBABILITIES), matrix_csv(p.matrix()))?;
    }
    Ok(())
}

fn cmd_impute(st: &Settings, seed: u64, out: &Path, bundle: &Path, flags: &ImputeFlags) -> Result<()> {
    let b = load_bundle(bundle)?;
    if b.rejected_edges > 0 {
        eprintln!("warning: {} edge(s) with no sampled endpoint were ignored", b.rejected_edges);
    }
    let (method, cfg) = impute_settings(st, flags, seed)?;
    let (net, meta) = impute_bundle(&b, method, &cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(IMPUTED), matrix_csv(net.matrix()))?;
    fs::write(out.join(PROVENANCE), provenance_csv(&net))?;
    fs::write(out.join(METADATA), meta)?;
    Ok(())
}

fn cmd_estimate(
    st: &Settings,
    seed: u64,
    out: &Path,
    bundles: &[PathBuf],
    model: Option<String>,
    weight: Option<String>,
    flags: &ImputeFlags,
) -> Result<()> {
    let model = st.raw(model, "model").unwrap_or_else(|| "peer-effects".into());
    let weight = st.raw(weight, "weight").unwrap_or_else(|| "identity".into());
    if weight != "identity" {
        return invalid(format!("unsupported weight '{weight}'"));
    }
    let (method, cfg) = impute_settings(st, flags, seed)?;
    let mut text = String::new();
    let _ = writeln!(text, "model={model}");
    let _ = writeln!(text, "method={}", method.name());
    let _ = writeln!(text, "n_networks={}", bundles.len());
    let mut nets = Vec::with_capacity(bundles.len());
    for (m, path) in bundles.iter().enumerate() {
        let b = load_bundle(path)?;
        let c = ImputeConfig {
            seed: derive_seed(seed, m as u64),
            ..cfg.clone()
        };
        let (net, _) = impute_bundle(&b, method, &c)?;
        let y = b
            .outcomes
            .clone()
            .ok_or_else(|| Error::Validation(format!("{} has no outcomes", path.display())))?;
        nets.push((b, net.into_matrix(), y));
    }
    match model.as_str() {
        "centrality-degree" | "centrality-eigen" => {
            let mut ys = Vec::new();
            let mut phis = Vec::new();
            for (_, a, y) in &nets {
                phis.push(if model == "centrality-degree" {
                    degree_centrality(a)?
                } else {
                    eigenvector_centrality(a, 1e-10, 10_000)?.values
                });
                ys.push(y.clone());
            }
            let est = centrality_ols(&ys, &phis)?;
            let _ = writeln!(text, "alpha_c={}", bundle::fmt_f64(est.alpha_c));
            let _ = writeln!(text, "alpha_1={}", bundle::fmt_f64(est.alpha_1));
            match est.se_cluster {
                Some((a, b)) => {
                    let _ = writeln!(text, "se_alpha_c={}", bundle::fmt_f64(a));
                    let _ = writeln!(text, "se_alpha_1={}", bundle::fmt_f64(b));
                }
                None => {
                    let _ = writeln!(text, "se=unavailable");
                }
            }
        }
        "peer-effects" => {
            let mut data = Vec::new();
            for ((b, a, y), path) in nets.into_iter().zip(bundles) {
                let w = b
                    .peer_covariates
                    .ok_or_else(|| Error::Validation(format!("{} has no peer covariates", path.display())))?;
                data.push(PeerNetworkData {
                    g: row_normalize(&a)?,
                    w,
                    y,
                });
            }
            let est = peer_effects_gmm(&data, &GmmWeight::Identity)?;
            let d = (est.alpha.len() - 2) / 2;
            let mut names = vec!["alpha_c".to_string(), "alpha_ybar".to_string()];
            names.extend((1..=d).map(|k| format!("alpha_w{k}")));
            names.extend((1..=d).map(|k| format!("alpha_wbar{k}")));
            for (k, name) in names.iter().enumerate() {
                let _ = writeln!(text, "{name}={}", bundle::fmt_f64(est.alpha[k]));
            }
            match &est.se_cluster {
                Some(se) => {
                    for (k, name) in names.iter().enumerate() {
                        let _ = writeln!(text, "se_{name}={}", bundle::fmt_f64(se[k]));
                    }
                }
                None => {
                    let _ = writeln!(text, "se=unavailable");
                }
            }
        }
        _ => return invalid(format!("unknown model '{model}'")),
    }
    fs::create_dir_all(out)?;
    fs::write(out.join(ESTIMATE), text)?;
    Ok(())
}

fn cmd_mc(
    st: &Settings,
    seed: u64,
    out: &Path,
    experiment: Option<String>,
    nodes: Option<usize>,
    networks: Option<usize>,
    beta: Option<String>,
    phi: Option<String>,
    methods: Option<String>,
    replications: Option<usize>,
    first_replication: Option<usize>,
    noiseless: bool,
    flags: &ImputeFlags,
) -> Result<()> {
    let kind_name = st.raw(experiment, "experiment").unwrap_or_else(|| "imputation".into());
    let kind =
        ExperimentKind::parse(&kind_name).ok_or_else(|| Error::Validation(format!("unknown experiment '{kind_name}'")))?;
    let (_, impute) = impute_settings(st, flags, seed)?;
    let methods: Vec<Method> = match st.raw(methods, "methods") {
        Some(s) => s.split(',').map(|m| parse_method(m.trim())).collect::<Result<_>>()?,
        None => vec![Method::XLtwfe],
    };
    let defaults = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        experiment: kind,
        n_nodes: st.get(nodes, "nodes", defaults.n_nodes)?,
        n_networks: st.get(networks, "networks", defaults.n_networks)?,
        beta: match st.raw(beta, "beta") {
            Some(s) => parse_list(&s, "beta")?,
            None => defaults.beta,
        },
        phi_list: match st.raw(phi, "phi") {
            Some(s) => parse_list(&s, "sampling rate")?,
            None => defaults.phi_list,
        },
        methods,
        replications: st.get(replications, "replications", defaults.replications)?,
        first_replication: st.get(first_replication, "first_replication", 0)?,
        seed,
        noiseless: noiseless || st.get(None, "noiseless", false)?,
        impute: ImputeConfig {
            split: false,
            ..impute
        },
        baseline: BaselineConfig::default(),
    };
    let report = run_experiment(&cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join(REPORT), report.to_csv())?;
    fs::write(out.join(REPORT_TABLE), report.to_table())?;
    eprintln!("elapsed {:.1}s", report.elapsed.as_secs_f64());
    Ok(())
}

fn shared_setup(shared: &Shared) -> Result<(Settings, u64)> {
    let st = Settings::load(shared.config.as_deref())?;
    let seed = st.get(shared.seed, "seed", 0u64)?;
    let threads: usize = st.get(shared.threads, "threads", 0)?;
    if threads > 0 {
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok((st, seed))
}

/// Execute a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            shared,
            nodes,
            phi,
            beta,
            networks,
            outcome,
        } => {
            let (st, seed) = shared_setup(&shared)?;
            cmd_simulate(&st, seed, &shared.out, nodes, phi, beta, networks, outcome)
        }
        Command::Impute { shared, bundle, flags } => {
            let (st, seed) = shared_setup(&shared)?;
            cmd_impute(&st, seed, &shared.out, &bundle, &flags)
        }
        Command::Estimate {
            shared,
            bundle,
            model,
            weight,
            flags,
        } => {
            let (st, seed) = shared_setup(&shared)?;
            cmd_estimate(&st, seed, &shared.out, &bundle, model, weight, &flags)
        }
        Command::Mc {
            shared,
            experiment,
            nodes,
            networks,
            beta,
            phi,
            methods,
            replications,
            first_replication,
            noiseless,
            flags,
        } => {
            let (st, seed) = shared_setup(&shared)?;
            cmd_mc(
                &st,
                seed,
                &shared.out,
                experiment,
                nodes,
                networks,
                beta,
                phi,
                methods,
                replications,
                first_replication,
                noiseless,
                &flags,
            )
        }
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
