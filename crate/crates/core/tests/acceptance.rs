//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use netimpute::baselines::{impute_methods, lowrank_block, BaselineConfig, Method};
use netimpute::distance::pseudo_distance;
use netimpute::downstream::{
    eigenvector_centrality, peer_effects_gmm, row_normalize, simulate_peer_outcomes, GmmWeight, PeerNetworkData,
    PeerParams,
};
use netimpute::dyadic::ResidualTable;
use netimpute::impute::{impute_missing, twfe_impute_pair, EntryFlag, ImputeConfig, KernelFamily, KernelSpec};
use netimpute::montecarlo::{bandwidth_profile, run_experiment, Estimator, ExperimentConfig, ExperimentKind, McReport};
use netimpute::netmodel::{
    egocentric_sample, generate_population, probability_matrix, sample_network, CovariateSet, GraphonSpec, Network,
    PartialNetwork,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {id:>2} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol
}

fn random_sym(n: usize, rng: &mut impl Rng, density: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < density {
                a[(i, j)] = 1.0;
                a[(j, i)] = 1.0;
            }
        }
    }
    a
}

/// Weighted two-way fixed-effects fit over rows `{i} + refs` and columns
/// `{j} + refs` with the `(i, j)` cell absent, solved as dense least squares.
fn twfe_least_squares(r: &DMatrix<f64>, refs: &[usize], i: usize, j: usize, wi: &[f64], wj: &[f64]) -> f64 {
    let rows: Vec<usize> = std::iter::once(i).chain(refs.iter().copied()).collect();
    let cols: Vec<usize> = std::iter::once(j).chain(refs.iter().copied()).collect();
    // Any positive weight on the target row and column gives the same fit.
    let rw: Vec<f64> = std::iter::once(0.7).chain(wi.iter().copied()).collect();
    let cw: Vec<f64> = std::iter::once(1.3).chain(wj.iter().copied()).collect();
    let (nr, nc) = (rows.len(), cols.len());
    let mut design = Vec::new();
    let mut target = Vec::new();
    for a in 0..nr {
        for b in 0..nc {
            if a == 0 && b == 0 {
                continue;
            }
            let s = (rw[a] * cw[b]).sqrt();
            let mut x = vec![0.0; nr + nc];
            x[a] = s;
            x[nr + b] = s;
            design.push(x);
            target.push(s * r[(rows[a], cols[b])]);
        }
    }
    // The last column effect is pinned to zero to remove the (a + c, b - c) direction.
    let x = DMatrix::from_fn(design.len(), nr + nc - 1, |p, q| design[p][q]);
    let y = DVector::from_vec(target);
    let coef = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * y));
    coef[0] + coef[nr]
}

#[test]
fn c01_twfe_closed_form_matches_least_squares() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let k = rng.random_range(3..=8);
        let n = k + 2;
        let refs: Vec<usize> = (0..k).collect();
        let vals = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
        let vals = DMatrix::from_fn(n, n, |a, b| if a == b { 0.0 } else { vals[(a.min(b), a.max(b))] });
        let pi = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        let pi = (&pi + pi.transpose()) * 0.5;
        let pn = PartialNetwork::from_values(vals, &refs).unwrap();
        let res = ResidualTable::from_predictions(&pn, pi);
        let wi: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let wj: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let closed = twfe_impute_pair(&res, k, k + 1, &refs, &wi, &wj).unwrap();
        let oracle = twfe_least_squares(res.matrix(), &refs, k, k + 1, &wi, &wj);
        worst = worst.max((closed - oracle).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    report(1, "TWFE closed form vs dense least squares", worst <= 1e-8 && secs < 10.0, &format!("max err {worst:.2e}, {secs:.2}s"));
}

fn triple_loop(pn: &PartialNetwork, i: usize, ip: usize) -> f64 {
    if i == ip {
        return 0.0;
    }
    let anchors = pn.sampled();
    let mut best = 0.0f64;
    for k in 0..pn.n_nodes() {
        if k == i || k == ip {
            continue;
        }
        let mut s = 0.0;
        for &l in anchors {
            s += pn.value(k, l) * (pn.value(i, l) - pn.value(ip, l));
        }
        best = best.max((s / anchors.len() as f64).abs());
    }
    best
}

#[test]
fn c02_pseudo_distance_matches_triple_loop() {
    let start = Instant::now();
    let mut mismatches = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let n = rng.random_range(5..=40);
        let k = rng.random_range(2..n);
        let density = rng.random_range(0.1..0.7);
        let net = Network::from_adjacency(random_sym(n, &mut rng, density)).unwrap();
        let pn = egocentric_sample(&net, k, rng.random()).unwrap();
        let all: Vec<usize> = (0..n).collect();
        let t = pseudo_distance(&pn, &all, pn.sampled()).unwrap();
        for i in 0..n {
            for &r in pn.sampled() {
                if t.get(i, r).unwrap() != triple_loop(&pn, i, r) {
                    mismatches += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(2, "pseudo-distance vs triple loop", mismatches == 0 && secs < 5.0, &format!("{mismatches} mismatches, {secs:.2}s"));
}

fn rmse_check(rep: &McReport, method: Method, phi: f64, target: f64, tol: f64, fails: &mut Vec<String>, lines: &mut Vec<String>) {
    let v = rep.cell(Estimator::Imputed(method), phi).unwrap().rmse();
    let ok = within(v, target, tol);
    lines.push(format!("{} phi={phi}: {v:.4} vs {target}", method.name()));
    if !ok {
        fails.push(format!("{} phi={phi}", method.name()));
    }
}

#[test]
fn c03_imputation_rmse() {
    let methods = [Method::X, Method::Lr, Method::Ltwfe, Method::XLpca, Method::XLtwfe, Method::XLtwfeSp];
    let cfg = ExperimentConfig {
        experiment: ExperimentKind::Imputation,
        n_nodes: 200,
        beta: vec![-0.5, -0.5],
        phi_list: vec![0.2, 0.4],
        methods: methods.to_vec(),
        replications: 200,
        seed: 2024,
        ..Default::default()
    };
    let rep = run_experiment(&cfg).unwrap();
    let targets = [
        (Method::X, 0.210, 0.208),
        (Method::Lr, 0.158, 0.124),
        (Method::Ltwfe, 0.153, 0.130),
        (Method::XLpca, 0.149, 0.108),
        (Method::XLtwfe, 0.109, 0.089),
        (Method::XLtwfeSp, 0.131, 0.104),
    ];
    let (mut fails, mut lines) = (Vec::new(), Vec::new());
    for (m, t2, t4) in targets {
        rmse_check(&rep, m, 0.2, t2, 0.015, &mut fails, &mut lines);
        rmse_check(&rep, m, 0.4, t4, 0.015, &mut fails, &mut lines);
    }
    for l in &lines {
        println!("    {l}");
    }
    report(3, "imputation RMSE within 0.015", fails.is_empty(), &format!("{:.0}s; out of band: {fails:?}", rep.elapsed.as_secs_f64()));
}

#[test]
fn c04_ordering_strong_homophily() {
    let cfg = ExperimentConfig {
        experiment: ExperimentKind::Imputation,
        n_nodes: 200,
        beta: vec![-2.0, -2.0],
        phi_list: vec![0.3],
        methods: vec![Method::X, Method::Lr, Method::XLpca, Method::XLtwfe],
        replications: 200,
        seed: 2025,
        ..Default::default()
    };
    let rep = run_experiment(&cfg).unwrap();
    let r = |m| rep.cell(Estimator::Imputed(m), 0.3).unwrap().rmse();
    let (x, lr, xlpca, xltwfe) = (r(Method::X), r(Method::Lr), r(Method::XLpca), r(Method::XLtwfe));
    let ok = xltwfe < xlpca && xlpca < x && xltwfe < lr;
    report(4, "ordering at beta=-2, phi=0.3", ok, &format!("X-LTWFE {xltwfe:.4}, X-LPCA {xlpca:.4}, X {x:.4}, LR {lr:.4}"));
}

fn coef(rep: &McReport, name: &str, est: Estimator, phi: f64) -> (f64, f64) {
    let k = rep.coefficients.iter().position(|c| c == name).unwrap();
    let s = rep.cell(est, phi).unwrap().coef_stats(&rep.truth)[k];
    (s.bias, s.std)
}

#[test]
fn c05_degree_centrality() {
    let cfg = ExperimentConfig {
        experiment: ExperimentKind::CentralityDegree,
        n_nodes: 200,
        n_networks: 40,
        phi_list: vec![0.4],
        methods: vec![Method::XLtwfe],
        replications: 200,
        seed: 2026,
        ..Default::default()
    };
    let rep = run_experiment(&cfg).unwrap();
    let (cd_bias, cd_std) = coef(&rep, "alpha_1", Estimator::CompleteData, 0.4);
    let (x_bias, x_std) = coef(&rep, "alpha_1", Estimator::Imputed(Method::XLtwfe), 0.4);
    let ok = within(cd_bias, 0.0, 0.005) && within(cd_std, 0.041, 0.01) && within(x_bias, 0.0014, 0.01);
    report(
        5,
        "degree centrality bias/std",
        ok,
        &format!("CD bias {cd_bias:.4} std {cd_std:.4}; X-LTWFE bias {x_bias:.4} std {x_std:.4}"),
    );
}

#[test]
fn c06_peer_effects() {
    let cfg = ExperimentConfig {
        experiment: ExperimentKind::PeerEffects,
        n_nodes: 200,
        n_networks: 40,
        phi_list: vec![0.5],
        methods: vec![Method::XLtwfe],
        replications: 200,
        seed: 2027,
        ..Default::default()
    };
    let rep = run_experiment(&cfg).unwrap();
    let (cd_bias, cd_std) = coef(&rep, "alpha_ybar", Estimator::CompleteData, 0.5);
    let (x_bias, x_std) = coef(&rep, "alpha_ybar", Estimator::Imputed(Method::XLtwfe), 0.5);
    let ok = within(cd_bias, 0.007, 0.01) && within(cd_std, 0.075, 0.02) && within(x_bias, 0.073, 0.03);
    report(
        6,
        "peer effects alpha_ybar bias/std",
        ok,
        &format!("CD bias {cd_bias:.4} std {cd_std:.4}; X-LTWFE bias {x_bias:.4} std {x_std:.4}"),
    );
}

#[test]
fn c07_noiseless_exactness() {
    // Additive graphon: every missing entry reproduced by the TWFE fit.
    let mut twfe_worst = 0.0f64;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let n = rng.random_range(20..40);
        let k = rng.random_range(5..n - 2);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        let p = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { a[i] + a[j] });
        let sampled: Vec<usize> = (0..k).collect();
        let pn = PartialNetwork::from_values(p.clone(), &sampled).unwrap();
        let pi = DMatrix::from_fn(n, n, |i, j| if i == j { -2.0 * a[i] } else { 0.0 });
        let res = ResidualTable::from_predictions(&pn, pi);
        let all: Vec<usize> = (0..n).collect();
        let dist = pseudo_distance(&pn, &all, pn.sampled()).unwrap();
        let kernel = KernelSpec::new(KernelFamily::Epanechnikov, 10.0).unwrap();
        let out = impute_missing(&pn, &res, &dist, &kernel, true).unwrap();
        for (i, j) in pn.missing_pairs() {
            twfe_worst = twfe_worst.max((out.get(i, j) - p[(i, j)]).abs());
        }
    }

    // Rank-one block: the low-rank completion is exact.
    let mut lr_worst = 0.0f64;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let (ns, nu) = (rng.random_range(10..30), rng.random_range(5..30));
        let v: Vec<f64> = (0..ns + nu).map(|_| rng.random_range(0.1..0.9)).collect();
        let a_ss = DMatrix::from_fn(ns, ns, |r, c| v[r] * v[c]);
        let a_us = DMatrix::from_fn(nu, ns, |r, c| v[ns + r] * v[c]);
        let cfg = BaselineConfig { rank_grid: vec![1, 2, 3], seed, ..Default::default() };
        let (block, _) = lowrank_block(a_ss, &a_us, &cfg).unwrap();
        for p in 0..nu {
            for q in 0..nu {
                lr_worst = lr_worst.max((block[(p, q)] - v[ns + p] * v[ns + q]).abs());
            }
        }
    }

    // Noiseless linear-in-means: GMM recovers the structural parameters.
    let truth = PeerParams { alpha_c: 0.3, alpha_ybar: 0.5, alpha_w: vec![1.0, -0.5], alpha_wbar: vec![0.8, 0.2] };
    let mut gmm_worst = 0.0f64;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let data: Vec<PeerNetworkData> = (0..3)
            .map(|_| {
                let g = row_normalize(&random_sym(60, &mut rng, 0.15)).unwrap();
                let w = DMatrix::from_fn(60, 2, |_, _| rng.random_range(-1.0..1.0));
                let y = simulate_peer_outcomes(&g, &w, &truth, 0.0, &DVector::zeros(60)).unwrap();
                PeerNetworkData { g, w, y }
            })
            .collect();
        let est = peer_effects_gmm(&data, &GmmWeight::Identity).unwrap();
        gmm_worst = gmm_worst.max((est.alpha - truth.to_vector()).amax());
    }
    let ok = twfe_worst <= 1e-6 && lr_worst <= 1e-6 && gmm_worst <= 1e-6;
    report(
        7,
        "noiseless exactness",
        ok,
        &format!("TWFE {twfe_worst:.1e}, LR {lr_worst:.1e}, GMM {gmm_worst:.1e} over 50 seeds each"),
    );
}

#[test]
fn c08_eigenvector_centrality_matches_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = DMatrix::from_fn(8, 8, |_, _| rng.random::<f64>());
        let a = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(a.clone());
        let top = eig.eigenvalues.imax();
        let mut v: DVector<f64> = eig.eigenvectors.column(top).into_owned();
        if v.sum() < 0.0 {
            v = -v;
        }
        let oracle = v * 8f64.sqrt();
        let c = eigenvector_centrality(&a, 1e-14, 100_000).unwrap();
        worst = worst.max((c.values - oracle).amax());
    }
    report(8, "eigenvector centrality vs dense eigensolver", worst <= 1e-8, &format!("max err {worst:.2e}"));
}

fn check_invariants(pn: &PartialNetwork, net: &netimpute::impute::ImputedNetwork) -> Option<String> {
    let n = pn.n_nodes();
    for i in 0..n {
        if net.get(i, i) != 0.0 {
            return Some(format!("diagonal at {i}"));
        }
        for j in 0..n {
            let v = net.get(i, j);
            if !(0.0..=1.0).contains(&v) {
                return Some(format!("range at ({i},{j}): {v}"));
            }
            if v != net.get(j, i) {
                return Some(format!("symmetry at ({i},{j})"));
            }
            if i != j && pn.is_observed(i, j) && (v != pn.value(i, j) || net.flag(i, j) != EntryFlag::Observed) {
                return Some(format!("observed entry changed at ({i},{j})"));
            }
            if i != j && !pn.is_observed(i, j) && net.flag(i, j) != EntryFlag::Imputed {
                return Some(format!("provenance at ({i},{j})"));
            }
        }
    }
    None
}

fn cli_is_deterministic() -> Vec<String> {
    use std::process::Command;
    let tmp = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_netimpute")).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    let read_all = |d: &std::path::Path| {
        let mut files: Vec<(String, Vec<u8>)> = walk(d);
        files.sort();
        files
    };
    let base = tmp.path();
    let nets = base.join("nets");
    let nets_s = nets.to_str().unwrap();
    run(&["simulate", "--nodes", "40", "--phi", "0.5", "--networks", "3", "--outcome", "peer-effects", "--seed", "4", "--out", nets_s]);
    let b0 = nets.join("net000");
    let bundles: Vec<String> = (0..3).map(|m| nets.join(format!("net{m:03}")).to_string_lossy().into_owned()).collect();
    let mut bad = Vec::new();
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("simulate", ["simulate", "--nodes", "40", "--phi", "0.4", "--seed", "7"].map(String::from).to_vec()),
        ("impute", vec!["impute".into(), "--bundle".into(), b0.to_string_lossy().into_owned(), "--seed".into(), "7".into()]),
        ("estimate", {
            let mut v: Vec<String> = ["estimate", "--model", "peer-effects", "--seed", "7", "--bundle"].map(String::from).to_vec();
            v.extend(bundles.iter().cloned());
            v
        }),
        ("mc", ["mc", "--nodes", "30", "--phi", "0.4", "--methods", "x,x-ltwfe,lr", "--replications", "2", "--seed", "7"].map(String::from).to_vec()),
    ];
    for (name, args) in commands {
        let outs: Vec<_> = ["r1", "r2"]
            .iter()
            .map(|r| {
                let out = base.join(format!("{name}-{r}"));
                let mut a: Vec<&str> = args.iter().map(String::as_str).collect();
                let o = out.to_string_lossy().into_owned();
                a.extend(["--out", o.as_str()]);
                run(&a);
                read_all(&out)
            })
            .collect();
        if outs[0].is_empty() || outs[0] != outs[1] {
            bad.push(name.to_string());
        }
    }
    bad
}

fn walk(d: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(d).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push((p.to_string_lossy().into_owned().replace(d.to_str().unwrap(), ""), std::fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn c09_invariants_and_cli_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut violations = Vec::new();
    for c in 0..100 {
        let n = rng.random_range(30..=60);
        let phi = rng.random_range(0.3..0.6);
        let beta = vec![rng.random_range(-2.0..0.5), rng.random_range(-2.0..0.5)];
        let seed: u64 = rng.random();
        let (cov, lat) = generate_population(n, seed).unwrap();
        let p = probability_matrix(&cov, &lat, &GraphonSpec::simulation_design(beta)).unwrap();
        let pn = egocentric_sample(&sample_network(&p, seed), (phi * n as f64).round() as usize, seed).unwrap();
        let cov = if c % 5 == 4 { CovariateSet::new(DMatrix::from_fn(n, 4, |_, _| rng.random::<f64>())).unwrap() } else { cov };
        let icfg = ImputeConfig { seed, ..Default::default() };
        let bcfg = BaselineConfig { seed, ..Default::default() };
        let nets = impute_methods(&Method::ALL, &pn, &cov, &icfg, &bcfg).unwrap();
        for (m, net) in Method::ALL.iter().zip(&nets) {
            if let Some(v) = check_invariants(&pn, net) {
                violations.push(format!("config {c} {}: {v}", m.name()));
            }
        }
    }
    let cli = cli_is_deterministic();
    report(
        9,
        "imputer invariants and CLI determinism",
        violations.is_empty() && cli.is_empty(),
        &format!("100 configs x {} imputers, {} violations {:?}; nondeterministic commands {cli:?}", Method::ALL.len(), violations.len(), violations.first()),
    );
}

#[test]
fn c10_bandwidth_u_shape() {
    let cfg = ExperimentConfig { n_nodes: 200, replications: 100, seed: 2028, ..Default::default() };
    let grid = [0.15, 0.25, 0.4, 0.7, 1.5, 4.0];
    let mse = bandwidth_profile(&cfg, 0.4, &grid).unwrap();
    let best = (0..grid.len()).min_by(|&a, &b| mse[a].total_cmp(&mse[b])).unwrap();
    let detail: Vec<String> = grid.iter().zip(&mse).map(|(h, m)| format!("h={h}: {m:.5}")).collect();
    report(10, "interior MSE minimizer over h", best > 0 && best + 1 < grid.len(), &detail.join(", "));
}
