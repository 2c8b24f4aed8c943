//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero on a
//! failure only when `ACCEPTANCE_STRICT=1`; `ACCEPTANCE_ONLY=k` runs criterion k.

use std::time::{Duration, Instant};

use ctmc_gradkit::bounds::{
    residual_eigen_coordinates, symmetric_gap_constants, thm1_certificate, thm2_certificate_with, thm3_coverage, Residual,
    Thm2Variant,
};
use ctmc_gradkit::ensembles::{
    random_direction, sample_bridge, sample_rate_matrix, sample_rate_matrix_with, EnsembleFamily, RateEnsembleSpec, SeededRng,
};
use ctmc_gradkit::experiment::{fig_app_errors, fig_app_means, low_dim, truth_mean, LowDimSettings, TruthMeanSettings};
use ctmc_gradkit::gradients::{exact_directional_derivative, series_derivative_oracle, GradMode};
use ctmc_gradkit::linalg::{
    eigendecomposition, generalized_inverse, matrix_exponential, DecompositionMode, Matrix, NormKind, RateMatrix,
};
use ctmc_gradkit::mcmc::{
    correlation, ess, mean, run_chain, variance, ChainConfig, GaussianTarget, HmcConfig, Model, PhyloPosterior, PhyloSampling,
};
use ctmc_gradkit::phylo::{
    build_generator, random_tree, simulate_tree_observations, tree_loglik, tree_loglik_and_grad, tree_partials,
    MixedEffectsGenerator, ObservationMatrix, PhyloModel, PhyloTree, RootPrior,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn over_budget(elapsed: Duration, secs: u64) -> bool {
    elapsed > Duration::from_secs(secs)
}

fn derivative_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst_fd = 0.0_f64;
    let mut worst_series = 0.0_f64;
    for case in 0..50u64 {
        let mut rng = SeededRng::new(101, case).rng();
        let d = rng.random_range(2..=10);
        let q = sample_rate_matrix_with(&RateEnsembleSpec::asymmetric_exponential(d), &mut rng).unwrap().into_matrix();
        let j = random_direction(d, &mut rng);
        // Keep t ||Q||_inf in [0.2, 2] so the truncated series is converged.
        let row_norm = (0..d).map(|i| q.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
        let t = rng.random_range(0.1..1.0) * 2.0 / row_norm;
        let exact = exact_directional_derivative(&q, &j, t).unwrap();
        let h = 1e-5 / j.norm();
        let fd = (matrix_exponential(&(&q + &j * h), t).unwrap() - matrix_exponential(&(&q - &j * h), t).unwrap()) / (2.0 * h);
        let series = series_derivative_oracle(&q, &j, t, 40).unwrap();
        worst_fd = worst_fd.max(rel(&exact, &fd));
        worst_series = worst_series.max(rel(&exact, &series));
    }
    let elapsed = start.elapsed();
    outcome(
        worst_fd <= 1e-5 && worst_series <= 1e-8 && !over_budget(elapsed, 5),
        format!("max rel err vs FD {worst_fd:.2e}, vs series {worst_series:.2e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

const CERT_DIMS: [usize; 3] = [4, 16, 64];
const CERT_TIMES: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0];

fn thm1_certificates() -> Outcome {
    let start = Instant::now();
    let (mut ok, mut total) = (0, 0);
    for &d in &CERT_DIMS {
        for r in 0..20u64 {
            let rng = SeededRng::new(202, ((d as u64) << 32) | r);
            let q = sample_rate_matrix(&RateEnsembleSpec::symmetric_exponential(d), &rng).unwrap().into_matrix();
            let j = random_direction(d, &mut rng.stream(u64::MAX).rng());
            let dec = eigendecomposition(&q, DecompositionMode::Symmetric).unwrap();
            let qplus = generalized_inverse(&dec, dec.default_kernel_tol()).unwrap();
            for norm in NormKind::ALL {
                let gap = symmetric_gap_constants(&dec, norm).unwrap();
                for &t in &CERT_TIMES {
                    total += 1;
                    ok += thm1_certificate(&q, &qplus, &j, t, &gap, norm).unwrap().satisfied as usize;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(ok == total && !over_budget(elapsed, 60), format!("{ok}/{total} satisfied, {:.2}s", elapsed.as_secs_f64()))
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn thm2_certificates() -> Outcome {
    let (mut ok, mut total) = (0, 0);
    let (mut slope_ok, mut slope_total) = (0, 0);
    let mut worst_ratio = f64::NEG_INFINITY;
    let decay_times: Vec<f64> = (2..=10).map(f64::from).collect();
    for &d in &CERT_DIMS {
        for r in 0..20u64 {
            let rng = SeededRng::new(202, ((d as u64) << 32) | r);
            let q = sample_rate_matrix(&RateEnsembleSpec::symmetric_exponential(d), &rng).unwrap().into_matrix();
            let j = random_direction(d, &mut rng.stream(u64::MAX).rng());
            let dec = eigendecomposition(&q, DecompositionMode::Symmetric).unwrap();
            let qplus = generalized_inverse(&dec, dec.default_kernel_tol()).unwrap();
            let mut mags: Vec<f64> =
                (0..d).filter(|&k| !qplus.in_kernel(k)).map(|k| dec.eigenvalues()[k].re.abs()).collect();
            mags.sort_by(f64::total_cmp);
            let kappa = mags[0];
            let variants = [
                Thm2Variant::Spectral,
                Thm2Variant::Mu { mu1: kappa / d as f64, mu2: mags[mags.len() - 1] / d as f64 },
            ];
            for norm in NormKind::ALL {
                for variant in variants {
                    for &t in &CERT_TIMES {
                        total += 1;
                        ok += thm2_certificate_with(&qplus, &j, t, norm, variant).unwrap().satisfied as usize;
                    }
                }
            }
            // The corrected residual tends to a constant; its deviation from
            // that limit is the Full residual, whose decay rate is measured.
            let logs: Vec<f64> = decay_times
                .iter()
                .map(|&t| {
                    let y = residual_eigen_coordinates(&qplus, &j, t, Residual::Full);
                    let y = y.map(|z| z.re);
                    let scale = y.amax();
                    scale.ln() + (y / scale).norm().ln()
                })
                .collect();
            let slope = least_squares_slope(&decay_times, &logs);
            slope_total += 1;
            slope_ok += (slope <= -0.5 * kappa) as usize;
            worst_ratio = worst_ratio.max(slope / kappa);
        }
    }
    outcome(
        ok == total && slope_ok == slope_total,
        format!("{ok}/{total} satisfied; decay slope <= -0.5 kappa in {slope_ok}/{slope_total} (worst slope/kappa {worst_ratio:.3})"),
    )
}

fn thm3_band() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for family in [EnsembleFamily::SymmetricIid, EnsembleFamily::AsymmetricIid] {
        let mut widths = Vec::new();
        for (k, &d) in [64usize, 256].iter().enumerate() {
            let spec = ctmc_gradkit::experiment::default_ensemble(family, d);
            let cov = thm3_coverage(&spec, 1.0, 3.0, 100, 303 + k as u64).unwrap();
            pass &= cov.inside >= 95;
            widths.push(cov.band_halfwidth);
            parts.push(format!("{family:?} d={d}: {}/100", cov.inside));
        }
        pass &= widths[1] < widths[0];
    }
    let elapsed = start.elapsed();
    pass &= !over_budget(elapsed, 300);
    outcome(pass, format!("{}, {:.1}s", parts.join(", "), elapsed.as_secs_f64()))
}

fn fig_app_properties() -> Outcome {
    let dims = [4usize, 8, 16, 32, 64, 128];
    let mut pass = true;
    let mut parts = Vec::new();
    for family in [EnsembleFamily::SymmetricIid, EnsembleFamily::AsymmetricIid, EnsembleFamily::RowColMeans, EnsembleFamily::FoldedCauchy]
    {
        let rows = fig_app_errors(family, &dims, 20, &[1.0], 404).unwrap();
        let means: Vec<(f64, f64)> = dims.iter().map(|&d| fig_app_means(&rows, d, 1.0, true)).collect();
        let ordered = dims.iter().zip(&means).filter(|(&d, _)| d >= 8).all(|(_, (naive, corr))| corr < naive);
        pass &= ordered;
        if family == EnsembleFamily::SymmetricIid {
            let x: Vec<f64> = dims.iter().map(|&d| (d as f64).ln()).collect();
            let y: Vec<f64> = means.iter().map(|m| m.1.ln()).collect();
            let slope = least_squares_slope(&x, &y);
            pass &= (-1.0..=-0.25).contains(&slope);
            parts.push(format!("{family:?}: ordered={ordered}, slope {slope:.3}"));
        } else {
            parts.push(format!("{family:?}: ordered={ordered}"));
        }
    }
    outcome(pass, parts.join("; "))
}

fn low_dim_agreement() -> Outcome {
    let res = low_dim(&LowDimSettings { seed: 505, iterations: 100_000, ..LowDimSettings::default() }).unwrap();
    let max_z = res.agreement.iter().map(|r| r.z).fold(0.0, f64::max);
    let max_ks = res.agreement.iter().map(|r| r.ks).fold(0.0, f64::max);
    let per_chain: Vec<String> = res
        .chains
        .iter()
        .map(|c| format!("{} acc {:.2} min ESS {:.0}", c.grad_mode.name(), c.acceptance_rate(), c.diagnostics().ess_min))
        .collect();
    let pair_ks = |a: GradMode, b: GradMode| {
        res.agreement.iter().filter(|r| r.mode_a == a && r.mode_b == b).map(|r| r.ks).fold(0.0, f64::max)
    };
    outcome(
        max_z <= 3.0 && max_ks < 0.08,
        format!(
            "max z {max_z:.2} (<= 3), max KS {max_ks:.3} (< 0.08; exact/naive {:.3}, exact/corrected {:.3}, naive/corrected {:.3}); {}",
            pair_ks(GradMode::Exact, GradMode::Naive),
            pair_ks(GradMode::Exact, GradMode::Corrected),
            pair_ks(GradMode::Naive, GradMode::Corrected),
            per_chain.join(", ")
        ),
    )
}

fn top_decile_error(truth: &[f64], est: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..truth.len()).collect();
    idx.sort_by(|&a, &b| truth[b].abs().total_cmp(&truth[a].abs()));
    let k = (truth.len() as f64 / 10.0).ceil() as usize;
    idx[..k].iter().map(|&i| (truth[i] - est[i]).abs()).sum::<f64>() / k as f64
}

fn truth_mean_trend() -> Outcome {
    let base = TruthMeanSettings { seed: 606, ..TruthMeanSettings::default() };
    let run = |truth: f64, prior: f64| truth_mean(&TruthMeanSettings { alpha_truth: truth, alpha_prior: prior, ..base.clone() }).unwrap();
    let (sparse, sparse_wide, dense) = std::thread::scope(|s| {
        let a = s.spawn(|| run(0.25, 0.25));
        let b = s.spawn(|| run(0.25, 1.0));
        let c = s.spawn(|| run(1.0, 1.0));
        (a.join().unwrap(), b.join().unwrap(), c.join().unwrap())
    });
    let corr = correlation(&sparse.posterior_mean, &sparse.truth);
    let err_bridge = top_decile_error(&sparse.truth, &sparse.posterior_mean);
    let err_wide = top_decile_error(&sparse_wide.truth, &sparse_wide.posterior_mean);
    outcome(
        corr >= 0.8 && err_bridge <= err_wide,
        format!(
            "corr {corr:.3} (>= 0.8; alpha=1 data {:.3}); top-decile error {err_bridge:.3} vs {err_wide:.3} under alpha=1 prior",
            correlation(&dense.posterior_mean, &dense.truth)
        ),
    )
}

fn exhaustive_likelihood(tree: &PhyloTree, obs: &ObservationMatrix, q: &RateMatrix, gamma: f64, root: &[f64]) -> f64 {
    let n = tree.nodes().len();
    let d = q.dim();
    let leaf_state: Vec<Option<usize>> =
        (0..n).map(|v| tree.leaves().iter().position(|&l| l == v).map(|k| obs.states()[k])).collect();
    let internal: Vec<usize> = (0..n).filter(|&v| leaf_state[v].is_none()).collect();
    let p: Vec<Option<Matrix>> = (0..n)
        .map(|v| tree.node(v).parent.map(|_| matrix_exponential(q.matrix(), gamma * tree.node(v).branch_length).unwrap()))
        .collect();
    let mut total = 0.0;
    let mut state = vec![0usize; n];
    for code in 0..d.pow(internal.len() as u32) {
        let mut c = code;
        for &v in &internal {
            state[v] = c % d;
            c /= d;
        }
        for v in 0..n {
            if let Some(s) = leaf_state[v] {
                state[v] = s;
            }
        }
        let mut w = root[state[tree.root()]];
        for v in 0..n {
            if let (Some(u), Some(pv)) = (tree.node(v).parent, &p[v]) {
                w *= pv[(state[u], state[v])];
            }
        }
        total += w;
    }
    total
}

fn mixed_model<R: Rng>(tree: PhyloTree, d: usize, rng: &mut R) -> PhyloModel {
    let normal = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
    let predictors: Vec<Matrix> = (0..2).map(|_| Matrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { normal(rng) })).collect();
    let epsilon: Vec<f64> = (0..d * (d - 1)).map(|_| 0.3 * sample_bridge(0.5, 0.2, rng)).collect();
    let generator = MixedEffectsGenerator::new(predictors, vec![0.5, -0.3], epsilon, 1.0).unwrap();
    let q = build_generator(&generator).unwrap();
    let root = q.stationary().unwrap();
    let obs = simulate_tree_observations(&tree, &q, generator.gamma, &root, rng).unwrap();
    PhyloModel::new(tree, obs, generator, RootPrior::Stationary).unwrap()
}

fn phylo_correctness() -> Outcome {
    let mut rng = SeededRng::new(808, 0).rng();

    let mut worst_node = 0.0_f64;
    for _ in 0..10 {
        let tree = random_tree(8, 0.4, &mut rng).unwrap();
        let model = mixed_model(tree, 4, &mut rng);
        let q = build_generator(&model.generator).unwrap();
        let parts = tree_partials(&model.tree, &model.observations, &q, 1.0, &model.root_prior).unwrap();
        let root = parts.likelihood_at(model.tree.root());
        for v in 0..model.tree.nodes().len() {
            worst_node = worst_node.max((parts.likelihood_at(v) - root).abs() / root);
        }
    }

    let mut worst_oracle = 0.0_f64;
    for d in 2..=3 {
        for n in 2..=5 {
            let tree = random_tree(n, 0.5, &mut rng).unwrap();
            let q = sample_rate_matrix_with(&RateEnsembleSpec::asymmetric_exponential(d), &mut rng).unwrap();
            let gamma = 0.7;
            let root = q.stationary().unwrap();
            let obs = simulate_tree_observations(&tree, &q, gamma, &root, &mut rng).unwrap();
            let parts = tree_partials(&tree, &obs, &q, gamma, &RootPrior::Stationary).unwrap();
            let oracle = exhaustive_likelihood(&tree, &obs, &q, gamma, &root);
            worst_oracle = worst_oracle.max((parts.likelihood_at(tree.root()) - oracle).abs() / oracle);
        }
    }

    let tree = random_tree(8, 0.4, &mut rng).unwrap();
    let model = mixed_model(tree, 3, &mut rng);
    let g = tree_loglik_and_grad(&model, GradMode::Exact).unwrap().to_vec();
    let x0 = model.generator.regression_params();
    let f = |x: &[f64], gamma: f64| {
        let mut m = model.clone();
        m.generator.set_regression_params(x);
        m.generator.gamma = gamma;
        tree_loglik(&m).unwrap()
    };
    let h = 1e-5;
    let mut fd = Vec::new();
    for k in 0..x0.len() {
        let (mut xp, mut xm) = (x0.clone(), x0.clone());
        xp[k] += h;
        xm[k] -= h;
        fd.push((f(&xp, 1.0) - f(&xm, 1.0)) / (2.0 * h));
    }
    fd.push((f(&x0, 1.0 + h) - f(&x0, 1.0 - h)) / (2.0 * h));
    let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    let grad_err = num / den;

    let tree = random_tree(16, 0.3, &mut rng).unwrap();
    let model = mixed_model(tree, 5, &mut rng);
    let init = model.generator.regression_params();
    let sampling = PhyloSampling { update_gamma: false, ..PhyloSampling::default() };
    let tuned = |mode: GradMode| {
        let mut post = PhyloPosterior::new(model.clone(), sampling).unwrap();
        let cfg = ChainConfig::new(HmcConfig::new(0.05, 10), 2000, 808, mode).with_warmup(500);
        run_chain(&mut post, &init, &cfg).unwrap()
    };
    let chain = tuned(GradMode::Naive);
    let reference = tuned(GradMode::Exact);
    let acc = chain.acceptance_rate();

    outcome(
        worst_node <= 1e-10 && worst_oracle <= 1e-10 && grad_err <= 1e-5 && acc > 0.3,
        format!(
            "node invariance {worst_node:.1e}, exhaustive {worst_oracle:.1e}, gradient vs FD {grad_err:.1e}, naive HMC acceptance {acc:.2} at tuned step {:.2e} (exact-gradient step {:.2e})",
            chain.step_size,
            reference.step_size
        ),
    )
}

fn out_of_scope_documented() -> Outcome {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap_or_default();
    let documented = readme.contains("SARS-CoV-2") && readme.to_lowercase().contains("out of scope");
    outcome(documented, "large-data application is documented as out of scope in README.md, not run")
}

fn wrong_gradient_invariance() -> Outcome {
    let mut target = GaussianTarget::standard(1).with_wrong_gradient(0.5, 0.7);
    let cfg = ChainConfig::new(HmcConfig::new(0.5, 5), 100_000, 1010, GradMode::Naive);
    let chain = run_chain(&mut target, &[0.0], &cfg).unwrap();
    let x = chain.column(0);
    let m = mean(&x);
    let se_m = (variance(&x) / ess(&x).unwrap()).sqrt();
    let sq: Vec<f64> = x.iter().map(|v| (v - m).powi(2)).collect();
    let v = variance(&x);
    let se_v = (variance(&sq) / ess(&sq).unwrap()).sqrt();
    assert_eq!(target.dim(), 1);
    outcome(
        m.abs() <= 3.0 * se_m && (v - 1.0).abs() <= 3.0 * se_v,
        format!("mean {m:.4} (se {se_m:.4}), variance {v:.4} (se {se_v:.4}), acceptance {:.2}", chain.acceptance_rate()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("derivative correctness", derivative_correctness),
        ("decay certificate, general form", thm1_certificates),
        ("decay certificates, symmetric form", thm2_certificates),
        ("singular-value band coverage", thm3_band),
        ("surrogate error properties", fig_app_properties),
        ("low-dimensional sampler agreement", low_dim_agreement),
        ("posterior mean vs truth trend", truth_mean_trend),
        ("tree likelihood and gradient", phylo_correctness),
        ("large-data application out of scope", out_of_scope_documented),
        ("wrong-gradient invariance", wrong_gradient_invariance),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        failed += !o.pass as usize;
        println!(
            "criterion {:>2} {}: {} ({}) [{:.1}s]",
            k + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
