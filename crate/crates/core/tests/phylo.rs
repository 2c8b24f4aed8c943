use ctmc_gradkit::ctmc_data::{endpoint_loglik, EndpointDataset, EndpointPair};
use ctmc_gradkit::ensembles::{off_diagonal_to_vec, SeededRng};
use ctmc_gradkit::gradients::GradMode;
use ctmc_gradkit::linalg::{matrix_exponential, Matrix};
use ctmc_gradkit::phylo::{
    build_generator, parse_newick, random_tree, simulate_tree_observations, tree_loglik, tree_loglik_and_grad,
    tree_partials, MixedEffectsGenerator, ObservationMatrix, PhyloModel, PhyloTree, RootPrior,
};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(r: &mut ChaCha8Rng, scale: f64) -> f64 {
    scale * r.sample::<f64, _>(StandardNormal)
}

fn generator(d: usize, k: usize, gamma: f64, r: &mut ChaCha8Rng) -> MixedEffectsGenerator {
    let predictors = (0..k).map(|_| Matrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { normal(r, 1.0) })).collect();
    let theta = (0..k).map(|_| normal(r, 0.3)).collect();
    let epsilon = (0..d * (d - 1)).map(|_| normal(r, 0.3)).collect();
    MixedEffectsGenerator::new(predictors, theta, epsilon, gamma).unwrap()
}

fn model(tree: PhyloTree, gen: MixedEffectsGenerator, root: RootPrior, r: &mut ChaCha8Rng) -> PhyloModel {
    let d = gen.dim();
    let states = (0..tree.n_leaves()).map(|_| r.random_range(0..d)).collect();
    PhyloModel::new(tree, ObservationMatrix::new(d, states).unwrap(), gen, root).unwrap()
}

/// Sum over every assignment of internal states.
fn brute_force_likelihood(m: &PhyloModel) -> f64 {
    let q = build_generator(&m.generator).unwrap();
    let d = q.dim();
    let tree = &m.tree;
    let n = tree.nodes().len();
    let internal: Vec<usize> = (0..n).filter(|&v| !tree.node(v).children.is_empty()).collect();
    let mut state = vec![0usize; n];
    for (&leaf, &s) in tree.leaves().iter().zip(m.observations.states()) {
        state[leaf] = s;
    }
    let p: Vec<Matrix> =
        (0..n).map(|v| matrix_exponential(q.matrix(), m.generator.gamma * tree.node(v).branch_length).unwrap()).collect();
    let root = m.root_prior.vector(&q).unwrap();
    let mut total = 0.0;
    for code in 0..d.pow(internal.len() as u32) {
        let mut c = code;
        for &v in &internal {
            state[v] = c % d;
            c /= d;
        }
        let mut term = root[state[tree.root()]];
        for v in tree.branches() {
            term *= p[v][(state[tree.node(v).parent.unwrap()], state[v])];
        }
        total += term;
    }
    total
}

fn finite_difference_check(m: &PhyloModel) {
    let g = tree_loglik_and_grad(m, GradMode::Exact).unwrap();
    let x0 = m.generator.regression_params();
    let eval = |x: &[f64], gamma: f64| {
        let mut mm = m.clone();
        mm.generator.set_regression_params(x);
        mm.generator.gamma = gamma;
        tree_loglik(&mm).unwrap()
    };
    let h = 1e-6;
    let grad = g.to_vec();
    for k in 0..=x0.len() {
        let fd = if k < x0.len() {
            let mut up = x0.clone();
            let mut dn = x0.clone();
            up[k] += h;
            dn[k] -= h;
            (eval(&up, m.generator.gamma) - eval(&dn, m.generator.gamma)) / (2.0 * h)
        } else {
            (eval(&x0, m.generator.gamma + h) - eval(&x0, m.generator.gamma - h)) / (2.0 * h)
        };
        assert!((grad[k] - fd).abs() < 1e-5 * fd.abs().max(1.0), "coordinate {k}: {} vs {fd}", grad[k]);
    }
}

#[test]
fn exact_gradient_matches_finite_differences() {
    for (seed, root) in [(1, RootPrior::Uniform), (2, RootPrior::Stationary)] {
        let mut r = SeededRng::new(seed, 0).rng();
        let tree = random_tree(5, 0.4, &mut r).unwrap();
        let gen = generator(3, 2, 1.3, &mut r);
        finite_difference_check(&model(tree, gen, root, &mut r));
    }
}

#[test]
fn naive_gradient_matches_per_branch_trace_form() {
    let tree = parse_newick("((A:0.4,B:0.0):0.3,(C:0.8,D:0.5):0.2);").unwrap();
    let mut r = SeededRng::new(11, 0).rng();
    let gen = generator(3, 1, 0.9, &mut r);
    let m = model(tree, gen, RootPrior::Uniform, &mut r);
    let q = build_generator(&m.generator).unwrap();
    let qm = q.matrix();
    let d = q.dim();
    let gamma = m.generator.gamma;
    let tree = &m.tree;
    let parts = tree_partials(tree, &m.observations, &q, gamma, &RootPrior::Uniform).unwrap();
    let lik = parts.likelihood_at(tree.root());
    let mut g = Matrix::zeros(d, d);
    for v in tree.branches() {
        let u = tree.node(v).parent.unwrap();
        let w = tree.sibling(v).unwrap();
        let pw = matrix_exponential(qm, gamma * tree.node(w).branch_length).unwrap();
        let a = parts.pre_order[u].component_mul(&(pw * &parts.post_order[w])) * parts.post_order[v].transpose();
        let s = gamma * tree.node(v).branch_length;
        let e = matrix_exponential(qm, s).unwrap();
        let mut term = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let mut jij = Matrix::zeros(d, d);
                jij[(i, j)] = 1.0;
                term[(i, j)] = (&a * (&e * jij * s).transpose()).trace();
            }
        }
        if s == 0.0 {
            assert_eq!(term.amax(), 0.0);
        }
        g += term;
    }
    g /= lik;
    let rate = Matrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { (g[(i, j)] - g[(i, i)]) * qm[(i, j)] });
    let oracle = off_diagonal_to_vec(&rate);
    let got = tree_loglik_and_grad(&m, GradMode::Naive).unwrap();
    for (a, b) in got.epsilon.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn theta_gradient_is_linear_in_predictors() {
    let mut r = SeededRng::new(21, 0).rng();
    let tree = random_tree(6, 0.5, &mut r).unwrap();
    let gen = generator(4, 3, 1.0, &mut r);
    let m = model(tree, gen, RootPrior::Uniform, &mut r);
    for mode in GradMode::ALL {
        let g = tree_loglik_and_grad(&m, mode).unwrap();
        for (k, x) in m.generator.predictors.iter().enumerate() {
            let expect: f64 = g.epsilon.iter().zip(off_diagonal_to_vec(x)).map(|(e, xv)| e * xv).sum();
            assert!((g.theta[k] - expect).abs() < 1e-12 * expect.abs().max(1.0));
        }
    }
}

#[test]
fn surrogates_at_short_time_scales() {
    let mut r = SeededRng::new(31, 0).rng();
    let tree = random_tree(6, 1.0, &mut r).unwrap();
    let base = model(tree, generator(4, 1, 1.0, &mut r), RootPrior::Uniform, &mut r);
    let deviation = |gamma: f64, mode: GradMode| {
        let mut m = base.clone();
        m.generator.gamma = gamma;
        let exact = tree_loglik_and_grad(&m, GradMode::Exact).unwrap().to_vec();
        let g = tree_loglik_and_grad(&m, mode).unwrap().to_vec();
        let n = g.len() - 1;
        let scale = exact[..n].iter().map(|x| x.abs()).fold(0.0, f64::max);
        g[..n].iter().zip(&exact[..n]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
    };
    let (coarse, fine) = (deviation(1e-2, GradMode::Naive), deviation(1e-3, GradMode::Naive));
    assert!(fine < 0.2 * coarse, "{fine} vs {coarse}");
    assert!(fine < 1e-2, "{fine}");
    // Corrected surrogate keeps a first-order bias on branches that change state.
    let (coarse, fine) = (deviation(1e-2, GradMode::Corrected), deviation(1e-3, GradMode::Corrected));
    assert!(fine > 0.5 * coarse && fine > 0.1, "{fine} vs {coarse}");
}

#[test]
fn single_branch_tree_reproduces_endpoint_likelihood() {
    let tree = parse_newick("(A:1.7,B:0);").unwrap();
    let mut r = SeededRng::new(41, 0).rng();
    let gen = generator(3, 0, 1.0, &mut r);
    let q = build_generator(&gen).unwrap();
    let obs = ObservationMatrix::new(3, vec![2, 0]).unwrap();
    let m = PhyloModel::new(tree, obs, gen, RootPrior::Uniform).unwrap();
    let data = EndpointDataset::new(3, vec![EndpointPair { initial: 0, r#final: 2, lag: 1.7 }]).unwrap();
    let expect = endpoint_loglik(&q, &data).unwrap() + (1.0f64 / 3.0).ln();
    assert!((tree_loglik(&m).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn long_branches_reach_stationarity() {
    let tree = parse_newick("((A:40,B:50):30,(C:45,D:60):35);").unwrap();
    let mut r = SeededRng::new(51, 0).rng();
    let gen = generator(3, 0, 1.0, &mut r);
    let q = build_generator(&gen).unwrap();
    let pi = q.stationary().unwrap();
    let mut counts = [0usize; 3];
    let reps = 10_000;
    for _ in 0..reps {
        let obs = simulate_tree_observations(&tree, &q, 1.0, &[1.0, 0.0, 0.0], &mut r).unwrap();
        counts[obs.states()[0]] += 1;
    }
    let tv: f64 = counts.iter().zip(&pi).map(|(&c, p)| (c as f64 / reps as f64 - p).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.02, "tv {tv}");
}

#[test]
fn simulation_is_seeded() {
    let tree = parse_newick("((A:1,B:1):1,C:2);").unwrap();
    let gen = generator(3, 0, 1.0, &mut SeededRng::new(61, 0).rng());
    let q = build_generator(&gen).unwrap();
    let draw = || simulate_tree_observations(&tree, &q, 1.0, &[0.2, 0.3, 0.5], &mut SeededRng::new(62, 0).rng()).unwrap();
    assert_eq!(draw(), draw());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn likelihood_is_node_invariant(seed in any::<u64>(), d in 2usize..6) {
        let mut r = SeededRng::new(seed, 0).rng();
        let tree = random_tree(8, 0.5, &mut r).unwrap();
        let gen = generator(d, 1, 1.0, &mut r);
        let m = model(tree, gen, RootPrior::Stationary, &mut r);
        let q = build_generator(&m.generator).unwrap();
        let parts = tree_partials(&m.tree, &m.observations, &q, 1.0, &m.root_prior).unwrap();
        let at_root = parts.likelihood_at(m.tree.root());
        for v in 0..m.tree.nodes().len() {
            prop_assert!((parts.likelihood_at(v) - at_root).abs() < 1e-10 * at_root);
        }
    }

    #[test]
    fn likelihood_matches_exhaustive_sum(seed in any::<u64>(), d in 2usize..4, n in 2usize..6) {
        let mut r = SeededRng::new(seed, 0).rng();
        let tree = random_tree(n, 0.6, &mut r).unwrap();
        let gen = generator(d, 1, 0.8, &mut r);
        let root = if seed % 2 == 0 { RootPrior::Uniform } else { RootPrior::Stationary };
        let m = model(tree, gen, root, &mut r);
        let brute = brute_force_likelihood(&m);
        prop_assert!((tree_loglik(&m).unwrap() - brute.ln()).abs() < 1e-10);
    }
}
