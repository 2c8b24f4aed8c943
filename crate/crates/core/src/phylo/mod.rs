//! Tree-structured CTMC likelihood with a mixed-effects generator.
//!
//! Each branch `v` carries `P_v = exp(gamma t_v Q)`. Post-order partials
//! `p_v` collect the data below a node, pre-order partials `q_v` everything
//! above it, and `p_v . q_v` is the likelihood at every node.

mod tree;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use tree::{parse_newick, random_tree, Node, PhyloTree};

use crate::ctmc_data::csv_error;
use crate::ensembles::{off_diagonal_from_vec, off_diagonal_to_vec};
use crate::error::{Error, Result};
use crate::gradients::{adjoint_derivative, compensated_rate_gradient, generator_inverse, GradMode};
use crate::linalg::{rate_transition, Matrix, RateMatrix};

/// Leaf states in the tree's leaf order; column `n` of the one-hot matrix `Y`
/// has its single 1 in row `states[n]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMatrix {
    dim: usize,
    states: Vec<usize>,
}

#[derive(Debug, Deserialize, Serialize)]
struct LeafRecord {
    leaf: String,
    state_index: usize,
}

impl ObservationMatrix {
    pub fn new(dim: usize, states: Vec<usize>) -> Result<Self> {
        if let Some(&s) = states.iter().find(|&&s| s >= dim) {
            return Err(Error::InvalidArgument(format!("leaf state {s} out of range for d = {dim}")));
        }
        Ok(Self { dim, states })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn matrix(&self) -> Matrix {
        let mut y = Matrix::zeros(self.dim, self.states.len());
        for (n, &s) in self.states.iter().enumerate() {
            y[(s, n)] = 1.0;
        }
        y
    }

    /// Read a `leaf,state_index` CSV and order it by the tree's leaves.
    pub fn read_csv(path: impl AsRef<Path>, tree: &PhyloTree, dim: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
        let mut by_name = HashMap::new();
        for (line, rec) in r.deserialize().enumerate() {
            let rec: LeafRecord = rec.map_err(|e| Error::Parse { position: line + 2, expected: e.to_string() })?;
            by_name.insert(rec.leaf, rec.state_index);
        }
        let states = tree
            .leaf_names()
            .iter()
            .map(|name| {
                by_name
                    .get(name)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("no state given for leaf `{name}`")))
            })
            .collect::<Result<_>>()?;
        Self::new(dim, states)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, tree: &PhyloTree) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        for (leaf, &state_index) in tree.leaf_names().into_iter().zip(&self.states) {
            w.serialize(LeafRecord { leaf, state_index }).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `log q_ij = sum_k theta_k [X_k]_ij + eps_ij` for `i != j`, scaled in time by `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedEffectsGenerator {
    pub predictors: Vec<Matrix>,
    pub theta: Vec<f64>,
    /// Row-major over `i != j`.
    pub epsilon: Vec<f64>,
    pub gamma: f64,
}

impl MixedEffectsGenerator {
    pub fn new(predictors: Vec<Matrix>, theta: Vec<f64>, epsilon: Vec<f64>, gamma: f64) -> Result<Self> {
        let g = Self { predictors, theta, epsilon, gamma };
        g.validate()?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        // d (d - 1) = len
        let n = self.epsilon.len();
        (1 + (1.0 + 4.0 * n as f64).sqrt() as usize) / 2
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d < 2 || d * (d - 1) != self.epsilon.len() {
            return Err(Error::InvalidArgument(format!("{} random effects is not d(d-1)", self.epsilon.len())));
        }
        if self.theta.len() != self.predictors.len() {
            return Err(Error::DimensionMismatch { expected: self.predictors.len(), got: self.theta.len() });
        }
        for x in &self.predictors {
            if x.nrows() != d || x.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: x.nrows() });
            }
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("rate scalar must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Number of regression parameters `K + d(d-1)`.
    pub fn n_regression(&self) -> usize {
        self.theta.len() + self.epsilon.len()
    }

    /// `(theta, eps)` as one vector.
    pub fn regression_params(&self) -> Vec<f64> {
        self.theta.iter().chain(&self.epsilon).copied().collect()
    }

    pub fn set_regression_params(&mut self, x: &[f64]) {
        let k = self.theta.len();
        self.theta.copy_from_slice(&x[..k]);
        self.epsilon.copy_from_slice(&x[k..]);
    }

    fn log_rates(&self) -> Matrix {
        let d = self.dim();
        let mut b = off_diagonal_from_vec(d, &self.epsilon);
        for (x, th) in self.predictors.iter().zip(&self.theta) {
            b += x * *th;
        }
        b
    }
}

/// Off-diagonals `exp(b_ij + eps_ij)`, diagonal negative row sums.
pub fn build_generator(model: &MixedEffectsGenerator) -> Result<RateMatrix> {
    model.validate()?;
    let d = model.dim();
    let b = model.log_rates();
    let rates = Matrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { b[(i, j)].exp() });
    if rates.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("rate overflow"));
    }
    RateMatrix::from_off_diagonal(rates)
}

/// Root pre-order vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RootPrior {
    Uniform,
    Stationary,
    Custom { probs: Vec<f64> },
}

impl RootPrior {
    pub fn vector(&self, q: &RateMatrix) -> Result<DVector<f64>> {
        let d = q.dim();
        match self {
            RootPrior::Uniform => Ok(DVector::from_element(d, 1.0 / d as f64)),
            RootPrior::Stationary => Ok(DVector::from_vec(q.stationary()?)),
            RootPrior::Custom { probs } => {
                if probs.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: probs.len() });
                }
                let sum: f64 = probs.iter().sum();
                if probs.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-10 {
                    return Err(Error::InvalidArgument("root prior must be a probability vector".into()));
                }
                Ok(DVector::from_column_slice(probs))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhyloModel {
    pub tree: PhyloTree,
    pub observations: ObservationMatrix,
    pub generator: MixedEffectsGenerator,
    pub root_prior: RootPrior,
}

impl PhyloModel {
    pub fn new(
        tree: PhyloTree,
        observations: ObservationMatrix,
        generator: MixedEffectsGenerator,
        root_prior: RootPrior,
    ) -> Result<Self> {
        generator.validate()?;
        if observations.states.len() != tree.n_leaves() {
            return Err(Error::DimensionMismatch { expected: tree.n_leaves(), got: observations.states.len() });
        }
        if observations.dim != generator.dim() {
            return Err(Error::DimensionMismatch { expected: generator.dim(), got: observations.dim });
        }
        Ok(Self { tree, observations, generator, root_prior })
    }
}

/// Sample leaf states by drawing the root from `root_dist` and each child
/// from its parent's row of `exp(gamma t_v Q)`.
pub fn simulate_tree_observations<R: Rng + ?Sized>(
    tree: &PhyloTree,
    q: &RateMatrix,
    gamma: f64,
    root_dist: &[f64],
    rng: &mut R,
) -> Result<ObservationMatrix> {
    let d = q.dim();
    if root_dist.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: root_dist.len() });
    }
    let weighted = |w: &[f64]| {
        WeightedIndex::new(w.iter().map(|x| x.max(0.0))).map_err(|e| Error::InvalidArgument(format!("weights: {e}")))
    };
    let cache = BranchTransitions::new(tree, q, gamma)?;
    let mut state = vec![0usize; tree.nodes().len()];
    state[tree.root()] = weighted(root_dist)?.sample(rng);
    for v in tree.pre_order() {
        if v == tree.root() {
            continue;
        }
        let parent = tree.node(v).parent.expect("non-root has parent");
        let row: Vec<f64> = cache.get(v).row(state[parent]).iter().copied().collect();
        state[v] = weighted(&row)?.sample(rng);
    }
    ObservationMatrix::new(d, tree.leaves().iter().map(|&v| state[v]).collect())
}

/// `exp(gamma t_v Q)` for every branch, computed once per distinct `gamma t_v`.
#[derive(Debug, Clone)]
pub struct BranchTransitions {
    scaled_lengths: Vec<f64>,
    slot: Vec<usize>,
    matrices: Vec<Matrix>,
}

impl BranchTransitions {
    pub fn new(tree: &PhyloTree, q: &RateMatrix, gamma: f64) -> Result<Self> {
        let n = tree.nodes().len();
        let mut scaled_lengths = vec![0.0; n];
        let mut slot = vec![0; n];
        let mut index: HashMap<u64, usize> = HashMap::new();
        let mut lengths = Vec::new();
        for v in tree.branches() {
            let s = gamma * tree.node(v).branch_length;
            scaled_lengths[v] = s;
            slot[v] = *index.entry(s.to_bits()).or_insert_with(|| {
                lengths.push(s);
                lengths.len() - 1
            });
        }
        let matrices = lengths.iter().map(|&s| rate_transition(q.matrix(), s)).collect::<Result<_>>()?;
        Ok(Self { scaled_lengths, slot, matrices })
    }

    /// `P_v`; only meaningful for non-root nodes.
    pub fn get(&self, v: usize) -> &Matrix {
        &self.matrices[self.slot[v]]
    }

    pub fn scaled_length(&self, v: usize) -> f64 {
        self.scaled_lengths[v]
    }

    pub fn n_distinct(&self) -> usize {
        self.matrices.len()
    }
}

#[derive(Debug, Clone)]
pub struct PartialLikelihoods {
    pub post_order: Vec<DVector<f64>>,
    pub pre_order: Vec<DVector<f64>>,
    pub root_prior: DVector<f64>,
}

impl PartialLikelihoods {
    /// `p_v . q_v`, equal to the likelihood at every node.
    pub fn likelihood_at(&self, v: usize) -> f64 {
        self.post_order[v].dot(&self.pre_order[v])
    }
}

fn partials_with(tree: &PhyloTree, obs: &ObservationMatrix, cache: &BranchTransitions, root_prior: DVector<f64>) -> PartialLikelihoods {
    let d = obs.dim();
    let n = tree.nodes().len();
    let mut post = vec![DVector::zeros(d); n];
    for (&leaf, &s) in tree.leaves().iter().zip(obs.states()) {
        post[leaf][s] = 1.0;
    }
    // P_v p_v, reused by both passes.
    let mut up = vec![DVector::zeros(d); n];
    for &v in tree.post_order() {
        let node = tree.node(v);
        if !node.children.is_empty() {
            let (a, b) = (node.children[0], node.children[1]);
            post[v] = up[a].component_mul(&up[b]);
        }
        if v != tree.root() {
            up[v] = cache.get(v) * &post[v];
        }
    }
    let mut pre = vec![DVector::zeros(d); n];
    pre[tree.root()] = root_prior.clone();
    for v in tree.pre_order() {
        if v == tree.root() {
            continue;
        }
        let u = tree.node(v).parent.expect("non-root has parent");
        let w = tree.sibling(v).expect("bifurcating");
        pre[v] = cache.get(v).tr_mul(&pre[u].component_mul(&up[w]));
    }
    PartialLikelihoods { post_order: post, pre_order: pre, root_prior }
}

pub fn tree_partials(
    tree: &PhyloTree,
    obs: &ObservationMatrix,
    q: &RateMatrix,
    gamma: f64,
    root_prior: &RootPrior,
) -> Result<PartialLikelihoods> {
    if obs.states().len() != tree.n_leaves() {
        return Err(Error::DimensionMismatch { expected: tree.n_leaves(), got: obs.states().len() });
    }
    if obs.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: q.dim(), got: obs.dim() });
    }
    let cache = BranchTransitions::new(tree, q, gamma)?;
    Ok(partials_with(tree, obs, &cache, root_prior.vector(q)?))
}

pub fn tree_loglik(model: &PhyloModel) -> Result<f64> {
    let q = build_generator(&model.generator)?;
    let partials = tree_partials(&model.tree, &model.observations, &q, model.generator.gamma, &model.root_prior)?;
    let lik = partials.likelihood_at(model.tree.root());
    if lik > 0.0 {
        Ok(lik.ln())
    } else {
        Err(Error::ZeroLikelihood)
    }
}

/// Sensitivity of the likelihood to `P_v`: `(q_u o P_w p_w) p_v^T` for parent
/// `u` and sibling `w`, so that `dL = sum_v <A_v, dP_v>`.
pub fn branch_sensitivity(tree: &PhyloTree, partials: &PartialLikelihoods, cache: &BranchTransitions, v: usize) -> Matrix {
    let u = tree.node(v).parent.expect("branch sensitivity needs a non-root node");
    let w = tree.sibling(v).expect("bifurcating");
    let left = partials.pre_order[u].component_mul(&(cache.get(w) * &partials.post_order[w]));
    &left * partials.post_order[v].transpose()
}

/// Log-likelihood and its gradient, ordered `(theta, eps, gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGradient {
    pub loglik: f64,
    pub theta: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub gamma: f64,
}

impl TreeGradient {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.theta.iter().chain(&self.epsilon).copied().collect();
        v.push(self.gamma);
        v
    }
}

pub fn tree_loglik_and_grad(model: &PhyloModel, mode: GradMode) -> Result<TreeGradient> {
    let gen = &model.generator;
    let tree = &model.tree;
    let q = build_generator(gen)?;
    let qm = q.matrix();
    let d = q.dim();
    let cache = BranchTransitions::new(tree, &q, gen.gamma)?;
    let partials = partials_with(tree, &model.observations, &cache, model.root_prior.vector(&q)?);
    let lik = partials.likelihood_at(tree.root());
    if !(lik > 0.0) {
        return Err(Error::ZeroLikelihood);
    }
    let qplus = if mode == GradMode::Corrected { Some(generator_inverse(qm)?) } else { None };

    let mut g = Matrix::zeros(d, d);
    let mut dgamma = 0.0;
    for v in tree.branches() {
        let s = cache.scaled_length(v);
        let a = branch_sensitivity(tree, &partials, &cache, v);
        let p = cache.get(v);
        g += adjoint_derivative(qm, &a, s, mode, Some(p), qplus.as_ref())?;
        dgamma += tree.node(v).branch_length * a.dot(&(qm * p));
    }
    if model.root_prior == RootPrior::Stationary {
        g += stationary_adjoint(qm, &partials, tree.root())?;
    }
    g /= lik;
    dgamma /= lik;

    let rate_grad = compensated_rate_gradient(&g).component_mul(qm);
    let epsilon = off_diagonal_to_vec(&rate_grad);
    let theta = gen.predictors.iter().map(|x| off_diagonal_to_vec(&rate_grad.component_mul(x)).iter().sum()).collect();
    Ok(TreeGradient { loglik: lik.ln(), theta, epsilon, gamma: dgamma })
}

pub fn tree_loglik_grad(model: &PhyloModel, mode: GradMode) -> Result<Vec<f64>> {
    tree_loglik_and_grad(model, mode).map(|g| g.to_vec())
}

/// Contribution of a stationary root vector: with `A = [Q^T; 1^T]` and
/// `z = A (A^T A)^-1 p_root`, `p_root . d(pi) = -<pi z_{1..d}^T, dQ>`.
fn stationary_adjoint(q: &Matrix, partials: &PartialLikelihoods, root: usize) -> Result<Matrix> {
    let d = q.nrows();
    let mut a = Matrix::zeros(d + 1, d);
    a.view_mut((0, 0), (d, d)).copy_from(&q.transpose());
    a.row_mut(d).fill(1.0);
    let p_root = &partials.post_order[root];
    let y = (a.transpose() * &a)
        .lu()
        .solve(p_root)
        .ok_or_else(|| Error::InvalidArgument("generator is reducible".into()))?;
    let z = (&a * y).rows(0, d).into_owned();
    Ok(-(&partials.root_prior * z.transpose()))
}
