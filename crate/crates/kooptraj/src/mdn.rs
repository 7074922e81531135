//! Mixture-density goal estimator: a two-hidden-layer perceptron whose
//! head parameterizes a diagonal Gaussian mixture over the temporal
//! goal, trained by negative log-likelihood with Adam. Forward,
//! backward, and the optimizer are implemented here from scratch.
//!
//! Head layout for M components over d = 2 goal coordinates:
//! `[logits (M) | means (M*d, component-major) | raw log-sigmas (M*d)]`.
//! Weights come out of softmax over the logits; sigmas are
//! `exp(raw)` clamped to `[sigma_min, sigma_max]`.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{AgentClass, ContextSet, Standardizer};
use crate::observables::LAYOUT_VERSION;

pub const SIGMA_MIN: f64 = 1e-3;
pub const SIGMA_MAX: f64 = 1e3;
const GOAL_DIM: usize = 2;

/// Optimizer and schedule settings for goal-estimator training.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub mixtures: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 30,
            mixtures: 5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.mixtures == 0 {
            return Err(Error::InvalidParam(
                "learning rate, batch size, and mixture count must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// An M-component diagonal Gaussian mixture over the 2-D goal.
#[derive(Clone, Debug)]
pub struct GoalMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vector2<f64>>,
    pub stds: Vec<Vector2<f64>>,
}

impl GoalMixture {
    pub fn mixtures(&self) -> usize {
        self.weights.len()
    }
}

/// `-log sum_j pi_j N(g; mu_j, diag sigma_j^2)` via max-shifted
/// log-sum-exp.
pub fn nll(mixture: &GoalMixture, goal: Vector2<f64>) -> f64 {
    let mut log_terms = Vec::with_capacity(mixture.mixtures());
    for j in 0..mixture.mixtures() {
        let mu = mixture.means[j];
        let sd = mixture.stds[j];
        let mut log_n = 0.0;
        for ax in 0..GOAL_DIM {
            let (g, m, s) = (goal[ax], mu[ax], sd[ax]);
            log_n -= s.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
            log_n -= 0.5 * ((g - m) / s).powi(2);
        }
        log_terms.push(mixture.weights[j].max(f64::MIN_POSITIVE).ln() + log_n);
    }
    -log_sum_exp(&log_terms)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `E[g] = sum_j pi_j mu_j`.
pub fn expected_goal(mixture: &GoalMixture) -> Vector2<f64> {
    mixture
        .weights
        .iter()
        .zip(&mixture.means)
        .fold(Vector2::zeros(), |acc, (&w, &mu)| acc + mu * w)
}

/// Draw `k` goals: component by categorical weights, then a diagonal
/// Gaussian sample. Reproducible under the seed.
pub fn sample_goals(mixture: &GoalMixture, k: usize, seed: u64) -> Vec<Vector2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_goals_rng(mixture, k, &mut rng)
}

pub fn sample_goals_rng(
    mixture: &GoalMixture,
    k: usize,
    rng: &mut impl Rng,
) -> Vec<Vector2<f64>> {
    (0..k)
        .map(|_| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut j = mixture.mixtures() - 1;
            for (idx, &w) in mixture.weights.iter().enumerate() {
                acc += w;
                if u <= acc {
                    j = idx;
                    break;
                }
            }
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            mixture.means[j] + Vector2::new(nx * mixture.stds[j].x, ny * mixture.stds[j].y)
        })
        .collect()
}

#[derive(Clone, Debug)]
struct Affine {
    /// out x in
    w: DMatrix<f64>,
    b: DVector<f64>,
}

impl Affine {
    fn new(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        // Fan-in-scaled uniform init, zero bias.
        let bound = 1.0 / (cols as f64).sqrt();
        Self {
            w: DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound)),
            b: DVector::zeros(rows),
        }
    }

    /// X: n x in -> n x out.
    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * self.w.transpose();
        for mut row in out.row_iter_mut() {
            row += self.b.transpose();
        }
        out
    }
}

/// The goal-estimator network: input -> hidden layers (rectified) ->
/// mixture head.
#[derive(Clone, Debug)]
pub struct MdnNetwork {
    layers: Vec<Affine>,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub mixtures: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl MdnNetwork {
    pub fn new(input_dim: usize, hidden: &[usize], mixtures: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || mixtures == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidParam("network dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(Affine::new(h, prev, &mut rng));
            prev = h;
        }
        layers.push(Affine::new(mixtures * (1 + 2 * GOAL_DIM), prev, &mut rng));
        Ok(Self {
            layers,
            input_dim,
            hidden: hidden.to_vec(),
            mixtures,
            sigma_min: SIGMA_MIN,
            sigma_max: SIGMA_MAX,
        })
    }

    pub fn head_width(&self) -> usize {
        self.mixtures * (1 + 2 * GOAL_DIM)
    }

    /// Zero the head layer; the mixture then degenerates to uniform
    /// weights with means 0 (useful for tests).
    pub fn zero_head(&mut self) {
        let head = self.layers.last_mut().expect("head layer");
        head.w.fill(0.0);
        head.b.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_finite(&self) -> Result<()> {
        for l in &self.layers {
            if l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NanInData("network parameters".into()));
            }
        }
        Ok(())
    }

    /// Mixture for one feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<GoalMixture> {
        if x.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                what: "feature vector vs network input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        self.check_finite()?;
        let xm = DMatrix::from_row_slice(1, x.len(), x);
        let head = self.forward_cached(&xm).head;
        Ok(self.mixture_from_head_row(&head, 0))
    }

    fn forward_cached(&self, x: &DMatrix<f64>) -> ForwardCache {
        let mut activations = vec![x.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut a = layer.forward(activations.last().unwrap());
            if i + 1 < self.layers.len() {
                a.apply(|v| *v = v.max(0.0));
            }
            activations.push(a);
        }
        let head = activations.pop().unwrap();
        ForwardCache { activations, head }
    }

    fn mixture_from_head_row(&self, head: &DMatrix<f64>, row: usize) -> GoalMixture {
        let m = self.mixtures;
        let logits: Vec<f64> = (0..m).map(|j| head[(row, j)]).collect();
        let max_logit = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max_logit).exp()).collect();
        let total: f64 = exp.iter().sum();
        let weights: Vec<f64> = exp.iter().map(|e| e / total).collect();
        let means = (0..m)
            .map(|j| {
                Vector2::new(
                    head[(row, m + j * GOAL_DIM)],
                    head[(row, m + j * GOAL_DIM + 1)],
                )
            })
            .collect();
        let stds = (0..m)
            .map(|j| {
                let base = m + m * GOAL_DIM + j * GOAL_DIM;
                Vector2::new(
                    head[(row, base)].exp().clamp(self.sigma_min, self.sigma_max),
                    head[(row, base + 1)].exp().clamp(self.sigma_min, self.sigma_max),
                )
            })
            .collect();
        GoalMixture { weights, means, stds }
    }

    /// Mean NLL of a batch.
    pub fn mean_nll(&self, xs: &DMatrix<f64>, goals: &[Vector2<f64>]) -> f64 {
        let cache = self.forward_cached(xs);
        (0..xs.nrows())
            .map(|i| nll(&self.mixture_from_head_row(&cache.head, i), goals[i]))
            .sum::<f64>()
            / xs.nrows() as f64
    }

    /// Mean NLL and its gradient over a batch.
    pub fn grad(&self, xs: &DMatrix<f64>, goals: &[Vector2<f64>]) -> Result<(Gradients, f64)> {
        let n = xs.nrows();
        if n == 0 || n != goals.len() {
            return Err(Error::ShapeMismatch {
                what: "batch rows vs goals",
                expected: n,
                got: goals.len(),
            });
        }
        if xs.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                what: "batch width vs network input",
                expected: self.input_dim,
                got: xs.ncols(),
            });
        }
        let m = self.mixtures;
        let cache = self.forward_cached(xs);
        let head = &cache.head;

        let mut d_head = DMatrix::zeros(n, self.head_width());
        let mut total_nll = 0.0;
        for i in 0..n {
            let mix = self.mixture_from_head_row(head, i);
            let g = goals[i];

            // responsibilities r_j = softmax(log pi_j + log N_j)
            let mut log_terms = Vec::with_capacity(m);
            for j in 0..m {
                let mu = mix.means[j];
                let sd = mix.stds[j];
                let mut log_n = 0.0;
                for ax in 0..GOAL_DIM {
                    log_n -= sd[ax].ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
                    log_n -= 0.5 * ((g[ax] - mu[ax]) / sd[ax]).powi(2);
                }
                log_terms.push(mix.weights[j].max(f64::MIN_POSITIVE).ln() + log_n);
            }
            let lse = log_sum_exp(&log_terms);
            total_nll += -lse;
            let resp: Vec<f64> = log_terms.iter().map(|t| (t - lse).exp()).collect();

            let inv_n = 1.0 / n as f64;
            for j in 0..m {
                d_head[(i, j)] = (mix.weights[j] - resp[j]) * inv_n;
                for ax in 0..GOAL_DIM {
                    let mu = mix.means[j][ax];
                    let sd = mix.stds[j][ax];
                    d_head[(i, m + j * GOAL_DIM + ax)] =
                        resp[j] * (mu - g[ax]) / (sd * sd) * inv_n;
                    // d sigma / d raw = sigma unless the clamp is active
                    let base = m + m * GOAL_DIM + j * GOAL_DIM;
                    let raw = head[(i, base + ax)];
                    let clamped = raw.exp() < self.sigma_min || raw.exp() > self.sigma_max;
                    if !clamped {
                        let z = (g[ax] - mu) / sd;
                        d_head[(i, base + ax)] = resp[j] * (1.0 - z * z) * inv_n;
                    }
                }
            }
        }

        // Backpropagate through the affine stack.
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = d_head;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[li];
            let dw = delta.transpose() * input;
            let db = DVector::from_iterator(
                delta.ncols(),
                delta.column_iter().map(|c| c.sum()),
            );
            if li > 0 {
                let mut d_prev = &delta * &layer.w;
                // rectifier derivative from the cached activation
                let act = &cache.activations[li];
                for r in 0..d_prev.nrows() {
                    for c in 0..d_prev.ncols() {
                        if act[(r, c)] <= 0.0 {
                            d_prev[(r, c)] = 0.0;
                        }
                    }
                }
                delta = d_prev;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, total_nll / n as f64))
    }
}

struct ForwardCache {
    /// activations[0] is the input; activations[i] the rectified output
    /// of layer i-1.
    activations: Vec<DMatrix<f64>>,
    head: DMatrix<f64>,
}

/// Per-layer parameter gradients.
#[derive(Clone, Debug)]
pub struct Gradients {
    layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

/// Adam state over the network parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: TrainConfig,
    m: Vec<(DMatrix<f64>, DVector<f64>)>,
    v: Vec<(DMatrix<f64>, DVector<f64>)>,
    step: usize,
}

impl Adam {
    pub fn new(net: &MdnNetwork, cfg: TrainConfig) -> Self {
        let zeros: Vec<_> = net
            .layers
            .iter()
            .map(|l| (DMatrix::zeros(l.w.nrows(), l.w.ncols()), DVector::zeros(l.b.len())))
            .collect();
        Self { cfg, m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step(&mut self, net: &mut MdnNetwork, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let lr = self.cfg.learning_rate * (1.0 - self.cfg.beta2.powi(t)).sqrt()
            / (1.0 - self.cfg.beta1.powi(t));
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[li];
            let (mw, mb) = &mut self.m[li];
            let (vw, vb) = &mut self.v[li];
            for (((w, g), m1), v2) in
                layer.w.iter_mut().zip(gw.iter()).zip(mw.iter_mut()).zip(vw.iter_mut())
            {
                *m1 = self.cfg.beta1 * *m1 + (1.0 - self.cfg.beta1) * g;
                *v2 = self.cfg.beta2 * *v2 + (1.0 - self.cfg.beta2) * g * g;
                *w -= lr * *m1 / (v2.sqrt() + self.cfg.eps);
            }
            for (((b, g), m1), v2) in
                layer.b.iter_mut().zip(gb.iter()).zip(mb.iter_mut()).zip(vb.iter_mut())
            {
                *m1 = self.cfg.beta1 * *m1 + (1.0 - self.cfg.beta1) * g;
                *v2 = self.cfg.beta2 * *v2 + (1.0 - self.cfg.beta2) * g * g;
                *b -= lr * *m1 / (v2.sqrt() + self.cfg.eps);
            }
        }
    }
}

/// Training set for the goal estimator: one feature row per window.
#[derive(Clone, Debug)]
pub struct GoalDataset {
    pub features: DMatrix<f64>,
    pub goals: Vec<Vector2<f64>>,
}

impl GoalDataset {
    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Mean NLL per epoch.
    pub epoch_losses: Vec<f64>,
    /// Set when a NaN loss aborted training; the network is rolled back
    /// to the last finite checkpoint.
    pub diverged: bool,
}

/// Minibatch NLL training with Adam. Deterministic under the config
/// seed. On divergence the last finite checkpoint is restored.
pub fn train(net: &mut MdnNetwork, dataset: &GoalDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("goal estimator training".into()));
    }
    let n = dataset.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(net, *cfg);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut checkpoint = net.clone();

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut epoch_loss = 0.0;
        let mut diverged = false;
        for batch in order.chunks(cfg.batch_size) {
            let xs = select_rows(&dataset.features, batch);
            let gs: Vec<Vector2<f64>> = batch.iter().map(|&i| dataset.goals[i]).collect();
            let (grads, loss) = net.grad(&xs, &gs)?;
            if !loss.is_finite() {
                diverged = true;
                break;
            }
            optimizer.step(net, &grads);
            epoch_loss += loss * batch.len() as f64;
        }
        if diverged || net.check_finite().is_err() {
            *net = checkpoint;
            return Ok(TrainReport { epoch_losses: losses, diverged: true });
        }
        losses.push(epoch_loss / n as f64);
        checkpoint = net.clone();
    }
    Ok(TrainReport { epoch_losses: losses, diverged: false })
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), m.ncols());
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).copy_from(&m.row(i));
    }
    out
}

/// Feature vector layout: standardized ego history (2H values, oldest to
/// newest, x before y), then for vehicle-profile models N context slots
/// of (x, y, presence).
pub fn goal_features(
    history: &[Vector2<f64>],
    context: Option<&ContextSet>,
    context_slots: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * history.len() + 3 * context_slots);
    for p in history {
        out.push(p.x);
        out.push(p.y);
    }
    if context_slots > 0 {
        let empty = ContextSet::empty(1.0);
        let ctx = context.unwrap_or(&empty);
        for slot in ctx.padded_slots(context_slots) {
            out.extend_from_slice(&slot);
        }
    }
    out
}

/// A trained goal estimator bundled with everything needed to featurize
/// at inference time.
#[derive(Clone, Debug)]
pub struct GoalModel {
    pub net: MdnNetwork,
    pub agent_class: AgentClass,
    pub history_len: usize,
    /// 0 for history-only profiles.
    pub context_slots: usize,
    pub context_radius: f64,
    pub standardizer: Standardizer,
    pub seed: u64,
}

impl GoalModel {
    pub fn input_dim(&self) -> usize {
        2 * self.history_len + 3 * self.context_slots
    }

    /// Mixture for a standardized ego-frame history window (+ context).
    pub fn mixture(
        &self,
        history_std: &[Vector2<f64>],
        context_std: Option<&ContextSet>,
    ) -> Result<GoalMixture> {
        if history_std.len() != self.history_len {
            return Err(Error::ShapeMismatch {
                what: "history window vs goal model",
                expected: self.history_len,
                got: history_std.len(),
            });
        }
        let x = goal_features(history_std, context_std, self.context_slots);
        self.net.forward(&x)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = GoalModelFile::from(self);
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: GoalModelFile = serde_json::from_str(&text)?;
        file.into_model()
    }
}

#[derive(Serialize, Deserialize)]
struct AffineFile {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GoalModelFile {
    layout_version: u32,
    agent_class: AgentClass,
    history_len: usize,
    context_slots: usize,
    context_radius: f64,
    input_dim: usize,
    hidden: Vec<usize>,
    mixtures: usize,
    sigma_min: f64,
    sigma_max: f64,
    standardizer: Standardizer,
    seed: u64,
    layers: Vec<AffineFile>,
}

impl From<&GoalModel> for GoalModelFile {
    fn from(m: &GoalModel) -> Self {
        Self {
            layout_version: LAYOUT_VERSION,
            agent_class: m.agent_class,
            history_len: m.history_len,
            context_slots: m.context_slots,
            context_radius: m.context_radius,
            input_dim: m.net.input_dim,
            hidden: m.net.hidden.clone(),
            mixtures: m.net.mixtures,
            sigma_min: m.net.sigma_min,
            sigma_max: m.net.sigma_max,
            standardizer: m.standardizer.clone(),
            seed: m.seed,
            layers: m
                .net
                .layers
                .iter()
                .map(|l| AffineFile {
                    rows: l.w.nrows(),
                    cols: l.w.ncols(),
                    w: l.w.transpose().as_slice().to_vec(), // row-major
                    b: l.b.as_slice().to_vec(),
                })
                .collect(),
        }
    }
}

impl GoalModelFile {
    fn into_model(self) -> Result<GoalModel> {
        if self.layout_version != LAYOUT_VERSION {
            return Err(Error::ModelMismatch(format!(
                "unsupported layout version {}",
                self.layout_version
            )));
        }
        let mut net = MdnNetwork::new(self.input_dim, &self.hidden, self.mixtures, 0)?;
        net.sigma_min = self.sigma_min;
        net.sigma_max = self.sigma_max;
        if self.layers.len() != net.layers.len() {
            return Err(Error::ModelMismatch("layer count mismatch".into()));
        }
        for (layer, file) in net.layers.iter_mut().zip(&self.layers) {
            if layer.w.nrows() != file.rows
                || layer.w.ncols() != file.cols
                || file.w.len() != file.rows * file.cols
                || file.b.len() != file.rows
            {
                return Err(Error::ModelMismatch("layer shape mismatch".into()));
            }
            layer.w = DMatrix::from_row_slice(file.rows, file.cols, &file.w);
            layer.b = DVector::from_row_slice(&file.b);
        }
        Ok(GoalModel {
            net,
            agent_class: self.agent_class,
            history_len: self.history_len,
            context_slots: self.context_slots,
            context_radius: self.context_radius,
            standardizer: self.standardizer,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_net(seed: u64) -> MdnNetwork {
        MdnNetwork::new(2, &[4], 2, seed).unwrap()
    }

    #[test]
    fn zeroed_head_gives_uniform_weights() {
        let mut net = MdnNetwork::new(3, &[8, 8], 5, 1).unwrap();
        net.zero_head();
        let mix = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        for w in &mix.weights {
            assert_relative_eq!(*w, 0.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_component_weight_is_one() {
        let net = MdnNetwork::new(2, &[4], 1, 3).unwrap();
        let mix = net.forward(&[0.5, 0.5]).unwrap();
        assert_eq!(mix.weights.len(), 1);
        assert_relative_eq!(mix.weights[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn weights_normalized_for_random_net() {
        for seed in 0..5 {
            let net = MdnNetwork::new(6, &[16, 16], 4, seed).unwrap();
            let x: Vec<f64> = (0..6).map(|i| (i as f64 - 2.5) * 0.7).collect();
            let mix = net.forward(&x).unwrap();
            let total: f64 = mix.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(mix.stds.iter().all(|s| s.x >= SIGMA_MIN && s.y >= SIGMA_MIN));
        }
    }

    #[test]
    fn nll_closed_form_at_mean() {
        let mix = GoalMixture {
            weights: vec![1.0],
            means: vec![Vector2::new(0.3, -0.7)],
            stds: vec![Vector2::new(1.0, 1.0)],
        };
        let v = nll(&mix, Vector2::new(0.3, -0.7));
        assert_relative_eq!(v, (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn duplicated_components_collapse() {
        let mu = Vector2::new(1.0, 2.0);
        let sd = Vector2::new(0.5, 1.5);
        let single = GoalMixture { weights: vec![1.0], means: vec![mu], stds: vec![sd] };
        let double = GoalMixture {
            weights: vec![0.5, 0.5],
            means: vec![mu, mu],
            stds: vec![sd, sd],
        };
        let g = Vector2::new(0.0, 0.5);
        assert_relative_eq!(nll(&single, g), nll(&double, g), epsilon = 1e-12);
    }

    #[test]
    fn nll_grows_quadratically_far_away() {
        let mix = GoalMixture {
            weights: vec![1.0],
            means: vec![Vector2::zeros()],
            stds: vec![Vector2::new(1.0, 1.0)],
        };
        // direct density evaluation as the oracle
        let dens = |g: Vector2<f64>| {
            (1.0 / (2.0 * std::f64::consts::PI)) * (-0.5 * (g.x * g.x + g.y * g.y)).exp()
        };
        for r in [1.0, 3.0, 6.0] {
            let g = Vector2::new(r, 0.0);
            assert_relative_eq!(nll(&mix, g), -dens(g).ln(), epsilon = 1e-9);
        }
        // quadratic growth
        let f = |r: f64| nll(&mix, Vector2::new(r, 0.0));
        let base = f(0.0);
        assert_relative_eq!(f(4.0) - base, 8.0, epsilon = 1e-9);
        assert_relative_eq!(f(8.0) - base, 32.0, epsilon = 1e-9);
    }

    #[test]
    fn log_sum_exp_matches_naive_density() {
        let mix = GoalMixture {
            weights: vec![0.3, 0.7],
            means: vec![Vector2::new(-1.0, 0.0), Vector2::new(2.0, 1.0)],
            stds: vec![Vector2::new(0.8, 1.2), Vector2::new(0.5, 0.9)],
        };
        let g = Vector2::new(0.4, 0.2);
        let gauss = |g: Vector2<f64>, mu: Vector2<f64>, sd: Vector2<f64>| {
            let mut d = 1.0;
            for ax in 0..2 {
                d *= (-(g[ax] - mu[ax]).powi(2) / (2.0 * sd[ax] * sd[ax])).exp()
                    / (sd[ax] * (2.0 * std::f64::consts::PI).sqrt());
            }
            d
        };
        let naive = -(0.3 * gauss(g, mix.means[0], mix.stds[0])
            + 0.7 * gauss(g, mix.means[1], mix.stds[1]))
        .ln();
        assert!((nll(&mix, g) - naive).abs() < 1e-10);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = tiny_net(11);
        let xs = DMatrix::from_row_slice(3, 2, &[0.4, -0.2, 1.0, 0.3, -0.8, 0.9]);
        let goals = vec![
            Vector2::new(0.5, 0.1),
            Vector2::new(-0.3, 0.8),
            Vector2::new(0.2, -0.4),
        ];
        let (grads, _) = net.grad(&xs, &goals).unwrap();

        let step = 1e-5;
        let mut max_rel = 0.0f64;
        for li in 0..net.layers.len() {
            // weights
            for idx in 0..net.layers[li].w.len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                plus.layers[li].w.as_mut_slice()[idx] += step;
                minus.layers[li].w.as_mut_slice()[idx] -= step;
                let fd =
                    (plus.mean_nll(&xs, &goals) - minus.mean_nll(&xs, &goals)) / (2.0 * step);
                let an = grads.layers[li].0.as_slice()[idx];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                max_rel = max_rel.max((fd - an).abs() / denom);
            }
            for idx in 0..net.layers[li].b.len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                plus.layers[li].b[idx] += step;
                minus.layers[li].b[idx] -= step;
                let fd =
                    (plus.mean_nll(&xs, &goals) - minus.mean_nll(&xs, &goals)) / (2.0 * step);
                let an = grads.layers[li].1[idx];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                max_rel = max_rel.max((fd - an).abs() / denom);
            }
        }
        assert!(max_rel < 1e-4, "max relative gradient error {max_rel}");
    }

    #[test]
    fn overfits_a_single_pair() {
        let mut net = tiny_net(5);
        let cfg = TrainConfig { mixtures: 2, ..TrainConfig::default() };
        let xs = DMatrix::from_row_slice(1, 2, &[0.7, -0.4]);
        let goals = vec![Vector2::new(1.5, -2.0)];
        let mut optimizer = Adam::new(&net, cfg);
        let mut losses = Vec::new();
        for _ in 0..500 {
            let (grads, loss) = net.grad(&xs, &goals).unwrap();
            losses.push(loss);
            optimizer.step(&mut net, &grads);
        }
        let decreases = losses.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(
            decreases as f64 >= 0.95 * (losses.len() - 1) as f64,
            "only {decreases} decreasing steps"
        );
        let last = *losses.last().unwrap();
        assert!(losses[0] - last >= 2.0, "loss drop too small: {} -> {last}", losses[0]);
    }

    #[test]
    fn expected_goal_cases() {
        let m1 = GoalMixture {
            weights: vec![1.0],
            means: vec![Vector2::new(2.0, -1.0)],
            stds: vec![Vector2::new(1.0, 1.0)],
        };
        assert_eq!(expected_goal(&m1), Vector2::new(2.0, -1.0));

        let sym = GoalMixture {
            weights: vec![0.5, 0.5],
            means: vec![Vector2::new(-1.0, 0.0), Vector2::new(1.0, 0.0)],
            stds: vec![Vector2::new(1.0, 1.0); 2],
        };
        assert!(expected_goal(&sym).norm() < 1e-15);

        let mix = GoalMixture {
            weights: vec![0.2, 0.3, 0.5],
            means: vec![
                Vector2::new(1.0, 2.0),
                Vector2::new(-2.0, 0.5),
                Vector2::new(0.4, -1.2),
            ],
            stds: vec![Vector2::new(1.0, 1.0); 3],
        };
        let mut want = Vector2::zeros();
        for j in 0..3 {
            want += mix.means[j] * mix.weights[j];
        }
        assert!((expected_goal(&mix) - want).norm() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_and_concentrated() {
        let mix = GoalMixture {
            weights: vec![1.0],
            means: vec![Vector2::new(3.0, -2.0)],
            stds: vec![Vector2::new(SIGMA_MIN, SIGMA_MIN)],
        };
        let a = sample_goals(&mix, 16, 99);
        let b = sample_goals(&mix, 16, 99);
        assert_eq!(a, b);
        for s in &a {
            assert!((s - mix.means[0]).norm() < 5.0 * SIGMA_MIN * 2.0f64.sqrt());
        }
    }

    #[test]
    fn sample_frequencies_follow_weights() {
        let mix = GoalMixture {
            weights: vec![0.3, 0.7],
            means: vec![Vector2::new(-100.0, 0.0), Vector2::new(100.0, 0.0)],
            stds: vec![Vector2::new(0.1, 0.1); 2],
        };
        let samples = sample_goals(&mix, 100_000, 7);
        let frac_left =
            samples.iter().filter(|s| s.x < 0.0).count() as f64 / samples.len() as f64;
        assert!((frac_left - 0.3).abs() < 0.01, "left fraction {frac_left}");
    }

    #[test]
    fn train_reports_epoch_losses() {
        let mut net = MdnNetwork::new(2, &[16], 2, 4).unwrap();
        let n = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut feats = DMatrix::zeros(n, 2);
        let mut goals = Vec::new();
        for i in 0..n {
            let x: f64 = rng.gen_range(-1.0..1.0);
            feats[(i, 0)] = x;
            feats[(i, 1)] = -x;
            goals.push(Vector2::new(2.0 * x, -x));
        }
        let dataset = GoalDataset { features: feats, goals };
        let cfg = TrainConfig { epochs: 20, batch_size: 8, mixtures: 2, seed: 1, ..TrainConfig::default() };
        let report = train(&mut net, &dataset, &cfg).unwrap();
        assert_eq!(report.epoch_losses.len(), 20);
        assert!(!report.diverged);
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
    }

    #[test]
    fn divergent_training_rolls_back() {
        let mut net = tiny_net(6);
        let xs = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let dataset = GoalDataset { features: xs, goals: vec![Vector2::new(0.5, 0.5)] };
        // An absurd learning rate overflows the head quickly.
        let cfg = TrainConfig {
            learning_rate: 1e150,
            epochs: 8,
            batch_size: 1,
            mixtures: 2,
            ..TrainConfig::default()
        };
        let report = train(&mut net, &dataset, &cfg).unwrap();
        assert!(report.diverged);
        net.check_finite().unwrap();
    }

    #[test]
    fn goal_model_round_trips_through_json() {
        let net = MdnNetwork::new(2 * 4 + 3 * 2, &[8, 8], 3, 9).unwrap();
        let model = GoalModel {
            net,
            agent_class: AgentClass::Vehicle,
            history_len: 4,
            context_slots: 2,
            context_radius: 10.0,
            standardizer: Standardizer { mean: [0.5, -0.5], std: [2.0, 3.0] },
            seed: 9,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("goal.json");
        model.save(&path).unwrap();
        let loaded = GoalModel::load(&path).unwrap();
        assert_eq!(loaded.input_dim(), model.input_dim());
        let hist = vec![Vector2::new(0.1, 0.2); 4];
        let ctx = ContextSet { points: vec![Vector2::new(1.0, 1.0)], radius: 10.0 };
        let a = model.mixture(&hist, Some(&ctx)).unwrap();
        let b = loaded.mixture(&hist, Some(&ctx)).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.means, b.means);
        assert_eq!(a.stds, b.stds);
    }

    #[test]
    fn feature_layout_pads_context() {
        let hist = vec![Vector2::new(1.0, 2.0), Vector2::new(3.0, 4.0)];
        let ctx = ContextSet { points: vec![Vector2::new(5.0, 6.0)], radius: 2.0 };
        let x = goal_features(&hist, Some(&ctx), 3);
        assert_eq!(
            x,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        let no_ctx = goal_features(&hist, None, 0);
        assert_eq!(no_ctx, vec![1.0, 2.0, 3.0, 4.0]);
    }
}
