//! Neighbor-sampled stochastic gradients and the Adam update.
//!
//! Each iteration for partition `j` draws a source partition `k′` from
//! `{j} ∪ N_j` with
//!
//! ```text
//! P(j) = n_j / n_eff        P(k) = δ·n_k / n_eff  (k ∈ N_j)
//! n_eff = n_j + δ·Σ_{k∈N_j} n_k
//! ```
//!
//! then a mini-batch `I` of `min(B, n_k′)` rows of `k′` uniformly without
//! replacement, and uses `(n_eff/|I|)·Σ_{i∈I} ∇ℓ(x_{k′i}, y_{k′i}, φ_j)` with the
//! KL amortized over `n_eff`. Its expectation is the gradient of the
//! δ-weighted objective (weight 1 on `j`, δ on each neighbor).

use log::warn;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::partition::{NeighborGraph, PartitionData};
use crate::svgp::{elbo_value_and_grad, initialize, GradientVector, VariationalState};
use crate::Scalar;

/// Source-sampling configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig<T> {
    pub delta: T,
    pub batch_size: usize,
    pub seed: u64,
}

impl<T: Scalar> SamplerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= T::zero() && self.delta <= T::one()) {
            return Err(Error::config(format!("delta must lie in [0, 1], got {}", self.delta)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Distribution of `k′` over `{j} ∪ N_j`; `ids[0] == j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceProbs<T> {
    pub ids: Vec<usize>,
    pub probs: Vec<T>,
    pub n_eff: T,
}

impl<T: Scalar> SourceProbs<T> {
    pub fn target(&self) -> usize {
        self.ids[0]
    }

    pub fn prob_of(&self, id: usize) -> T {
        self.ids
            .iter()
            .position(|&k| k == id)
            .map_or(T::zero(), |i| self.probs[i])
    }

    /// Sampling weight relative to the target: 1 for `j`, δ for neighbors.
    pub fn weights(&self, delta: T) -> Vec<T> {
        (0..self.ids.len())
            .map(|i| if i == 0 { T::one() } else { delta })
            .collect()
    }
}

/// Sampling probabilities for partition `j`. The last positive entry is
/// one minus the others, so the probabilities sum to one.
pub fn source_probs<T: Scalar>(j: usize, graph: &NeighborGraph, delta: T) -> Result<SourceProbs<T>> {
    if j >= graph.len() {
        return Err(Error::config(format!("partition {j} is not in the graph")));
    }
    let n_j = graph.count(j);
    if n_j == 0 {
        return Err(Error::config(format!("partition {j} is empty and trains no model")));
    }
    let mut ids = vec![j];
    ids.extend_from_slice(graph.neighbors(j));
    let numerators: Vec<T> = ids
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let n = T::of_usize(graph.count(k));
            if i == 0 {
                n
            } else {
                delta * n
            }
        })
        .collect();
    let n_eff = numerators[1..].iter().fold(numerators[0], |acc, &v| acc + v);
    let mut probs: Vec<T> = numerators.iter().map(|&v| v / n_eff).collect();
    let last = numerators.iter().rposition(|&v| v > T::zero()).expect("n_j > 0");
    let rest = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != last)
        .fold(T::zero(), |acc, (_, &p)| acc + p);
    probs[last] = (T::one() - rest).max(T::zero());
    Ok(SourceProbs { ids, probs, n_eff })
}

/// Draws `k′`. A distribution with a single positive entry consumes no randomness.
pub fn sample_source<T: Scalar, R: Rng + ?Sized>(probs: &SourceProbs<T>, rng: &mut R) -> usize {
    let mut positive = probs.probs.iter().enumerate().filter(|(_, &p)| p > T::zero());
    let first = positive.next().map(|(i, _)| i).unwrap_or(0);
    if positive.next().is_none() {
        return probs.ids[first];
    }
    let u = T::of(rng.random::<f64>());
    let mut acc = T::zero();
    let mut chosen = first;
    for (i, &p) in probs.probs.iter().enumerate() {
        if p <= T::zero() {
            continue;
        }
        chosen = i;
        acc = acc + p;
        if u < acc {
            break;
        }
    }
    probs.ids[chosen]
}

/// `min(B, n_k)` distinct indices, uniform over subsets. When `B ≥ n_k` the
/// whole partition is returned in order and no randomness is consumed.
pub fn sample_minibatch<R: Rng + ?Sized>(n_k: usize, batch_size: usize, rng: &mut R) -> Vec<usize> {
    if batch_size >= n_k {
        (0..n_k).collect()
    } else {
        index::sample(rng, n_k, batch_size).into_vec()
    }
}

/// The estimator `U_j` for a batch already sliced from the source partition.
pub fn stochastic_grad_from_batch<T: Scalar>(
    state: &VariationalState<T>,
    coords: &Matrix<T>,
    responses: &[T],
    n_eff: T,
) -> Result<(T, GradientVector<T>)> {
    let b = T::of_usize(responses.len());
    elbo_value_and_grad(coords, responses, state, n_eff / b, n_eff)
}

/// The estimator `U_j(k′, I)`: `(n_eff,j/|I|) Σ_{i∈I} ∇ℓ(x_{k′i}, y_{k′i}, φ_j)`.
pub fn stochastic_grad<T: Scalar>(
    state: &VariationalState<T>,
    source: &PartitionData<T>,
    indices: &[usize],
    probs: &SourceProbs<T>,
) -> Result<GradientVector<T>> {
    if !probs.ids.contains(&source.id) {
        return Err(Error::config(format!(
            "partition {} is not in the neighborhood of {}",
            source.id,
            probs.target()
        )));
    }
    let (x, y) = source.rows(indices);
    stochastic_grad_from_batch(state, &x, &y, probs.n_eff).map(|(_, g)| g)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<T> {
    pub step_size: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        AdamConfig {
            step_size: T::of(0.01),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
        }
    }
}

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig<T>,
    pub first: Vec<T>,
    pub second: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig<T>) -> Self {
        AdamState {
            config,
            first: vec![T::zero(); len],
            second: vec![T::zero(); len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam ascent step on the flat parameters. A non-finite
/// gradient is skipped (returns `false`) without touching the state.
pub fn adam_step<T: Scalar>(state: &mut VariationalState<T>, grad: &GradientVector<T>, adam: &mut AdamState<T>) -> bool {
    if !grad.is_finite() {
        warn!("skipping Adam step {}: non-finite gradient", adam.step + 1);
        return false;
    }
    let mut params = state.to_flat();
    adam_update(&mut params, grad.as_slice(), adam);
    state.set_flat(&params);
    true
}

/// Adam ascent on a raw parameter slice.
pub fn adam_update<T: Scalar>(params: &mut [T], grad: &[T], adam: &mut AdamState<T>) {
    assert_eq!(params.len(), grad.len());
    assert_eq!(params.len(), adam.first.len());
    adam.step += 1;
    let AdamConfig {
        step_size,
        beta1,
        beta2,
        epsilon,
    } = adam.config;
    let one = T::one();
    let t = adam.step.min(i32::MAX as u64) as i32;
    let c1 = one - beta1.powi(t);
    let c2 = one - beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        adam.first[i] = beta1 * adam.first[i] + (one - beta1) * g;
        adam.second[i] = beta2 * adam.second[i] + (one - beta2) * g * g;
        let m_hat = adam.first[i] / c1;
        let v_hat = adam.second[i] / c2;
        params[i] = params[i] + step_size * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Per-partition RNG, seeded with `master_seed ⊕ partition`. Uses stream 1 so
/// it never coincides with a field sampled from the same seed.
pub fn partition_rng(master_seed: u64, partition: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ partition as u64);
    rng.set_stream(1);
    rng
}

/// Everything a local trainer needs besides data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings<T> {
    pub delta: T,
    pub batch_size: usize,
    pub iterations: usize,
    pub num_inducing: usize,
    pub master_seed: u64,
    pub adam: AdamConfig<T>,
    /// Keep the per-iteration stochastic objective estimate.
    pub record_trace: bool,
}

impl<T: Scalar> TrainSettings<T> {
    pub fn sampler(&self) -> SamplerConfig<T> {
        SamplerConfig {
            delta: self.delta,
            batch_size: self.batch_size,
            seed: self.master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler().validate()?;
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if self.num_inducing == 0 {
            return Err(Error::config("num_inducing must be at least 1"));
        }
        Ok(())
    }
}

/// A batch request: source partition and the row indices to use.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Draw {
    pub source: usize,
    pub indices: Vec<usize>,
}

/// State of one partition's SGD loop. Every random choice comes from the
/// partition's own stream, so the trajectory does not depend on where the
/// batches are sliced.
#[derive(Clone, Debug)]
pub struct LocalTrainer<T> {
    pub id: usize,
    pub state: VariationalState<T>,
    pub adam: AdamState<T>,
    pub probs: SourceProbs<T>,
    pub completed: usize,
    pub skipped: usize,
    pub trace: Vec<T>,
    rng: ChaCha8Rng,
    batch_size: usize,
    record_trace: bool,
}

impl<T: Scalar> LocalTrainer<T> {
    pub fn new(own: &PartitionData<T>, graph: &NeighborGraph, settings: &TrainSettings<T>) -> Result<Self> {
        let mut rng = partition_rng(settings.master_seed, own.id);
        let state = initialize(&own.coords, &own.responses, settings.num_inducing, &mut rng)
            .map_err(|e| e.within(format!("partition {}", own.id)))?;
        let probs = source_probs(own.id, graph, settings.delta)?;
        let adam = AdamState::new(state.layout().len(), settings.adam);
        Ok(LocalTrainer {
            id: own.id,
            state,
            adam,
            probs,
            completed: 0,
            skipped: 0,
            trace: Vec::new(),
            rng,
            batch_size: settings.batch_size,
            record_trace: settings.record_trace,
        })
    }

    /// Draws `k′` and the batch indices for the next iteration.
    pub fn draw(&mut self, graph: &NeighborGraph) -> Draw {
        let source = sample_source(&self.probs, &mut self.rng);
        let indices = sample_minibatch(graph.count(source), self.batch_size, &mut self.rng);
        Draw { source, indices }
    }

    /// Applies one Adam step with the batch drawn for this iteration.
    pub fn apply(&mut self, coords: &Matrix<T>, responses: &[T]) -> Result<()> {
        let (value, grad) = stochastic_grad_from_batch(&self.state, coords, responses, self.probs.n_eff)
            .map_err(|e| e.within(format!("partition {} iteration {}", self.id, self.completed)))?;
        if adam_step(&mut self.state, &grad, &mut self.adam) {
            if self.record_trace {
                self.trace.push(value);
            }
        } else {
            self.skipped += 1;
        }
        self.completed += 1;
        Ok(())
    }
}

/// Trains every nonempty partition one after another with direct access to
/// all data. Reference path for the distributed runner.
pub fn train_sequential<T: Scalar>(
    parts: &[PartitionData<T>],
    graph: &NeighborGraph,
    settings: &TrainSettings<T>,
) -> Result<Vec<Option<VariationalState<T>>>> {
    settings.validate()?;
    parts
        .iter()
        .map(|own| {
            if own.is_empty() {
                return Ok(None);
            }
            let mut trainer = LocalTrainer::new(own, graph, settings)?;
            for _ in 0..settings.iterations {
                let draw = trainer.draw(graph);
                let (x, y) = parts[draw.source].rows(&draw.indices);
                trainer.apply(&x, &y)?;
            }
            Ok(Some(trainer.state))
        })
        .collect()
}

/// Independent local SVGP: plain mini-batch SGD on a partition's own data,
/// written without the neighborhood sampler.
pub fn train_isvgp<T: Scalar>(own: &PartitionData<T>, settings: &TrainSettings<T>) -> Result<VariationalState<T>> {
    let mut rng = partition_rng(settings.master_seed, own.id);
    let mut state = initialize(&own.coords, &own.responses, settings.num_inducing, &mut rng)?;
    let mut adam = AdamState::new(state.layout().len(), settings.adam);
    let n = own.len();
    let n_total = T::of_usize(n);
    for _ in 0..settings.iterations {
        let idx = sample_minibatch(n, settings.batch_size, &mut rng);
        let (x, y) = own.rows(&idx);
        let (_, grad) = elbo_value_and_grad(&x, &y, &state, n_total / T::of_usize(idx.len()), n_total)?;
        adam_step(&mut state, &grad, &mut adam);
    }
    Ok(state)
}
