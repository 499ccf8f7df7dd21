//! Behaviour cloning of edge weights (and of the unstructured baseline).
//!
//! The weight parameters enter the root acceleration through the weighted
//! pullback and resolve. Each record's evaluation is recorded on a scalar
//! [`tape::Tape`] and differentiated in reverse; everything that does not
//! depend on the parameters (pushforward, leaf outputs) is computed once per
//! record and enters the tape as constants.

pub mod mlp;
pub mod optim;
pub mod tape;

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::tree::{EvalOptions, Frame, Tree, MIN_EIG_WARNING};

pub use mlp::MlpPolicy;
pub use optim::{clip_global_norm, Optimizer, OptimizerKind};
pub use tape::{InputTag, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One demonstration sample: the expert's acceleration at a visited state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub aux: Vec<f64>,
    pub a_expert: Vec<f64>,
    pub env: usize,
    pub traj: usize,
    pub t: f64,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let d = Dataset { records };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All records share dimensions and hold finite numbers.
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.records.first() else {
            return Ok(());
        };
        let dims = (first.q.len(), first.aux.len());
        for (i, r) in self.records.iter().enumerate() {
            let ctx = |e: Error| Error::AtRecord {
                index: i,
                source: Box::new(e),
            };
            if r.q.len() != dims.0 || r.qd.len() != dims.0 || r.a_expert.len() != dims.0 || r.aux.len() != dims.1 {
                return Err(ctx(Error::Dimension("record dimensions differ from the first record".into())));
            }
            if r.q.iter().chain(&r.qd).chain(&r.aux).chain(&r.a_expert).any(|v| !v.is_finite()) || !r.t.is_finite() {
                return Err(ctx(Error::Numeric("non-finite value in record".into())));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Dataset {
        Dataset {
            records: self.records.iter().filter(|r| r.split == split).cloned().collect(),
        }
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::AtRecord {
                index: i,
                source: Box::new(e.into()),
            })?;
            records.push(rec);
        }
        Dataset::new(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Dataset::read_jsonl(std::io::BufReader::new(file))
    }
}

/// `(1/d) Σ (predᵢ − targetᵢ)²`
pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Dimension(format!(
            "loss of vectors of length {} and {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

fn loss_on_tape<'t>(pred: &[Var<'t>], target: &[f64]) -> Var<'t> {
    let mut acc = Var::Const(0.0);
    for (&p, &t) in pred.iter().zip(target) {
        let d = p - t;
        acc = acc + d * d;
    }
    acc / pred.len() as f64
}

/// A parameterised policy that can be fitted by behaviour cloning.
pub trait Learner {
    /// Per-record data that does not depend on the parameters.
    type Cache;

    fn n_params(&self) -> usize;
    fn init_params(&self, seed: u64) -> Vec<f64>;
    fn cache(&self, record: &Record) -> Result<Self::Cache>;
    fn predict(&self, q: &[f64], qd: &[f64], aux: &[f64], params: &[f64]) -> Result<Vec<f64>>;
    /// Loss of one record; its parameter gradient is added to `grad`.
    fn loss_grad(
        &self,
        cache: &Self::Cache,
        target: &[f64],
        params: &[f64],
        tape: &Tape,
        grad: &mut [f64],
    ) -> Result<f64>;
    /// Human-readable name of the parameter at `index`, for error messages.
    fn param_name(&self, index: usize) -> String {
        format!("parameter {index}")
    }
}

/// Behaviour cloning of the learnable weights of a tree.
#[derive(Clone, Debug)]
pub struct RmpLearner {
    pub tree: Tree,
    pub opts: EvalOptions,
}

impl RmpLearner {
    pub fn new(tree: Tree) -> Self {
        RmpLearner {
            tree,
            opts: EvalOptions::default(),
        }
    }
}

impl Learner for RmpLearner {
    type Cache = Frame;

    fn n_params(&self) -> usize {
        self.tree.n_params()
    }

    fn init_params(&self, seed: u64) -> Vec<f64> {
        self.tree.init_params(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn cache(&self, r: &Record) -> Result<Frame> {
        self.tree.pushforward(&r.q, &r.qd, &r.aux)
    }

    fn predict(&self, q: &[f64], qd: &[f64], aux: &[f64], params: &[f64]) -> Result<Vec<f64>> {
        let frame = self.tree.pushforward(q, qd, aux)?;
        Ok(self.tree.resolve_frame(&frame, params, &self.opts)?.0)
    }

    fn loss_grad(&self, frame: &Frame, target: &[f64], params: &[f64], tape: &Tape, grad: &mut [f64]) -> Result<f64> {
        tape.clear();
        let vars = tape.inputs(params, InputTag::Param);
        let (a, root) = self.tree.resolve_frame(frame, &vars, &self.opts)?;
        if a.len() != target.len() {
            return Err(Error::Dimension("expert action has the wrong size".into()));
        }
        let loss = loss_on_tape(&a, target);
        let adj = tape.backward(loss);
        // Parameters were pushed first, so their adjoints lead the vector.
        let mut g: Vec<f64> = adj[..params.len()].to_vec();
        // Resolve derivatives are unreliable near a rank change: keep the step bounded.
        if root.m.values().min_eigenvalue()? < MIN_EIG_WARNING {
            log::debug!("near-singular root inertia in a training record; clipping its gradient");
            clip_global_norm(&mut g, 1.0);
        }
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += gi;
        }
        Ok(loss.value())
    }

    fn param_name(&self, index: usize) -> String {
        self.tree
            .param_slices()
            .into_iter()
            .find(|(_, r)| r.contains(&index))
            .map_or(format!("parameter {index}"), |(node, r)| {
                format!("parameter {index} (weight into `{node}`, slice {}..{})", r.start, r.end)
            })
    }
}

/// Behaviour cloning of the unstructured baseline network.
#[derive(Clone, Debug)]
pub struct UnstructuredLearner {
    pub policy: MlpPolicy,
}

impl Learner for UnstructuredLearner {
    type Cache = Vec<f64>;

    fn n_params(&self) -> usize {
        self.policy.param_count()
    }

    fn init_params(&self, seed: u64) -> Vec<f64> {
        self.policy.init_params(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn cache(&self, r: &Record) -> Result<Vec<f64>> {
        self.policy.input(&r.q, &r.qd, &r.aux)
    }

    fn predict(&self, q: &[f64], qd: &[f64], aux: &[f64], params: &[f64]) -> Result<Vec<f64>> {
        self.policy.forward(&self.policy.input(q, qd, aux)?, params)
    }

    fn loss_grad(&self, input: &Vec<f64>, target: &[f64], params: &[f64], tape: &Tape, grad: &mut [f64]) -> Result<f64> {
        tape.clear();
        let vars = tape.inputs(params, InputTag::Param);
        let a = self.policy.forward(input, &vars)?;
        let loss = loss_on_tape(&a, target);
        let adj = tape.backward(loss);
        for (acc, gi) in grad.iter_mut().zip(&adj[..params.len()]) {
            *acc += gi;
        }
        Ok(loss.value())
    }
}

/// Mean loss over `records` and its gradient with respect to the parameters.
pub fn grad_params<L: Learner>(learner: &L, records: &[Record], params: &[f64]) -> Result<(f64, Vec<f64>)> {
    let caches = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            learner.cache(r).map_err(|e| Error::AtRecord {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<&[f64]> = records.iter().map(|r| r.a_expert.as_slice()).collect();
    let idx: Vec<usize> = (0..records.len()).collect();
    batch_loss_grad(learner, &caches, &targets, &idx, params, &Tape::new())
}

fn batch_loss_grad<L: Learner>(
    learner: &L,
    caches: &[L::Cache],
    targets: &[&[f64]],
    batch: &[usize],
    params: &[f64],
    tape: &Tape,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if params.len() != learner.n_params() {
        return Err(Error::Dimension(format!(
            "learner has {} parameters, got {}",
            learner.n_params(),
            params.len()
        )));
    }
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for &i in batch {
        loss += learner
            .loss_grad(&caches[i], targets[i], params, tape, &mut grad)
            .map_err(|e| Error::AtRecord {
                index: i,
                source: Box::new(e),
            })?;
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at {}", learner.param_name(i))));
    }
    Ok((loss / n, grad))
}

/// Mean loss of a learner's predictions over a dataset.
pub fn batch_loss<L: Learner>(learner: &L, records: &[Record], params: &[f64]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let mut total = 0.0;
    for (i, r) in records.iter().enumerate() {
        let a = learner.predict(&r.q, &r.qd, &r.aux, params).map_err(|e| Error::AtRecord {
            index: i,
            source: Box::new(e),
        })?;
        total += loss_mse(&a, &r.a_expert)?;
    }
    Ok(total / records.len() as f64)
}

fn default_clip() -> f64 {
    100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub minibatch: usize,
    pub iterations: usize,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.minibatch == 0 || self.minibatch > dataset_len {
            return Err(Error::Config(format!(
                "minibatch {} must be between 1 and the dataset size {dataset_len}",
                self.minibatch
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub iteration: usize,
    pub params: Vec<f64>,
    pub optimizer: Optimizer,
}

impl TrainState {
    pub fn fresh(params: Vec<f64>, config: &TrainConfig) -> Result<Self> {
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate, params.len())?;
        Ok(TrainState {
            iteration: 0,
            params,
            optimizer,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// `(iteration, minibatch loss before that iteration's update)`
    pub curve: Vec<(usize, f64)>,
}

/// Minibatch indices of one iteration; a pure function of (seed, iteration).
pub fn minibatch_indices(seed: u64, iteration: usize, n: usize, size: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    let mut idx = sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Runs behaviour cloning from `state` until `config.iterations`.
/// `on_checkpoint` is called every `checkpoint_every` iterations and at the end.
pub fn train_bc<L: Learner>(
    learner: &L,
    dataset: &Dataset,
    config: &TrainConfig,
    mut state: TrainState,
    mut on_checkpoint: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate(dataset.len())?;
    if state.params.len() != learner.n_params() {
        return Err(Error::Dimension(format!(
            "learner has {} parameters, state holds {}",
            learner.n_params(),
            state.params.len()
        )));
    }
    let mut curve = Vec::new();
    if learner.n_params() == 0 || state.iteration >= config.iterations {
        on_checkpoint(&state)?;
        return Ok(TrainOutcome { state, curve });
    }
    let caches = dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            learner.cache(r).map_err(|e| Error::AtRecord {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<&[f64]> = dataset.records.iter().map(|r| r.a_expert.as_slice()).collect();
    let tape = Tape::new();
    while state.iteration < config.iterations {
        let it = state.iteration;
        let batch = minibatch_indices(config.seed, it, dataset.len(), config.minibatch);
        let (loss, mut grad) = batch_loss_grad(learner, &caches, &targets, &batch, &state.params, &tape)?;
        clip_global_norm(&mut grad, config.clip_norm);
        state.optimizer.step(&mut state.params, &grad)?;
        state.iteration += 1;
        curve.push((it, loss));
        if it.is_multiple_of(500) {
            log::info!("iteration {it}: minibatch loss {loss:.4e}");
        }
        if config.checkpoint_every > 0 && state.iteration.is_multiple_of(config.checkpoint_every) {
            on_checkpoint(&state)?;
        }
    }
    if config.checkpoint_every == 0 || !state.iteration.is_multiple_of(config.checkpoint_every) {
        on_checkpoint(&state)?;
    }
    Ok(TrainOutcome { state, curve })
}
