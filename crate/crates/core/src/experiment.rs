//! Experiment configuration, checkpoints, and the data/train/evaluate
//! pipeline shared by the command line and the test suites.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learn::{
    train_bc, Dataset, Learner, MlpPolicy, Record, RmpLearner, Split, TrainConfig, TrainState, UnstructuredLearner,
};
use crate::learn::loss_mse;
use crate::sim::{
    evaluate_online, gen_dataset, DatasetCounts, Environment, GenSummary, Metrics, NetworkPolicy, OnlineEval, Policy,
    RolloutConfig, SamplingConfig, Trajectory, TreePolicy,
};
use crate::tree::{Tree, TreeSpec};
use crate::weights::Activation;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
/// Allowed relative difference between the baseline's and the tree
/// learner's parameter counts.
pub const BASELINE_SIZE_TOLERANCE: f64 = 0.2;

fn schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub name: String,
    /// Tree specs, relative to the config file.
    pub expert: PathBuf,
    pub learner: PathBuf,
    pub sampling: SamplingConfig,
    pub train_data: DatasetCounts,
    pub test_data: DatasetCounts,
    #[serde(default)]
    pub rollout: RolloutConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
    /// Seeds of the training and test environments.
    pub seed: u64,
    pub test_seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.sampling.validate()?;
        cfg.rollout.validate()?;
        if cfg.seed == cfg.test_seed {
            return Err(Error::Config("test_seed must differ from seed so test environments are held out".into()));
        }
        Ok(cfg)
    }
}

/// A config with its trees loaded and checked against each other.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub expert: Tree,
    pub learner: Tree,
}

impl Experiment {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config = ExperimentConfig::from_json(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let load_tree = |p: &Path| -> Result<TreeSpec> {
            let full = dir.join(p);
            TreeSpec::load(&full).map_err(|e| Error::Config(format!("tree spec {}: {e}", full.display())))
        };
        let expert = load_tree(&config.expert)?;
        let learner = load_tree(&config.learner)?;
        Experiment::from_parts(config, expert, learner)
    }

    pub fn from_parts(config: ExperimentConfig, expert: TreeSpec, learner: TreeSpec) -> Result<Self> {
        let expert = Tree::new(expert)?;
        let learner = Tree::new(learner)?;
        let dim = config.sampling.robot.dim();
        let aux = config.sampling.aux_dim();
        for (role, t) in [("expert", &expert), ("learner", &learner)] {
            if t.root_dim() != dim || t.aux_dim() != aux {
                return Err(Error::Config(format!(
                    "{role} tree `{}` has root {} and aux {}, the environment needs {dim} and {aux}",
                    t.name(),
                    t.root_dim(),
                    t.aux_dim()
                )));
            }
        }
        if expert.n_params() != 0 {
            return Err(Error::Config(format!(
                "expert tree `{}` has learnable weights; experts must be fully specified",
                expert.name()
            )));
        }
        Ok(Experiment {
            config,
            expert,
            learner,
        })
    }

    /// Hash of the config and both trees.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&self.config).expect("config serialises").as_bytes());
        h.update(self.expert.digest().as_bytes());
        h.update(self.learner.digest().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn expert_policy(&self) -> TreePolicy {
        TreePolicy::new(self.expert.clone(), Vec::new()).expect("expert has no parameters")
    }

    pub fn generate(&self, split: Split) -> Result<(Dataset, GenSummary)> {
        let (counts, seed) = match split {
            Split::Train => (&self.config.train_data, self.config.seed),
            Split::Test => (&self.config.test_data, self.config.test_seed),
        };
        gen_dataset(&self.expert_policy(), &self.config.sampling, counts, split, &self.config.rollout, seed)
    }

    pub fn rmp_learner(&self) -> RmpLearner {
        RmpLearner::new(self.learner.clone())
    }

    /// Unstructured network with about as many parameters as the tree learner.
    pub fn baseline(&self) -> Result<UnstructuredLearner> {
        let activation = self.config.baseline.as_ref().map_or(Activation::Tanh, |b| b.activation);
        let target = self.learner.n_params();
        let policy = MlpPolicy::matching(self.learner.root_dim(), self.learner.aux_dim(), target, activation)?;
        let ratio = policy.param_count() as f64 / target.max(1) as f64;
        if (ratio - 1.0).abs() > BASELINE_SIZE_TOLERANCE {
            return Err(Error::Config(format!(
                "baseline has {} parameters against {target} for the tree learner",
                policy.param_count()
            )));
        }
        Ok(UnstructuredLearner { policy })
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Learnable weights in the learner tree.
    Rmp,
    /// Dense network baseline.
    Unstructured,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmp" => Ok(ModelKind::Rmp),
            "unstructured" => Ok(ModelKind::Unstructured),
            _ => Err(Error::Config(format!("unknown model `{s}` (expected rmp or unstructured)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Rmp { tree: TreeSpec },
    Unstructured { network: MlpPolicy },
}

/// Layer widths and parameter slice of one learnable edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeArchitecture {
    pub child: String,
    pub layer_sizes: Vec<usize>,
    pub params: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub model: Model,
    /// Digest of the tree the parameters belong to (tree models only).
    pub tree_digest: Option<String>,
    pub architecture: Vec<EdgeArchitecture>,
    pub state: TrainState,
    pub config_digest: String,
}

impl Checkpoint {
    pub fn for_tree(tree: &Tree, state: TrainState, config_digest: &str) -> Self {
        let mut architecture = Vec::new();
        for (child, range) in tree.param_slices() {
            let edge = tree.spec().edges.iter().find(|e| e.child == child).expect("edge exists");
            let parent = tree.parents()[tree.node_index(&child).unwrap()].unwrap();
            architecture.push(EdgeArchitecture {
                child,
                layer_sizes: edge.weight.layer_sizes(tree.node_dim(parent)).unwrap_or_default(),
                params: [range.start, range.end],
            });
        }
        Checkpoint {
            schema_version: CONFIG_SCHEMA_VERSION,
            model: Model::Rmp { tree: tree.spec().clone() },
            tree_digest: Some(tree.digest().to_string()),
            architecture,
            state,
            config_digest: config_digest.to_string(),
        }
    }

    pub fn for_network(network: &MlpPolicy, state: TrainState, config_digest: &str) -> Self {
        Checkpoint {
            schema_version: CONFIG_SCHEMA_VERSION,
            model: Model::Unstructured { network: network.clone() },
            tree_digest: None,
            architecture: vec![EdgeArchitecture {
                child: "network".into(),
                layer_sizes: network.layer_sizes(),
                params: [0, network.param_count()],
            }],
            state,
            config_digest: config_digest.to_string(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self.model {
            Model::Rmp { .. } => ModelKind::Rmp,
            Model::Unstructured { .. } => ModelKind::Unstructured,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.state.params
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ckpt.policy()?;
        Ok(ckpt)
    }

    /// The policy the checkpoint describes; checks digest and sizes.
    pub fn policy(&self) -> Result<Box<dyn Policy>> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!("checkpoint schema version {} is not supported", self.schema_version)));
        }
        match &self.model {
            Model::Rmp { tree } => {
                let tree = Tree::new(tree.clone())?;
                if self.tree_digest.as_deref() != Some(tree.digest()) {
                    return Err(Error::Config("checkpoint tree digest does not match its tree".into()));
                }
                Ok(Box::new(TreePolicy::new(tree, self.state.params.clone())?))
            }
            Model::Unstructured { network } => {
                if network.param_count() != self.state.params.len() {
                    return Err(Error::Dimension(format!(
                        "network needs {} parameters, checkpoint holds {}",
                        network.param_count(),
                        self.state.params.len()
                    )));
                }
                Ok(Box::new(NetworkPolicy {
                    policy: network.clone(),
                    params: self.state.params.clone(),
                }))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    /// `(iteration, minibatch loss)`
    pub curve: Vec<(usize, f64)>,
}

/// Behaviour cloning of either model on `dataset`. Starts from `resume` if
/// given, else from the seeded initialisation. `on_checkpoint` sees every
/// periodic checkpoint and the final one.
pub fn train_model(
    exp: &Experiment,
    kind: ModelKind,
    dataset: &Dataset,
    resume: Option<Checkpoint>,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainRun> {
    let digest = exp.digest();
    let cfg = &exp.config.train;
    match kind {
        ModelKind::Rmp => {
            let learner = exp.rmp_learner();
            let wrap = |s: &TrainState| Checkpoint::for_tree(&learner.tree, s.clone(), &digest);
            let state = initial_state(&learner, cfg, resume, kind)?;
            let out = train_bc(&learner, dataset, cfg, state, |s| on_checkpoint(&wrap(s)))?;
            Ok(TrainRun {
                checkpoint: wrap(&out.state),
                curve: out.curve,
            })
        }
        ModelKind::Unstructured => {
            let learner = exp.baseline()?;
            let wrap = |s: &TrainState| Checkpoint::for_network(&learner.policy, s.clone(), &digest);
            let state = initial_state(&learner, cfg, resume, kind)?;
            let out = train_bc(&learner, dataset, cfg, state, |s| on_checkpoint(&wrap(s)))?;
            Ok(TrainRun {
                checkpoint: wrap(&out.state),
                curve: out.curve,
            })
        }
    }
}

fn initial_state<L: Learner>(
    learner: &L,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    kind: ModelKind,
) -> Result<TrainState> {
    match resume {
        Some(c) if c.kind() != kind => Err(Error::Config(format!(
            "cannot resume a {:?} model from a {:?} checkpoint",
            kind,
            c.kind()
        ))),
        Some(c) => {
            if c.state.params.len() != learner.n_params() {
                return Err(Error::Dimension(format!(
                    "checkpoint holds {} parameters, the model has {}",
                    c.state.params.len(),
                    learner.n_params()
                )));
            }
            Ok(c.state)
        }
        None => TrainState::fresh(learner.init_params(cfg.seed), cfg),
    }
}

// ---------------------------------------------------------------------------
// Evaluation

/// Mean loss of `policy` against the expert actions stored in `records`.
pub fn policy_batch_loss(policy: &dyn Policy, records: &[Record]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Config("cannot compute a loss on an empty dataset".into()));
    }
    let mut total = 0.0;
    for (i, r) in records.iter().enumerate() {
        let a = policy.act(&r.q, &r.qd, &r.aux).map_err(|e| Error::AtRecord {
            index: i,
            source: Box::new(e),
        })?;
        total += loss_mse(&a.a, &r.a_expert)?;
    }
    Ok(total / records.len() as f64)
}

/// Learner over expert means of the four path metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRatios {
    pub time: f64,
    pub conf_length: f64,
    pub end_eff_length: f64,
    pub goal_distance: f64,
}

impl MetricRatios {
    pub fn all(&self) -> [f64; 4] {
        [self.time, self.conf_length, self.end_eff_length, self.goal_distance]
    }
}

fn mean_metrics(m: &[Metrics]) -> [f64; 4] {
    let n = m.len().max(1) as f64;
    let mut out = [0.0; 4];
    for x in m {
        out[0] += x.time_to_goal / n;
        out[1] += x.conf_length / n;
        out[2] += x.end_eff_length / n;
        out[3] += x.goal_distance / n;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config_digest: String,
    pub model: String,
    pub batch_loss: f64,
    pub online_loss: f64,
    pub rollouts: usize,
    pub completion_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    pub max_v_increment: Option<f64>,
    /// Mean time to goal, configuration path length, end-effector path
    /// length and final goal distance.
    pub learner_metrics: [f64; 4],
    pub expert_metrics: [f64; 4],
    pub metric_ratios: MetricRatios,
}

/// Everything the report needs plus the rollouts behind it.
pub struct Evaluation {
    pub report: EvalReport,
    pub online: OnlineEval,
    pub rollouts: Vec<(Environment, Trajectory)>,
}

pub fn evaluate(exp: &Experiment, model: &str, policy: &dyn Policy, test: &Dataset) -> Result<Evaluation> {
    let expert = exp.expert_policy();
    let batch_loss = policy_batch_loss(policy, &test.records)?;
    let (online, rollouts) = evaluate_online(policy, &expert, test, &exp.config.sampling, &exp.config.rollout)?;
    let (expert_eval, _) = evaluate_online(&expert, &expert, test, &exp.config.sampling, &exp.config.rollout)?;
    let lm = mean_metrics(&online.metrics);
    let em = mean_metrics(&expert_eval.metrics);
    let ratio = |i: usize| lm[i] / em[i];
    let report = EvalReport {
        schema_version: CONFIG_SCHEMA_VERSION,
        config_digest: exp.digest(),
        model: model.to_string(),
        batch_loss,
        online_loss: online.online_loss,
        rollouts: online.rollouts,
        completion_rate: online.completion_rate(),
        collision_rate: online.collision_rate(),
        timeout_rate: online.timeout_rate(),
        max_v_increment: online.max_v_increment,
        learner_metrics: lm,
        expert_metrics: em,
        metric_ratios: MetricRatios {
            time: ratio(0),
            conf_length: ratio(1),
            end_eff_length: ratio(2),
            goal_distance: ratio(3),
        },
    };
    Ok(Evaluation {
        report,
        online,
        rollouts,
    })
}
