//! Shipped tree specs and experiment configs, embedded at build time.
//!
//! `2d1level` and `2d2level` are a point robot reaching a goal past one or
//! two obstacles; `arm3` is a planar three-link arm with joint limits,
//! per-link control points and one obstacle; `ytree` is a two-leaf tree with
//! position-dependent metrics and weights.

use crate::error::{Error, Result};
use crate::experiment::{Experiment, ExperimentConfig};
use crate::tree::TreeSpec;

macro_rules! embed {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../fixtures/", $name)))),*]
    };
}

const FILES: &[(&str, &str)] = embed!(
    "2d1level.expert.json",
    "2d1level.learner.json",
    "2d1level.experiment.json",
    "2d2level.expert.json",
    "2d2level.learner.json",
    "2d2level.experiment.json",
    "arm3.expert.json",
    "arm3.learner.json",
    "arm3.experiment.json",
    "ytree.json",
);

pub const EXPERIMENTS: [&str; 3] = ["2d1level", "2d2level", "arm3"];

/// Names of every shipped tree spec, without the `.json` suffix.
pub const TREES: [&str; 7] = [
    "2d1level.expert",
    "2d1level.learner",
    "2d2level.expert",
    "2d2level.learner",
    "arm3.expert",
    "arm3.learner",
    "ytree",
];

pub fn file(name: &str) -> Option<&'static str> {
    FILES.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn file_names() -> impl Iterator<Item = &'static str> {
    FILES.iter().map(|(n, _)| *n)
}

fn lookup(name: &str) -> Result<&'static str> {
    file(name).ok_or_else(|| Error::Config(format!("no shipped fixture named `{name}`")))
}

pub fn tree_spec(name: &str) -> Result<TreeSpec> {
    TreeSpec::from_json(lookup(&format!("{name}.json"))?)
}

pub fn experiment_config(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_json(lookup(&format!("{name}.experiment.json"))?)
}

pub fn experiment(name: &str) -> Result<Experiment> {
    let config = experiment_config(name)?;
    let load = |p: &std::path::Path| -> Result<TreeSpec> {
        let file_name = p.to_str().ok_or_else(|| Error::Config("non-UTF-8 tree path".into()))?;
        TreeSpec::from_json(lookup(file_name)?)
    };
    let expert = load(&config.expert)?;
    let learner = load(&config.learner)?;
    Experiment::from_parts(config, expert, learner)
}
