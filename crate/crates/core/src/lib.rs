//! Fusion of Riemannian motion policies through weighted RMP trees.
//!
//! Leaf policies are geometric dynamical systems ([`gds`]) living in task
//! spaces reached through [`taskmaps`]. A [`tree::Tree`] combines them with
//! state-dependent edge weights ([`weights`]) so that the root policy stays
//! Lyapunov stable for any positive weights, which makes the weights safe to
//! learn from demonstrations ([`learn`]) and to roll out ([`sim`]).

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod fixtures;
pub mod experiment;
pub mod learn;
pub mod numerics;
pub mod plot;
pub mod taskmaps;
pub mod sim;
pub mod gds;
pub mod tree;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};
pub use numerics::Matrix;
pub use tree::{Tree, TreeSpec};
