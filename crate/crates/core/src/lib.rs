//! Desk-scale simulator of value drift during LLM post-training.
//!
//! A [`world::World`] of topics, prompts and stance-labeled candidate
//! responses stands in for an evaluation set. A tabular softmax
//! [`policy::Policy`] is trained with SFT and then one preference objective
//! (DPO, SimPO or KL-regularized reward maximization), and the expected stance
//! distribution per topic is traced across checkpoints so that drift magnitude
//! and drift time can be measured.

pub mod error;
pub mod eval;
pub mod metrics;
pub mod policy;
pub mod runner;
pub mod seed;
pub mod stance;
pub mod trainers;
pub mod world;

pub use error::{Error, Result};
pub use stance::{Stance, StanceVector};
