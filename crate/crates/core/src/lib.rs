//! Desk-scale reinforcement-learning toolkit built around exploration with
//! frozen pre-trained policies. A pre-trained policy is exposed to a fresh
//! learner in two ways: heavy-tailed flights that hand over control for a
//! sampled number of steps, and an extra pseudo-action that defers a single
//! decision to it. Policies are pre-trained reward-free on an intrinsic
//! novelty signal (episodic k-NN novelty modulated by lifelong random-network
//! prediction error). The crate also ships the supporting machinery: finite
//! deterministic environments with a value-iteration oracle, multi-step
//! off-policy backups, prioritized sequence replay, and an
//! actor/learner/evaluator harness with deterministic single-threaded mode.
//!
//! All numeric cores are generic over the scalar type via [`num::Real`];
//! concrete `f64` aliases live at the crate root and the experiment harness
//! and file formats are pinned to `f64`.

pub mod env;
pub mod error;
pub mod explore;
pub mod harness;
pub mod intrinsic;
pub mod learner;
pub mod mdp;
pub mod nn;
pub mod num;
pub mod replay;

pub use error::{Error, Result};
pub use num::Real;

/// Concrete `f64` aliases for the main domain types.
pub type EnvSpecF64 = env::EnvSpec<f64>;
pub type EnvironmentF64 = env::Environment<f64>;
pub type TransitionF64 = env::Transition<f64>;
pub type MdpF64 = mdp::Mdp<f64>;
pub type QFunctionF64 = learner::QFunction<f64>;
pub type LearnerStateF64 = learner::LearnerState<f64>;
pub type FrozenPolicyF64 = explore::FrozenPolicy<f64>;
pub type SequenceBufferF64 = replay::SequenceBuffer<f64>;
pub type EpisodicMemoryF64 = intrinsic::EpisodicMemory<f64>;
pub type RndStateF64 = intrinsic::RndState<f64>;
pub type NguConfigF64 = intrinsic::NguConfig<f64>;
