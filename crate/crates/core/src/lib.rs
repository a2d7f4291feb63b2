//! Stance detection over conversation threads.
//!
//! A thread is a tree of instances rooted at a post. Each labeled instance
//! is classified together with its ancestors: the sub-branch is joined
//! with separators, run through a contextual encoder, and the target's
//! token vectors go through a convolutional head.

pub mod attribution;
pub mod baselines;
pub mod checkpoint;
pub mod encoder;
pub mod family;
pub mod ingest;
pub mod model;
pub mod stance;
pub mod synthetic;
pub mod thread;
pub mod train;

pub use model::{ModelConfig, ModelError, StanceModel, Variant};
pub use stance::{Stance, StanceDistribution, CLASS_ORDER, NUM_CLASSES};
pub use thread::{ContextLimit, DepthBucket, Instance, SubBranch, Thread, ThreadError};
