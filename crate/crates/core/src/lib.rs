//! Admission control for function-sharing application slices.
//!
//! A MetaSlice is a request made of several functions. Accepted slices are
//! grouped into MetaInstances by function similarity so that common
//! function instances can be shared. Admission decisions are made at
//! request arrivals by either a greedy baseline or a dueling double deep
//! Q-network trained on the uniformized event process.
//!
//! Module map:
//! - [`resources`]: resource vectors, requests and the shared pool
//! - [`analyzer`]: similarity grouping and sharing-aware allocation
//! - [`env`]: event process, states, rewards and the step contract
//! - [`neural`]: the dueling Q-network with hand-written backpropagation
//! - [`agent`]: replay, double-Q training, greedy baseline, evaluation
//! - [`harness`]: config files, experiment runners and CSV output

pub mod agent;
pub mod analyzer;
pub mod env;
pub mod error;
pub mod harness;
pub mod neural;
pub mod resources;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use agent::{evaluate, greedy_policy, EvalMetrics, Policy, ReplayBuffer, Trainer, TrainerConfig};
pub use analyzer::{jaccard, AdmissionOutcome, Analyzer, MetaInstance};
pub use env::{Action, EnvConfig, MetaSliceEnv, SystemEvent, SystemState};
pub use error::{Error, Insufficient, Result};
pub use neural::{Architecture, GradientSet, QNetwork};
pub use resources::{ClassParams, FunctionVector, MetaSliceSpec, ResourceVector, SystemPool};

/// Every random draw in the crate goes through ChaCha8.
pub type SimRng = ChaCha8Rng;

/// Independent random streams derived from one seed.
///
/// Streams in use: [`streams::ENV`] for the training environment,
/// [`streams::INIT`] for network initialization, [`streams::EXPLORE`] for
/// epsilon-greedy draws, [`streams::REPLAY`] for minibatch sampling and
/// [`streams::EVAL`] for the evaluation environment.
pub fn rng_stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub mod streams {
    pub const ENV: u64 = 0;
    pub const INIT: u64 = 1;
    pub const EXPLORE: u64 = 2;
    pub const REPLAY: u64 = 3;
    pub const EVAL: u64 = 4;
}
