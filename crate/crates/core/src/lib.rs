//! Meta-learned coordinate-wise step-size policies for continuous optimization.
//!
//! * [`prior`]: synthetic objectives (quadratic + random Fourier features)
//! * [`transform`]: boundary scaling, online z-scoring and gradient Jacobians
//! * [`env`]: the optimization episode driven by a step-size policy
//! * [`autodiff`]: a small reverse-mode tape used to train the policy
//! * [`policy`]: the transformer actor-critic
//! * [`ppo`]: meta-training with PPO
//! * [`baselines`]: classical optimizers under the same evaluation budget
//! * [`bench`]: analytic benchmark functions
//! * [`metrics`]: normalized improvement, normalized regret, ranks

pub mod autodiff;
pub mod baselines;
pub mod bench;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod metrics;
pub mod objective;
pub mod policy;
pub mod ppo;
pub mod prior;
pub mod rng;
pub mod stats;
pub mod transform;

pub use error::{PopError, Result};
