//! Sequence-level importance-weight reshaping for off-policy policy gradients.
//!
//! The crate is organised bottom-up:
//!
//! - [`kernels`]: reshaping kernels (the shifted gamma kernel and the GRPO/GSPO/clip
//!   baselines), the incomplete-gamma surrogate and the special functions behind it.
//! - [`policy`]: tabular autoregressive softmax policies with exact enumeration.
//! - [`gradient`]: group advantages and every policy-gradient estimator, plus exact
//!   enumerated expectations used as oracles.
//! - [`variational`]: finite-support checks of the proposal-distribution derivation.
//! - [`harness`]: staleness and asynchronous training loops with CSV logging.
//! - [`oracle`]: independent numerical references (quadrature, finite differences,
//!   a barrier-method simplex search).
//! - [`checks`]: the property registry driven by `vespo-lab verify`.

pub mod checks;
pub mod error;
pub mod gradient;
pub mod harness;
pub mod kernels;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod variational;

pub use error::{Error, Result};
pub use gradient::{AdvantageBatch, Estimator, GradientEstimate, GradientVector};
pub use harness::{reference_config, AsyncConfig, Method, TrainConfig, TrainLog};
pub use kernels::{AdvantageSign, ClipParams, KernelParams, LengthNorm, LogWeight, SequenceKernel};
pub use policy::{ContextOrder, RewardKind, RewardSpec, SoftmaxPolicy, Trajectory};
pub use variational::{DiscreteDistribution, ProposalSolution, VariationalInstance};
