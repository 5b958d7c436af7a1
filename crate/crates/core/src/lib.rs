//! Cross-silo federated learning with loss-reduction-adjusted re-weighting.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: flat parameter vectors and deterministic reductions
//! * [`models`]: small differentiable models with analytic gradients
//! * [`datagen`]: synthetic heterogeneous client populations
//! * [`optim`]: client and server optimizers
//! * [`engine`]: the round protocol, weighting mechanisms and aggregation
//! * [`metrics`]: per-client evaluation with macro and micro averages
//! * [`transport`]: binary framing and the TCP server/client
//! * [`experiment`]: configuration, learning paradigms and output files

pub mod datagen;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod seeds;
pub mod tensor;
pub mod transport;

pub use datagen::{generate_population, merge, ClientDataset, PopulationSpec, Split};
pub use engine::{
    aggregate_and_update, compute_weights, local_training, run_federated, AlgorithmKind,
    AlgorithmSpec, ClientUpdate, FederatedRun, Participation, RoundRecord, WeightingMechanism,
};
pub use error::{Error, Result};
pub use metrics::{evaluate_all, EvalReport};
pub use models::{
    init_params, loss, loss_and_grad, Activation, Batch, ModelKind, ModelSpec, Targets,
};
pub use optim::{client_step, server_step, Optimizer, OptimizerKind, OptimizerSpec};
pub use tensor::{axpy, l2_norm_sq, weighted_sum, ParamVector};
