//! State-free reversible VAMPnets: a feed-forward network whose outputs,
//! linearly recombined by the variational solve, approximate the slowest
//! eigenfunctions.

mod loss;
mod mlp;
mod train;

pub use loss::{loss_gradient, loss_report, vamp2_loss, LossReport, LossTransform, DEGENERACY_GAP};
pub use mlp::{
    forward_cached, mlp_backward, mlp_forward, mlp_jacobian, Activation, ForwardCache, MlpSpec,
    NetworkParams,
};
pub use train::{srv_gradient_wrt_input, srv_transform, train_srv, EpochRecord, SrvModel, TrainConfig};
