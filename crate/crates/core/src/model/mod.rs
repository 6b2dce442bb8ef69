//! The Siamese LPCDNet: residual encoder, multi-layer feature compression
//! and the two-layer decision network.

pub mod checkpoint;
mod config;
mod net;

pub use config::{HeadKind, NetworkConfig, StageSpec, DOWNSAMPLING};
pub use net::{
    bind, block_prefix, head_prefix, predict, Classifier, ForwardPass, Layout, LpcdNet, Mode, ParamMap, VarMap, BN_EPS,
    BN_MOMENTUM,
};

/// Scalars in a `k x k` convolution, optionally with a bias.
pub fn conv_param_count(c_in: usize, c_out: usize, k: usize, bias: bool) -> usize {
    c_in * c_out * k * k + if bias { c_out } else { 0 }
}
