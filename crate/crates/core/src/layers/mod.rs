//! Learnable layers (shared MLP, local fully-connected, their edge
//! variants, batch normalization) and the parameter store they draw from.

mod fused;
mod mlp;
mod store;

pub use fused::{
    add_max, batch_norm_act, channel_stats, edge_lfc_linear, edge_linear, linear, residual,
    ChannelStats,
};
pub use mlp::{BatchNorm, Lfc, Mlp, LEAKY_SLOPE};
pub use store::{
    kaiming_bound, uniform_tensor, BnUpdate, Entry, EntryKind, Mode, ParamStore, Pass,
    PassOutcome, Pid,
};
