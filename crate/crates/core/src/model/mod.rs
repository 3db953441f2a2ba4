//! The dual-branch network: configuration, parameter layout, offline and
//! streaming forward passes.

mod config;
pub mod glstm;
pub mod graph;
pub mod layout;
pub mod stream;

pub use config::ModelConfig;
pub use glstm::{glstm_forward, group_permutation, invert_permutation, rearrange_groups};
pub use graph::{
    bridge_apply, branch_inputs, forward, forward_frames, forward_single, init_model, overlap_add_var, Branches, Frozen,
    Model, NetState, Outputs, View,
};
pub use layout::{schema, Branch, DbNet, Init, ParamSpec};
pub use stream::{flush_streaming, forward_streaming, StreamChunk, StreamState};
