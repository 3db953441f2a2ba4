//! Persistence and accounting: WAV files, checkpoints and cost reports.

mod checkpoint;
mod cost;
mod wav;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, TensorEntry, TrainState, MAGIC, VERSION,
};
pub use cost::{conv_macs, count_macs, count_params, gated_conv_macs, lstm_macs, CostReport, LayerCost, ParamBreakdown};
pub use wav::{read_wav, to_pcm16, write_wav};
