//! Dense tensor core with reverse-mode differentiation and the layer
//! primitives the network needs.

mod adam;
pub mod conv;
pub mod lstm;
mod norm;
mod params;
pub mod real;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::ConvGeom;
pub use lstm::LstmState;
pub use norm::BnMode;
pub use params::{BnStats, ParamId, ParamStore, ParamTensor};
pub use real::Real;
pub use tape::{Backward, GatedVars, Tape, Var};
pub use tensor::{Axis, Dims, Tensor};

use rand::Rng;

/// Uniform `[-bound, bound]` fill, the fan-in scaled initializer used for
/// conv and LSTM weights.
pub fn uniform<T: Real, R: Rng>(dims: Dims, bound: f64, rng: &mut R) -> Tensor<T> {
    let data = (0..dims.numel()).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
    Tensor::from_vec(dims, data).expect("dims match")
}
