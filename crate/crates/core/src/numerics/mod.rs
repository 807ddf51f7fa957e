//! Dense tensors, seeded randomness, reverse-mode differentiation and the
//! layer primitives the rest of the crate is built from.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod ktsr;
pub mod layers;
pub mod params;
pub mod rng;
pub mod tensor;

pub use graph::{Graph, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use rng::SeededRng;
pub use tensor::{Real, Tensor};
