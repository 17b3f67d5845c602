//! Distributed policy iteration for networks of identical LTI agents.
//!
//! The crate is generic over the scalar type through the [`Scalar`] trait
//! (satisfied by `f32` and `f64`); the `*F32`/`*F64` aliases at the root
//! pin the two supported precisions.
//!
//! Module map:
//! - [`patterned`] — the two-block matrix family closed under products,
//!   inverses and Lyapunov solves;
//! - [`graph`] — communication topologies, subgraph selection and the
//!   graph-coupled cost matrices;
//! - [`lti`] — the networked plant, compound policies and the black-box
//!   simulation channel;
//! - [`spe`] — recursive-least-squares policy evaluation on excited
//!   subgraph trajectories;
//! - [`d3pi`] — the outer loop: block recovery, structured gain updates
//!   and stability margins;
//! - [`oracle`] — model-based ground truth for tests and baselines only.

pub mod d3pi;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod lti;
pub mod oracle;
pub mod patterned;
pub mod scalar;
pub mod spe;

pub use error::{Error, Result};
pub use scalar::{fp, Scalar};

pub type PatternedMatrixF32 = patterned::PatternedMatrix<f32>;
pub type PatternedMatrixF64 = patterned::PatternedMatrix<f64>;
pub type AgentModelF32 = lti::AgentModel<f32>;
pub type AgentModelF64 = lti::AgentModel<f64>;
pub type ClosedLoopSimF32 = lti::ClosedLoopSim<f32>;
pub type ClosedLoopSimF64 = lti::ClosedLoopSim<f64>;
pub type SpeConfigF32 = spe::SpeConfig<f32>;
pub type SpeConfigF64 = spe::SpeConfig<f64>;
pub type D3piConfigF32 = d3pi::D3piConfig<f32>;
pub type D3piConfigF64 = d3pi::D3piConfig<f64>;
pub type D3piResultF32 = d3pi::D3piResult<f32>;
pub type D3piResultF64 = d3pi::D3piResult<f64>;
