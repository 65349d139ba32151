//! LSTM encoder-decoder models for anomaly detection on symbolic sequences.
//!
//! Three variants share one architecture and differ only in their training
//! target. Model-A predicts the next window, Model-B predicts the window
//! shifted by half its length, and Model-C restores the input window. The
//! crate provides the models, synthetic corpora, training, and the evaluation
//! used to compare them.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). The `f64`
//! aliases below are what the experiment pipeline uses.

pub mod batched;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod lstm;
pub mod numerics;
pub mod red;
pub mod train;

pub use error::{Error, Result};
pub use numerics::{ParamSet, Rng, Scalar};
pub use red::Variant;

pub type Matrix = numerics::Matrix<f64>;
pub type RealVec = numerics::Vector<f64>;
pub type LstmParams = lstm::LstmParams<f64>;
pub type LstmState = lstm::LstmState<f64>;
pub type RedModel = red::RedModel<f64>;
pub type RedTrace = red::RedTrace<f64>;
pub type Corpus = corpus::Corpus<f64>;
pub type SequencePair = corpus::SequencePair<f64>;

pub type RedModel32 = red::RedModel<f32>;
