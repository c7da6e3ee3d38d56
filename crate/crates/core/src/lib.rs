//! Self-training for low-resource neural machine translation.
//!
//! The pipeline ranks monolingual source sentences by n-gram overlap with
//! the test domain, translates the nearest ones with a baseline attention
//! encoder-decoder, keeps the translations the model is most confident
//! about, and retrains by pre-training on the synthetic pairs and
//! fine-tuning on the authentic ones.
//!
//! The numeric core ([`tensor`], [`autodiff`], [`optim`], [`nmt`]) is
//! generic over [`Scalar`]; the aliases below fix it to `f64`, which is what
//! the pipeline uses.

pub mod autodiff;
pub mod bpe;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fda;
pub mod nmt;
pub mod optim;
pub mod pipeline;
pub mod qe;
pub mod scalar;
pub mod seed;
pub mod tensor;
pub mod toy;
pub mod vocab;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Real = f64;
pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type AdamState = optim::AdamState<f64>;
pub type ParameterSet = nmt::ParameterSet<f64>;
pub type Model = nmt::Seq2Seq<f64>;
pub type Model32 = nmt::Seq2Seq<f32>;
pub type Checkpoint = nmt::Checkpoint<f64>;
pub type Hypothesis = nmt::Hypothesis<f64>;
