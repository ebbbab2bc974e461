//! Attention-based neural machine translation with shallow and deep
//! fusion of a recurrent language model.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` and `*32` aliases below name the concrete instantiations.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod models;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type ParameterSet64 = params::ParameterSet<f64>;
pub type ParameterSet32 = params::ParameterSet<f32>;
pub type NmtModel64 = models::NmtModel<f64>;
pub type NmtModel32 = models::NmtModel<f32>;
pub type RnnLm64 = models::RnnLm<f64>;
pub type RnnLm32 = models::RnnLm<f32>;
pub type FusedModel64 = models::FusedModel<f64>;
pub type FusedModel32 = models::FusedModel<f32>;
pub type Translation64 = decoding::Translation<f64>;
