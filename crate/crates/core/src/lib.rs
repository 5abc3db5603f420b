//! Political-coordinate news recommendation: synthetic corpus and user
//! simulation, a bias-disentangling autoencoder, constructed political
//! coordinates, neighbor-graph recommenders and their evaluation.

pub mod corpus;
pub mod cpc;
pub mod disentangler;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod nn;
pub mod population;
pub mod recommender;
pub mod scalar;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DenseNet = nn::DenseNet<f64>;
pub type AttentionPool = nn::AttentionPool<f64>;
pub type Optimizer = nn::Optimizer<f64>;
pub type DisentanglerModel = disentangler::DisentanglerModel<f64>;
pub type PolarizedEmbedding = cpc::PolarizedEmbedding<f64>;
pub type LandmarkSet = cpc::LandmarkSet<f64>;
pub type CpcVector = cpc::CpcVector<f64>;
