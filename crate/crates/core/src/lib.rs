//! Short-term multi-energy demand forecasting with small convolutional
//! networks.
//!
//! The crate covers the whole pipeline: a rank-4 tensor and hand-written
//! layer kernels ([`nn`]), Adam training ([`optim`]), the six forecasting
//! architectures ([`arch`]), half-hourly building-load data handling
//! ([`data`]), correlation-driven input selection ([`featsel`]), error
//! metrics ([`metrics`]) and an average federated learning simulator
//! ([`fed`]).

pub mod arch;
pub mod data;
pub mod featsel;
pub mod fed;
pub mod forecast;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use tensor::{Shape4, Tensor4};
