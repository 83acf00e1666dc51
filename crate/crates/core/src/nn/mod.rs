//! Layers, parameter storage, initialization, optimizer and schedule.

pub mod activation;
pub mod conv;
pub mod init;
pub mod norm;
pub mod optim;
pub mod params;
pub mod schedule;

pub use activation::Activation;
pub use conv::ConvSpec;
pub use init::{initialize, Init, ParamSpec};
pub use optim::{AdamW, OptimError, OptimState};
pub use params::{ParamError, ParamStore};
pub use schedule::{cosine_lr, ScheduleError};
