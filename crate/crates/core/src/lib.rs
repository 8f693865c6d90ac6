pub mod agent;
pub mod autodiff;
pub mod checkpoint;
pub mod cmdp;
pub mod config;
pub mod critics;
pub mod envs;
pub mod error;
pub mod lagrangian;
pub mod lp;
pub mod nn;
pub mod policy;
pub mod report;
pub mod rng;
pub mod rollout;
pub mod run;
pub mod tensor;
pub mod ucb;
pub mod world_model;

pub use error::{Error, Result};
