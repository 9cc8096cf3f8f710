pub mod agent;
pub mod config;
pub mod data;
pub mod env;
pub mod eval;
pub mod kg;
pub mod nn;
pub mod pipeline;
pub mod training;
