//! The FedMD-CG protocol: two-stage client training, server aggregation in
//! four manners, the lambda ramp and the round loop.

pub mod client;
pub mod config;
pub mod protocol;
pub mod server;

pub use client::{
    client_generator_update, client_model_update, model_weights, sample_batch, Broadcast, ClientData, ClientState,
    generator_step, model_step, ModelBatch, ModelUpdate,
};
pub use config::{ramp_lambda, AggMode, RunConfig};
pub use protocol::{initial_parameters, run_protocol, Federation, Protocol};
pub use server::{server_aggregate, weighted_average, GlobalState, Upload};
