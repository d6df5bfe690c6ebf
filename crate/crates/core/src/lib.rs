pub mod ablate;
pub mod baselines;
pub mod checkpoint;
pub mod corpus;
pub mod embed;
pub mod explain;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synth;
