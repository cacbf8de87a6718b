pub mod autodiff;
pub mod checkpoint;
pub mod detection;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod ppg;
pub mod rpcm;
pub mod synth;
