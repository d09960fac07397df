pub mod binfmt;
pub mod metrics;
pub mod numeric;
pub mod sampler;
pub mod scene;
pub mod difficulty;
pub mod embedding;
pub mod mae;
pub mod pipeline;
pub mod pretrain;
pub mod synth;
