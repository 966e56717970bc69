//! Pointer-generator network: bidirectional LSTM encoder, single- or
//! multi-head attention with coverage, generator softmax, soft switch and
//! the extended-vocabulary mixture.

mod checkpoint;
mod network;
mod params;

pub use checkpoint::{Checkpoint, MAGIC};
pub use network::{
    final_distribution, pointer_dropout_decision, DecoderState, EncoderOutput, ExtendedSource, Network,
    StepFlags, StepOutput, TeacherForced,
};
pub use params::{Bound, HeadSet, ModelConfig, ModelParams, ParamSet};

#[cfg(test)]
pub(crate) mod tests;
