//! Parameterized building blocks: recurrent cells, embeddings, the maxout
//! deep-output layer, and training-time noise.

mod deep_output;
mod embedding;
mod gru;
mod init;
mod lstm;
mod noise;

pub use deep_output::DeepOutputLayer;
pub use embedding::Embedding;
pub use gru::GruCell;
pub use init::{orthonormal, ParamInit};
pub use lstm::{LstmCell, LstmState};
pub use noise::{dropout_mask, perturb, NoiseConfig};

/// Hidden-to-hidden matrices of the recurrent cells.
pub fn is_recurrent(id: &str) -> bool {
    [".U_z", ".U_r", ".U_h", ".lstm.U"]
        .iter()
        .any(|s| id.ends_with(s))
}
