//! The translation model, the language model and their deep-fusion
//! composite.

mod fused;
mod lm;
mod nmt;

pub use fused::{FusedBound, FusedModel, FusedStep, FusedVars, GATE_BIAS_INIT};
pub use lm::{LmConfig, LmState, RnnLm};
pub use nmt::{
    AnnotationMatrix, AttentionScores, AttentionVars, DecoderVars, EncodedVars, NmtConfig,
    NmtModel, NmtStep,
};

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::scalar::Scalar;

/// Copies the values of `src` into `dst`; both must hold the same ids with
/// the same shapes.
pub(crate) fn adopt_params<T: Scalar>(
    dst: &mut ParameterSet<T>,
    src: ParameterSet<T>,
) -> Result<()> {
    if src.len() != dst.len() {
        return Err(Error::Format(format!(
            "expected {} parameter blocks, found {}",
            dst.len(),
            src.len()
        )));
    }
    for p in dst.iter_mut() {
        let q = src
            .by_id(&p.id)
            .ok_or_else(|| Error::Format(format!("missing parameter block {}", p.id)))?;
        if q.value.shape() != p.value.shape() {
            return Err(Error::Format(format!(
                "parameter {} has shape {:?}, expected {:?}",
                p.id,
                q.value.shape(),
                p.value.shape()
            )));
        }
        p.value = q.value.clone();
    }
    Ok(())
}
