use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{Bound, ParamId, ParameterSet};
use crate::scalar::Scalar;

use super::ParamInit;

/// Lookup table of word vectors, one row per token id.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub vocab: usize,
    pub dim: usize,
    table: ParamId,
}

impl Embedding {
    pub fn build<T: Scalar>(
        ps: &mut ParameterSet<T>,
        id: &str,
        vocab: usize,
        dim: usize,
        init: &mut ParamInit,
    ) -> Result<Self> {
        let table = ps.add(id, init.gaussian(&[vocab, dim]))?;
        Ok(Embedding { vocab, dim, table })
    }

    pub fn lookup<T: Scalar>(&self, tape: &Tape<T>, b: &Bound, token: usize) -> Result<Var> {
        tape.row(b[self.table], token)
    }

    pub fn table(&self) -> ParamId {
        self.table
    }
}
