use std::sync::Arc;

use super::Mode;
use crate::error::{validation_err, Result};
use crate::numcore::BoolMatrix;

/// Attention layout for `m` context tokens followed by `n - m` targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionMaskSpec {
    pub m: usize,
    pub n: usize,
    pub mode: Mode,
}

impl AttentionMaskSpec {
    pub fn allows(&self, i: usize, j: usize) -> bool {
        match self.mode {
            Mode::Gpo => j < self.m || (i >= self.m && i == j),
            Mode::CausalAblation => j <= i,
        }
    }

    pub fn to_matrix(&self) -> BoolMatrix {
        BoolMatrix::from_fn(self.n, |i, j| self.allows(i, j))
    }

    pub fn to_shared(&self) -> Arc<BoolMatrix> {
        Arc::new(self.to_matrix())
    }
}

pub fn build_mask(m: usize, n: usize, mode: Mode) -> Result<AttentionMaskSpec> {
    if m == 0 {
        return validation_err("at least one context example required");
    }
    if m > n {
        return validation_err(format!("context size {m} exceeds sequence length {n}"));
    }
    Ok(AttentionMaskSpec { m, n, mode })
}
