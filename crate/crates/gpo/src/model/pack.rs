use std::ops::Range;

use crate::error::{validation_err, Result};

/// One context observation: a viewpoint embedding and its preference score.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextPair {
    pub x: Vec<f32>,
    pub y: f64,
}

/// One viewpoint to score, tagged with the question block it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetToken {
    pub x: Vec<f32>,
    pub block: usize,
}

/// Tokens ready for the transformer: `m` context rows `[x ‖ y]` followed by
/// target rows `[x ‖ 0]`. No positional information is attached.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedSequence {
    /// Row-major `n × width`.
    pub tokens: Vec<f64>,
    pub width: usize,
    pub m: usize,
    /// Target index ranges (relative to the first target) per question block.
    pub blocks: Vec<Range<usize>>,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_targets(&self) -> usize {
        self.len() - self.m
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.tokens[i * self.width..(i + 1) * self.width]
    }
}

/// Packs context pairs and targets into one token sequence.
///
/// Targets of the same block must be contiguous.
pub fn pack_sequence(
    d_embed: usize,
    context: &[ContextPair],
    targets: &[TargetToken],
) -> Result<PackedSequence> {
    let width = d_embed + 1;
    let mut tokens = Vec::with_capacity((context.len() + targets.len()) * width);
    for (i, c) in context.iter().enumerate() {
        if c.x.len() != d_embed {
            return validation_err(format!(
                "context pair {i} has dimension {}, expected {d_embed}",
                c.x.len()
            ));
        }
        if !c.y.is_finite() {
            return validation_err(format!("context pair {i} has non-finite score {}", c.y));
        }
        tokens.extend(c.x.iter().map(|&v| v as f64));
        tokens.push(c.y);
    }
    let mut blocks: Vec<Range<usize>> = Vec::new();
    let mut ids: Vec<usize> = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        if t.x.len() != d_embed {
            return validation_err(format!(
                "target {i} has dimension {}, expected {d_embed}",
                t.x.len()
            ));
        }
        tokens.extend(t.x.iter().map(|&v| v as f64));
        tokens.push(0.0);
        match ids.last() {
            Some(&b) if b == t.block => blocks.last_mut().expect("paired").end = i + 1,
            _ => {
                if ids.contains(&t.block) {
                    return validation_err(format!(
                        "targets of block {} are not contiguous (target {i})",
                        t.block
                    ));
                }
                ids.push(t.block);
                blocks.push(i..i + 1);
            }
        }
    }
    Ok(PackedSequence {
        tokens,
        width,
        m: context.len(),
        blocks,
    })
}
