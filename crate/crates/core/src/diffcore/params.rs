use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};

/// Contiguous named slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Whether optimizer updates apply to this block.
    pub trainable: bool,
}

/// Flat parameter vector of a whole model with a name registry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub values: Vec<f64>,
    pub blocks: Vec<ParamBlock>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block and returns its offset.
    pub fn push_block(&mut self, name: impl Into<String>, values: Vec<f64>, trainable: bool) -> usize {
        let offset = self.values.len();
        self.blocks.push(ParamBlock {
            name: name.into(),
            offset,
            len: values.len(),
            trainable,
        });
        self.values.extend(values);
        offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn block_values(&self, name: &str) -> Option<&[f64]> {
        self.block(name).map(|b| &self.values[b.offset..b.offset + b.len])
    }

    /// `block[i]` identifier of a flat index.
    pub fn describe(&self, index: usize) -> String {
        self.blocks
            .iter()
            .find(|b| index >= b.offset && index < b.offset + b.len)
            .map(|b| format!("{}[{}]", b.name, index - b.offset))
            .unwrap_or_else(|| format!("#{index}"))
    }

    /// Per-entry mask of trainable entries.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for b in &self.blocks {
            if b.trainable {
                mask[b.offset..b.offset + b.len].fill(true);
            }
        }
        mask
    }

    /// Records every parameter as a leaf, in order, so dense layers see
    /// contiguous weight rows.
    pub fn load(&self, tape: &mut Tape) -> Vec<Var> {
        tape.vars(&self.values)
    }
}
