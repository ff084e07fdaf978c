//! Flat latent vectors with named, shaped blocks.

use std::collections::HashSet;
use std::ops::Range;
use std::sync::Arc;

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Block {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.size()
    }
}

/// Ordered block declaration. Flattening follows declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    blocks: Vec<Block>,
    total_dim: usize,
}

impl Layout {
    pub fn new<S: Into<String>>(blocks: impl IntoIterator<Item = (S, Vec<usize>)>) -> Result<Arc<Self>> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut offset = 0;
        for (name, shape) in blocks {
            let name = name.into();
            if !seen.insert(name.clone()) {
                return Err(Error::Config(format!("duplicate latent block name `{name}`")));
            }
            let block = Block {
                name,
                shape,
                offset,
            };
            if block.size() == 0 {
                return Err(Error::Config(format!("latent block `{}` is empty", block.name)));
            }
            offset += block.size();
            out.push(block);
        }
        if out.is_empty() {
            return Err(Error::Config("layout needs at least one block".into()));
        }
        Ok(Arc::new(Self {
            blocks: out,
            total_dim: offset,
        }))
    }

    /// Single unnamed-style block of the given length.
    pub fn flat(name: &str, dim: usize) -> Result<Arc<Self>> {
        Self::new([(name, vec![dim])])
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn range(&self, name: &str) -> Result<Range<usize>> {
        self.block(name)
            .map(Block::range)
            .ok_or_else(|| Error::Config(format!("no latent block named `{name}`")))
    }
}

/// A point in standardized latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl LatentVector {
    pub fn zeros(layout: &Arc<Layout>) -> Self {
        Self {
            layout: Arc::clone(layout),
            values: vec![0.0; layout.total_dim()],
        }
    }

    pub fn from_values(layout: &Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        check_len("latent vector", layout.total_dim(), values.len())?;
        Ok(Self {
            layout: Arc::clone(layout),
            values,
        })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn total_dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn block(&self, name: &str) -> Result<&[f64]> {
        let r = self.layout.range(name)?;
        Ok(&self.values[r])
    }

    pub fn block_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let r = self.layout.range(name)?;
        Ok(&mut self.values[r])
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_values(&self.layout, values)
    }

    pub(crate) fn check_layout(&self, expected: &Layout) -> Result<()> {
        if self.layout.as_ref() == expected {
            Ok(())
        } else {
            Err(Error::Shape {
                context: "latent layout",
                expected: expected.total_dim(),
                actual: self.total_dim(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_follow_declaration_order() {
        let layout = Layout::new([("s", vec![4, 4]), ("a", vec![1]), ("tau", vec![8])]).unwrap();
        assert_eq!(layout.total_dim(), 25);
        assert_eq!(layout.range("s").unwrap(), 0..16);
        assert_eq!(layout.range("a").unwrap(), 16..17);
        assert_eq!(layout.range("tau").unwrap(), 17..25);
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(Layout::new([("x", vec![2]), ("x", vec![3])]).is_err());
    }

    #[test]
    fn block_access_and_length_check() {
        let layout = Layout::new([("a", vec![2]), ("b", vec![3])]).unwrap();
        let mut v = LatentVector::zeros(&layout);
        v.block_mut("b").unwrap().copy_from_slice(&[1.0, 2.0, 3.0]);
        assert_eq!(v.as_slice(), &[0.0, 0.0, 1.0, 2.0, 3.0]);
        assert!(LatentVector::from_values(&layout, vec![0.0; 4]).is_err());
        assert!(v.block("c").is_err());
    }
}
