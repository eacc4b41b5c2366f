//! Dense `layers x heads` containers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position of one attention head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }
}

/// Row-major `layers x heads` grid; row = layer, column = head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadGrid<V> {
    layers: usize,
    heads: usize,
    values: Vec<V>,
}

impl<V: Clone> HeadGrid<V> {
    pub fn filled(layers: usize, heads: usize, value: V) -> Self {
        Self {
            layers,
            heads,
            values: vec![value; layers * heads],
        }
    }
}

impl<V> HeadGrid<V> {
    pub fn from_fn(layers: usize, heads: usize, mut f: impl FnMut(HeadId) -> V) -> Self {
        let mut values = Vec::with_capacity(layers * heads);
        for layer in 0..layers {
            for head in 0..heads {
                values.push(f(HeadId::new(layer, head)));
            }
        }
        Self {
            layers,
            heads,
            values,
        }
    }

    pub fn from_vec(layers: usize, heads: usize, values: Vec<V>) -> Result<Self> {
        if values.len() != layers * heads {
            return Err(Error::InvalidSequence(format!(
                "grid of {layers}x{heads} needs {} values, got {}",
                layers * heads,
                values.len()
            )));
        }
        Ok(Self {
            layers,
            heads,
            values,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, layer: usize, head: usize) -> &V {
        assert!(layer < self.layers && head < self.heads);
        &self.values[layer * self.heads + head]
    }

    pub fn get_mut(&mut self, layer: usize, head: usize) -> &mut V {
        assert!(layer < self.layers && head < self.heads);
        &mut self.values[layer * self.heads + head]
    }

    pub fn at(&self, id: HeadId) -> &V {
        self.get(id.layer, id.head)
    }

    pub fn as_slice(&self) -> &[V] {
        &self.values
    }

    pub fn row(&self, layer: usize) -> &[V] {
        &self.values[layer * self.heads..(layer + 1) * self.heads]
    }

    pub fn iter(&self) -> impl Iterator<Item = (HeadId, &V)> {
        let heads = self.heads;
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (HeadId::new(i / heads, i % heads), v))
    }

    pub fn map<W>(&self, mut f: impl FnMut(&V) -> W) -> HeadGrid<W> {
        HeadGrid {
            layers: self.layers,
            heads: self.heads,
            values: self.values.iter().map(&mut f).collect(),
        }
    }

    pub fn same_shape<W>(&self, other: &HeadGrid<W>) -> bool {
        self.layers == other.layers && self.heads == other.heads
    }

    pub fn check_shape(&self, layers: usize, heads: usize) -> Result<()> {
        if self.layers == layers && self.heads == heads {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected_layers: layers,
                expected_heads: heads,
                layers: self.layers,
                heads: self.heads,
            })
        }
    }
}
