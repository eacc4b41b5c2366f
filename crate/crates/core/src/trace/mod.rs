//! Per-head image-attention traces, exceedance counts and image-head masks.
//!
//! A trace entry is the `layers x heads` matrix of attention mass that the
//! last query puts on the image span at one generation step. Counting the
//! steps where an entry exceeds `tau` gives a [`CountMatrix`]; every head
//! with a nonzero count is an image head and gets bit 0 in the
//! [`ImageHeadMask`].

mod io;
mod profile;

use std::fmt;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{HeadGrid, HeadId};
use crate::model::StepOutput;
use crate::scalar::Scalar;

pub use io::{
    counts_from_str, counts_to_string, mask_from_str, mask_to_string, trace_from_csv, trace_to_csv,
    heatmap_csv, heatmap_pgm, read_counts, read_mask, read_trace_csv, write_counts, write_mask,
    write_trace_csv,
};
pub use profile::{profile, profile_counts, profile_parallel};

/// Binary `layers x heads` mask; `keep = false` marks an image head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageHeadMask {
    keep: HeadGrid<bool>,
    /// Threshold the mask was built with, if any.
    pub tau: Option<f64>,
    /// Free-form provenance, one line.
    pub source: String,
    pub config_hash: Option<String>,
}

impl ImageHeadMask {
    pub fn all_ones(layers: usize, heads: usize) -> Self {
        Self::from_keep(HeadGrid::filled(layers, heads, true))
    }

    pub fn from_keep(keep: HeadGrid<bool>) -> Self {
        Self {
            keep,
            tau: None,
            source: String::new(),
            config_hash: None,
        }
    }

    /// Mask with bit 0 exactly at `image_heads`.
    pub fn from_image_heads(layers: usize, heads: usize, image_heads: &[HeadId]) -> Result<Self> {
        let mut mask = Self::all_ones(layers, heads);
        for h in image_heads {
            if h.layer >= layers || h.head >= heads {
                return Err(Error::HeadOutOfRange {
                    layer: h.layer,
                    head: h.head,
                    layers,
                    heads,
                });
            }
            mask.set_image_head(h.layer, h.head);
        }
        Ok(mask)
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into().replace(['\n', '\r'], " ");
        self
    }

    pub fn with_config_hash(mut self, hash: Option<String>) -> Self {
        self.config_hash = hash;
        self
    }

    pub fn set_image_head(&mut self, layer: usize, head: usize) {
        *self.keep.get_mut(layer, head) = false;
    }

    /// `true` where the head output is kept.
    pub fn keep(&self) -> &HeadGrid<bool> {
        &self.keep
    }

    pub fn layers(&self) -> usize {
        self.keep.layers()
    }

    pub fn heads(&self) -> usize {
        self.keep.heads()
    }

    pub fn bit(&self, layer: usize, head: usize) -> u8 {
        u8::from(*self.keep.get(layer, head))
    }

    pub fn is_image_head(&self, id: HeadId) -> bool {
        !*self.keep.at(id)
    }

    pub fn num_image_heads(&self) -> usize {
        self.keep.as_slice().iter().filter(|k| !**k).count()
    }

    /// Image heads in row-major order.
    pub fn image_heads(&self) -> Vec<HeadId> {
        self.keep
            .iter()
            .filter(|(_, k)| !**k)
            .map(|(id, _)| id)
            .collect()
    }
}

/// Attention mass on the image span, one `layers x heads` entry per
/// generated token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    layers: usize,
    heads: usize,
    entries: Vec<HeadGrid<f64>>,
    /// Index of the corpus prompt each entry came from.
    prompts: Vec<usize>,
    pub config_hash: Option<String>,
}

impl AttentionTrace {
    pub fn new(layers: usize, heads: usize) -> Self {
        Self {
            layers,
            heads,
            entries: Vec::new(),
            prompts: Vec::new(),
            config_hash: None,
        }
    }

    /// Appends one entry; values must lie in `[0, 1]`.
    pub fn push(&mut self, entry: HeadGrid<f64>, prompt: usize) -> Result<()> {
        entry.check_shape(self.layers, self.heads)?;
        if let Some(v) = entry.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidSequence(format!("trace value {v} outside [0, 1]")));
        }
        self.entries.push(entry);
        self.prompts.push(prompt);
        Ok(())
    }

    /// Concatenates `other` after `self`.
    pub fn append(&mut self, other: AttentionTrace) -> Result<()> {
        if (other.layers, other.heads) != (self.layers, self.heads) {
            return Err(Error::ShapeMismatch {
                expected_layers: self.layers,
                expected_heads: self.heads,
                layers: other.layers,
                heads: other.heads,
            });
        }
        self.entries.extend(other.entries);
        self.prompts.extend(other.prompts);
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Number of recorded tokens `T`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[HeadGrid<f64>] {
        &self.entries
    }

    pub fn prompts(&self) -> &[usize] {
        &self.prompts
    }
}

/// Number of steps at which each head's image mass exceeded `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub counts: HeadGrid<u64>,
    pub tau: f64,
    pub total_tokens: u64,
    pub config_hash: Option<String>,
}

impl CountMatrix {
    pub fn zeros(layers: usize, heads: usize, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self {
            counts: HeadGrid::filled(layers, heads, 0),
            tau,
            total_tokens: 0,
            config_hash: None,
        })
    }

    /// Online update with one trace entry.
    pub fn observe(&mut self, entry: &HeadGrid<f64>) -> Result<()> {
        entry.check_shape(self.counts.layers(), self.counts.heads())?;
        for (id, v) in entry.iter() {
            if *v > self.tau {
                *self.counts.get_mut(id.layer, id.head) += 1;
            }
        }
        self.total_tokens += 1;
        Ok(())
    }

    /// Adds counts from a disjoint part of the corpus.
    pub fn merge(&mut self, other: &CountMatrix) -> Result<()> {
        other
            .counts
            .check_shape(self.counts.layers(), self.counts.heads())?;
        if other.tau != self.tau {
            return Err(Error::InvalidParams(format!(
                "cannot merge counts at tau {} and {}",
                self.tau, other.tau
            )));
        }
        if other.config_hash.is_some() && self.config_hash.is_some() && other.config_hash != self.config_hash {
            return Err(Error::ConfigHashMismatch {
                expected: self.config_hash.clone().unwrap_or_default(),
                found: other.config_hash.clone().unwrap_or_default(),
            });
        }
        let summed = HeadGrid::from_fn(self.counts.layers(), self.counts.heads(), |id| {
            self.counts.at(id) + other.counts.at(id)
        });
        self.counts = summed;
        self.total_tokens += other.total_tokens;
        if self.config_hash.is_none() {
            self.config_hash.clone_from(&other.config_hash);
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidTau(tau))
    }
}

/// Attention mass of every head's last-query row on `image_span`.
pub fn record_step<T: Scalar>(step: &StepOutput<T>, image_span: Range<usize>) -> Result<HeadGrid<f64>> {
    let len = step
        .attention
        .as_slice()
        .first()
        .map_or(0, |row| row.len());
    if image_span.start > image_span.end || image_span.end > len {
        return Err(Error::SpanOutOfRange {
            start: image_span.start,
            end: image_span.end,
            len,
        });
    }
    Ok(step.attention.map(|row| {
        let mass: f64 = row[image_span.clone()].iter().map(|v| v.to_f64_lossy()).sum();
        mass.clamp(0.0, 1.0)
    }))
}

/// `counts[l][h] = #{t : trace[t][l][h] > tau}`.
pub fn count_exceedances(trace: &AttentionTrace, tau: f64) -> Result<CountMatrix> {
    let mut counts = CountMatrix::zeros(trace.layers, trace.heads, tau)?;
    counts.config_hash.clone_from(&trace.config_hash);
    for entry in &trace.entries {
        counts.observe(entry)?;
    }
    Ok(counts)
}

/// Bit 0 exactly where the count is positive.
pub fn build_mask(counts: &CountMatrix) -> ImageHeadMask {
    ImageHeadMask {
        keep: counts.counts.map(|c| *c == 0),
        tau: Some(counts.tau),
        source: format!("counts over {} tokens", counts.total_tokens),
        config_hash: counts.config_hash.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub num_image_heads: usize,
    pub total_heads: usize,
    pub proportion: f64,
}

impl fmt::Display for MaskStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {:.2}%", self.num_image_heads, self.proportion * 100.0)
    }
}

pub fn mask_stats(mask: &ImageHeadMask) -> MaskStats {
    let total = mask.keep.len();
    let num = mask.num_image_heads();
    MaskStats {
        num_image_heads: num,
        total_heads: total,
        proportion: if total == 0 { 0.0 } else { num as f64 / total as f64 },
    }
}

/// Counts divided by their maximum; display only.
pub fn normalize_counts(counts: &CountMatrix) -> HeadGrid<f64> {
    let max = counts.counts.as_slice().iter().copied().max().unwrap_or(0);
    if max == 0 {
        return counts.counts.map(|_| 0.0);
    }
    counts.counts.map(|c| *c as f64 / max as f64)
}

/// Overlap of two image-head sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub intersection: usize,
    pub union: usize,
    pub ratio: f64,
}

impl fmt::Display for Overlap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{:.2}", self.intersection, self.union, self.ratio)
    }
}

impl Overlap {
    pub fn from_counts(intersection: usize, union: usize) -> Self {
        let ratio = if union == 0 {
            1.0
        } else {
            intersection as f64 / union as f64
        };
        Self {
            intersection,
            union,
            ratio,
        }
    }
}

pub fn mask_overlap(a: &ImageHeadMask, b: &ImageHeadMask) -> Result<Overlap> {
    b.keep.check_shape(a.layers(), a.heads())?;
    let (mut inter, mut union) = (0, 0);
    for (ka, kb) in a.keep.as_slice().iter().zip(b.keep.as_slice()) {
        let (ia, ib) = (!ka, !kb);
        inter += usize::from(ia && ib);
        union += usize::from(ia || ib);
    }
    Ok(Overlap::from_counts(inter, union))
}

/// Mask with as many image heads as `reference`, drawn uniformly without
/// replacement from the heads `reference` keeps.
pub fn random_mask(reference: &ImageHeadMask, seed: u64) -> Result<ImageHeadMask> {
    let complement: Vec<HeadId> = reference
        .keep
        .iter()
        .filter(|(_, k)| **k)
        .map(|(id, _)| id)
        .collect();
    let k = reference.num_image_heads();
    if k > complement.len() {
        return Err(Error::Infeasible(format!(
            "{k} image heads but only {} other heads",
            complement.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, complement.len(), k);
    let mut mask = ImageHeadMask::all_ones(reference.layers(), reference.heads());
    for i in picked.iter() {
        let id = complement[i];
        mask.set_image_head(id.layer, id.head);
    }
    mask.tau = reference.tau;
    mask.config_hash.clone_from(&reference.config_hash);
    mask.source = format!("random {k} heads, seed {seed}");
    Ok(mask)
}
