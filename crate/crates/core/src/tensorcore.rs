//! Partitioned parameter vectors and the elementwise primitives the
//! optimizers build on.
//!
//! A model's trainable state is one flat `f64` vector. A [`Layout`] splits it
//! into named, contiguous tensors (for a network: one per weight matrix and
//! one per bias) so that per-tensor statistics such as the curvature
//! quantile can be taken without copying.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Partition {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Ordered, disjoint, contiguous partitions covering `[0, total_len)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    partitions: Vec<Partition>,
    total_len: usize,
}

impl Layout {
    /// Builds a layout from `(name, len)` pairs laid out back to back.
    pub fn from_sizes<S: Into<String>>(sizes: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let mut partitions = Vec::new();
        let mut offset = 0;
        for (name, len) in sizes {
            let name = name.into();
            if partitions.iter().any(|p: &Partition| p.name == name) {
                return Err(Error::usage(format!("duplicate partition name `{name}`")));
            }
            partitions.push(Partition { name, offset, len });
            offset += len;
        }
        Ok(Self {
            partitions,
            total_len: offset,
        })
    }

    /// A single partition spanning the whole vector.
    pub fn single(name: impl Into<String>, len: usize) -> Self {
        Self {
            partitions: vec![Partition {
                name: name.into(),
                offset: 0,
                len,
            }],
            total_len: len,
        }
    }

    /// Validates an explicit partition list: sorted, disjoint, gap-free, covering `[0, total_len)`.
    pub fn new(partitions: Vec<Partition>, total_len: usize) -> Result<Self> {
        let mut cursor = 0;
        for p in &partitions {
            if p.offset != cursor {
                return Err(Error::usage(format!(
                    "partition `{}` starts at {} but previous partition ends at {}",
                    p.name, p.offset, cursor
                )));
            }
            cursor += p.len;
        }
        if cursor != total_len {
            return Err(Error::usage(format!(
                "partitions cover {cursor} entries, vector has {total_len}"
            )));
        }
        for (i, p) in partitions.iter().enumerate() {
            if partitions[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::usage(format!("duplicate partition name `{}`", p.name)));
            }
        }
        Ok(Self {
            partitions,
            total_len,
        })
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn len(&self) -> usize {
        self.total_len
    }

    pub fn is_empty(&self) -> bool {
        self.total_len == 0
    }

    pub fn get(&self, name: &str) -> Option<&Partition> {
        self.partitions.iter().find(|p| p.name == name)
    }
}

/// Flat parameter vector plus its per-tensor layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedParams {
    pub data: Vec<f64>,
    layout: Layout,
}

impl PartitionedParams {
    pub fn new(data: Vec<f64>, layout: Layout) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::usage(format!(
                "data has {} entries, layout expects {}",
                data.len(),
                layout.len()
            )));
        }
        Ok(Self { data, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        Self {
            data: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|p| &self.data[p.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.data[range])
    }

    /// Per-tensor views in layout order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.layout
            .partitions
            .iter()
            .map(move |p| (p.name.as_str(), &self.data[p.range()]))
    }
}

/// Elementwise projection onto `[lo, hi]`.
pub fn clamp_elementwise(x: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    check_clamp_bounds(lo, hi)?;
    Ok(x.iter().map(|&v| v.max(lo).min(hi)).collect())
}

pub(crate) fn check_clamp_bounds(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::config(format!(
            "clamp bounds must satisfy 0 < lo <= hi < inf, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Low-tail `omega`-quantile with the nearest-rank-lower convention: the
/// ascending sort's element at index `floor(omega * (n - 1))`.
///
/// Returns `Ok(None)` for an empty input; the caller decides the fallback.
pub fn low_tail_quantile(x: &[f64], omega: f64) -> Result<Option<f64>> {
    check_omega(omega)?;
    if x.is_empty() {
        return Ok(None);
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = (omega * (sorted.len() - 1) as f64).floor() as usize;
    Ok(Some(sorted[idx.min(sorted.len() - 1)]))
}

pub(crate) fn check_omega(omega: f64) -> Result<()> {
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::config(format!("omega must lie in (0, 1), got {omega}")));
    }
    Ok(())
}

/// One persistent optimizer buffer, reported for storage accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BufferInfo {
    pub name: &'static str,
    pub len: usize,
    pub role: &'static str,
}

/// Total number of `f64` slots across `buffers`.
pub fn total_buffer_len(buffers: &[BufferInfo]) -> usize {
    buffers.iter().map(|b| b.len).sum()
}

/// `num[i] / (den[i] + eps)`.
pub fn masked_divide(num: &[f64], den: &[f64], eps: f64) -> Result<Vec<f64>> {
    if num.len() != den.len() {
        return Err(Error::usage(format!(
            "masked_divide length mismatch: {} vs {}",
            num.len(),
            den.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::config(format!("epsilon must be positive, got {eps}")));
    }
    Ok(num.iter().zip(den).map(|(n, d)| n / (d + eps)).collect())
}

/// Returns an error naming `what` if any entry is NaN or infinite.
pub fn ensure_finite(x: &[f64], what: impl FnOnce() -> String) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
