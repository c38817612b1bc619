//! Region cross-batch memory: a bounded FIFO of region embeddings from
//! earlier mini-batches.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One image's region embedding, detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionEmbedding<T> {
    pub vec: Vec<T>,
    /// Index of the `push_batch` call that produced it.
    pub step: u64,
}

impl<T> RegionEmbedding<T> {
    pub fn new(vec: Vec<T>, step: u64) -> Self {
        Self { vec, step }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PushOutcome {
    pub evicted: usize,
    /// Batch alone exceeded capacity, so some of it was dropped immediately.
    pub overflowed: bool,
}

#[derive(Clone, Debug)]
pub struct RegionMemory<T> {
    capacity: usize,
    entries: VecDeque<RegionEmbedding<T>>,
    next_step: u64,
    accesses: u64,
}

impl<T: Scalar> RegionMemory<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("memory capacity must be positive".into()));
        }
        Ok(Self { capacity, entries: VecDeque::with_capacity(capacity), next_step: 0, accesses: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Embedding width, once anything has been stored.
    pub fn width(&self) -> Option<usize> {
        self.entries.front().map(|e| e.vec.len())
    }

    pub fn entries(&self) -> impl Iterator<Item = &RegionEmbedding<T>> {
        self.entries.iter()
    }

    /// Step index that the next `push_batch` will stamp.
    pub fn next_step(&self) -> u64 {
        self.next_step
    }

    /// Number of `push_batch`/`snapshot` calls so far.
    pub fn accesses(&self) -> u64 {
        self.accesses
    }

    /// Stamps `vectors` with the current step and enqueues them.
    pub fn push_vectors(&mut self, vectors: Vec<Vec<T>>) -> Result<PushOutcome> {
        let step = self.next_step;
        self.push_batch(vectors.into_iter().map(|v| RegionEmbedding::new(v, step)).collect())
    }

    /// Appends a mini-batch in order, evicting the oldest entries beyond capacity.
    pub fn push_batch(&mut self, batch: Vec<RegionEmbedding<T>>) -> Result<PushOutcome> {
        self.accesses += 1;
        let width = self.width().or_else(|| batch.first().map(|e| e.vec.len()));
        if let Some(w) = width {
            if let Some(bad) = batch.iter().find(|e| e.vec.len() != w) {
                return Err(Error::Contract(format!(
                    "region embedding of length {} pushed into memory of width {}",
                    bad.vec.len(),
                    w
                )));
            }
        }
        let overflowed = batch.len() > self.capacity;
        if overflowed {
            log::warn!(
                "mini-batch of {} embeddings exceeds memory capacity {}; keeping the newest",
                batch.len(),
                self.capacity
            );
        }
        let mut evicted = 0;
        for e in batch {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
                evicted += 1;
            }
            self.entries.push_back(e);
        }
        self.next_step += 1;
        Ok(PushOutcome { evicted, overflowed })
    }

    /// Dense `[len, C]` copy of the entries, oldest first.
    ///
    /// An empty memory yields `[0, width]` where width is `fallback_width`.
    pub fn snapshot(&mut self, fallback_width: usize) -> Tensor<T> {
        self.accesses += 1;
        let width = self.width().unwrap_or(fallback_width);
        let data: Vec<T> = self.entries.iter().flat_map(|e| e.vec.iter().copied()).collect();
        Tensor::new(&[self.entries.len(), width], data).expect("uniform embedding width")
    }

    /// Clears entries; capacity is kept.
    pub fn reset(&mut self) {
        self.entries.clear();
        self.next_step = 0;
    }
}
