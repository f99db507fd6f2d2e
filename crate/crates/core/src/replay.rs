//! Bounded activation store between adjacent stages.
//!
//! Writes overwrite the oldest record once full. Reads never remove; they
//! return the newest record among those read the fewest times.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BufferRecord {
    pub activation: Tensor,
    pub labels: Vec<usize>,
    pub reuse_count: u64,
    pub insertion_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferStats {
    pub occupancy: usize,
    pub min_reuse: u64,
    pub max_reuse: u64,
    pub mean_reuse: f64,
    /// `next_seq - mean(insertion_seq)`; zero when empty.
    pub staleness: f64,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: Vec<BufferRecord>,
    next_seq: u64,
    shape: Option<(Vec<usize>, usize)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay buffer capacity must be positive"));
        }
        Ok(Self {
            capacity,
            records: Vec::with_capacity(capacity),
            next_seq: 0,
            shape: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.records.len() == self.capacity
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Records in storage order (not insertion order).
    pub fn records(&self) -> &[BufferRecord] {
        &self.records
    }

    /// Drops all records and the remembered shape. Sequence numbers keep
    /// increasing.
    pub fn reset(&mut self) {
        self.records.clear();
        self.shape = None;
    }

    pub fn write(&mut self, activation: Tensor, labels: Vec<usize>) -> Result<()> {
        if activation.batch() != labels.len() {
            return Err(Error::invalid(format!(
                "replay write: {} activations but {} labels",
                activation.batch(),
                labels.len()
            )));
        }
        let sig = (activation.shape().to_vec(), labels.len());
        match &self.shape {
            None => self.shape = Some(sig),
            Some(s) if *s != sig => {
                return Err(Error::Dimension {
                    op: "replay write",
                    left: s.0.clone(),
                    right: sig.0,
                })
            }
            Some(_) => {}
        }
        let rec = BufferRecord {
            activation,
            labels,
            reuse_count: 0,
            insertion_seq: self.next_seq,
        };
        self.next_seq += 1;
        if self.is_full() {
            let oldest = self
                .records
                .iter()
                .enumerate()
                .min_by_key(|(_, r)| r.insertion_seq)
                .map(|(i, _)| i)
                .expect("full buffer is non-empty");
            self.records[oldest] = rec;
        } else {
            self.records.push(rec);
        }
        Ok(())
    }

    /// Index of the record the next read would return.
    pub fn peek_index(&self) -> Option<usize> {
        self.records
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.reuse_count
                    .cmp(&b.reuse_count)
                    .then(b.insertion_seq.cmp(&a.insertion_seq))
            })
            .map(|(i, _)| i)
    }

    /// Returns the selected record's data and its insertion sequence.
    pub fn read(&mut self) -> Result<(Tensor, Vec<usize>, u64)> {
        let i = self.peek_index().ok_or(Error::EmptyBuffer)?;
        let r = &mut self.records[i];
        r.reuse_count += 1;
        Ok((r.activation.clone(), r.labels.clone(), r.insertion_seq))
    }

    pub fn stats(&self) -> BufferStats {
        if self.records.is_empty() {
            return BufferStats {
                occupancy: 0,
                min_reuse: 0,
                max_reuse: 0,
                mean_reuse: 0.0,
                staleness: 0.0,
            };
        }
        let n = self.records.len() as f64;
        let reuse = self.records.iter().map(|r| r.reuse_count);
        let mean_seq = self.records.iter().map(|r| r.insertion_seq as f64).sum::<f64>() / n;
        BufferStats {
            occupancy: self.records.len(),
            min_reuse: reuse.clone().min().unwrap_or(0),
            max_reuse: reuse.clone().max().unwrap_or(0),
            mean_reuse: reuse.map(|c| c as f64).sum::<f64>() / n,
            staleness: self.next_seq as f64 - mean_seq,
        }
    }
}
