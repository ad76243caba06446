//! Fixed-capacity FIFO of `(state, target)` training pairs.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use mcds_core::SystemState;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: SystemState,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Sample>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends a sample, evicting the oldest when full.
    pub fn push(&mut self, state: SystemState, target: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::TargetOutOfRange(target));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(Sample { state, target });
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.items.iter()
    }

    /// Up to `n` distinct samples, in draw order.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<&Sample> {
        let n = n.min(self.items.len());
        index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }

    /// One JSON object per line, oldest first.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for s in &self.items {
            serde_json::to_writer(&mut w, s).map_err(|source| Error::Json { line: 0, source })?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`ReplayBuffer::save`]. Only the newest
    /// `capacity` lines are kept.
    pub fn load(path: &Path, capacity: usize) -> Result<Self> {
        let mut buf = Self::new(capacity);
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: Sample = serde_json::from_str(&line).map_err(|source| Error::Json {
                line: i + 1,
                source,
            })?;
            buf.push(s.state, s.target)?;
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcds_core::{SimConfig, Simulator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state() -> SystemState {
        SystemState::capture(&Simulator::new(SimConfig::default()).unwrap(), 8)
    }

    #[test]
    fn evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(state(), i as f64 / 10.0).unwrap();
        }
        let targets: Vec<f64> = b.iter().map(|s| s.target).collect();
        assert_eq!(targets, vec![0.2, 0.3, 0.4]);
    }

    #[test]
    fn rejects_targets_outside_unit_interval() {
        let mut b = ReplayBuffer::new(3);
        assert!(matches!(
            b.push(state(), 1.5),
            Err(Error::TargetOutOfRange(_))
        ));
        assert!(matches!(
            b.push(state(), f64::NAN),
            Err(Error::TargetOutOfRange(_))
        ));
        assert!(b.is_empty());
    }

    #[test]
    fn sampling_is_without_replacement_and_seeded() {
        let mut b = ReplayBuffer::new(10);
        for i in 0..10 {
            b.push(state(), i as f64 / 10.0).unwrap();
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            b.sample(6, &mut rng)
                .iter()
                .map(|s| s.target)
                .collect::<Vec<_>>()
        };
        let a = draw(1);
        assert_eq!(a, draw(1));
        let mut sorted = a.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        assert_eq!(sorted.len(), 6);
        assert_eq!(b.sample(50, &mut ChaCha8Rng::seed_from_u64(2)).len(), 10);
    }

    #[test]
    fn round_trips_through_json_lines() {
        let mut b = ReplayBuffer::new(4);
        for i in 0..3 {
            b.push(state(), i as f64 / 4.0).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("buffer.jsonl");
        b.save(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
        assert_eq!(ReplayBuffer::load(&path, 4).unwrap(), b);
        assert_eq!(ReplayBuffer::load(&path, 2).unwrap().len(), 2);
    }
}
