//! Prioritized replay of fixed-length, part-overlapping transition
//! sequences. Sequences never cross episode boundaries; episode tails are
//! stored as shorter records rather than padded. Sampling is proportional
//! to priority^beta via a segment tree whose internal nodes are recomputed
//! from their children on every update, so the total mass never drifts.

use crate::env::Transition;
use crate::error::{Error, Result};
use crate::num::{real, Real};
use rand::Rng;
use std::collections::{HashMap, HashSet};

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord<T> {
    pub transitions: Vec<Transition<T>>,
    pub episode_id: u64,
    /// Index of the first transition within its episode stream.
    pub start_index: usize,
    pub priority: T,
}

/// Segment tree with leaves at `n..2n`: sums hold transformed priorities
/// (p^beta) for sampling, maxima hold raw priorities for the entry rule.
#[derive(Debug, Clone)]
struct PriorityTree<T> {
    n: usize,
    sum: Vec<T>,
    max: Vec<T>,
}

impl<T: Real> PriorityTree<T> {
    fn new(capacity: usize) -> Self {
        let n = capacity.next_power_of_two().max(1);
        PriorityTree {
            n,
            sum: vec![T::zero(); 2 * n],
            max: vec![T::zero(); 2 * n],
        }
    }

    fn update(&mut self, slot: usize, transformed: T, raw: T) {
        let mut i = self.n + slot;
        self.sum[i] = transformed;
        self.max[i] = raw;
        while i > 1 {
            i /= 2;
            self.sum[i] = self.sum[2 * i] + self.sum[2 * i + 1];
            self.max[i] = self.max[2 * i].max(self.max[2 * i + 1]);
        }
    }

    fn total(&self) -> T {
        self.sum[1]
    }

    fn max_raw(&self) -> T {
        self.max[1]
    }

    /// Slot whose cumulative mass interval contains `u` (u in [0, total)).
    fn locate(&self, mut u: T) -> usize {
        let mut i = 1;
        while i < self.n {
            let left = 2 * i;
            if u < self.sum[left] {
                i = left;
            } else {
                u -= self.sum[left];
                i = left + 1;
            }
        }
        i - self.n
    }
}

#[derive(Debug, Clone)]
struct Pending<T> {
    transitions: Vec<Transition<T>>,
    next_window_start: usize,
}

#[derive(Debug, Clone)]
struct Slot<T> {
    record_id: u64,
    record: SequenceRecord<T>,
}

/// Buffer-health counters exposed on the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferStats {
    pub live_records: usize,
    pub evictions: u64,
    pub stale_priority_updates: u64,
    pub priority_mass: f64,
}

pub struct SequenceBuffer<T> {
    capacity: usize,
    sequence_length: usize,
    stride: usize,
    priority_exponent: T,
    pub is_exponent: T,
    slots: Vec<Option<Slot<T>>>,
    slot_of_record: HashMap<u64, usize>,
    tree: PriorityTree<T>,
    next_slot: usize,
    live: usize,
    next_record_id: u64,
    pending: HashMap<u64, Pending<T>>,
    closed: HashSet<u64>,
    evictions: u64,
    stale_updates: u64,
}

impl<T: Real> SequenceBuffer<T> {
    /// `overlap` is the fraction of each window shared with the next
    /// (0.5 means half-overlapping windows).
    pub fn new(
        capacity: usize,
        sequence_length: usize,
        overlap: f64,
        priority_exponent: T,
        is_exponent: T,
    ) -> Result<Self> {
        if capacity == 0 || sequence_length == 0 {
            return Err(Error::Config(
                "replay capacity and sequence_length must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::Config("replay overlap must lie in [0, 1)".into()));
        }
        let stride = ((sequence_length as f64) * (1.0 - overlap)).round().max(1.0) as usize;
        Ok(SequenceBuffer {
            capacity,
            sequence_length,
            stride,
            priority_exponent,
            is_exponent,
            slots: (0..capacity).map(|_| None).collect(),
            slot_of_record: HashMap::new(),
            tree: PriorityTree::new(capacity),
            next_slot: 0,
            live: 0,
            next_record_id: 0,
            pending: HashMap::new(),
            closed: HashSet::new(),
            evictions: 0,
            stale_updates: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    pub fn sequence_length(&self) -> usize {
        self.sequence_length
    }

    pub fn stats(&self) -> BufferStats {
        BufferStats {
            live_records: self.live,
            evictions: self.evictions,
            stale_priority_updates: self.stale_updates,
            priority_mass: self.tree.total().to_f64().unwrap_or(0.0),
        }
    }

    fn transformed(&self, priority: T) -> T {
        priority.max(T::zero()).powf(self.priority_exponent)
    }

    /// Priority given to freshly emitted records: the live maximum, or 1
    /// when nothing is stored yet.
    fn entry_priority(&self) -> T {
        if self.live == 0 {
            T::one()
        } else {
            self.tree.max_raw()
        }
    }

    fn store(&mut self, episode_id: u64, start_index: usize, transitions: Vec<Transition<T>>) {
        let priority = self.entry_priority();
        let slot = self.next_slot;
        self.next_slot = (self.next_slot + 1) % self.capacity;
        if let Some(old) = self.slots[slot].take() {
            self.slot_of_record.remove(&old.record_id);
            self.evictions += 1;
            self.live -= 1;
        }
        let record_id = self.next_record_id;
        self.next_record_id += 1;
        self.slots[slot] = Some(Slot {
            record_id,
            record: SequenceRecord {
                transitions,
                episode_id,
                start_index,
                priority,
            },
        });
        self.slot_of_record.insert(record_id, slot);
        self.live += 1;
        self.tree.update(slot, self.transformed(priority), priority);
    }

    /// Feeds one transition of an in-progress episode. Complete windows are
    /// emitted every `stride` steps; call [`Self::end_episode`] to flush the
    /// tail and close the stream.
    pub fn append(&mut self, episode_id: u64, tr: Transition<T>) -> Result<()> {
        if self.closed.contains(&episode_id) {
            return Err(Error::DataIntegrity(format!(
                "append to finalized episode {episode_id}"
            )));
        }
        let (seq_len, stride) = (self.sequence_length, self.stride);
        let mut windows: Vec<(usize, Vec<Transition<T>>)> = Vec::new();
        {
            let pending = self.pending.entry(episode_id).or_insert_with(|| Pending {
                transitions: Vec::new(),
                next_window_start: 0,
            });
            pending.transitions.push(tr);
            while pending.transitions.len() >= pending.next_window_start + seq_len {
                let start = pending.next_window_start;
                windows.push((start, pending.transitions[start..start + seq_len].to_vec()));
                pending.next_window_start += stride;
            }
        }
        for (start, window) in windows {
            self.store(episode_id, start, window);
        }
        Ok(())
    }

    /// Flushes the tail window (shorter than `sequence_length` when the
    /// episode ends off-stride) and closes the episode stream.
    pub fn end_episode(&mut self, episode_id: u64) -> Result<()> {
        let pending = self.pending.remove(&episode_id).ok_or_else(|| {
            Error::DataIntegrity(format!("end_episode for unknown episode {episode_id}"))
        })?;
        if pending.next_window_start < pending.transitions.len() {
            let tail = pending.transitions[pending.next_window_start..].to_vec();
            self.store(episode_id, pending.next_window_start, tail);
        }
        self.closed.insert(episode_id);
        Ok(())
    }

    /// Proportional sample under priority^beta. Returns record ids with
    /// cloned records (records are immutable once emitted). An empty buffer
    /// yields an empty batch; the caller blocks until min-fill is reached.
    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<(u64, SequenceRecord<T>)> {
        if self.live == 0 {
            return Vec::new();
        }
        let total = self.tree.total();
        let mut out = Vec::with_capacity(batch_size);
        if total <= T::zero() {
            // all priorities zero: fall back to uniform over live slots
            let live: Vec<usize> = (0..self.capacity)
                .filter(|&i| self.slots[i].is_some())
                .collect();
            for _ in 0..batch_size {
                let slot = live[rng.gen_range(0..live.len())];
                let s = self.slots[slot].as_ref().unwrap();
                out.push((s.record_id, s.record.clone()));
            }
            return out;
        }
        for _ in 0..batch_size {
            let u = real::<T>(rng.gen::<f64>()) * total;
            let mut slot = self.tree.locate(u);
            if self.slots[slot].is_none() {
                // numerically possible at the very edge of the mass
                slot = (0..self.capacity)
                    .find(|&i| self.slots[i].is_some())
                    .expect("live record exists");
            }
            let s = self.slots[slot].as_ref().unwrap();
            out.push((s.record_id, s.record.clone()));
        }
        out
    }

    /// Importance weight of a sampled record; unit weights when the
    /// importance-sampling exponent is zero.
    pub fn importance_weight(&self, record_id: u64) -> T {
        if self.is_exponent == T::zero() {
            return T::one();
        }
        let Some(&slot) = self.slot_of_record.get(&record_id) else {
            return T::one();
        };
        let p = self.tree.sum[self.tree.n + slot] / self.tree.total();
        let n = real::<T>(self.live as f64);
        (n * p).powf(-self.is_exponent)
    }

    /// Updates priorities by record id; ids evicted in the meantime are
    /// counted and skipped.
    pub fn update_priorities(&mut self, ids: &[u64], priorities: &[T]) -> Result<()> {
        if ids.len() != priorities.len() {
            return Err(Error::Validation(
                "priority update length mismatch".into(),
            ));
        }
        if priorities.iter().any(|&p| p < T::zero()) {
            return Err(Error::Validation("negative priority".into()));
        }
        for (&id, &p) in ids.iter().zip(priorities) {
            match self.slot_of_record.get(&id) {
                Some(&slot) => {
                    let s = self.slots[slot].as_mut().expect("mapped slot is live");
                    s.record.priority = p;
                    let transformed = p.max(T::zero()).powf(self.priority_exponent);
                    self.tree.update(slot, transformed, p);
                }
                None => self.stale_updates += 1,
            }
        }
        Ok(())
    }

    /// Exhaustive recomputation of the transformed priority mass, for
    /// consistency checks against the tree total.
    pub fn recompute_priority_mass(&self) -> T {
        self.slots
            .iter()
            .flatten()
            .map(|s| s.record.priority.max(T::zero()).powf(self.priority_exponent))
            .sum()
    }

    /// All live records (test/diagnostic helper).
    pub fn iter_live(&self) -> impl Iterator<Item = (u64, &SequenceRecord<T>)> {
        self.slots
            .iter()
            .flatten()
            .map(|s| (s.record_id, &s.record))
    }
}
