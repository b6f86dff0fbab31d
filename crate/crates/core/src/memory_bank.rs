//! FIFO store of historic `(feature, label)` pairs with per-class running
//! sums of unit-normalized features, so that class centers are available in
//! `O(d)` at any time.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::numkit::{cosine_sim, dot, l2_normalize, FeatureVector};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    /// Feature as it was produced (not normalized).
    pub feature: FeatureVector,
    pub label: usize,
    /// Cached `feature / ‖feature‖`.
    pub unit: FeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
struct ClassSlot {
    count: usize,
    sum: Vec<f64>,
}

/// Mean of the unit-normalized stored features of one class. Not unit norm
/// in general; `valid` is false when the class has no entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenter {
    pub w: FeatureVector,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    dim: usize,
    queue: VecDeque<BankEntry>,
    slots: Vec<ClassSlot>,
}

impl MemoryBank {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::OutOfRange {
                what: "bank capacity",
                value: 0.0,
            });
        }
        if dim == 0 {
            return Err(Error::OutOfRange {
                what: "bank feature dimension",
                value: 0.0,
            });
        }
        Ok(MemoryBank {
            capacity,
            dim,
            queue: VecDeque::with_capacity(capacity),
            slots: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Entries oldest first.
    pub fn entries(&self) -> impl ExactSizeIterator<Item = &BankEntry> + '_ {
        self.queue.iter()
    }

    /// One past the largest class id ever seen.
    pub fn num_class_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn class_count(&self, k: usize) -> usize {
        self.slots.get(k).map_or(0, |s| s.count)
    }

    /// Running sum of unit-normalized features of class `k`.
    pub fn class_sum(&self, k: usize) -> Option<&[f64]> {
        self.slots
            .get(k)
            .filter(|s| s.count > 0)
            .map(|s| s.sum.as_slice())
    }

    /// Appends `batch` in order, then evicts the oldest entries until the
    /// capacity holds. Returns the evicted entries oldest first.
    ///
    /// All features are validated before anything is inserted.
    pub fn enqueue_clean<'a, I>(&mut self, batch: I) -> Result<Vec<BankEntry>>
    where
        I: IntoIterator<Item = (&'a [f64], usize)>,
    {
        let mut staged = Vec::new();
        for (i, (f, label)) in batch.into_iter().enumerate() {
            if f.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: f.len(),
                });
            }
            let unit = l2_normalize(f).map_err(|_| Error::ZeroNorm { row: Some(i) })?;
            staged.push(BankEntry {
                feature: FeatureVector::from(f),
                label,
                unit,
            });
        }
        for e in staged {
            self.add_to_slot(&e);
            self.queue.push_back(e);
        }
        let mut evicted = Vec::new();
        while self.queue.len() > self.capacity {
            let e = self.queue.pop_front().expect("queue longer than capacity");
            self.remove_from_slot(&e);
            evicted.push(e);
        }
        Ok(evicted)
    }

    fn add_to_slot(&mut self, e: &BankEntry) {
        if self.slots.len() <= e.label {
            self.slots.resize(
                e.label + 1,
                ClassSlot {
                    count: 0,
                    sum: vec![0.0; self.dim],
                },
            );
        }
        let slot = &mut self.slots[e.label];
        slot.count += 1;
        slot.sum.iter_mut().zip(e.unit.iter()).for_each(|(s, u)| *s += u);
    }

    fn remove_from_slot(&mut self, e: &BankEntry) {
        let slot = &mut self.slots[e.label];
        slot.count -= 1;
        if slot.count == 0 {
            // snap to exact zero rather than carrying rounding residue
            slot.sum.iter_mut().for_each(|s| *s = 0.0);
        } else {
            slot.sum.iter_mut().zip(e.unit.iter()).for_each(|(s, u)| *s -= u);
        }
    }

    /// Recomputes every running sum from the queue.
    pub fn rebuild_sums(&mut self) {
        for s in &mut self.slots {
            s.count = 0;
            s.sum.iter_mut().for_each(|v| *v = 0.0);
        }
        let queue = core::mem::take(&mut self.queue);
        for e in &queue {
            self.add_to_slot(e);
        }
        self.queue = queue;
    }

    /// `w_k = (1/M_k) Σ v_j/‖v_j‖` over entries of class `k`.
    pub fn center(&self, k: usize) -> ClassCenter {
        match self.slots.get(k) {
            Some(s) if s.count > 0 => {
                let inv = 1.0 / s.count as f64;
                ClassCenter {
                    w: s.sum.iter().map(|v| v * inv).collect::<Vec<_>>().into(),
                    valid: true,
                }
            }
            _ => ClassCenter {
                w: FeatureVector::zeros(self.dim),
                valid: false,
            },
        }
    }

    /// Centers for class ids `0..num_classes` (ids beyond the last seen slot
    /// come back invalid).
    pub fn centers(&self, num_classes: usize) -> Vec<ClassCenter> {
        (0..num_classes.max(self.slots.len()))
            .map(|k| self.center(k))
            .collect()
    }

    /// Mean cosine similarity of `x` to every stored feature of class `k`,
    /// by direct scan of the queue.
    pub fn class_mean_sim(&self, x: &[f64], k: usize) -> Result<f64> {
        let m = self.class_count(k);
        if m == 0 {
            return Err(Error::Empty("bank class"));
        }
        let mut total = 0.0;
        for e in self.queue.iter().filter(|e| e.label == k) {
            total += cosine_sim(x, &e.feature)?;
        }
        Ok(total / m as f64)
    }

    /// Same quantity as [`class_mean_sim`](Self::class_mean_sim) through the
    /// class center: `w_k · x/‖x‖`.
    pub fn class_mean_sim_via_center(&self, x: &[f64], k: usize) -> Result<f64> {
        let c = self.center(k);
        if !c.valid {
            return Err(Error::Empty("bank class"));
        }
        let xn = l2_normalize(x)?;
        Ok(dot(&c.w, &xn))
    }

    /// Largest per-coordinate gap between the running sums and a full
    /// recomputation from the queue.
    pub fn sum_drift(&self) -> f64 {
        let mut fresh = self.clone();
        fresh.rebuild_sums();
        let mut worst: f64 = 0.0;
        for (a, b) in self.slots.iter().zip(&fresh.slots) {
            for (x, y) in a.sum.iter().zip(&b.sum) {
                worst = worst.max(libm::fabs(x - y));
            }
        }
        worst
    }

    /// Rebuilds a bank from a snapshot of entries (oldest first).
    pub fn from_entries(
        capacity: usize,
        dim: usize,
        entries: impl IntoIterator<Item = (FeatureVector, usize)>,
    ) -> Result<Self> {
        let mut bank = MemoryBank::new(capacity, dim)?;
        let entries: Vec<(FeatureVector, usize)> = entries.into_iter().collect();
        bank.enqueue_clean(entries.iter().map(|(f, l)| (&f[..], *l)))?;
        Ok(bank)
    }
}
