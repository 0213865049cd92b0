use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Data-movement and synchronization counters.
///
/// Increments are relaxed atomics so kernels can bump them from any worker.
/// Kernels accumulate locally and publish once per work item, so the atomic
/// traffic here is negligible next to the work being counted.
#[derive(Debug, Default)]
pub struct Counters {
    intermediate_bytes_written: AtomicU64,
    intermediate_bytes_read: AtomicU64,
    synchronized_merges: AtomicU64,
    elements_streamed: AtomicU64,
}

/// Plain copy of [`Counters`] at one instant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub intermediate_bytes_written: u64,
    pub intermediate_bytes_read: u64,
    pub synchronized_merges: u64,
    pub elements_streamed: u64,
}

impl CounterSnapshot {
    pub fn intermediate_traffic(&self) -> u64 {
        self.intermediate_bytes_written + self.intermediate_bytes_read
    }

    /// Field-wise difference `self - earlier`.
    pub fn since(&self, earlier: &CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            intermediate_bytes_written: self.intermediate_bytes_written
                - earlier.intermediate_bytes_written,
            intermediate_bytes_read: self.intermediate_bytes_read - earlier.intermediate_bytes_read,
            synchronized_merges: self.synchronized_merges - earlier.synchronized_merges,
            elements_streamed: self.elements_streamed - earlier.elements_streamed,
        }
    }
}

impl Counters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&self) {
        self.intermediate_bytes_written.store(0, Ordering::Relaxed);
        self.intermediate_bytes_read.store(0, Ordering::Relaxed);
        self.synchronized_merges.store(0, Ordering::Relaxed);
        self.elements_streamed.store(0, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            intermediate_bytes_written: self.intermediate_bytes_written.load(Ordering::Relaxed),
            intermediate_bytes_read: self.intermediate_bytes_read.load(Ordering::Relaxed),
            synchronized_merges: self.synchronized_merges.load(Ordering::Relaxed),
            elements_streamed: self.elements_streamed.load(Ordering::Relaxed),
        }
    }

    pub fn add_intermediate_written(&self, bytes: u64) {
        self.intermediate_bytes_written
            .fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn add_intermediate_read(&self, bytes: u64) {
        self.intermediate_bytes_read.fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn add_merges(&self, merges: u64) {
        self.synchronized_merges.fetch_add(merges, Ordering::Relaxed);
    }

    pub fn add_streamed(&self, rows: u64) {
        self.elements_streamed.fetch_add(rows, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_zeroes_everything() {
        let c = Counters::new();
        c.add_intermediate_written(10);
        c.add_intermediate_read(3);
        c.add_merges(2);
        c.add_streamed(7);
        let s = c.snapshot();
        assert_eq!(s.intermediate_traffic(), 13);
        assert_eq!(s.synchronized_merges, 2);
        c.reset();
        assert_eq!(c.snapshot(), CounterSnapshot::default());
    }

    #[test]
    fn concurrent_increments_are_not_lost() {
        let c = Counters::new();
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..1000 {
                        c.add_merges(1);
                    }
                });
            }
        });
        assert_eq!(c.snapshot().synchronized_merges, 4000);
    }
}
