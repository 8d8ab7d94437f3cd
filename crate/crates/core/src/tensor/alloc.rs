//! Live-element accounting for peak-memory measurement.
//!
//! Counters are thread-local: a benchmark trial runs on one thread and reads
//! its own counters, so concurrently running tests do not disturb each other.
//! A tensor dropped on a different thread than the one that allocated it is
//! charged to the dropping thread; the current count saturates at zero.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AllocStats {
    pub current_elements: u64,
    pub peak_elements: u64,
}

thread_local! {
    static CURRENT: Cell<u64> = const { Cell::new(0) };
    static PEAK: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn acquire(n: usize) {
    CURRENT.with(|c| {
        let now = c.get() + n as u64;
        c.set(now);
        PEAK.with(|p| {
            if now > p.get() {
                p.set(now);
            }
        });
    });
}

pub(crate) fn release(n: usize) {
    CURRENT.with(|c| c.set(c.get().saturating_sub(n as u64)));
}

pub fn stats() -> AllocStats {
    AllocStats {
        current_elements: CURRENT.with(Cell::get),
        peak_elements: PEAK.with(Cell::get),
    }
}

/// Restarts peak tracking from the current live count.
pub fn reset_peak() {
    let now = CURRENT.with(Cell::get);
    PEAK.with(|p| p.set(now));
}
