use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::SimTime;

/// Handle of a scheduled event; also its FIFO tie-break rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventHandle(pub u64);

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry<E> {
    time: SimTime,
    handle: EventHandle,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.handle == other.handle
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest (time, handle) first.
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.handle).cmp(&(self.time, self.handle))
    }
}

/// Future-event list ordered by time, then by scheduling order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calendar<E> {
    heap: BinaryHeap<Entry<E>>,
    next_handle: u64,
}

impl<E> Default for Calendar<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Calendar<E> {
    pub fn new() -> Self {
        Calendar {
            heap: BinaryHeap::new(),
            next_handle: 0,
        }
    }

    pub fn push(&mut self, time: SimTime, event: E) -> EventHandle {
        let handle = EventHandle(self.next_handle);
        self.next_handle += 1;
        self.heap.push(Entry {
            time,
            handle,
            event,
        });
        handle
    }

    /// Pops the earliest event stamped at or before `t`.
    pub fn pop_due(&mut self, t: SimTime) -> Option<(EventHandle, E)> {
        if self.heap.peek().is_some_and(|e| e.time <= t) {
            self.heap.pop().map(|e| (e.handle, e.event))
        } else {
            None
        }
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_time_then_fifo_order() {
        let mut c = Calendar::new();
        c.push(SimTime(9), "late");
        c.push(SimTime(2), "a");
        c.push(SimTime(2), "b");
        c.push(SimTime(1), "first");
        let mut out = vec![];
        while let Some((_, e)) = c.pop_due(SimTime(100)) {
            out.push(e);
        }
        assert_eq!(out, vec!["first", "a", "b", "late"]);
    }

    #[test]
    fn nothing_due_before_time() {
        let mut c = Calendar::new();
        c.push(SimTime(5), 1u8);
        assert!(c.pop_due(SimTime(4)).is_none());
        assert_eq!(c.peek_time(), Some(SimTime(5)));
    }
}
