//! Live-allocation accounting for tensor buffers.
//!
//! Every tensor buffer allocated while a tracker is installed on the current
//! thread registers its byte size with that tracker and releases it on drop,
//! wherever the drop happens. The tracker keeps the high-water mark and can
//! refuse allocations that would push live bytes past a cap; the refusal
//! happens before the backing memory is requested.

use std::cell::RefCell;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct Tracker {
    live: AtomicUsize,
    peak: AtomicUsize,
    allocations: AtomicUsize,
    cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryStats {
    pub peak_bytes: usize,
    pub live_bytes: usize,
    pub allocations: usize,
    pub cap: usize,
}

impl Tracker {
    fn new(cap: usize) -> Self {
        Tracker {
            live: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            allocations: AtomicUsize::new(0),
            cap,
        }
    }

    fn reserve(&self, bytes: usize) -> Result<()> {
        let live = self.live.load(Ordering::Relaxed);
        if live.saturating_add(bytes) > self.cap {
            return Err(Error::OutOfMemory {
                requested: bytes,
                live,
                cap: self.cap,
            });
        }
        let now = self.live.fetch_add(bytes, Ordering::Relaxed) + bytes;
        self.peak.fetch_max(now, Ordering::Relaxed);
        self.allocations.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    fn release(&self, bytes: usize) {
        self.live.fetch_sub(bytes, Ordering::Relaxed);
    }

    pub fn stats(&self) -> MemoryStats {
        MemoryStats {
            peak_bytes: self.peak.load(Ordering::Relaxed),
            live_bytes: self.live.load(Ordering::Relaxed),
            allocations: self.allocations.load(Ordering::Relaxed),
            cap: self.cap,
        }
    }
}

thread_local! {
    static ACTIVE: RefCell<Option<Arc<Tracker>>> = const { RefCell::new(None) };
}

/// Receipt for bytes registered with a tracker; releases them on drop.
#[derive(Debug)]
pub(crate) struct Ticket {
    tracker: Arc<Tracker>,
    bytes: usize,
}

impl Drop for Ticket {
    fn drop(&mut self) {
        self.tracker.release(self.bytes);
    }
}

/// Registers `bytes` with the active tracker, if any.
pub(crate) fn reserve(bytes: usize) -> Result<Option<Ticket>> {
    ACTIVE.with(|slot| match slot.borrow().as_ref() {
        None => Ok(None),
        Some(tracker) => {
            tracker.reserve(bytes)?;
            Ok(Some(Ticket {
                tracker: Arc::clone(tracker),
                bytes,
            }))
        }
    })
}

/// Runs `f` with a fresh tracker installed on this thread and returns its
/// result together with the allocation statistics observed while it ran.
/// Trackers nest; the previous one is restored afterwards.
pub fn track<T>(cap: Option<usize>, f: impl FnOnce() -> T) -> (T, MemoryStats) {
    let tracker = Arc::new(Tracker::new(cap.unwrap_or(usize::MAX)));
    let previous = ACTIVE.with(|slot| slot.replace(Some(Arc::clone(&tracker))));
    struct Restore(Option<Arc<Tracker>>);
    impl Drop for Restore {
        fn drop(&mut self) {
            let prev = self.0.take();
            ACTIVE.with(|slot| *slot.borrow_mut() = prev);
        }
    }
    let restore = Restore(previous);
    let out = f();
    drop(restore);
    (out, tracker.stats())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn peak_and_release() {
        let ((), stats) = track(None, || {
            let a = Tensor::<f32>::zeros(&[256]).unwrap();
            let b = Tensor::<f32>::zeros(&[128]).unwrap();
            drop(a);
            drop(b);
            let _c = Tensor::<f64>::zeros(&[64]).unwrap();
        });
        assert_eq!(stats.peak_bytes, 256 * 4 + 128 * 4);
        assert_eq!(stats.live_bytes, 0);
        assert_eq!(stats.allocations, 3);
    }

    #[test]
    fn cap_refuses_before_allocation() {
        let (res, stats) = track(Some(1000), || {
            let _a = Tensor::<f32>::zeros(&[200]).unwrap();
            Tensor::<f32>::zeros(&[100])
        });
        assert!(matches!(res, Err(Error::OutOfMemory { requested: 400, live: 800, cap: 1000 })));
        assert_eq!(stats.peak_bytes, 800);
    }

    #[test]
    fn untracked_outside_scope() {
        let t = Tensor::<f32>::zeros(&[10]).unwrap();
        let ((), stats) = track(None, || drop(t));
        assert_eq!(stats.peak_bytes, 0);
    }
}
