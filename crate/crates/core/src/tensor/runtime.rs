//! Per-thread switches for the tape and the kernels.

use std::cell::Cell;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static CHECKED: Cell<bool> = const { Cell::new(false) };
    static PARALLEL: Cell<bool> = const { Cell::new(false) };
}

pub(crate) fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Restores gradient recording when dropped.
#[must_use]
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.prev));
    }
}

/// Disables tape recording on this thread until the guard is dropped.
pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    NoGradGuard { prev }
}

/// In checked mode every operation rejects NaN/Inf outputs with
/// [`Error::NonFinite`](crate::Error::NonFinite).
pub fn set_checked(on: bool) {
    CHECKED.with(|c| c.set(on));
}

pub fn is_checked() -> bool {
    CHECKED.with(Cell::get)
}

/// Parallel mode splits convolution kernels across batch items with rayon.
/// Serial mode (the default) is bit-reproducible.
pub fn set_parallel(on: bool) {
    PARALLEL.with(|c| c.set(on));
}

pub fn is_parallel() -> bool {
    PARALLEL.with(Cell::get)
}
