//! Per-thread pool of `f64` buffers for lowered matrices.

use std::cell::RefCell;
use std::ops::{Deref, DerefMut};

const POOL_LIMIT: usize = 4;

thread_local! {
    static POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// A `len`-element buffer with unspecified contents. Every element must be
/// written before it is read. Returned to the pool on drop.
pub(crate) struct Scratch(Vec<f64>);

impl Scratch {
    pub fn new(len: usize) -> Self {
        let mut v = POOL.with(|p| p.borrow_mut().pop()).unwrap_or_default();
        v.resize(len, 0.0);
        Self(v)
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let v = std::mem::take(&mut self.0);
        POOL.with(|p| {
            let mut p = p.borrow_mut();
            if p.len() < POOL_LIMIT {
                p.push(v);
            }
        });
    }
}

impl Deref for Scratch {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Scratch {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}
