//! Ordered data-parallel map over indices.
//!
//! With the `parallel` feature the map runs on the rayon pool unless serial
//! mode is switched on at run time. Results always come back in index
//! order, so any reduction over them is identical in both modes.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SERIAL: AtomicBool = AtomicBool::new(false);

/// Forces every subsequent [`map_indexed`] onto the calling thread.
pub fn set_serial(serial: bool) {
    FORCE_SERIAL.store(serial, Ordering::Relaxed);
}

pub fn is_serial() -> bool {
    !cfg!(feature = "parallel") || FORCE_SERIAL.load(Ordering::Relaxed)
}

/// Sizes the global worker pool. Only the first call has an effect.
#[cfg(feature = "parallel")]
pub fn configure_threads(threads: usize) -> bool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .is_ok()
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_threads: usize) -> bool {
    false
}

pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !is_serial() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}
