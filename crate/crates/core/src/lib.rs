//! Multi-semantic tensor feature interactions for click-through-rate
//! prediction: the TFNet model, FM/LR baselines, data pipeline, training,
//! and evaluation.

pub mod config;
pub mod data;
pub mod error;
pub mod interaction;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod run;
pub mod train;

pub use error::{Error, Result};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "CTR_THREADS";

/// Sizes the global rayon pool from `CTR_THREADS` when set. Results do not
/// depend on the pool size; only wall-clock time does.
pub fn init_thread_pool() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // a pool built earlier in the process wins; that is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}
