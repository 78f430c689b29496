//! A k-selectable sloppy heap: `insert` and `delete_i`, where `delete_i`
//! removes some item whose key lies in the i-th of k equal-size quantiles,
//! each in worst-case O(log k) time independent of the number of items.
//!
//! ```
//! use sloppy_heap::{Config, SloppyHeap};
//!
//! let mut heap = SloppyHeap::build(Config::new(4), 0..1000i64).unwrap();
//! heap.insert(17);
//! let key = heap.delete_i(2).unwrap();
//! assert!((250..500).contains(&key));
//! ```

mod arena;
pub mod bucket;
pub mod heap;
pub mod oracle;
pub mod params;
pub mod runner;
pub mod select;
pub mod tree;
pub mod workload;

pub use heap::{AuditReport, Config, ConfigError, HeapError, Mode, Potential, SloppyHeap, Stats};
pub use oracle::Oracle;
pub use params::{quantile_bounds, QuantileBounds, Zeta};
