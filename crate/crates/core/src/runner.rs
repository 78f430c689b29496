//! Drive a heap with a generated workload, optionally checking every answer
//! against the oracle, and collect the results.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::heap::{Config, ConfigError, HeapError, Mode, SloppyHeap, Stats};
use crate::oracle::Oracle;
use crate::params::quantile_bounds;
use crate::workload::{Generator, Op, WorkloadSpec};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("operation {op} failed: {source}")]
    Heap {
        op: u64,
        #[source]
        source: HeapError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOptions {
    pub budget: u32,
    /// Check every delete against the oracle and audit the structure.
    pub verify: bool,
    /// Audit the structure every this many operations when verifying; 0
    /// audits only at the end. The potential is sampled after every
    /// operation.
    pub audit_every: u64,
    #[serde(skip)]
    pub split_scale: u32,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            budget: crate::heap::DEFAULT_BUDGET,
            verify: false,
            audit_every: 0,
            split_scale: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub workload: WorkloadSpec,
    pub options: RunOptions,
    #[serde(flatten)]
    pub stats: Stats,
    pub oracle_violations: u64,
    pub exact_rank_violations: u64,
    pub audit_failures: u64,
    pub audits: u64,
    /// Largest P/n' seen after any operation of a verified run.
    pub max_potential_ratio: f64,
    pub elapsed_ms: f64,
    /// First few violation messages.
    pub messages: Vec<String>,
}

impl RunReport {
    pub fn ok(&self) -> bool {
        self.oracle_violations == 0
            && self.exact_rank_violations == 0
            && self.audit_failures == 0
            && self.stats.size_bound_violations == 0
    }
}

const MAX_MESSAGES: usize = 8;

struct Checker {
    oracle: Oracle<i64>,
    report_msgs: Vec<String>,
    oracle_violations: u64,
    exact_rank_violations: u64,
    audit_failures: u64,
    audits: u64,
    max_potential_ratio: f64,
}

impl Checker {
    fn note(&mut self, msg: String) {
        if self.report_msgs.len() < MAX_MESSAGES {
            self.report_msgs.push(msg);
        }
    }

    fn audit(&mut self, heap: &SloppyHeap<i64>, op: u64) {
        self.audits += 1;
        let report = heap.audit();
        if !report.is_consistent() {
            self.audit_failures += 1;
            self.note(format!("after op {op}: {report}"));
        }
    }

    fn sample_potential(&mut self, heap: &SloppyHeap<i64>) {
        if heap.mode() == Mode::Sloppy {
            let p = heap.potential();
            let n_prime = heap.zeta().n_prime();
            if n_prime > 0 {
                self.max_potential_ratio = self.max_potential_ratio.max(p.total / n_prime as f64);
            }
        }
    }
}

/// Run one workload.
pub fn run(spec: &WorkloadSpec, opts: &RunOptions) -> Result<RunReport, RunError> {
    let start = Instant::now();
    let mut cfg = Config::new(spec.k).with_budget(opts.budget);
    cfg.split_scale = opts.split_scale;
    cfg.validate()?;
    let mut gen = Generator::new(spec.clone());
    let initial = gen.initial_keys();
    let mut checker = opts.verify.then(|| Checker {
        oracle: Oracle::from_keys(initial.iter().copied()),
        report_msgs: Vec::new(),
        oracle_violations: 0,
        exact_rank_violations: 0,
        audit_failures: 0,
        audits: 0,
        max_potential_ratio: 0.0,
    });
    let mut heap = SloppyHeap::build(cfg, initial)?;
    if let Some(c) = checker.as_mut() {
        c.audit(&heap, 0);
        c.sample_potential(&heap);
    }
    let mut count = 0u64;
    for op in gen {
        count += 1;
        match op {
            Op::Insert(key) => {
                heap.insert(key);
                if let Some(c) = checker.as_mut() {
                    c.oracle.insert(key);
                }
            }
            Op::Delete(i) => {
                let exact = heap.mode() == Mode::Exact;
                let key = heap
                    .delete_i(i)
                    .map_err(|source| RunError::Heap { op: count, source })?;
                if let Some(c) = checker.as_mut() {
                    if exact {
                        let n = c.oracle.len();
                        let mid = quantile_bounds(n, spec.k, i)
                            .expect("index in range")
                            .midpoint();
                        let want = c.oracle.key_at_rank(mid).copied();
                        if want != Some(key) {
                            c.exact_rank_violations += 1;
                            c.note(format!(
                                "op {count}: exact delete_{i} with n = {n} returned {key}, rank {mid} holds {want:?}"
                            ));
                        }
                    }
                    if let Err(v) = c.oracle.check_and_delete(spec.k, i, &key) {
                        c.oracle_violations += 1;
                        c.note(format!("op {count}: {v}"));
                        // keep the mirror in step with the heap
                        let _ = c.oracle.check_and_delete(spec.k, i, &key);
                    }
                }
            }
        }
        if let Some(c) = checker.as_mut() {
            c.sample_potential(&heap);
            if opts.audit_every > 0 && count % opts.audit_every == 0 {
                c.audit(&heap, count);
            }
        }
    }
    let mut report = RunReport {
        workload: spec.clone(),
        options: opts.clone(),
        stats: heap.stats(),
        oracle_violations: 0,
        exact_rank_violations: 0,
        audit_failures: 0,
        audits: 0,
        max_potential_ratio: 0.0,
        elapsed_ms: 0.0,
        messages: Vec::new(),
    };
    if let Some(mut c) = checker {
        c.audit(&heap, count);
        let mut keys = heap.keys();
        keys.sort_unstable();
        if keys != c.oracle.to_vec() {
            c.audit_failures += 1;
            c.note("final heap contents differ from the oracle".into());
        }
        report.oracle_violations = c.oracle_violations;
        report.exact_rank_violations = c.exact_rank_violations;
        report.audit_failures = c.audit_failures;
        report.audits = c.audits;
        report.max_potential_ratio = c.max_potential_ratio;
        report.messages = c.report_msgs;
    }
    report.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

/// One cell of a sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n0: usize,
    pub k: usize,
    pub max_op_work: u64,
    pub p99_op_work: u64,
    pub mean_op_work: f64,
    pub max_tree_touches: u64,
    pub max_bucket_units: u64,
    pub max_buckets: usize,
    /// For the largest n0 of each k: its max work over the smallest n0's.
    pub ratio: Option<f64>,
}

/// Run every `(n0, k)` combination with the given template and report the
/// per-operation work. `template.n0` and `template.k` are overridden.
pub fn sweep(
    template: &WorkloadSpec,
    opts: &RunOptions,
    ns: &[usize],
    ks: &[usize],
) -> Result<Vec<SweepRow>, RunError> {
    let mut rows = Vec::with_capacity(ns.len() * ks.len());
    for &k in ks {
        let first = rows.len();
        for &n0 in ns {
            let mut spec = template.clone();
            spec.n0 = n0;
            spec.k = k;
            let s = run(&spec, opts)?.stats;
            rows.push(SweepRow {
                n0,
                k,
                max_op_work: s.max_op_work,
                p99_op_work: s.p99_op_work,
                mean_op_work: s.mean_op_work,
                max_tree_touches: s.max_tree_touches,
                max_bucket_units: s.max_bucket_units,
                max_buckets: s.max_buckets,
                ratio: None,
            });
        }
        let group = &mut rows[first..];
        let lo = group.iter().min_by_key(|r| r.n0).map(|r| r.max_op_work);
        if let (Some(lo), Some(hi)) = (lo, group.iter_mut().max_by_key(|r| r.n0)) {
            hi.ratio = Some(hi.max_op_work as f64 / lo.max(1) as f64);
        }
    }
    Ok(rows)
}
