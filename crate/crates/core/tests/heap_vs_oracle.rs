use proptest::prelude::*;

use sloppy_heap::{quantile_bounds, Config, HeapError, Mode, Oracle, SloppyHeap};

#[derive(Debug, Clone)]
enum Step {
    Insert(i64),
    Delete(usize),
}

fn steps(k: usize, len: usize, keys: i64) -> impl Strategy<Value = Vec<Step>> {
    prop::collection::vec(
        prop_oneof![
            3 => (0..keys).prop_map(Step::Insert),
            2 => (1..=k).prop_map(Step::Delete),
        ],
        0..len,
    )
}

/// Apply `ops` to a heap and an oracle, checking each answer, the audit and
/// the contents as it goes.
fn replay(cfg: Config, initial: Vec<i64>, ops: &[Step]) -> Result<(), TestCaseError> {
    let mut heap = SloppyHeap::build(cfg, initial.iter().copied()).unwrap();
    let mut oracle = Oracle::from_keys(initial);
    for (at, op) in ops.iter().enumerate() {
        match *op {
            Step::Insert(x) => {
                heap.insert(x);
                oracle.insert(x);
            }
            Step::Delete(i) => match heap.delete_i(i) {
                Ok(key) => {
                    let r = oracle.check_and_delete(cfg.k, i, &key);
                    prop_assert!(r.is_ok(), "op {}: {}", at, r.unwrap_err());
                }
                Err(HeapError::EmptyQuantile { n, .. }) => {
                    prop_assert_eq!(n, oracle.len());
                    let empty = quantile_bounds(n, cfg.k, i).is_some_and(|b| b.is_empty());
                    prop_assert!(
                        empty,
                        "quantile {} of {} has items with n = {}",
                        i,
                        cfg.k,
                        n
                    );
                }
                Err(e) => return Err(TestCaseError::fail(format!("op {at}: {e}"))),
            },
        }
        prop_assert_eq!(heap.len(), oracle.len());
        if at % 64 == 0 {
            let audit = heap.audit();
            prop_assert!(audit.is_consistent(), "op {}: {}", at, audit);
        }
    }
    let audit = heap.audit();
    prop_assert!(audit.is_consistent(), "{}", audit);
    let mut keys = heap.keys();
    keys.sort_unstable();
    prop_assert_eq!(keys, oracle.to_vec());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn small_heaps_cross_between_modes(k in 2usize..6, ops in steps(5, 1500, 50)) {
        let ops: Vec<Step> = ops
            .into_iter()
            .map(|s| match s { Step::Delete(i) => Step::Delete((i - 1) % k + 1), s => s })
            .collect();
        replay(Config::new(k), Vec::new(), &ops)?;
    }

    #[test]
    fn built_heaps_with_many_duplicates(
        k in 2usize..12,
        initial in prop::collection::vec(0i64..20, 0..3000),
        ops in steps(12, 2000, 20),
        budget in 8u32..40,
    ) {
        let ops: Vec<Step> = ops
            .into_iter()
            .map(|s| match s { Step::Delete(i) => Step::Delete((i - 1) % k + 1), s => s })
            .collect();
        replay(Config::new(k).with_budget(budget), initial, &ops)?;
    }

    #[test]
    fn exact_mode_answers_the_midpoint(keys in prop::collection::vec(-1000i64..1000, 1..60), i in 1usize..4) {
        let k = 3;
        let mut heap = SloppyHeap::build(Config::new(k), keys.iter().copied()).unwrap();
        prop_assert_eq!(heap.mode(), Mode::Exact);
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        let n = sorted.len();
        let lo = (i - 1) * n / k + 1;
        let hi = i * n / k;
        match heap.delete_i(i) {
            Ok(key) => prop_assert_eq!(key, sorted[(lo + hi) / 2 - 1]),
            Err(e) => prop_assert!(lo > hi, "{}", e),
        }
    }
}

#[test]
fn drain_everything_from_every_quantile() {
    let k = 7;
    let mut heap = SloppyHeap::build(Config::new(k), (0..20_000i64).map(|x| x % 997)).unwrap();
    let mut oracle = Oracle::from_keys((0..20_000i64).map(|x| x % 997));
    let mut i = 0;
    while !heap.is_empty() {
        i = i % k + 1;
        match heap.delete_i(i) {
            Ok(key) => oracle.check_and_delete(k, i, &key).unwrap(),
            Err(HeapError::EmptyQuantile { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }
    assert!(oracle.is_empty());
    assert!(heap.audit().is_ok());
    assert_eq!(heap.mode(), Mode::Exact);
}
