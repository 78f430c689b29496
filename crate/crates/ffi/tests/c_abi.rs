use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use sloppy_heap_ffi::*;

fn new_heap(k: u32) -> *mut ShHeap {
    let mut h = ptr::null_mut();
    // SAFETY: valid out-pointer.
    assert_eq!(unsafe { sh_heap_new(k, 0, &mut h) }, ShStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn lifecycle_through_both_modes() {
    let h = new_heap(4);
    // SAFETY: `h` is live until freed at the end.
    unsafe {
        let mut mode = ShMode::Sloppy;
        assert_eq!(sh_heap_mode(h, &mut mode), ShStatus::Ok);
        assert_eq!(mode, ShMode::Exact);
        for x in 0..1000 {
            assert_eq!(sh_heap_insert(h, (x * 7919) % 1000), ShStatus::Ok);
        }
        assert_eq!(sh_heap_len(h), 1000);
        assert_eq!(sh_heap_mode(h, &mut mode), ShStatus::Ok);
        assert_eq!(mode, ShMode::Sloppy);

        // keys are a permutation of 0..1000, so quantile 2 of 4 is 250..500
        let mut key = -1;
        assert_eq!(sh_heap_delete(h, 2, &mut key), ShStatus::Ok);
        assert!((250..500).contains(&key), "{key}");

        let mut violations = usize::MAX;
        assert_eq!(sh_heap_audit(h, &mut violations), ShStatus::Ok);
        assert_eq!(violations, 0);

        let mut stats = ShStats::default();
        assert_eq!(sh_heap_stats(h, &mut stats), ShStatus::Ok);
        assert_eq!(
            (stats.ops, stats.inserts, stats.deletes, stats.len),
            (1001, 1000, 1, 999)
        );
        assert_eq!(stats.k, 4);
        assert_eq!(stats.budget, 16);
        assert_eq!(stats.mode, ShMode::Sloppy as u32);
        assert_eq!(stats.mode_transitions, 1);

        let mut p = ShPotential::default();
        assert_eq!(sh_heap_potential(h, &mut p), ShStatus::Ok);
        assert_eq!(p.total, p.p1 + p.p2);
        sh_heap_free(h);
    }
}

#[test]
fn build_from_array() {
    let keys: Vec<i64> = (0..5000).rev().collect();
    let mut h = ptr::null_mut();
    // SAFETY: `keys` outlives the call, `h` is freed below.
    unsafe {
        assert_eq!(
            sh_heap_build(8, 32, keys.as_ptr(), keys.len(), &mut h),
            ShStatus::Ok
        );
        assert_eq!(sh_heap_len(h), 5000);
        let mut key = 0;
        assert_eq!(sh_heap_delete(h, 8, &mut key), ShStatus::Ok);
        assert!(key >= 4375, "{key}");
        let mut stats = ShStats::default();
        assert_eq!(sh_heap_stats(h, &mut stats), ShStatus::Ok);
        assert_eq!(stats.budget, 32);
        sh_heap_free(h);

        let mut e = ptr::null_mut();
        assert_eq!(sh_heap_build(2, 0, ptr::null(), 0, &mut e), ShStatus::Ok);
        assert_eq!(sh_heap_len(e), 0);
        sh_heap_free(e);
    }
}

#[test]
fn error_codes() {
    let mut h = ptr::null_mut();
    // SAFETY: every pointer passed is either null or valid.
    unsafe {
        assert_eq!(sh_heap_new(1, 0, &mut h), ShStatus::InvalidConfig);
        assert_eq!(sh_heap_new(4, 7, &mut h), ShStatus::InvalidConfig);
        assert!(h.is_null());
        assert_eq!(sh_heap_new(4, 0, ptr::null_mut()), ShStatus::NullPointer);
        assert_eq!(
            sh_heap_build(4, 0, ptr::null(), 3, &mut h),
            ShStatus::NullPointer
        );

        let h = new_heap(4);
        let mut key = 99;
        assert_eq!(sh_heap_delete(h, 1, &mut key), ShStatus::EmptyQuantile);
        assert_eq!(sh_heap_delete(h, 0, &mut key), ShStatus::IndexOutOfRange);
        assert_eq!(sh_heap_delete(h, 5, &mut key), ShStatus::IndexOutOfRange);
        assert_eq!(key, 99);
        assert_eq!(sh_heap_delete(h, 1, ptr::null_mut()), ShStatus::NullPointer);
        sh_heap_free(h);

        assert_eq!(sh_heap_insert(ptr::null_mut(), 1), ShStatus::NullPointer);
        assert_eq!(sh_heap_len(ptr::null()), 0);
        sh_heap_free(ptr::null_mut());
    }
}

#[test]
fn static_strings() {
    // SAFETY: both functions return static NUL-terminated strings.
    unsafe {
        let v = CStr::from_ptr(sh_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
        let m = CStr::from_ptr(sh_status_message(ShStatus::EmptyQuantile));
        assert!(m.to_str().unwrap().contains("empty"));
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sloppy_heap.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).expect("header generated by the build script");
    for name in [
        "sh_heap_new",
        "sh_heap_build",
        "sh_heap_free",
        "sh_heap_insert",
        "sh_heap_delete",
        "sh_heap_len",
        "sh_heap_mode",
        "sh_heap_audit",
        "sh_heap_potential",
        "sh_heap_stats",
        "sh_status_message",
        "sh_version",
        "SH_STATUS_EMPTY_QUANTILE = 4",
        "typedef struct ShHeap ShHeap;",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

/// Compile and run a small C program against the static library, when a C
/// compiler and the archive are available.
#[test]
fn c_program_links_and_runs() {
    let Some(deps) = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .parent()
        .map(Path::to_path_buf)
    else {
        return;
    };
    let lib = ["", "deps"]
        .iter()
        .map(|d| deps.join(d).join("libsloppy_heap_ffi.a"))
        .find(|p| p.exists());
    let (Some(lib), Ok(_)) = (lib, Command::new("cc").arg("--version").output()) else {
        eprintln!("skipping: no cc or static library");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "sloppy_heap.h"

int main(void) {
    ShHeap *h = NULL;
    if (sh_heap_new(4, 0, &h) != SH_STATUS_OK) return 1;
    for (int64_t x = 0; x < 2000; x++) sh_heap_insert(h, x);
    int64_t key = -1;
    if (sh_heap_delete(h, 4, &key) != SH_STATUS_OK) return 2;
    if (key < 1500) return 3;
    if (sh_heap_delete(h, 9, &key) != SH_STATUS_INDEX_OUT_OF_RANGE) return 4;
    size_t bad = 1;
    if (sh_heap_audit(h, &bad) != SH_STATUS_OK || bad != 0) return 5;
    ShStats s;
    sh_heap_stats(h, &s);
    printf("%s %zu %llu\n", sh_version(), sh_heap_len(h), (unsigned long long)s.ops);
    sh_heap_free(h);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "C program exited with {:?}",
        out.status
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        stdout.trim(),
        format!("{} 1999 2001", env!("CARGO_PKG_VERSION"))
    );
}
