use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use panoptic4d_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(p4d_last_error()) }.to_string_lossy().into_owned()
}

fn labels(sem: &[u32], ins: &[u32]) -> *mut P4dLabels {
    let mut out = ptr::null_mut();
    let st = unsafe { p4d_labels_new(sem.as_ptr(), ins.as_ptr(), sem.len(), &mut out) };
    assert_eq!(st, P4dStatus::Ok);
    out
}

#[test]
fn combiner_matches_reference_rows() {
    let mut v = 0.0;
    assert_eq!(unsafe { p4d_lstq(0.6046, 0.6511, &mut v) }, P4dStatus::Ok);
    assert!((v - 0.6274).abs() < 5e-4);
    assert_eq!(unsafe { p4d_lstq(1.5, 0.5, &mut v) }, P4dStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { p4d_lstq(0.5, 0.5, ptr::null_mut()) }, P4dStatus::NullPointer);
}

#[test]
fn labels_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("a.label").to_str().unwrap()).unwrap();
    let l = labels(&[10, 40, 30], &[7, 0, 2]);
    unsafe {
        assert_eq!(p4d_labels_write(l, path.as_ptr()), P4dStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(p4d_labels_read(path.as_ptr(), 3, &mut back), P4dStatus::Ok);
        assert_eq!(p4d_labels_len(back), 3);
        let sem = std::slice::from_raw_parts(p4d_labels_semantic(back), 3);
        let ins = std::slice::from_raw_parts(p4d_labels_instance(back), 3);
        assert_eq!(sem, &[10, 40, 30]);
        assert_eq!(ins, &[7, 0, 2]);
        let mut wrong = ptr::null_mut();
        assert_eq!(p4d_labels_read(path.as_ptr(), 4, &mut wrong), P4dStatus::InvalidArgument);
        assert!(wrong.is_null());
        p4d_labels_free(back);
        p4d_labels_free(l);
    }
}

#[test]
fn missing_file_is_io_error() {
    let path = CString::new("/nonexistent/000000.label").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { p4d_labels_read(path.as_ptr(), 0, &mut out) }, P4dStatus::Io);
    assert!(last_error().contains("nonexistent"));
}

#[test]
fn oversized_id_cannot_be_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("b.label").to_str().unwrap()).unwrap();
    let l = labels(&[70000], &[0]);
    assert_eq!(unsafe { p4d_labels_write(l, path.as_ptr()) }, P4dStatus::Format);
    unsafe { p4d_labels_free(l) };
}

#[test]
fn evaluator_scores_split_tube() {
    unsafe {
        let mut ev = ptr::null_mut();
        assert_eq!(p4d_evaluator_new(ptr::null(), &mut ev), P4dStatus::Ok);
        // one car tube of 4 points per scan over 2 scans, predicted as two tubes
        for pid in [1, 2] {
            let g = labels(&[10, 10, 10, 10, 40], &[5, 5, 5, 5, 0]);
            let p = labels(&[10, 10, 10, 10, 40], &[pid, pid, pid, pid, 0]);
            assert_eq!(p4d_evaluator_add_scan(ev, 0, g, p), P4dStatus::Ok);
            p4d_labels_free(g);
            p4d_labels_free(p);
        }
        let mut s = P4dScores::default();
        assert_eq!(p4d_evaluator_scores(ev, &mut s), P4dStatus::Ok);
        assert!((s.s_assoc - 0.5).abs() < 1e-15);
        assert_eq!(s.s_cls, 1.0);
        assert_eq!(s.ids, 1);
        assert_eq!(s.scans, 2);
        let mut json = ptr::null_mut();
        assert_eq!(p4d_evaluator_report_json(ev, &mut json), P4dStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap();
        assert!(text.contains("\"s_assoc\": 0.5"));
        p4d_string_free(json);
        p4d_evaluator_free(ev);
    }
}

#[test]
fn evaluator_rejects_length_mismatch_and_unknown_class() {
    unsafe {
        let mut ev = ptr::null_mut();
        p4d_evaluator_new(ptr::null(), &mut ev);
        let g = labels(&[10, 10], &[1, 1]);
        let p = labels(&[10], &[1]);
        assert_eq!(p4d_evaluator_add_scan(ev, 0, g, p), P4dStatus::InvalidArgument);
        let q = labels(&[12345, 10], &[1, 1]);
        assert_eq!(p4d_evaluator_add_scan(ev, 0, g, q), P4dStatus::Config);
        assert_eq!(p4d_evaluator_add_scan(ev, 0, ptr::null(), q), P4dStatus::NullPointer);
        for h in [g, p, q] {
            p4d_labels_free(h);
        }
        p4d_evaluator_free(ev);
    }
}

#[test]
fn clustering_separates_two_blobs() {
    let mut f = Vec::new();
    let mut o = Vec::new();
    for (c, n) in [(0.0, 30), (50.0, 30)] {
        for i in 0..n {
            f.extend_from_slice(&[c + 0.01 * i as f64, 0.0]);
            o.push(if i == 0 { 1.0 } else { 0.5 });
        }
    }
    let v = vec![1.0; f.len()];
    let mut ids = vec![0u32; 60];
    let mut count = 0;
    let st = unsafe {
        p4d_cluster(f.as_ptr(), v.as_ptr(), o.as_ptr(), 60, 2, ptr::null(), ids.as_mut_ptr(), &mut count)
    };
    assert_eq!(st, P4dStatus::Ok);
    assert_eq!(count, 2);
    assert!(ids[..30].iter().all(|i| *i == ids[0]));
    assert!(ids[30..].iter().all(|i| *i == ids[30]));
    assert_ne!(ids[0], ids[30]);

    let mut params = p4d_cluster_params_default();
    params.assign_prob = 2.0;
    let st = unsafe {
        p4d_cluster(f.as_ptr(), v.as_ptr(), o.as_ptr(), 60, 2, &params, ids.as_mut_ptr(), &mut count)
    };
    assert_eq!(st, P4dStatus::Config);
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(p4d_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("panoptic4d.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in [
        "p4d_last_error",
        "p4d_version",
        "p4d_lstq",
        "p4d_labels_new",
        "p4d_labels_read",
        "p4d_labels_write",
        "p4d_labels_len",
        "p4d_labels_semantic",
        "p4d_labels_instance",
        "p4d_labels_free",
        "p4d_evaluator_new",
        "p4d_evaluator_add_scan",
        "p4d_evaluator_scores",
        "p4d_evaluator_report_json",
        "p4d_evaluator_free",
        "p4d_string_free",
        "p4d_cluster_params_default",
        "p4d_cluster",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(h.contains("typedef struct P4dLabels P4dLabels;"));
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"panoptic4d.h\"\nint main(void) { double v; return p4d_lstq(0.25, 1.0, &v) == P4D_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .output()
        .expect("a C compiler is on PATH");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
