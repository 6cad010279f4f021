use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use templar_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = templar_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn sst2() -> *mut TemplarGrammar {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { templar_grammar_load(c("preset:sst2").as_ptr(), &mut g) }, TemplarStatus::Ok);
    g
}

#[test]
fn grammar_handles() {
    let g = sst2();
    unsafe {
        assert_eq!(templar_grammar_template_count(g), 216);
        assert_eq!(templar_grammar_num_classes(g), 2);
        let mut ids = [0u64; 5];
        assert_eq!(templar_grammar_sample(g, 5, 7, ids.as_mut_ptr()), TemplarStatus::Ok);
        assert_eq!(ids, [84, 4, 194, 127, 99]);
        let mut json = ptr::null_mut();
        assert_eq!(templar_grammar_template_json(g, 194, &mut json), TemplarStatus::Ok);
        let s = CStr::from_ptr(json).to_str().unwrap().to_owned();
        templar_string_free(json);
        assert!(s.contains("\"id\":194"));
        assert_eq!(templar_grammar_template_json(g, 216, &mut json), TemplarStatus::InvalidArgument);
        assert!(last_error().contains("216"));
        templar_grammar_free(g);
        assert_eq!(templar_grammar_template_count(ptr::null()), 0);
    }
}

#[test]
fn render_through_the_abi() {
    let g = sst2();
    let demos = c(r#"[{"text":"great acting","label":1}]"#);
    let (mut p, mut k) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        let id = 4 * 9 * 2 * 3 - 1;
        let st = templar_render(g, id, TEMPLAR_MODE_DIRECT, demos.as_ptr(), c("dull plot").as_ptr(), 0, &mut p, &mut k);
        assert_eq!(st, TemplarStatus::Ok);
        assert_eq!(CStr::from_ptr(p).to_str().unwrap(), "great acting\nA great piece.\n\ndull plot\nA ");
        assert_eq!(CStr::from_ptr(k).to_str().unwrap(), "terrible piece.");
        templar_string_free(p);
        templar_string_free(k);
        let st = templar_render(g, 0, 9, ptr::null(), c("x").as_ptr(), 0, &mut p, &mut k);
        assert_eq!(st, TemplarStatus::InvalidArgument);
        let st = templar_render(g, 0, TEMPLAR_MODE_DIRECT, c("[{").as_ptr(), c("x").as_ptr(), 0, &mut p, &mut k);
        assert_eq!(st, TemplarStatus::Parse);
        let st = templar_render(g, 0, TEMPLAR_MODE_DIRECT, ptr::null(), ptr::null(), 0, &mut p, &mut k);
        assert_eq!(st, TemplarStatus::NullPointer);
        templar_grammar_free(g);
    }
}

#[test]
fn predict_and_ensemble() {
    let g = sst2();
    let mut s = ptr::null_mut();
    let golds = [1usize];
    unsafe {
        assert_eq!(templar_scorer_planted(2.0, 2.0, 0.5, 0, golds.as_ptr(), 1, &mut s), TemplarStatus::Ok);
        let mut probs = [0.0f64; 2];
        let mut pred = usize::MAX;
        let st = templar_predict(
            s,
            g,
            10,
            TEMPLAR_METHOD_CALIBRATION,
            ptr::null(),
            c("fine").as_ptr(),
            ptr::null(),
            0,
            probs.as_mut_ptr(),
            2,
            &mut pred,
        );
        assert_eq!(st, TemplarStatus::Ok);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(pred, 1);
        let st = templar_predict(
            s,
            g,
            10,
            TEMPLAR_METHOD_DIRECT,
            ptr::null(),
            c("fine").as_ptr(),
            ptr::null(),
            0,
            probs.as_mut_ptr(),
            1,
            ptr::null_mut(),
        );
        assert_eq!(st, TemplarStatus::BufferTooSmall);

        let ids = [3u64, 50, 100, 150, 200];
        let st = templar_ensemble_predict(
            s,
            g,
            ids.as_ptr(),
            5,
            TEMPLAR_METHOD_DIRECT,
            ptr::null(),
            c("fine").as_ptr(),
            ptr::null(),
            0,
            probs.as_mut_ptr(),
            2,
            &mut pred,
        );
        assert_eq!(st, TemplarStatus::Ok);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // example 5 has no gold in a one-example world
        let st = templar_predict(
            s,
            g,
            10,
            TEMPLAR_METHOD_DIRECT,
            ptr::null(),
            c("fine").as_ptr(),
            ptr::null(),
            5,
            probs.as_mut_ptr(),
            2,
            ptr::null_mut(),
        );
        assert_eq!(st, TemplarStatus::Backend);
        templar_scorer_free(s);
        templar_grammar_free(g);
    }
}

#[test]
fn hash_mock_score() {
    let mut s = ptr::null_mut();
    let mut v = 0.0;
    unsafe {
        assert_eq!(templar_scorer_hash_mock(&mut s), TemplarStatus::Ok);
        assert_eq!(templar_score(s, c("ab").as_ptr(), c("c").as_ptr(), &mut v), TemplarStatus::Ok);
        templar_scorer_free(s);
    }
    assert_eq!(v, -3.9298660014488385);
}

#[test]
fn metric_entry_points() {
    unsafe {
        let a: Vec<u64> = (1..=10).collect();
        let b: Vec<u64> = (6..=15).collect();
        let mut out = 0.0;
        assert_eq!(templar_iou(a.as_ptr(), 10, b.as_ptr(), 10, &mut out), TemplarStatus::Ok);
        assert!((out - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(templar_iou(ptr::null(), 0, ptr::null(), 0, &mut out), TemplarStatus::InvalidArgument);

        let x = [0.9, 0.8, 0.7, 0.6];
        let y = [0.8, 0.9, 0.6, 0.7];
        assert_eq!(templar_spearman(x.as_ptr(), y.as_ptr(), 4, &mut out), TemplarStatus::Ok);
        assert!((out - 0.6).abs() < 1e-12);

        let (mut m, mut sd) = (0.0, 0.0);
        assert_eq!(templar_aggregate([0.5, 0.7].as_ptr(), 2, &mut m, &mut sd), TemplarStatus::Ok);
        assert!((m - 0.6).abs() < 1e-15 && (sd - 0.02f64.sqrt()).abs() < 1e-15);

        let ids = [1u64, 2, 3, 4];
        let scores = [0.9, 0.8, 0.8, 0.7];
        let mut top = [0u64; 2];
        assert_eq!(templar_top_k(ids.as_ptr(), scores.as_ptr(), 4, 2, top.as_mut_ptr()), TemplarStatus::Ok);
        assert_eq!(top, [1, 2]);

        let mut curve = [0.0; 4];
        assert_eq!(templar_rank_curve([0.9, 0.45, 0.9, 0.81].as_ptr(), 4, curve.as_mut_ptr()), TemplarStatus::Ok);
        assert_eq!(curve, [1.0, 1.0, 0.9, 0.5]);

        let mut wins = 0;
        assert_eq!(templar_count_wins([0.3; 3].as_ptr(), [0.3, 0.4, 0.2].as_ptr(), 3, &mut wins), TemplarStatus::Ok);
        assert_eq!(wins, 1);
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(templar_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn shared_library() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    [deps.parent()?.join("libtemplar_ffi.so"), deps.join("libtemplar_ffi.so")].into_iter().find(|p| p.exists())
}

#[test]
fn c_program_against_generated_header() {
    let Some(lib) = shared_library() else {
        panic!("libtemplar_ffi.so not found next to the test binary");
    };
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let src = dir.join("smoke.c");
    std::fs::write(&src, C_SMOKE).unwrap();
    let bin = dir.join("smoke");
    let libdir = lib.parent().unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg("-o")
        .arg(&bin)
        .arg(&lib)
        .arg(format!("-Wl,-rpath,{}", libdir.display()))
        .status()
        .expect("cc available");
    assert!(status.success(), "C program failed to compile against templar.h");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout), "216|input: meh output: |terrible\n");
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include "templar.h"

int main(void) {
    TemplarGrammar *g = NULL;
    if (templar_grammar_load("preset:sst2", &g) != TEMPLAR_STATUS_OK) return 1;
    char *prefix = NULL, *cont = NULL;
    /* template 0: "input: {}", "output: {}", " ", " " */
    if (templar_render(g, 0, TEMPLAR_MODE_DIRECT, NULL, "meh", 0, &prefix, &cont) != TEMPLAR_STATUS_OK) return 2;
    TemplarScorer *s = NULL;
    if (templar_scorer_hash_mock(&s) != TEMPLAR_STATUS_OK) return 3;
    double probs[2];
    size_t pred = 9;
    if (templar_predict(s, g, 0, TEMPLAR_METHOD_DIRECT, NULL, "meh", NULL, 0, probs, 2, &pred) != TEMPLAR_STATUS_OK) return 4;
    if (pred > 1) return 5;
    if (templar_render(g, 999, TEMPLAR_MODE_DIRECT, NULL, "meh", 0, &prefix, &cont) != TEMPLAR_STATUS_INVALID_ARGUMENT) return 6;
    if (templar_last_error() == NULL) return 7;
    printf("%llu|%s|%s\n", (unsigned long long)templar_grammar_template_count(g), prefix, cont);
    templar_string_free(prefix);
    templar_string_free(cont);
    templar_scorer_free(s);
    templar_grammar_free(g);
    return 0;
}
"#;
