use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use actshift_ffi::*;

fn last_error() -> Option<String> {
    let p = act_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn det(image: u64, class_id: u32, score: f64) -> ActDetection {
    ActDetection {
        image,
        class_id,
        score,
        bbox: [0.0, 0.0, 10.0, 10.0],
    }
}

/// Lattice data with counts `2 + s_c` for every class.
fn lattice(n_images: usize, n_classes: usize) -> (Vec<f64>, Vec<u32>) {
    let mut sims = Vec::new();
    let mut counts = Vec::new();
    for i in 0..n_images {
        for c in 0..n_classes {
            let s = ((i * 7 + c * 3) % 5) as u32;
            sims.push(f64::from(s));
            counts.push(2 + s);
        }
    }
    (sims, counts)
}

#[test]
fn kl_matches_definition() {
    let p = [0.5, 0.5];
    let q = [0.9, 0.1];
    let mut out = f64::NAN;
    let s = unsafe { act_kl_divergence(p.as_ptr(), q.as_ptr(), 2, &mut out) };
    assert_eq!(s, ActStatus::Ok);
    let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
    assert!((out - expected).abs() < 1e-6);
    assert!(last_error().is_none());
}

#[test]
fn invalid_ratio_reports_message() {
    let p = [0.5, 0.6];
    let mut out = 0.0;
    let s = unsafe { act_kl_divergence(p.as_ptr(), p.as_ptr(), 2, &mut out) };
    assert_eq!(s, ActStatus::InvalidArgument);
    assert!(last_error().unwrap().contains("sums to"));
}

#[test]
fn null_pointers_are_rejected() {
    let p = [1.0];
    let s = unsafe { act_kl_divergence(ptr::null(), p.as_ptr(), 1, ptr::null_mut()) };
    assert_eq!(s, ActStatus::NullPointer);
    let s = unsafe { act_kl_divergence(ptr::null(), p.as_ptr(), 1, &mut 0.0) };
    assert_eq!(s, ActStatus::NullPointer);
    assert!(last_error().unwrap().contains('p'));
}

#[test]
fn merge_and_square_prediction() {
    let l = [0.5, 0.5];
    let a = [0.2, 0.8];
    let r = [0.2, 0.8];
    let mut m = [0.0; 2];
    let mut sq = [0.0; 2];
    unsafe {
        assert_eq!(
            act_merge(a.as_ptr(), r.as_ptr(), 2, m.as_mut_ptr()),
            ActStatus::Ok
        );
        assert_eq!(
            act_shift_prediction(l.as_ptr(), a.as_ptr(), r.as_ptr(), 2, 2.0, sq.as_mut_ptr()),
            ActStatus::Ok
        );
    }
    assert!((m[0] - 0.2).abs() < 1e-12 && (m[1] - 0.8).abs() < 1e-12);
    assert!((sq[0] - 0.04 / 0.68).abs() < 1e-7);
}

#[test]
fn predictor_lifecycle() {
    let (sims, counts) = lattice(40, 3);
    let mut handle = ptr::null_mut();
    let s = unsafe { act_predictor_fit(sims.as_ptr(), counts.as_ptr(), 40, 3, &mut handle) };
    assert_eq!(s, ActStatus::Ok, "{:?}", last_error());
    assert!(!handle.is_null());
    assert_eq!(unsafe { act_predictor_n_classes(handle) }, 3);

    let mut absolute = [0.0; 3];
    let mut squared = [0.0; 3];
    let mut merged = [0.0; 3];
    let out = ActPredictionBuffers {
        absolute: absolute.as_mut_ptr(),
        relative: ptr::null_mut(),
        merged: merged.as_mut_ptr(),
        squared: squared.as_mut_ptr(),
    };
    let s = unsafe { act_predictor_predict(handle, sims.as_ptr(), 40, 2.0, out) };
    assert_eq!(s, ActStatus::Ok, "{:?}", last_error());
    // On its own training set the absolute model reproduces the pooled ratio.
    let totals: Vec<f64> = (0..3)
        .map(|c| counts.iter().skip(c).step_by(3).map(|&v| f64::from(v)).sum())
        .collect();
    let sum: f64 = totals.iter().sum();
    for c in 0..3 {
        assert!((absolute[c] - totals[c] / sum).abs() < 1e-6, "{absolute:?}");
    }
    for r in [merged, squared] {
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(r.iter().all(|&v| v > 0.0));
    }
    unsafe { act_predictor_free(handle) };
    unsafe { act_predictor_free(ptr::null_mut()) };
    assert_eq!(unsafe { act_predictor_n_classes(ptr::null()) }, 0);
}

#[test]
fn too_few_images_is_insufficient_data() {
    let (sims, counts) = lattice(2, 3);
    let mut handle = ptr::null_mut();
    let s = unsafe { act_predictor_fit(sims.as_ptr(), counts.as_ptr(), 2, 3, &mut handle) };
    assert_eq!(s, ActStatus::InsufficientData);
    assert!(handle.is_null());
}

#[test]
fn thresholds_pick_kth_score() {
    let dets = [det(0, 0, 0.9), det(1, 0, 0.7), det(1, 0, 0.4), det(0, 1, 0.8)];
    let counts = [2usize, 0];
    let mut t = [0.0; 2];
    let s = unsafe { act_select_thresholds(dets.as_ptr(), dets.len(), counts.as_ptr(), 2, t.as_mut_ptr()) };
    assert_eq!(s, ActStatus::Ok);
    assert_eq!(t[0], 0.7);
    assert!(t[1] > 1.0);
}

#[test]
fn out_of_range_class_is_a_dimension_error() {
    let dets = [det(0, 5, 0.9)];
    let mut t = [0.0; 2];
    let s = unsafe { act_select_thresholds(dets.as_ptr(), 1, [1usize, 1].as_ptr(), 2, t.as_mut_ptr()) };
    assert_eq!(s, ActStatus::Dimension);
}

#[test]
fn dynamic_budget() {
    let dets = [det(0, 0, 0.9), det(0, 0, 0.7), det(1, 0, 0.3), det(1, 0, 0.1)];
    let ratio = [1.0];
    let mut params = act_default_params();
    params.delta_n_o = 0.5;
    let mut n_o = f64::NAN;
    let s =
        unsafe { act_dynamic_objects_per_image(dets.as_ptr(), 4, ratio.as_ptr(), 1, 2, &params, &mut n_o) };
    assert_eq!(s, ActStatus::Ok, "{:?}", last_error());
    assert_eq!(n_o, 1.5);

    params.tau = 2.0;
    let s =
        unsafe { act_dynamic_objects_per_image(dets.as_ptr(), 4, ratio.as_ptr(), 1, 2, &params, &mut n_o) };
    assert_eq!(s, ActStatus::InvalidArgument);

    let s = unsafe {
        act_dynamic_objects_per_image(dets.as_ptr(), 4, ratio.as_ptr(), 1, 2, ptr::null(), &mut n_o)
    };
    assert_eq!(s, ActStatus::Ok);
}

#[test]
fn header_is_generated_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/actshift.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "act_predictor_fit",
        "act_predictor_free",
        "act_select_thresholds",
        "ACT_STATUS_OK",
        "act_last_error",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99", "-Wall", "-Werror"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(status.success());
}
