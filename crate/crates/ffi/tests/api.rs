use std::ffi::{CStr, CString};
use std::ptr;

use efllm::ini::Ini;
use efllm::model::{Checkpoint, Model, ModelConfig};
use efllm::pipeline::build_vocab;
use efllm_ffi::*;

fn last_error() -> String {
    let p = efllm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn saved_checkpoint(dir: &std::path::Path) -> CString {
    let vocab = build_vocab(&[], 1).unwrap();
    let cfg = ModelConfig {
        d_model: 16,
        d_ff: 32,
        key_dim: 16,
        heads: 2,
        layers: 1,
        vocab_size: vocab.len(),
        ..Default::default()
    };
    let ck = Checkpoint {
        model: Model::init(cfg, 3).unwrap(),
        vocab,
        meta: Ini::new(),
    };
    ck.save(dir).unwrap();
    CString::new(dir.to_str().unwrap()).unwrap()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(efllm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn binning_roundtrip_and_errors() {
    let mut class = 0usize;
    let mut value = 0.0f64;
    unsafe {
        assert_eq!(efllm_bin_power(798.0, 100, 95.4, &mut class), EfllmStatus::Ok);
        assert_eq!(class, 12);
        assert_eq!(efllm_decode_class(798.0, 100, 12, &mut value), EfllmStatus::Ok);
        assert!((value - 91.77).abs() < 1e-9);
        assert!(efllm_last_error().is_null());

        assert_eq!(efllm_bin_power(798.0, 100, 900.0, &mut class), EfllmStatus::OutOfRange);
        assert!(last_error().contains("900"));
        assert_eq!(efllm_decode_class(798.0, 0, 1, &mut value), EfllmStatus::InvalidArgument);
        assert_eq!(efllm_bin_power(798.0, 100, 1.0, ptr::null_mut()), EfllmStatus::NullPointer);
    }
}

#[test]
fn anova_matches_hand_computation() {
    // Groups {1,2,3} and {4,5,6}: SSB 13.5, SSW 4, F = 13.5 / (4/4) = 13.5.
    let values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let sizes = [3usize, 3];
    let mut r = EfllmAnova::default();
    let st = unsafe { efllm_anova(values.as_ptr(), sizes.as_ptr(), 2, &mut r) };
    assert_eq!(st, EfllmStatus::Ok);
    assert!((r.ssb - 13.5).abs() < 1e-12);
    assert!((r.ssw - 4.0).abs() < 1e-12);
    assert!((r.f - 13.5).abs() < 1e-12);
    assert_eq!((r.groups, r.observations), (2, 6));
    // P(F(1,4) > 13.5) = 0.02131...
    assert!((r.p - 0.021312).abs() < 1e-5, "{}", r.p);

    let flat = [2.0; 6];
    let st = unsafe { efllm_anova(flat.as_ptr(), sizes.as_ptr(), 2, &mut r) };
    assert_eq!(st, EfllmStatus::Statistics);
}

#[test]
fn model_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved_checkpoint(dir.path());
    let mut m: *mut EfllmModel = ptr::null_mut();
    unsafe {
        assert_eq!(efllm_model_load(path.as_ptr(), &mut m), EfllmStatus::Ok);
        assert!(!m.is_null());

        let prompt = CString::new("predict pv power for hour 4").unwrap();
        let mut a: *mut std::ffi::c_char = ptr::null_mut();
        let mut b: *mut std::ffi::c_char = ptr::null_mut();
        assert_eq!(efllm_model_generate(m, prompt.as_ptr(), 6, 0.0, 0, &mut a), EfllmStatus::Ok);
        assert_eq!(efllm_model_generate(m, prompt.as_ptr(), 6, 0.0, 9, &mut b), EfllmStatus::Ok);
        // Greedy decoding ignores the seed.
        assert_eq!(CStr::from_ptr(a), CStr::from_ptr(b));
        efllm_string_free(a);
        efllm_string_free(b);

        let e = CString::new("interval: 12 ; value: 95.40 kW").unwrap();
        let (mut score, mut flag) = (0.0f64, true);
        assert_eq!(efllm_model_similarity(m, e.as_ptr(), e.as_ptr(), 0.9, &mut score, &mut flag), EfllmStatus::Ok);
        assert!((score - 1.0).abs() < 1e-12);
        assert!(!flag);

        let empty = CString::new("").unwrap();
        let st = efllm_model_similarity(m, empty.as_ptr(), e.as_ptr(), 0.9, &mut score, &mut flag);
        assert_eq!(st, EfllmStatus::InvalidArgument);
        efllm_model_free(m);
    }
}

#[test]
fn load_failures_report_status() {
    let mut m: *mut EfllmModel = ptr::null_mut();
    let missing = CString::new("/nonexistent/checkpoint").unwrap();
    unsafe {
        assert_eq!(efllm_model_load(missing.as_ptr(), &mut m), EfllmStatus::Io);
        assert!(m.is_null());
        assert!(last_error().contains("nonexistent"));
        assert_eq!(efllm_model_load(ptr::null(), &mut m), EfllmStatus::NullPointer);
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(efllm_model_load(bad.as_ptr().cast(), &mut m), EfllmStatus::InvalidUtf8);
        efllm_model_free(ptr::null_mut());
        efllm_string_free(ptr::null_mut());
    }
}
