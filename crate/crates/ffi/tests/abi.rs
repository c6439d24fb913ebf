use std::ffi::{CStr, CString};
use std::ptr;

use modgap_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(modgap_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

unsafe fn bank(modality: u32, rows: &[(&str, [f64; 3])]) -> *mut ModgapBank {
    let mut b = ptr::null_mut();
    assert_eq!(modgap_bank_new(modality, 3, &mut b), ModgapStatus::Ok);
    for (task, values) in rows {
        let id = CString::new(*task).unwrap();
        assert_eq!(
            modgap_bank_push(b, id.as_ptr(), values.as_ptr(), 3),
            ModgapStatus::Ok
        );
    }
    b
}

#[test]
fn bank_lifecycle_and_row_access() {
    unsafe {
        let b = bank(
            MODGAP_MODALITY_TEXT,
            &[("a", [1.0, 2.0, 3.0]), ("b", [0.0, 1.0, 0.0])],
        );
        assert_eq!(modgap_bank_len(b), 2);
        assert_eq!(modgap_bank_dim(b), 3);
        let mut m = 99;
        assert_eq!(modgap_bank_modality(b, &mut m), ModgapStatus::Ok);
        assert_eq!(m, MODGAP_MODALITY_TEXT);
        let mut row = [0.0; 3];
        assert_eq!(modgap_bank_row(b, 0, row.as_mut_ptr(), 3), ModgapStatus::Ok);
        assert_eq!(row, [1.0, 2.0, 3.0]);
        assert_eq!(
            modgap_bank_row(b, 2, row.as_mut_ptr(), 3),
            ModgapStatus::Parameter
        );
        assert_eq!(
            modgap_bank_row(b, 0, row.as_mut_ptr(), 2),
            ModgapStatus::Dimension
        );
        modgap_bank_free(b);
        modgap_bank_free(ptr::null_mut());
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let b = bank(MODGAP_MODALITY_VISUAL, &[]);
        let id = CString::new("x").unwrap();
        let short = [1.0, 2.0];
        assert_eq!(
            modgap_bank_push(b, id.as_ptr(), short.as_ptr(), 2),
            ModgapStatus::Dimension
        );
        assert!(last_error().contains("dimension"), "{}", last_error());
        assert_eq!(
            modgap_bank_push(b, ptr::null(), short.as_ptr(), 2),
            ModgapStatus::NullPointer
        );
        let nan = [f64::NAN, 0.0, 0.0];
        assert_ne!(
            modgap_bank_push(b, id.as_ptr(), nan.as_ptr(), 3),
            ModgapStatus::Ok
        );
        let mut out = ptr::null_mut();
        assert_eq!(modgap_bank_new(7, 3, &mut out), ModgapStatus::Parameter);
        assert_eq!(
            modgap_bank_new(MODGAP_MODALITY_VISUAL, 3, ptr::null_mut()),
            ModgapStatus::NullPointer
        );

        let bad = [0xff_u8, 0];
        assert_eq!(
            modgap_bank_push(b, bad.as_ptr().cast(), short.as_ptr(), 2),
            ModgapStatus::Utf8
        );

        let path = CString::new("/nonexistent/dir/bank.jsonl").unwrap();
        assert_eq!(
            modgap_bank_load(path.as_ptr(), MODGAP_FORMAT_JSONL, &mut out),
            ModgapStatus::Io
        );
        assert!(last_error().contains("/nonexistent/dir/bank.jsonl"));

        let v = [1.0, 0.0, 0.0];
        assert_eq!(
            modgap_bank_push(b, id.as_ptr(), v.as_ptr(), 3),
            ModgapStatus::Ok
        );
        assert_eq!(last_error(), "");
        modgap_bank_free(b);
    }
}

#[test]
fn cosine_similarity() {
    let a = [1.0, 0.0];
    let b = [1.0, 1.0];
    let mut c = 0.0;
    unsafe {
        assert_eq!(
            modgap_cosine_similarity(a.as_ptr(), b.as_ptr(), 2, &mut c),
            ModgapStatus::Ok
        );
        assert!((c - 0.5_f64.sqrt()).abs() < 1e-12);
        let z = [0.0, 0.0];
        assert_eq!(
            modgap_cosine_similarity(a.as_ptr(), z.as_ptr(), 2, &mut c),
            ModgapStatus::DegenerateVector
        );
    }
}

#[test]
fn gap_report_and_centralize() {
    unsafe {
        let v = bank(
            MODGAP_MODALITY_VISUAL,
            &[("a", [2.0, 0.0, 1.0]), ("b", [0.0, 2.0, 1.0])],
        );
        let l = bank(
            MODGAP_MODALITY_TEXT,
            &[("a", [2.0, 0.0, -1.0]), ("b", [0.0, 2.0, -1.0])],
        );
        let mut s = ModgapGapSummary::default();
        assert_eq!(modgap_gap_report(v, l, &mut s), ModgapStatus::Ok);
        assert_eq!(s.dim, 3);
        assert!((s.gap_norm - 2.0).abs() < 1e-12);
        assert_eq!(s.retrieval_top1_v2t, 1.0);

        let mut t = ptr::null_mut();
        assert_eq!(
            modgap_transform_fit(MODGAP_COLLAPSE_CENTRALIZE, v, l, 0, &mut t),
            ModgapStatus::Ok
        );
        let (mut cv, mut cl) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(modgap_transform_apply_bank(t, v, &mut cv), ModgapStatus::Ok);
        assert_eq!(modgap_transform_apply_bank(t, l, &mut cl), ModgapStatus::Ok);
        assert_eq!(modgap_gap_report(cv, cl, &mut s), ModgapStatus::Ok);
        assert!(s.gap_norm < 1e-12);

        let x = [1.0, 1.0, 1.0];
        let mut y = [0.0; 3];
        assert_eq!(
            modgap_transform_apply(t, x.as_ptr(), 3, MODGAP_MODALITY_VISUAL, y.as_mut_ptr(), 3),
            ModgapStatus::Ok
        );
        assert_eq!(y, [0.0, 0.0, 0.0]);

        for p in [v, l, cv, cl] {
            modgap_bank_free(p);
        }
        modgap_transform_free(t);
    }
}

#[test]
fn delete_transform_json_round_trip() {
    unsafe {
        let v = bank(MODGAP_MODALITY_VISUAL, &[("a", [1.0, 5.0, 0.0])]);
        let l = bank(MODGAP_MODALITY_TEXT, &[("a", [1.0, 0.0, 0.5])]);
        let mut t = ptr::null_mut();
        assert_eq!(
            modgap_transform_fit(MODGAP_COLLAPSE_DELETE, v, l, 1, &mut t),
            ModgapStatus::Ok
        );
        assert_eq!(modgap_transform_output_dim(t), 2);
        assert_eq!(
            modgap_transform_fit(MODGAP_COLLAPSE_DELETE, v, l, 3, &mut ptr::null_mut()),
            ModgapStatus::Parameter
        );

        let mut json = ptr::null_mut();
        assert_eq!(modgap_transform_to_json(t, &mut json), ModgapStatus::Ok);
        let mut t2 = ptr::null_mut();
        assert_eq!(modgap_transform_from_json(json, &mut t2), ModgapStatus::Ok);
        let mut json2 = ptr::null_mut();
        assert_eq!(modgap_transform_to_json(t2, &mut json2), ModgapStatus::Ok);
        assert_eq!(CStr::from_ptr(json), CStr::from_ptr(json2));

        let x = [7.0, 8.0, 9.0];
        let mut y = [0.0; 2];
        assert_eq!(
            modgap_transform_apply(t2, x.as_ptr(), 3, MODGAP_MODALITY_TEXT, y.as_mut_ptr(), 2),
            ModgapStatus::Ok
        );
        assert_eq!(y, [7.0, 9.0]);

        let garbage = CString::new("{not json").unwrap();
        assert_ne!(
            modgap_transform_from_json(garbage.as_ptr(), &mut t2),
            ModgapStatus::Ok
        );

        modgap_string_free(json);
        modgap_string_free(json2);
        modgap_transform_free(t);
        modgap_transform_free(t2);
        modgap_bank_free(v);
        modgap_bank_free(l);
    }
}

#[test]
fn corrupt_and_save_load() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let b = bank(
            MODGAP_MODALITY_VISUAL,
            &[("a", [3.0, 0.0, 0.0]), ("b", [0.0, 0.0, 2.0])],
        );
        let (mut c1, mut c2) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            modgap_corrupt_bank(b, MODGAP_NOISE_COSINE, 0.2, 5, &mut c1),
            ModgapStatus::Ok
        );
        assert_eq!(
            modgap_corrupt_bank(b, MODGAP_NOISE_COSINE, 0.2, 5, &mut c2),
            ModgapStatus::Ok
        );
        let (mut r, mut o, mut r2) = ([0.0; 3], [0.0; 3], [0.0; 3]);
        for i in 0..2 {
            modgap_bank_row(c1, i, r.as_mut_ptr(), 3);
            modgap_bank_row(c2, i, r2.as_mut_ptr(), 3);
            modgap_bank_row(b, i, o.as_mut_ptr(), 3);
            assert_eq!(r, r2);
            let mut c = 0.0;
            modgap_cosine_similarity(r.as_ptr(), o.as_ptr(), 3, &mut c);
            assert!((0.2 - 1e-9..=1.0).contains(&c));
            let norm: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
        assert_eq!(
            modgap_corrupt_bank(b, MODGAP_NOISE_COSINE, 1.5, 5, &mut c2),
            ModgapStatus::Parameter
        );

        let path = CString::new(dir.path().join("b.bin").to_str().unwrap()).unwrap();
        assert_eq!(
            modgap_bank_save(b, path.as_ptr(), MODGAP_FORMAT_BINARY),
            ModgapStatus::Ok
        );
        let mut loaded = ptr::null_mut();
        assert_eq!(
            modgap_bank_load(path.as_ptr(), MODGAP_FORMAT_BINARY, &mut loaded),
            ModgapStatus::Ok
        );
        assert_eq!(modgap_bank_len(loaded), 2);
        modgap_bank_row(loaded, 1, r.as_mut_ptr(), 3);
        assert_eq!(r, [0.0, 0.0, 2.0]);

        for p in [b, c1, c2, loaded] {
            modgap_bank_free(p);
        }
    }
}

#[test]
fn generated_header_declares_the_api() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/modgap.h")).unwrap();
    for name in [
        "#ifndef MODGAP_H",
        "typedef struct ModgapBank ModgapBank;",
        "typedef struct ModgapTransform ModgapTransform;",
        "MODGAP_STATUS_OK = 0",
        "MODGAP_STATUS_PANIC = 14",
        "ModgapGapSummary",
        "modgap_last_error_message",
        "modgap_bank_new",
        "modgap_bank_free",
        "modgap_transform_fit",
        "modgap_transform_to_json",
        "modgap_string_free",
        "modgap_corrupt_bank",
        "#define MODGAP_NOISE_GAUSSIAN 1",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
