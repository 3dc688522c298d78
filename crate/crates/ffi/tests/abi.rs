use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::PathBuf;
use std::ptr;

use magnet_ffi::*;

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn fixture(name: &str) -> CString {
    let p = manifest().join("../core/fixtures").join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = magnet_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    magnet_string_free(s);
    out
}

#[test]
fn pool_handle_lifecycle() {
    let mut pool: *mut MagnetPool = ptr::null_mut();
    unsafe {
        assert_eq!(
            magnet_pool_load(fixture("toy_pool.json").as_ptr(), &mut pool),
            MagnetStatus::Ok
        );
        assert!(magnet_last_error().is_null());
        assert_eq!(magnet_pool_len(pool), 12);

        let call = CString::new(r#"[search_flights(origin="SFO", date="2024-05-01", seats=2)]"#).unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(magnet_fc_validate(pool, call.as_ptr(), &mut out), MagnetStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v[0]["missing_required"][0], "destination");
        assert_eq!(v[0]["unknown"][0], "seats");

        let ghost = CString::new("[nope(a=1)]").unwrap();
        assert_eq!(
            magnet_fc_validate(pool, ghost.as_ptr(), &mut out),
            MagnetStatus::Precondition
        );
        magnet_pool_free(pool);
        assert_eq!(magnet_pool_len(ptr::null()), 0);
        magnet_pool_free(ptr::null_mut());
    }
}

#[test]
fn errors_map_to_codes() {
    let mut pool: *mut MagnetPool = ptr::null_mut();
    unsafe {
        let missing = CString::new("/no/such/pool.json").unwrap();
        assert_eq!(magnet_pool_load(missing.as_ptr(), &mut pool), MagnetStatus::Io);
        assert!(last_error().contains("/no/such/pool.json"));
        assert!(pool.is_null());
        let bad = CString::new("[{").unwrap();
        assert_eq!(magnet_pool_parse(bad.as_ptr(), &mut pool), MagnetStatus::Parse);
        assert_eq!(magnet_pool_parse(ptr::null(), &mut pool), MagnetStatus::NullPointer);
        let invalid = [0xffu8, 0];
        assert_eq!(
            magnet_pool_parse(invalid.as_ptr().cast(), &mut pool),
            MagnetStatus::InvalidUtf8
        );
        let mut pct = 0.0;
        assert_eq!(magnet_irrelevance_ratio(0, 0, 0, &mut pct), MagnetStatus::Precondition);
        assert_eq!(
            magnet_irrelevance_ratio(1, 1, 1, ptr::null_mut()),
            MagnetStatus::NullPointer
        );
    }
}

#[test]
fn call_lists_normalize() {
    unsafe {
        let text = CString::new("[f(x=1) , g(y=\"a b\")]").unwrap();
        let mut out = ptr::null_mut();
        let mut n = 0usize;
        assert_eq!(magnet_fc_normalize(text.as_ptr(), &mut out, &mut n), MagnetStatus::Ok);
        assert_eq!(n, 2);
        assert_eq!(take(out), "[f(x=1), g(y=\"a b\")]");
        let bad = CString::new("[f(x=]").unwrap();
        assert_eq!(magnet_fc_normalize(bad.as_ptr(), &mut out, &mut n), MagnetStatus::Parse);
        assert!(!last_error().is_empty());
    }
}

#[test]
fn numeric_entry_points() {
    unsafe {
        let mut pct = 0.0;
        assert_eq!(
            magnet_irrelevance_ratio(20_000, 8_000, 5_000, &mut pct),
            MagnetStatus::Ok
        );
        assert_eq!(format!("{pct:.1}"), "15.2");

        let line = |id: &str, last: &str| {
            serde_json::json!({
                "id": id, "turns": [["f"], ["g"], [last]], "miss_label_at": null, "label": null,
                "seed": 0, "provenance": {"start": "f", "ops": []},
            })
            .to_string()
        };
        let train = CString::new(line("a", "h")).unwrap();
        let test = CString::new(line("b", "x")).unwrap();
        let (mut exact, mut ngram) = (0.0, 0.0);
        assert_eq!(
            magnet_contamination(train.as_ptr(), test.as_ptr(), 2, &mut exact, &mut ngram),
            MagnetStatus::Ok
        );
        assert_eq!(exact, 0.0);
        assert!((ngram - 50.0).abs() < 1e-9);

        let toy = std::fs::read_to_string(manifest().join("../core/fixtures/toy_losses.json")).unwrap();
        let toy = CString::new(toy).unwrap();
        let mut out = ptr::null_mut();
        let mut err = 1.0;
        let s = magnet_loss_check(toy.as_ptr(), 1.0, 1.0, MAGNET_FORM_LOG_RATIO, 1e-5, &mut out, &mut err);
        assert_eq!(s, MagnetStatus::Ok);
        assert!(err < 1e-6, "{err}");
        let reports: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(reports.as_array().unwrap().len(), 3);
        assert_eq!(
            magnet_loss_check(toy.as_ptr(), 1.0, 1.0, 7, 1e-5, &mut out, &mut err),
            MagnetStatus::Config
        );
    }
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(magnet_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(manifest().join("include/magnet.h")).unwrap();
    for name in [
        "magnet_pool_load",
        "magnet_last_error",
        "magnet_string_free",
        "MAGNET_STATUS_OK",
        "MagnetPool",
    ] {
        assert!(header.contains(name), "{name}");
    }
}
