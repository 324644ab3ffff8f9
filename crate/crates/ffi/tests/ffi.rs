use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use lantk_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(lantk_last_error()) }
        .to_string_lossy()
        .into_owned()
}

unsafe fn new_matrix(rows: usize, cols: usize, data: &[f64]) -> *mut LantkMatrix {
    let mut m = ptr::null_mut();
    assert_eq!(lantk_matrix_new(rows, cols, data.as_ptr(), &mut m), LantkStatus::Ok);
    m
}

unsafe fn to_vec(m: *const LantkMatrix) -> Vec<f64> {
    let n = lantk_matrix_rows(m) * lantk_matrix_cols(m);
    let mut v = vec![0.0; n];
    assert_eq!(lantk_matrix_copy(m, v.as_mut_ptr(), n), LantkStatus::Ok);
    v
}

#[test]
fn expected_k2_identities() {
    let e1 = [1.0, 0.0];
    let e2 = [0.0, 1.0];
    let mut v = 0.0;
    unsafe {
        assert_eq!(lantk_expected_k2(e1.as_ptr(), e1.as_ptr(), 2, &mut v), LantkStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(lantk_expected_k2(e1.as_ptr(), e2.as_ptr(), 2, &mut v), LantkStatus::Ok);
        assert!((v - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert_eq!(last_error(), "");
    }
}

#[test]
fn errors_carry_status_and_message() {
    let z = [0.0, 0.0];
    let e1 = [1.0, 0.0];
    let mut v = 0.0;
    unsafe {
        assert_eq!(
            lantk_expected_k2(z.as_ptr(), e1.as_ptr(), 2, &mut v),
            LantkStatus::InvalidInput
        );
        assert!(last_error().contains("zero"));
        assert_eq!(
            lantk_expected_k2(ptr::null(), e1.as_ptr(), 2, &mut v),
            LantkStatus::NullPointer
        );
        assert!(last_error().contains("null"));
        assert_eq!(
            lantk_expected_k2(e1.as_ptr(), e1.as_ptr(), 2, ptr::null_mut()),
            LantkStatus::NullPointer
        );
        let mut m = ptr::null_mut();
        assert_eq!(lantk_expected_k2_matrix(ptr::null(), &mut m), LantkStatus::NullPointer);
        assert!(m.is_null());
    }
}

#[test]
fn degenerate_k4_is_reported() {
    let x = [1.0, 0.0, 0.0];
    let y = [0.0, 1.0, 0.0];
    let (mut v, mut s) = (0.0, 0.0);
    unsafe {
        let st = lantk_expected_k4(
            x.as_ptr(),
            x.as_ptr(),
            y.as_ptr(),
            y.as_ptr(),
            3,
            20_000,
            1,
            &mut v,
            &mut s,
        );
        assert_eq!(st, LantkStatus::DegenerateGeometry);
        let x = [1.0, 0.2, -0.1];
        let y = [0.3, 1.0, 0.4];
        let z = [-0.2, 0.5, 1.0];
        let w = [0.5, -0.6, 0.7];
        let st = lantk_expected_k4(
            x.as_ptr(),
            y.as_ptr(),
            z.as_ptr(),
            w.as_ptr(),
            3,
            20_000,
            1,
            &mut v,
            &mut s,
        );
        assert_eq!(st, LantkStatus::Ok);
        assert!(v.is_finite() && v != 0.0 && s > 0.0);
    }
}

#[test]
fn matrix_kernel_regression_roundtrip() {
    unsafe {
        let x = new_matrix(4, 2, &[1.0, 0.0, 0.9, 0.1, -1.0, 0.2, -0.8, -0.3]);
        let mut k = ptr::null_mut();
        assert_eq!(lantk_expected_k2_matrix(x, &mut k), LantkStatus::Ok);
        assert_eq!(lantk_matrix_rows(k), 4);
        let kv = to_vec(k);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(kv[i * 4 + j], kv[j * 4 + i]);
            }
        }
        let y = new_matrix(4, 1, &[1.0, 1.0, -1.0, -1.0]);
        let mut r = ptr::null_mut();
        assert_eq!(lantk_regressor_fit(k, y, -1.0, &mut r), LantkStatus::Ok);
        let mut kc = ptr::null_mut();
        assert_eq!(lantk_expected_k2_cross(x, x, &mut kc), LantkStatus::Ok);
        let mut pred = ptr::null_mut();
        assert_eq!(lantk_regressor_predict(r, kc, &mut pred), LantkStatus::Ok);
        let p = to_vec(pred);
        assert!(p[0] > 0.0 && p[1] > 0.0 && p[2] < 0.0 && p[3] < 0.0);

        let bad = new_matrix(3, 1, &[1.0, 1.0, 1.0]);
        let mut r2 = ptr::null_mut();
        assert_eq!(lantk_regressor_fit(k, bad, -1.0, &mut r2), LantkStatus::InvalidInput);
        let mut small = [0.0; 3];
        assert_eq!(lantk_matrix_copy(k, small.as_mut_ptr(), 3), LantkStatus::InvalidInput);
        let mut e = 0.0;
        assert_eq!(lantk_matrix_get(k, 9, 0, &mut e), LantkStatus::InvalidInput);

        for m in [x, k, y, kc, pred, bad] {
            lantk_matrix_free(m);
        }
        lantk_regressor_free(r);
        lantk_matrix_free(ptr::null_mut());
        lantk_regressor_free(ptr::null_mut());
    }
}

#[test]
fn lantkmat_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = CString::new(dir.path().join("m.lantkmat").to_str().unwrap()).unwrap();
    unsafe {
        let m = new_matrix(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(lantk_matrix_save(m, p.as_ptr()), LantkStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(lantk_matrix_load(p.as_ptr(), &mut back), LantkStatus::Ok);
        assert_eq!(to_vec(back), to_vec(m));
        let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(lantk_matrix_load(missing.as_ptr(), &mut none), LantkStatus::Io);
        lantk_matrix_free(m);
        lantk_matrix_free(back);
    }
}

#[test]
fn flow_and_prop1() {
    unsafe {
        let h = new_matrix(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let y = [1.0, -1.0];
        let h0 = [0.0, 0.0];
        let mut out = [0.0; 2];
        assert_eq!(
            lantk_flow_solution(h, y.as_ptr(), h0.as_ptr(), 2, f64::INFINITY, out.as_mut_ptr()),
            LantkStatus::Ok
        );
        assert!((out[0] - 1.0).abs() < 1e-12 && (out[1] + 1.0).abs() < 1e-12);
        assert_eq!(
            lantk_flow_solution(h, y.as_ptr(), h0.as_ptr(), 2, -1.0, out.as_mut_ptr()),
            LantkStatus::InvalidInput
        );

        let k4 = new_matrix(2, 2, &[0.0; 4]);
        let k3 = [0.0, 0.0];
        let mut v = 0.0;
        assert_eq!(
            lantk_prop1_kernel(0.25, k3.as_ptr(), k4, h, y.as_ptr(), 2, 3.0, 1e-8, &mut v),
            LantkStatus::Ok
        );
        assert_eq!(v, 0.25);
        lantk_matrix_free(h);
        lantk_matrix_free(k4);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(lantk_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lantk.h")).unwrap();
    for name in [
        "lantk_matrix_new",
        "lantk_matrix_free",
        "lantk_expected_k2",
        "lantk_expected_k4",
        "lantk_flow_solution",
        "lantk_prop1_kernel",
        "lantk_regressor_fit",
        "lantk_last_error",
        "typedef struct LantkMatrix LantkMatrix",
        "LANTK_STATUS_DEGENERATE_GEOMETRY",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    // Only meaningful where a C compiler is installed.
    let Ok(_) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        "#include \"lantk.h\"\nint main(void) { return LANTK_STATUS_OK; }\n",
    )
    .unwrap();
    let st = Command::new("cc")
        .args([
            "-std=c99",
            "-Wall",
            "-Werror",
            "-fsyntax-only",
            "-I",
            concat!(env!("CARGO_MANIFEST_DIR"), "/include"),
        ])
        .arg(&src)
        .status()
        .unwrap();
    assert!(st.success());
}
