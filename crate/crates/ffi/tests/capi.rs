//! Exercises the C ABI through its Rust symbols and checks that the
//! generated header compiles as C.

use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use gat_ffi::*;

fn last_error() -> String {
    let len = unsafe { gat_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0u8; len + 1];
    unsafe { gat_last_error_message(buf.as_mut_ptr().cast::<c_char>(), buf.len()) };
    String::from_utf8(buf[..len].to_vec()).unwrap()
}

#[test]
fn black_scholes_and_version() {
    let v = gat_bs_call(100.0, 100.0, 1.0, 0.2, 0.0);
    assert!((v - 7.965567455405804).abs() < 1e-9);
    assert!(gat_bs_call(-1.0, 100.0, 1.0, 0.2, 0.0).is_nan());
    let version = unsafe { std::ffi::CStr::from_ptr(gat_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn zero_curvature_and_rho() {
    let sigma = [0.2, 0.1];
    let j = [1.0 / 5f64.sqrt(), -2.0 / 5f64.sqrt()];
    let alpha = [0.2 * 0.3 + 0.02 * j[0], 0.1 * 0.3 + 0.02 * j[1]];
    let r = [0.0, 0.0];
    let mut residual = 0.0;
    let st = unsafe { gat_zc_residual(alpha.as_ptr(), sigma.as_ptr(), r.as_ptr(), 2, 1, &mut residual) };
    assert_eq!(st, GatStatus::Ok);
    assert!((residual - 0.02).abs() < 1e-12);

    let mut len = 0usize;
    let st = unsafe {
        gat_rho(alpha.as_ptr(), sigma.as_ptr(), r.as_ptr(), 2, 1, ptr::null_mut(), 0, &mut len)
    };
    assert_eq!(st, GatStatus::BufferTooSmall);
    assert_eq!(len, 1);
    let mut rho = [0.0];
    let st = unsafe {
        gat_rho(alpha.as_ptr(), sigma.as_ptr(), r.as_ptr(), 2, 1, rho.as_mut_ptr(), 1, &mut len)
    };
    assert_eq!(st, GatStatus::Ok);
    assert!((rho[0] - 0.02).abs() < 1e-12);
}

#[test]
fn null_pointers_and_bad_inputs_report_errors() {
    let st = unsafe { gat_zc_residual(ptr::null(), ptr::null(), ptr::null(), 1, 1, ptr::null_mut()) };
    assert_eq!(st, GatStatus::NullPointer);
    assert!(last_error().contains("alpha"));
    let mut h = ptr::null_mut();
    let st = unsafe { gat_perturbation_new(100.0, 1.0, -0.2, 0.0, 0.0, &mut h) };
    assert_eq!(st, GatStatus::InvalidInput);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
    unsafe {
        gat_perturbation_free(ptr::null_mut());
        gat_pde_free(ptr::null_mut());
        gat_ensemble_free(ptr::null_mut());
    }
}

#[test]
fn perturbation_and_pde_handles_agree_at_rho_zero() {
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { gat_perturbation_new(100.0, 1.0, 0.2, 0.0, 0.0, &mut p) },
        GatStatus::Ok
    );
    let mut q = ptr::null_mut();
    assert_eq!(
        unsafe { gat_pde_solve(100.0, 1.0, 0.2, 0.0, 0.0, 128, 128, false, &mut q) },
        GatStatus::Ok
    );
    let (mut a, mut b) = (0.0, 0.0);
    assert_eq!(unsafe { gat_perturbation_price(p, 100.0, 0.0, &mut a) }, GatStatus::Ok);
    assert_eq!(unsafe { gat_pde_value(q, 100.0, 0.0, &mut b) }, GatStatus::Ok);
    let bs = gat_bs_call(100.0, 100.0, 1.0, 0.2, 0.0);
    assert!((a - bs).abs() < 1e-3 && (b - bs).abs() < 1e-2, "{a} {b} {bs}");
    // off-grid time
    assert_eq!(unsafe { gat_pde_value(q, 100.0, 0.001, &mut b) }, GatStatus::Domain);
    assert_eq!(unsafe { gat_perturbation_price(p, 100.0, 2.0, &mut a) }, GatStatus::Domain);
    unsafe {
        gat_perturbation_free(p);
        gat_pde_free(q);
    }
}

#[test]
fn ensemble_round_trip_and_rho() {
    let sigma = [0.2, 0.1];
    let alpha = [0.06, 0.03];
    let r = [0.0, 0.0];
    let s0 = [1.0, 1.0];
    let mut e = ptr::null_mut();
    let st = unsafe {
        gat_ensemble_simulate(
            alpha.as_ptr(),
            sigma.as_ptr(),
            r.as_ptr(),
            2,
            1,
            s0.as_ptr(),
            200,
            0.01,
            1.0,
            5,
            &mut e,
        )
    };
    assert_eq!(st, GatStatus::Ok);
    let (mut m, mut n, mut a, mut k) = (0, 0, 0, 0);
    assert_eq!(unsafe { gat_ensemble_dims(e, &mut m, &mut n, &mut a, &mut k) }, GatStatus::Ok);
    assert_eq!((m, n, a, k), (200, 100, 2, 1));

    let (mut rho, mut se, mut len) = ([1.0], [1.0], 0usize);
    let st = unsafe {
        gat_ensemble_empirical_rho(
            e,
            alpha.as_ptr(),
            sigma.as_ptr(),
            r.as_ptr(),
            0.2,
            0.8,
            rho.as_mut_ptr(),
            se.as_mut_ptr(),
            1,
            &mut len,
        )
    };
    assert_eq!(st, GatStatus::Ok);
    assert_eq!(len, 1);
    // α = 0.3 σ lies in the range of σ: zero curvature
    assert!(rho[0].abs() < 1e-10, "{}", rho[0]);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("e.gate").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { gat_ensemble_write(e, path.as_ptr()) }, GatStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { gat_ensemble_read(path.as_ptr(), &mut back) }, GatStatus::Ok);
    let (mut x, mut y) = (0.0, 0.0);
    assert_eq!(unsafe { gat_ensemble_price(e, 7, 50, 1, &mut x) }, GatStatus::Ok);
    assert_eq!(unsafe { gat_ensemble_price(back, 7, 50, 1, &mut y) }, GatStatus::Ok);
    assert_eq!(x, y);
    assert_eq!(unsafe { gat_ensemble_price(back, 200, 0, 0, &mut y) }, GatStatus::Domain);

    let missing = CString::new(dir.path().join("none.gate").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { gat_ensemble_read(missing.as_ptr(), &mut none) }, GatStatus::Io);
    unsafe {
        gat_ensemble_free(e);
        gat_ensemble_free(back);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("gat.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in [
        "gat_last_error_message",
        "gat_perturbation_new",
        "gat_pde_solve",
        "gat_ensemble_simulate",
        "GAT_STATUS_BUFFER_TOO_SMALL",
        "typedef struct GatPerturbation GatPerturbation",
    ] {
        assert!(text.contains(symbol), "header lacks {symbol}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"gat.h\"\nint main(void) { GatPerturbation *p = 0; double v;\n\
         return gat_perturbation_price(p, 100.0, 0.0, &v) == GAT_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    match Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    {
        Ok(status) => assert!(status.success(), "header does not compile as C"),
        Err(e) => eprintln!("skipping C compile check: no C compiler ({e})"),
    }
}
