use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ctagd::landscape::{GenConfig, LandscapeSequence};
use ctagd_ffi::*;

fn last_error() -> String {
    let p = ctagd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn optimizer(backbone: CtagdBackbone, sizes: &[usize], json: Option<&str>) -> *mut CtagdOptimizer {
    let json = json.map(|j| CString::new(j).unwrap());
    let mut h = ptr::null_mut();
    let status = unsafe {
        ctagd_optimizer_new(backbone, sizes.as_ptr(), sizes.len(), json.as_ref().map_or(ptr::null(), |j| j.as_ptr()), 0, &mut h)
    };
    assert_eq!(status, CtagdStatus::Ok);
    h
}

#[test]
fn quadratic_curvature_is_recovered_through_the_c_abi() {
    let diag = [0.5, 3.0, 20.0];
    let h = optimizer(CtagdBackbone::Sgd, &[2, 1], Some(r#"{"ctagd": {"eps": 1e-12}, "sgd": {"weight_decay": 0.0}}"#));
    let mut theta = [4.0, -3.0, 2.0];
    let t_total = 15;
    for _ in 0..t_total {
        let g: Vec<f64> = theta.iter().zip(&diag).map(|(x, d)| x * d).collect();
        assert_eq!(unsafe { ctagd_optimizer_step(h, theta.as_mut_ptr(), g.as_ptr(), 3, t_total) }, CtagdStatus::Ok);
    }
    let mut est = [0.0; 3];
    assert_eq!(unsafe { ctagd_optimizer_hessian(h, est.as_mut_ptr(), 3) }, CtagdStatus::Ok);
    for (e, d) in est.iter().zip(&diag) {
        assert!((e - d).abs() / d < 1e-10, "{e} vs {d}");
    }
    assert_eq!(unsafe { ctagd_optimizer_end_epoch(h, theta.as_mut_ptr(), 3) }, CtagdStatus::Ok);
    let mut gammas = [0.0; 2];
    assert_eq!(unsafe { ctagd_optimizer_gammas(h, gammas.as_mut_ptr(), 2) }, CtagdStatus::Ok);
    assert!((gammas[0] - 0.5).abs() < 1e-9 && (gammas[1] - 20.0).abs() < 1e-8, "{gammas:?}");
    assert_eq!(unsafe { ctagd_optimizer_epoch(h) }, 1);
    assert_eq!(unsafe { ctagd_optimizer_dim(h) }, 3);
    unsafe { ctagd_optimizer_free(h) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let h = optimizer(CtagdBackbone::Adam, &[4], None);
    let mut theta = [0.0; 3];
    let g = [0.0; 3];
    assert_eq!(unsafe { ctagd_optimizer_step(h, theta.as_mut_ptr(), g.as_ptr(), 3, 10) }, CtagdStatus::Usage);
    assert!(last_error().contains("expected 4"));
    assert_eq!(unsafe { ctagd_optimizer_step(h, ptr::null_mut(), g.as_ptr(), 4, 10) }, CtagdStatus::NullPointer);
    let nan = [f64::NAN; 4];
    let mut theta = [0.0; 4];
    assert_eq!(unsafe { ctagd_optimizer_step(h, theta.as_mut_ptr(), nan.as_ptr(), 4, 10) }, CtagdStatus::NonFinite);
    unsafe { ctagd_optimizer_free(h) };

    let bad = CString::new(r#"{"ctagd": {"omega": 2.0}}"#).unwrap();
    let mut out = ptr::null_mut();
    let sizes = [2usize];
    let status = unsafe { ctagd_optimizer_new(CtagdBackbone::Sgd, sizes.as_ptr(), 1, bad.as_ptr(), 0, &mut out) };
    assert_eq!(status, CtagdStatus::Config);
    assert!(out.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { ctagd_landscape_default(0, ptr::null_mut()) }, CtagdStatus::NullPointer);
    unsafe {
        ctagd_landscape_free(ptr::null_mut());
        ctagd_optimizer_free(ptr::null_mut());
    }
}

#[test]
fn success_clears_the_last_error() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ctagd_landscape_default(0, ptr::null_mut()) }, CtagdStatus::NullPointer);
    assert_eq!(unsafe { ctagd_landscape_default(0, &mut out) }, CtagdStatus::Ok);
    assert!(ctagd_last_error().is_null());
    unsafe { ctagd_landscape_free(out) };
}

#[test]
fn landscape_handle_matches_the_library() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ctagd_landscape_default(5, &mut h) }, CtagdStatus::Ok);
    let mut seq = LandscapeSequence::build(&GenConfig::default(), 5).unwrap();
    let theta = [0.7, -1.1];
    for _ in 0..40 {
        let (mut v, mut g) = (0.0, [0.0; 2]);
        let mut peek = [0.0; 2];
        unsafe {
            assert_eq!(ctagd_landscape_gradient(h, theta.as_ptr(), peek.as_mut_ptr()), CtagdStatus::Ok);
            assert_eq!(ctagd_landscape_observe(h, theta.as_ptr(), &mut v, g.as_mut_ptr()), CtagdStatus::Ok);
        }
        let (want_v, want_g) = seq.observe(theta);
        assert_eq!((v, g), (want_v, want_g));
        assert_eq!(peek, want_g);
    }
    let mut m = CtagdMetrics::default();
    assert_eq!(unsafe { ctagd_landscape_metrics(h, theta.as_ptr(), &mut m) }, CtagdStatus::Ok);
    let want = seq.metrics(theta);
    assert_eq!((m.train, m.test, m.gap), (want.train, want.test, want.gap));
    unsafe { ctagd_landscape_free(h) };

    let json = CString::new(r#"{"stationary": true}"#).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ctagd_landscape_new(json.as_ptr(), 5, &mut h) }, CtagdStatus::Ok);
    let (mut a, mut b, mut g) = (0.0, 0.0, [0.0; 2]);
    unsafe {
        ctagd_landscape_observe(h, theta.as_ptr(), &mut a, g.as_mut_ptr());
        ctagd_landscape_observe(h, theta.as_ptr(), &mut b, g.as_mut_ptr());
        ctagd_landscape_free(h);
    }
    assert_eq!(a, b);
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("ctagd.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "ctagd_last_error",
        "ctagd_landscape_new",
        "ctagd_landscape_observe",
        "ctagd_optimizer_new",
        "ctagd_optimizer_step",
        "ctagd_optimizer_end_epoch",
        "typedef struct CtagdOptimizer CtagdOptimizer",
        "CTAGD_STATUS_CONFIG = 2",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(&src, "#include \"ctagd.h\"\nint main(void) { CtagdOptimizer *o = 0; ctagd_optimizer_free(o); return CTAGD_STATUS_OK; }\n").unwrap();
    match Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg("-I").arg(header.parent().unwrap()).arg(&src).output() {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("no C compiler available, skipping syntax check: {e}"),
    }
}
