use std::ffi::{CStr, CString};
use std::ptr;

use fbcap_ffi::*;

fn last_error() -> String {
    let p = fbcap_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn awgn_capacity_through_handle() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(fbcap_model_awgn(1.0, &mut m), FbcapStatus::Ok);
        let mut cap = FbcapCapacity::default();
        assert_eq!(fbcap_stationary_capacity(m, 1.0, 0.0, &mut cap), FbcapStatus::Ok);
        assert!((cap.rate_bits - 0.5).abs() < 1e-6, "{}", cap.rate_bits);
        assert!((cap.rate_nats - 0.5 * 2f64.ln()).abs() < 1e-6);
        fbcap_model_free(m);
    }
}

#[test]
fn ar1_matches_oracle() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(fbcap_model_ar1(0.5, &mut m), FbcapStatus::Ok);
        let (mut n, mut mm, mut p) = (0, 0, 0);
        assert_eq!(fbcap_model_dims(m, &mut n, &mut mm, &mut p), FbcapStatus::Ok);
        assert_eq!((n, mm, p), (1, 1, 1));
        let mut cap = FbcapCapacity::default();
        assert_eq!(fbcap_stationary_capacity(m, 1.0, 1e-9, &mut cap), FbcapStatus::Ok);
        let mut oracle = 0.0;
        assert_eq!(fbcap_ar1_oracle(0.5, 1.0, &mut oracle), FbcapStatus::Ok);
        assert!((cap.rate_bits - oracle).abs() < 1e-6);
        assert!(cap.closed_loop_detectable);

        let mut nofb = 0.0;
        assert_eq!(fbcap_waterfill_nofb(0.5, 1.0, 2048, &mut nofb), FbcapStatus::Ok);
        assert!(nofb < cap.rate_bits);

        let mut fh = 0.0;
        assert_eq!(fbcap_finite_horizon_capacity(m, 1.0, 1, 0.0, &mut fh), FbcapStatus::Ok);
        assert!(fh <= cap.rate_bits + 1e-6);
        fbcap_model_free(m);
    }
}

#[test]
fn delayed_model_and_json_roundtrip() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(fbcap_model_ar1(0.5, &mut m), FbcapStatus::Ok);
        let mut d = ptr::null_mut();
        assert_eq!(fbcap_model_delayed(m, 3, &mut d), FbcapStatus::Ok);
        let (mut n, mut mm, mut p) = (0, 0, 0);
        fbcap_model_dims(d, &mut n, &mut mm, &mut p);
        assert_eq!((n, mm, p), (3, 1, 1));

        let mut json = ptr::null_mut();
        assert_eq!(fbcap_model_to_json(d, &mut json), FbcapStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(fbcap_model_from_json(json, &mut back), FbcapStatus::Ok);
        let (mut n2, mut m2, mut p2) = (0, 0, 0);
        fbcap_model_dims(back, &mut n2, &mut m2, &mut p2);
        assert_eq!((n2, m2, p2), (3, 1, 1));
        fbcap_string_free(json);
        fbcap_model_free(back);
        fbcap_model_free(d);
        fbcap_model_free(m);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(fbcap_model_awgn(-1.0, &mut m), FbcapStatus::InvalidArgument);
        assert!(m.is_null());
        assert!(last_error().contains("snr"));

        let bad = CString::new("{not json").unwrap();
        assert_eq!(fbcap_model_from_json(bad.as_ptr(), &mut m), FbcapStatus::ParseError);

        assert_eq!(fbcap_model_ar1(0.5, ptr::null_mut()), FbcapStatus::NullPointer);
        assert!(last_error().contains("null"));

        let mut cap = FbcapCapacity::default();
        assert_eq!(fbcap_stationary_capacity(ptr::null(), 1.0, 0.0, &mut cap), FbcapStatus::NullPointer);

        assert_eq!(fbcap_model_ar1(0.5, &mut m), FbcapStatus::Ok);
        let mut d = ptr::null_mut();
        assert_eq!(fbcap_model_delayed(m, 0, &mut d), FbcapStatus::InvalidArgument);
        fbcap_model_free(m);

        let mut x = 0.0;
        assert_eq!(fbcap_ar1_oracle(1.2, 1.0, &mut x), FbcapStatus::InvalidArgument);
        assert_eq!(fbcap_waterfill_nofb(1.0, 1.0, 256, &mut x), FbcapStatus::InvalidArgument);

        fbcap_model_free(ptr::null_mut());
        fbcap_string_free(ptr::null_mut());
    }
}

#[test]
fn detectability_from_raw_arrays() {
    let (mut pbh, mut lmi) = (false, false);
    unsafe {
        // unstable mode seen by the output
        let a = [2.0, 0.0, 0.0, 0.5];
        let c = [1.0, 0.0];
        assert_eq!(fbcap_detectable(a.as_ptr(), 2, c.as_ptr(), 1, &mut pbh, &mut lmi), FbcapStatus::Ok);
        assert!(pbh && lmi);

        // unstable mode hidden from the output
        let c = [0.0, 1.0];
        assert_eq!(fbcap_detectable(a.as_ptr(), 2, c.as_ptr(), 1, &mut pbh, &mut lmi), FbcapStatus::Ok);
        assert!(!pbh && !lmi);

        let a = [0.3];
        assert_eq!(fbcap_detectable(a.as_ptr(), 1, ptr::null(), 0, &mut pbh, &mut lmi), FbcapStatus::Ok);
        assert!(pbh && lmi);
    }
}

#[test]
fn version_is_cargo_version() {
    let v = unsafe { CStr::from_ptr(fbcap_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
