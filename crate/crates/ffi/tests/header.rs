use std::path::PathBuf;
use std::process::Command;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_public_api() {
    let h = std::fs::read_to_string(crate_dir().join("include/fbcap.h")).unwrap();
    for sym in [
        "typedef struct FbcapModel FbcapModel;",
        "FBCAP_STATUS_OK = 0",
        "FBCAP_STATUS_NOT_DETECTABLE",
        "fbcap_model_from_json",
        "fbcap_model_free",
        "fbcap_stationary_capacity",
        "fbcap_finite_horizon_capacity",
        "fbcap_detectable",
        "fbcap_last_error",
        "fbcap_string_free",
    ] {
        assert!(h.contains(sym), "header is missing {sym}");
    }
}

// Compiles and runs a small C program against the static library. Skipped
// when no C compiler or no staticlib artifact is around.
#[test]
fn c_program_links_and_runs() {
    let target = std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| crate_dir().join("../../target"));
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    let lib = target.join(profile).join("libfbcap_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no cc or {} missing", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <math.h>
#include "fbcap.h"
int main(void) {
    FbcapModel *m = NULL;
    if (fbcap_model_ar1(0.5, &m) != FBCAP_STATUS_OK) return 10;
    FbcapCapacity cap;
    if (fbcap_stationary_capacity(m, 1.0, 0.0, &cap) != FBCAP_STATUS_OK) return 11;
    double oracle = 0.0;
    fbcap_ar1_oracle(0.5, 1.0, &oracle);
    fbcap_model_free(m);
    if (fabs(cap.rate_bits - oracle) > 1e-6) return 12;
    if (fbcap_model_awgn(-1.0, &m) != FBCAP_STATUS_INVALID_ARGUMENT) return 13;
    if (fbcap_last_error() == NULL) return 14;
    printf("%.6f\n", cap.rate_bits);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "cc failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.716753");
}
