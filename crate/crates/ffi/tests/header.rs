//! Compiles and runs a small C program against the generated header and the
//! static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "u1qa.h"

int main(void) {
    double exact = 0, approx = 0;
    if (u1qa_psapprox(1000, 20, 0.05, &exact, &approx) != U1QA_STATUS_OK) return 1;
    if (approx != 8.0 || exact < 4.18 || exact > 4.19) return 2;
    double x = 0;
    if (u1qa_ln_binomial(2, 3, &x) != U1QA_STATUS_DOMAIN) return 3;
    if (strlen(u1qa_last_error()) == 0) return 4;
    U1qaConfig *cfg = NULL;
    if (u1qa_config_from_toml("name = 1", "entropy", 0, &cfg) != U1QA_STATUS_CONFIG) return 5;
    if (cfg != NULL) return 6;
    printf("%s\n", u1qa_version());
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/u1qa.h")).unwrap();
    for name in [
        "u1qa_last_error",
        "u1qa_config_from_toml",
        "u1qa_run",
        "u1qa_series_copy",
        "u1qa_series_free",
        "u1qa_oracle_check",
        "typedef struct U1qaConfig U1qaConfig",
        "U1QA_STATUS_INVARIANT = 3",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn c_program_links_against_static_library() {
    let lib = target_dir().join("libu1qa_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with(env!("CARGO_PKG_VERSION")));
}
