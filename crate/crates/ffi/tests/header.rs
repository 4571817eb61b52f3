use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "deepkey.h"

int main(void) {
    double b[7], a[7], frr = -1.0;
    DkSystem *sys = NULL;
    DkDecision d;
    double eeg[14 * 200] = {0};
    double gait[27 * 200] = {0};
    if (strlen(dk_version()) == 0) return 10;
    if (dk_eeg_channels() != 14 || dk_gait_channels() != 27) return 11;
    if (dk_design_bandpass(3, 0.5, 3.5, 128.0, b, a, 7) != DK_STATUS_OK) return 12;
    if (a[0] != 1.0) return 13;
    if (dk_compose_frr(0.0, 1.0, 1.0, &frr) != DK_STATUS_OK || frr != 0.0) return 14;
    if (dk_system_load("/nonexistent.dk", &sys) != DK_STATUS_IO || sys != NULL) return 15;
    if (dk_last_error() == NULL) return 16;
    if (dk_authenticate(NULL, eeg, 200, gait, 200, &d) != DK_STATUS_NULL_POINTER) return 17;
    dk_system_free(NULL);
    puts("ok");
    return 0;
}
"#;

fn cc() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().map(|_| cc)
}

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    [deps.join("libdeepkey_ffi.a"), deps.parent()?.join("libdeepkey_ffi.a")]
        .into_iter()
        .find(|p| p.exists())
}

#[test]
fn header_is_current_and_self_contained() {
    let header = std::fs::read_to_string(header_dir().join("deepkey.h")).unwrap();
    for name in [
        "dk_version",
        "dk_last_error",
        "dk_system_load",
        "dk_system_from_bytes",
        "dk_system_free",
        "dk_system_subjects",
        "dk_authenticate",
        "dk_compose_frr",
        "dk_design_bandpass",
        "typedef struct DkSystem DkSystem;",
        "DK_STATUS_BUFFER_TOO_SMALL",
        "DK_REASON_ID_MISMATCH",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let Some(cc) = cc() else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    let out = Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(header_dir().join("deepkey.h"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn c_program_links_against_static_lib() {
    let (Some(cc), Some(lib)) = (cc(), static_lib()) else {
        eprintln!("no C compiler or static library; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new(cc)
        .arg("-I")
        .arg(header_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
