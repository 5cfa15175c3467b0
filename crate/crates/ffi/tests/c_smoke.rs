//! Compiles a C program against the generated header and links it with the
//! static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "efllm.h"

int main(void) {
    size_t cls = 0;
    double mid = 0.0;
    if (efllm_bin_power(798.0, 100, 95.4, &cls) != EFLLM_STATUS_OK || cls != 12) return 1;
    if (efllm_decode_class(798.0, 100, cls, &mid) != EFLLM_STATUS_OK) return 2;
    if (efllm_bin_power(798.0, 100, -1.0, &cls) != EFLLM_STATUS_OUT_OF_RANGE) return 3;
    if (efllm_last_error() == NULL) return 4;

    double values[] = {1, 2, 3, 4, 5, 6};
    size_t sizes[] = {3, 3};
    EfllmAnova r;
    if (efllm_anova(values, sizes, 2, &r) != EFLLM_STATUS_OK) return 5;

    EfllmModel *m = NULL;
    if (efllm_model_load("/nonexistent", &m) != EFLLM_STATUS_IO || m != NULL) return 6;
    efllm_model_free(NULL);
    printf("%s %.2f %.1f\n", efllm_version(), mid, r.f);
    return 0;
}
"#;

fn lib_dir() -> PathBuf {
    // target/<profile>/deps/c_smoke-<hash> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib = lib_dir().join("libefllm_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    let bin = tmp.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .expect("C compiler");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let text = String::from_utf8_lossy(&run.stdout);
    assert_eq!(text.trim(), format!("{} 91.77 13.5", env!("CARGO_PKG_VERSION")));
}
