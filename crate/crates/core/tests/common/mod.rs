#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use evmsafe::bytecode::{decode, Program};
use evmsafe::exec::{encode_calldata, standard_values, Storage};
use evmsafe::Word;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Fixture names (file stems), sorted.
pub fn fixture_names() -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "evm").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    v.sort();
    v
}

pub fn fixture_path(name: &str) -> PathBuf {
    fixture_dir().join(format!("{name}.hex"))
}

pub fn fixture(name: &str) -> Program {
    decode(&std::fs::read_to_string(fixture_path(name)).unwrap()).unwrap()
}

/// All committed fixtures.
pub fn corpus() -> Vec<(String, Program)> {
    fixture_names()
        .into_iter()
        .map(|n| {
            let p = fixture(&n);
            (n, p)
        })
        .collect()
}

/// Storage presets: empty, and the low slots all set to 1, 2 or MAX.
pub fn storage_presets(slots: &[Word]) -> Vec<Storage> {
    let mut out = vec![Storage::new()];
    for v in [Word::from(1u8), Word::from(2u8), Word::MAX] {
        out.push(slots.iter().map(|&s| (s, v)).collect());
    }
    out
}

pub fn low_slots() -> Vec<Word> {
    (0u8..8).map(Word::from).collect()
}

/// Every calldata on the `{0, 1, 2, MAX}^params` grid.
pub fn grid_calldata(selector: Option<[u8; 4]>, params: usize) -> Vec<Vec<u8>> {
    let vals = standard_values();
    let n = vals.len().pow(params as u32);
    (0..n)
        .map(|mut k| {
            let mut args = vec![Word::ZERO; params];
            for a in args.iter_mut().rev() {
                *a = vals[k % vals.len()];
                k /= vals.len();
            }
            encode_calldata(selector, &args)
        })
        .collect()
}

/// Compiles `text` with a strict C99 compiler.
pub fn compiles(text: &str) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("unit.c");
    std::fs::write(&path, text).map_err(|e| e.to_string())?;
    let out = Command::new("cc")
        .args([
            "-std=c99",
            "-Wall",
            "-Wextra",
            "-Werror",
            "-pedantic",
            "-c",
            "-o",
        ])
        .arg(dir.path().join("unit.o"))
        .arg(&path)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

pub fn stub_verifier() -> &'static str {
    env!("CARGO_BIN_EXE_evmsafe-stub-verifier")
}

pub fn evmsafe_bin() -> &'static str {
    env!("CARGO_BIN_EXE_evmsafe")
}

/// Config text for the stub verifier with the given answers file.
pub fn stub_config(name: &str, answers: &Path) -> String {
    format!(
        r#"name = "{name}"
command = ["{bin}", "--answers", "{answers}", "--spec", "{{property}}", "{{input}}"]
timeout_seconds = 60
[patterns]
true = "Verification result: TRUE"
false = "Verification result: FALSE"
unknown = "Verification result: UNKNOWN"
"#,
        bin = stub_verifier(),
        answers = answers.display(),
    )
}
