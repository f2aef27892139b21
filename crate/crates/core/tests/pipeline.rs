mod common;

use std::path::{Path, PathBuf};

use common::*;
use evmsafe::bytecode::{decode_bytes, parse_hex};
use evmsafe::cemit::TypeFlag;
use evmsafe::driver::pipeline::runtime_code;
use evmsafe::driver::report::FailureStage;
use evmsafe::driver::{
    parse_config, render_report, run_pipeline, CodeMode, FunctionStatus, Options, ReportFormat,
    Status, VerifierStatus,
};
use evmsafe::exec::{run_evm, Storage, Verdict, DEFAULT_BUDGET};

fn stub_opts(out: &Path, answers: &str) -> Options {
    let answers_path = out.join("answers.txt");
    std::fs::create_dir_all(out).unwrap();
    std::fs::write(&answers_path, answers).unwrap();
    let mut o = Options::new(out);
    o.verifiers = parse_config(&stub_config("stub", &answers_path)).unwrap();
    o
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn failing_contract_is_recorded_and_batch_continues() {
    let dir = tempfile::tempdir().unwrap();
    // SWAP1 on an empty stack underflows during CFG recovery
    let bad = write(dir.path(), "bad.hex", "0x9000");
    let inputs = vec![bad, fixture_path("assert_nonzero")];
    let r = run_pipeline(&inputs, &Options::new(dir.path().join("out"))).unwrap();
    assert_eq!(r.failures.len(), 1);
    assert_eq!(r.failures[0].contract, "bad");
    assert_eq!(r.failures[0].stage, FailureStage::Cfg);
    assert_eq!(r.functions.len(), 1);
    assert_eq!(r.functions[0].status, FunctionStatus::Emitted);
    assert!(r.totality_holds());
}

#[test]
fn unreadable_and_malformed_inputs_are_failures() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = vec![
        dir.path().join("missing.hex"),
        write(dir.path(), "odd.hex", "0xabc"),
        write(dir.path(), "broken.evm", "PUSH @nowhere JUMP"),
    ];
    let r = run_pipeline(&inputs, &Options::new(dir.path().join("out"))).unwrap();
    let stages: Vec<FailureStage> = r.failures.iter().map(|f| f.stage).collect();
    assert_eq!(
        stages,
        [
            FailureStage::Read,
            FailureStage::Decode,
            FailureStage::Decode
        ]
    );
    assert!(r.totality_holds());
}

#[test]
fn invalid_free_contract_emits_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = run_pipeline(&[fixture_path("add_stop")], &Options::new(&out)).unwrap();
    assert!(r
        .functions
        .iter()
        .all(|f| f.status == FunctionStatus::InvalidFree));
    let c_files = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "c")
        })
        .count();
    assert_eq!(c_files, 0);
}

#[test]
fn unconditional_invalid_is_non_verified_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let opts = stub_opts(&dir.path().join("out"), "* false\n");
    let r = run_pipeline(&[fixture_path("unconditional_invalid")], &opts).unwrap();
    let f = &r.functions[0];
    assert_eq!(
        f.status_for("stub", TypeFlag::SignedInt),
        Status::NonVerified
    );
    let w = f.witness.as_ref().expect("witness attached");
    let p = fixture("unconditional_invalid");
    assert_eq!(
        run_evm(&p, &parse_hex(w).unwrap(), &Storage::new(), DEFAULT_BUDGET),
        Verdict::InvalidTrap
    );
}

#[test]
fn every_witness_replays_to_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let names = fixture_names();
    let inputs: Vec<PathBuf> = names.iter().map(|n| fixture_path(n)).collect();
    let r = run_pipeline(&inputs, &Options::new(dir.path())).unwrap();
    let mut seen = 0;
    for f in &r.functions {
        if let Some(w) = &f.witness {
            let p = fixture(&f.contract);
            let v = run_evm(&p, &parse_hex(w).unwrap(), &Storage::new(), DEFAULT_BUDGET);
            assert_eq!(v, Verdict::InvalidTrap, "{} {}", f.contract, f.function);
            seen += 1;
        }
    }
    assert!(seen >= 10, "only {seen} witnesses");
}

#[test]
fn statuses_follow_the_verifier() {
    let dir = tempfile::tempdir().unwrap();
    let answers = "\
require_then_assert true
assert_nonzero false
div_guard unknown
safemath_sub garbage
storage_counter crash
";
    let mut opts = stub_opts(&dir.path().join("out"), answers);
    opts.types = vec![TypeFlag::SignedInt, TypeFlag::UnsignedInt];
    let names = [
        "require_then_assert",
        "assert_nonzero",
        "div_guard",
        "safemath_sub",
        "storage_counter",
    ];
    let inputs: Vec<PathBuf> = names.iter().map(|n| fixture_path(n)).collect();
    let r = run_pipeline(&inputs, &opts).unwrap();
    let expect = [
        VerifierStatus::Verified,
        VerifierStatus::NonVerified,
        VerifierStatus::Error,
        VerifierStatus::Error,
        VerifierStatus::Error,
    ];
    for (f, e) in r.functions.iter().zip(expect) {
        for flag in [TypeFlag::SignedInt, TypeFlag::UnsignedInt] {
            assert_eq!(f.status_for("stub", flag), e.into(), "{}", f.contract);
        }
        assert_eq!(f.outputs.len(), 2);
        assert!(f.outputs[0].ends_with("_int.c") && f.outputs[1].ends_with("_uint.c"));
    }
}

#[test]
fn killed_at_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let mut opts = stub_opts(&dir.path().join("out"), "* timeout\n");
    opts.timeout = Some(1);
    let start = std::time::Instant::now();
    let r = run_pipeline(&[fixture_path("assert_nonzero")], &opts).unwrap();
    assert!(start.elapsed().as_secs() < 30);
    assert_eq!(
        r.functions[0].status_for("stub", TypeFlag::SignedInt),
        Status::Timeout
    );
}

#[test]
fn missing_verifier_binary_is_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut opts = Options::new(dir.path());
    opts.verifiers = parse_config(
        r#"name = "ghost"
command = ["/nonexistent/ghost", "{input}"]
[patterns]
true = "TRUE"
false = "FALSE"
unknown = "UNKNOWN"
"#,
    )
    .unwrap();
    let r = run_pipeline(&[fixture_path("assert_nonzero")], &opts).unwrap();
    assert_eq!(
        r.functions[0].status_for("ghost", TypeFlag::SignedInt),
        Status::Error
    );
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let answers = "_deadbeef false\nrunning true\n* unknown\n";
    let inputs: Vec<PathBuf> = fixture_names().iter().map(|n| fixture_path(n)).collect();
    let mut runs = Vec::new();
    for k in 0..2 {
        let mut opts = stub_opts(&dir.path().join(format!("out{k}")), answers);
        opts.jobs = 1 + 3 * k;
        opts.types = vec![TypeFlag::SignedInt, TypeFlag::UnsignedInt];
        let r = run_pipeline(&inputs, &opts).unwrap();
        runs.push((
            render_report(&r, ReportFormat::Json),
            render_report(&r, ReportFormat::Csv),
            render_report(&r, ReportFormat::Table),
        ));
        for f in &r.functions {
            for o in &f.outputs {
                let text = std::fs::read_to_string(opts.out_dir.join(o)).unwrap();
                if k == 1 {
                    let first = std::fs::read_to_string(dir.path().join("out0").join(o)).unwrap();
                    assert_eq!(first, text, "{o}");
                }
            }
        }
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn dumps_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut opts = Options::new(dir.path());
    opts.dump_cfg = true;
    opts.dump_rbr = true;
    run_pipeline(&[fixture_path("dispatch_two")], &opts).unwrap();
    let dot = std::fs::read_to_string(dir.path().join("dispatch_two.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
    let rbr = std::fs::read_to_string(dir.path().join("dispatch_two_deadbeef.rbr")).unwrap();
    assert!(rbr.contains("invalid"));
    assert!(dir.path().join("dispatch_two_deadbeef.c").is_file());
    assert!(dir.path().join("dispatch_two_cafebabe.c").is_file());
}

/// Creation code that copies `runtime` into memory and returns it.
fn creation_code(runtime: &[u8]) -> Vec<u8> {
    let n = runtime.len() as u8;
    // PUSH1 n DUP1 PUSH1 12 PUSH1 0 CODECOPY PUSH1 0 RETURN, then padding to 12
    let mut c = vec![0x60, n, 0x80, 0x60, 12, 0x60, 0, 0x39, 0x60, 0, 0xf3, 0x00];
    c.extend_from_slice(runtime);
    c
}

#[test]
fn deployed_mode_runs_the_constructor() {
    let dir = tempfile::tempdir().unwrap();
    let runtime = decode_bytes(
        &parse_hex(&std::fs::read_to_string(fixture_path("assert_nonzero")).unwrap()).unwrap(),
    );
    let creation = creation_code(runtime.code());
    let path = write(
        dir.path(),
        "deployed.hex",
        &format!("0x{}", hex::encode(&creation)),
    );
    let mut opts = Options::new(dir.path().join("out"));
    opts.mode = CodeMode::Deployed;
    let r = run_pipeline(std::slice::from_ref(&path), &opts).unwrap();
    assert!(r.failures.is_empty(), "{:?}", r.failures);
    assert_eq!(r.functions[0].status, FunctionStatus::Emitted);
    assert!(r.functions[0].witness.is_some());

    // as runtime code the constructor itself has no INVALID
    opts.mode = CodeMode::Runtime;
    let r = run_pipeline(&[path], &opts).unwrap();
    assert_eq!(r.functions[0].status, FunctionStatus::InvalidFree);

    // a constructor that returns nothing is a deploy failure
    let p = write(dir.path(), "empty_ctor.hex", "0x00");
    opts.mode = CodeMode::Deployed;
    let r = run_pipeline(&[p], &opts).unwrap();
    assert_eq!(r.failures[0].stage, FailureStage::Deploy);
}

#[test]
fn metadata_is_stripped_unless_kept() {
    // STOP followed by a CBOR-like trailer and its big-endian length
    let code = parse_hex("0x00a165fe0003").unwrap();
    assert_eq!(
        runtime_code(&code, CodeMode::Runtime, false).unwrap().len(),
        1
    );
    assert_eq!(
        runtime_code(&code, CodeMode::Runtime, true).unwrap().len(),
        6
    );
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "meta.hex", "0x00a165fe0003");
    let r = run_pipeline(&[p], &Options::new(dir.path().join("out"))).unwrap();
    assert_eq!(r.functions[0].status, FunctionStatus::InvalidFree);
}

#[test]
fn recursive_function_is_discarded_not_emitted() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_pipeline(&[fixture_path("recursive")], &Options::new(dir.path())).unwrap();
    assert_eq!(
        r.functions[0].status,
        FunctionStatus::Discarded {
            reason: "recursion".into()
        }
    );
    assert!(r.functions[0].outputs.is_empty());
    assert!(!dir.path().join("recursive_fallback.c").exists());
}
