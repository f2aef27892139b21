//! Batch pipeline: bytecode files in, report and C units out.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::VerifierConfig;
use super::report::{
    FailureStage, FunctionStatus, FunctionVerdict, PipelineFailure, Report, RunResult,
};
use super::runner::{run_verifier, UNREACH_CALL_PRP};
use crate::asm::assemble;
use crate::bytecode::{decode_bytes, parse_hex, strip_metadata, Program};
use crate::cemit::{emit, render, TypeFlag};
use crate::cfg::{build_cfg, to_dot, Cfg, FunctionEntry};
use crate::exec::{execute, find_invalid_witness, Grid, Storage, Verdict, DEFAULT_BUDGET};
use crate::rbr::{array_length_note, decompile, RbrError};

/// Parameters beyond this many keep their zero value in the witness search.
pub const WITNESS_PARAMS: usize = 6;
pub const PROPERTY_FILE: &str = "unreach-call.prp";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CodeMode {
    /// Inputs are runtime bytecode.
    #[default]
    Runtime,
    /// Inputs are creation bytecode; the runtime code is what the constructor returns.
    Deployed,
}

#[derive(Debug, Clone)]
pub struct Options {
    pub types: Vec<TypeFlag>,
    pub verifiers: Vec<VerifierConfig>,
    /// Overrides every verifier's own timeout.
    pub timeout: Option<u64>,
    pub out_dir: PathBuf,
    pub dump_cfg: bool,
    pub dump_rbr: bool,
    /// Worker threads; 0 uses one per CPU.
    pub jobs: usize,
    pub mode: CodeMode,
    pub keep_metadata: bool,
    pub witnesses: bool,
}

impl Options {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Options {
            types: vec![TypeFlag::SignedInt],
            verifiers: Vec::new(),
            timeout: None,
            out_dir: out_dir.into(),
            dump_cfg: false,
            dump_rbr: false,
            jobs: 0,
            mode: CodeMode::Runtime,
            keep_metadata: false,
            witnesses: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("cannot prepare output directory {path}: {source}")]
    OutDir {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Outcome of one contract.
#[derive(Debug, Clone, Default)]
pub struct ContractResult {
    pub verdicts: Vec<FunctionVerdict>,
    pub failures: Vec<PipelineFailure>,
}

type Failure = (FailureStage, String);

/// Reads one input file: `.evm` is assembly, `.bin` raw bytes, anything else hex text.
pub fn load_input(path: &Path) -> Result<Vec<u8>, Failure> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let read_err = |e: std::io::Error| (FailureStage::Read, format!("{}: {e}", path.display()));
    match ext {
        "bin" => fs::read(path).map_err(read_err),
        "evm" => {
            let src = fs::read_to_string(path).map_err(read_err)?;
            assemble(&src).map_err(|e| (FailureStage::Decode, e.to_string()))
        }
        _ => {
            let text = fs::read_to_string(path).map_err(read_err)?;
            parse_hex(&text).map_err(|e| (FailureStage::Decode, e.to_string()))
        }
    }
}

/// Contract ids: file stems, made unique within the batch.
pub fn contract_ids(paths: &[PathBuf]) -> Vec<String> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map_or_else(
                || "contract".to_string(),
                |s| s.to_string_lossy().into_owned(),
            );
            let n = seen.entry(stem.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                stem
            } else {
                format!("{stem}-{n}")
            }
        })
        .collect()
}

pub fn unit_name(contract: &str, tag: &str, flag: TypeFlag, paired: bool) -> String {
    if paired {
        format!("{contract}_{tag}_{flag}.c")
    } else {
        format!("{contract}_{tag}.c")
    }
}

/// Runs the batch on a pool of `opts.jobs` workers. Per-contract problems are
/// recorded in the report; only an unusable output directory is an error.
pub fn run_pipeline(paths: &[PathBuf], opts: &Options) -> Result<Report, PipelineError> {
    let out_err = |source| PipelineError::OutDir {
        path: opts.out_dir.display().to_string(),
        source,
    };
    fs::create_dir_all(&opts.out_dir).map_err(out_err)?;
    if !opts.verifiers.is_empty() {
        fs::write(opts.out_dir.join(PROPERTY_FILE), UNREACH_CALL_PRP).map_err(out_err)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()?;
    let ids = contract_ids(paths);
    let results: Vec<ContractResult> = pool.install(|| {
        paths
            .par_iter()
            .zip(ids.par_iter())
            .map(|(path, id)| match load_input(path) {
                Ok(code) => analyze_contract(id, &code, opts),
                Err((stage, message)) => ContractResult {
                    verdicts: Vec::new(),
                    failures: vec![PipelineFailure {
                        contract: id.clone(),
                        function: None,
                        stage,
                        message,
                    }],
                },
            })
            .collect()
    });
    let mut report = Report {
        verifiers: opts.verifiers.iter().map(|v| v.name.clone()).collect(),
        flags: opts.types.clone(),
        ..Report::default()
    };
    for r in results {
        report.functions.extend(r.verdicts);
        report.failures.extend(r.failures);
    }
    Ok(report)
}

/// Runtime code for a contract blob under `mode`.
pub fn runtime_code(code: &[u8], mode: CodeMode, keep_metadata: bool) -> Result<Program, Failure> {
    let strip = |c: &[u8]| {
        if keep_metadata {
            c.to_vec()
        } else {
            strip_metadata(c).to_vec()
        }
    };
    match mode {
        CodeMode::Runtime => Ok(decode_bytes(&strip(code))),
        CodeMode::Deployed => {
            let creation = decode_bytes(code);
            let out = execute(&creation, &[], &Storage::new(), DEFAULT_BUDGET, &mut ());
            if out.verdict != Verdict::Return || out.output.is_empty() {
                return Err((
                    FailureStage::Deploy,
                    format!(
                        "constructor ended with {:?} and no runtime code",
                        out.verdict
                    ),
                ));
            }
            Ok(decode_bytes(&strip(&out.output)))
        }
    }
}

/// Runs every function of one contract through the pipeline.
pub fn analyze_contract(id: &str, code: &[u8], opts: &Options) -> ContractResult {
    let fail = |stage, message: String| ContractResult {
        verdicts: Vec::new(),
        failures: vec![PipelineFailure {
            contract: id.to_string(),
            function: None,
            stage,
            message,
        }],
    };
    let program = match runtime_code(code, opts.mode, opts.keep_metadata) {
        Ok(p) => p,
        Err((stage, msg)) => return fail(stage, msg),
    };
    let cfg = match build_cfg(&program) {
        Ok(c) => c,
        Err(e) => return fail(FailureStage::Cfg, e.to_string()),
    };
    if opts.dump_cfg {
        if let Err(e) = fs::write(opts.out_dir.join(format!("{id}.dot")), to_dot(&cfg, id)) {
            return fail(FailureStage::Write, format!("writing DOT: {e}"));
        }
    }
    let functions: Vec<&FunctionEntry> = cfg.functions.values().collect();
    let outcomes: Vec<Result<FunctionVerdict, PipelineFailure>> = functions
        .par_iter()
        .map(|f| analyze_function(id, &program, &cfg, f, opts))
        .collect();
    let mut out = ContractResult::default();
    for o in outcomes {
        match o {
            Ok(v) => out.verdicts.push(v),
            Err(e) => out.failures.push(e),
        }
    }
    out
}

fn analyze_function(
    id: &str,
    program: &Program,
    cfg: &Cfg,
    f: &FunctionEntry,
    opts: &Options,
) -> Result<FunctionVerdict, PipelineFailure> {
    let failure = |stage, message: String| PipelineFailure {
        contract: id.to_string(),
        function: Some(f.name.clone()),
        stage,
        message,
    };
    let mut v = FunctionVerdict {
        contract: id.to_string(),
        function: f.name.clone(),
        selector: f.selector.map(|s| s.to_string()),
        status: FunctionStatus::Emitted,
        results: Vec::new(),
        witness: None,
        notes: Vec::new(),
        outputs: Vec::new(),
    };
    let truncated = cfg.discard_reason(f);
    if !cfg.reaches_invalid(f) {
        v.status = FunctionStatus::InvalidFree;
        if let Some(r) = truncated {
            v.notes.push(format!("region truncated ({r})"));
        }
        return Ok(v);
    }
    let rp = match decompile(cfg, f) {
        Ok(rp) => rp,
        Err(RbrError::Discarded(r)) => {
            v.status = FunctionStatus::Discarded {
                reason: r.to_string(),
            };
            return Ok(v);
        }
        Err(e @ RbrError::DepthMismatch(_)) => {
            v.status = FunctionStatus::Discarded {
                reason: "depth-mismatch".into(),
            };
            v.notes.push(e.to_string());
            return Ok(v);
        }
        Err(e) => return Err(failure(FailureStage::Decompile, e.to_string())),
    };
    let tag = f.tag();
    if opts.dump_rbr {
        let path = opts.out_dir.join(format!("{id}_{tag}.rbr"));
        fs::write(&path, rp.dump())
            .map_err(|e| failure(FailureStage::Write, format!("{}: {e}", path.display())))?;
    }
    v.notes.extend(
        array_length_note(&rp)
            .into_iter()
            .map(|n| format!("{}: {}", n.rule, n.text)),
    );
    if opts.witnesses {
        let params = rp.params.iter().next_back().map_or(0, |&i| i as usize + 1);
        let grid = Grid::standard(params.min(WITNESS_PARAMS));
        if let Ok(Some(w)) = find_invalid_witness(program, f, &grid) {
            v.witness = Some(format!("0x{}", hex::encode(w)));
        }
    }
    let paired = opts.types.len() > 1;
    let property = opts.out_dir.join(PROPERTY_FILE);
    for &flag in &opts.types {
        let text = render(&emit(&rp, flag));
        let name = unit_name(id, &tag, flag, paired);
        let path = opts.out_dir.join(&name);
        fs::write(&path, text)
            .map_err(|e| failure(FailureStage::Write, format!("{}: {e}", path.display())))?;
        v.outputs.push(name);
        for vc in &opts.verifiers {
            let (status, _) = run_verifier(vc, &path, &property, opts.timeout);
            v.results.push(RunResult {
                verifier: vc.name.clone(),
                flag,
                status,
            });
        }
    }
    Ok(v)
}
