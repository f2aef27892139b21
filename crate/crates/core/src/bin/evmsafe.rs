use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evmsafe::asm::assemble;
use evmsafe::cemit::TypeFlag;
use evmsafe::driver::pipeline::{load_input, runtime_code};
use evmsafe::driver::{
    load_config, render_report, run_pipeline, CodeMode, Options, ReportFormat, CONFIG_ENV,
};
use evmsafe::exec::{execute, Storage, Tracer, DEFAULT_BUDGET};
use evmsafe::Word;

#[derive(Parser)]
#[command(
    name = "evmsafe",
    version,
    about = "EVM bytecode to SV-COMP C translation and verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Translate contracts to C and run the configured verifiers.
    Verify(VerifyArgs),
    /// Print the instruction listing of a contract.
    Disasm {
        file: PathBuf,
        #[arg(long)]
        keep_metadata: bool,
    },
    /// Assemble `.evm` source into hex bytecode.
    Asm {
        file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a contract in the concrete interpreter.
    Exec {
        file: PathBuf,
        /// Hex calldata.
        #[arg(long, default_value = "")]
        calldata: String,
        /// Initial storage entry `slot=value`; repeatable.
        #[arg(long = "storage", value_name = "SLOT=VALUE")]
        storage: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        /// Print every executed instruction.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        keep_metadata: bool,
    },
}

#[derive(Args)]
struct VerifyArgs {
    /// Bytecode files (.hex, .bin, .evm) or directories of them.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    /// Comma-separated C integer types: int, uint or int,uint.
    #[arg(long, default_value = "int", value_delimiter = ',')]
    types: Vec<TypeFlag>,
    /// Per-run verifier timeout in seconds, overriding the config.
    #[arg(long)]
    timeout: Option<u64>,
    /// Verifier config file; repeatable. Defaults to $EVMSAFE_VERIFIER_CONFIG.
    #[arg(long)]
    verifier: Vec<PathBuf>,
    #[arg(long, default_value = "evmsafe-out")]
    out: PathBuf,
    #[arg(long, default_value = "table")]
    report: ReportFormat,
    /// Write a Graphviz CFG per contract.
    #[arg(long)]
    dump_cfg: bool,
    /// Write the rule-based representation per function.
    #[arg(long)]
    dump_rbr: bool,
    /// Worker threads; defaults to the CPU count.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Inputs are creation bytecode; analyse the code the constructor returns.
    #[arg(long, conflicts_with = "runtime")]
    deployed: bool,
    /// Inputs are runtime bytecode (default).
    #[arg(long)]
    runtime: bool,
    #[arg(long)]
    keep_metadata: bool,
    /// Skip the concrete witness search.
    #[arg(long)]
    no_witness: bool,
}

const INPUT_EXTENSIONS: [&str; 3] = ["hex", "bin", "evm"];

fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>, String> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| format!("{}: {e}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| {
                    e.is_file()
                        && e.extension()
                            .and_then(|x| x.to_str())
                            .is_some_and(|x| INPUT_EXTENSIONS.contains(&x))
                })
                .collect();
            entries.sort();
            out.extend(entries);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(format!("{}: no such file or directory", p.display()));
        }
    }
    Ok(out)
}

fn verify(a: VerifyArgs) -> Result<(), String> {
    let inputs = expand(&a.paths)?;
    let mut config_paths = a.verifier.clone();
    if config_paths.is_empty() {
        if let Some(p) = std::env::var_os(CONFIG_ENV).filter(|p| !p.is_empty()) {
            config_paths.push(PathBuf::from(p));
        }
    }
    let mut verifiers = Vec::new();
    for p in &config_paths {
        verifiers.extend(load_config(p).map_err(|e| e.to_string())?);
    }
    let mut types = Vec::new();
    for t in a.types {
        if !types.contains(&t) {
            types.push(t);
        }
    }
    let opts = Options {
        types,
        verifiers,
        timeout: a.timeout,
        out_dir: a.out.clone(),
        dump_cfg: a.dump_cfg,
        dump_rbr: a.dump_rbr,
        jobs: a.jobs,
        mode: if a.deployed {
            CodeMode::Deployed
        } else {
            CodeMode::Runtime
        },
        keep_metadata: a.keep_metadata,
        witnesses: !a.no_witness,
    };
    let report = run_pipeline(&inputs, &opts).map_err(|e| e.to_string())?;
    let json = render_report(&report, ReportFormat::Json);
    fs::write(a.out.join("report.json"), json).map_err(|e| format!("writing report: {e}"))?;
    print!("{}", render_report(&report, a.report));
    Ok(())
}

fn load_program(file: &Path, keep_metadata: bool) -> Result<evmsafe::bytecode::Program, String> {
    let code = load_input(file).map_err(|(_, m)| m)?;
    runtime_code(&code, CodeMode::Runtime, keep_metadata).map_err(|(_, m)| m)
}

fn parse_storage(entries: &[String]) -> Result<Storage, String> {
    let mut s = Storage::new();
    for e in entries {
        let (k, v) = e
            .split_once('=')
            .ok_or_else(|| format!("storage entry `{e}` is not SLOT=VALUE"))?;
        let word = |t: &str| {
            t.trim()
                .parse::<Word>()
                .map_err(|err| format!("`{t}`: {err}"))
        };
        s.insert(word(k)?, word(v)?);
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Cmd::Verify(a) => verify(a),
        Cmd::Disasm {
            file,
            keep_metadata,
        } => {
            let p = load_program(&file, keep_metadata)?;
            let mut out = std::io::stdout().lock();
            for ins in p.instructions() {
                writeln!(out, "{ins}").map_err(|e| e.to_string())?;
            }
            Ok(())
        }
        Cmd::Asm { file, output } => {
            let src = fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let code = assemble(&src).map_err(|e| format!("{}: {e}", file.display()))?;
            let text = format!("0x{}\n", hex::encode(code));
            match output {
                Some(o) => fs::write(&o, text).map_err(|e| format!("{}: {e}", o.display())),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Cmd::Exec {
            file,
            calldata,
            storage,
            budget,
            trace,
            keep_metadata,
        } => {
            let p = load_program(&file, keep_metadata)?;
            let data =
                evmsafe::bytecode::parse_hex(&calldata).map_err(|e| format!("calldata: {e}"))?;
            let storage = parse_storage(&storage)?;
            let out = if trace {
                let mut t = Tracer(std::io::stdout().lock());
                execute(&p, &data, &storage, budget, &mut t)
            } else {
                execute(&p, &data, &storage, budget, &mut ())
            };
            println!("verdict: {:?}", out.verdict);
            if !out.output.is_empty() {
                println!("output: 0x{}", hex::encode(&out.output));
            }
            for (k, v) in &out.state.storage {
                println!("storage[{k:#x}] = {v:#x}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("evmsafe: {e}");
            ExitCode::from(1)
        }
    }
}
