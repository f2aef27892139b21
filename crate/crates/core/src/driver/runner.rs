//! Verifier subprocesses with a hard wall-clock limit.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use wait_timeout::ChildExt;

use super::config::VerifierConfig;

/// Result of one verifier run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum VerifierStatus {
    Verified,
    NonVerified,
    Timeout,
    Error,
}

impl VerifierStatus {
    pub const ALL: [VerifierStatus; 4] = [
        VerifierStatus::Verified,
        VerifierStatus::NonVerified,
        VerifierStatus::Timeout,
        VerifierStatus::Error,
    ];

    pub fn label(self) -> &'static str {
        match self {
            VerifierStatus::Verified => "Verified",
            VerifierStatus::NonVerified => "Non-Verified",
            VerifierStatus::Timeout => "Timeout",
            VerifierStatus::Error => "Error",
        }
    }
}

/// Captured process output.
#[derive(Debug, Clone, Default)]
pub struct RawRun {
    pub stdout: String,
    pub stderr: String,
    /// `None` when killed or terminated by a signal.
    pub exit_code: Option<i32>,
    pub killed: bool,
    pub elapsed: Duration,
    /// Set when the process could not be started.
    pub spawn_error: Option<String>,
}

fn drain<R: Read + Send + 'static>(r: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut r) = r {
            let _ = r.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Runs `argv`, killing it once `timeout` elapses.
pub fn run_command(argv: &[String], timeout: Duration) -> RawRun {
    let start = Instant::now();
    let Some((prog, args)) = argv.split_first() else {
        return RawRun {
            spawn_error: Some("empty command".into()),
            ..RawRun::default()
        };
    };
    let mut cmd = Command::new(prog);
    cmd.args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        // own process group so that the kill reaches helper processes too
        cmd.process_group(0);
    }
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => {
            return RawRun {
                spawn_error: Some(format!("{prog}: {e}")),
                elapsed: start.elapsed(),
                ..RawRun::default()
            }
        }
    };
    let out = drain(child.stdout.take());
    let err = drain(child.stderr.take());
    let (exit_code, killed) = match child.wait_timeout(timeout) {
        Ok(Some(status)) => (status.code(), false),
        Ok(None) | Err(_) => {
            kill_group(&mut child);
            let _ = child.wait();
            (None, true)
        }
    };
    let elapsed = start.elapsed();
    RawRun {
        stdout: out.join().unwrap_or_default(),
        stderr: err.join().unwrap_or_default(),
        exit_code,
        killed,
        elapsed,
        spawn_error: None,
    }
}

fn kill_group(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        let _ = Command::new("kill")
            .args(["-KILL", "--", &format!("-{}", child.id())])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status();
    }
    let _ = child.kill();
}

/// Runs `cfg` on one C unit.
pub fn run_verifier(
    cfg: &VerifierConfig,
    input: &Path,
    property: &Path,
    timeout_override: Option<u64>,
) -> (VerifierStatus, RawRun) {
    let secs = timeout_override.unwrap_or(cfg.timeout_seconds).max(1);
    let raw = run_command(&cfg.argv(input, property), Duration::from_secs(secs));
    let status = parse_verifier_output(cfg, &raw);
    (status, raw)
}

/// Maps a finished or killed run to a status.
///
/// A process killed at the limit is a timeout; otherwise exactly one of the
/// true/false patterns must match the combined output. Unknown answers, no
/// match, several matches or a failed spawn are errors.
pub fn parse_verifier_output(cfg: &VerifierConfig, raw: &RawRun) -> VerifierStatus {
    if raw.killed {
        return VerifierStatus::Timeout;
    }
    if raw.spawn_error.is_some() {
        return VerifierStatus::Error;
    }
    let text = format!("{}\n{}", raw.stdout, raw.stderr);
    let t = cfg.true_pattern.is_match(&text);
    let f = cfg.false_pattern.is_match(&text);
    let u = cfg.unknown_pattern.is_match(&text);
    match (t, f, u) {
        (true, false, false) => VerifierStatus::Verified,
        (false, true, false) => VerifierStatus::NonVerified,
        _ => VerifierStatus::Error,
    }
}

/// The SV-COMP unreachability property.
pub const UNREACH_CALL_PRP: &str = "CHECK( init(main()), LTL(G ! call(__VERIFIER_error())) )\n";

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> VerifierConfig {
        VerifierConfig::new(
            "t",
            vec!["sh".into(), "-c".into(), "{input}".into()],
            60,
            ["TRUE", "FALSE", "UNKNOWN"],
        )
        .unwrap()
    }

    fn raw(stdout: &str, code: i32) -> RawRun {
        RawRun {
            stdout: stdout.into(),
            exit_code: Some(code),
            ..RawRun::default()
        }
    }

    #[test]
    fn pattern_mapping() {
        let c = cfg();
        assert_eq!(
            parse_verifier_output(&c, &raw("result TRUE", 0)),
            VerifierStatus::Verified
        );
        assert_eq!(
            parse_verifier_output(&c, &raw("FALSE", 10)),
            VerifierStatus::NonVerified
        );
        assert_eq!(
            parse_verifier_output(&c, &raw("UNKNOWN", 0)),
            VerifierStatus::Error
        );
        assert_eq!(
            parse_verifier_output(&c, &raw("%%garbage", 0)),
            VerifierStatus::Error
        );
        assert_eq!(
            parse_verifier_output(&c, &raw("TRUE FALSE", 0)),
            VerifierStatus::Error
        );
        let killed = RawRun {
            killed: true,
            stdout: "TRUE".into(),
            ..RawRun::default()
        };
        assert_eq!(parse_verifier_output(&c, &killed), VerifierStatus::Timeout);
    }

    #[test]
    fn subprocess_output_and_kill() {
        let r = run_command(
            &[
                "sh".into(),
                "-c".into(),
                "echo out; echo err >&2; exit 3".into(),
            ],
            Duration::from_secs(10),
        );
        assert_eq!(r.stdout.trim(), "out");
        assert_eq!(r.stderr.trim(), "err");
        assert_eq!(r.exit_code, Some(3));
        assert!(!r.killed);

        let r = run_command(
            &["sh".into(), "-c".into(), "sleep 30; echo late".into()],
            Duration::from_millis(200),
        );
        assert!(r.killed);
        assert!(r.elapsed < Duration::from_secs(10));

        let r = run_command(&["/nonexistent/verifier".into()], Duration::from_secs(1));
        assert!(r.spawn_error.is_some());
        assert_eq!(parse_verifier_output(&cfg(), &r), VerifierStatus::Error);
    }
}
