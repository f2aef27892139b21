//! Declarative verifier configuration.

use std::path::Path;

use regex::Regex;
use serde::Deserialize;

pub const DEFAULT_TIMEOUT_SECONDS: u64 = 60;
pub const CONFIG_ENV: &str = "EVMSAFE_VERIFIER_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid verifier config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("verifier {name}: timeout must be positive")]
    ZeroTimeout { name: String },
    #[error("verifier {name}: bad {which} pattern: {source}")]
    Pattern {
        name: String,
        which: &'static str,
        source: regex::Error,
    },
    #[error("verifier {name}: {a} and {b} patterns overlap")]
    Overlap {
        name: String,
        a: &'static str,
        b: &'static str,
    },
    #[error("verifier {name}: empty command")]
    EmptyCommand { name: String },
    #[error("verifier {name}: command has no {{input}} placeholder")]
    NoInput { name: String },
    #[error("config defines no verifier")]
    NoVerifier,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CommandSpec {
    Argv(Vec<String>),
    Line(String),
}

#[derive(Debug, Deserialize)]
struct PatternSpec {
    #[serde(rename = "true")]
    t: String,
    #[serde(rename = "false")]
    f: String,
    unknown: String,
}

#[derive(Debug, Deserialize)]
struct VerifierSpec {
    name: String,
    command: CommandSpec,
    timeout_seconds: Option<u64>,
    patterns: PatternSpec,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum FileSpec {
    Many { verifier: Vec<VerifierSpec> },
    One(VerifierSpec),
}

/// One external verifier: argv template, wall-clock limit and result patterns.
#[derive(Debug, Clone)]
pub struct VerifierConfig {
    pub name: String,
    /// Argument vector; `{input}` and `{property}` are substituted per run.
    pub command: Vec<String>,
    pub timeout_seconds: u64,
    pub true_pattern: Regex,
    pub false_pattern: Regex,
    pub unknown_pattern: Regex,
}

impl VerifierConfig {
    pub fn new(
        name: &str,
        command: Vec<String>,
        timeout_seconds: u64,
        patterns: [&str; 3],
    ) -> Result<Self, ConfigError> {
        let compile = |which, src: &str| {
            Regex::new(src).map_err(|source| ConfigError::Pattern {
                name: name.to_string(),
                which,
                source,
            })
        };
        let cfg = VerifierConfig {
            name: name.to_string(),
            true_pattern: compile("true", patterns[0])?,
            false_pattern: compile("false", patterns[1])?,
            unknown_pattern: compile("unknown", patterns[2])?,
            command,
            timeout_seconds,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let name = self.name.clone();
        if self.timeout_seconds == 0 {
            return Err(ConfigError::ZeroTimeout { name });
        }
        if self.command.is_empty() {
            return Err(ConfigError::EmptyCommand { name });
        }
        if !self.command.iter().any(|a| a.contains("{input}")) {
            return Err(ConfigError::NoInput { name });
        }
        // regex disjointness is undecidable in general; reject identical
        // patterns and patterns that match another pattern's source text
        let pats = self.patterns();
        for (i, (a, ra)) in pats.iter().enumerate() {
            for (b, rb) in pats.iter().skip(i + 1) {
                if ra.as_str() == rb.as_str()
                    || ra.is_match(rb.as_str())
                    || rb.is_match(ra.as_str())
                {
                    return Err(ConfigError::Overlap { name, a, b });
                }
            }
        }
        Ok(())
    }

    pub fn patterns(&self) -> [(&'static str, &Regex); 3] {
        [
            ("true", &self.true_pattern),
            ("false", &self.false_pattern),
            ("unknown", &self.unknown_pattern),
        ]
    }

    /// The argv for one run with placeholders filled in.
    pub fn argv(&self, input: &Path, property: &Path) -> Vec<String> {
        let input = input.to_string_lossy();
        let property = property.to_string_lossy();
        self.command
            .iter()
            .map(|a| {
                a.replace("{input}", &input)
                    .replace("{property}", &property)
            })
            .collect()
    }

    fn from_spec(s: VerifierSpec) -> Result<Self, ConfigError> {
        let command = match s.command {
            CommandSpec::Argv(v) => v,
            CommandSpec::Line(l) => l.split_whitespace().map(str::to_string).collect(),
        };
        VerifierConfig::new(
            &s.name,
            command,
            s.timeout_seconds.unwrap_or(DEFAULT_TIMEOUT_SECONDS),
            [&s.patterns.t, &s.patterns.f, &s.patterns.unknown],
        )
    }
}

/// Parses a config file holding one verifier or a `[[verifier]]` list.
pub fn parse_config(text: &str) -> Result<Vec<VerifierConfig>, ConfigError> {
    let specs = match toml::from_str::<FileSpec>(text)? {
        FileSpec::Many { verifier } => verifier,
        FileSpec::One(v) => vec![v],
    };
    if specs.is_empty() {
        return Err(ConfigError::NoVerifier);
    }
    specs.into_iter().map(VerifierConfig::from_spec).collect()
}

pub fn load_config(path: &Path) -> Result<Vec<VerifierConfig>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"
name = "cpa"
command = ["cpa.sh", "-spec", "{property}", "{input}"]
[patterns]
true = "Verification result: TRUE"
false = "Verification result: FALSE"
unknown = "Verification result: UNKNOWN"
"#;

    #[test]
    fn single_verifier_defaults() {
        let v = parse_config(ONE).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].timeout_seconds, 60);
        let argv = v[0].argv(Path::new("a.c"), Path::new("p.prp"));
        assert_eq!(argv, ["cpa.sh", "-spec", "p.prp", "a.c"]);
    }

    #[test]
    fn verifier_list_and_command_line() {
        let text = r#"
[[verifier]]
name = "a"
command = "a {input}"
timeout_seconds = 5
[verifier.patterns]
true = "^TRUE"
false = "^FALSE"
unknown = "^UNKNOWN"

[[verifier]]
name = "b"
command = ["b", "{input}"]
[verifier.patterns]
true = "safe"
false = "bug"
unknown = "dunno"
"#;
        let v = parse_config(text).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].command, ["a", "{input}"]);
        assert_eq!(v[0].timeout_seconds, 5);
        assert_eq!(v[1].name, "b");
    }

    #[test]
    fn rejects_bad_configs() {
        let zero = ONE.replace("[patterns]", "timeout_seconds = 0\n[patterns]");
        assert!(matches!(
            parse_config(&zero),
            Err(ConfigError::ZeroTimeout { .. })
        ));
        let overlap = ONE.replace("Verification result: FALSE", "Verification result");
        assert!(matches!(
            parse_config(&overlap),
            Err(ConfigError::Overlap { .. })
        ));
        let noinput = ONE.replace("\"{input}\"", "\"x\"");
        assert!(matches!(
            parse_config(&noinput),
            Err(ConfigError::NoInput { .. })
        ));
        let badre = ONE.replace("Verification result: UNKNOWN", "(");
        assert!(matches!(
            parse_config(&badre),
            Err(ConfigError::Pattern { .. })
        ));
        assert!(parse_config("name = 1").is_err());
    }
}
