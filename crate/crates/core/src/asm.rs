//! A tiny assembler for hand-written EVM fixtures. Instructions are separated
//! by whitespace, so several may share a line.
//!
//! ```text
//! ; comment
//! start:              ; label, resolves to the next instruction's pc
//!     PUSH1 0x80
//!     PUSH @loop      ; PUSH2 with the label address
//!     PUSH 1000       ; narrowest PUSHn that holds the value
//!     .byte 0x0c      ; raw byte
//! loop: JUMPDEST
//! ```

use crate::bytecode::{OpClass, Opcode};
use crate::Word;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AsmError {
    #[error("line {line}: unknown mnemonic {name:?}")]
    UnknownMnemonic { line: usize, name: String },
    #[error("line {line}: bad operand {text:?}")]
    BadOperand { line: usize, text: String },
    #[error("line {line}: value does not fit in {width} bytes")]
    Overflow { line: usize, width: usize },
    #[error("undefined label {0:?}")]
    UndefinedLabel(String),
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
}

enum Operand {
    Value(Word),
    Label(String),
}

struct Item {
    line: usize,
    opcode: Option<Opcode>,
    width: usize,
    operand: Option<Operand>,
    raw: Option<u8>,
}

fn parse_word(text: &str) -> Option<Word> {
    if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        Word::from_str_radix(hex, 16).ok()
    } else {
        Word::from_str_radix(text, 10).ok()
    }
}

fn byte_len(v: Word) -> usize {
    (v.bit_len().div_ceil(8)).max(1)
}

pub fn assemble(source: &str) -> Result<Vec<u8>, AsmError> {
    let mut items = Vec::new();
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut pc = 0usize;

    for (n, raw_line) in source.lines().enumerate() {
        let line = n + 1;
        let text = raw_line.split(';').next().unwrap_or("");
        let text = text.split("//").next().unwrap_or("");
        let mut tokens = text.split_whitespace();
        let bad = |t: &str| AsmError::BadOperand {
            line,
            text: t.to_string(),
        };
        while let Some(tok) = tokens.next() {
            if let Some(name) = tok.strip_suffix(':') {
                if name.is_empty() {
                    return Err(bad(tok));
                }
                if labels.insert(name.to_string(), pc).is_some() {
                    return Err(AsmError::DuplicateLabel(name.to_string()));
                }
                continue;
            }
            if tok == ".byte" {
                let t = tokens.next().ok_or_else(|| bad(""))?;
                let v = parse_word(t)
                    .filter(|v| *v < Word::from(256))
                    .ok_or_else(|| bad(t))?;
                items.push(Item {
                    line,
                    opcode: None,
                    width: 0,
                    operand: None,
                    raw: Some(v.to::<u8>()),
                });
                pc += 1;
                continue;
            }
            let upper = tok.to_ascii_uppercase();
            if upper == "PUSH" {
                let t = tokens.next().ok_or_else(|| bad(""))?;
                let (operand, width) = if let Some(label) = t.strip_prefix('@') {
                    (Operand::Label(label.to_string()), 2)
                } else {
                    let v = parse_word(t).ok_or_else(|| bad(t))?;
                    (Operand::Value(v), byte_len(v))
                };
                items.push(Item {
                    line,
                    opcode: Some(Opcode(0x5f + width as u8)),
                    width,
                    operand: Some(operand),
                    raw: None,
                });
                pc += 1 + width;
                continue;
            }
            let opcode = Opcode::from_mnemonic(&upper).ok_or(AsmError::UnknownMnemonic {
                line,
                name: tok.to_string(),
            })?;
            let width = match opcode.class() {
                OpClass::Push(w) => w as usize,
                _ => 0,
            };
            let operand = if width > 0 {
                let t = tokens.next().ok_or_else(|| bad(""))?;
                Some(match t.strip_prefix('@') {
                    Some(label) => Operand::Label(label.to_string()),
                    None => Operand::Value(parse_word(t).ok_or_else(|| bad(t))?),
                })
            } else {
                None
            };
            items.push(Item {
                line,
                opcode: Some(opcode),
                width,
                operand,
                raw: None,
            });
            pc += 1 + width;
        }
    }

    let mut out = Vec::with_capacity(pc);
    for item in items {
        if let Some(b) = item.raw {
            out.push(b);
            continue;
        }
        let opcode = item.opcode.expect("instruction item");
        out.push(opcode.byte());
        if let Some(operand) = item.operand {
            let value = match operand {
                Operand::Value(v) => v,
                Operand::Label(name) => Word::from(
                    *labels
                        .get(&name)
                        .ok_or_else(|| AsmError::UndefinedLabel(name.clone()))?,
                ),
            };
            if byte_len(value) > item.width {
                return Err(AsmError::Overflow {
                    line: item.line,
                    width: item.width,
                });
            }
            let bytes = value.to_be_bytes::<32>();
            out.extend_from_slice(&bytes[32 - item.width..]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_pushes() {
        let src = "
            PUSH @end     ; 3 bytes
            JUMP
            end: JUMPDEST
            STOP
        ";
        assert_eq!(
            assemble(src).unwrap(),
            vec![0x61, 0x00, 0x04, 0x56, 0x5b, 0x00]
        );
    }

    #[test]
    fn narrowest_push() {
        assert_eq!(
            assemble("PUSH 1\nPUSH 0x1234").unwrap(),
            vec![0x60, 1, 0x61, 0x12, 0x34]
        );
        assert_eq!(
            assemble("PUSH4 0xcafebabe").unwrap(),
            vec![0x63, 0xca, 0xfe, 0xba, 0xbe]
        );
        assert_eq!(assemble("PUSH2 7").unwrap(), vec![0x61, 0, 7]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            assemble("FOO"),
            Err(AsmError::UnknownMnemonic { .. })
        ));
        assert!(matches!(
            assemble("PUSH1 0x100"),
            Err(AsmError::Overflow { .. })
        ));
        assert!(matches!(
            assemble("PUSH @nope"),
            Err(AsmError::UndefinedLabel(_))
        ));
        assert!(matches!(
            assemble("a:\na:"),
            Err(AsmError::DuplicateLabel(_))
        ));
    }

    #[test]
    fn raw_bytes() {
        assert_eq!(assemble(".byte 0x0c\nINVALID").unwrap(), vec![0x0c, 0xfe]);
    }
}
