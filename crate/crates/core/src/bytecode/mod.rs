//! EVM bytecode decoding.
//!
//! Decoding is total: every byte string produces a [`Program`]. Truncated
//! push payloads are zero-padded on the right and unassigned bytes become
//! single-byte invalid-class instructions.

mod opcode;

pub use opcode::{OpClass, OpInfo, Opcode};

use crate::Word;
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("hex input has odd length {0}")]
    OddLength(usize),
    #[error("invalid hex character {ch:?} at offset {offset}")]
    BadChar { ch: char, offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrapKind {
    /// Designated invalid instruction or an unassigned opcode.
    InvalidTrap,
    Revert,
}

#[derive(Clone, PartialEq, Eq)]
pub struct Instruction {
    pub pc: usize,
    pub opcode: Opcode,
    /// Present iff the opcode is a `PUSHn`.
    pub push_data: Option<Word>,
}

impl Instruction {
    pub fn size(&self) -> usize {
        1 + self.opcode.push_width()
    }

    pub fn next_pc(&self) -> usize {
        self.pc + self.size()
    }

    pub fn push_value(&self) -> Option<Word> {
        self.push_data
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.push_data {
            Some(v) => write!(f, "{:>5}: {} {:#x}", self.pc, self.opcode, v),
            None => write!(f, "{:>5}: {}", self.pc, self.opcode),
        }
    }
}

impl fmt::Debug for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A decoded contract.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    code: Vec<u8>,
    instructions: Vec<Instruction>,
    jumpdests: BTreeSet<usize>,
    /// `pc -> index into instructions`, `u32::MAX` for push payload bytes.
    index: Vec<u32>,
    code_hash: String,
}

impl Program {
    pub fn code(&self) -> &[u8] {
        &self.code
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn jumpdests(&self) -> &BTreeSet<usize> {
        &self.jumpdests
    }

    pub fn is_jumpdest(&self, pc: usize) -> bool {
        self.jumpdests.contains(&pc)
    }

    /// Hex SHA-256 of the code bytes.
    pub fn code_hash(&self) -> &str {
        &self.code_hash
    }

    pub fn len(&self) -> usize {
        self.code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code.is_empty()
    }

    pub fn index_of(&self, pc: usize) -> Option<usize> {
        match self.index.get(pc) {
            Some(&i) if i != u32::MAX => Some(i as usize),
            _ => None,
        }
    }

    pub fn at(&self, pc: usize) -> Option<&Instruction> {
        self.index_of(pc).map(|i| &self.instructions[i])
    }

    /// Re-encode the instruction stream. Truncated trailing push payloads
    /// come back zero-padded.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.code.len() + 32);
        for ins in &self.instructions {
            out.push(ins.opcode.byte());
            if let Some(v) = ins.push_data {
                let width = ins.opcode.push_width();
                let bytes = v.to_be_bytes::<32>();
                out.extend_from_slice(&bytes[32 - width..]);
            }
        }
        out
    }
}

/// Parse hex text (optional `0x`, surrounding whitespace ignored) to bytes.
pub fn parse_hex(hex_text: &str) -> Result<Vec<u8>, DecodeError> {
    let text = hex_text.trim();
    let text = text
        .strip_prefix("0x")
        .or_else(|| text.strip_prefix("0X"))
        .unwrap_or(text);
    if !text.len().is_multiple_of(2) {
        return Err(DecodeError::OddLength(text.len()));
    }
    let digits = text.as_bytes();
    let mut out = Vec::with_capacity(digits.len() / 2);
    for (i, pair) in digits.chunks(2).enumerate() {
        let nibble = |k: usize| {
            let c = pair[k] as char;
            c.to_digit(16).ok_or(DecodeError::BadChar {
                ch: c,
                offset: 2 * i + k,
            })
        };
        out.push((nibble(0)? * 16 + nibble(1)?) as u8);
    }
    Ok(out)
}

pub fn decode(hex_text: &str) -> Result<Program, DecodeError> {
    Ok(decode_bytes(&parse_hex(hex_text)?))
}

pub fn decode_bytes(code: &[u8]) -> Program {
    let mut instructions = Vec::new();
    let mut jumpdests = BTreeSet::new();
    let mut index = vec![u32::MAX; code.len()];
    let mut pc = 0;
    while pc < code.len() {
        let opcode = Opcode(code[pc]);
        let width = opcode.push_width();
        let push_data = (width > 0).then(|| {
            let mut buf = [0u8; 32];
            let avail = code.len().saturating_sub(pc + 1).min(width);
            // left-align the available bytes inside the n-byte payload, the
            // missing low-order bytes stay zero
            let start = 32 - width;
            buf[start..start + avail].copy_from_slice(&code[pc + 1..pc + 1 + avail]);
            Word::from_be_bytes(buf)
        });
        if opcode == Opcode::JUMPDEST {
            jumpdests.insert(pc);
        }
        index[pc] = instructions.len() as u32;
        instructions.push(Instruction {
            pc,
            opcode,
            push_data,
        });
        pc += 1 + width;
    }
    let code_hash = hex::encode(Sha256::digest(code));
    Program {
        code: code.to_vec(),
        instructions,
        jumpdests,
        index,
        code_hash,
    }
}

pub fn classify_trap(instr: &Instruction) -> Option<TrapKind> {
    if instr.opcode.is_invalid() {
        Some(TrapKind::InvalidTrap)
    } else if instr.opcode == Opcode::REVERT {
        Some(TrapKind::Revert)
    } else {
        None
    }
}

/// Drop a trailing Solidity metadata blob.
///
/// The trailer is a CBOR map followed by its length as a big-endian `u16`.
/// Anything that does not look like that is returned unchanged.
pub fn strip_metadata(raw: &[u8]) -> &[u8] {
    if raw.len() < 2 {
        return raw;
    }
    let n = raw.len();
    let len = u16::from_be_bytes([raw[n - 2], raw[n - 1]]) as usize;
    if len < 2 || len + 2 > n {
        return raw;
    }
    let start = n - 2 - len;
    let blob = &raw[start..n - 2];
    // map with 1..=5 entries whose first key is a short text string
    let is_map = (0xa1..=0xa5).contains(&blob[0]);
    let first_key_text = (0x61..=0x77).contains(&blob[1]);
    if is_map && first_key_text {
        &raw[..start]
    } else {
        raw
    }
}
