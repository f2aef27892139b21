//! Public-function recognition from the selector dispatcher.

use super::{BlockId, Cfg, Terminator};
use crate::bytecode::{OpClass, Opcode};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct Selector(pub [u8; 4]);

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl Selector {
    pub fn hex(&self) -> String {
        hex::encode(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum FunctionKey {
    Selector(Selector),
    /// Contracts without a recognisable dispatcher are one function.
    Fallback,
}

impl fmt::Display for FunctionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionKey::Selector(s) => s.fmt(f),
            FunctionKey::Fallback => f.write_str("fallback"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionEntry {
    pub key: FunctionKey,
    pub selector: Option<Selector>,
    pub name: String,
    /// First block of the function body.
    pub entry: BlockId,
    /// Dispatcher blocks on the way to `entry`, each with the only successor
    /// this function may take.
    pub route: Vec<(BlockId, BlockId)>,
}

impl FunctionEntry {
    /// File-name friendly tag: selector hex or `fallback`.
    pub fn tag(&self) -> String {
        match self.selector {
            Some(s) => s.hex(),
            None => "fallback".into(),
        }
    }
}

/// Recognise `PUSH4 k; [DUPn]; EQ; PUSHn t; JUMPI` or
/// `DUPn; PUSH4 k; EQ; PUSHn t; JUMPI` at the end of a block.
fn selector_test(instrs: &[crate::bytecode::Instruction]) -> Option<Selector> {
    let n = instrs.len();
    if n < 4 || instrs[n - 1].opcode != Opcode::JUMPI {
        return None;
    }
    if !matches!(instrs[n - 2].opcode.class(), OpClass::Push(_))
        || instrs[n - 3].opcode != Opcode::EQ
    {
        return None;
    }
    let push4 = |i: usize| {
        let ins = &instrs[i];
        (ins.opcode == Opcode::PUSH4).then(|| {
            let v = ins.push_data.unwrap_or_default();
            let b: [u8; 32] = v.to_be_bytes();
            Selector([b[28], b[29], b[30], b[31]])
        })
    };
    if let Some(s) = push4(n - 4) {
        return Some(s);
    }
    if n >= 5 && matches!(instrs[n - 4].opcode.class(), OpClass::Dup(_)) {
        return push4(n - 5);
    }
    None
}

pub fn identify_functions(c: &Cfg) -> BTreeMap<FunctionKey, FunctionEntry> {
    let mut out = BTreeMap::new();
    let Some(entry) = c.entry else {
        return out;
    };
    let mut route: Vec<(BlockId, BlockId)> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut cur = entry;
    while seen.insert(cur) {
        let b = c.block(cur);
        match b.terminator {
            Terminator::FallThrough if b.successors.len() == 1 => {
                route.push((cur, b.successors[0]));
                cur = b.successors[0];
            }
            Terminator::Jumpi if b.successors.len() == 2 => {
                let (branch, fall) = (b.successors[0], b.successors[1]);
                if let Some(sel) = selector_test(&b.instrs) {
                    let key = FunctionKey::Selector(sel);
                    out.entry(key).or_insert_with(|| {
                        let mut r = route.clone();
                        r.push((cur, branch));
                        FunctionEntry {
                            key,
                            selector: Some(sel),
                            name: sel.to_string(),
                            entry: branch,
                            route: r,
                        }
                    });
                }
                route.push((cur, fall));
                cur = fall;
            }
            _ => break,
        }
    }
    if out.is_empty() {
        out.insert(
            FunctionKey::Fallback,
            FunctionEntry {
                key: FunctionKey::Fallback,
                selector: None,
                name: "fallback".into(),
                entry,
                route: Vec::new(),
            },
        );
    }
    out
}
