//! Rule-based representation: the stack-free intermediate form.
//!
//! Every block becomes a `blockX` rule over flattened stack variables `s_i`
//! (absolute positions from the bottom of the stack at pc 0), contract state
//! `g_i`, word-aligned memory `l_i`, call parameters `p_i` and fresh havoc
//! variables. A `JUMPI` block additionally yields a `jumpX` rule whose guard
//! is the branch condition.

mod decompile;
mod interp;
mod notes;

pub use decompile::{decompile, RbrError, MAX_PARAMS};
pub use interp::{interpret_rbr, IterFeed, NondetFeed, RbrVerdict, ReplayFeed, ZeroFeed};
pub use notes::{array_length_note, ArrayNote};

use crate::bytecode::Opcode;
use crate::cfg::BlockId;
use crate::word::{self, Word};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum VarId {
    Stack(u32),
    State(u32),
    Local(u32),
    Param(u32),
    Fresh(u32),
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarId::Stack(i) => write!(f, "s_{i}"),
            VarId::State(i) => write!(f, "g_{i}"),
            VarId::Local(i) => write!(f, "l_{i}"),
            VarId::Param(i) => write!(f, "p_{i}"),
            VarId::Fresh(i) => write!(f, "fresh_{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    SDiv,
    SMod,
    Exp,
    /// `SignExtend(b, x)`: extend `x` from byte `b`.
    SignExtend,
    Eq,
    Neq,
    Lt,
    Gt,
    Leq,
    Geq,
    Slt,
    Sgt,
    And,
    Or,
}

impl BinOp {
    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Eq
                | BinOp::Neq
                | BinOp::Lt
                | BinOp::Gt
                | BinOp::Leq
                | BinOp::Geq
                | BinOp::Slt
                | BinOp::Sgt
        )
    }

    pub fn is_signed(self) -> bool {
        matches!(
            self,
            BinOp::SDiv | BinOp::SMod | BinOp::SignExtend | BinOp::Slt | BinOp::Sgt
        )
    }

    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "mod",
            BinOp::SDiv => "sdiv",
            BinOp::SMod => "smod",
            BinOp::Exp => "^",
            BinOp::SignExtend => "signextend",
            BinOp::Eq => "eq",
            BinOp::Neq => "neq",
            BinOp::Lt => "lt",
            BinOp::Gt => "gt",
            BinOp::Leq => "leq",
            BinOp::Geq => "geq",
            BinOp::Slt => "slt",
            BinOp::Sgt => "sgt",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    pub fn apply(self, a: Word, b: Word) -> Word {
        let t = word::from_bool;
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Div => word::div(a, b),
            BinOp::Mod => word::rem(a, b),
            BinOp::SDiv => word::sdiv(a, b),
            BinOp::SMod => word::smod(a, b),
            BinOp::Exp => word::exp(a, b),
            BinOp::SignExtend => word::signextend(a, b),
            BinOp::Eq => t(a == b),
            BinOp::Neq => t(a != b),
            BinOp::Lt => t(a < b),
            BinOp::Gt => t(a > b),
            BinOp::Leq => t(a <= b),
            BinOp::Geq => t(a >= b),
            BinOp::Slt => t(word::slt(a, b)),
            BinOp::Sgt => t(word::sgt(a, b)),
            BinOp::And => t(!a.is_zero() && !b.is_zero()),
            BinOp::Or => t(!a.is_zero() || !b.is_zero()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TernOp {
    AddMod,
    MulMod,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Var(VarId),
    Const(Word),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Tern(TernOp, Box<Expr>, Box<Expr>, Box<Expr>),
    /// Logical negation.
    Not(Box<Expr>),
}

impl Expr {
    pub fn var(v: VarId) -> Self {
        Expr::Var(v)
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Self {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn negate(e: Expr) -> Self {
        Expr::Not(Box::new(e))
    }

    /// Evaluate with EVM semantics: every operation is reduced mod 2^256.
    pub fn eval(&self, env: &dyn Fn(VarId) -> Word) -> Word {
        match self {
            Expr::Var(v) => env(*v),
            Expr::Const(c) => *c,
            Expr::Bin(op, a, b) => op.apply(a.eval(env), b.eval(env)),
            Expr::Tern(op, a, b, n) => {
                let (a, b, n) = (a.eval(env), b.eval(env), n.eval(env));
                match op {
                    TernOp::AddMod => word::addmod(a, b, n),
                    TernOp::MulMod => word::mulmod(a, b, n),
                }
            }
            Expr::Not(e) => word::from_bool(e.eval(env).is_zero()),
        }
    }

    pub fn vars(&self, out: &mut BTreeSet<VarId>) {
        match self {
            Expr::Var(v) => {
                out.insert(*v);
            }
            Expr::Const(_) => {}
            Expr::Bin(_, a, b) => {
                a.vars(out);
                b.vars(out);
            }
            Expr::Tern(_, a, b, c) => {
                a.vars(out);
                b.vars(out);
                c.vars(out);
            }
            Expr::Not(e) => e.vars(out),
        }
    }

    /// Visit every constant in the tree.
    pub fn constants(&self, out: &mut Vec<Word>) {
        match self {
            Expr::Var(_) => {}
            Expr::Const(c) => out.push(*c),
            Expr::Bin(_, a, b) => {
                a.constants(out);
                b.constants(out);
            }
            Expr::Tern(_, a, b, c) => {
                a.constants(out);
                b.constants(out);
                c.constants(out);
            }
            Expr::Not(e) => e.constants(out),
        }
    }
}

fn fmt_const(c: &Word, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if *c < Word::from(1u64 << 32) {
        write!(f, "{c}")
    } else {
        write!(f, "{c:#x}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(v) => v.fmt(f),
            Expr::Const(c) => fmt_const(c, f),
            Expr::Bin(op, a, b) => match op {
                BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Mod | BinOp::Exp => {
                    let paren = |e: &Expr| matches!(e, Expr::Bin(..) | Expr::Tern(..));
                    if paren(a) {
                        write!(f, "({a})")?;
                    } else {
                        write!(f, "{a}")?;
                    }
                    write!(f, " {} ", op.name())?;
                    if paren(b) {
                        write!(f, "({b})")
                    } else {
                        write!(f, "{b}")
                    }
                }
                _ => write!(f, "{}({a}, {b})", op.name()),
            },
            Expr::Tern(op, a, b, n) => {
                let name = match op {
                    TernOp::AddMod => "addmod",
                    TernOp::MulMod => "mulmod",
                };
                write!(f, "{name}({a}, {b}, {n})")
            }
            Expr::Not(e) => write!(f, "not({e})"),
        }
    }
}

/// What a nondeterministic value stands for. `nth` numbers the nondet
/// definitions produced by one instruction so a replay can group them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NondetOrigin {
    pub pc: usize,
    pub nth: u32,
    pub kind: NondetKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NondetKind {
    /// The value pushed by an abstracted opcode.
    Result(Opcode),
    /// Storage slot overwritten by a store to an unknown slot.
    State(Word),
    /// Memory word (index) clobbered by an untracked write.
    Local(Word),
}

impl fmt::Display for NondetOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NondetKind::Result(op) => write!(f, "{} @{}", op, self.pc),
            NondetKind::State(slot) => write!(f, "havoc storage[{slot:#x}] @{}", self.pc),
            NondetKind::Local(w) => {
                write!(f, "havoc memory[{:#x}] @{}", w * Word::from(32u8), self.pc)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RbrInstr {
    Assign(VarId, Expr),
    Nondet(VarId, NondetOrigin),
    Invalid,
    Revert,
    Stop,
}

impl RbrInstr {
    pub fn is_terminal(&self) -> bool {
        matches!(self, RbrInstr::Invalid | RbrInstr::Revert | RbrInstr::Stop)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Rule(String),
    /// Edge cut from this function's region, or no continuation.
    Halt,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Rule(r) => write!(f, "call({r})"),
            Target::Halt => f.write_str("halt"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Block,
    Jump,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Continuation {
    Next(Target),
    Branch {
        guard: Expr,
        then_call: Target,
        else_call: Target,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub name: String,
    pub kind: RuleKind,
    pub block: BlockId,
    pub entry_depth: usize,
    pub body: Vec<RbrInstr>,
    pub cont: Continuation,
}

impl Rule {
    pub fn targets(&self) -> Vec<&Target> {
        match &self.cont {
            Continuation::Next(t) => vec![t],
            Continuation::Branch {
                then_call,
                else_call,
                ..
            } => vec![then_call, else_call],
        }
    }

    pub fn successors(&self) -> impl Iterator<Item = &str> {
        self.targets().into_iter().filter_map(|t| match t {
            Target::Rule(r) => Some(r.as_str()),
            Target::Halt => None,
        })
    }

    pub fn has_invalid(&self) -> bool {
        self.body.contains(&RbrInstr::Invalid)
    }

    pub fn has_nondet(&self) -> bool {
        self.body.iter().any(|i| matches!(i, RbrInstr::Nondet(..)))
    }
}

pub fn block_rule_name(id: BlockId) -> String {
    format!("block{id}")
}

pub fn jump_rule_name(id: BlockId) -> String {
    format!("jump{id}")
}

#[derive(Debug, Clone)]
pub struct RbrProgram {
    pub function: String,
    pub entry: String,
    pub rules: Vec<Rule>,
    index: HashMap<String, usize>,
    /// `g_i` holds storage slot `state_slots[i]`.
    pub state_slots: Vec<Word>,
    /// `l_i` holds memory word `local_words[i]` (byte address / 32).
    pub local_words: Vec<Word>,
    pub params: BTreeSet<u32>,
    pub fresh: u32,
    pub stack_width: usize,
    /// The region contains a jump whose target could not be resolved.
    pub has_unresolved: bool,
}

impl RbrProgram {
    pub(crate) fn new(function: String, entry: String, rules: Vec<Rule>) -> Self {
        let index = rules
            .iter()
            .enumerate()
            .map(|(i, r)| (r.name.clone(), i))
            .collect();
        RbrProgram {
            function,
            entry,
            rules,
            index,
            state_slots: Vec::new(),
            local_words: Vec::new(),
            params: BTreeSet::new(),
            fresh: 0,
            stack_width: 0,
            has_unresolved: false,
        }
    }

    pub fn rule(&self, name: &str) -> Option<&Rule> {
        self.index.get(name).map(|&i| &self.rules[i])
    }

    pub fn state_vars(&self) -> impl Iterator<Item = VarId> {
        (0..self.state_slots.len() as u32).map(VarId::State)
    }

    pub fn local_vars(&self) -> impl Iterator<Item = VarId> {
        (0..self.local_words.len() as u32).map(VarId::Local)
    }

    pub fn param_vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.params.iter().map(|&i| VarId::Param(i))
    }

    /// Every variable mentioned anywhere, in `VarId` order.
    pub fn all_vars(&self) -> BTreeSet<VarId> {
        let mut out = BTreeSet::new();
        out.extend(self.state_vars());
        out.extend(self.local_vars());
        out.extend(self.param_vars());
        for r in &self.rules {
            for i in &r.body {
                match i {
                    RbrInstr::Assign(v, e) => {
                        out.insert(*v);
                        e.vars(&mut out);
                    }
                    RbrInstr::Nondet(v, _) => {
                        out.insert(*v);
                    }
                    _ => {}
                }
            }
            if let Continuation::Branch { guard, .. } = &r.cont {
                guard.vars(&mut out);
            }
        }
        out
    }

    /// Rules reachable from the entry.
    pub fn reachable(&self) -> BTreeSet<&str> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.entry.as_str()];
        while let Some(name) = stack.pop() {
            if !seen.insert(name) {
                continue;
            }
            if let Some(r) = self.rule(name) {
                stack.extend(r.successors());
            }
        }
        seen
    }

    /// No abstraction on any reachable rule: no nondet definitions and
    /// every jump resolved. Such programs must agree exactly with `exec`.
    pub fn is_abstraction_free(&self) -> bool {
        !self.has_unresolved
            && self
                .reachable()
                .iter()
                .all(|r| !self.rule(r).is_some_and(Rule::has_nondet))
    }

    /// Initial values of `g_i` and `p_i` for a concrete call.
    pub fn inputs_for(
        &self,
        calldata: &[u8],
        storage: &crate::exec::Storage,
    ) -> BTreeMap<VarId, Word> {
        let mut m = BTreeMap::new();
        for (i, slot) in self.state_slots.iter().enumerate() {
            m.insert(
                VarId::State(i as u32),
                storage.get(slot).copied().unwrap_or_default(),
            );
        }
        for &i in &self.params {
            m.insert(
                VarId::Param(i),
                word::word_at(calldata, Word::from(4 + 32 * i as u64)),
            );
        }
        m
    }

    /// Textual dump, one rule per paragraph.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "// function {} entry {}", self.function, self.entry);
        for (i, slot) in self.state_slots.iter().enumerate() {
            let _ = writeln!(s, "// g_{i} = storage[{slot:#x}]");
        }
        for (i, w) in self.local_words.iter().enumerate() {
            let _ = writeln!(s, "// l_{i} = memory[{:#x}]", *w * Word::from(32u8));
        }
        for &i in &self.params {
            let _ = writeln!(s, "// p_{i} = calldata[{}]", 4 + 32 * i);
        }
        for r in &self.rules {
            s.push('\n');
            let _ = writeln!(s, "{}:", r.name);
            for i in &r.body {
                let _ = match i {
                    RbrInstr::Assign(v, e) => writeln!(s, "    {v} = {e}"),
                    RbrInstr::Nondet(v, o) => writeln!(s, "    {v} = nondet  // {o}"),
                    RbrInstr::Invalid => writeln!(s, "    invalid"),
                    RbrInstr::Revert => writeln!(s, "    revert"),
                    RbrInstr::Stop => writeln!(s, "    stop"),
                };
            }
            let _ = match &r.cont {
                Continuation::Next(Target::Halt) => Ok(()),
                Continuation::Next(t) => writeln!(s, "    {t}"),
                Continuation::Branch {
                    guard,
                    then_call,
                    else_call,
                } => writeln!(s, "    {guard} -> {then_call}\n    else -> {else_call}"),
            };
        }
        s
    }
}

#[cfg(test)]
mod tests;
