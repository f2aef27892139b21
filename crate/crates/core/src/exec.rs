//! Concrete EVM interpreter.
//!
//! Serves as the ground-truth oracle for the translation pipeline. Gas is not
//! modeled; execution is bounded by a step budget instead. The environment is
//! fixed: zero call value, constant block data, external calls succeed
//! immediately and return nothing.

use crate::bytecode::{Instruction, OpClass, Opcode, Program};
use crate::cfg::FunctionEntry;
use crate::word::{self, Word};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use thiserror::Error;

pub const MAX_STACK: usize = 1024;
/// Memory growth beyond this many bytes is treated as resource exhaustion.
pub const MEMORY_LIMIT: usize = 1 << 22;
pub const DEFAULT_BUDGET: usize = 100_000;

pub mod env {
    //! Values returned by environment opcodes.
    pub const ADDRESS: u64 = 0xa0a0;
    pub const CALLER: u64 = 0xc0c0;
    pub const ORIGIN: u64 = 0xc0c0;
    pub const CALLVALUE: u64 = 0;
    pub const BALANCE: u64 = 0;
    pub const GASPRICE: u64 = 1;
    pub const EXTCODESIZE: u64 = 1;
    pub const EXTCODEHASH: u64 = 0;
    pub const RETURNDATASIZE: u64 = 0;
    pub const BLOCKHASH: u64 = 0;
    pub const COINBASE: u64 = 0;
    pub const TIMESTAMP: u64 = 1_500_000_000;
    pub const NUMBER: u64 = 5_000_000;
    pub const DIFFICULTY: u64 = 1;
    pub const GASLIMIT: u64 = 8_000_000;
    pub const GAS: u64 = 1_000_000;
    pub const CREATED: u64 = 0xcee0;
    pub const CALL_SUCCESS: u64 = 1;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Verdict {
    Stop,
    Return,
    Revert,
    InvalidTrap,
    OutOfBudget,
    StackViolation,
}

impl Verdict {
    pub fn is_invalid(self) -> bool {
        self == Verdict::InvalidTrap
    }
}

pub type Storage = BTreeMap<Word, Word>;

#[derive(Debug, Clone, Default)]
pub struct MachineState {
    pub stack: Vec<Word>,
    pub memory: Vec<u8>,
    pub storage: Storage,
    pub calldata: Vec<u8>,
    pub pc: usize,
    pub steps: usize,
    pub step_budget: usize,
}

impl MachineState {
    pub fn sload(&self, slot: Word) -> Word {
        self.storage.get(&slot).copied().unwrap_or(Word::ZERO)
    }

    /// Word `k` of memory (bytes `32k..32k+32`), zero past the end.
    pub fn memory_word(&self, k: usize) -> Word {
        word::word_at(&self.memory, Word::from(k * 32))
    }

    pub fn stack_top(&self) -> Option<Word> {
        self.stack.last().copied()
    }
}

/// Hooks invoked around every executed instruction.
pub trait Observer {
    fn before(&mut self, _instr: &Instruction, _state: &MachineState) {}
    fn after(&mut self, _instr: &Instruction, _state: &MachineState) {}
}

impl Observer for () {}

/// Records every executed pc.
#[derive(Debug, Default)]
pub struct PcTrace(pub Vec<usize>);

impl Observer for PcTrace {
    fn before(&mut self, instr: &Instruction, _state: &MachineState) {
        self.0.push(instr.pc);
    }
}

/// Writes pc, opcode and the top four stack words per step.
pub struct Tracer<W: std::io::Write>(pub W);

impl<W: std::io::Write> Observer for Tracer<W> {
    fn before(&mut self, instr: &Instruction, state: &MachineState) {
        let top: Vec<String> = state
            .stack
            .iter()
            .rev()
            .take(4)
            .map(|v| format!("{v:#x}"))
            .collect();
        let _ = writeln!(
            self.0,
            "{:>6} {:<14} [{}]",
            instr.pc,
            instr.opcode.to_string(),
            top.join(", ")
        );
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub verdict: Verdict,
    pub state: MachineState,
    /// Bytes handed back by `RETURN` or `REVERT`.
    pub output: Vec<u8>,
}

pub fn run_evm(p: &Program, calldata: &[u8], storage0: &Storage, budget: usize) -> Verdict {
    execute(p, calldata, storage0, budget, &mut ()).verdict
}

enum Step {
    Continue,
    Halt(Verdict),
}

struct Machine<'a> {
    program: &'a Program,
    state: MachineState,
    output: Vec<u8>,
}

macro_rules! pop {
    ($m:expr) => {
        match $m.state.stack.pop() {
            Some(v) => v,
            None => return Step::Halt(Verdict::StackViolation),
        }
    };
}

macro_rules! push {
    ($m:expr, $v:expr) => {{
        if $m.state.stack.len() >= MAX_STACK {
            return Step::Halt(Verdict::StackViolation);
        }
        $m.state.stack.push($v);
    }};
}

fn small(v: u64) -> Word {
    Word::from(v)
}

impl Machine<'_> {
    /// Ensure `offset..offset+size` is addressable; `None` means the range is
    /// out of the modeled memory.
    fn touch(&mut self, offset: Word, size: Word) -> Option<(usize, usize)> {
        if size.is_zero() {
            return Some((0, 0));
        }
        let off = word::as_u64(offset)? as usize;
        let len = word::as_u64(size)? as usize;
        let end = off.checked_add(len)?;
        if end > MEMORY_LIMIT {
            return None;
        }
        let rounded = end.div_ceil(32) * 32;
        if self.state.memory.len() < rounded {
            self.state.memory.resize(rounded, 0);
        }
        Some((off, len))
    }

    fn copy_into_memory(&mut self, dest: Word, src: Word, size: Word, data: &[u8]) -> bool {
        let Some((d, len)) = self.touch(dest, size) else {
            return false;
        };
        for i in 0..len {
            let byte = word::as_u64(src)
                .and_then(|s| (s as usize).checked_add(i))
                .and_then(|s| data.get(s).copied())
                .unwrap_or(0);
            self.state.memory[d + i] = byte;
        }
        true
    }

    fn step(&mut self, ins: &Instruction) -> Step {
        let op = ins.opcode;
        let mut next = ins.next_pc();
        match op.class() {
            OpClass::Push(_) => push!(self, ins.push_data.unwrap_or_default()),
            OpClass::Dup(n) => {
                let n = n as usize;
                let len = self.state.stack.len();
                if len < n {
                    return Step::Halt(Verdict::StackViolation);
                }
                let v = self.state.stack[len - n];
                push!(self, v);
            }
            OpClass::Swap(n) => {
                let n = n as usize;
                let len = self.state.stack.len();
                if len < n + 1 {
                    return Step::Halt(Verdict::StackViolation);
                }
                self.state.stack.swap(len - 1, len - 1 - n);
            }
            OpClass::Log => {
                if self.state.stack.len() < op.pops() {
                    return Step::Halt(Verdict::StackViolation);
                }
                let offset = pop!(self);
                let size = pop!(self);
                for _ in 2..op.pops() {
                    pop!(self);
                }
                if self.touch(offset, size).is_none() {
                    return Step::Halt(Verdict::OutOfBudget);
                }
            }
            OpClass::Invalid => return Step::Halt(Verdict::InvalidTrap),
            _ => {
                if self.state.stack.len() < op.pops() {
                    return Step::Halt(Verdict::StackViolation);
                }
                match self.simple(op, ins, &mut next) {
                    Step::Continue => {}
                    halt => return halt,
                }
            }
        }
        self.state.pc = next;
        Step::Continue
    }

    fn simple(&mut self, op: Opcode, ins: &Instruction, next: &mut usize) -> Step {
        macro_rules! bin {
            ($f:expr) => {{
                let a = pop!(self);
                let b = pop!(self);
                push!(self, $f(a, b));
            }};
        }
        match op {
            Opcode::STOP => return Step::Halt(Verdict::Stop),
            Opcode::ADD => bin!(|a: Word, b| a.wrapping_add(b)),
            Opcode::MUL => bin!(|a: Word, b| a.wrapping_mul(b)),
            Opcode::SUB => bin!(|a: Word, b| a.wrapping_sub(b)),
            Opcode::DIV => bin!(word::div),
            Opcode::SDIV => bin!(word::sdiv),
            Opcode::MOD => bin!(word::rem),
            Opcode::SMOD => bin!(word::smod),
            Opcode::ADDMOD | Opcode::MULMOD => {
                let a = pop!(self);
                let b = pop!(self);
                let n = pop!(self);
                let r = if op == Opcode::ADDMOD {
                    word::addmod(a, b, n)
                } else {
                    word::mulmod(a, b, n)
                };
                push!(self, r);
            }
            Opcode::EXP => bin!(word::exp),
            Opcode::SIGNEXTEND => bin!(word::signextend),
            Opcode::LT => bin!(|a: Word, b: Word| word::from_bool(a < b)),
            Opcode::GT => bin!(|a: Word, b: Word| word::from_bool(a > b)),
            Opcode::SLT => bin!(|a, b| word::from_bool(word::slt(a, b))),
            Opcode::SGT => bin!(|a, b| word::from_bool(word::sgt(a, b))),
            Opcode::EQ => bin!(|a: Word, b: Word| word::from_bool(a == b)),
            Opcode::ISZERO => {
                let a = pop!(self);
                push!(self, word::from_bool(a.is_zero()));
            }
            Opcode::AND => bin!(|a: Word, b| a & b),
            Opcode::OR => bin!(|a: Word, b| a | b),
            Opcode::XOR => bin!(|a: Word, b| a ^ b),
            Opcode::NOT => {
                let a = pop!(self);
                push!(self, !a);
            }
            Opcode::BYTE => bin!(word::byte),
            Opcode::SHL => bin!(word::shl),
            Opcode::SHR => bin!(word::shr),
            Opcode::SAR => bin!(word::sar),
            Opcode::SHA3 => {
                let offset = pop!(self);
                let size = pop!(self);
                let Some((o, n)) = self.touch(offset, size) else {
                    return Step::Halt(Verdict::OutOfBudget);
                };
                let digest = Sha256::digest(&self.state.memory[o..o + n]);
                let mut bytes = [0u8; 32];
                bytes.copy_from_slice(&digest);
                push!(self, Word::from_be_bytes(bytes));
            }
            Opcode::ADDRESS => push!(self, small(env::ADDRESS)),
            Opcode::BALANCE => {
                pop!(self);
                push!(self, small(env::BALANCE));
            }
            Opcode::ORIGIN => push!(self, small(env::ORIGIN)),
            Opcode::CALLER => push!(self, small(env::CALLER)),
            Opcode::CALLVALUE => push!(self, small(env::CALLVALUE)),
            Opcode::CALLDATALOAD => {
                let off = pop!(self);
                push!(self, word::word_at(&self.state.calldata, off));
            }
            Opcode::CALLDATASIZE => push!(self, Word::from(self.state.calldata.len())),
            Opcode::CALLDATACOPY | Opcode::CODECOPY | Opcode::RETURNDATACOPY => {
                let dest = pop!(self);
                let src = pop!(self);
                let size = pop!(self);
                let data = match op {
                    Opcode::CALLDATACOPY => self.state.calldata.clone(),
                    Opcode::CODECOPY => self.program.code().to_vec(),
                    _ => Vec::new(),
                };
                if !self.copy_into_memory(dest, src, size, &data) {
                    return Step::Halt(Verdict::OutOfBudget);
                }
            }
            Opcode::CODESIZE => push!(self, Word::from(self.program.len())),
            Opcode::GASPRICE => push!(self, small(env::GASPRICE)),
            Opcode::EXTCODESIZE => {
                pop!(self);
                push!(self, small(env::EXTCODESIZE));
            }
            Opcode::EXTCODECOPY => {
                pop!(self);
                let dest = pop!(self);
                let src = pop!(self);
                let size = pop!(self);
                if !self.copy_into_memory(dest, src, size, &[]) {
                    return Step::Halt(Verdict::OutOfBudget);
                }
            }
            Opcode::RETURNDATASIZE => push!(self, small(env::RETURNDATASIZE)),
            Opcode::EXTCODEHASH => {
                pop!(self);
                push!(self, small(env::EXTCODEHASH));
            }
            Opcode::BLOCKHASH => {
                pop!(self);
                push!(self, small(env::BLOCKHASH));
            }
            Opcode::COINBASE => push!(self, small(env::COINBASE)),
            Opcode::TIMESTAMP => push!(self, small(env::TIMESTAMP)),
            Opcode::NUMBER => push!(self, small(env::NUMBER)),
            Opcode::DIFFICULTY => push!(self, small(env::DIFFICULTY)),
            Opcode::GASLIMIT => push!(self, small(env::GASLIMIT)),
            Opcode::POP => {
                pop!(self);
            }
            Opcode::MLOAD => {
                let off = pop!(self);
                let Some((o, _)) = self.touch(off, Word::from(32)) else {
                    return Step::Halt(Verdict::OutOfBudget);
                };
                push!(self, word::word_at(&self.state.memory, Word::from(o)));
            }
            Opcode::MSTORE => {
                let off = pop!(self);
                let v = pop!(self);
                let Some((o, _)) = self.touch(off, Word::from(32)) else {
                    return Step::Halt(Verdict::OutOfBudget);
                };
                self.state.memory[o..o + 32].copy_from_slice(&v.to_be_bytes::<32>());
            }
            Opcode::MSTORE8 => {
                let off = pop!(self);
                let v = pop!(self);
                let Some((o, _)) = self.touch(off, Word::from(1)) else {
                    return Step::Halt(Verdict::OutOfBudget);
                };
                self.state.memory[o] = v.to_be_bytes::<32>()[31];
            }
            Opcode::SLOAD => {
                let slot = pop!(self);
                push!(self, self.state.sload(slot));
            }
            Opcode::SSTORE => {
                let slot = pop!(self);
                let v = pop!(self);
                if v.is_zero() {
                    self.state.storage.remove(&slot);
                } else {
                    self.state.storage.insert(slot, v);
                }
            }
            Opcode::JUMP | Opcode::JUMPI => {
                let target = pop!(self);
                let taken = op == Opcode::JUMP || !pop!(self).is_zero();
                if taken {
                    match word::as_u64(target) {
                        Some(t) if self.program.is_jumpdest(t as usize) => *next = t as usize,
                        _ => return Step::Halt(Verdict::InvalidTrap),
                    }
                }
            }
            Opcode::PC => push!(self, Word::from(ins.pc)),
            Opcode::MSIZE => push!(self, Word::from(self.state.memory.len())),
            Opcode::GAS => push!(self, small(env::GAS)),
            Opcode::JUMPDEST => {}
            Opcode::CREATE | Opcode::CREATE2 => {
                for _ in 0..op.pops() {
                    pop!(self);
                }
                push!(self, small(env::CREATED));
            }
            Opcode::CALL | Opcode::CALLCODE | Opcode::DELEGATECALL | Opcode::STATICCALL => {
                for _ in 0..op.pops() {
                    pop!(self);
                }
                push!(self, small(env::CALL_SUCCESS));
            }
            Opcode::RETURN | Opcode::REVERT => {
                let off = pop!(self);
                let size = pop!(self);
                let Some((o, n)) = self.touch(off, size) else {
                    return Step::Halt(Verdict::OutOfBudget);
                };
                self.output = self.state.memory[o..o + n].to_vec();
                return Step::Halt(if op == Opcode::RETURN {
                    Verdict::Return
                } else {
                    Verdict::Revert
                });
            }
            Opcode::SELFDESTRUCT => {
                pop!(self);
                return Step::Halt(Verdict::Stop);
            }
            other => unreachable!("opcode {other} has no handler"),
        }
        Step::Continue
    }
}

/// Run `p` from pc 0, calling `observer` around every instruction.
pub fn execute(
    p: &Program,
    calldata: &[u8],
    storage0: &Storage,
    budget: usize,
    observer: &mut dyn Observer,
) -> Outcome {
    let mut m = Machine {
        program: p,
        state: MachineState {
            storage: storage0.clone(),
            calldata: calldata.to_vec(),
            step_budget: budget,
            ..MachineState::default()
        },
        output: Vec::new(),
    };
    let verdict = loop {
        if m.state.steps >= budget {
            break Verdict::OutOfBudget;
        }
        let Some(ins) = p.at(m.state.pc) else {
            // running off the end of code is an implicit STOP
            break Verdict::Stop;
        };
        m.state.steps += 1;
        observer.before(ins, &m.state);
        match m.step(ins) {
            Step::Continue => observer.after(ins, &m.state),
            Step::Halt(v) => {
                observer.after(ins, &m.state);
                break v;
            }
        }
    };
    Outcome {
        verdict,
        state: m.state,
        output: m.output,
    }
}

/// Input space enumerated by [`find_invalid_witness`].
#[derive(Debug, Clone)]
pub struct Grid {
    /// Candidate words tried for every parameter.
    pub values: Vec<Word>,
    pub params: usize,
    pub storage: Storage,
    pub budget: usize,
    /// Maximum number of grid points.
    pub cap: usize,
}

impl Grid {
    /// The default `{0, 1, 2, MAX}` grid.
    pub fn standard(params: usize) -> Self {
        Grid {
            values: standard_values(),
            params,
            storage: Storage::new(),
            budget: DEFAULT_BUDGET,
            cap: 1 << 16,
        }
    }

    pub fn points(&self) -> usize {
        self.values.len().saturating_pow(self.params as u32)
    }

    /// Grid point `k` in lexicographic order, most significant parameter first.
    pub fn point(&self, mut k: usize) -> Vec<Word> {
        let base = self.values.len();
        let mut out = vec![Word::ZERO; self.params];
        for slot in out.iter_mut().rev() {
            *slot = self.values[k % base];
            k /= base;
        }
        out
    }
}

pub fn standard_values() -> Vec<Word> {
    vec![Word::ZERO, Word::from(1u8), Word::from(2u8), Word::MAX]
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WitnessError {
    #[error("grid has {points} points, cap is {cap}")]
    GridTooLarge { points: usize, cap: usize },
}

/// `selector ∥ args`, each argument as a 32-byte big-endian word. Functions
/// without a selector get four zero bytes so arguments stay at offset 4.
pub fn encode_calldata(selector: Option<[u8; 4]>, args: &[Word]) -> Vec<u8> {
    let mut out = selector.unwrap_or([0; 4]).to_vec();
    for a in args {
        out.extend_from_slice(&a.to_be_bytes::<32>());
    }
    out
}

pub fn find_invalid_witness(
    p: &Program,
    f: &FunctionEntry,
    grid: &Grid,
) -> Result<Option<Vec<u8>>, WitnessError> {
    let points = grid.points();
    if points > grid.cap || grid.values.is_empty() && grid.params > 0 {
        return Err(WitnessError::GridTooLarge {
            points,
            cap: grid.cap,
        });
    }
    let selector = f.selector.map(|s| s.0);
    for k in 0..points.max(1) {
        let calldata = encode_calldata(selector, &grid.point(k));
        if run_evm(p, &calldata, &grid.storage, grid.budget).is_invalid() {
            return Ok(Some(calldata));
        }
    }
    Ok(None)
}
