//! Control-flow recovery by symbolic stack execution.
//!
//! Blocks are explored depth-first from pc 0 while tracking an abstract
//! stack of `Const`/`Unknown` values. A block reached with different abstract
//! stacks is cloned per context, which is what resolves return-address jumps
//! of internal Solidity functions. Only constants that are valid jump
//! destinations survive a block boundary, everything else becomes `Unknown`.

mod dot;
mod functions;

pub use dot::to_dot;
pub use functions::{identify_functions, FunctionEntry, FunctionKey, Selector};

use crate::bytecode::{Instruction, OpClass, Opcode, Program};
use crate::word::{self, Word};
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymValue {
    Const(Word),
    Unknown,
}

impl SymValue {
    pub fn as_const(&self) -> Option<Word> {
        match self {
            SymValue::Const(v) => Some(*v),
            SymValue::Unknown => None,
        }
    }
}

pub type SymbolicStack = Vec<SymValue>;

/// Entry pc plus clone index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct BlockId {
    pub pc: usize,
    pub clone: u32,
}

impl BlockId {
    pub fn new(pc: usize, clone: u32) -> Self {
        BlockId { pc, clone }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.clone == 0 {
            write!(f, "{}", self.pc)
        } else {
            write!(f, "{}_{}", self.pc, self.clone)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Terminator {
    Jump,
    Jumpi,
    FallThrough,
    Stop,
    Return,
    Revert,
    Invalid,
    SelfDestruct,
}

impl Terminator {
    fn of(last: Option<&Instruction>) -> Self {
        let Some(ins) = last else {
            return Terminator::Stop;
        };
        match ins.opcode {
            Opcode::JUMP => Terminator::Jump,
            Opcode::JUMPI => Terminator::Jumpi,
            Opcode::STOP => Terminator::Stop,
            Opcode::RETURN => Terminator::Return,
            Opcode::REVERT => Terminator::Revert,
            Opcode::SELFDESTRUCT => Terminator::SelfDestruct,
            op if op.is_invalid() => Terminator::Invalid,
            _ => Terminator::FallThrough,
        }
    }

    pub fn is_halt(self) -> bool {
        !matches!(
            self,
            Terminator::Jump | Terminator::Jumpi | Terminator::FallThrough
        )
    }
}

/// Why exploration stopped following an edge out of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Truncation {
    Recursion,
    CloneCap,
}

#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub id: BlockId,
    pub instrs: Vec<Instruction>,
    pub terminator: Terminator,
    /// For `Jumpi`: `[branch, fall-through]`.
    pub successors: Vec<BlockId>,
    pub entry_stack_depth: usize,
    pub entry_stack: SymbolicStack,
    /// Jump target was `Unknown`; the block is treated as halting.
    pub unresolved: bool,
    pub truncated: Option<Truncation>,
}

impl BasicBlock {
    pub fn start_pc(&self) -> usize {
        self.id.pc
    }

    pub fn has_invalid(&self) -> bool {
        self.terminator == Terminator::Invalid
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecursionCycle {
    /// Function-entry pc that was re-entered with a deeper stack.
    pub pc: usize,
    /// Exploration path from the first visit to the re-entering block.
    pub path: Vec<BlockId>,
}

#[derive(Debug, Clone)]
pub struct Cfg {
    pub blocks: BTreeMap<BlockId, BasicBlock>,
    /// `None` only for empty programs.
    pub entry: Option<BlockId>,
    pub functions: BTreeMap<FunctionKey, FunctionEntry>,
    pub unresolved_jumps: Vec<(BlockId, String)>,
    pub recursion: Vec<RecursionCycle>,
    pub clone_overflows: Vec<BlockId>,
    jumpdests: BTreeSet<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct CfgConfig {
    /// Maximum clones per pc.
    pub clone_cap: usize,
    /// Maximum number of blocks per contract.
    pub max_blocks: usize,
}

impl Default for CfgConfig {
    fn default() -> Self {
        CfgConfig {
            clone_cap: 64,
            max_blocks: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CfgError {
    #[error("stack underflow in block {0}")]
    StackUnderflow(BlockId),
    #[error("stack overflow in block {0}")]
    StackOverflow(BlockId),
    #[error("block {block} jumps to {target:#x}, which is not a JUMPDEST")]
    MalformedJumpTarget { block: BlockId, target: Word },
    #[error("exploration exceeded {0} blocks")]
    ExplorationBudget(usize),
}

/// Static partition of the program: blocks start at pc 0, at every
/// `JUMPDEST` and after every terminator. The returned blocks carry no
/// successors and a zero entry depth.
pub fn split_blocks(p: &Program) -> Vec<BasicBlock> {
    let mut blocks = Vec::new();
    let mut current: Vec<Instruction> = Vec::new();
    let flush = |current: &mut Vec<Instruction>, blocks: &mut Vec<BasicBlock>| {
        if current.is_empty() {
            return;
        }
        let instrs = std::mem::take(current);
        blocks.push(BasicBlock {
            id: BlockId::new(instrs[0].pc, 0),
            terminator: Terminator::of(instrs.last()),
            instrs,
            successors: Vec::new(),
            entry_stack_depth: 0,
            entry_stack: Vec::new(),
            unresolved: false,
            truncated: None,
        });
    };
    for ins in p.instructions() {
        if ins.opcode == Opcode::JUMPDEST {
            flush(&mut current, &mut blocks);
        }
        let ends = ins.opcode.is_terminator();
        current.push(ins.clone());
        if ends {
            flush(&mut current, &mut blocks);
        }
    }
    flush(&mut current, &mut blocks);
    blocks
}

struct StaticBlock {
    instrs: Vec<Instruction>,
    terminator: Terminator,
    end_pc: usize,
}

enum Exit {
    Edges(Vec<(usize, SymbolicStack)>),
    Unresolved(String),
}

/// Abstract transfer over one instruction. Arithmetic on constants is folded
/// exactly; anything reading state becomes `Unknown`.
pub(crate) fn sym_step(stack: &mut SymbolicStack, ins: &Instruction) -> Result<(), ()> {
    let op = ins.opcode;
    match op.class() {
        OpClass::Push(_) => {
            stack.push(SymValue::Const(ins.push_data.unwrap_or_default()));
            return Ok(());
        }
        OpClass::Dup(n) => {
            let n = n as usize;
            if stack.len() < n {
                return Err(());
            }
            stack.push(stack[stack.len() - n].clone());
            return Ok(());
        }
        OpClass::Swap(n) => {
            let n = n as usize;
            let len = stack.len();
            if len < n + 1 {
                return Err(());
            }
            stack.swap(len - 1, len - 1 - n);
            return Ok(());
        }
        _ => {}
    }
    if stack.len() < op.pops() {
        return Err(());
    }
    let args: Vec<SymValue> = (0..op.pops()).map(|_| stack.pop().unwrap()).collect();
    if op.pushes() == 0 {
        return Ok(());
    }
    let consts: Option<Vec<Word>> = args.iter().map(SymValue::as_const).collect();
    let folded = match (op, consts.as_deref()) {
        (Opcode::PC, _) => Some(Word::from(ins.pc)),
        (_, Some(a)) => fold(op, a),
        _ => None,
    };
    stack.push(folded.map_or(SymValue::Unknown, SymValue::Const));
    Ok(())
}

/// Pure opcodes evaluated over constant operands (top of stack first).
pub(crate) fn fold(op: Opcode, a: &[Word]) -> Option<Word> {
    let b = |x: bool| word::from_bool(x);
    Some(match op {
        Opcode::ADD => a[0].wrapping_add(a[1]),
        Opcode::MUL => a[0].wrapping_mul(a[1]),
        Opcode::SUB => a[0].wrapping_sub(a[1]),
        Opcode::DIV => word::div(a[0], a[1]),
        Opcode::SDIV => word::sdiv(a[0], a[1]),
        Opcode::MOD => word::rem(a[0], a[1]),
        Opcode::SMOD => word::smod(a[0], a[1]),
        Opcode::ADDMOD => word::addmod(a[0], a[1], a[2]),
        Opcode::MULMOD => word::mulmod(a[0], a[1], a[2]),
        Opcode::EXP => word::exp(a[0], a[1]),
        Opcode::SIGNEXTEND => word::signextend(a[0], a[1]),
        Opcode::LT => b(a[0] < a[1]),
        Opcode::GT => b(a[0] > a[1]),
        Opcode::SLT => b(word::slt(a[0], a[1])),
        Opcode::SGT => b(word::sgt(a[0], a[1])),
        Opcode::EQ => b(a[0] == a[1]),
        Opcode::ISZERO => b(a[0].is_zero()),
        Opcode::AND => a[0] & a[1],
        Opcode::OR => a[0] | a[1],
        Opcode::XOR => a[0] ^ a[1],
        Opcode::NOT => !a[0],
        Opcode::BYTE => word::byte(a[0], a[1]),
        Opcode::SHL => word::shl(a[0], a[1]),
        Opcode::SHR => word::shr(a[0], a[1]),
        Opcode::SAR => word::sar(a[0], a[1]),
        _ => return None,
    })
}

struct Builder<'a> {
    program: &'a Program,
    config: CfgConfig,
    statics: HashMap<usize, StaticBlock>,
    contexts: HashMap<(usize, SymbolicStack), BlockId>,
    clones: HashMap<usize, u32>,
    blocks: BTreeMap<BlockId, BasicBlock>,
    pending: HashMap<BlockId, Vec<(usize, SymbolicStack)>>,
    unresolved: Vec<(BlockId, String)>,
    recursion: Vec<RecursionCycle>,
    clone_overflows: Vec<BlockId>,
}

impl Builder<'_> {
    fn abstract_stack(&self, stack: SymbolicStack) -> SymbolicStack {
        let len = self.program.len();
        stack
            .into_iter()
            .map(|v| match v {
                SymValue::Const(c)
                    if word::as_u64(c).is_some_and(|t| {
                        (t as usize) < len && self.program.is_jumpdest(t as usize)
                    }) =>
                {
                    SymValue::Const(c)
                }
                _ => SymValue::Unknown,
            })
            .collect()
    }

    fn run_block(&self, id: BlockId, entry: &SymbolicStack) -> Result<Exit, CfgError> {
        let sb = &self.statics[&id.pc];
        let mut stack = entry.clone();
        let body = match sb.terminator {
            Terminator::Jump | Terminator::Jumpi => &sb.instrs[..sb.instrs.len() - 1],
            _ => &sb.instrs[..],
        };
        for ins in body {
            sym_step(&mut stack, ins).map_err(|_| CfgError::StackUnderflow(id))?;
            if stack.len() > crate::exec::MAX_STACK {
                return Err(CfgError::StackOverflow(id));
            }
        }
        let resolve = |target: SymValue| -> Result<Option<usize>, CfgError> {
            match target {
                SymValue::Unknown => Ok(None),
                SymValue::Const(t) => match word::as_u64(t) {
                    Some(t) if self.program.is_jumpdest(t as usize) => Ok(Some(t as usize)),
                    _ => Err(CfgError::MalformedJumpTarget {
                        block: id,
                        target: t,
                    }),
                },
            }
        };
        let edges = match sb.terminator {
            Terminator::Jump => {
                let target = stack.pop().ok_or(CfgError::StackUnderflow(id))?;
                match resolve(target)? {
                    Some(t) => vec![(t, stack)],
                    None => return Ok(Exit::Unresolved("JUMP target is not constant".into())),
                }
            }
            Terminator::Jumpi => {
                let target = stack.pop().ok_or(CfgError::StackUnderflow(id))?;
                stack.pop().ok_or(CfgError::StackUnderflow(id))?;
                match resolve(target)? {
                    Some(t) => vec![(t, stack.clone()), (sb.end_pc, stack)],
                    None => return Ok(Exit::Unresolved("JUMPI target is not constant".into())),
                }
            }
            Terminator::FallThrough => vec![(sb.end_pc, stack)],
            _ => Vec::new(),
        };
        Ok(Exit::Edges(
            edges
                .into_iter()
                .map(|(pc, s)| (pc, self.abstract_stack(s)))
                .collect(),
        ))
    }

    fn create(&mut self, pc: usize, stack: SymbolicStack) -> Result<BlockId, CfgError> {
        if self.blocks.len() >= self.config.max_blocks {
            return Err(CfgError::ExplorationBudget(self.config.max_blocks));
        }
        let n = self.clones.entry(pc).or_insert(0);
        let id = BlockId::new(pc, *n);
        *n += 1;
        self.contexts.insert((pc, stack.clone()), id);
        let sb = &self.statics[&pc];
        let mut block = BasicBlock {
            id,
            instrs: sb.instrs.clone(),
            terminator: sb.terminator,
            successors: Vec::new(),
            entry_stack_depth: stack.len(),
            entry_stack: stack.clone(),
            unresolved: false,
            truncated: None,
        };
        match self.run_block(id, &stack)? {
            Exit::Edges(edges) => {
                self.pending.insert(id, edges);
            }
            Exit::Unresolved(reason) => {
                block.unresolved = true;
                self.unresolved.push((id, reason));
                self.pending.insert(id, Vec::new());
            }
        }
        self.blocks.insert(id, block);
        Ok(id)
    }

    fn explore(&mut self) -> Result<Option<BlockId>, CfgError> {
        if self.program.is_empty() {
            return Ok(None);
        }
        let root = self.create(0, Vec::new())?;
        // (block, index of next pending edge)
        let mut path: Vec<(BlockId, usize)> = vec![(root, 0)];
        while let Some(&mut (id, ref mut next)) = path.last_mut() {
            let edges = &self.pending[&id];
            if *next >= edges.len() {
                path.pop();
                continue;
            }
            let (pc, stack) = edges[*next].clone();
            *next += 1;
            if let Some(&target) = self.contexts.get(&(pc, stack.clone())) {
                self.blocks.get_mut(&id).unwrap().successors.push(target);
                continue;
            }
            let ancestor = path.iter().position(|(a, _)| {
                let b = &self.blocks[a];
                b.id.pc == pc
                    && b.entry_stack.len() < stack.len()
                    && stack.starts_with(&b.entry_stack)
            });
            if let Some(first) = ancestor {
                self.recursion.push(RecursionCycle {
                    pc,
                    path: path[first..].iter().map(|(b, _)| *b).collect(),
                });
                self.blocks.get_mut(&id).unwrap().truncated = Some(Truncation::Recursion);
                continue;
            }
            if *self.clones.get(&pc).unwrap_or(&0) as usize >= self.config.clone_cap {
                self.clone_overflows.push(id);
                self.blocks.get_mut(&id).unwrap().truncated = Some(Truncation::CloneCap);
                continue;
            }
            let target = self.create(pc, stack)?;
            self.blocks.get_mut(&id).unwrap().successors.push(target);
            path.push((target, 0));
        }
        Ok(Some(root))
    }
}

pub fn build_cfg(p: &Program) -> Result<Cfg, CfgError> {
    build_cfg_with(p, CfgConfig::default())
}

pub fn build_cfg_with(p: &Program, config: CfgConfig) -> Result<Cfg, CfgError> {
    let mut statics: HashMap<usize, StaticBlock> = split_blocks(p)
        .into_iter()
        .map(|b| {
            let end_pc = b.instrs.last().map_or(b.id.pc, Instruction::next_pc);
            (
                b.id.pc,
                StaticBlock {
                    instrs: b.instrs,
                    terminator: b.terminator,
                    end_pc,
                },
            )
        })
        .collect();
    // falling off the end of code behaves like STOP
    statics.entry(p.len()).or_insert(StaticBlock {
        instrs: Vec::new(),
        terminator: Terminator::Stop,
        end_pc: p.len(),
    });
    let mut b = Builder {
        program: p,
        config,
        statics,
        contexts: HashMap::new(),
        clones: HashMap::new(),
        blocks: BTreeMap::new(),
        pending: HashMap::new(),
        unresolved: Vec::new(),
        recursion: Vec::new(),
        clone_overflows: Vec::new(),
    };
    let entry = b.explore()?;
    let mut cfg = Cfg {
        blocks: b.blocks,
        entry,
        functions: BTreeMap::new(),
        unresolved_jumps: b.unresolved,
        recursion: b.recursion,
        clone_overflows: b.clone_overflows,
        jumpdests: p.jumpdests().clone(),
    };
    cfg.functions = identify_functions(&cfg);
    debug_assert!(cfg.check_invariants().is_ok());
    Ok(cfg)
}

pub fn detect_recursion(c: &Cfg) -> Vec<RecursionCycle> {
    c.recursion.clone()
}

/// Why a function cannot be translated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum DiscardReason {
    Recursion,
    CloneCap,
    DepthMismatch,
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscardReason::Recursion => "recursion",
            DiscardReason::CloneCap => "clone-cap",
            DiscardReason::DepthMismatch => "depth-mismatch",
        })
    }
}

impl Cfg {
    pub fn block(&self, id: BlockId) -> &BasicBlock {
        &self.blocks[&id]
    }

    /// Blocks reachable for `f`: from the contract entry, restricted to
    /// `f`'s route through the dispatcher.
    pub fn function_blocks(&self, f: &FunctionEntry) -> BTreeSet<BlockId> {
        let mut seen = BTreeSet::new();
        let Some(entry) = self.entry else {
            return seen;
        };
        let route: HashMap<BlockId, BlockId> = f.route.iter().copied().collect();
        let mut queue = VecDeque::from([entry]);
        while let Some(id) = queue.pop_front() {
            if !seen.insert(id) {
                continue;
            }
            match route.get(&id) {
                Some(&only) => queue.push_back(only),
                None => queue.extend(self.blocks[&id].successors.iter().copied()),
            }
        }
        seen
    }

    /// Successors of `id` that `f` may follow; cut edges are `None`.
    pub fn function_successors(&self, f: &FunctionEntry, id: BlockId) -> Vec<Option<BlockId>> {
        let succ = &self.blocks[&id].successors;
        match f.route.iter().find(|(b, _)| *b == id) {
            Some(&(_, only)) => succ.iter().map(|&s| (s == only).then_some(s)).collect(),
            None => succ.iter().map(|&s| Some(s)).collect(),
        }
    }

    pub fn reaches_invalid(&self, f: &FunctionEntry) -> bool {
        self.function_blocks(f)
            .iter()
            .any(|id| self.blocks[id].has_invalid())
    }

    pub fn discard_reason(&self, f: &FunctionEntry) -> Option<DiscardReason> {
        self.function_blocks(f)
            .iter()
            .find_map(|id| self.blocks[id].truncated)
            .map(|t| match t {
                Truncation::Recursion => DiscardReason::Recursion,
                Truncation::CloneCap => DiscardReason::CloneCap,
            })
    }

    pub fn block_starts(&self) -> BTreeSet<usize> {
        self.blocks.keys().map(|id| id.pc).collect()
    }

    /// Match a concrete pc trace against the graph. Returns the block path or
    /// the index (into the block-entry subsequence) where no edge matched.
    pub fn match_trace(&self, pcs: &[usize]) -> Result<Vec<BlockId>, usize> {
        let starts = self.block_starts();
        let entries: Vec<usize> = pcs
            .iter()
            .copied()
            .filter(|pc| starts.contains(pc))
            .collect();
        let Some(entry) = self.entry else {
            return if entries.is_empty() {
                Ok(Vec::new())
            } else {
                Err(0)
            };
        };
        if entries.first() != Some(&entry.pc) {
            return Err(0);
        }
        // every clone set is a frontier of possible positions; keep one
        // predecessor per clone to recover a witness path
        let mut frontier: Vec<Vec<(BlockId, usize)>> = vec![vec![(entry, 0)]];
        for (k, &pc) in entries.iter().enumerate().skip(1) {
            let prev = &frontier[k - 1];
            let mut next: Vec<(BlockId, usize)> = Vec::new();
            for (i, (id, _)) in prev.iter().enumerate() {
                for s in &self.blocks[id].successors {
                    if s.pc == pc && !next.iter().any(|(n, _)| n == s) {
                        next.push((*s, i));
                    }
                }
            }
            if next.is_empty() {
                return Err(k);
            }
            frontier.push(next);
        }
        let mut path = Vec::with_capacity(frontier.len());
        let mut idx = 0;
        for layer in frontier.iter().rev() {
            let (id, back) = layer[idx];
            path.push(id);
            idx = back;
        }
        path.reverse();
        Ok(path)
    }

    /// Structural invariants: successors exist, jump targets are JUMPDESTs,
    /// edge depths agree with entry depths.
    pub fn check_invariants(&self) -> Result<(), String> {
        for b in self.blocks.values() {
            for s in &b.successors {
                let Some(t) = self.blocks.get(s) else {
                    return Err(format!("block {} has dangling successor {}", b.id, s));
                };
                if (matches!(b.terminator, Terminator::Jump)
                    || (b.terminator == Terminator::Jumpi && Some(s) == b.successors.first()))
                    && !self.jumpdests.contains(&s.pc)
                {
                    return Err(format!("block {} jumps to non-JUMPDEST {}", b.id, s.pc));
                }
                let _ = t;
            }
            if b.truncated.is_none() && !b.unresolved {
                let expected = match b.terminator {
                    Terminator::Jumpi => 2,
                    Terminator::Jump | Terminator::FallThrough => 1,
                    _ => 0,
                };
                if b.successors.len() != expected {
                    return Err(format!(
                        "block {} ({:?}) has {} successors",
                        b.id,
                        b.terminator,
                        b.successors.len()
                    ));
                }
            }
            for ins in b.instrs.iter().rev().skip(1) {
                if ins.opcode.is_terminator() {
                    return Err(format!("terminator inside block {}", b.id));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
