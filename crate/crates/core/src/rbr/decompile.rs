use super::{
    block_rule_name, jump_rule_name, BinOp, Continuation, Expr, NondetKind, NondetOrigin, RbrInstr,
    RbrProgram, Rule, RuleKind, Target, TernOp, VarId,
};
use crate::bytecode::{Instruction, OpClass, Opcode};
use crate::cfg::{
    self, BasicBlock, BlockId, Cfg, DiscardReason, FunctionEntry, SymValue, Terminator,
};
use crate::word::{self, Word};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// `CALLDATALOAD(4 + 32 i)` for `i < MAX_PARAMS` reads parameter `p_i`.
pub const MAX_PARAMS: u64 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RbrError {
    #[error("stack depth mismatch entering block {0}")]
    DepthMismatch(BlockId),
    #[error("function is discarded: {0}")]
    Discarded(DiscardReason),
    #[error("stack underflow in block {0}")]
    StackUnderflow(BlockId),
}

fn s(i: usize) -> VarId {
    VarId::Stack(i as u32)
}

/// Storage slots and memory words addressed by constants, collected in a
/// first pass so havoc sets are complete.
#[derive(Default)]
struct Layout {
    slots: BTreeMap<Word, u32>,
    words: BTreeMap<Word, u32>,
    params: BTreeSet<u32>,
    collecting: bool,
}

impl Layout {
    fn slot(&mut self, k: Word) -> Option<VarId> {
        if self.collecting {
            self.slots.entry(k).or_insert(0);
        }
        self.slots.get(&k).map(|&i| VarId::State(i))
    }

    fn word(&mut self, w: Word) -> Option<VarId> {
        if self.collecting {
            self.words.entry(w).or_insert(0);
        }
        self.words.get(&w).map(|&i| VarId::Local(i))
    }

    fn renumber(&mut self) {
        for (i, v) in self.slots.values_mut().enumerate() {
            *v = i as u32;
        }
        for (i, v) in self.words.values_mut().enumerate() {
            *v = i as u32;
        }
        self.collecting = false;
    }
}

struct BlockState<'a> {
    id: BlockId,
    depth: usize,
    known: Vec<Option<Word>>,
    out: Vec<RbrInstr>,
    layout: &'a mut Layout,
    fresh: &'a mut u32,
    width: &'a mut usize,
    pc: usize,
    nth: u32,
}

impl BlockState<'_> {
    fn touch(&mut self, v: VarId) {
        if let VarId::Stack(i) = v {
            *self.width = (*self.width).max(i as usize + 1);
        }
    }

    fn assign(&mut self, v: VarId, e: Expr) {
        self.touch(v);
        self.out.push(RbrInstr::Assign(v, e));
    }

    fn nondet(&mut self, v: VarId, kind: NondetKind) {
        self.touch(v);
        let origin = NondetOrigin {
            pc: self.pc,
            nth: self.nth,
            kind,
        };
        self.nth += 1;
        self.out.push(RbrInstr::Nondet(v, origin));
    }

    fn arg(&self, k: usize) -> VarId {
        s(self.depth - 1 - k)
    }

    fn known_arg(&self, k: usize) -> Option<Word> {
        self.known[self.depth - 1 - k]
    }

    fn havoc_state(&mut self) {
        let slots: Vec<(Word, u32)> = self.layout.slots.iter().map(|(k, v)| (*k, *v)).collect();
        for (slot, i) in slots {
            self.nondet(VarId::State(i), NondetKind::State(slot));
        }
    }

    fn havoc_words(&mut self, only: Option<&[Word]>) {
        let words: Vec<(Word, u32)> = self
            .layout
            .words
            .iter()
            .filter(|(w, _)| only.is_none_or(|o| o.contains(w)))
            .map(|(k, v)| (*k, *v))
            .collect();
        for (w, i) in words {
            self.nondet(VarId::Local(i), NondetKind::Local(w));
        }
    }

    fn step(&mut self, ins: &Instruction) -> Result<(), RbrError> {
        let op = ins.opcode;
        self.pc = ins.pc;
        self.nth = 0;
        match op.class() {
            OpClass::Push(_) => {
                let v = ins.push_data.unwrap_or_default();
                self.assign(s(self.depth), Expr::Const(v));
                self.known.push(Some(v));
                self.depth += 1;
                return Ok(());
            }
            OpClass::Dup(n) => {
                let n = n as usize;
                if self.depth < n {
                    return Err(RbrError::StackUnderflow(self.id));
                }
                self.assign(s(self.depth), Expr::Var(s(self.depth - n)));
                self.known.push(self.known[self.depth - n]);
                self.depth += 1;
                return Ok(());
            }
            OpClass::Swap(n) => {
                let n = n as usize;
                if self.depth < n + 1 {
                    return Err(RbrError::StackUnderflow(self.id));
                }
                let (a, b) = (self.depth - 1, self.depth - 1 - n);
                self.assign(s(self.depth), Expr::Var(s(a)));
                self.assign(s(a), Expr::Var(s(b)));
                self.assign(s(b), Expr::Var(s(self.depth)));
                self.known.swap(a, b);
                return Ok(());
            }
            _ => {}
        }
        let pops = op.pops();
        if self.depth < pops {
            return Err(RbrError::StackUnderflow(self.id));
        }
        let args: Vec<Option<Word>> = (0..pops).map(|k| self.known_arg(k)).collect();
        let all_known: Option<Vec<Word>> = args.iter().copied().collect();
        let r = s(self.depth - pops);
        let av: Vec<VarId> = (0..pops).map(|k| self.arg(k)).collect();
        let a = |k: usize| Expr::Var(av[k]);
        let bin = |o: BinOp| Expr::bin(o, a(0), a(1));
        let mut pushed: Option<Expr> = None;
        let mut pushed_nondet = false;
        match op {
            Opcode::ADD => pushed = Some(bin(BinOp::Add)),
            Opcode::MUL => pushed = Some(bin(BinOp::Mul)),
            Opcode::SUB => pushed = Some(bin(BinOp::Sub)),
            Opcode::DIV => pushed = Some(bin(BinOp::Div)),
            Opcode::SDIV => pushed = Some(bin(BinOp::SDiv)),
            Opcode::MOD => pushed = Some(bin(BinOp::Mod)),
            Opcode::SMOD => pushed = Some(bin(BinOp::SMod)),
            Opcode::SIGNEXTEND => pushed = Some(bin(BinOp::SignExtend)),
            Opcode::LT => pushed = Some(bin(BinOp::Lt)),
            Opcode::GT => pushed = Some(bin(BinOp::Gt)),
            Opcode::SLT => pushed = Some(bin(BinOp::Slt)),
            Opcode::SGT => pushed = Some(bin(BinOp::Sgt)),
            Opcode::EQ => pushed = Some(bin(BinOp::Eq)),
            Opcode::ISZERO => pushed = Some(Expr::bin(BinOp::Eq, a(0), Expr::Const(Word::ZERO))),
            Opcode::ADDMOD | Opcode::MULMOD => {
                let t = if op == Opcode::ADDMOD {
                    TernOp::AddMod
                } else {
                    TernOp::MulMod
                };
                pushed = Some(Expr::Tern(
                    t,
                    Box::new(a(0)),
                    Box::new(a(1)),
                    Box::new(a(2)),
                ));
            }
            Opcode::EXP => match (args[0], args[1]) {
                (Some(b), Some(e)) => pushed = Some(Expr::Const(word::exp(b, e))),
                (None, Some(e)) => pushed = Some(Expr::bin(BinOp::Exp, a(0), Expr::Const(e))),
                _ => pushed_nondet = true,
            },
            Opcode::AND
            | Opcode::OR
            | Opcode::XOR
            | Opcode::NOT
            | Opcode::BYTE
            | Opcode::SHL
            | Opcode::SHR
            | Opcode::SAR => match &all_known {
                Some(ks) => pushed = Some(Expr::Const(cfg::fold(op, ks).unwrap_or_default())),
                None => pushed_nondet = true,
            },
            Opcode::PC => pushed = Some(Expr::Const(Word::from(ins.pc))),
            Opcode::SLOAD => match args[0].and_then(|k| self.layout.slot(k)) {
                Some(g) => pushed = Some(Expr::Var(g)),
                None => pushed_nondet = true,
            },
            Opcode::SSTORE => match args[0] {
                Some(k) => {
                    if let Some(g) = self.layout.slot(k) {
                        self.assign(g, a(1));
                    }
                }
                None => self.havoc_state(),
            },
            Opcode::MLOAD => {
                let aligned = args[0].filter(|x| (x % Word::from(32u8)).is_zero());
                match aligned.and_then(|x| self.layout.word(x / Word::from(32u8))) {
                    Some(l) => pushed = Some(Expr::Var(l)),
                    None => {
                        let f = VarId::Fresh(*self.fresh);
                        *self.fresh += 1;
                        self.nondet(f, NondetKind::Result(op));
                        pushed = Some(Expr::Var(f));
                    }
                }
            }
            Opcode::MSTORE => match args[0] {
                Some(x) if (x % Word::from(32u8)).is_zero() => {
                    if let Some(l) = self.layout.word(x / Word::from(32u8)) {
                        self.assign(l, a(1));
                    }
                }
                Some(x) => {
                    let w = x / Word::from(32u8);
                    self.havoc_words(Some(&[w, w.wrapping_add(Word::from(1u8))]));
                }
                None => self.havoc_words(None),
            },
            Opcode::MSTORE8 => match args[0] {
                Some(x) => self.havoc_words(Some(&[x / Word::from(32u8)])),
                None => self.havoc_words(None),
            },
            Opcode::CALLDATALOAD => {
                let param = args[0].and_then(word::as_u64).and_then(|off| {
                    (off >= 4 && (off - 4) % 32 == 0 && (off - 4) / 32 < MAX_PARAMS)
                        .then(|| ((off - 4) / 32) as u32)
                });
                match param {
                    Some(i) => {
                        self.layout.params.insert(i);
                        pushed = Some(Expr::Var(VarId::Param(i)));
                    }
                    None => pushed_nondet = true,
                }
            }
            Opcode::CALLDATACOPY
            | Opcode::CODECOPY
            | Opcode::EXTCODECOPY
            | Opcode::RETURNDATACOPY => self.havoc_words(None),
            Opcode::CALL | Opcode::CALLCODE | Opcode::DELEGATECALL | Opcode::STATICCALL => {
                self.havoc_words(None);
                pushed_nondet = true;
            }
            _ => {
                if op.pushes() > 0 {
                    pushed_nondet = true;
                }
            }
        }
        let result_known = match &pushed {
            Some(Expr::Const(c)) => Some(*c),
            Some(Expr::Var(_)) | None => None,
            Some(_) => all_known.as_deref().and_then(|ks| cfg::fold(op, ks)),
        };
        match op {
            Opcode::STOP | Opcode::RETURN | Opcode::SELFDESTRUCT => self.out.push(RbrInstr::Stop),
            Opcode::REVERT => self.out.push(RbrInstr::Revert),
            o if o.is_invalid() => self.out.push(RbrInstr::Invalid),
            _ => {}
        }
        self.depth -= pops;
        self.known.truncate(self.depth);
        if op.pushes() > 0 {
            if let Some(e) = pushed {
                self.assign(r, e);
            } else {
                debug_assert!(pushed_nondet);
                self.nondet(r, NondetKind::Result(op));
            }
            self.known.push(result_known);
            self.depth += 1;
        }
        Ok(())
    }
}

fn compare_op(op: Opcode) -> Option<BinOp> {
    Some(match op {
        Opcode::LT => BinOp::Lt,
        Opcode::GT => BinOp::Gt,
        Opcode::SLT => BinOp::Slt,
        Opcode::SGT => BinOp::Sgt,
        Opcode::EQ => BinOp::Eq,
        _ => return None,
    })
}

fn negate(op: BinOp, a: Expr, b: Expr) -> Expr {
    match op {
        BinOp::Lt => Expr::bin(BinOp::Geq, a, b),
        BinOp::Gt => Expr::bin(BinOp::Leq, a, b),
        BinOp::Eq => Expr::bin(BinOp::Neq, a, b),
        BinOp::Leq => Expr::bin(BinOp::Gt, a, b),
        BinOp::Geq => Expr::bin(BinOp::Lt, a, b),
        BinOp::Neq => Expr::bin(BinOp::Eq, a, b),
        _ => Expr::negate(Expr::bin(op, a, b)),
    }
}

/// Split a `JUMPI` block into the instructions to translate and a guard
/// builder. The tail `[cmp] ISZERO* PUSH t JUMPI` is folded into the guard;
/// its stack slots are dead after the jump, so skipping them is exact.
enum GuardShape {
    Compare { op: BinOp, negations: usize },
    IsZero { count: usize },
    Cond,
}

fn guard_shape(instrs: &[Instruction]) -> (usize, GuardShape) {
    let n = instrs.len();
    if n < 2 || !matches!(instrs[n - 2].opcode.class(), OpClass::Push(_)) {
        return (n - 1, GuardShape::Cond);
    }
    let mut k = 0;
    while n >= 3 + k && instrs[n - 3 - k].opcode == Opcode::ISZERO {
        k += 1;
    }
    if n >= 3 + k {
        if let Some(op) = compare_op(instrs[n - 3 - k].opcode) {
            return (n - 3 - k, GuardShape::Compare { op, negations: k });
        }
    }
    if k > 0 {
        return (n - 2 - k, GuardShape::IsZero { count: k });
    }
    (n - 2, GuardShape::Cond)
}

struct Ctx<'a> {
    cfg: &'a Cfg,
    f: &'a FunctionEntry,
    layout: Layout,
    fresh: u32,
    width: usize,
}

impl Ctx<'_> {
    fn target(&self, succ: Option<BlockId>) -> Target {
        succ.map_or(Target::Halt, |s| Target::Rule(block_rule_name(s)))
    }

    fn check_depth(&self, succ: Option<BlockId>, depth: usize) -> Result<(), RbrError> {
        match succ {
            Some(sid) if self.cfg.block(sid).entry_stack_depth != depth => {
                Err(RbrError::DepthMismatch(sid))
            }
            _ => Ok(()),
        }
    }

    fn translate(&mut self, b: &BasicBlock) -> Result<Vec<Rule>, RbrError> {
        let succ = self.cfg.function_successors(self.f, b.id);
        let known = b.entry_stack.iter().map(SymValue::as_const).collect();
        let fused =
            (b.terminator == Terminator::Jumpi && !b.unresolved).then(|| guard_shape(&b.instrs));
        let upto = match (&fused, b.terminator, b.unresolved) {
            (Some((k, _)), _, _) => *k,
            (None, Terminator::Jump | Terminator::Jumpi, _) => b.instrs.len() - 1,
            _ => b.instrs.len(),
        };
        let mut st = BlockState {
            id: b.id,
            depth: b.entry_stack_depth,
            known,
            out: Vec::new(),
            layout: &mut self.layout,
            fresh: &mut self.fresh,
            width: &mut self.width,
            pc: b.id.pc,
            nth: 0,
        };
        for v in 0..st.depth {
            st.touch(s(v));
        }
        for ins in &b.instrs[..upto] {
            st.step(ins)?;
        }
        let depth = st.depth;
        let mut body = std::mem::take(&mut st.out);
        let name = block_rule_name(b.id);
        let block_rule = |body: Vec<RbrInstr>, next: Target| Rule {
            name: name.clone(),
            kind: RuleKind::Block,
            block: b.id,
            entry_depth: b.entry_stack_depth,
            body,
            cont: Continuation::Next(next),
        };
        if b.unresolved {
            body.push(RbrInstr::Stop);
            return Ok(vec![block_rule(body, Target::Halt)]);
        }
        if b.instrs.is_empty() {
            body.push(RbrInstr::Stop);
        }
        match b.terminator {
            Terminator::Jump => {
                if depth == 0 {
                    return Err(RbrError::StackUnderflow(b.id));
                }
                let next = succ.first().copied().flatten();
                self.check_depth(next, depth - 1)?;
                Ok(vec![block_rule(body, self.target(next))])
            }
            Terminator::FallThrough => {
                let next = succ.first().copied().flatten();
                self.check_depth(next, depth)?;
                Ok(vec![block_rule(body, self.target(next))])
            }
            Terminator::Jumpi => {
                let (_, shape) = fused.expect("jumpi blocks are fused");
                let v = |i: usize| Expr::Var(s(i));
                let (guard, exit_depth) = match shape {
                    GuardShape::Compare { op, negations } => {
                        if depth < 2 {
                            return Err(RbrError::StackUnderflow(b.id));
                        }
                        let (a, bb) = (v(depth - 1), v(depth - 2));
                        let g = if negations % 2 == 0 {
                            Expr::bin(op, a, bb)
                        } else {
                            negate(op, a, bb)
                        };
                        (g, depth - 2)
                    }
                    GuardShape::IsZero { count } => {
                        if depth < 1 {
                            return Err(RbrError::StackUnderflow(b.id));
                        }
                        let op = if count % 2 == 1 {
                            BinOp::Eq
                        } else {
                            BinOp::Neq
                        };
                        (
                            Expr::bin(op, v(depth - 1), Expr::Const(Word::ZERO)),
                            depth - 1,
                        )
                    }
                    GuardShape::Cond => {
                        // stack ends `.. cond target` (PUSH t translated) or `.. cond target`
                        // without the final PUSH when it was skipped
                        let pushed_target = upto + 1 == b.instrs.len();
                        let cond_at = if pushed_target { depth - 2 } else { depth - 1 };
                        if depth < 1 + pushed_target as usize {
                            return Err(RbrError::StackUnderflow(b.id));
                        }
                        (
                            Expr::bin(BinOp::Neq, v(cond_at), Expr::Const(Word::ZERO)),
                            cond_at,
                        )
                    }
                };
                let branch = succ.first().copied().flatten();
                let fall = succ.get(1).copied().flatten();
                self.check_depth(branch, exit_depth)?;
                self.check_depth(fall, exit_depth)?;
                let jname = jump_rule_name(b.id);
                Ok(vec![
                    block_rule(body, Target::Rule(jname.clone())),
                    Rule {
                        name: jname,
                        kind: RuleKind::Jump,
                        block: b.id,
                        entry_depth: depth,
                        body: Vec::new(),
                        cont: Continuation::Branch {
                            guard,
                            then_call: self.target(branch),
                            else_call: self.target(fall),
                        },
                    },
                ])
            }
            _ => Ok(vec![block_rule(body, Target::Halt)]),
        }
    }
}

/// Translate the region of `f` into rules. The entry rule is the contract
/// entry block; dispatcher edges that lead away from `f` become `Halt`.
pub fn decompile(c: &Cfg, f: &FunctionEntry) -> Result<RbrProgram, RbrError> {
    if let Some(reason) = c.discard_reason(f) {
        return Err(RbrError::Discarded(reason));
    }
    let Some(entry) = c.entry else {
        return Ok(RbrProgram::new(f.name.clone(), String::new(), Vec::new()));
    };
    let region = c.function_blocks(f);
    let mut ctx = Ctx {
        cfg: c,
        f,
        layout: Layout {
            collecting: true,
            ..Layout::default()
        },
        fresh: 0,
        width: 0,
    };
    for id in &region {
        ctx.translate(c.block(*id))?;
    }
    ctx.layout.renumber();
    ctx.fresh = 0;
    ctx.width = 0;
    let mut rules = Vec::new();
    for id in &region {
        rules.extend(ctx.translate(c.block(*id))?);
    }
    let mut rp = RbrProgram::new(f.name.clone(), block_rule_name(entry), rules);
    rp.state_slots = ctx.layout.slots.keys().copied().collect();
    rp.local_words = ctx.layout.words.keys().copied().collect();
    rp.params = ctx.layout.params;
    rp.fresh = ctx.fresh;
    rp.stack_width = ctx.width;
    rp.has_unresolved = region.iter().any(|id| c.block(*id).unresolved);
    Ok(rp)
}
