use super::{Continuation, NondetKind, NondetOrigin, RbrInstr, RbrProgram, Target, VarId};
use crate::bytecode::{Instruction, Opcode, Program};
use crate::exec::{self, MachineState, Observer, Outcome, Storage};
use crate::word::Word;
use std::collections::{BTreeMap, HashMap};

/// Source of values for nondeterministic definitions, consumed in
/// execution order.
pub trait NondetFeed {
    fn next(&mut self, dst: VarId, origin: &NondetOrigin) -> Word;
}

impl<F: FnMut(VarId, &NondetOrigin) -> Word> NondetFeed for F {
    fn next(&mut self, dst: VarId, origin: &NondetOrigin) -> Word {
        self(dst, origin)
    }
}

/// Every nondet is zero.
#[derive(Debug, Default, Clone, Copy)]
pub struct ZeroFeed;

impl NondetFeed for ZeroFeed {
    fn next(&mut self, _: VarId, _: &NondetOrigin) -> Word {
        Word::ZERO
    }
}

/// Values from an iterator; zero once it is exhausted.
#[derive(Debug, Clone)]
pub struct IterFeed<I>(pub I);

impl<I: Iterator<Item = Word>> NondetFeed for IterFeed<I> {
    fn next(&mut self, _: VarId, _: &NondetOrigin) -> Word {
        self.0.next().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum RbrVerdict {
    Stop,
    Revert,
    Invalid,
    /// Step budget exhausted.
    Unknown,
}

/// Execute `rp` from its entry rule. Variables missing from `inputs` start
/// at zero, as do locals (EVM memory is zero-initialised).
pub fn interpret_rbr(
    rp: &RbrProgram,
    inputs: &BTreeMap<VarId, Word>,
    feed: &mut dyn NondetFeed,
    budget: usize,
) -> RbrVerdict {
    let mut env: HashMap<VarId, Word> = inputs.iter().map(|(k, v)| (*k, *v)).collect();
    let mut current = rp.entry.clone();
    let mut steps = 0usize;
    loop {
        let Some(rule) = rp.rule(&current) else {
            return RbrVerdict::Stop;
        };
        for ins in &rule.body {
            steps += 1;
            if steps > budget {
                return RbrVerdict::Unknown;
            }
            match ins {
                RbrInstr::Assign(v, e) => {
                    let val = e.eval(&|x| env.get(&x).copied().unwrap_or_default());
                    env.insert(*v, val);
                }
                RbrInstr::Nondet(v, o) => {
                    let val = feed.next(*v, o);
                    env.insert(*v, val);
                }
                RbrInstr::Invalid => return RbrVerdict::Invalid,
                RbrInstr::Revert => return RbrVerdict::Revert,
                RbrInstr::Stop => return RbrVerdict::Stop,
            }
        }
        steps += 1;
        if steps > budget {
            return RbrVerdict::Unknown;
        }
        let next = match &rule.cont {
            Continuation::Next(t) => t,
            Continuation::Branch {
                guard,
                then_call,
                else_call,
            } => {
                if guard
                    .eval(&|x| env.get(&x).copied().unwrap_or_default())
                    .is_zero()
                {
                    else_call
                } else {
                    then_call
                }
            }
        };
        match next {
            Target::Rule(r) => current = r.clone(),
            Target::Halt => return RbrVerdict::Stop,
        }
    }
}

#[derive(Debug, Clone)]
struct Event {
    pc: usize,
    top: Option<Word>,
    storage: Option<Storage>,
    memory: Option<Vec<u8>>,
}

/// Replays the values a concrete run computed for every abstracted
/// instruction, so the RBR follows exactly the concrete path.
#[derive(Debug, Clone)]
pub struct ReplayFeed {
    events: Vec<Event>,
    cursor: usize,
    current: Option<usize>,
}

struct Recorder(Vec<Event>);

fn writes_state(op: Opcode) -> bool {
    matches!(
        op,
        Opcode::SSTORE
            | Opcode::MSTORE
            | Opcode::MSTORE8
            | Opcode::CALLDATACOPY
            | Opcode::CODECOPY
            | Opcode::EXTCODECOPY
            | Opcode::RETURNDATACOPY
            | Opcode::CALL
            | Opcode::CALLCODE
            | Opcode::DELEGATECALL
            | Opcode::STATICCALL
    )
}

impl Observer for Recorder {
    fn after(&mut self, instr: &Instruction, state: &MachineState) {
        let op = instr.opcode;
        let snapshot = writes_state(op);
        self.0.push(Event {
            pc: instr.pc,
            top: (op.pushes() > 0).then(|| state.stack_top()).flatten(),
            storage: snapshot.then(|| state.storage.clone()),
            memory: snapshot.then(|| state.memory.clone()),
        });
    }
}

impl ReplayFeed {
    /// Run `p` concretely and keep what the feed needs.
    pub fn record(
        p: &Program,
        calldata: &[u8],
        storage: &Storage,
        budget: usize,
    ) -> (Outcome, ReplayFeed) {
        let mut rec = Recorder(Vec::new());
        let out = exec::execute(p, calldata, storage, budget, &mut rec);
        (
            out,
            ReplayFeed {
                events: rec.0,
                cursor: 0,
                current: None,
            },
        )
    }
}

impl NondetFeed for ReplayFeed {
    fn next(&mut self, _: VarId, origin: &NondetOrigin) -> Word {
        if origin.nth == 0 || self.current.is_none_or(|c| self.events[c].pc != origin.pc) {
            let found = (self.cursor..self.events.len()).find(|&i| self.events[i].pc == origin.pc);
            self.current = found;
            if let Some(i) = found {
                self.cursor = i + 1;
            }
        }
        let Some(ev) = self.current.map(|i| &self.events[i]) else {
            return Word::ZERO;
        };
        match origin.kind {
            NondetKind::Result(_) => ev.top.unwrap_or_default(),
            NondetKind::State(slot) => ev
                .storage
                .as_ref()
                .and_then(|st| st.get(&slot).copied())
                .unwrap_or_default(),
            NondetKind::Local(w) => {
                let mem = ev.memory.as_deref().unwrap_or(&[]);
                crate::word::word_at(mem, w.saturating_mul(Word::from(32u8)))
            }
        }
    }
}
