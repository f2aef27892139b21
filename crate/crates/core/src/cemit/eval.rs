use super::{CNondet, CProgram, CStmt};
use crate::rbr::{Expr, NondetFeed, VarId};
use crate::word::Word;
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum CVerdict {
    /// `__VERIFIER_error()` was called.
    Error,
    Completed,
    /// Step budget exhausted.
    Unknown,
}

enum Flat {
    Assign(VarId, Expr),
    Nondet(VarId, CNondet),
    /// Jump to the target when the condition is zero.
    JumpIfZero(Expr, usize),
    Jump(usize),
    Call(String),
    Error,
    Return,
}

fn flatten(
    body: &[CStmt],
    code: &mut Vec<Flat>,
    labels: &mut HashMap<String, usize>,
    gotos: &mut Vec<(usize, String)>,
) {
    for s in body {
        match s {
            CStmt::Assign(v, e) => code.push(Flat::Assign(*v, e.clone())),
            CStmt::NondetAssign(v, n) => code.push(Flat::Nondet(*v, n.clone())),
            CStmt::If(c, t, e) => {
                let jz = code.len();
                code.push(Flat::JumpIfZero(c.clone(), 0));
                flatten(t, code, labels, gotos);
                let jmp = code.len();
                code.push(Flat::Jump(0));
                let else_at = code.len();
                flatten(e, code, labels, gotos);
                let end = code.len();
                code[jz] = Flat::JumpIfZero(c.clone(), else_at);
                code[jmp] = Flat::Jump(end);
            }
            CStmt::Goto(l) => {
                gotos.push((code.len(), l.clone()));
                code.push(Flat::Jump(0));
            }
            CStmt::Label(l) => {
                labels.insert(l.clone(), code.len());
            }
            CStmt::CallFn(f) => code.push(Flat::Call(f.clone())),
            CStmt::ErrorCall => code.push(Flat::Error),
            CStmt::Return => code.push(Flat::Return),
        }
    }
}

fn compile(body: &[CStmt]) -> Vec<Flat> {
    let mut code = Vec::new();
    let mut labels = HashMap::new();
    let mut gotos = Vec::new();
    flatten(body, &mut code, &mut labels, &mut gotos);
    for (at, l) in gotos {
        code[at] = Flat::Jump(labels[&l]);
    }
    code
}

/// Run the unit from its driver with EVM word semantics. Inputs come from
/// `inputs`, RBR nondets from `feed`; abstracted expressions take their exact
/// value, which is one of the behaviours the nondet call allows.
pub fn evaluate(
    cp: &CProgram,
    inputs: &BTreeMap<VarId, Word>,
    feed: &mut dyn NondetFeed,
    budget: usize,
) -> CVerdict {
    let code: HashMap<&str, Vec<Flat>> = cp
        .functions
        .iter()
        .map(|f| (f.name.as_str(), compile(&f.body)))
        .collect();
    let mut env: HashMap<VarId, Word> = HashMap::new();
    let mut frames: Vec<(&str, usize)> = vec![(cp.entry.as_str(), 0)];
    let mut steps = 0usize;
    while let Some(&(fname, pc)) = frames.last() {
        steps += 1;
        if steps > budget {
            return CVerdict::Unknown;
        }
        let Some(ins) = code.get(fname).and_then(|c| c.get(pc)) else {
            frames.pop();
            continue;
        };
        let mut next = pc + 1;
        match ins {
            Flat::Assign(v, e) => {
                let val = e.eval(&|x| env.get(&x).copied().unwrap_or_default());
                env.insert(*v, val);
            }
            Flat::Nondet(v, n) => {
                let val = match n {
                    CNondet::Rbr(o) => feed.next(*v, o),
                    CNondet::Input(x) => inputs.get(x).copied().unwrap_or_default(),
                    CNondet::Abstracted(e) => e.eval(&|x| env.get(&x).copied().unwrap_or_default()),
                };
                env.insert(*v, val);
            }
            Flat::JumpIfZero(c, t) => {
                if c.eval(&|x| env.get(&x).copied().unwrap_or_default())
                    .is_zero()
                {
                    next = *t;
                }
            }
            Flat::Jump(t) => next = *t,
            Flat::Call(f) => {
                frames.last_mut().unwrap().1 = next;
                let Some((name, _)) = code.get_key_value(f.as_str()) else {
                    continue;
                };
                frames.push((name, 0));
                continue;
            }
            Flat::Error => return CVerdict::Error,
            Flat::Return => {
                frames.pop();
                continue;
            }
        }
        frames.last_mut().unwrap().1 = next;
    }
    CVerdict::Completed
}
