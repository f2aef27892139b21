use super::{BinOp, Continuation, Expr, RbrInstr, RbrProgram, Rule, Target, VarId};
use crate::word::Word;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ArrayNote {
    pub rule: String,
    pub index: VarId,
    pub length: VarId,
    /// Storage slot the length was loaded from.
    pub slot: Word,
    pub text: String,
}

/// Does `target` reach `Invalid` through straight-line block rules?
fn leads_to_invalid(rp: &RbrProgram, target: &Target) -> bool {
    let mut cur = target;
    for _ in 0..64 {
        let Target::Rule(name) = cur else {
            return false;
        };
        let Some(r) = rp.rule(name) else {
            return false;
        };
        if r.has_invalid() {
            return true;
        }
        match &r.cont {
            Continuation::Next(t) => cur = t,
            Continuation::Branch { .. } => return false,
        }
    }
    false
}

/// Follow copies backwards through `body` to the storage variable `v`
/// was loaded from.
fn state_source(body: &[RbrInstr], mut v: VarId) -> Option<VarId> {
    for ins in body.iter().rev() {
        if let RbrInstr::Assign(dst, e) = ins {
            if *dst == v {
                match e {
                    Expr::Var(g @ VarId::State(_)) => return Some(*g),
                    Expr::Var(src) => v = *src,
                    _ => return None,
                }
            }
        }
    }
    None
}

/// Guards `geq(i, n)` / `lt(i, n)` that protect an `Invalid`, where `n` was
/// loaded from a constant storage slot: candidate array-bounds checks.
pub fn array_length_note(rp: &RbrProgram) -> Vec<ArrayNote> {
    let mut out = Vec::new();
    for r in &rp.rules {
        let Continuation::Branch {
            guard,
            then_call,
            else_call,
        } = &r.cont
        else {
            continue;
        };
        let (op, a, b) = match guard {
            Expr::Bin(op @ (BinOp::Geq | BinOp::Lt), a, b) => (*op, a, b),
            _ => continue,
        };
        let trap_branch = if op == BinOp::Geq {
            then_call
        } else {
            else_call
        };
        if !leads_to_invalid(rp, trap_branch) {
            continue;
        }
        let (Expr::Var(index), Expr::Var(length)) = (a.as_ref(), b.as_ref()) else {
            continue;
        };
        let Some(body) = predecessor_body(rp, r) else {
            continue;
        };
        if let Some(VarId::State(g)) = state_source(body, *length) {
            out.push(ArrayNote {
                rule: r.name.clone(),
                index: *index,
                length: *length,
                slot: rp.state_slots[g as usize],
                text: "out-of-bounds check".into(),
            });
        }
    }
    out
}

fn predecessor_body<'a>(rp: &'a RbrProgram, jump: &Rule) -> Option<&'a [RbrInstr]> {
    rp.rules
        .iter()
        .find(|b| b.block == jump.block && b.name != jump.name)
        .map(|b| b.body.as_slice())
}
