use super::*;
use crate::asm::assemble;
use crate::bytecode::{decode, decode_bytes};
use crate::cfg::build_cfg;
use crate::rbr::{decompile, interpret_rbr, RbrVerdict, ZeroFeed};
use std::process::Command;

fn rbr(src: &str) -> RbrProgram {
    let p = decode_bytes(&assemble(src).unwrap());
    let c = build_cfg(&p).unwrap();
    let f = c.functions.values().next().unwrap().clone();
    decompile(&c, &f).unwrap()
}

fn count_gotos(f: &CFunction) -> usize {
    fn go(s: &[CStmt]) -> usize {
        s.iter()
            .map(|x| match x {
                CStmt::Goto(_) => 1,
                CStmt::If(_, t, e) => go(t) + go(e),
                _ => 0,
            })
            .sum()
    }
    go(&f.body)
}

pub(crate) fn compiles(text: &str) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("unit.c");
    std::fs::write(&path, text).map_err(|e| e.to_string())?;
    let out = Command::new("cc")
        .args([
            "-std=c99",
            "-Wall",
            "-Wextra",
            "-Werror",
            "-pedantic",
            "-c",
            "-o",
        ])
        .arg(dir.path().join("unit.o"))
        .arg(&path)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

const LOOP: &str = "
    PUSH 0
    head: JUMPDEST DUP1 PUSH 4 CALLDATALOAD GT ISZERO PUSH @done JUMPI
    PUSH 1 ADD PUSH @head JUMP
    done: JUMPDEST STOP";

#[test]
fn acyclic_has_no_labels() {
    let rp = rbr("PUSH 4 CALLDATALOAD PUSH @ok JUMPI INVALID ok: JUMPDEST STOP");
    let part = scc_loops(&rp);
    assert!(part.is_loop.iter().all(|l| !l));
    let cp = emit(&rp, TypeFlag::SignedInt);
    assert!(cp.functions.iter().all(|f| f.labels.is_empty()));
    let text = render(&cp);
    assert!(text.contains("__VERIFIER_error();"));
    assert!(!text.contains("goto"));
    compiles(&text).unwrap();
}

#[test]
fn simple_loop_one_goto() {
    let rp = rbr(LOOP);
    let part = scc_loops(&rp);
    assert_eq!(part.loops().count(), 1);
    let cp = emit(&rp, TypeFlag::SignedInt);
    let merged: Vec<_> = cp
        .functions
        .iter()
        .filter(|f| !f.labels.is_empty())
        .collect();
    assert_eq!(merged.len(), 1);
    assert_eq!(count_gotos(merged[0]), 1);
    assert_eq!(merged[0].labels.len(), 1);
    compiles(&render(&cp)).unwrap();
}

#[test]
fn two_loops_two_functions() {
    let rp = rbr("
        PUSH 0
        a: JUMPDEST DUP1 PUSH 4 CALLDATALOAD GT ISZERO PUSH @b0 JUMPI
        PUSH 1 ADD PUSH @a JUMP
        b0: JUMPDEST POP PUSH 0
        b: JUMPDEST DUP1 PUSH 36 CALLDATALOAD GT ISZERO PUSH @done JUMPI
        PUSH 1 ADD PUSH @b JUMP
        done: JUMPDEST STOP");
    let part = scc_loops(&rp);
    assert_eq!(part.loops().count(), 2);
    let cp = emit(&rp, TypeFlag::SignedInt);
    let merged: Vec<_> = cp
        .functions
        .iter()
        .filter(|f| !f.labels.is_empty())
        .collect();
    assert_eq!(merged.len(), 2);
    for f in merged {
        assert_eq!(f.labels.len(), 1);
        assert_eq!(count_gotos(f), 1);
    }
    compiles(&render(&cp)).unwrap();
}

#[test]
fn nondet_and_state_init() {
    let rp = rbr("CALLER PUSH 2 SLOAD PUSH 0 SLOAD PUSH 1 SLOAD STOP");
    let cp = emit(&rp, TypeFlag::SignedInt);
    let text = render(&cp);
    assert!(text.contains("s_0 = __VERIFIER_nondet_int();"));
    assert!(text.contains("g_2 = __VERIFIER_nondet_int();"));
    assert!(text.contains("int g_2;"));
    let driver = text.split("void driver(void)\n{").nth(1).unwrap();
    assert!(driver.contains("g_0 = __VERIFIER_nondet_int();"));
    compiles(&text).unwrap();
}

#[test]
fn empty_program_unit() {
    let c = build_cfg(&decode("0x").unwrap()).unwrap();
    assert!(c.functions.is_empty());
    let rp = crate::rbr::RbrProgram::new("fallback".into(), String::new(), Vec::new());
    let text = render(&emit(&rp, TypeFlag::SignedInt));
    assert!(text.contains("void driver(void)"));
    assert!(text.contains("int main(void)"));
    compiles(&text).unwrap();
}

#[test]
fn signed_ops_and_casts() {
    let src = "PUSH 4 CALLDATALOAD PUSH 36 CALLDATALOAD SLT
               PUSH 4 CALLDATALOAD PUSH 36 CALLDATALOAD SGT
               PUSH 4 CALLDATALOAD PUSH 36 CALLDATALOAD SDIV
               PUSH 4 CALLDATALOAD PUSH 36 CALLDATALOAD SMOD
               PUSH 4 CALLDATALOAD PUSH 1 SIGNEXTEND
               PUSH 4 CALLDATALOAD PUSH 36 CALLDATALOAD LT
               PUSH 4 CALLDATALOAD PUSH 36 CALLDATALOAD DIV STOP";
    let rp = rbr(src);
    let int = render(&emit(&rp, TypeFlag::SignedInt));
    assert!(!int.contains("(int)"));
    assert!(int.contains("s_1 = s_1 < s_0;") || int.contains("s_0 = s_1 < s_0;"));
    let uint = render(&emit(&rp, TypeFlag::UnsignedInt));
    assert_eq!(uint.matches("(int)").count(), 10);
    assert!(uint.contains("((int)s_1) < ((int)s_0)"));
    assert!(uint.contains("unsigned int s_0;"));
    compiles(&int).unwrap();
    compiles(&uint).unwrap();
}

#[test]
fn wide_constants_are_abstracted() {
    let rp = rbr("PUSH 0xffffffffffffffffffff PUSH 2 PUSH 4 CALLDATALOAD EXP PUSH 40 PUSH 4 CALLDATALOAD EXP STOP");
    let cp = emit(&rp, TypeFlag::SignedInt);
    let text = render(&cp);
    assert!(text.contains("s_0 = __VERIFIER_nondet_int();  /* 0xffffffffffffffffffff */"));
    assert!(text.contains("s_1 = s_2 * s_2;"));
    assert!(text.contains("s_2 = __VERIFIER_nondet_int();  /* s_3 ^ 40 */"));
    compiles(&text).unwrap();
}

#[test]
fn evaluator_agrees_on_simple_cases() {
    for (src, invalid_at) in [
        (
            "PUSH 4 CALLDATALOAD PUSH @ok JUMPI INVALID ok: JUMPDEST STOP",
            Some(0u64),
        ),
        (LOOP, None),
    ] {
        let rp = rbr(src);
        let cp = emit(&rp, TypeFlag::SignedInt);
        for v in [0u64, 1, 5] {
            let cd = crate::exec::encode_calldata(None, &[Word::from(v)]);
            let inputs = rp.inputs_for(&cd, &Default::default());
            let r = interpret_rbr(&rp, &inputs, &mut ZeroFeed, 10_000);
            let c = evaluate(&cp, &inputs, &mut ZeroFeed, 10_000);
            assert_eq!(r == RbrVerdict::Invalid, c == CVerdict::Error);
            assert_eq!(r == RbrVerdict::Invalid, invalid_at == Some(v));
        }
    }
}

#[test]
fn locals_zeroed_at_first_use() {
    let rp = rbr("PUSH 0x40 MLOAD PUSH @t JUMPI STOP t: JUMPDEST PUSH 7 PUSH 0x40 MSTORE STOP");
    let cp = emit(&rp, TypeFlag::SignedInt);
    let entry = cp.function(&rp.entry).unwrap();
    assert_eq!(
        entry.body[0],
        CStmt::Assign(crate::rbr::VarId::Local(0), Expr::Const(Word::ZERO))
    );
    let text = render(&cp);
    assert_eq!(text.matches("l_0 = 0;").count(), 1);
}
