use super::*;
use crate::asm::assemble;
use crate::bytecode::{decode, decode_bytes, Program};
use crate::cfg::{build_cfg, FunctionKey};
use crate::exec::{self, Storage, Verdict};
use proptest::prelude::*;

fn rbr_of(p: &Program) -> RbrProgram {
    let c = build_cfg(p).unwrap();
    let f = c.functions.values().next().unwrap().clone();
    decompile(&c, &f).unwrap()
}

fn rbr_src(src: &str) -> (Program, RbrProgram) {
    let p = decode_bytes(&assemble(src).unwrap());
    let rp = rbr_of(&p);
    (p, rp)
}

fn body(rp: &RbrProgram, name: &str) -> Vec<String> {
    rp.rule(name)
        .unwrap()
        .body
        .iter()
        .map(|i| match i {
            RbrInstr::Assign(v, e) => format!("{v} := {e}"),
            RbrInstr::Nondet(v, _) => format!("nondet({v})"),
            other => format!("{other:?}"),
        })
        .collect()
}

#[test]
fn add_stop() {
    let rp = rbr_of(&decode("0x600160020100").unwrap());
    assert_eq!(
        body(&rp, "block0"),
        ["s_0 := 1", "s_1 := 2", "s_0 := s_1 + s_0", "Stop"]
    );
    assert_eq!(
        interpret_rbr(&rp, &Default::default(), &mut ZeroFeed, 100),
        RbrVerdict::Stop
    );
}

#[test]
fn lone_invalid() {
    let rp = rbr_of(&decode("0xfe").unwrap());
    assert_eq!(
        interpret_rbr(&rp, &Default::default(), &mut ZeroFeed, 100),
        RbrVerdict::Invalid
    );
}

#[test]
fn unknown_sload_is_nondet() {
    let (_, rp) = rbr_src("CALLDATASIZE SLOAD STOP");
    assert_eq!(body(&rp, "block0"), ["nondet(s_0)", "nondet(s_0)", "Stop"]);
}

#[test]
fn bitwise_is_abstracted_unless_constant() {
    let (_, rp) = rbr_src("PUSH 0 CALLDATALOAD PUSH 0xff AND STOP");
    assert_eq!(body(&rp, "block0")[3], "nondet(s_0)");
    let (_, rp) = rbr_src("PUSH 0x0f PUSH 0xff AND STOP");
    assert_eq!(body(&rp, "block0")[2], "s_0 := 15");
}

#[test]
fn state_and_params() {
    let (_, rp) = rbr_src("PUSH 4 CALLDATALOAD PUSH 7 SSTORE PUSH 7 SLOAD STOP");
    assert_eq!(rp.state_slots, vec![Word::from(7u8)]);
    assert_eq!(rp.params.iter().copied().collect::<Vec<_>>(), vec![0]);
    let b = body(&rp, "block0");
    assert!(b.contains(&"s_0 := p_0".to_string()));
    assert!(b.contains(&"g_0 := s_0".to_string()));
    assert!(b.contains(&"s_0 := g_0".to_string()));
}

#[test]
fn unknown_sstore_havocs_used_slots() {
    let (_, rp) = rbr_src("PUSH 1 PUSH 0 CALLDATALOAD SSTORE PUSH 3 SLOAD PUSH 5 SLOAD STOP");
    let nondets = rp
        .rule("block0")
        .unwrap()
        .body
        .iter()
        .filter(|i| matches!(i, RbrInstr::Nondet(VarId::State(_), _)))
        .count();
    assert_eq!(nondets, 2);
}

#[test]
fn memory_locals() {
    let (_, rp) = rbr_src("PUSH 9 PUSH 0x40 MSTORE PUSH 0x40 MLOAD PUSH 0x41 MLOAD STOP");
    assert_eq!(rp.local_words, vec![Word::from(2u8)]);
    let b = body(&rp, "block0");
    assert!(b.contains(&"l_0 := s_0".to_string()));
    assert!(b.contains(&"nondet(fresh_0)".to_string()));
}

#[test]
fn fused_guard_geq() {
    let (_, rp) = rbr_src(
        "PUSH 4 CALLDATALOAD PUSH 1 SLOAD DUP2 LT ISZERO PUSH @oob JUMPI STOP
         oob: JUMPDEST INVALID",
    );
    let j = rp.rule("jump0").unwrap();
    let Continuation::Branch {
        guard,
        then_call,
        else_call,
    } = &j.cont
    else {
        panic!()
    };
    assert_eq!(guard.to_string(), "geq(s_2, s_1)");
    assert_eq!(then_call, &Target::Rule("block14".into()));
    assert_eq!(else_call, &Target::Rule("block13".into()));
    let notes = array_length_note(&rp);
    assert_eq!(notes.len(), 1);
    assert_eq!(notes[0].slot, Word::from(1u8));
    assert_eq!(notes[0].text, "out-of-bounds check");
}

#[test]
fn guard_shapes() {
    let g = |src: &str| {
        let (_, rp) = rbr_src(src);
        match &rp.rule("jump0").unwrap().cont {
            Continuation::Branch { guard, .. } => guard.to_string(),
            _ => unreachable!(),
        }
    };
    let tail = "STOP t: JUMPDEST STOP";
    assert_eq!(
        g(&format!("PUSH 4 CALLDATALOAD PUSH @t JUMPI {tail}")),
        "neq(s_0, 0)"
    );
    assert_eq!(
        g(&format!("PUSH 4 CALLDATALOAD ISZERO PUSH @t JUMPI {tail}")),
        "eq(s_0, 0)"
    );
    assert_eq!(
        g(&format!(
            "PUSH 4 CALLDATALOAD ISZERO ISZERO PUSH @t JUMPI {tail}"
        )),
        "neq(s_0, 0)"
    );
    assert_eq!(
        g(&format!(
            "PUSH 1 PUSH 4 CALLDATALOAD SGT ISZERO PUSH @t JUMPI {tail}"
        )),
        "not(sgt(s_1, s_0))"
    );
    assert_eq!(
        g(&format!(
            "PUSH 1 PUSH 4 CALLDATALOAD GT PUSH @t JUMPI {tail}"
        )),
        "gt(s_1, s_0)"
    );
    assert_eq!(
        g(&format!(
            "PUSH 1 PUSH 4 CALLDATALOAD EQ ISZERO PUSH @t JUMPI {tail}"
        )),
        "neq(s_1, s_0)"
    );
}

#[test]
fn exp_forms() {
    let (_, rp) = rbr_src("PUSH 3 PUSH 4 CALLDATALOAD EXP STOP");
    assert_eq!(body(&rp, "block0")[3], "s_0 := s_1 ^ 3");
    let (_, rp) = rbr_src("PUSH 3 PUSH 2 EXP STOP");
    assert_eq!(body(&rp, "block0")[2], "s_0 := 8");
    let (_, rp) = rbr_src("PUSH 4 CALLDATALOAD PUSH 2 EXP STOP");
    assert_eq!(body(&rp, "block0")[3], "nondet(s_0)");
}

#[test]
fn guard_dependent_invalid() {
    // assert(p_0 != 0)
    let (p, rp) = rbr_src("PUSH 4 CALLDATALOAD PUSH @ok JUMPI INVALID ok: JUMPDEST STOP");
    for v in exec::standard_values() {
        let cd = exec::encode_calldata(None, &[v]);
        let inputs = rp.inputs_for(&cd, &Storage::new());
        let r = interpret_rbr(&rp, &inputs, &mut ZeroFeed, 1000);
        let e = exec::run_evm(&p, &cd, &Storage::new(), 1000);
        assert_eq!(r == RbrVerdict::Invalid, e == Verdict::InvalidTrap);
        assert_eq!(r == RbrVerdict::Invalid, v.is_zero());
    }
}

#[test]
fn discarded_function_is_rejected() {
    let p = decode_bytes(
        &assemble(
            "PUSH @ret PUSH @f JUMP ret: JUMPDEST STOP
             f: JUMPDEST PUSH @back PUSH @f JUMP back: JUMPDEST JUMP",
        )
        .unwrap(),
    );
    let c = build_cfg(&p).unwrap();
    let f = &c.functions[&FunctionKey::Fallback];
    assert!(matches!(decompile(&c, f), Err(RbrError::Discarded(_))));
}

#[test]
fn replay_follows_abstracted_values() {
    // branch on a hashed value and on an unknown-slot load
    let src = "PUSH 32 PUSH 0 SHA3 PUSH 1 AND PUSH @a JUMPI STOP
               a: JUMPDEST PUSH 4 CALLDATALOAD SLOAD PUSH @b JUMPI STOP
               b: JUMPDEST INVALID";
    let (p, rp) = rbr_src(src);
    for v in [0u8, 1, 2] {
        let cd = exec::encode_calldata(None, &[Word::from(v)]);
        let mut storage = Storage::new();
        storage.insert(Word::from(1u8), Word::from(5u8));
        let (out, mut feed) = ReplayFeed::record(&p, &cd, &storage, 1000);
        let r = interpret_rbr(&rp, &rp.inputs_for(&cd, &storage), &mut feed, 1000);
        assert_eq!(
            r == RbrVerdict::Invalid,
            out.verdict == Verdict::InvalidTrap
        );
    }
}

#[derive(Debug, Clone)]
enum Op {
    Push(u64),
    Param(u8),
    Simple(u8),
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        prop_oneof![
            Just(0u64),
            Just(1),
            Just(2),
            Just(31),
            Just(u64::MAX),
            any::<u64>()
        ]
        .prop_map(Op::Push),
        (0u8..3).prop_map(Op::Param),
        prop::sample::select(vec![
            0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0b, 0x10, 0x11, 0x12, 0x13,
            0x14, 0x15, 0x50, 0x80, 0x81, 0x82, 0x90, 0x91,
        ])
        .prop_map(Op::Simple),
    ]
}

/// Straight-line arithmetic followed by a conditional INVALID, emitted as
/// bytecode while keeping the stack depth valid.
fn build(ops: &[Op], store: bool) -> Vec<u8> {
    let mut code = Vec::new();
    let mut depth = 0usize;
    for op in ops {
        match op {
            Op::Push(v) => {
                code.push(0x67);
                code.extend_from_slice(&v.to_be_bytes());
                depth += 1;
            }
            Op::Param(i) => {
                code.extend_from_slice(&[0x60, 4 + 32 * i, 0x35]);
                depth += 1;
            }
            Op::Simple(b) => {
                let o = crate::bytecode::Opcode(*b);
                let need = match o.class() {
                    crate::bytecode::OpClass::Dup(n) => n as usize,
                    crate::bytecode::OpClass::Swap(n) => n as usize + 1,
                    _ => o.pops(),
                };
                if depth < need {
                    continue;
                }
                code.push(*b);
                depth = match o.class() {
                    crate::bytecode::OpClass::Dup(_) => depth + 1,
                    crate::bytecode::OpClass::Swap(_) => depth,
                    _ => depth - o.pops() + o.pushes(),
                };
            }
        }
    }
    if store && depth >= 1 {
        // keep a copy in storage slot 9 and reload it
        code.extend_from_slice(&[0x80, 0x60, 9, 0x55, 0x60, 9, 0x54, 0x50]);
    }
    if depth == 0 {
        code.extend_from_slice(&[0x60, 4, 0x35]);
    }
    let target = code.len() + 5;
    code.extend_from_slice(&[
        0x61,
        (target >> 8) as u8,
        target as u8,
        0x57,
        0xfe,
        0x5b,
        0x00,
    ]);
    code
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn abstraction_free_matches_exec(ops in prop::collection::vec(op_strategy(), 0..24), store in any::<bool>(), args in prop::collection::vec(prop_oneof![Just(0u64), Just(1), Just(2), any::<u64>()], 3)) {
        let p = decode_bytes(&build(&ops, store));
        let rp = rbr_of(&p);
        prop_assert!(rp.is_abstraction_free());
        let args: Vec<Word> = args.into_iter().map(Word::from).collect();
        let cd = exec::encode_calldata(None, &args);
        let storage = Storage::new();
        let e = exec::run_evm(&p, &cd, &storage, 10_000);
        let mut refuse = |_: VarId, _: &NondetOrigin| -> Word { panic!("nondet in abstraction-free program") };
        let r = interpret_rbr(&rp, &rp.inputs_for(&cd, &storage), &mut refuse, 10_000);
        prop_assert_eq!(r == RbrVerdict::Invalid, e == Verdict::InvalidTrap);
    }
}
