use super::*;
use crate::asm::assemble;
use crate::bytecode::{decode, decode_bytes};

fn cfg_of(src: &str) -> Cfg {
    build_cfg(&decode_bytes(&assemble(src).unwrap())).unwrap()
}

#[test]
fn jump_to_jumpdest() {
    // PUSH1 5 points past the end; the JUMPDEST of 0x6005565b00 is at pc 3
    let e = build_cfg(&decode("0x6005565b00").unwrap()).unwrap_err();
    assert!(matches!(e, CfgError::MalformedJumpTarget { .. }));
    let c = build_cfg(&decode("0x6003565b00").unwrap()).unwrap();
    let b0 = c.block(BlockId::new(0, 0));
    assert_eq!(b0.terminator, Terminator::Jump);
    assert_eq!(b0.successors, vec![BlockId::new(3, 0)]);
    assert_eq!(c.block(BlockId::new(3, 0)).terminator, Terminator::Stop);
}

#[test]
fn jumpi_successors_branch_then_fallthrough() {
    // PUSH1 1; PUSH1 6; JUMPI; INVALID; JUMPDEST; STOP
    let c = build_cfg(&decode("0x6001600657fe5b00").unwrap()).unwrap();
    assert_eq!(c.blocks.len(), 2 + 1);
    let b0 = c.block(BlockId::new(0, 0));
    assert_eq!(b0.terminator, Terminator::Jumpi);
    assert_eq!(b0.successors, vec![BlockId::new(6, 0), BlockId::new(5, 0)]);
    assert!(c.block(BlockId::new(5, 0)).has_invalid());
    let f = &c.functions[&FunctionKey::Fallback];
    assert!(c.reaches_invalid(f));
}

#[test]
fn split_partitions_instructions() {
    let p = decode("0x6005565b00").unwrap();
    let blocks = split_blocks(&p);
    let starts: Vec<usize> = blocks.iter().map(|b| b.start_pc()).collect();
    assert_eq!(starts, vec![0, 3]);
    let total: usize = blocks.iter().map(|b| b.instrs.len()).sum();
    assert_eq!(total, p.instructions().len());
}

#[test]
fn internal_function_is_cloned_per_return_site() {
    let c = cfg_of(
        "PUSH @r1 PUSH @f JUMP
         r1: JUMPDEST PUSH @r2 PUSH @f JUMP
         r2: JUMPDEST STOP
         f: JUMPDEST JUMP",
    );
    let clones: Vec<_> = c
        .blocks
        .keys()
        .filter(|id| {
            c.blocks[id].instrs.len() == 2
                && c.blocks[id].terminator == Terminator::Jump
                && c.blocks[id].entry_stack_depth == 1
        })
        .collect();
    assert_eq!(clones.len(), 2);
    assert!(c.unresolved_jumps.is_empty());
    assert!(c.check_invariants().is_ok());
}

#[test]
fn unknown_target_is_unresolved() {
    let c = cfg_of("CALLDATASIZE JUMP t: JUMPDEST STOP");
    assert_eq!(c.unresolved_jumps.len(), 1);
    assert!(c.block(BlockId::new(0, 0)).unresolved);
}

#[test]
fn underflow_is_error() {
    let p = decode_bytes(&assemble("ADD STOP").unwrap());
    assert_eq!(
        build_cfg(&p).unwrap_err(),
        CfgError::StackUnderflow(BlockId::new(0, 0))
    );
}

#[test]
fn recursion_is_detected() {
    // f pushes its own return address and calls itself
    let c = cfg_of(
        "PUSH @ret PUSH @f JUMP
         ret: JUMPDEST STOP
         f: JUMPDEST PUSH @back PUSH @f JUMP
         back: JUMPDEST JUMP",
    );
    assert!(!detect_recursion(&c).is_empty());
    let f = &c.functions[&FunctionKey::Fallback];
    assert_eq!(c.discard_reason(f), Some(DiscardReason::Recursion));
}

#[test]
fn loop_has_one_header() {
    let c = cfg_of(
        "PUSH 0
         head: JUMPDEST DUP1 PUSH 10 GT ISZERO PUSH @done JUMPI
         PUSH 1 ADD PUSH @head JUMP
         done: JUMPDEST STOP",
    );
    let heads: Vec<_> = c.blocks.keys().filter(|id| id.pc == 2).collect();
    assert_eq!(heads.len(), 1);
}

#[test]
fn dispatcher_functions() {
    let c = cfg_of(
        "PUSH 0 CALLDATALOAD PUSH 0xe0 SHR
         DUP1 PUSH4 0xcafebabe EQ PUSH @a JUMPI
         DUP1 PUSH4 0xdeadbeef EQ PUSH @b JUMPI
         PUSH 0 DUP1 REVERT
         a: JUMPDEST STOP
         b: JUMPDEST INVALID",
    );
    assert_eq!(c.functions.len(), 2);
    let fa = &c.functions[&FunctionKey::Selector(Selector([0xca, 0xfe, 0xba, 0xbe]))];
    let fb = &c.functions[&FunctionKey::Selector(Selector([0xde, 0xad, 0xbe, 0xef]))];
    assert!(!c.reaches_invalid(fa));
    assert!(c.reaches_invalid(fb));
    assert_eq!(fa.name, "0xcafebabe");
    assert!(to_dot(&c, "d").contains("digraph"));
}

#[test]
fn trace_matching() {
    let src = "PUSH 0 CALLDATALOAD PUSH @t JUMPI PUSH 0 PUSH @t JUMP t: JUMPDEST STOP";
    let p = decode_bytes(&assemble(src).unwrap());
    let c = build_cfg(&p).unwrap();
    let mut tr = crate::exec::PcTrace::default();
    crate::exec::execute(&p, &[], &Default::default(), 1000, &mut tr);
    assert!(c.match_trace(&tr.0).is_ok());
}
