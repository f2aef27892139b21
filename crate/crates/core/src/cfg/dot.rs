use super::{Cfg, Terminator};
use std::fmt::Write;

/// Graphviz rendering, one node per block clone.
pub fn to_dot(c: &Cfg, name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "digraph \"{}\" {{", name.replace('"', "'"));
    let _ = writeln!(s, "  node [shape=box, fontname=monospace];");
    for b in c.blocks.values() {
        let mut label = format!("block{} (depth {})\\l", b.id, b.entry_stack_depth);
        for ins in &b.instrs {
            match ins.push_data {
                Some(v) => {
                    let _ = write!(label, "{:04x}: {} {:#x}\\l", ins.pc, ins.opcode, v);
                }
                None => {
                    let _ = write!(label, "{:04x}: {}\\l", ins.pc, ins.opcode);
                }
            }
        }
        let style = if b.terminator == Terminator::Invalid {
            ", color=red"
        } else if b.truncated.is_some() || b.unresolved {
            ", style=dashed"
        } else {
            ""
        };
        let _ = writeln!(s, "  \"{}\" [label=\"{}\"{}];", b.id, label, style);
        for (i, succ) in b.successors.iter().enumerate() {
            let edge = match (b.terminator, i) {
                (Terminator::Jumpi, 0) => " [label=T]",
                (Terminator::Jumpi, _) => " [label=F]",
                _ => "",
            };
            let _ = writeln!(s, "  \"{}\" -> \"{}\"{};", b.id, succ, edge);
        }
    }
    s.push_str("}\n");
    s
}
