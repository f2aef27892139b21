use super::{CNondet, CProgram, CStmt, GlobalInit, TypeFlag};
use crate::rbr::{BinOp, Expr, TernOp};
use std::fmt::Write;

struct Ctx {
    flag: TypeFlag,
}

impl Ctx {
    fn unsigned(&self) -> bool {
        self.flag == TypeFlag::UnsignedInt
    }

    fn lit(&self, v: u64) -> String {
        if self.unsigned() {
            format!("{v}u")
        } else {
            v.to_string()
        }
    }

    fn to_signed(&self, s: &str) -> String {
        if self.unsigned() {
            format!("((int){s})")
        } else {
            s.to_string()
        }
    }

    fn to_type(&self, s: String) -> String {
        if self.unsigned() {
            format!("(unsigned int)({s})")
        } else {
            s
        }
    }

    /// Render `e`, parenthesised unless atomic.
    fn atom(&self, e: &Expr) -> String {
        match e {
            Expr::Var(_) | Expr::Const(_) => self.expr(e),
            _ => {
                let s = self.expr(e);
                if s.starts_with('(') && matching_outer(&s) {
                    s
                } else {
                    format!("({s})")
                }
            }
        }
    }

    fn expr(&self, e: &Expr) -> String {
        match e {
            Expr::Var(v) => v.to_string(),
            Expr::Const(c) => self.lit(crate::word::as_u64(*c).expect("constant fits the C type")),
            Expr::Not(x) => format!("(!{})", self.atom(x)),
            Expr::Tern(op, a, b, n) => {
                let (a, b, n) = (self.atom(a), self.atom(b), self.atom(n));
                let z = self.lit(0);
                let inner = match op {
                    TernOp::AddMod => format!("({a} + {b})"),
                    TernOp::MulMod => format!("({a} * {b})"),
                };
                format!("({n} == {z} ? {z} : {inner} % {n})")
            }
            Expr::Bin(op, a, b) => {
                let (x, y) = (self.atom(a), self.atom(b));
                let z = self.lit(0);
                match op {
                    BinOp::Add => format!("({x} + {y})"),
                    BinOp::Sub => format!("({x} - {y})"),
                    BinOp::Mul => format!("({x} * {y})"),
                    BinOp::Div => format!("({y} == {z} ? {z} : {x} / {y})"),
                    BinOp::Mod => format!("({y} == {z} ? {z} : {x} % {y})"),
                    BinOp::SDiv => {
                        let q = self.to_type(format!(
                            "{} / {}",
                            self.to_signed(&x),
                            self.to_signed(&y)
                        ));
                        format!("({y} == {z} ? {z} : {q})")
                    }
                    BinOp::SMod => {
                        let q = self.to_type(format!(
                            "{} % {}",
                            self.to_signed(&x),
                            self.to_signed(&y)
                        ));
                        format!("({y} == {z} ? {z} : {q})")
                    }
                    BinOp::Slt => format!("({} < {})", self.to_signed(&x), self.to_signed(&y)),
                    BinOp::Sgt => format!("({} > {})", self.to_signed(&x), self.to_signed(&y)),
                    BinOp::SignExtend => self.signextend(&x, &y),
                    BinOp::Eq => format!("({x} == {y})"),
                    BinOp::Neq => format!("({x} != {y})"),
                    BinOp::Lt => format!("({x} < {y})"),
                    BinOp::Gt => format!("({x} > {y})"),
                    BinOp::Leq => format!("({x} <= {y})"),
                    BinOp::Geq => format!("({x} >= {y})"),
                    BinOp::And => format!("({x} && {y})"),
                    BinOp::Or => format!("({x} || {y})"),
                    BinOp::Exp => unreachable!("exponentiation is lowered before rendering"),
                }
            }
        }
    }

    /// Sign extension from byte `b` within the 32-bit C word: bytes 3 and
    /// above leave `x` unchanged.
    fn signextend(&self, b: &str, x: &str) -> String {
        let l = |v: u64| self.lit(v);
        let bits = format!("({} * {b} + {})", l(8), l(8));
        let sign = format!("({} << ({} * {b} + {}))", l(1), l(8), l(7));
        let mask = format!("(({} << {bits}) - {})", l(1), l(1));
        let low = format!("(({x} & {mask}) ^ {sign})");
        if self.unsigned() {
            let diff = format!("{} - {}", self.to_signed(&low), self.to_signed(&sign));
            format!("({b} >= {} ? {x} : {})", l(3), self.to_type(diff))
        } else {
            format!("(({b} < 0 || {b} >= 3) ? {x} : {low} - {sign})")
        }
    }
}

/// Whether the first `(` of `s` closes at its last character.
fn matching_outer(s: &str) -> bool {
    let mut depth = 0i32;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return i == s.len() - 1;
                }
            }
            _ => {}
        }
    }
    false
}

fn stmts(ctx: &Ctx, body: &[CStmt], indent: usize, out: &mut String) {
    let pad = "    ".repeat(indent);
    for s in body {
        match s {
            CStmt::Assign(v, e) => {
                let rhs = ctx.expr(e);
                let rhs = if matching_outer(&rhs) && rhs.starts_with('(') {
                    rhs[1..rhs.len() - 1].to_string()
                } else {
                    rhs
                };
                let _ = writeln!(out, "{pad}{v} = {rhs};");
            }
            CStmt::NondetAssign(v, n) => {
                let note = match n {
                    CNondet::Abstracted(e) => format!("  /* {e} */"),
                    _ => String::new(),
                };
                let _ = writeln!(out, "{pad}{v} = {}();{note}", ctx.flag.nondet_fn());
            }
            CStmt::If(c, t, e) => {
                let cond = ctx.expr(c);
                let cond = if matching_outer(&cond) && cond.starts_with('(') {
                    cond
                } else {
                    format!("({cond})")
                };
                let _ = writeln!(out, "{pad}if {cond} {{");
                stmts(ctx, t, indent + 1, out);
                if e.is_empty() {
                    let _ = writeln!(out, "{pad}}}");
                } else {
                    let _ = writeln!(out, "{pad}}} else {{");
                    stmts(ctx, e, indent + 1, out);
                    let _ = writeln!(out, "{pad}}}");
                }
            }
            CStmt::Goto(l) => {
                let _ = writeln!(out, "{pad}goto {l};");
            }
            CStmt::Label(l) => {
                // a label must precede a statement
                let _ = writeln!(out, "{l}:;");
            }
            CStmt::CallFn(f) => {
                let _ = writeln!(out, "{pad}{f}();");
            }
            CStmt::ErrorCall => {
                let _ = writeln!(out, "{pad}__VERIFIER_error();");
            }
            CStmt::Return => {
                let _ = writeln!(out, "{pad}return;");
            }
        }
    }
}

/// Deterministic C99 text of one translation unit.
pub fn render(cp: &CProgram) -> String {
    let ctx = Ctx { flag: cp.flag };
    let ty = cp.flag.c_type();
    let mut out = String::new();
    let _ = writeln!(out, "/* {} ({} mode) */", cp.function, cp.flag);
    let _ = writeln!(out, "extern void __VERIFIER_error(void);");
    let _ = writeln!(out, "extern {ty} {}(void);", cp.flag.nondet_fn());
    out.push('\n');
    for g in &cp.globals {
        let note = match g.init {
            GlobalInit::Nondet => "  /* nondet in driver */",
            GlobalInit::None => "",
        };
        let _ = writeln!(out, "{ty} {};{note}", g.var);
    }
    if !cp.globals.is_empty() {
        out.push('\n');
    }
    for f in &cp.functions {
        let _ = writeln!(out, "void {}(void);", f.name);
    }
    for f in &cp.functions {
        out.push('\n');
        let _ = writeln!(out, "void {}(void)\n{{", f.name);
        stmts(&ctx, &f.body, 1, &mut out);
        out.push_str("}\n");
    }
    let _ = write!(
        out,
        "\nint main(void)\n{{\n    {}();\n    return 0;\n}}\n",
        cp.entry
    );
    out
}
