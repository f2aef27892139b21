//! Abstract Integer C emission in SV-COMP form.
//!
//! Each rule becomes a parameterless `void` function. Rules in one loop
//! component are merged into a single function per entry rule, with
//! back-edges lowered to `goto`. Every variable is a global; state and
//! parameters are initialised with `__VERIFIER_nondet_*` in the driver.

mod eval;
mod render;
mod scc;

pub use eval::{evaluate, CVerdict};
pub use render::render;
pub use scc::{scc_loops, LoopPartition};

use crate::rbr::{BinOp, Continuation, Expr, NondetOrigin, RbrInstr, RbrProgram, Target, VarId};
use crate::word::Word;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, serde::Serialize)]
pub enum TypeFlag {
    #[default]
    #[serde(rename = "int")]
    SignedInt,
    /// `unsigned int`, casting to `int` for the sign-specific operations.
    #[serde(rename = "uint")]
    UnsignedInt,
}

impl TypeFlag {
    pub fn c_type(self) -> &'static str {
        match self {
            TypeFlag::SignedInt => "int",
            TypeFlag::UnsignedInt => "unsigned int",
        }
    }

    pub fn nondet_fn(self) -> &'static str {
        match self {
            TypeFlag::SignedInt => "__VERIFIER_nondet_int",
            TypeFlag::UnsignedInt => "__VERIFIER_nondet_uint",
        }
    }

    /// Largest literal the C type holds.
    pub fn max_literal(self) -> Word {
        match self {
            TypeFlag::SignedInt => Word::from(i32::MAX as u64),
            TypeFlag::UnsignedInt => Word::from(u32::MAX as u64),
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            TypeFlag::SignedInt => "int",
            TypeFlag::UnsignedInt => "uint",
        }
    }
}

impl fmt::Display for TypeFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for TypeFlag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "int" | "signed_int" => Ok(TypeFlag::SignedInt),
            "uint" | "unsigned_int" => Ok(TypeFlag::UnsignedInt),
            other => Err(format!(
                "unknown type flag {other:?} (expected int or uint)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CNondet {
    /// An RBR nondet definition.
    Rbr(NondetOrigin),
    /// Initial value of a state variable or parameter.
    Input(VarId),
    /// An expression the C type cannot represent, e.g. a 256-bit constant.
    Abstracted(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CStmt {
    Assign(VarId, Expr),
    NondetAssign(VarId, CNondet),
    If(Expr, Vec<CStmt>, Vec<CStmt>),
    Goto(String),
    Label(String),
    CallFn(String),
    ErrorCall,
    Return,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalInit {
    None,
    Nondet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalDecl {
    pub var: VarId,
    pub init: GlobalInit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CFunction {
    pub name: String,
    pub body: Vec<CStmt>,
    pub labels: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct CProgram {
    pub flag: TypeFlag,
    /// Public function this unit verifies.
    pub function: String,
    pub globals: Vec<GlobalDecl>,
    pub functions: Vec<CFunction>,
    /// Name of the driver function called from `main`.
    pub entry: String,
}

pub const DRIVER: &str = "driver";

impl CProgram {
    pub fn function(&self, name: &str) -> Option<&CFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Number of `__VERIFIER_error()` call sites.
    pub fn error_calls(&self) -> usize {
        fn count(stmts: &[CStmt]) -> usize {
            stmts
                .iter()
                .map(|s| match s {
                    CStmt::ErrorCall => 1,
                    CStmt::If(_, t, e) => count(t) + count(e),
                    _ => 0,
                })
                .sum()
        }
        self.functions.iter().map(|f| count(&f.body)).sum()
    }
}

/// Label used for a merged rule.
pub fn label_name(rule: &str) -> String {
    format!("L_{rule}")
}

/// Unroll `x^e` up to this exponent; larger exponents are abstracted.
const MAX_UNROLL: u64 = 16;

fn lower_expr(e: &Expr, flag: TypeFlag) -> Option<Expr> {
    let max = flag.max_literal();
    Some(match e {
        Expr::Const(c) if *c > max => return None,
        Expr::Var(_) | Expr::Const(_) => e.clone(),
        Expr::Bin(BinOp::Exp, a, b) => {
            let Expr::Const(k) = b.as_ref() else {
                return None;
            };
            let k = crate::word::as_u64(*k).filter(|k| *k <= MAX_UNROLL)?;
            let base = lower_expr(a, flag)?;
            if k == 0 {
                return Some(Expr::Const(Word::from(1u8)));
            }
            let mut acc = base.clone();
            for _ in 1..k {
                acc = Expr::bin(BinOp::Mul, acc, base.clone());
            }
            acc
        }
        Expr::Bin(op, a, b) => Expr::bin(*op, lower_expr(a, flag)?, lower_expr(b, flag)?),
        Expr::Tern(op, a, b, c) => Expr::Tern(
            *op,
            Box::new(lower_expr(a, flag)?),
            Box::new(lower_expr(b, flag)?),
            Box::new(lower_expr(c, flag)?),
        ),
        Expr::Not(x) => Expr::negate(lower_expr(x, flag)?),
    })
}

struct Emitter<'a> {
    rp: &'a RbrProgram,
    flag: TypeFlag,
    /// Extra globals standing in for guards the C type cannot express.
    extra: u32,
}

impl Emitter<'_> {
    fn translate_body(&self, instrs: &[RbrInstr], out: &mut Vec<CStmt>) -> bool {
        for ins in instrs {
            match ins {
                RbrInstr::Assign(v, e) => match lower_expr(e, self.flag) {
                    Some(l) => out.push(CStmt::Assign(*v, l)),
                    None => out.push(CStmt::NondetAssign(*v, CNondet::Abstracted(e.clone()))),
                },
                RbrInstr::Nondet(v, o) => out.push(CStmt::NondetAssign(*v, CNondet::Rbr(*o))),
                RbrInstr::Invalid => {
                    out.push(CStmt::ErrorCall);
                    out.push(CStmt::Return);
                    return true;
                }
                RbrInstr::Revert | RbrInstr::Stop => {
                    out.push(CStmt::Return);
                    return true;
                }
            }
        }
        false
    }

    fn emit_target(
        &mut self,
        t: &Target,
        scope: &Scope,
        placed: &mut HashSet<String>,
        out: &mut Vec<CStmt>,
    ) {
        match t {
            Target::Halt => out.push(CStmt::Return),
            Target::Rule(r) if scope.members.contains(r.as_str()) => {
                self.emit_rule(r, scope, placed, out)
            }
            Target::Rule(r) => {
                out.push(CStmt::CallFn(r.clone()));
                out.push(CStmt::Return);
            }
        }
    }

    fn emit_rule(
        &mut self,
        name: &str,
        scope: &Scope,
        placed: &mut HashSet<String>,
        out: &mut Vec<CStmt>,
    ) {
        if scope.labels.contains(name) {
            if !placed.insert(name.to_string()) {
                out.push(CStmt::Goto(label_name(name)));
                return;
            }
            out.push(CStmt::Label(label_name(name)));
        }
        let rule = self.rp.rule(name).expect("rule exists");
        if self.translate_body(&rule.body, out) {
            return;
        }
        match &rule.cont {
            Continuation::Next(t) => self.emit_target(t, scope, placed, out),
            Continuation::Branch {
                guard,
                then_call,
                else_call,
            } => {
                let cond = match lower_expr(guard, self.flag) {
                    Some(g) => g,
                    None => {
                        let tmp = VarId::Fresh(self.rp.fresh + self.extra);
                        self.extra += 1;
                        out.push(CStmt::NondetAssign(tmp, CNondet::Abstracted(guard.clone())));
                        Expr::bin(BinOp::Neq, Expr::Var(tmp), Expr::Const(Word::ZERO))
                    }
                };
                let mut t = Vec::new();
                let mut e = Vec::new();
                self.emit_target(then_call, scope, placed, &mut t);
                self.emit_target(else_call, scope, placed, &mut e);
                out.push(CStmt::If(cond, t, e));
            }
        }
    }
}

struct Scope<'a> {
    members: HashSet<&'a str>,
    labels: HashSet<String>,
}

fn collect_vars(stmts: &[CStmt], out: &mut BTreeSet<VarId>) {
    for s in stmts {
        match s {
            CStmt::Assign(v, e) => {
                out.insert(*v);
                e.vars(out);
            }
            CStmt::NondetAssign(v, n) => {
                out.insert(*v);
                if let CNondet::Abstracted(e) = n {
                    e.vars(out);
                }
            }
            CStmt::If(c, t, e) => {
                c.vars(out);
                collect_vars(t, out);
                collect_vars(e, out);
            }
            _ => {}
        }
    }
}

fn collect_calls(stmts: &[CStmt], out: &mut Vec<String>) {
    for s in stmts {
        match s {
            CStmt::CallFn(f) => out.push(f.clone()),
            CStmt::If(_, t, e) => {
                collect_calls(t, out);
                collect_calls(e, out);
            }
            _ => {}
        }
    }
}

fn collect_gotos(stmts: &[CStmt], out: &mut HashSet<String>) {
    for s in stmts {
        match s {
            CStmt::Goto(l) => {
                out.insert(l.clone());
            }
            CStmt::If(_, t, e) => {
                collect_gotos(t, out);
                collect_gotos(e, out);
            }
            _ => {}
        }
    }
}

/// Drop labels nobody jumps to.
fn prune_labels(stmts: &mut Vec<CStmt>, used: &HashSet<String>) {
    stmts.retain(|s| !matches!(s, CStmt::Label(l) if !used.contains(l)));
    for s in stmts.iter_mut() {
        if let CStmt::If(_, t, e) = s {
            prune_labels(t, used);
            prune_labels(e, used);
        }
    }
}

pub fn emit(rp: &RbrProgram, flag: TypeFlag) -> CProgram {
    let part = scc_loops(rp);
    let mut em = Emitter { rp, flag, extra: 0 };
    let reach = rp.reachable();
    // entry rules: the program entry and every target of a cross-component edge
    let mut entries: BTreeSet<String> = BTreeSet::new();
    if rp.rule(&rp.entry).is_some() {
        entries.insert(rp.entry.clone());
    }
    for r in rp.rules.iter().filter(|r| reach.contains(r.name.as_str())) {
        for s in r.successors() {
            if part.component_of.get(s) != part.component_of.get(r.name.as_str()) {
                entries.insert(s.to_string());
            }
        }
    }
    let mut functions = Vec::new();
    let order: Vec<String> = rp
        .rules
        .iter()
        .map(|r| r.name.clone())
        .filter(|n| entries.contains(n))
        .collect();
    for e in &order {
        let ci = part.component_of[e.as_str()];
        let looped = part.is_loop[ci];
        let members: HashSet<&str> = if looped {
            part.components[ci].iter().map(String::as_str).collect()
        } else {
            HashSet::new()
        };
        let mut labels = HashSet::new();
        if looped {
            labels.insert(e.clone());
            let mut preds: HashMap<&str, usize> = HashMap::new();
            for m in &members {
                for s in rp.rule(m).unwrap().successors() {
                    if members.contains(s) {
                        *preds.entry(s).or_default() += 1;
                    }
                }
            }
            labels.extend(
                preds
                    .into_iter()
                    .filter(|(_, n)| *n >= 2)
                    .map(|(r, _)| r.to_string()),
            );
        }
        let scope = Scope { members, labels };
        let mut body = Vec::new();
        let mut placed = HashSet::new();
        em.emit_rule(e, &scope, &mut placed, &mut body);
        let mut used = HashSet::new();
        collect_gotos(&body, &mut used);
        prune_labels(&mut body, &used);
        functions.push(CFunction {
            name: e.clone(),
            body,
            labels: used.into_iter().collect(),
        });
    }
    init_locals(rp, &mut functions);

    let mut driver = Vec::new();
    for v in rp.state_vars().chain(rp.param_vars()) {
        driver.push(CStmt::NondetAssign(v, CNondet::Input(v)));
    }
    if rp.rule(&rp.entry).is_some() {
        driver.push(CStmt::CallFn(rp.entry.clone()));
    }
    functions.push(CFunction {
        name: DRIVER.into(),
        body: driver,
        labels: BTreeSet::new(),
    });

    let mut vars = BTreeSet::new();
    vars.extend(rp.state_vars());
    vars.extend(rp.param_vars());
    for f in &functions {
        collect_vars(&f.body, &mut vars);
    }
    let globals = vars
        .into_iter()
        .map(|var| GlobalDecl {
            var,
            init: if matches!(var, VarId::State(_) | VarId::Param(_)) {
                GlobalInit::Nondet
            } else {
                GlobalInit::None
            },
        })
        .collect();
    CProgram {
        flag,
        function: rp.function.clone(),
        globals,
        functions,
        entry: DRIVER.into(),
    }
}

/// Zero each local at the start of the functions that use it and are not
/// called, directly or transitively, from another function using it. The
/// call graph is acyclic, so such a function runs before any other use.
fn init_locals(rp: &RbrProgram, functions: &mut [CFunction]) {
    let locals: BTreeSet<VarId> = rp.local_vars().collect();
    if locals.is_empty() {
        return;
    }
    let index: HashMap<String, usize> = functions
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.clone(), i))
        .collect();
    let mut callers: Vec<Vec<usize>> = vec![Vec::new(); functions.len()];
    let mut uses: Vec<BTreeSet<VarId>> = Vec::new();
    for (i, f) in functions.iter().enumerate() {
        let mut calls = Vec::new();
        collect_calls(&f.body, &mut calls);
        for c in calls {
            if let Some(&j) = index.get(&c) {
                callers[j].push(i);
            }
        }
        let mut vs = BTreeSet::new();
        collect_vars(&f.body, &mut vs);
        uses.push(vs.intersection(&locals).copied().collect());
    }
    let ancestors = |start: usize| {
        let mut seen = BTreeSet::new();
        let mut stack = callers[start].clone();
        while let Some(x) = stack.pop() {
            if seen.insert(x) {
                stack.extend(callers[x].iter().copied());
            }
        }
        seen
    };
    for i in 0..functions.len() {
        if uses[i].is_empty() {
            continue;
        }
        let anc = ancestors(i);
        let inits: Vec<CStmt> = uses[i]
            .iter()
            .filter(|l| !anc.iter().any(|a| uses[*a].contains(l)))
            .map(|l| CStmt::Assign(*l, Expr::Const(Word::ZERO)))
            .collect();
        functions[i].body.splice(0..0, inits);
    }
}

#[cfg(test)]
mod tests;
