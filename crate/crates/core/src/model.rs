//! The toy concurrent language: parser, validation and a deterministic interpreter.
//!
//! Programs consist of shared variables (all initially 0) and threads whose bodies
//! use loads, stores, atomic read-modify-writes, asserts, branches, bounded loops,
//! and spawn/join. Each thread body is compiled to a flat instruction list. An
//! execution step is one shared access (or spawn/join); the local instructions
//! that follow it run as part of the same step, so a thread's interpreter state
//! always rests on its next shared instruction or at its end.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::trace::{Event, EventKind, ThreadId, VarId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("semantic error: {0}")]
    Semantic(String),
    #[error("event {0} is not enabled")]
    NotEnabled(Event),
    #[error("invalid execution at position {pos}: event {event} is not enabled")]
    InvalidExecution { pos: usize, event: Event },
}

impl ModelError {
    pub fn is_parse_error(&self) -> bool {
        matches!(self, ModelError::Syntax { .. } | ModelError::Semantic(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Eq,
    Ne,
    Lt,
    And,
    Or,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::Eq => (a == b) as i64,
            BinOp::Ne => (a != b) as i64,
            BinOp::Lt => (a < b) as i64,
            BinOp::And => (a != 0 && b != 0) as i64,
            BinOp::Or => (a != 0 || b != 0) as i64,
        }
    }
}

/// Register expression. Shared variables never appear here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(i64),
    Reg(String),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    fn regs<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Int(_) => {}
            Expr::Reg(r) => out.push(r),
            Expr::Not(e) => e.regs(out),
            Expr::Bin(_, a, b) => {
                a.regs(out);
                b.regs(out);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(n) if *n < 0 => write!(f, "(0 - {})", n.unsigned_abs()),
            Expr::Int(n) => write!(f, "{n}"),
            Expr::Reg(r) => write!(f, "{r}"),
            Expr::Not(e) => write!(f, "!({e})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Store { var: String, expr: Expr },
    Load { reg: String, var: String },
    /// `reg` receives the old value; the new value is `expr` evaluated with `reg` bound to it.
    Rmw { reg: String, var: String, expr: Expr },
    Assert(Expr),
    If(Expr, Vec<Stmt>, Vec<Stmt>),
    Loop(u32, Vec<Stmt>),
    Spawn(String),
    Join(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadDef {
    pub name: String,
    pub body: Vec<Stmt>,
    /// The thread containing the `spawn` of this one; `None` for root threads.
    pub spawned_by: Option<ThreadId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Instr {
    Store { var: VarId, expr: u32 },
    Load { reg: u32, var: VarId },
    Rmw { reg: u32, var: VarId, expr: u32 },
    Spawn(ThreadId),
    Join(ThreadId),
    Assert { expr: u32 },
    BranchIfZero { expr: u32, target: u32 },
    Jump(u32),
    LoopInit { reg: u32, count: u32 },
    /// Exit to `exit` when the counter is 0, otherwise decrement it.
    LoopNext { reg: u32, exit: u32 },
}

impl Instr {
    fn is_shared(&self) -> bool {
        matches!(
            self,
            Instr::Store { .. } | Instr::Load { .. } | Instr::Rmw { .. } | Instr::Spawn(_) | Instr::Join(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CExpr {
    Int(i64),
    Reg(u32),
    Not(u32),
    Bin(BinOp, u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct Code {
    instrs: Vec<Instr>,
    /// Expression arena; expressions refer to sub-expressions by index.
    exprs: Vec<CExpr>,
    /// Source text of each assert, by instruction index.
    assert_text: HashMap<u32, String>,
    registers: usize,
}

impl Code {
    fn eval(&self, e: u32, regs: &[i64]) -> i64 {
        match self.exprs[e as usize] {
            CExpr::Int(n) => n,
            CExpr::Reg(r) => regs[r as usize],
            CExpr::Not(a) => (self.eval(a, regs) == 0) as i64,
            CExpr::Bin(op, a, b) => op.apply(self.eval(a, regs), self.eval(b, regs)),
        }
    }
}

/// A validated program with compiled thread bodies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub vars: Vec<String>,
    pub threads: Vec<ThreadDef>,
    code: Vec<Code>,
}

/// Lifecycle of a thread. A thread waiting on a `join` stays `Runnable`;
/// [`GlobalState::is_blocked`] reports that condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThreadStatus {
    NotSpawned,
    Runnable,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ThreadState {
    pub pc: u32,
    pub regs: Vec<i64>,
    pub status: ThreadStatus,
    /// Number of events this thread has performed.
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssertFailure {
    pub thread: ThreadId,
    pub message: String,
}

/// Interpreter state between events.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GlobalState {
    pub shared: Vec<i64>,
    pub threads: Vec<ThreadState>,
    pub failures: Vec<AssertFailure>,
}

impl GlobalState {
    /// Is `t` waiting on a join whose target has not terminated?
    pub fn is_blocked(&self, prog: &Program, t: ThreadId) -> bool {
        let ts = &self.threads[t.idx()];
        if ts.status != ThreadStatus::Runnable {
            return false;
        }
        match prog.code[t.idx()].instrs.get(ts.pc as usize) {
            Some(Instr::Join(u)) => self.threads[u.idx()].status != ThreadStatus::Terminated,
            _ => false,
        }
    }

    pub fn all_terminated(&self) -> bool {
        self.threads
            .iter()
            .all(|t| t.status != ThreadStatus::Runnable)
    }
}

impl Program {
    pub fn parse(src: &str) -> Result<Program, ModelError> {
        parse_program(src)
    }

    /// Builds and validates a program from declarations.
    pub fn new(vars: Vec<String>, threads: Vec<(String, Vec<Stmt>)>) -> Result<Program, ModelError> {
        build(vars, threads)
    }

    pub fn num_threads(&self) -> usize {
        self.threads.len()
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn thread_id(&self, name: &str) -> Option<ThreadId> {
        self.threads
            .iter()
            .position(|t| t.name == name)
            .map(|i| ThreadId(i as u32))
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.vars
            .iter()
            .position(|v| v == name)
            .map(|i| VarId(i as u32))
    }

    pub fn initial_state(&self) -> GlobalState {
        let mut s = GlobalState {
            shared: vec![0; self.vars.len()],
            threads: self
                .code
                .iter()
                .zip(&self.threads)
                .map(|(c, t)| ThreadState {
                    pc: 0,
                    regs: vec![0; c.registers],
                    status: if t.spawned_by.is_none() {
                        ThreadStatus::Runnable
                    } else {
                        ThreadStatus::NotSpawned
                    },
                    steps: 0,
                })
                .collect(),
            failures: Vec::new(),
        };
        for t in 0..self.threads.len() {
            if s.threads[t].status == ThreadStatus::Runnable {
                self.settle(&mut s, ThreadId(t as u32));
            }
        }
        s
    }

    /// The event thread `t` would perform next, ignoring whether it is blocked.
    pub fn next_event(&self, s: &GlobalState, t: ThreadId) -> Option<Event> {
        let ts = &s.threads[t.idx()];
        if ts.status != ThreadStatus::Runnable {
            return None;
        }
        let kind = match self.code[t.idx()].instrs[ts.pc as usize] {
            Instr::Store { var, .. } | Instr::Rmw { var, .. } => EventKind::Write(var),
            Instr::Load { var, .. } => EventKind::Read(var),
            Instr::Spawn(u) => EventKind::Spawn(u),
            Instr::Join(u) => EventKind::Join(u),
            _ => unreachable!("settled threads rest on shared instructions"),
        };
        Some(Event::new(t, ts.steps + 1, kind))
    }

    /// Enabled events in thread order, one per runnable, non-blocked thread.
    pub fn enabled_events(&self, s: &GlobalState) -> Vec<Event> {
        (0..self.threads.len() as u32)
            .map(ThreadId)
            .filter(|&t| !s.is_blocked(self, t))
            .filter_map(|t| self.next_event(s, t))
            .collect()
    }

    pub fn is_enabled(&self, s: &GlobalState, e: &Event) -> bool {
        e.thread.idx() < self.threads.len()
            && !s.is_blocked(self, e.thread)
            && self.next_event(s, e.thread).as_ref() == Some(e)
    }

    /// Performs `e` in place.
    pub fn apply_mut(&self, s: &mut GlobalState, e: &Event) -> Result<(), ModelError> {
        if !self.is_enabled(s, e) {
            return Err(ModelError::NotEnabled(*e));
        }
        let t = e.thread;
        let code = &self.code[t.idx()];
        let ts = &mut s.threads[t.idx()];
        match code.instrs[ts.pc as usize] {
            Instr::Store { var, expr } => s.shared[var.idx()] = code.eval(expr, &ts.regs),
            Instr::Load { reg, var } => ts.regs[reg as usize] = s.shared[var.idx()],
            Instr::Rmw { reg, var, expr } => {
                ts.regs[reg as usize] = s.shared[var.idx()];
                s.shared[var.idx()] = code.eval(expr, &ts.regs);
            }
            Instr::Spawn(u) => {
                let child = &mut s.threads[u.idx()];
                debug_assert_eq!(child.status, ThreadStatus::NotSpawned);
                child.status = ThreadStatus::Runnable;
                self.settle(s, u);
            }
            Instr::Join(_) => {}
            _ => unreachable!("settled threads rest on shared instructions"),
        }
        let ts = &mut s.threads[t.idx()];
        ts.pc += 1;
        ts.steps += 1;
        self.settle(s, t);
        Ok(())
    }

    pub fn apply_event(&self, s: &GlobalState, e: &Event) -> Result<GlobalState, ModelError> {
        let mut next = s.clone();
        self.apply_mut(&mut next, e)?;
        Ok(next)
    }

    pub fn replay(&self, events: &[Event]) -> Result<GlobalState, ModelError> {
        let s = self.initial_state();
        self.replay_from(s, events)
    }

    pub fn replay_from(&self, mut s: GlobalState, events: &[Event]) -> Result<GlobalState, ModelError> {
        for (pos, e) in events.iter().enumerate() {
            self.apply_mut(&mut s, e)
                .map_err(|_| ModelError::InvalidExecution { pos, event: *e })?;
        }
        Ok(s)
    }

    /// Runs local instructions of `t` until its next shared instruction or its end.
    fn settle(&self, s: &mut GlobalState, t: ThreadId) {
        let code = &self.code[t.idx()];
        let ts = &mut s.threads[t.idx()];
        loop {
            let Some(instr) = code.instrs.get(ts.pc as usize) else {
                ts.status = ThreadStatus::Terminated;
                return;
            };
            if instr.is_shared() {
                return;
            }
            ts.pc += 1;
            match *instr {
                Instr::Assert { expr } => {
                    if code.eval(expr, &ts.regs) == 0 {
                        let text = &code.assert_text[&(ts.pc - 1)];
                        s.failures.push(AssertFailure {
                            thread: t,
                            message: format!("assertion `{text}` failed in thread {}", self.threads[t.idx()].name),
                        });
                    }
                }
                Instr::BranchIfZero { expr, target } => {
                    if code.eval(expr, &ts.regs) == 0 {
                        ts.pc = target;
                    }
                }
                Instr::Jump(target) => ts.pc = target,
                Instr::LoopInit { reg, count } => ts.regs[reg as usize] = count as i64,
                Instr::LoopNext { reg, exit } => {
                    if ts.regs[reg as usize] == 0 {
                        ts.pc = exit;
                    } else {
                        ts.regs[reg as usize] -= 1;
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    /// Upper bound on the number of events of any execution.
    pub fn max_events(&self) -> u64 {
        fn count(body: &[Stmt]) -> u64 {
            body.iter()
                .map(|s| match s {
                    Stmt::Store { .. } | Stmt::Load { .. } | Stmt::Rmw { .. } | Stmt::Spawn(_) | Stmt::Join(_) => 1,
                    Stmt::Assert(_) => 0,
                    Stmt::If(_, a, b) => count(a).max(count(b)),
                    Stmt::Loop(n, b) => (*n as u64).saturating_mul(count(b)),
                })
                .fold(0u64, |a, b| a.saturating_add(b))
        }
        self.threads.iter().map(|t| count(&t.body)).fold(0, u64::saturating_add)
    }

    /// Short human-readable description such as `q.2:W(y)` or `p.1:SPAWN(q1)`.
    pub fn event_label(&self, e: &Event) -> String {
        let th = format!("{}.{}", self.threads[e.thread.idx()].name, e.index);
        match e.kind {
            EventKind::Read(v) => format!("{th}:R({})", self.vars[v.idx()]),
            EventKind::Write(v) => format!("{th}:W({})", self.vars[v.idx()]),
            EventKind::Spawn(u) => format!("{th}:SPAWN({})", self.threads[u.idx()].name),
            EventKind::Join(u) => format!("{th}:JOIN({})", self.threads[u.idx()].name),
        }
    }

    /// Renders the program back to DSL source that parses to an equal program.
    pub fn to_dsl(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn block(f: &mut fmt::Formatter<'_>, body: &[Stmt], depth: usize) -> fmt::Result {
            let pad = "    ".repeat(depth);
            for s in body {
                match s {
                    Stmt::Store { var, expr } => writeln!(f, "{pad}store {var} {expr};")?,
                    Stmt::Load { reg, var } => writeln!(f, "{pad}load {reg} {var};")?,
                    Stmt::Rmw { reg, var, expr } => writeln!(f, "{pad}rmw {reg} {var} {expr};")?,
                    Stmt::Assert(e) => writeln!(f, "{pad}assert {e};")?,
                    Stmt::Spawn(t) => writeln!(f, "{pad}spawn {t};")?,
                    Stmt::Join(t) => writeln!(f, "{pad}join {t};")?,
                    Stmt::If(c, a, b) => {
                        writeln!(f, "{pad}if {c} {{")?;
                        block(f, a, depth + 1)?;
                        writeln!(f, "{pad}}} else {{")?;
                        block(f, b, depth + 1)?;
                        writeln!(f, "{pad}}}")?;
                    }
                    Stmt::Loop(n, b) => {
                        writeln!(f, "{pad}loop {n} {{")?;
                        block(f, b, depth + 1)?;
                        writeln!(f, "{pad}}}")?;
                    }
                }
            }
            Ok(())
        }
        if !self.vars.is_empty() {
            writeln!(f, "var {}", self.vars.join(" "))?;
        }
        for t in &self.threads {
            writeln!(f, "thread {} {{", t.name)?;
            block(f, &t.body, 1)?;
            writeln!(f, "}}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Validation and compilation

fn build(vars: Vec<String>, threads: Vec<(String, Vec<Stmt>)>) -> Result<Program, ModelError> {
    let sem = |m: String| Err(ModelError::Semantic(m));
    let mut seen = BTreeSet::new();
    for v in &vars {
        if !seen.insert(v.as_str()) {
            return sem(format!("variable `{v}` declared twice"));
        }
    }
    let mut tnames = BTreeSet::new();
    for (name, _) in &threads {
        if !tnames.insert(name.as_str()) {
            return sem(format!("thread `{name}` declared twice"));
        }
        if seen.contains(name.as_str()) {
            return sem(format!("`{name}` is both a thread and a variable"));
        }
    }
    let var_ids: HashMap<&str, VarId> = vars
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), VarId(i as u32)))
        .collect();
    let thread_ids: HashMap<&str, ThreadId> = threads
        .iter()
        .enumerate()
        .map(|(i, (n, _))| (n.as_str(), ThreadId(i as u32)))
        .collect();

    // spawn edges: each thread spawned at most once, never from inside a loop
    let mut spawned_by: Vec<Option<ThreadId>> = vec![None; threads.len()];
    let mut joins: Vec<Vec<ThreadId>> = vec![Vec::new(); threads.len()];
    fn walk<'a>(body: &'a [Stmt], in_loop: bool, f: &mut dyn FnMut(&'a Stmt, bool) -> Result<(), ModelError>) -> Result<(), ModelError> {
        for s in body {
            f(s, in_loop)?;
            match s {
                Stmt::If(_, a, b) => {
                    walk(a, in_loop, f)?;
                    walk(b, in_loop, f)?;
                }
                Stmt::Loop(_, b) => walk(b, true, f)?,
                _ => {}
            }
        }
        Ok(())
    }
    for (ti, (tname, body)) in threads.iter().enumerate() {
        let me = ThreadId(ti as u32);
        walk(body, false, &mut |s, in_loop| {
            let check_var = |v: &str| -> Result<(), ModelError> {
                if var_ids.contains_key(v) {
                    Ok(())
                } else {
                    Err(ModelError::Semantic(format!("unknown shared variable `{v}` in thread `{tname}`")))
                }
            };
            let check_expr = |e: &Expr| -> Result<(), ModelError> {
                let mut regs = Vec::new();
                e.regs(&mut regs);
                for r in regs {
                    if var_ids.contains_key(r) {
                        return Err(ModelError::Semantic(format!(
                            "expression in thread `{tname}` reads shared variable `{r}` directly; use load"
                        )));
                    }
                    if thread_ids.contains_key(r) {
                        return Err(ModelError::Semantic(format!("thread name `{r}` used as a register in `{tname}`")));
                    }
                }
                Ok(())
            };
            let check_reg = |r: &str| -> Result<(), ModelError> {
                if var_ids.contains_key(r) || thread_ids.contains_key(r) {
                    Err(ModelError::Semantic(format!("`{r}` cannot be used as a register in thread `{tname}`")))
                } else {
                    Ok(())
                }
            };
            let target = |n: &str| -> Result<ThreadId, ModelError> {
                thread_ids
                    .get(n)
                    .copied()
                    .ok_or_else(|| ModelError::Semantic(format!("unknown thread `{n}` in thread `{tname}`")))
            };
            match s {
                Stmt::Store { var, expr } => {
                    check_var(var)?;
                    check_expr(expr)
                }
                Stmt::Load { reg, var } => {
                    check_var(var)?;
                    check_reg(reg)
                }
                Stmt::Rmw { reg, var, expr } => {
                    check_var(var)?;
                    check_reg(reg)?;
                    check_expr(expr)
                }
                Stmt::Assert(e) | Stmt::If(e, _, _) => check_expr(e),
                Stmt::Loop(..) => Ok(()),
                Stmt::Spawn(n) => {
                    let u = target(n)?;
                    if in_loop {
                        return Err(ModelError::Semantic(format!("thread `{n}` spawned inside a loop")));
                    }
                    if u == me {
                        return Err(ModelError::Semantic(format!("thread `{n}` spawns itself")));
                    }
                    if spawned_by[u.idx()].is_some() {
                        return Err(ModelError::Semantic(format!("thread `{n}` spawned more than once")));
                    }
                    spawned_by[u.idx()] = Some(me);
                    Ok(())
                }
                Stmt::Join(n) => {
                    joins[ti].push(target(n)?);
                    Ok(())
                }
            }
        })?;
    }
    // acyclicity of the spawn tree and of the join (waits-for) relation
    for start in 0..threads.len() {
        let mut cur = start;
        for _ in 0..=threads.len() {
            match spawned_by[cur] {
                Some(p) => cur = p.idx(),
                None => break,
            }
            if cur == start {
                return sem(format!("spawn cycle through thread `{}`", threads[start].0));
            }
        }
    }
    let mut state = vec![0u8; threads.len()];
    fn dfs(v: usize, joins: &[Vec<ThreadId>], state: &mut [u8]) -> Option<usize> {
        state[v] = 1;
        for u in &joins[v] {
            match state[u.idx()] {
                1 => return Some(u.idx()),
                0 => {
                    if let Some(c) = dfs(u.idx(), joins, state) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        state[v] = 2;
        None
    }
    for v in 0..threads.len() {
        if state[v] == 0 {
            if let Some(c) = dfs(v, &joins, &mut state) {
                return sem(format!("join cycle through thread `{}`", threads[c].0));
            }
        }
    }

    let mut code = Vec::with_capacity(threads.len());
    for (name, body) in &threads {
        let mut c = Compiler {
            code: Code::default(),
            regs: HashMap::new(),
            var_ids: &var_ids,
            thread_ids: &thread_ids,
        };
        c.block(body);
        c.code.registers = c.regs.len();
        let _ = name;
        code.push(c.code);
    }
    Ok(Program {
        vars,
        threads: threads
            .into_iter()
            .zip(spawned_by)
            .map(|((name, body), spawned_by)| ThreadDef {
                name,
                body,
                spawned_by,
            })
            .collect(),
        code,
    })
}

struct Compiler<'a> {
    code: Code,
    regs: HashMap<String, u32>,
    var_ids: &'a HashMap<&'a str, VarId>,
    thread_ids: &'a HashMap<&'a str, ThreadId>,
}

impl Compiler<'_> {
    fn reg(&mut self, name: &str) -> u32 {
        let n = self.regs.len() as u32;
        *self.regs.entry(name.to_string()).or_insert(n)
    }

    fn hidden_reg(&mut self) -> u32 {
        // names with a leading space cannot collide with parsed identifiers
        let name = format!(" loop{}", self.regs.len());
        self.reg(&name)
    }

    fn expr(&mut self, e: &Expr) -> u32 {
        let c = match e {
            Expr::Int(n) => CExpr::Int(*n),
            Expr::Reg(r) => CExpr::Reg(self.reg(r)),
            Expr::Not(a) => CExpr::Not(self.expr(a)),
            Expr::Bin(op, a, b) => {
                let a = self.expr(a);
                let b = self.expr(b);
                CExpr::Bin(*op, a, b)
            }
        };
        self.code.exprs.push(c);
        (self.code.exprs.len() - 1) as u32
    }

    fn emit(&mut self, i: Instr) -> u32 {
        self.code.instrs.push(i);
        (self.code.instrs.len() - 1) as u32
    }

    fn here(&self) -> u32 {
        self.code.instrs.len() as u32
    }

    fn block(&mut self, body: &[Stmt]) {
        for s in body {
            match s {
                Stmt::Store { var, expr } => {
                    let expr = self.expr(expr);
                    self.emit(Instr::Store { var: self.var_ids[var.as_str()], expr });
                }
                Stmt::Load { reg, var } => {
                    let reg = self.reg(reg);
                    self.emit(Instr::Load { reg, var: self.var_ids[var.as_str()] });
                }
                Stmt::Rmw { reg, var, expr } => {
                    let reg = self.reg(reg);
                    let expr = self.expr(expr);
                    self.emit(Instr::Rmw { reg, var: self.var_ids[var.as_str()], expr });
                }
                Stmt::Assert(e) => {
                    let expr = self.expr(e);
                    let at = self.emit(Instr::Assert { expr });
                    self.code.assert_text.insert(at, e.to_string());
                }
                Stmt::Spawn(t) => {
                    self.emit(Instr::Spawn(self.thread_ids[t.as_str()]));
                }
                Stmt::Join(t) => {
                    self.emit(Instr::Join(self.thread_ids[t.as_str()]));
                }
                Stmt::If(c, a, b) => {
                    let expr = self.expr(c);
                    let br = self.emit(Instr::BranchIfZero { expr, target: 0 });
                    self.block(a);
                    let jmp = self.emit(Instr::Jump(0));
                    let else_at = self.here();
                    self.block(b);
                    let end = self.here();
                    self.code.instrs[br as usize] = Instr::BranchIfZero { expr, target: else_at };
                    self.code.instrs[jmp as usize] = Instr::Jump(end);
                }
                Stmt::Loop(n, b) => {
                    let reg = self.hidden_reg();
                    self.emit(Instr::LoopInit { reg, count: *n });
                    let top = self.emit(Instr::LoopNext { reg, exit: 0 });
                    self.block(b);
                    self.emit(Instr::Jump(top));
                    let exit = self.here();
                    self.code.instrs[top as usize] = Instr::LoopNext { reg, exit };
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Punct(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const PUNCTS: [&str; 14] = ["==", "!=", "&&", "||", "{", "}", "(", ")", ";", "+", "-", "*", "<", "!"];

fn lex(src: &str) -> Result<Vec<Token>, ModelError> {
    let mut out = Vec::new();
    for (ln, line) in src.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let (lno, col) = (ln + 1, i + 1);
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let n = text.parse::<i64>().map_err(|_| ModelError::Syntax {
                    line: lno,
                    col,
                    msg: format!("integer literal `{text}` out of range"),
                })?;
                out.push(Token { tok: Tok::Int(n), line: lno, col });
            } else if c.is_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    line: lno,
                    col,
                });
            } else {
                let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
                let Some(p) = PUNCTS.iter().find(|p| rest.starts_with(**p)) else {
                    return Err(ModelError::Syntax {
                        line: lno,
                        col,
                        msg: format!("unexpected character `{c}`"),
                    });
                };
                out.push(Token { tok: Tok::Punct(p), line: lno, col });
                i += p.len();
            }
        }
    }
    Ok(out)
}

const KEYWORDS: [&str; 11] = [
    "var", "thread", "store", "load", "rmw", "assert", "spawn", "join", "if", "else", "loop",
];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    /// Names in shared-variable position, collected for implicit declarations.
    used_vars: Vec<String>,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ModelError> {
        let (line, col) = match self.toks.get(self.pos) {
            Some(t) => (t.line, t.col),
            None => self
                .toks
                .last()
                .map(|t| (t.line, t.col + 1))
                .unwrap_or((1, 1)),
        };
        Err(ModelError::Syntax {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn eat(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(q)) if *q == p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> Result<(), ModelError> {
        if self.eat(p) {
            Ok(())
        } else {
            self.err(format!("expected `{p}`"))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn name(&mut self, what: &str) -> Result<String, ModelError> {
        match self.peek() {
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn var_name(&mut self) -> Result<String, ModelError> {
        let v = self.name("shared variable name")?;
        self.used_vars.push(v.clone());
        Ok(v)
    }

    fn end_stmt(&mut self) {
        // statement terminators are optional
        self.eat(";");
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ModelError> {
        self.expect("{")?;
        let mut out = Vec::new();
        while !self.eat("}") {
            if self.peek().is_none() {
                return self.err("unterminated block, expected `}`");
            }
            out.push(self.stmt()?);
        }
        Ok(out)
    }

    fn stmt(&mut self) -> Result<Stmt, ModelError> {
        let Some(Tok::Ident(kw)) = self.peek().cloned() else {
            return self.err("expected a statement");
        };
        self.pos += 1;
        let s = match kw.as_str() {
            "store" => {
                let var = self.var_name()?;
                let expr = self.expr()?;
                Stmt::Store { var, expr }
            }
            "load" => {
                let reg = self.name("register name")?;
                let var = self.var_name()?;
                Stmt::Load { reg, var }
            }
            "rmw" => {
                let reg = self.name("register name")?;
                let var = self.var_name()?;
                let expr = self.expr()?;
                Stmt::Rmw { reg, var, expr }
            }
            "assert" => Stmt::Assert(self.expr()?),
            "spawn" => Stmt::Spawn(self.name("thread name")?),
            "join" => Stmt::Join(self.name("thread name")?),
            "if" => {
                let c = self.expr()?;
                let a = self.block()?;
                let b = if self.is_kw("else") {
                    self.pos += 1;
                    self.block()?
                } else {
                    Vec::new()
                };
                return Ok(Stmt::If(c, a, b));
            }
            "loop" => {
                let n = match self.peek() {
                    Some(Tok::Int(n)) if *n <= u32::MAX as i64 => *n as u32,
                    _ => return self.err("expected a loop bound (integer literal)"),
                };
                self.pos += 1;
                return Ok(Stmt::Loop(n, self.block()?));
            }
            other => {
                self.pos -= 1;
                return self.err(format!("unknown statement `{other}`"));
            }
        };
        self.end_stmt();
        Ok(s)
    }

    fn expr(&mut self) -> Result<Expr, ModelError> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> Result<Expr, ModelError> {
        const LEVELS: [&[(&str, BinOp)]; 5] = [
            &[("||", BinOp::Or)],
            &[("&&", BinOp::And)],
            &[("==", BinOp::Eq), ("!=", BinOp::Ne)],
            &[("<", BinOp::Lt)],
            &[("+", BinOp::Add), ("-", BinOp::Sub)],
        ];
        if level == LEVELS.len() {
            return self.product();
        }
        let mut lhs = self.binary(level + 1)?;
        'outer: loop {
            for (sym, op) in LEVELS[level] {
                if self.eat(sym) {
                    let rhs = self.binary(level + 1)?;
                    lhs = Expr::bin(*op, lhs, rhs);
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn product(&mut self) -> Result<Expr, ModelError> {
        let mut lhs = self.unary()?;
        while self.eat("*") {
            let rhs = self.unary()?;
            lhs = Expr::bin(BinOp::Mul, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ModelError> {
        if self.eat("!") {
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        if self.eat("-") {
            let e = self.unary()?;
            return Ok(match e {
                Expr::Int(n) => Expr::Int(n.wrapping_neg()),
                e => Expr::bin(BinOp::Sub, Expr::Int(0), e),
            });
        }
        if self.eat("(") {
            let e = self.expr()?;
            self.expect(")")?;
            return Ok(e);
        }
        match self.peek().cloned() {
            Some(Tok::Int(n)) => {
                self.pos += 1;
                Ok(Expr::Int(n))
            }
            Some(Tok::Ident(_)) => Ok(Expr::Reg(self.name("register or literal")?)),
            _ => self.err("expected an expression"),
        }
    }
}

/// Parses DSL source. When the source has no `var` declaration, every name used
/// in a shared-variable position is declared implicitly (in order of first use).
pub fn parse_program(src: &str) -> Result<Program, ModelError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        used_vars: Vec::new(),
    };
    let mut vars: Option<Vec<String>> = None;
    let mut threads = Vec::new();
    while p.peek().is_some() {
        if p.is_kw("var") {
            let line = p.toks[p.pos].line;
            p.pos += 1;
            let decl = vars.get_or_insert_with(Vec::new);
            let before = decl.len();
            while p.toks.get(p.pos).is_some_and(|t| t.line == line) && !matches!(p.peek(), Some(Tok::Punct(_))) {
                let v = p.name("variable name")?;
                vars.as_mut().expect("initialized").push(v);
            }
            if vars.as_ref().map_or(0, Vec::len) == before {
                return p.err("`var` needs at least one name");
            }
            p.eat(";");
        } else if p.is_kw("thread") {
            p.pos += 1;
            let name = p.name("thread name")?;
            let body = p.block()?;
            threads.push((name, body));
        } else {
            return p.err("expected `var` or `thread`");
        }
    }
    let vars = vars.unwrap_or_else(|| {
        let mut seen = BTreeSet::new();
        p.used_vars
            .iter()
            .filter(|v| seen.insert(v.as_str()))
            .cloned()
            .collect()
    });
    build(vars, threads)
}
