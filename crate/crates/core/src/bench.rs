//! Benchmark program generators.
//!
//! Every generator builds its program through [`Program::new`], so the result
//! is validated like parsed input; [`Program::to_dsl`] gives the source text.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{BinOp, Expr, Program, Stmt};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BenchError {
    #[error("unknown benchmark `{0}` (known: fig1, exp-mem3, length-param, lastzero, random)")]
    Unknown(String),
    #[error("{name}: {msg}")]
    BadParams { name: &'static str, msg: String },
}

/// A generated benchmark together with its expected execution count, when one
/// is known.
#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub name: String,
    pub params: Vec<u64>,
    pub program: Program,
    pub expected: Option<u64>,
    /// Where `expected` comes from.
    pub expected_source: &'static str,
}

impl BenchSpec {
    pub fn label(&self) -> String {
        if self.params.is_empty() {
            return self.name.clone();
        }
        let ps: Vec<String> = self.params.iter().map(u64::to_string).collect();
        format!("{}({})", self.name, ps.join(","))
    }
}

fn store(var: &str, e: Expr) -> Stmt {
    Stmt::Store {
        var: var.into(),
        expr: e,
    }
}

fn load(reg: &str, var: &str) -> Stmt {
    Stmt::Load {
        reg: reg.into(),
        var: var.into(),
    }
}

fn int(n: i64) -> Expr {
    Expr::Int(n)
}

fn reg(r: &str) -> Expr {
    Expr::Reg(r.into())
}

fn build(vars: Vec<String>, threads: Vec<(String, Vec<Stmt>)>) -> Program {
    Program::new(vars, threads).expect("generated programs are valid")
}

/// Four threads over `g x y z`: a writer of `x`, a writer of `y` then `z`, a
/// thread writing `g` then reading `y` and `x`, and a reader of `y`, `z`, `x`.
pub fn fig1() -> Program {
    let vars = ["g", "x", "y", "z"].map(String::from).to_vec();
    build(
        vars,
        vec![
            ("p".into(), vec![store("x", int(1))]),
            ("q".into(), vec![store("y", int(1)), store("z", int(1))]),
            ("r".into(), vec![store("g", int(1)), load("a", "y"), load("b", "x")]),
            ("s".into(), vec![load("c", "y"), load("d", "z"), load("e", "x")]),
        ],
    )
}

/// `p` writes `x`; `q` spawns `q1..qn`, each writing `y`, joins them all and
/// then reads `x`.
pub fn exp_mem3(n: usize) -> Result<Program, BenchError> {
    if n == 0 {
        return Err(BenchError::BadParams {
            name: "exp-mem3",
            msg: "needs n >= 1".into(),
        });
    }
    let children: Vec<String> = (1..=n).map(|i| format!("q{i}")).collect();
    let mut q: Vec<Stmt> = children.iter().map(|c| Stmt::Spawn(c.clone())).collect();
    q.extend(children.iter().map(|c| Stmt::Join(c.clone())));
    q.push(load("a", "x"));
    let mut threads = vec![("p".to_string(), vec![store("x", int(1))]), ("q".to_string(), q)];
    for (i, c) in children.iter().enumerate() {
        threads.push((c.clone(), vec![store("y", int(i as i64 + 1))]));
    }
    Ok(build(vec!["x".into(), "y".into()], threads))
}

/// `t` threads, each performing `len` store/load pairs on a private variable,
/// then one store and one load of the shared `s`.
pub fn length_param(t: usize, len: u32) -> Result<Program, BenchError> {
    if t < 2 || len == 0 {
        return Err(BenchError::BadParams {
            name: "length-param",
            msg: "needs t >= 2 and N >= 1".into(),
        });
    }
    let mut vars: Vec<String> = (0..t).map(|i| format!("v{i}")).collect();
    vars.push("s".into());
    let threads = (0..t)
        .map(|i| {
            let v = format!("v{i}");
            let body = vec![
                Stmt::Loop(len, vec![store(&v, int(1)), load("r", &v)]),
                store("s", int(1)),
                load("r2", "s"),
            ];
            (format!("t{i}"), body)
        })
        .collect();
    Ok(build(vars, threads))
}

/// `array0..arrayN` all start at 0. Thread `t0` scans downwards from
/// `arrayN` while the value read is non-zero; thread `tj` (1 ≤ j ≤ N) sets
/// `arrayj` to `array(j-1) + 1`.
pub fn lastzero(n: usize) -> Result<Program, BenchError> {
    if n == 0 {
        return Err(BenchError::BadParams {
            name: "lastzero",
            msg: "needs n >= 1".into(),
        });
    }
    let arr = |i: usize| format!("array{i}");
    let vars: Vec<String> = (0..=n).map(arr).collect();
    let mut scan = vec![load("r", &arr(0))];
    for i in 1..=n {
        scan = vec![
            load("r", &arr(i)),
            Stmt::If(Expr::bin(BinOp::Ne, reg("r"), int(0)), scan, Vec::new()),
        ];
    }
    let mut threads = vec![("t0".to_string(), scan)];
    for j in 1..=n {
        threads.push((
            format!("t{j}"),
            vec![
                load("r", &arr(j - 1)),
                store(&arr(j), Expr::bin(BinOp::Add, reg("r"), int(1))),
            ],
        ));
    }
    Ok(build(vars, threads))
}

/// Size limits for [`random_program`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomLimits {
    pub max_threads: usize,
    /// Worst-case shared events per thread, spawns and joins included.
    pub max_events: usize,
    pub max_vars: usize,
    /// Worst-case accesses over all threads, spawns and joins excluded. Keeps
    /// the brute-force oracle tractable: uncapped, the densest programs have
    /// around a million equivalence classes.
    pub max_total_events: usize,
    pub rmw: bool,
    pub spawn_join: bool,
    /// Allow `if`, `loop` and `assert`.
    pub control_flow: bool,
}

impl Default for RandomLimits {
    fn default() -> Self {
        RandomLimits {
            max_threads: 4,
            max_events: 6,
            max_vars: 3,
            max_total_events: 12,
            rmw: true,
            spawn_join: true,
            control_flow: true,
        }
    }
}

struct Gen<'a> {
    rng: ChaCha8Rng,
    vars: &'a [String],
    lim: RandomLimits,
}

const REGS: [&str; 3] = ["r0", "r1", "r2"];

impl Gen<'_> {
    fn var(&mut self) -> String {
        self.vars.choose(&mut self.rng).expect("at least one var").clone()
    }

    fn reg(&mut self) -> &'static str {
        REGS[self.rng.gen_range(0..REGS.len())]
    }

    fn expr(&mut self) -> Expr {
        match self.rng.gen_range(0..4) {
            0 => int(self.rng.gen_range(0..3)),
            1 => reg(self.reg()),
            _ => Expr::bin(BinOp::Add, reg(self.reg()), int(self.rng.gen_range(1..3))),
        }
    }

    fn cond(&mut self) -> Expr {
        let op = *[BinOp::Eq, BinOp::Ne, BinOp::Lt].choose(&mut self.rng).expect("nonempty");
        Expr::bin(op, reg(self.reg()), int(self.rng.gen_range(0..3)))
    }

    fn access(&mut self) -> Stmt {
        let k = self.rng.gen_range(0..if self.lim.rmw { 5 } else { 4 });
        match k {
            0 | 1 => {
                let v = self.var();
                store(&v, self.expr())
            }
            2 | 3 => {
                let v = self.var();
                load(self.reg(), &v)
            }
            _ => {
                let r = self.reg();
                let v = self.var();
                Stmt::Rmw {
                    reg: r.into(),
                    var: v,
                    expr: Expr::bin(BinOp::Add, reg(r), int(1)),
                }
            }
        }
    }

    /// A statement list whose worst case has at most `budget` shared events.
    fn body(&mut self, budget: usize) -> Vec<Stmt> {
        let mut out = Vec::new();
        let mut left = budget;
        while left > 0 {
            let roll = self.rng.gen_range(0..10);
            if self.lim.control_flow && roll == 0 && left >= 2 {
                let inner = self.rng.gen_range(1..=left.min(3));
                let then = self.body(inner);
                let other = if self.rng.gen_bool(0.5) { self.body(inner) } else { Vec::new() };
                out.push(Stmt::If(self.cond(), then, other));
                left -= inner;
            } else if self.lim.control_flow && roll == 1 && left >= 2 {
                let times = self.rng.gen_range(2..=left.min(3)) as u32;
                out.push(Stmt::Loop(times, vec![self.access()]));
                left -= times as usize;
            } else if self.lim.control_flow && roll == 2 {
                out.push(Stmt::Assert(self.cond()));
            } else {
                out.push(self.access());
                left -= 1;
            }
        }
        out
    }
}

/// Deterministic random program for `seed`. Only the first thread spawns, and
/// only higher-numbered threads, at the top level of its body.
pub fn random_program(seed: u64, lim: &RandomLimits) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nthreads = rng.gen_range(1..=lim.max_threads.max(1));
    let nvars = rng.gen_range(1..=lim.max_vars.max(1));
    let vars: Vec<String> = (0..nvars).map(|i| format!("x{i}")).collect();
    let names: Vec<String> = (0..nthreads).map(|i| format!("t{i}")).collect();
    let mut g = Gen { rng, vars: &vars, lim: *lim };
    let max = lim.max_events.max(1);

    let mut budgets: Vec<usize> = (0..nthreads).map(|_| g.rng.gen_range(1..=max)).collect();
    while budgets.iter().sum::<usize>() > lim.max_total_events.max(nthreads) {
        let k = (0..nthreads).max_by_key(|&k| budgets[k]).expect("nonempty");
        budgets[k] -= 1;
    }
    let mut bodies: Vec<Vec<Stmt>> = budgets.into_iter().map(|b| g.body(b)).collect();

    if lim.spawn_join && nthreads > 1 && g.rng.gen_bool(0.4) {
        // top-level accesses of the parent, so spawn/join stay within budget
        let parent = &mut bodies[0];
        let children: Vec<usize> = (1..nthreads).filter(|_| g.rng.gen_bool(0.6)).collect();
        for c in children {
            if parent.len() + 2 > max {
                break;
            }
            let at = g.rng.gen_range(0..=parent.len());
            parent.insert(at, Stmt::Spawn(names[c].clone()));
            if g.rng.gen_bool(0.6) {
                let j = g.rng.gen_range(at + 1..=parent.len());
                parent.insert(j, Stmt::Join(names[c].clone()));
            }
        }
        trim_to_budget(parent, max);
    }

    let threads = names.into_iter().zip(bodies).collect();
    Program::new(vars, threads).expect("random programs are valid")
}

fn worst_case(s: &Stmt) -> usize {
    match s {
        Stmt::Assert(_) => 0,
        Stmt::If(_, a, b) => a.iter().map(worst_case).sum::<usize>().max(b.iter().map(worst_case).sum()),
        Stmt::Loop(n, body) => *n as usize * body.iter().map(worst_case).sum::<usize>(),
        _ => 1,
    }
}

/// Drops trailing non-spawn/join statements until the body fits the budget.
fn trim_to_budget(body: &mut Vec<Stmt>, max: usize) {
    while body.iter().map(worst_case).sum::<usize>() > max {
        let Some(k) = body.iter().rposition(|s| !matches!(s, Stmt::Spawn(_) | Stmt::Join(_))) else {
            break;
        };
        body.remove(k);
    }
}

fn factorial(n: u64) -> u64 {
    (1..=n).product()
}

fn param(params: &[u64], k: usize, name: &'static str) -> Result<u64, BenchError> {
    params.get(k).copied().ok_or_else(|| BenchError::BadParams {
        name,
        msg: format!("missing parameter #{}", k + 1),
    })
}

/// Looks a benchmark up by name. `random` takes a seed.
pub fn by_name(name: &str, params: &[u64]) -> Result<BenchSpec, BenchError> {
    let spec = |name: &str, program, expected, expected_source| BenchSpec {
        name: name.to_string(),
        params: params.to_vec(),
        program,
        expected,
        expected_source,
    };
    match name {
        "fig1" => Ok(spec(name, fig1(), None, "")),
        "exp-mem3" => {
            let n = param(params, 0, "exp-mem3")?;
            let expected = (n <= 20).then(|| 2 * factorial(n));
            Ok(spec(name, exp_mem3(n as usize)?, expected, "2·n!"))
        }
        "length-param" => {
            let (t, len) = match params {
                [len] => (2, *len),
                _ => (param(params, 0, "length-param")?, param(params, 1, "length-param")?),
            };
            let len = u32::try_from(len).map_err(|_| BenchError::BadParams {
                name: "length-param",
                msg: "N too large".into(),
            })?;
            let expected = (t == 2).then_some(4);
            Ok(spec(name, length_param(t as usize, len)?, expected, "4 for two threads"))
        }
        "lastzero" => {
            let n = param(params, 0, "lastzero")?;
            let expected = (n == 10).then_some(3328);
            Ok(spec(name, lastzero(n as usize)?, expected, "reference count for n = 10"))
        }
        "random" => {
            let seed = param(params, 0, "random")?;
            Ok(spec(name, random_program(seed, &RandomLimits::default()), None, ""))
        }
        other => Err(BenchError::Unknown(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_program;

    #[test]
    fn generators_round_trip_through_the_parser() {
        let progs = [
            fig1(),
            exp_mem3(3).unwrap(),
            length_param(2, 4).unwrap(),
            lastzero(3).unwrap(),
            random_program(7, &RandomLimits::default()),
        ];
        for p in progs {
            let text = p.to_dsl();
            assert_eq!(parse_program(&text).unwrap(), p, "{text}");
        }
    }

    #[test]
    fn fig1_inventory() {
        let p = fig1();
        assert_eq!(p.vars, ["g", "x", "y", "z"]);
        assert_eq!(p.num_threads(), 4);
        assert_eq!(p.max_events(), 9);
    }

    #[test]
    fn exp_mem3_shape() {
        let p = exp_mem3(3).unwrap();
        assert_eq!(p.num_threads(), 5);
        assert_eq!(p.max_events(), 1 + 3 + 3 + 1 + 3);
        assert!(exp_mem3(0).is_err());
    }

    #[test]
    fn random_is_deterministic_and_bounded() {
        let lim = RandomLimits::default();
        for seed in 0..200 {
            let a = random_program(seed, &lim);
            assert_eq!(a, random_program(seed, &lim));
            assert!(a.num_threads() <= 4 && a.num_vars() <= 3);
            for t in &a.threads {
                assert!(t.body.iter().map(worst_case).sum::<usize>() <= 6, "seed {seed}");
            }
        }
    }

    #[test]
    fn random_corpus_uses_spawns_and_rmw() {
        let lim = RandomLimits::default();
        let texts: Vec<String> = (0..200).map(|s| random_program(s, &lim).to_dsl()).collect();
        assert!(texts.iter().any(|t| t.contains("spawn")));
        assert!(texts.iter().any(|t| t.contains("join")));
        assert!(texts.iter().any(|t| t.contains("rmw")));
    }

    #[test]
    fn lookup_by_name() {
        assert_eq!(by_name("exp-mem3", &[7]).unwrap().expected, Some(10080));
        assert_eq!(by_name("length-param", &[1024]).unwrap().expected, Some(4));
        assert_eq!(by_name("exp-mem3", &[4]).unwrap().label(), "exp-mem3(4)");
        assert!(matches!(by_name("nope", &[]), Err(BenchError::Unknown(_))));
        assert!(matches!(by_name("lastzero", &[]), Err(BenchError::BadParams { .. })));
    }
}
