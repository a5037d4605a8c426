//! Frozen values: benchmark counts cross-checked against the brute-force
//! oracle, and the schedules and sleep-set expressions of a hand-built
//! execution of the four-thread `fig1` program.

use std::rc::Rc;

use pop_smc::bench::{exp_mem3, fig1, lastzero, length_param};
use pop_smc::explorer::{brute_force_classes, explore, Algorithm, ExploreConfig};
use pop_smc::model::Program;
use pop_smc::sleepsets::{mk_sched_char, upd_seq, HbView, PSeq, ScheduleInput, SleepSetExpr, SsChar};
use pop_smc::trace::{compatible, hb_prefix, Event, EventKind, Execution, ThreadId, VarId};

fn counts(prog: &Program) -> [u64; 3] {
    [Algorithm::Pop, Algorithm::PopExplicit, Algorithm::Brute]
        .map(|alg| explore(prog, &ExploreConfig::with_algorithm(alg)).distinct_traces)
}

#[test]
fn fig1_has_32_classes() {
    let prog = fig1();
    assert_eq!(brute_force_classes(&prog).len(), 32);
    let r = explore(&prog, &ExploreConfig::default());
    assert_eq!(r.executions, 32);
    assert_eq!(counts(&prog), [32; 3]);
}

#[test]
fn small_benchmarks_match_brute_force() {
    // values obtained from the brute-force oracle
    let table: [(Program, u64); 8] = [
        (exp_mem3(1).unwrap(), 2),
        (exp_mem3(2).unwrap(), 4),
        (exp_mem3(3).unwrap(), 12),
        (lastzero(1).unwrap(), 2),
        (lastzero(2).unwrap(), 5),
        (lastzero(3).unwrap(), 12),
        (length_param(2, 1).unwrap(), 4),
        (length_param(3, 2).unwrap(), 36),
    ];
    for (prog, expected) in &table {
        assert_eq!(brute_force_classes(prog).len() as u64, *expected, "{}", prog.to_dsl());
        let r = explore(prog, &ExploreConfig::default());
        assert_eq!(r.executions, *expected, "{}", prog.to_dsl());
        assert_eq!(counts(prog), [*expected; 3]);
    }
}

// Threads p q r s, variables g x y z, as numbered by `fig1()`.
const P: u32 = 0;
const Q: u32 = 1;
const R: u32 = 2;
const S: u32 = 3;
const G: u32 = 0;
const X: u32 = 1;
const Y: u32 = 2;
const Z: u32 = 3;

fn w(t: u32, i: u32, v: u32) -> Event {
    Event::new(ThreadId(t), i, EventKind::Write(VarId(v)))
}
fn r(t: u32, i: u32, v: u32) -> Event {
    Event::new(ThreadId(t), i, EventKind::Read(VarId(v)))
}

struct Ev {
    x1: Event,
    y1: Event,
    z1: Event,
    g1: Event,
    a: Event,
    b: Event,
    c: Event,
    d: Event,
    e: Event,
}

fn ev() -> Ev {
    Ev {
        x1: w(P, 1, X),
        y1: w(Q, 1, Y),
        z1: w(Q, 2, Z),
        g1: w(R, 1, G),
        a: r(R, 2, Y),
        b: r(R, 3, X),
        c: r(S, 1, Y),
        d: r(S, 2, Z),
        e: r(S, 3, X),
    }
}

/// `x=1 · [c=y] · y=1 · z=1 · d=z · e=x · g=1 · a=y · b=x`, where the read
/// `c=y` was performed as a one-event read schedule.
fn third_execution() -> (Execution, Vec<Event>) {
    let v = ev();
    let events = vec![v.x1, v.c, v.y1, v.z1, v.d, v.e, v.g1, v.a, v.b];
    let mut exec = Execution::new(4, 4);
    for (k, e) in events.iter().enumerate() {
        exec.push_marked(*e, 0, k == 1, k == 1);
    }
    (exec, events)
}

/// The characterization recorded when the schedule `c=y` was formed: the
/// earlier read schedule `g=1 · a=y` on `y`.
fn chars_of_c() -> SsChar {
    let v = ev();
    Rc::new(vec![Rc::new(SleepSetExpr::flat(PSeq::new(vec![vec![v.g1]], vec![]), VarId(Y)).with_read(v.a))])
}

fn sigma4_chars() -> (Vec<Event>, SsChar) {
    let (exec, _) = third_execution();
    let sigma_pos = exec.schedule_closure(0, exec.len() - 1);
    let sigma: Vec<Event> = sigma_pos.iter().map(|&q| exec.event(q)).collect();
    let clocks = exec.clocks_for_suffix(0, &sigma);
    let view = HbView::new(&exec, 0, &sigma, &clocks);
    let mut head_chars = vec![None; exec.len()];
    head_chars[1] = Some(chars_of_c());
    let chars = mk_sched_char(&ScheduleInput {
        exec: &exec,
        branch: 0,
        sigma_pos: &sigma_pos,
        view: &view,
        head_chars: &head_chars,
        formed: &[],
    });
    (sigma, chars)
}

/// Runs `cont` after `sigma` and reports whether the continuation is blocked.
fn blocked_after(sigma: &[Event], chars: &SsChar, cont: &[Event]) -> bool {
    let mut exec = Execution::new(4, 4);
    for (k, e) in sigma.iter().enumerate() {
        exec.push_marked(*e, 0, true, k + 1 == sigma.len());
    }
    let clocks = exec.clocks_for_suffix(exec.len(), cont);
    let view = HbView::new(&exec, exec.len(), cont, &clocks);
    upd_seq(chars, &view).is_none()
}

#[test]
fn sigma4_is_the_closure_of_the_last_read() {
    let v = ev();
    let (exec, _) = third_execution();
    let pos = exec.schedule_closure(0, exec.len() - 1);
    let sigma: Vec<Event> = pos.iter().map(|&q| exec.event(q)).collect();
    assert_eq!(sigma, vec![v.c, v.y1, v.g1, v.a, v.b]);
}

#[test]
fn hb_prefix_and_compatibility_in_the_third_execution() {
    let v = ev();
    let (_, events) = third_execution();
    let sigma1 = [v.g1, v.a, v.b];
    let sigma2 = [v.c, v.d, v.e];
    let sigma3 = [v.c, v.y1, v.z1, v.d, v.e];
    let sigma4 = [v.c, v.y1, v.g1, v.a, v.b];
    assert!(hb_prefix(&sigma4, &events[1..], &events[..1], 4, 4));
    assert!(!hb_prefix(&sigma1, &sigma4, &[], 4, 4));
    assert!(compatible(&sigma4, &sigma2, &[], 4, 4));
    assert!(compatible(&sigma4, &sigma3, &[], 4, 4));
    assert!(!compatible(&sigma1, &sigma4, &[], 4, 4));
}

#[test]
fn sigma4_characterization_renders() {
    let prog = fig1();
    let (_, chars) = sigma4_chars();
    let text: Vec<String> = chars.iter().map(|psi| psi.render(&prog)).collect();
    assert_eq!(
        text,
        [
            // contained and conflicting schedules; the head b=x is already a read
            "{s.1:R(y)}<q.2:W(z) s.2:R(z) s.3:R(x)> |> x^{r.3:R(x)}",
            // schedules inherited from the one-event schedule c=y
            "<<r.1:W(g)> |> y^{r.2:R(y)}> |> x^{r.3:R(x)}",
        ]
    );
}

#[test]
fn contained_and_conflicting_continuations_block() {
    let v = ev();
    let (sigma, chars) = sigma4_chars();
    // contained: z=1 · d=z · e=x
    assert!(blocked_after(&sigma, &chars, &[v.z1, v.d, v.e]));
    // conflicting: d=z · e=x
    assert!(blocked_after(&sigma, &chars, &[v.d, v.e]));
    // writing x first makes the read of x a new one
    assert!(!blocked_after(&sigma, &chars, &[v.x1, v.z1, v.d, v.e]));
    assert!(!blocked_after(&sigma, &chars, &[v.z1, v.d]));
}
