//! Sleep sets over read schedules.
//!
//! After a read schedule is explored, continuations of it must not complete
//! another read schedule that was ordered before it at the same branch point.
//! Two interchangeable representations of that "do not complete" set are
//! provided behind [`SleepSetRepr`]:
//!
//! - [`ExprSleepSets`] keeps a polynomial-size symbolic characterization: each
//!   [`SleepSetExpr`] describes a family of schedules through the remainder of
//!   the execution the schedule was carved from, the heads of the schedules
//!   inside it, and (for inherited schedules) a nested expression.
//! - [`ExplicitSleepSets`] stores the forbidden schedules verbatim and blocks
//!   when a continuation completes one. It is exponential in the worst case and
//!   exists as a differential oracle.
//!
//! Expressions are immutable; updates share unchanged parts through `Rc`, so a
//! characterization stored for a prefix stays valid while its extensions are
//! explored.

use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::trace::{dependent, Event, Execution, VClock, VarId};

/// Outcome of feeding one event to a sleep-set expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// The event completes a characterized read schedule.
    Block,
    /// The event does not touch the expression.
    Indep,
    /// The expression changed but nothing is completed yet.
    Continue,
}

/// Happens-before queries against the hypothetical execution
/// `exec[..base] · extra`, asked on behalf of `extra[k]`.
pub struct HbView<'a> {
    exec: &'a Execution,
    base: usize,
    extra: &'a [Event],
    clocks: &'a [VClock],
}

impl<'a> HbView<'a> {
    pub fn new(exec: &'a Execution, base: usize, extra: &'a [Event], clocks: &'a [VClock]) -> Self {
        debug_assert_eq!(extra.len(), clocks.len());
        HbView {
            exec,
            base,
            extra,
            clocks,
        }
    }

    pub fn len(&self) -> usize {
        self.extra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.extra.is_empty()
    }

    pub fn event(&self, k: usize) -> Event {
        self.extra[k]
    }

    pub fn events(&self) -> &'a [Event] {
        self.extra
    }

    /// `a →hb extra[k]`. `a` may come from another execution; it only counts
    /// if this execution performs the very same step.
    pub fn hb(&self, a: &Event, k: usize) -> bool {
        let b = &self.extra[k];
        if a == b || self.clocks[k].get(a.thread) < a.index {
            return false;
        }
        self.performs(a)
    }

    fn performs(&self, a: &Event) -> bool {
        let n = self.exec.thread_len_before(a.thread, self.base);
        let i = a.index as usize;
        if i <= n {
            self.exec.thread_event(a.thread, a.index, self.base) == Some(*a)
        } else {
            self.extra
                .iter()
                .filter(|e| e.thread == a.thread)
                .nth(i - n - 1)
                == Some(a)
        }
    }
}

/// Event of an expression sequence with its conflict set: encountered events
/// that conflict with it or depend on such an event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedEvent {
    pub event: Event,
    pub conflicts: Vec<Event>,
}

/// `w0 {h1} w1 … {hi} wi`: remainder sequences separated by schedule heads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PSeq {
    segments: Vec<Rc<Vec<AnnotatedEvent>>>,
    heads: Vec<Event>,
}

impl PSeq {
    pub fn new(segments: Vec<Vec<Event>>, heads: Vec<Event>) -> Self {
        assert_eq!(segments.len(), heads.len() + 1, "one more segment than heads");
        PSeq {
            segments: segments
                .into_iter()
                .map(|s| {
                    Rc::new(
                        s.into_iter()
                            .map(|event| AnnotatedEvent {
                                event,
                                conflicts: Vec::new(),
                            })
                            .collect(),
                    )
                })
                .collect(),
            heads,
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = &[AnnotatedEvent]> {
        self.segments.iter().map(|s| s.as_slice())
    }

    pub fn heads(&self) -> &[Event] {
        &self.heads
    }

    fn render(&self, names: &dyn Namer) -> String {
        let mut s = String::new();
        for (j, seg) in self.segments.iter().enumerate() {
            if !seg.is_empty() {
                s.push('<');
                let parts: Vec<String> = seg
                    .iter()
                    .map(|a| {
                        let mut t = names.event(&a.event);
                        if !a.conflicts.is_empty() {
                            t.push_str(&format!("^{}", render_set(&a.conflicts, names)));
                        }
                        t
                    })
                    .collect();
                s.push_str(&parts.join(" "));
                s.push('>');
            }
            if let Some(h) = self.heads.get(j) {
                s.push_str(&format!("{{{}}}", names.event(h)));
            }
        }
        s
    }
}

fn render_set(events: &[Event], names: &dyn Namer) -> String {
    let parts: Vec<String> = events.iter().map(|e| names.event(e)).collect();
    format!("{{{}}}", parts.join(","))
}

/// Names used when rendering expressions.
pub trait Namer {
    fn event(&self, e: &Event) -> String;
    fn var(&self, v: VarId) -> String;
}

impl Namer for crate::model::Program {
    fn event(&self, e: &Event) -> String {
        self.event_label(e)
    }

    fn var(&self, v: VarId) -> String {
        self.vars[v.idx()].clone()
    }
}

/// Sleep-set expression: `P |> x^R` or `P[inner]^D |> x^R`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SleepSetExpr {
    /// Contained and conflicting read-`var` schedules.
    Flat {
        p: PSeq,
        var: VarId,
        reads: Vec<Event>,
    },
    /// Read-`var` schedules inherited from those characterized by `inner`.
    Nested {
        p: PSeq,
        inner: Rc<SleepSetExpr>,
        heads_seen: Vec<Event>,
        var: VarId,
        reads: Vec<Event>,
    },
}

impl SleepSetExpr {
    pub fn flat(p: PSeq, var: VarId) -> Self {
        SleepSetExpr::Flat {
            p,
            var,
            reads: Vec::new(),
        }
    }

    pub fn nested(p: PSeq, inner: Rc<SleepSetExpr>, var: VarId) -> Self {
        SleepSetExpr::Nested {
            p,
            inner,
            heads_seen: Vec::new(),
            var,
            reads: Vec::new(),
        }
    }

    /// Marks `e` as an already encountered read of the guarded variable.
    pub fn with_read(mut self, e: Event) -> Self {
        match &mut self {
            SleepSetExpr::Flat { reads, .. } | SleepSetExpr::Nested { reads, .. } => reads.push(e),
        }
        self
    }

    pub fn var(&self) -> VarId {
        match self {
            SleepSetExpr::Flat { var, .. } | SleepSetExpr::Nested { var, .. } => *var,
        }
    }

    pub fn p(&self) -> &PSeq {
        match self {
            SleepSetExpr::Flat { p, .. } | SleepSetExpr::Nested { p, .. } => p,
        }
    }

    pub fn reads(&self) -> &[Event] {
        match self {
            SleepSetExpr::Flat { reads, .. } | SleepSetExpr::Nested { reads, .. } => reads,
        }
    }

    /// Nesting depth; a flat expression has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            SleepSetExpr::Flat { .. } => 1,
            SleepSetExpr::Nested { inner, .. } => 1 + inner.depth(),
        }
    }

    /// Number of events stored anywhere in the expression, annotations included.
    pub fn size(&self) -> usize {
        let p = self.p();
        let own = p.heads.len()
            + p.segments
                .iter()
                .flat_map(|s| s.iter())
                .map(|a| 1 + a.conflicts.len())
                .sum::<usize>()
            + self.reads().len();
        match self {
            SleepSetExpr::Flat { .. } => own,
            SleepSetExpr::Nested {
                inner, heads_seen, ..
            } => own + heads_seen.len() + inner.size(),
        }
    }

    /// Text form, e.g. `{c=y}<z=1 d=z e=x> |> x`; augmentation sets appear as
    /// `^{…}` suffixes when non-empty.
    pub fn render(&self, names: &dyn Namer) -> String {
        let tail = |var: VarId, reads: &[Event]| {
            let mut s = format!(" |> {}", names.var(var));
            if !reads.is_empty() {
                s.push('^');
                s.push_str(&render_set(reads, names));
            }
            s
        };
        match self {
            SleepSetExpr::Flat { p, var, reads } => {
                let mut body = p.render(names);
                if body.is_empty() {
                    body.push_str("<>");
                }
                body + &tail(*var, reads)
            }
            SleepSetExpr::Nested {
                p,
                inner,
                heads_seen,
                var,
                reads,
            } => {
                let mut s = p.render(names);
                s.push('<');
                s.push_str(&inner.render(names));
                s.push('>');
                if !heads_seen.is_empty() {
                    s.push('^');
                    s.push_str(&render_set(heads_seen, names));
                }
                s + &tail(*var, reads)
            }
        }
    }
}

struct PStep {
    verdict: Verdict,
    p: Option<PSeq>,
}

/// Feeds `view.event(k)` to the sequence part of an expression guarding
/// read-`x` schedules. `fresh` tells whether the event is a read on `x` that
/// happens after none of the reads on `x` already seen.
fn upd_p(p: &PSeq, x: VarId, fresh: bool, view: &HbView<'_>, k: usize) -> PStep {
    let e = view.event(k);
    let mut hit = None;
    'scan: for (j, seg) in p.segments.iter().enumerate() {
        for (l, a) in seg.iter().enumerate() {
            if e.conflicts_with(&a.event) || a.conflicts.iter().any(|c| dependent(&e, c)) {
                hit = Some((j, l, false));
                break 'scan;
            }
            if e == a.event {
                hit = Some((j, l, true));
                break 'scan;
            }
        }
    }
    let Some((j, l, remove)) = hit else {
        return PStep {
            verdict: Verdict::Indep,
            p: None,
        };
    };
    let mut seg = (*p.segments[j]).clone();
    if remove {
        seg.remove(l);
    } else {
        seg[l].conflicts.push(e);
    }
    let mut updated = p.clone();
    updated.segments[j] = Rc::new(seg);

    let verdict = if fresh && e.is_read_of(x) && p.heads[..j].iter().all(|h| view.hb(h, k)) {
        Verdict::Block
    } else {
        Verdict::Continue
    };
    PStep {
        verdict,
        p: Some(updated),
    }
}

fn with(v: &[Event], e: Event) -> Vec<Event> {
    let mut out = v.to_vec();
    out.push(e);
    out
}

/// Feeds `view.event(k)` to `psi`. The updated expression is `None` when
/// nothing changed; it is returned even on [`Verdict::Block`].
pub fn upd_se(psi: &Rc<SleepSetExpr>, view: &HbView<'_>, k: usize) -> (Verdict, Option<Rc<SleepSetExpr>>) {
    let e = view.event(k);
    // a read on x that happens after an earlier one cannot head a
    // read-x-schedule; every other read on x is remembered, blocking or not
    let reads = psi.reads();
    let fresh = e.is_read_of(psi.var()) && !reads.iter().any(|r| view.hb(r, k));
    let reads_after = || if fresh { with(reads, e) } else { reads.to_vec() };
    match &**psi {
        SleepSetExpr::Flat { p, var, .. } => {
            let step = upd_p(p, *var, fresh, view, k);
            if step.p.is_none() && !fresh {
                return (step.verdict, None);
            }
            let p = step.p.unwrap_or_else(|| p.clone());
            (
                step.verdict,
                Some(Rc::new(SleepSetExpr::Flat {
                    p,
                    var: *var,
                    reads: reads_after(),
                })),
            )
        }
        SleepSetExpr::Nested {
            p, inner, heads_seen, var, ..
        } => {
            let x = *var;
            let step = upd_p(p, x, fresh, view, k);
            if step.verdict != Verdict::Indep {
                let p = step.p.expect("non-indep steps update the sequence");
                return (
                    step.verdict,
                    Some(Rc::new(SleepSetExpr::Nested {
                        p,
                        inner: inner.clone(),
                        heads_seen: heads_seen.clone(),
                        var: x,
                        reads: reads_after(),
                    })),
                );
            }
            // a read on x heads a schedule when it is fresh and happens after
            // every head of the sequence
            let qualifies = fresh && p.heads.iter().all(|h| view.hb(h, k));
            let verdict_if = |q: bool| if q { Verdict::Block } else { Verdict::Continue };
            let rebuild = |inner: Rc<SleepSetExpr>, heads_seen: Vec<Event>| {
                Rc::new(SleepSetExpr::Nested {
                    p: p.clone(),
                    inner,
                    heads_seen,
                    var: x,
                    reads: reads_after(),
                })
            };
            if e.is_read_of(x) && heads_seen.iter().any(|d| d.var() != Some(x) && view.hb(d, k)) {
                return (verdict_if(qualifies), Some(rebuild(inner.clone(), heads_seen.clone())));
            }
            let (iv, inner_upd) = upd_se(inner, view, k);
            let inner2 = inner_upd.clone().unwrap_or_else(|| inner.clone());
            match iv {
                Verdict::Block if inner.var() == x => {
                    (verdict_if(qualifies), Some(rebuild(inner2, with(heads_seen, e))))
                }
                Verdict::Block => (Verdict::Continue, Some(rebuild(inner2, with(heads_seen, e)))),
                _ if inner_upd.is_none() && !fresh => (iv, None),
                _ => (iv, Some(rebuild(inner2, heads_seen.clone()))),
            }
        }
    }
}

/// A sleep-set characterization: the expressions attached to one prefix.
pub type SsChar = Rc<Vec<Rc<SleepSetExpr>>>;

/// Feeds every event of `view` to every expression. Returns `None` (block) as
/// soon as one expression reports a completed schedule. A write to `y` drops
/// the expressions guarding read-`y` schedules.
pub fn upd_seq(chars: &SsChar, view: &HbView<'_>) -> Option<SsChar> {
    let mut cur = chars.clone();
    for k in 0..view.len() {
        let e = view.event(k);
        let mut changed = false;
        let mut next = Vec::with_capacity(cur.len());
        for psi in cur.iter() {
            let (v, upd) = upd_se(psi, view, k);
            if v == Verdict::Block {
                return None;
            }
            if e.is_write() && e.var() == Some(psi.var()) {
                changed = true;
                continue;
            }
            match upd {
                Some(u) => {
                    changed = true;
                    next.push(u);
                }
                None => next.push(psi.clone()),
            }
        }
        if changed {
            cur = Rc::new(next);
        }
    }
    Some(cur)
}

/// Everything known when a new schedule is formed from a race: the current
/// execution `exec = E1 · e · E2` whose last event is the schedule's head, the
/// position `branch = |E1|`, the schedule itself, and per-position
/// characterizations of the read schedules already in `exec`.
pub struct ScheduleInput<'a, S> {
    pub exec: &'a Execution,
    pub branch: usize,
    /// Positions in `exec` of the schedule's events, ascending.
    pub sigma_pos: &'a [usize],
    /// The schedule in the hypothetical execution `E1 · σ`.
    pub view: &'a HbView<'a>,
    /// For every position of `exec`, the characterization recorded when the
    /// read schedule headed there was formed.
    pub head_chars: &'a [Option<S>],
    /// Read schedules formed earlier at the same branch point, oldest first.
    pub formed: &'a [Rc<[Event]>],
}

/// Builds the expressions characterizing the read schedules ordered before the
/// new read schedule: one flat expression for contained and conflicting
/// schedules, plus one nested expression per characterization of each read
/// schedule the new schedule swallowed.
pub fn mk_sched_char(input: &ScheduleInput<'_, SsChar>) -> SsChar {
    let exec = input.exec;
    let last = exec.len() - 1;
    let head = exec.event(last);
    let x = head.var().expect("read schedules end in a read");
    let in_sigma: HashSet<usize> = input.sigma_pos.iter().copied().collect();

    let mut done: Vec<Rc<Vec<AnnotatedEvent>>> = Vec::new();
    let mut current: Vec<AnnotatedEvent> = Vec::new();
    let mut heads: Vec<Event> = Vec::new();
    let mut nested = Vec::new();
    let mut in_block = false;
    for q in input.branch + 1..last {
        let entry = exec.entry(q);
        if entry.in_schedule {
            in_block = true;
            if entry.schedule_head {
                in_block = false;
                if let Some(phis) = &input.head_chars[q] {
                    let mut segs = done.clone();
                    segs.push(Rc::new(current.clone()));
                    let p = PSeq {
                        segments: segs,
                        heads: heads.clone(),
                    };
                    for phi in phis.iter() {
                        nested.push(Rc::new(SleepSetExpr::nested(p.clone(), phi.clone(), x).with_read(head)));
                    }
                }
                heads.push(entry.event);
                done.push(Rc::new(std::mem::take(&mut current)));
            }
        } else {
            debug_assert!(!in_block, "schedule blocks are contiguous");
            if !in_sigma.contains(&q) {
                current.push(AnnotatedEvent {
                    event: entry.event,
                    conflicts: Vec::new(),
                });
            }
        }
    }
    // events of an unfinished block belong to the new schedule's own block and
    // are all in σ
    done.push(Rc::new(current));
    // the race's read may itself head a read schedule; its characterization
    // is inherited like those of the schedules before it
    if exec.entry(last).schedule_head {
        if let Some(phis) = &input.head_chars[last] {
            let p = PSeq {
                segments: done.clone(),
                heads: heads.clone(),
            };
            for phi in phis.iter() {
                nested.push(Rc::new(SleepSetExpr::nested(p.clone(), phi.clone(), x).with_read(head)));
            }
        }
    }
    // a later read of x that happens after the schedule's own head cannot head
    // a read-x-schedule
    let flat = Rc::new(SleepSetExpr::flat(PSeq { segments: done, heads }, x).with_read(head));
    let mut out = Vec::with_capacity(1 + nested.len());
    out.push(flat);
    out.extend(nested);
    Rc::new(out)
}

// ---------------------------------------------------------------------------
// Explicit oracle

enum RemStep {
    Keep,
    Drop,
    Shrunk(Rc<[Event]>),
    Complete,
}

/// Advances a pending schedule remainder past `e`.
fn step_remainder(r: &[Event], e: &Event) -> RemStep {
    match r.iter().position(|f| f == e) {
        Some(i) if !r[..i].iter().any(|f| dependent(f, e)) => {
            if r.len() == 1 {
                RemStep::Complete
            } else {
                let mut v = r.to_vec();
                v.remove(i);
                RemStep::Shrunk(v.into())
            }
        }
        Some(_) => RemStep::Drop,
        None if r.iter().any(|f| dependent(f, e)) => RemStep::Drop,
        None => RemStep::Keep,
    }
}

/// Explicit sleep set: the not-yet-performed parts of forbidden schedules.
pub type ExplicitChar = Rc<Vec<Rc<[Event]>>>;

fn explicit_upd_seq(chars: &ExplicitChar, events: &[Event]) -> Option<ExplicitChar> {
    let mut cur = chars.clone();
    for e in events {
        let mut changed = false;
        let mut next = Vec::with_capacity(cur.len());
        for r in cur.iter() {
            match step_remainder(r, e) {
                RemStep::Keep => next.push(r.clone()),
                RemStep::Drop => changed = true,
                RemStep::Shrunk(s) => {
                    changed = true;
                    next.push(s);
                }
                RemStep::Complete => return None,
            }
        }
        if changed {
            cur = Rc::new(next);
        }
    }
    Some(cur)
}

/// A sleep-set representation usable by the explorer.
pub trait SleepSetRepr {
    /// Characterization attached to one prefix; cloning must be cheap.
    type Char: Clone + Default + fmt::Debug;
    /// Characterization recorded for a newly formed read schedule.
    type Sched: Clone + fmt::Debug;

    fn name(&self) -> &'static str;

    /// Whether the explorer must record every read schedule formed at each
    /// branch point (needed by the explicit oracle only).
    fn records_formed(&self) -> bool;

    /// Processes `view`'s events; `None` when they complete a forbidden schedule.
    fn upd_seq(&self, chars: &Self::Char, view: &HbView<'_>) -> Option<Self::Char>;

    fn mk_sched_char(&self, input: &ScheduleInput<'_, Self::Sched>) -> Self::Sched;

    /// Adds a schedule characterization to a prefix characterization.
    fn attach(&self, chars: Self::Char, sched: &Self::Sched) -> Self::Char;

    /// Number of top-level expressions or stored schedules.
    fn count(&self, chars: &Self::Char) -> usize;

    /// Number of stored items including nested sub-expressions.
    fn weight(&self, chars: &Self::Char) -> usize;
}

/// The polynomial-space expression-based representation.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExprSleepSets;

impl SleepSetRepr for ExprSleepSets {
    type Char = SsChar;
    type Sched = SsChar;

    fn name(&self) -> &'static str {
        "pop"
    }

    fn records_formed(&self) -> bool {
        false
    }

    fn upd_seq(&self, chars: &SsChar, view: &HbView<'_>) -> Option<SsChar> {
        upd_seq(chars, view)
    }

    fn mk_sched_char(&self, input: &ScheduleInput<'_, SsChar>) -> SsChar {
        mk_sched_char(input)
    }

    fn attach(&self, chars: SsChar, sched: &SsChar) -> SsChar {
        if sched.is_empty() {
            return chars;
        }
        let mut v = Rc::unwrap_or_clone(chars);
        v.extend(sched.iter().cloned());
        Rc::new(v)
    }

    fn count(&self, chars: &SsChar) -> usize {
        chars.len()
    }

    fn weight(&self, chars: &SsChar) -> usize {
        chars.iter().map(|e| e.depth()).sum()
    }
}

/// The explicit, possibly exponential representation.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExplicitSleepSets;

impl SleepSetRepr for ExplicitSleepSets {
    type Char = ExplicitChar;
    type Sched = ExplicitChar;

    fn name(&self) -> &'static str {
        "pop-explicit"
    }

    fn records_formed(&self) -> bool {
        true
    }

    fn upd_seq(&self, chars: &ExplicitChar, view: &HbView<'_>) -> Option<ExplicitChar> {
        explicit_upd_seq(chars, view.events())
    }

    /// Every read schedule formed earlier at the same branch point, advanced
    /// past the new schedule's events.
    fn mk_sched_char(&self, input: &ScheduleInput<'_, ExplicitChar>) -> ExplicitChar {
        let sigma = input.view.events();
        let mut out = Vec::new();
        for earlier in input.formed {
            let mut r: Rc<[Event]> = earlier.clone();
            let mut alive = true;
            for e in sigma {
                match step_remainder(&r, e) {
                    RemStep::Keep => {}
                    RemStep::Shrunk(s) => r = s,
                    RemStep::Drop => {
                        alive = false;
                        break;
                    }
                    RemStep::Complete => {
                        log::warn!("earlier read schedule completed inside a new schedule");
                        alive = false;
                        break;
                    }
                }
            }
            if alive {
                out.push(r);
            }
        }
        Rc::new(out)
    }

    fn attach(&self, chars: ExplicitChar, sched: &ExplicitChar) -> ExplicitChar {
        if sched.is_empty() {
            return chars;
        }
        let mut v = Rc::unwrap_or_clone(chars);
        v.extend(sched.iter().cloned());
        Rc::new(v)
    }

    fn count(&self, chars: &ExplicitChar) -> usize {
        chars.len()
    }

    fn weight(&self, chars: &ExplicitChar) -> usize {
        chars.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{EventKind, ThreadId};

    fn w(t: u32, i: u32, v: u32) -> Event {
        Event::new(ThreadId(t), i, EventKind::Write(VarId(v)))
    }
    fn r(t: u32, i: u32, v: u32) -> Event {
        Event::new(ThreadId(t), i, EventKind::Read(VarId(v)))
    }

    struct Plain;
    impl Namer for Plain {
        fn event(&self, e: &Event) -> String {
            format!("{e}")
        }
        fn var(&self, v: VarId) -> String {
            format!("v{}", v.0)
        }
    }

    fn feed(chars: &SsChar, threads: usize, vars: usize, events: &[Event]) -> Option<SsChar> {
        let exec = Execution::new(threads, vars);
        let clocks = exec.clocks_for_suffix(0, events);
        upd_seq(chars, &HbView::new(&exec, 0, events, &clocks))
    }

    #[test]
    fn empty_sequence_is_identity() {
        let chars: SsChar = Rc::new(vec![Rc::new(SleepSetExpr::flat(
            PSeq::new(vec![vec![w(0, 1, 1)]], vec![]),
            VarId(0),
        ))]);
        let out = feed(&chars, 2, 2, &[]).unwrap();
        assert!(Rc::ptr_eq(&out, &chars));
    }

    #[test]
    fn write_purges_expressions_on_its_variable() {
        let chars: SsChar = Rc::new(vec![Rc::new(SleepSetExpr::flat(
            PSeq::new(vec![vec![w(1, 1, 1)]], vec![]),
            VarId(0),
        ))]);
        let out = feed(&chars, 3, 2, &[w(2, 1, 0)]).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn contained_schedule_blocks_at_its_head() {
        // remainder <W(v0)@t1 R(v1)@t2>, guarding reads on v1: replaying it
        // completes the contained schedule at the read
        let chars: SsChar = Rc::new(vec![Rc::new(SleepSetExpr::flat(
            PSeq::new(vec![vec![w(1, 1, 0), r(2, 1, 1)]], vec![]),
            VarId(1),
        ))]);
        assert!(feed(&chars, 3, 2, &[w(1, 1, 0), r(2, 1, 1)]).is_none());
        // with only the write, no block, and the write entry is consumed
        let out = feed(&chars, 3, 2, &[w(1, 1, 0)]).unwrap();
        assert_eq!(out[0].p().segments().next().unwrap().len(), 1);
    }

    #[test]
    fn conflicting_schedule_blocks() {
        // the read of v1 arrives before the write it followed originally
        let chars: SsChar = Rc::new(vec![Rc::new(SleepSetExpr::flat(
            PSeq::new(vec![vec![w(1, 1, 1)]], vec![]),
            VarId(1),
        ))]);
        assert!(feed(&chars, 3, 2, &[r(2, 1, 1)]).is_none());
    }

    #[test]
    fn unrelated_event_is_indep() {
        let psi = Rc::new(SleepSetExpr::flat(PSeq::new(vec![vec![w(1, 1, 1)]], vec![]), VarId(1)));
        let exec = Execution::new(3, 3);
        let ev = [r(2, 1, 2)];
        let clocks = exec.clocks_for_suffix(0, &ev);
        let (v, upd) = upd_se(&psi, &HbView::new(&exec, 0, &ev, &clocks), 0);
        assert_eq!(v, Verdict::Indep);
        assert!(upd.is_none());
    }

    #[test]
    fn read_after_recorded_read_does_not_block() {
        let psi = Rc::new(SleepSetExpr::Flat {
            p: PSeq::new(vec![vec![w(1, 1, 1)]], vec![]),
            var: VarId(1),
            reads: vec![r(2, 1, 1)],
        });
        let exec = Execution::new(3, 2);
        let ev = [r(2, 1, 1), r(2, 2, 1)];
        let clocks = exec.clocks_for_suffix(0, &ev);
        let view = HbView::new(&exec, 0, &ev, &clocks);
        // the second read happens after the recorded one: it cannot head a
        // read schedule, and the recorded read already covers it
        let (v, upd) = upd_se(&psi, &view, 1);
        assert_eq!(v, Verdict::Continue);
        assert_eq!(upd.unwrap().reads().len(), 1);
        // the recorded read itself does not happen after itself
        let (v, _) = upd_se(&psi, &view, 0);
        assert_eq!(v, Verdict::Block);
    }

    #[test]
    fn fresh_read_is_recorded_even_when_independent() {
        let psi = Rc::new(SleepSetExpr::flat(PSeq::new(vec![vec![w(1, 1, 0)]], vec![]), VarId(1)));
        let exec = Execution::new(3, 2);
        let ev = [r(2, 1, 1), w(2, 2, 0), r(2, 3, 1)];
        let clocks = exec.clocks_for_suffix(0, &ev);
        let view = HbView::new(&exec, 0, &ev, &clocks);
        let (v, upd) = upd_se(&psi, &view, 0);
        assert_eq!(v, Verdict::Indep);
        let psi = upd.expect("the read is remembered");
        assert_eq!(psi.reads(), &[r(2, 1, 1)]);
        let (_, upd) = upd_se(&psi, &view, 1);
        let psi = upd.expect("conflicting write is recorded");
        // would block if the first read had been forgotten
        let (v, _) = upd_se(&psi, &view, 2);
        assert_eq!(v, Verdict::Continue);
    }

    #[test]
    fn rendering() {
        let psi = SleepSetExpr::flat(PSeq::new(vec![vec![], vec![w(1, 1, 1)]], vec![r(2, 1, 0)]), VarId(0));
        assert_eq!(psi.render(&Plain), "{<t2,1,R,v0>}<<t1,1,W,v1>> |> v0");
        let n = SleepSetExpr::nested(PSeq::new(vec![vec![]], vec![]), Rc::new(psi), VarId(1));
        assert!(n.render(&Plain).starts_with("<{"));
        assert_eq!(n.depth(), 2);
    }

    #[test]
    fn explicit_remainders() {
        let chars: ExplicitChar = Rc::new(vec![Rc::from(vec![w(1, 1, 1), r(2, 1, 1)])]);
        assert!(explicit_upd_seq(&chars, &[w(1, 1, 1), r(2, 1, 1)]).is_none());
        // reversed order: the read overtakes a dependent pending write
        assert!(explicit_upd_seq(&chars, &[r(2, 1, 1)]).unwrap().is_empty());
        // unrelated event keeps the remainder shared
        let out = explicit_upd_seq(&chars, &[w(0, 1, 0)]).unwrap();
        assert!(Rc::ptr_eq(&out, &chars));
        // empty sleep set blocks nothing
        let empty = ExplicitChar::default();
        assert!(explicit_upd_seq(&empty, &[w(1, 1, 1)]).is_some());
    }
}
