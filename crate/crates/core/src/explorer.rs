//! The exploration engine, the brute-force oracle, and exploration reports.
//!
//! [`explore`] runs one of three algorithms over a [`Program`]:
//!
//! - `pop`: depth-first exploration that reverses parsimonious races eagerly and
//!   prunes redundant read schedules with sleep-set expressions;
//! - `pop-explicit`: the same engine with the explicit sleep-set oracle;
//! - `brute`: every interleaving, grouped into equivalence classes.
//!
//! The recursion of the race-reversal algorithm is simulated with an explicit
//! frame stack. A frame stands for one pending call on the current execution;
//! switching to a reversed race saves the execution suffix after the branch
//! point on the new frame and restores it when that frame finishes.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::rc::Rc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::model::{GlobalState, Program};
use crate::sleepsets::{ExplicitSleepSets, ExprSleepSets, HbView, ScheduleInput, SleepSetRepr};
use crate::trace::{Entry, Event, Execution, TraceFingerprint};

/// Exploration algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Algorithm {
    #[serde(rename = "pop")]
    Pop,
    #[serde(rename = "pop-explicit")]
    PopExplicit,
    #[serde(rename = "brute")]
    Brute,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pop => "pop",
            Algorithm::PopExplicit => "pop-explicit",
            Algorithm::Brute => "brute",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pop" => Ok(Algorithm::Pop),
            "pop-explicit" | "pop-explicit-sleep" => Ok(Algorithm::PopExplicit),
            "brute" | "brute-force" => Ok(Algorithm::Brute),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExploreConfig {
    pub algorithm: Algorithm,
    /// Report assertion failures (they are always evaluated).
    pub check_asserts: bool,
    /// 0: none; 1: depth, blocked-leaf and size bounds; 2: additionally
    /// per-step race and trace-uniqueness checks.
    pub invariants: u8,
    pub max_executions: Option<u64>,
    pub max_duration: Option<Duration>,
    /// Keep the fingerprint of every maximal execution, in exploration order.
    pub collect_fingerprints: bool,
    /// Keep the event sequence of every maximal execution, in exploration order.
    pub record_executions: bool,
    /// Keep a hash of the trace and of the event sequence of every maximal
    /// execution, in exploration order (cheap variant of the two above).
    pub record_hashes: bool,
    /// Build a DOT rendering of the exploration tree.
    pub dot: bool,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            algorithm: Algorithm::Pop,
            check_asserts: true,
            invariants: 1,
            max_executions: None,
            max_duration: None,
            collect_fingerprints: false,
            record_executions: false,
            record_hashes: false,
            dot: false,
        }
    }
}

impl ExploreConfig {
    pub fn with_algorithm(algorithm: Algorithm) -> Self {
        ExploreConfig {
            algorithm,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub message: String,
    /// The violating execution, one event label per step.
    pub witness: Vec<String>,
    /// Number of explored executions exhibiting this failure.
    pub occurrences: u64,
}

/// Result of one exploration.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Report {
    pub algorithm: String,
    /// Maximal executions explored.
    pub executions: u64,
    /// Distinct equivalence classes among them.
    pub distinct_traces: u64,
    pub assertion_violations: Vec<Violation>,
    /// Reversals skipped because the schedule completed a sleeping one.
    pub blocked_reversals: u64,
    /// Explorations that ended with enabled events all blocked (must be 0).
    pub blocked_leaves: u64,
    pub max_reversal_depth: usize,
    /// Largest number of top-level expressions (or stored schedules) at one prefix.
    pub max_sschar_size: usize,
    /// Largest number of expressions at one prefix, nested ones included.
    pub peak_live_expressions: usize,
    /// Explicit oracle only: most read schedules retained for one branch point
    /// (before they are advanced past the new schedule and pruned).
    pub max_branch_schedules: usize,
    pub peak_frames: usize,
    /// Maximal executions in which some thread waits forever on a join.
    pub deadlocks: u64,
    pub longest_execution: usize,
    /// Internal invariant failures; empty on a correct run.
    pub invariant_violations: Vec<String>,
    /// The run stopped at a limit before completing.
    pub truncated: bool,
    pub wall_ms: u128,
    /// Exploration passes performed (the explicit oracle may need several).
    pub passes: u32,
    #[serde(skip)]
    pub fingerprints: Vec<TraceFingerprint>,
    #[serde(skip)]
    pub executions_log: Vec<Vec<Event>>,
    #[serde(skip)]
    pub trace_hashes: Vec<u128>,
    #[serde(skip)]
    pub sequence_hashes: Vec<u64>,
    #[serde(skip)]
    pub dot: Option<String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn has_violations(&self) -> bool {
        !self.assertion_violations.is_empty() || !self.invariant_violations.is_empty()
    }

    /// Depth bound for a run whose longest execution has `n` events.
    pub fn depth_bound(&self) -> usize {
        let n = self.longest_execution;
        n * n.saturating_sub(1) / 2
    }
}

/// Runs the configured algorithm on `prog`.
pub fn explore(prog: &Program, cfg: &ExploreConfig) -> Report {
    match cfg.algorithm {
        Algorithm::Pop => Engine::new(prog, cfg, ExprSleepSets, None).run().0,
        Algorithm::PopExplicit => explore_explicit(prog, cfg),
        Algorithm::Brute => brute_force(prog, cfg).0,
    }
}

const MAX_LISTED_VIOLATIONS: usize = 32;

/// Keeps violation lists bounded on badly failing runs.
fn push_capped(list: &mut Vec<String>, msg: String) {
    if list.len() < MAX_LISTED_VIOLATIONS {
        list.push(msg);
    } else if list.len() == MAX_LISTED_VIOLATIONS {
        list.push("further violations omitted".to_string());
    }
}

fn hash64<T: Hash + ?Sized>(salt: u16, x: &T) -> u64 {
    let mut h = DefaultHasher::new();
    salt.hash(&mut h);
    x.hash(&mut h);
    h.finish()
}

/// Two independently salted 64-bit hashes; collisions are not a practical concern.
pub fn trace_hash(fp: &TraceFingerprint) -> u128 {
    (u128::from(hash64(1, fp)) << 64) | u128::from(hash64(2, fp))
}

/// Shared bookkeeping for maximal executions.
struct Recorder<'a> {
    prog: &'a Program,
    cfg: &'a ExploreConfig,
    report: Report,
    seen: HashSet<u128>,
    started: Instant,
    ticks: u64,
}

impl<'a> Recorder<'a> {
    fn new(prog: &'a Program, cfg: &'a ExploreConfig) -> Self {
        Recorder {
            prog,
            cfg,
            report: Report {
                algorithm: cfg.algorithm.name().to_string(),
                ..Default::default()
            },
            seen: HashSet::new(),
            started: Instant::now(),
            ticks: 0,
        }
    }

    fn maximal(&mut self, exec: &Execution, state: &GlobalState) {
        let r = &mut self.report;
        r.executions += 1;
        r.longest_execution = r.longest_execution.max(exec.len());
        if !state.all_terminated() {
            r.deadlocks += 1;
        }
        let fp = exec.fingerprint();
        let th = trace_hash(&fp);
        if self.seen.insert(th) {
            r.distinct_traces += 1;
        } else if self.cfg.algorithm != Algorithm::Brute && self.cfg.invariants >= 1 {
            let msg = format!("execution #{} repeats an explored trace", r.executions);
            log::error!("{msg}");
            push_capped(&mut r.invariant_violations, msg);
        }
        if self.cfg.collect_fingerprints {
            r.fingerprints.push(fp);
        }
        if self.cfg.record_executions {
            r.executions_log.push(exec.events().collect());
        }
        if self.cfg.record_hashes {
            r.trace_hashes.push(th);
            let seq: Vec<Event> = exec.events().collect();
            r.sequence_hashes.push(hash64(3, &seq));
        }
        if self.cfg.check_asserts {
            for f in &state.failures {
                match r.assertion_violations.iter_mut().find(|v| v.message == f.message) {
                    Some(v) => v.occurrences += 1,
                    None => r.assertion_violations.push(Violation {
                        message: f.message.clone(),
                        witness: exec.events().map(|e| self.prog.event_label(&e)).collect(),
                        occurrences: 1,
                    }),
                }
            }
        }
    }

    /// Whether a configured limit has been reached.
    fn out_of_budget(&mut self) -> bool {
        if let Some(k) = self.cfg.max_executions {
            if self.report.executions >= k {
                return true;
            }
        }
        self.ticks += 1;
        if self.ticks.is_multiple_of(256) {
            if let Some(d) = self.cfg.max_duration {
                if self.started.elapsed() >= d {
                    return true;
                }
            }
        }
        false
    }

    fn finish(mut self) -> Report {
        self.report.wall_ms = self.started.elapsed().as_millis();
        self.report
    }
}

/// Upper bound on the passes of the explicit oracle.
const EXPLICIT_ROUNDS: u32 = 8;

/// The explicit oracle orders the read schedules of a branch point by where
/// in the exploration tree they were formed, and a schedule may have to avoid
/// schedules that are only formed after it. It therefore runs the exploration
/// repeatedly, each pass using the schedules recorded by the previous one (the
/// first pass falls back to formation order), until the recorded set no longer
/// changes. The final pass is then consistent with its own recorded set.
fn explore_explicit(prog: &Program, cfg: &ExploreConfig) -> Report {
    let started = Instant::now();
    let mut prior: Option<Registry> = None;
    let mut round = 1;
    loop {
        let (mut report, reg) = Engine::new(prog, cfg, ExplicitSleepSets, prior.as_ref()).run();
        let stable = prior.as_ref().is_some_and(|p| p.same_schedules(&reg));
        if stable || report.truncated || round == EXPLICIT_ROUNDS {
            if !stable && !report.truncated {
                report.invariant_violations.push(format!(
                    "explicit oracle did not reach a fixpoint in {EXPLICIT_ROUNDS} passes"
                ));
            }
            report.passes = round;
            report.wall_ms = started.elapsed().as_millis();
            return report;
        }
        log::debug!("explicit oracle pass {round}: {} schedules recorded", reg.len());
        prior = Some(reg);
        round += 1;
    }
}

/// One edge of the exploration tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Step {
    /// An event appended in the exploration phase.
    Ext(Event),
    /// A schedule executed after reversing a race.
    Sched(Rc<[Event]>),
}

/// A node of the exploration tree, identified by its path from the root.
#[derive(Debug)]
struct TreeNode {
    parent: Option<Rc<TreeNode>>,
    step: Option<Step>,
    /// Hash of the path; equal paths in different passes get equal keys.
    key: u128,
    depth: usize,
    dot: usize,
}

impl TreeNode {
    fn root() -> Rc<TreeNode> {
        Rc::new(TreeNode {
            parent: None,
            step: None,
            key: 0,
            depth: 0,
            dot: 0,
        })
    }

    fn child(self: &Rc<Self>, step: Step, dot: usize) -> Rc<TreeNode> {
        let k = (self.key, &step);
        Rc::new(TreeNode {
            key: (u128::from(hash64(3, &k)) << 64) | u128::from(hash64(4, &k)),
            parent: Some(self.clone()),
            step: Some(step),
            depth: self.depth + 1,
            dot,
        })
    }
}

impl Drop for TreeNode {
    // Paths get as long as the longest execution; unlink them iteratively so
    // dropping a deep node does not recurse once per ancestor.
    fn drop(&mut self) {
        let mut next = self.parent.take();
        while let Some(node) = next {
            next = match Rc::try_unwrap(node) {
                Ok(mut owned) => owned.parent.take(),
                Err(_) => None,
            };
        }
    }
}

/// A schedule formed from a race, with the node whose last event was the
/// race's second event.
#[derive(Debug)]
struct Formed {
    events: Rc<[Event]>,
    formation: Rc<TreeNode>,
    read: bool,
    /// Not recorded by the previous pass.
    novel: bool,
}

/// Every schedule formed during one pass, by branch point.
#[derive(Debug, Default)]
struct Registry {
    at: HashMap<u128, Vec<Rc<Formed>>>,
    index: HashMap<(u128, Rc<[Event]>), Rc<Formed>>,
}

impl Registry {
    fn insert(&mut self, branch: u128, formed: Formed) {
        let formed = Rc::new(formed);
        if self.index.insert((branch, formed.events.clone()), formed.clone()).is_none() {
            self.at.entry(branch).or_default().push(formed);
        }
    }

    fn get(&self, branch: u128, events: &Rc<[Event]>) -> Option<&Rc<Formed>> {
        self.index.get(&(branch, events.clone()))
    }

    fn len(&self) -> usize {
        self.index.len()
    }

    fn same_schedules(&self, other: &Registry) -> bool {
        self.len() == other.len() && self.index.keys().all(|k| other.index.contains_key(k))
    }
}

/// Whether the schedule formed at node `a` is ordered before the one formed
/// at node `b`, both formed at the same branch point from the same first event:
/// - `a` was formed on the way to `b`;
/// - at the node where the two paths part, `a`'s path continues with a
///   schedule and `b`'s with an ordinary exploration step;
/// - both continue with different read schedules, ordered the same way.
///
/// `lookup` finds the schedule recorded for a step at a given node.
fn ordered_before(a: &Rc<TreeNode>, b: &Rc<TreeNode>, lookup: &dyn Fn(u128, &Rc<[Event]>) -> Option<Rc<Formed>>) -> bool {
    // climb to the deepest common node, remembering the children below it
    let (mut x, mut y) = (a, b);
    let (mut cx, mut cy): (Option<&Rc<TreeNode>>, Option<&Rc<TreeNode>>) = (None, None);
    while x.depth > y.depth {
        cx = Some(x);
        x = x.parent.as_ref().expect("the root has depth 0");
    }
    while y.depth > x.depth {
        cy = Some(y);
        y = y.parent.as_ref().expect("the root has depth 0");
    }
    while x.key != y.key {
        cx = Some(x);
        cy = Some(y);
        x = x.parent.as_ref().expect("paths share the root");
        y = y.parent.as_ref().expect("paths share the root");
    }
    let (Some(cx), Some(cy)) = (cx, cy) else {
        // one node lies on the path to the other
        return a.depth < b.depth;
    };
    match (&cx.step, &cy.step) {
        (Some(Step::Sched(_)), Some(Step::Ext(_))) => true,
        (Some(Step::Sched(sx)), Some(Step::Sched(sy))) => match (lookup(x.key, sx), lookup(x.key, sy)) {
            (Some(fx), Some(fy)) if fx.read && fy.read => ordered_before(&fx.formation, &fy.formation, lookup),
            _ => false,
        },
        _ => false,
    }
}

const SNAPSHOT_STRIDE: usize = 64;

/// One simulated call of the exploration procedure.
struct Frame<S: SleepSetRepr> {
    /// Positions of first events of races still to reverse, earliest last.
    races: Vec<usize>,
    saved: Option<Saved<S>>,
}

/// What a reversal frame replaced, restored when it finishes.
struct Saved<S: SleepSetRepr> {
    at: usize,
    entries: Vec<Entry>,
    sleep: Vec<S::Char>,
    tree: Vec<Option<Rc<TreeNode>>>,
    head_chars: Vec<Option<S::Sched>>,
    snapshots: Vec<GlobalState>,
    state: GlobalState,
}

struct Engine<'a, S: SleepSetRepr> {
    prog: &'a Program,
    repr: S,
    rec: Recorder<'a>,
    exec: Execution,
    /// Indexed by prefix length.
    sleep: Vec<S::Char>,
    /// Indexed by prefix length; `None` inside a schedule.
    tree: Vec<Option<Rc<TreeNode>>>,
    registry: Registry,
    prior: Option<&'a Registry>,
    /// Indexed by position: characterization of the read schedule headed there.
    head_chars: Vec<Option<S::Sched>>,
    state: GlobalState,
    /// `snapshots[k]` is the state after the first `k * SNAPSHOT_STRIDE` events.
    snapshots: Vec<GlobalState>,
    frames: Vec<Frame<S>>,
    dot: Option<String>,
    next_node: usize,
    size_bound: usize,
}

impl<'a, S: SleepSetRepr> Engine<'a, S> {
    fn new(prog: &'a Program, cfg: &'a ExploreConfig, repr: S, prior: Option<&'a Registry>) -> Self {
        let state = prog.initial_state();
        let n = prog.max_events().min(1 << 20) as usize;
        Engine {
            prog,
            repr,
            rec: Recorder::new(prog, cfg),
            exec: Execution::new(prog.num_threads(), prog.num_vars()),
            sleep: vec![S::Char::default()],
            tree: vec![Some(TreeNode::root())],
            registry: Registry::default(),
            prior,
            head_chars: Vec::new(),
            snapshots: vec![state.clone()],
            state,
            frames: Vec::new(),
            dot: cfg.dot.then(|| "digraph exploration {\n  n0 [label=\"\"];\n".to_string()),
            next_node: 1,
            size_bound: n.saturating_mul(n).max(1),
        }
    }

    fn cfg(&self) -> &ExploreConfig {
        self.rec.cfg
    }

    fn new_node(&mut self, from: usize, label: &str, dashed: bool) -> usize {
        let id = self.next_node;
        self.next_node += 1;
        if let Some(d) = &mut self.dot {
            let style = if dashed { ", style=dashed" } else { "" };
            let _ = writeln!(d, "  n{id} [label=\"\"];");
            let _ = writeln!(d, "  n{from} -> n{id} [label=\"{}\"{style}];", label.replace('"', "'"));
        }
        id
    }

    fn observe_sleep(&mut self, chars: &S::Char) {
        let count = self.repr.count(chars);
        let weight = self.repr.weight(chars);
        let r = &mut self.rec.report;
        r.max_sschar_size = r.max_sschar_size.max(count);
        r.peak_live_expressions = r.peak_live_expressions.max(weight);
        if self.rec.cfg.invariants >= 1 && !self.repr.records_formed() && count > self.size_bound {
            let msg = format!("sleep-set characterization of size {count} exceeds bound {}", self.size_bound);
            if !r.invariant_violations.contains(&msg) {
                log::error!("{msg}");
                r.invariant_violations.push(msg);
            }
        }
    }

    fn push_event(&mut self, entry: Entry, sleep: S::Char, node: Option<Rc<TreeNode>>) {
        self.prog
            .apply_mut(&mut self.state, &entry.event)
            .expect("engine only appends enabled events");
        self.exec.push_entry(entry);
        self.sleep.push(sleep);
        self.tree.push(node);
        self.head_chars.push(None);
        if self.exec.len().is_multiple_of(SNAPSHOT_STRIDE) {
            self.snapshots.push(self.state.clone());
        }
    }

    fn run(mut self) -> (Report, Registry) {
        self.frames.push(Frame {
            races: Vec::new(),
            saved: None,
        });
        self.rec.report.peak_frames = 1;
        loop {
            if self.rec.out_of_budget() {
                self.rec.report.truncated = true;
                break;
            }
            let top = self.frames.last_mut().expect("loop runs while frames exist");
            if let Some(pos) = top.races.pop() {
                self.reverse(pos);
                continue;
            }
            if !self.extend() {
                let done = self.frames.pop().expect("nonempty");
                if let Some(saved) = done.saved {
                    self.restore(saved);
                }
                if self.frames.is_empty() {
                    break;
                }
            }
        }
        let invariants = self.rec.cfg.invariants;
        let mut report = self.rec.finish();
        if let Some(mut d) = self.dot {
            d.push_str("}\n");
            report.dot = Some(d);
        }
        if invariants >= 1 && report.max_reversal_depth > report.depth_bound() && !report.truncated {
            report.invariant_violations.push(format!(
                "reversal depth {} exceeds bound {} for longest execution {}",
                report.max_reversal_depth,
                report.depth_bound(),
                report.longest_execution
            ));
        }
        report.passes = 1;
        (report, self.registry)
    }

    fn node(&self, len: usize) -> &Rc<TreeNode> {
        self.tree[len].as_ref().expect("exploration continues only from tree nodes")
    }

    /// Read schedules of the branch point `branch` that the schedule formed
    /// at `here` must avoid.
    fn preceding(&self, branch: &Rc<TreeNode>, sigma: &Rc<[Event]>, here: &Rc<TreeNode>) -> Vec<Rc<[Event]>> {
        let current = self.registry.at.get(&branch.key).map(Vec::as_slice).unwrap_or_default();
        let Some(prior) = self.prior else {
            return current.iter().filter(|f| f.read).map(|f| f.events.clone()).collect();
        };
        let lookup = |k: u128, ev: &Rc<[Event]>| self.registry.get(k, ev).or_else(|| prior.get(k, ev)).cloned();
        let earlier = prior.at.get(&branch.key).map(Vec::as_slice).unwrap_or_default();
        earlier
            .iter()
            .chain(current.iter().filter(|f| f.novel))
            .filter(|f| f.read && f.events != *sigma)
            .filter(|f| ordered_before(&f.formation, here, &lookup))
            .map(|f| f.events.clone())
            .collect()
    }

    /// Exploration phase: append the first enabled event that does not
    /// complete a sleeping schedule. Returns false when the current call ends.
    fn extend(&mut self) -> bool {
        let len = self.exec.len();
        let enabled = self.prog.enabled_events(&self.state);
        for e in &enabled {
            let clock = self.exec.clock_if_appended(e);
            let ev = [*e];
            let clocks = [clock];
            let view = HbView::new(&self.exec, len, &ev, &clocks);
            let Some(chars) = self.repr.upd_seq(&self.sleep[len], &view) else {
                continue;
            };
            let [clock] = clocks;
            self.observe_sleep(&chars);
            let label = self.prog.event_label(e);
            let parent = self.node(len).clone();
            let dot = self.new_node(parent.dot, &label, false);
            let node = Some(parent.child(Step::Ext(*e), dot));
            self.push_event(
                Entry {
                    event: *e,
                    clock,
                    in_schedule: false,
                    schedule_head: false,
                    tag: 0,
                },
                chars,
                node,
            );
            let mut races = self.exec.parsimonious_races();
            if self.cfg().invariants >= 2 {
                self.check_races(&races);
            }
            races.reverse();
            self.frames.last_mut().expect("nonempty").races = races;
            return true;
        }
        if enabled.is_empty() {
            self.rec.maximal(&self.exec, &self.state);
        } else {
            let msg = format!(
                "all {} enabled events blocked after {} events",
                enabled.len(),
                self.exec.len()
            );
            log::error!("{msg}");
            let r = &mut self.rec.report;
            r.blocked_leaves += 1;
            if self.rec.cfg.invariants >= 1 {
                push_capped(&mut r.invariant_violations, msg);
            }
        }
        false
    }

    fn check_races(&mut self, races: &[usize]) {
        let last = self.exec.len() - 1;
        for &p in races {
            let immediate = !(p + 1..last).any(|q| self.exec.happens_before(p, q) && self.exec.happens_before(q, last));
            if !immediate || !self.exec.happens_before(p, last) {
                let msg = format!("reported race ({p}, {last}) is not a race");
                push_capped(&mut self.rec.report.invariant_violations, msg);
            }
        }
    }

    fn state_at(&self, p: usize) -> GlobalState {
        let k = p / SNAPSHOT_STRIDE;
        let from = k * SNAPSHOT_STRIDE;
        let events: Vec<Event> = (from..p).map(|q| self.exec.event(q)).collect();
        self.prog
            .replay_from(self.snapshots[k].clone(), &events)
            .expect("prefixes of explored executions replay")
    }

    /// Reverses the race between the event at `p` and the last event.
    fn reverse(&mut self, p: usize) {
        let last = self.exec.len() - 1;
        let sigma_pos = self.exec.schedule_closure(p, last);
        let sigma: Vec<Event> = sigma_pos.iter().map(|&q| self.exec.event(q)).collect();
        let clocks = self.exec.clocks_for_suffix(p, &sigma);
        let head = self.exec.event(last);
        let is_read = head.is_read();
        let sigma_rc: Rc<[Event]> = Rc::from(sigma.clone());
        let formed = if is_read && self.repr.records_formed() {
            self.preceding(self.node(p), &sigma_rc, self.node(last + 1))
        } else {
            Vec::new()
        };
        let r = &mut self.rec.report;
        r.max_branch_schedules = r.max_branch_schedules.max(formed.len());

        let (outcome, sched) = {
            let view = HbView::new(&self.exec, p, &sigma, &clocks);
            let outcome = self.repr.upd_seq(&self.sleep[p], &view);
            let sched = (outcome.is_some() && is_read).then(|| {
                self.repr.mk_sched_char(&ScheduleInput {
                    exec: &self.exec,
                    branch: p,
                    sigma_pos: &sigma_pos,
                    view: &view,
                    head_chars: &self.head_chars,
                    formed: &formed,
                })
            });
            (outcome, sched)
        };
        if self.repr.records_formed() {
            let key = self.node(p).key;
            let formation = self.node(last + 1).clone();
            let novel = self.prior.is_none_or(|prior| prior.get(key, &sigma_rc).is_none());
            self.registry.insert(
                key,
                Formed {
                    events: sigma_rc.clone(),
                    formation,
                    read: is_read,
                    novel,
                },
            );
        }
        let Some(mut chars) = outcome else {
            log::debug!("reversal at {p} blocked by sleep set");
            self.rec.report.blocked_reversals += 1;
            return;
        };
        if let Some(s) = &sched {
            chars = self.repr.attach(chars, s);
        }
        self.observe_sleep(&chars);
        log::debug!(
            "reversing race ({p}, {last}): schedule of {} events, depth {}",
            sigma.len(),
            self.frames.len()
        );

        let label: Vec<String> = sigma.iter().map(|e| self.prog.event_label(e)).collect();
        let parent = self.node(p).clone();
        let dot = self.new_node(parent.dot, &label.join(" "), true);
        let mut node = Some(parent.child(Step::Sched(sigma_rc), dot));
        let keep_snaps = p / SNAPSHOT_STRIDE + 1;
        let entries = self.exec.split_off(p);
        let saved = Saved::<S> {
            at: p,
            entries,
            sleep: self.sleep.split_off(p + 1),
            tree: self.tree.split_off(p + 1),
            head_chars: self.head_chars.split_off(p),
            snapshots: self.snapshots.split_off(keep_snaps),
            state: self.state.clone(),
        };
        self.state = self.state_at(p);
        let n = sigma.len();
        let mut chars = Some(chars);
        for (k, (e, clock)) in sigma.into_iter().zip(clocks).enumerate() {
            let is_head = k + 1 == n;
            let entry = Entry {
                event: e,
                clock,
                in_schedule: true,
                schedule_head: is_head,
                tag: 0,
            };
            let sleep = if is_head {
                chars.take().expect("set once")
            } else {
                S::Char::default()
            };
            let here = if is_head { node.take() } else { None };
            self.push_event(entry, sleep, here);
        }
        *self.head_chars.last_mut().expect("schedule is nonempty") = sched;

        let mut races = self.exec.parsimonious_races();
        if self.cfg().invariants >= 2 {
            self.check_races(&races);
        }
        races.reverse();
        self.frames.push(Frame {
            races,
            saved: Some(saved),
        });
        let r = &mut self.rec.report;
        r.max_reversal_depth = r.max_reversal_depth.max(self.frames.len() - 1);
        r.peak_frames = r.peak_frames.max(self.frames.len());
    }

    fn restore(&mut self, saved: Saved<S>) {
        let p = saved.at;
        self.exec.truncate(p);
        self.exec.restore(saved.entries);
        self.sleep.truncate(p + 1);
        self.sleep.extend(saved.sleep);
        self.tree.truncate(p + 1);
        self.tree.extend(saved.tree);
        self.head_chars.truncate(p);
        self.head_chars.extend(saved.head_chars);
        self.snapshots.truncate(p / SNAPSHOT_STRIDE + 1);
        self.snapshots.extend(saved.snapshots);
        self.state = saved.state;
    }
}

/// Enumerates interleavings depth-first and returns the report together with
/// the hashes ([`trace_hash`]) of the equivalence classes of maximal executions.
///
/// With `memoize`, a prefix whose trace was already expanded is skipped: the
/// program is deterministic, so equivalent prefixes reach the same state and
/// have the same continuations up to equivalence. `executions` then counts one
/// execution per class; without it, every interleaving is counted.
pub fn brute_force_with(prog: &Program, cfg: &ExploreConfig, memoize: bool) -> (Report, BTreeSet<u128>) {
    let mut rec = Recorder::new(prog, cfg);
    rec.report.algorithm = Algorithm::Brute.name().to_string();
    let mut classes = BTreeSet::new();
    let mut expanded: HashSet<u128> = HashSet::new();
    let mut exec = Execution::new(prog.num_threads(), prog.num_vars());
    // each level: state before the choice, enabled events, next choice
    let s0 = prog.initial_state();
    let en0 = prog.enabled_events(&s0);
    let mut stack: Vec<(GlobalState, Vec<Event>, usize)> = vec![(s0, en0, 0)];
    while let Some((state, enabled, next)) = stack.last_mut() {
        if enabled.is_empty() {
            rec.maximal(&exec, state);
            classes.insert(trace_hash(&exec.fingerprint()));
            stack.pop();
            exec.truncate(stack.len().saturating_sub(1));
            if rec.out_of_budget() {
                rec.report.truncated = true;
                break;
            }
            continue;
        }
        if *next == enabled.len() {
            stack.pop();
            exec.truncate(stack.len().saturating_sub(1));
            continue;
        }
        let e = enabled[*next];
        *next += 1;
        exec.push(e, 0);
        if memoize && !expanded.insert(trace_hash(&exec.fingerprint())) {
            exec.truncate(exec.len() - 1);
            continue;
        }
        let s = prog.apply_event(state, &e).expect("enabled");
        let en = prog.enabled_events(&s);
        stack.push((s, en, 0));
    }
    rec.report.distinct_traces = classes.len() as u64;
    rec.report.passes = 1;
    (rec.finish(), classes)
}

/// [`brute_force_with`] with prefix memoization.
pub fn brute_force(prog: &Program, cfg: &ExploreConfig) -> (Report, BTreeSet<u128>) {
    brute_force_with(prog, cfg, true)
}

/// Equivalence classes of all maximal executions of `prog`.
pub fn brute_force_classes(prog: &Program) -> BTreeSet<TraceFingerprint> {
    let cfg = ExploreConfig {
        collect_fingerprints: true,
        ..ExploreConfig::with_algorithm(Algorithm::Brute)
    };
    brute_force(prog, &cfg).0.fingerprints.into_iter().collect()
}

/// Outcome of cross-checking the engines on one program.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Verification {
    pub classes: usize,
    pub pop_executions: u64,
    pub explicit_executions: u64,
    pub max_reversal_depth: usize,
    pub depth_bound: usize,
    pub blocked_leaves: u64,
    /// First execution at which the two sleep-set representations differ.
    pub divergence: Option<usize>,
    /// Empty when every check passed.
    pub failures: Vec<String>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs brute force, `pop` and `pop-explicit` on `prog` and checks that `pop`
/// explores exactly one execution per class, and that both sleep-set
/// representations explore the same executions in the same order.
pub fn verify_optimality(prog: &Program, base: &ExploreConfig) -> Verification {
    let mut out = Verification::default();
    let (_, classes) = brute_force(prog, &ExploreConfig::with_algorithm(Algorithm::Brute));
    out.classes = classes.len();
    // a correct run needs exactly one execution per class; stop runaway ones
    let cap = base.max_executions.unwrap_or(u64::MAX).min(2 * classes.len() as u64 + 16);
    let run = |alg, cap| {
        let cfg = ExploreConfig {
            algorithm: alg,
            max_executions: Some(cap),
            collect_fingerprints: false,
            record_executions: false,
            record_hashes: true,
            dot: false,
            ..base.clone()
        };
        explore(prog, &cfg)
    };
    let pop = run(Algorithm::Pop, cap);
    let explicit = run(Algorithm::PopExplicit, cap);
    out.pop_executions = pop.executions;
    out.explicit_executions = explicit.executions;
    out.max_reversal_depth = pop.max_reversal_depth.max(explicit.max_reversal_depth);
    out.depth_bound = pop.depth_bound();
    out.blocked_leaves = pop.blocked_leaves + explicit.blocked_leaves;

    let found: BTreeSet<u128> = pop.trace_hashes.iter().copied().collect();
    let missing = classes.difference(&found).count();
    if missing > 0 {
        out.failures.push(format!("pop missed {missing} of {} classes", classes.len()));
    }
    let unknown = found.difference(&classes).count();
    if unknown > 0 {
        out.failures.push(format!("pop explored {unknown} traces unknown to brute force"));
    }
    if pop.executions != classes.len() as u64 {
        out.failures.push(format!(
            "pop explored {} executions for {} classes",
            pop.executions,
            classes.len()
        ));
    }
    let (a, b) = (&pop.sequence_hashes, &explicit.sequence_hashes);
    let diverge = a
        .iter()
        .zip(b)
        .position(|(x, y)| x != y)
        .or_else(|| (a.len() != b.len()).then_some(a.len().min(b.len())));
    out.divergence = diverge;
    if let Some(k) = diverge {
        // replay both runs up to the divergence to show the two executions
        let show = |alg| {
            let cfg = ExploreConfig {
                algorithm: alg,
                max_executions: Some(k as u64 + 1),
                record_executions: true,
                ..base.clone()
            };
            explore(prog, &cfg)
                .executions_log
                .get(k)
                .map(|w| w.iter().map(|e| prog.event_label(e)).collect::<Vec<_>>().join(" "))
                .unwrap_or_else(|| "<none>".into())
        };
        out.failures.push(format!(
            "pop and pop-explicit diverge at execution #{k}:\n  pop:          {}\n  pop-explicit: {}",
            show(Algorithm::Pop),
            show(Algorithm::PopExplicit)
        ));
    }
    for (name, r) in [("pop", &pop), ("pop-explicit", &explicit)] {
        for v in &r.invariant_violations {
            out.failures.push(format!("{name}: {v}"));
        }
        if r.truncated && r.executions < cap {
            out.failures.push(format!("{name}: run truncated by limits"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_program;

    fn run(src: &str, alg: Algorithm) -> Report {
        let p = parse_program(src).unwrap();
        explore(&p, &ExploreConfig::with_algorithm(alg))
    }

    #[test]
    fn single_thread_has_one_execution() {
        let r = run("thread p { store x 1; load a x; store y a }", Algorithm::Pop);
        assert_eq!(r.executions, 1);
        assert_eq!(r.max_reversal_depth, 0);
    }

    #[test]
    fn empty_program_has_one_empty_execution() {
        let r = run("", Algorithm::Pop);
        assert_eq!(r.executions, 1);
        assert_eq!(r.longest_execution, 0);
    }

    #[test]
    fn store_load_pairs() {
        let src = "thread p { store s 1; load a s }\nthread q { store s 2; load b s }";
        let p = parse_program(src).unwrap();
        let (plain, classes) = brute_force_with(&p, &ExploreConfig::with_algorithm(Algorithm::Brute), false);
        assert_eq!((plain.executions, plain.distinct_traces, classes.len()), (6, 4, 4));
        let memo = run(src, Algorithm::Brute);
        assert_eq!((memo.executions, memo.distinct_traces), (4, 4));
        let r = run(src, Algorithm::Pop);
        assert_eq!((r.executions, r.distinct_traces, r.blocked_leaves), (4, 4, 0));
    }

    #[test]
    fn independent_threads_have_one_class() {
        let src = "thread p { store x 1; load a y }\nthread q { load b y; store z 1 }";
        let r = run(src, Algorithm::Pop);
        assert_eq!(r.executions, 1);
        assert_eq!(run(src, Algorithm::Brute).distinct_traces, 1);
    }

    #[test]
    fn assertion_failures_are_reported_with_witness() {
        let src = "thread p { store x 1 }\nthread q { load a x; assert a == 0 }";
        let r = run(src, Algorithm::Pop);
        assert_eq!(r.executions, 2);
        assert_eq!(r.assertion_violations.len(), 1);
        let v = &r.assertion_violations[0];
        assert_eq!(v.occurrences, 1);
        assert_eq!(v.witness, vec!["p.1:W(x)", "q.1:R(x)"]);
    }

    #[test]
    fn deadlock_counts_as_maximal() {
        let src = "thread p { if 0 { spawn c } join c }\nthread c { store x 1 }";
        let r = run(src, Algorithm::Pop);
        assert_eq!(r.executions, 1);
        assert_eq!(r.deadlocks, 1);
    }

    #[test]
    fn verification_passes_on_small_program() {
        let p = parse_program(
            "thread p { store x 1 }\nthread q { store y 1; store z 1 }\nthread r { load a y; load b x }",
        )
        .unwrap();
        let v = verify_optimality(&p, &ExploreConfig::default());
        assert!(v.passed(), "{:#?}", v.failures);
    }

    #[test]
    fn limits_truncate() {
        let p = parse_program("thread p { store x 1; store x 2 }\nthread q { load a x; load b x }\nthread r { store x 3 }").unwrap();
        let cfg = ExploreConfig {
            max_executions: Some(2),
            ..Default::default()
        };
        let r = explore(&p, &cfg);
        assert!(r.truncated);
        assert_eq!(r.executions, 2);
    }

    #[test]
    fn dot_output_has_dashed_edges() {
        let p = parse_program("thread p { store x 1 }\nthread q { load a x }").unwrap();
        let cfg = ExploreConfig {
            dot: true,
            ..Default::default()
        };
        let d = explore(&p, &cfg).dot.unwrap();
        assert!(d.starts_with("digraph"));
        assert!(d.contains("style=dashed"));
    }
}
