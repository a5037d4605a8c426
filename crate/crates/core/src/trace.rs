//! Events, executions and the happens-before machinery the explorer works over.
//!
//! An [`Execution`] is a sequence of [`Entry`] values, each carrying its event, a
//! vector clock encoding happens-before, and the schedule marks used to select
//! parsimonious races. Per-variable and per-thread position indexes keep race
//! detection proportional to the number of accesses on the raced variable.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of a thread in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ThreadId(pub u32);

/// Index of a shared variable in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub u32);

impl ThreadId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl VarId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Access type. Read-modify-writes are classified as writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccessType {
    R,
    W,
}

/// A shared-variable access `<T, x>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Access {
    pub ty: AccessType,
    pub var: VarId,
}

impl Access {
    /// Same variable and at least one write.
    pub fn conflicts(&self, other: &Access) -> bool {
        self.var == other.var && (self.ty == AccessType::W || other.ty == AccessType::W)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Read(VarId),
    Write(VarId),
    Spawn(ThreadId),
    Join(ThreadId),
}

/// One execution step `<t, i, T, x>`: the `index`-th event of `thread`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Event {
    pub thread: ThreadId,
    pub index: u32,
    pub kind: EventKind,
}

impl Event {
    pub fn new(thread: ThreadId, index: u32, kind: EventKind) -> Self {
        Event {
            thread,
            index,
            kind,
        }
    }

    pub fn access(&self) -> Option<Access> {
        match self.kind {
            EventKind::Read(var) => Some(Access {
                ty: AccessType::R,
                var,
            }),
            EventKind::Write(var) => Some(Access {
                ty: AccessType::W,
                var,
            }),
            EventKind::Spawn(_) | EventKind::Join(_) => None,
        }
    }

    pub fn var(&self) -> Option<VarId> {
        self.access().map(|a| a.var)
    }

    pub fn is_read(&self) -> bool {
        matches!(self.kind, EventKind::Read(_))
    }

    pub fn is_write(&self) -> bool {
        matches!(self.kind, EventKind::Write(_))
    }

    pub fn is_read_of(&self, var: VarId) -> bool {
        self.kind == EventKind::Read(var)
    }

    /// Different threads, same variable, at least one write.
    pub fn conflicts_with(&self, other: &Event) -> bool {
        self.thread != other.thread
            && match (self.access(), other.access()) {
                (Some(a), Some(b)) => a.conflicts(&b),
                _ => false,
            }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EventKind::Read(v) => write!(f, "<t{},{},R,v{}>", self.thread.0, self.index, v.0),
            EventKind::Write(v) => write!(f, "<t{},{},W,v{}>", self.thread.0, self.index, v.0),
            EventKind::Spawn(t) => write!(f, "<t{},{},SPAWN,t{}>", self.thread.0, self.index, t.0),
            EventKind::Join(t) => write!(f, "<t{},{},JOIN,t{}>", self.thread.0, self.index, t.0),
        }
    }
}

/// Dependence `e ⋈ e'`: same thread, conflicting accesses, or a spawn/join edge
/// between a thread and the events that create or wait for it.
pub fn dependent(a: &Event, b: &Event) -> bool {
    if a.thread == b.thread {
        return true;
    }
    match (a.kind, b.kind) {
        (EventKind::Spawn(t), _) if b.thread == t => true,
        (_, EventKind::Spawn(t)) if a.thread == t => true,
        (EventKind::Join(t), _) if b.thread == t => true,
        (_, EventKind::Join(t)) if a.thread == t => true,
        (EventKind::Spawn(t), EventKind::Join(u)) | (EventKind::Join(u), EventKind::Spawn(t)) => {
            t == u
        }
        _ => match (a.access(), b.access()) {
            (Some(x), Some(y)) => x.conflicts(&y),
            _ => false,
        },
    }
}

/// Vector clock indexed by thread; component `t` is the index of the latest
/// event of `t` that happens-before (or is) the owning event.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct VClock(Vec<u32>);

impl VClock {
    pub fn zero(threads: usize) -> Self {
        VClock(vec![0; threads])
    }

    pub fn get(&self, t: ThreadId) -> u32 {
        self.0.get(t.idx()).copied().unwrap_or(0)
    }

    pub fn set(&mut self, t: ThreadId, v: u32) {
        if t.idx() >= self.0.len() {
            self.0.resize(t.idx() + 1, 0);
        }
        self.0[t.idx()] = v;
    }

    pub fn join(&mut self, other: &VClock) {
        if other.0.len() > self.0.len() {
            self.0.resize(other.0.len(), 0);
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a = (*a).max(*b);
        }
    }

    /// Does `e` (which carries no clock of its own here) happen-before the
    /// event owning this clock? `e` must be a different, earlier event.
    pub fn covers(&self, e: &Event) -> bool {
        self.get(e.thread) >= e.index
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

/// An event paired with its vector clock in some (possibly hypothetical)
/// execution. Happens-before queries against earlier events of the same
/// execution need only the later event's clock.
#[derive(Clone, Copy, Debug)]
pub struct Clocked<'a> {
    pub event: Event,
    pub clock: &'a VClock,
}

impl Clocked<'_> {
    /// `earlier →hb self`.
    pub fn happens_after(&self, earlier: &Event) -> bool {
        *earlier != self.event && self.clock.covers(earlier)
    }
}

/// One position of an execution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub event: Event,
    pub clock: VClock,
    pub in_schedule: bool,
    pub schedule_head: bool,
    /// Opaque tag from the producer (the interpreter stores the program counter).
    pub tag: u32,
}

/// Canonical encoding of an hb-trace: events sorted by `(thread, index)`, each
/// with its vector clock. Two executions are equivalent iff their fingerprints
/// are equal.
///
/// Byte format, one line per event:
/// `t<thread>.<index>.<K>[.<operand>]|<c0>,<c1>,...\n` where `K` is one of
/// `R`, `W` (operand: variable index), `S`, `J` (operand: thread index).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TraceFingerprint(Vec<(Event, VClock)>);

impl TraceFingerprint {
    pub fn from_pairs(mut pairs: Vec<(Event, VClock)>) -> Self {
        pairs.sort_by_key(|(e, _)| (e.thread, e.index));
        TraceFingerprint(pairs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        use std::fmt::Write;
        let mut s = String::new();
        for (e, c) in &self.0 {
            let (k, operand) = match e.kind {
                EventKind::Read(v) => ('R', v.0),
                EventKind::Write(v) => ('W', v.0),
                EventKind::Spawn(t) => ('S', t.0),
                EventKind::Join(t) => ('J', t.0),
            };
            let _ = write!(s, "t{}.{}.{}.{}|", e.thread.0, e.index, k, operand);
            for (i, v) in c.as_slice().iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{v}");
            }
            s.push('\n');
        }
        s.into_bytes()
    }
}

/// Execution sequence with incremental happens-before.
#[derive(Clone, Debug)]
pub struct Execution {
    threads: usize,
    entries: Vec<Entry>,
    var_pos: Vec<Vec<u32>>,
    thread_pos: Vec<Vec<u32>>,
    spawn_pos: Vec<Option<u32>>,
    head_pos: Vec<u32>,
}

impl Execution {
    pub fn new(threads: usize, vars: usize) -> Self {
        Execution {
            threads,
            entries: Vec::new(),
            var_pos: vec![Vec::new(); vars],
            thread_pos: vec![Vec::new(); threads],
            spawn_pos: vec![None; threads],
            head_pos: Vec::new(),
        }
    }

    /// Builds an unmarked execution from a plain event sequence.
    pub fn from_events(threads: usize, vars: usize, events: &[Event]) -> Self {
        let mut ex = Execution::new(threads, vars);
        for e in events {
            ex.push(*e, 0);
        }
        ex
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entry(&self, pos: usize) -> &Entry {
        &self.entries[pos]
    }

    pub fn event(&self, pos: usize) -> Event {
        self.entries[pos].event
    }

    pub fn events(&self) -> impl Iterator<Item = Event> + '_ {
        self.entries.iter().map(|e| e.event)
    }

    pub fn last(&self) -> Option<&Entry> {
        self.entries.last()
    }

    /// `entries[i] →hb entries[j]`.
    pub fn happens_before(&self, i: usize, j: usize) -> bool {
        i < j && self.entries[j].clock.covers(&self.entries[i].event)
    }

    /// Appends an unmarked event, computing its clock.
    pub fn push(&mut self, event: Event, tag: u32) {
        self.push_marked(event, tag, false, false);
    }

    pub fn push_marked(&mut self, event: Event, tag: u32, in_schedule: bool, head: bool) {
        let clock = self.clock_if_appended(&event);
        self.push_entry(Entry {
            event,
            clock,
            in_schedule,
            schedule_head: head,
            tag,
        });
    }

    /// Appends an entry whose clock was computed against the current contents.
    pub fn push_entry(&mut self, entry: Entry) {
        debug_assert!(!entry.schedule_head || entry.in_schedule);
        let pos = self.entries.len() as u32;
        let e = entry.event;
        if let Some(v) = e.var() {
            self.var_pos[v.idx()].push(pos);
        }
        self.thread_pos[e.thread.idx()].push(pos);
        if let EventKind::Spawn(t) = e.kind {
            self.spawn_pos[t.idx()] = Some(pos);
        }
        if entry.schedule_head {
            self.head_pos.push(pos);
        }
        self.entries.push(entry);
    }

    /// Removes and returns every entry at position `p` or later.
    pub fn split_off(&mut self, p: usize) -> Vec<Entry> {
        let tail = self.entries.split_off(p);
        let p = p as u32;
        for list in self.var_pos.iter_mut().chain(self.thread_pos.iter_mut()) {
            while list.last().is_some_and(|&q| q >= p) {
                list.pop();
            }
        }
        for s in self.spawn_pos.iter_mut() {
            if s.is_some_and(|q| q >= p) {
                *s = None;
            }
        }
        while self.head_pos.last().is_some_and(|&q| q >= p) {
            self.head_pos.pop();
        }
        tail
    }

    pub fn truncate(&mut self, p: usize) {
        if p < self.entries.len() {
            self.split_off(p);
        }
    }

    /// Re-appends entries previously removed by [`Execution::split_off`].
    pub fn restore(&mut self, tail: Vec<Entry>) {
        for entry in tail {
            self.push_entry(entry);
        }
    }

    /// Clock `e` would get if appended now.
    pub fn clock_if_appended(&self, e: &Event) -> VClock {
        self.clocks_for_suffix(self.entries.len(), std::slice::from_ref(e))
            .pop()
            .expect("one clock per event")
    }

    /// The `index`-th event of thread `t` among the first `limit` entries.
    pub fn thread_event(&self, t: ThreadId, index: u32, limit: usize) -> Option<Event> {
        let list = self.thread_pos.get(t.idx())?;
        let q = *list.get((index as usize).checked_sub(1)?)? as usize;
        (q < limit).then(|| self.entries[q].event)
    }

    /// Number of events of thread `t` among the first `limit` entries.
    pub fn thread_len_before(&self, t: ThreadId, limit: usize) -> usize {
        self.thread_pos[t.idx()].partition_point(|&q| (q as usize) < limit)
    }

    fn last_of_thread_before(&self, t: ThreadId, p: usize) -> Option<usize> {
        let list = &self.thread_pos[t.idx()];
        let k = list.partition_point(|&q| (q as usize) < p);
        (k > 0).then(|| list[k - 1] as usize)
    }

    fn spawn_before(&self, t: ThreadId, p: usize) -> Option<usize> {
        self.spawn_pos[t.idx()]
            .map(|q| q as usize)
            .filter(|&q| q < p)
    }

    /// Clock contribution of the accesses to `var` in `entries[..p]` that a new
    /// access of type `ty` would depend on.
    fn var_frontier(&self, var: VarId, p: usize, ty: AccessType) -> VClock {
        let list = &self.var_pos[var.idx()];
        let k = list.partition_point(|&q| (q as usize) < p);
        let mut c = VClock::zero(self.threads);
        for &q in list[..k].iter().rev() {
            let entry = &self.entries[q as usize];
            if entry.event.is_write() {
                c.join(&entry.clock);
                break;
            }
            if ty == AccessType::W {
                c.join(&entry.clock);
            }
        }
        c
    }

    /// Clocks of `seq` in the hypothetical execution `entries[..p] · seq`.
    pub fn clocks_for_suffix(&self, p: usize, seq: &[Event]) -> Vec<VClock> {
        let mut thread_last: Vec<Option<usize>> = vec![None; self.threads];
        let mut spawned: Vec<Option<usize>> = vec![None; self.threads];
        // per variable: (index into `out` of last write in seq, reads since it)
        let mut var_last_write: Vec<Option<usize>> = vec![None; self.var_pos.len()];
        let mut var_reads: Vec<Vec<usize>> = vec![Vec::new(); self.var_pos.len()];
        let mut out: Vec<VClock> = Vec::with_capacity(seq.len());

        for (k, e) in seq.iter().enumerate() {
            let mut c = VClock::zero(self.threads);
            let t = e.thread;
            match thread_last[t.idx()] {
                Some(j) => c.join(&out[j]),
                None => {
                    if let Some(q) = self.last_of_thread_before(t, p) {
                        c.join(&self.entries[q].clock);
                    } else if let Some(j) = spawned[t.idx()] {
                        c.join(&out[j]);
                    } else if let Some(q) = self.spawn_before(t, p) {
                        c.join(&self.entries[q].clock);
                    }
                }
            }
            match e.kind {
                EventKind::Read(x) | EventKind::Write(x) => {
                    let ty = if e.is_write() {
                        AccessType::W
                    } else {
                        AccessType::R
                    };
                    match var_last_write[x.idx()] {
                        Some(j) => c.join(&out[j]),
                        None => c.join(&self.var_frontier(x, p, AccessType::R)),
                    }
                    if ty == AccessType::W {
                        for &j in &var_reads[x.idx()] {
                            c.join(&out[j]);
                        }
                        if var_last_write[x.idx()].is_none() {
                            c.join(&self.var_frontier(x, p, AccessType::W));
                        }
                    }
                }
                EventKind::Spawn(_) => {}
                EventKind::Join(u) => {
                    match thread_last[u.idx()] {
                        Some(j) => c.join(&out[j]),
                        None => {
                            if let Some(q) = self.last_of_thread_before(u, p) {
                                c.join(&self.entries[q].clock);
                            }
                        }
                    }
                    if let Some(j) = spawned[u.idx()] {
                        c.join(&out[j]);
                    } else if let Some(q) = self.spawn_before(u, p) {
                        c.join(&self.entries[q].clock);
                    }
                }
            }
            c.set(t, e.index);
            out.push(c);
            thread_last[t.idx()] = Some(k);
            match e.kind {
                EventKind::Write(x) => {
                    var_last_write[x.idx()] = Some(k);
                    var_reads[x.idx()].clear();
                }
                EventKind::Read(x) => var_reads[x.idx()].push(k),
                EventKind::Spawn(u) => spawned[u.idx()] = Some(k),
                EventKind::Join(_) => {}
            }
        }
        out
    }

    /// The direct non-variable predecessor of the event at `pos`: the previous
    /// event of its thread, or its spawn event if it is the thread's first.
    fn structural_pred(&self, pos: usize) -> Option<usize> {
        let t = self.entries[pos].event.thread;
        self.last_of_thread_before(t, pos)
            .or_else(|| self.spawn_before(t, pos))
    }

    /// Positions `p` of events racing with the last event, latest first.
    ///
    /// A race needs different threads, `e →hb last`, and no event strictly
    /// between them in happens-before. Spawn and join events never race.
    pub fn races_with_last(&self) -> Vec<usize> {
        let Some(last_pos) = self.entries.len().checked_sub(1) else {
            return Vec::new();
        };
        let last = self.entries[last_pos].event;
        let Some(acc) = last.access() else {
            return Vec::new();
        };
        let list = &self.var_pos[acc.var.idx()];
        debug_assert_eq!(list.last().copied(), Some(last_pos as u32));
        let before = &list[..list.len() - 1];
        let pred = self.structural_pred(last_pos);
        let via_pred = |c: usize| pred.is_some_and(|d| d == c || self.happens_before(c, d));

        let mut races = Vec::new();
        match acc.ty {
            AccessType::R => {
                if let Some(&w) = before
                    .iter()
                    .rev()
                    .find(|&&q| self.entries[q as usize].event.is_write())
                {
                    let w = w as usize;
                    if self.entries[w].event.thread != last.thread && !via_pred(w) {
                        races.push(w);
                    }
                }
            }
            AccessType::W => {
                // the last write plus the reads after it; earlier accesses all
                // happen-before the last write
                let start = before
                    .iter()
                    .rposition(|&q| self.entries[q as usize].event.is_write())
                    .unwrap_or(0);
                let cands = &before[start..];
                for (k, &c) in cands.iter().enumerate().rev() {
                    let c = c as usize;
                    if self.entries[c].event.thread == last.thread || via_pred(c) {
                        continue;
                    }
                    let shadowed = cands[k + 1..]
                        .iter()
                        .any(|&d| self.happens_before(c, d as usize));
                    if !shadowed {
                        races.push(c);
                    }
                }
            }
        }
        races
    }

    /// Is the event at `e2_pos` fresh after the event at `e_pos`: if it is in a
    /// schedule it is that schedule's head, and every schedule head strictly
    /// between the two happens-before it.
    pub fn is_fresh(&self, e_pos: usize, e2_pos: usize) -> bool {
        let entry = &self.entries[e2_pos];
        if entry.in_schedule && !entry.schedule_head {
            return false;
        }
        let lo = self.head_pos.partition_point(|&q| (q as usize) <= e_pos);
        self.head_pos[lo..]
            .iter()
            .map(|&q| q as usize)
            .take_while(|&q| q < e2_pos)
            .all(|h| self.happens_before(h, e2_pos))
    }

    /// Races with the last event whose first event is outside any schedule and
    /// whose second event is fresh, latest first.
    pub fn parsimonious_races(&self) -> Vec<usize> {
        let Some(last) = self.entries.len().checked_sub(1) else {
            return Vec::new();
        };
        self.races_with_last()
            .into_iter()
            .filter(|&p| !self.entries[p].in_schedule && self.is_fresh(p, last))
            .collect()
    }

    /// Positions of `head↓` over the window `(after, head]`: the head plus every
    /// event in the window that happens-before it.
    pub fn schedule_closure(&self, after: usize, head: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (after + 1..head)
            .filter(|&q| self.happens_before(q, head))
            .collect();
        out.push(head);
        out
    }

    /// Positions of schedule heads, ascending.
    pub fn head_positions(&self) -> &[u32] {
        &self.head_pos
    }

    pub fn fingerprint(&self) -> TraceFingerprint {
        TraceFingerprint::from_pairs(
            self.entries
                .iter()
                .map(|e| (e.event, e.clock.clone()))
                .collect(),
        )
    }
}

/// `w ⊑ w2` after `ctx`: `w`'s events occur in `w2`, form a happens-before
/// downward-closed set there, and keep the relative order of dependent pairs.
pub fn hb_prefix(w: &[Event], w2: &[Event], ctx: &[Event], threads: usize, vars: usize) -> bool {
    let full = Execution::from_events(threads, vars, &[ctx, w2].concat());
    let base = ctx.len();
    let mut image: Vec<usize> = Vec::with_capacity(w.len());
    let mut used = vec![false; w2.len()];
    for e in w {
        match (0..w2.len()).find(|&k| !used[k] && w2[k] == *e) {
            Some(k) => {
                used[k] = true;
                image.push(k);
            }
            None => return false,
        }
    }
    // downward closure inside w2
    for k in 0..w2.len() {
        if used[k] {
            continue;
        }
        if image
            .iter()
            .any(|&i| full.happens_before(base + k, base + i))
        {
            return false;
        }
    }
    // dependent pairs of w keep their order
    for a in 0..image.len() {
        for b in a + 1..image.len() {
            if image[a] > image[b] && dependent(&w[a], &w[b]) {
                return false;
            }
        }
    }
    true
}

/// `w ∼ w2` after `ctx`: some common extension makes them equivalent.
pub fn compatible(w: &[Event], w2: &[Event], ctx: &[Event], threads: usize, vars: usize) -> bool {
    let mut joined: Vec<Event> = w.to_vec();
    let mut rest: Vec<Event> = w2.to_vec();
    for e in w {
        if let Some(k) = rest.iter().position(|x| x == e) {
            rest.remove(k);
        }
    }
    joined.extend(rest);
    hb_prefix(w2, &joined, ctx, threads, vars)
}
