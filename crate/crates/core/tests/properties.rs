//! Property tests over random programs and random interleavings.

use pop_smc::bench::{random_program, RandomLimits};
use pop_smc::explorer::{verify_optimality, ExploreConfig};
use pop_smc::model::Program;
use pop_smc::trace::{compatible, dependent, hb_prefix, Event, Execution};
use proptest::prelude::*;

fn small_limits() -> RandomLimits {
    RandomLimits {
        max_threads: 3,
        max_events: 4,
        max_vars: 2,
        max_total_events: 9,
        ..RandomLimits::default()
    }
}

/// Runs `prog` to completion, picking among enabled events by `choices`.
fn interleave(prog: &Program, choices: &[usize]) -> Vec<Event> {
    let mut state = prog.initial_state();
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let enabled = prog.enabled_events(&state);
        if enabled.is_empty() {
            return out;
        }
        let e = enabled[choices.get(k).copied().unwrap_or(0) % enabled.len()];
        k += 1;
        prog.apply_mut(&mut state, &e).expect("enabled events apply");
        out.push(e);
    }
}

fn exec(prog: &Program, events: &[Event]) -> Execution {
    Execution::from_events(prog.num_threads(), prog.num_vars(), events)
}

fn random_run() -> impl Strategy<Value = (Program, Vec<Event>)> {
    (any::<u64>(), prop::collection::vec(any::<usize>(), 0..40)).prop_map(|(seed, choices)| {
        let prog = random_program(seed, &RandomLimits::default());
        let events = interleave(&prog, &choices);
        (prog, events)
    })
}

/// Transitive closure of "earlier and dependent", computed directly.
fn reachability(events: &[Event]) -> Vec<Vec<bool>> {
    let n = events.len();
    let mut r = vec![vec![false; n]; n];
    for j in 0..n {
        for i in (0..j).rev() {
            if dependent(&events[i], &events[j]) {
                r[i][j] = true;
            } else {
                r[i][j] = (i + 1..j).any(|k| r[i][k] && r[k][j]);
            }
        }
    }
    r
}

/// Positions `i` such that swapping `i` and `i + 1` preserves the trace.
fn swappable(events: &[Event]) -> Vec<usize> {
    (0..events.len().saturating_sub(1))
        .filter(|&i| !dependent(&events[i], &events[i + 1]))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn clocks_agree_with_dependence_closure((prog, events) in random_run()) {
        let ex = exec(&prog, &events);
        let reach = reachability(&events);
        for j in 0..events.len() {
            for i in 0..j {
                prop_assert_eq!(ex.happens_before(i, j), reach[i][j], "positions {} {}", i, j);
            }
        }
    }

    #[test]
    fn fingerprint_ignores_independent_swaps((prog, events) in random_run(), pick in any::<usize>()) {
        let spots = swappable(&events);
        prop_assume!(!spots.is_empty());
        let i = spots[pick % spots.len()];
        let mut swapped = events.clone();
        swapped.swap(i, i + 1);
        prop_assert_eq!(exec(&prog, &events).fingerprint(), exec(&prog, &swapped).fingerprint());
        prop_assert!(hb_prefix(&events, &swapped, &[], prog.num_threads(), prog.num_vars()));
    }

    #[test]
    fn fingerprint_sees_dependent_swaps((prog, events) in random_run(), pick in any::<usize>()) {
        let spots: Vec<usize> = (0..events.len().saturating_sub(1))
            .filter(|&i| {
                events[i].thread != events[i + 1].thread && dependent(&events[i], &events[i + 1])
            })
            .collect();
        prop_assume!(!spots.is_empty());
        let i = spots[pick % spots.len()];
        let mut swapped = events.clone();
        swapped.swap(i, i + 1);
        // the swapped order may not be executable; only the trace shape matters
        prop_assert_ne!(exec(&prog, &events).fingerprint(), exec(&prog, &swapped).fingerprint());
        prop_assert!(!hb_prefix(&events, &swapped, &[], prog.num_threads(), prog.num_vars()));
    }

    #[test]
    fn prefixes_are_hb_prefixes((prog, events) in random_run(), cut in any::<usize>(), ctx_cut in any::<usize>()) {
        let c = ctx_cut % (events.len() + 1);
        let (ctx, rest) = events.split_at(c);
        let k = cut % (rest.len() + 1);
        let (t, v) = (prog.num_threads(), prog.num_vars());
        prop_assert!(hb_prefix(&rest[..k], rest, ctx, t, v));
        prop_assert!(compatible(&rest[..k], rest, ctx, t, v));
        prop_assert!(compatible(rest, &rest[..k], ctx, t, v));
    }

    #[test]
    fn hb_prefix_rejects_skipping_a_predecessor((prog, events) in random_run(), pick in any::<usize>()) {
        // drop an event that some later kept event depends on
        let n = events.len();
        let reach = reachability(&events);
        let cands: Vec<usize> = (0..n).filter(|&i| (i + 1..n).any(|j| reach[i][j])).collect();
        prop_assume!(!cands.is_empty());
        let i = cands[pick % cands.len()];
        let mut w = events.clone();
        w.remove(i);
        prop_assert!(!hb_prefix(&w, &events, &[], prog.num_threads(), prog.num_vars()));
    }

    #[test]
    fn dsl_round_trips(seed in any::<u64>()) {
        let prog = random_program(seed, &RandomLimits::default());
        let text = prog.to_dsl();
        let back = Program::parse(&text).expect("rendered programs parse");
        prop_assert_eq!(&back, &prog);
        prop_assert_eq!(back.to_dsl(), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pop_is_optimal_on_small_programs(seed in any::<u64>()) {
        let prog = random_program(seed, &small_limits());
        let v = verify_optimality(&prog, &ExploreConfig { invariants: 2, ..ExploreConfig::default() });
        prop_assert!(v.passed(), "{}\n{:?}", prog.to_dsl(), v.failures);
        prop_assert_eq!(v.pop_executions as usize, v.classes);
    }
}
