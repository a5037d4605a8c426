//! Stateless model checking with dynamic partial order reduction that explores
//! one execution per trace and keeps sleep sets in polynomial space.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: the toy concurrent language and its deterministic interpreter;
//! - [`trace`]: events, executions, happens-before, races and schedules;
//! - [`sleepsets`]: polynomial-size sleep-set expressions and an explicit oracle;
//! - [`explorer`]: the exploration engine, brute-force oracle and reports;
//! - [`bench`]: benchmark program generators.

pub mod bench;
pub mod explorer;
pub mod model;
pub mod sleepsets;
pub mod trace;
