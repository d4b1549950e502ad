//! Quasi-static soft-wrist peg-in-hole simulation with contact-formation skills,
//! vision-style success checks and two-stage failure recovery.

pub mod bench;
pub mod check;
pub mod executor;
pub mod geometry;
pub mod perception;
pub mod recovery;
pub mod scene;
pub mod sim;
pub mod trial_log;

/// The guide in `book/`, compiled so its examples stay in step with the code.
#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub struct Overview;
    #[doc = include_str!("../../../book/src/simulator.md")]
    pub struct Simulator;
    #[doc = include_str!("../../../book/src/perception.md")]
    pub struct Perception;
    #[doc = include_str!("../../../book/src/executor.md")]
    pub struct Executor;
    #[doc = include_str!("../../../book/src/recovery.md")]
    pub struct Recovery;
    #[doc = include_str!("../../../book/src/bench.md")]
    pub struct Bench;
}
