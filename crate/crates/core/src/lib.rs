//! Probabilistic control synthesis for a Dubins vehicle with noisy actuators.
//!
//! The pipeline is:
//!
//! 1. [`vehicle`]: quantize the actuator noise and grow the reachability tree of
//!    constant-rate arcs, together with a worst-case position uncertainty radius.
//! 2. [`environment`]: label uncertainty discs against a polygonal region map
//!    using the doubled alphabet of positive/negative propositions.
//! 3. [`mdp`]: turn the labelled tree into a tree-structured MDP.
//! 4. [`pctl`]: parse and edit formulas in the nested probabilistic-until
//!    fragment `Pmax=? [ P>=p1 [ phi1 U (psi1 & P>=p2 [ ... ]) ] ]`.
//! 5. [`synthesis`]: solve the fragment block by block with a single backward
//!    pass per block, and re-solve incrementally after a formula update.
//! 6. [`strategy`]: run the policy as a gyroscope-driven feedback strategy on
//!    the continuous vehicle and estimate the satisfaction frequency.
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod environment;
pub mod mdp;
pub mod pctl;
pub mod strategy;
pub mod synthesis;
pub mod vehicle;

pub use environment::{Environment, ExtProp, LabelSet, Point};
pub use mdp::{Action, StateId, TreeMdp};
pub use pctl::{Formula, UpdateRule};
pub use synthesis::Solution;
pub use vehicle::{ArcSegment, ControlSet, NoiseModel, Pose};
