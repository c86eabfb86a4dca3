//! Supervisor-facing layer over [`dubsynth_core`]: scenario files, negotiation
//! sessions with persistence, relaxation candidates, Monte Carlo estimation,
//! and the HTTP/JSON protocol.
//!
//! A session walks the graph
//!
//! ```text
//! Negotiating --accept(deploy)/deploy--> Deployed --step x K--> Closed
//!      ^  |                                |   ^
//!      |  accept / relax                   |   | accept(deploy)/deploy
//!      +--+                        event   v   |
//!                                     Renegotiating
//! ```

pub mod candidates;
pub mod error;
pub mod estimate;
pub mod http;
pub mod scenario;
pub mod service;
pub mod session;
pub mod store;

pub use error::ServiceError;
pub use scenario::Scenario;
pub use service::Service;
pub use session::{Phase, Session};

/// Version tag carried by every response and snapshot.
pub const API_SCHEMA: &str = "dubsynth.api/1";
