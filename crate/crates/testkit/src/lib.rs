//! Reference implementations written independently of the solver, used as
//! oracles by the test suites.

pub mod lq;
pub mod plain_ddp;
pub mod toy;

pub use lq::{riccati, LinearQuadratic, RiccatiSolution};
pub use plain_ddp::{plain_ddp, PlainDdpResult};
pub use toy::{Permuted, RingGoals, ToyGoals};
