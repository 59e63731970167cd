//! Independent reference solutions used to validate the transport solvers:
//! closed-form 1D fields, an uncollided-flux ray tracer for pure absorbers,
//! and a small analog Monte Carlo solver.

pub mod heaviside;
pub mod manufactured;
pub mod mc;
pub mod raytrace;
