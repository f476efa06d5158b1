//! Simulation and verification toolkit for the discrete Bak-Sneppen model:
//! the transition kernel, span/potential machinery, drift bounds and their
//! enumeration oracle, exact small-ring stationary distributions, Monte Carlo
//! estimates and the renewal/moment bound checks.

pub mod bounds;
pub mod cli;
pub mod drift;
pub mod exact;
pub mod mc;
pub mod model;
