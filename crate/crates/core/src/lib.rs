//! Analysis toolkit for smooth bilevel programs through the value-function
//! reformulation: a global lower-level solver at desk scale, directional
//! derivatives and subdifferential estimates of the value function,
//! directional constraint-qualification checkers, and directional KKT
//! certificate search.

pub mod cq;
pub mod exprdsl;
pub mod kkt;
pub mod lower;
pub mod lpkernel;
pub mod model;
pub mod oracle;
pub mod sensitivity;
pub mod verdict;
