//! Data-driven abstractions and controller synthesis for black-box
//! control systems.

pub mod geometry;
pub mod systems;
pub mod sampling;
pub mod scenario;
pub mod lipschitz;
pub mod abstraction;
pub mod synthesis;
pub mod cli;
