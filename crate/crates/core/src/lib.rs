//! Numerical laboratory for coisotropic deformations in contact geometry.

pub mod field;
pub mod der;
pub mod ode;
pub mod random;
pub mod report;
pub mod contact;
pub mod coisotropy;
pub mod foliation;
pub mod verify;
pub mod cli;
