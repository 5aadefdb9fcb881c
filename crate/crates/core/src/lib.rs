//! Numerical laboratory for heterodimensional cycles near a homoclinic
//! tangency to a saddle-focus or bi-focus periodic point.
//!
//! The crate builds explicit model germs for the local map `T0` and the
//! global map `T1` along a tangency orbit, composes first-return maps
//! `T_k = T1 ∘ T0^k`, evaluates closed-form asymptotic predictions for the
//! objects those maps must contain (an index-raised fixed point, a
//! non-transverse heteroclinic connection, transverse homoclinics, secondary
//! tangencies), and then re-derives each object by Newton root-finding on the
//! raw maps, certifying agreement between prediction and solution.

pub mod asymptotics;
pub mod bifocus;
pub mod chart;
pub mod cli;
pub mod config;
pub mod cycle;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod manifolds;
pub mod model;
pub mod newton;
pub mod poly;
pub mod report;
pub mod solvers;

pub use error::{HcError, Result};
