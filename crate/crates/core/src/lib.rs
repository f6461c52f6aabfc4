//! Monte Carlo laboratory for stochastic heat and wave equations with additive
//! spatially homogeneous Gaussian noise: spectral quantities, lattice noise
//! synthesis, mild-form solver, Malliavin derivatives, Nourdin–Viens density
//! estimation and Gaussian sandwich verification.

pub mod lattice;
pub mod spectral;
pub mod discrete;
pub mod green;
pub mod malliavin;
pub mod noise;
pub mod rng;
pub mod solver;
pub mod nv;
pub mod verify;
pub mod experiment;
