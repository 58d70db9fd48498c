pub mod agent;
pub mod cartpole;
pub mod convergence;
pub mod error;
pub mod gen;
pub mod latent;
pub mod nn;
pub mod par;
pub mod repair;
pub mod rng;
pub mod stats;
pub mod zoo;
