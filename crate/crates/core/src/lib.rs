//! Probabilistic reasoning over warded Datalog± programs with weighted rules.
//!
//! The crate covers the whole pipeline: parsing weighted programs, static
//! checks (wardedness, stratification), the warded chase with labeled nulls,
//! exact inference by grounding the chase network, and approximate inference
//! with the MCMC-chase sampler.

pub mod analysis;
pub mod bench;
pub mod chase;
pub mod mcmc;
pub mod model;
pub mod network;
pub mod parser;

pub use model::{Atom, Fact, Instance, Literal, Pred, Program, Rule, RuleId, Term, Value, Var, Weight};
