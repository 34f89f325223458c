pub mod adc;
pub mod certificate;
pub mod convex1d;
pub mod instances;
pub mod lognormal;
pub mod pme;
pub mod protocol;
pub mod qp;
pub mod solver;
pub mod subproblem;
mod serde_la;
