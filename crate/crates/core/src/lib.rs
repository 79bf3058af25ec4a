//! Question-driven template induction: generate factoid questions from
//! documents, cluster them into slot types, and refine the clusters through a
//! small set of edit operations.

pub mod config;
pub mod corpus;
pub mod fixture;
pub mod induction;
pub mod providers;
pub mod proxy;
pub mod session;
pub mod slotmap;
pub mod text;
