pub mod bridge;
pub mod cli;
pub mod corpus;
pub mod engine;
pub mod gp;
pub mod kernels;
pub mod metadata;
pub mod oracle;
pub mod synthetic;
pub mod vlda;
