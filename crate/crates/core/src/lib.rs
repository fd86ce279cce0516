pub mod cli;
pub mod exact;
pub mod expansion;
pub mod fractal;
pub mod groups;
pub mod lattice;
pub mod linalg;
pub mod markov;
pub mod stats;
