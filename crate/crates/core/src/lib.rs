//! Ridge-regularized two-way fixed-effect estimation on bipartite
//! worker–firm networks.

pub mod bounds;
pub mod decomposition;
pub mod error;
pub mod estimator;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod sbm;

pub use error::{Error, Result};
pub use graph::{BipartiteGraph, RidgePenalties, Side};
