pub mod autologistic;
pub mod bayes;
pub mod copcar;
pub mod error;
pub mod filtering;
pub mod fit;
pub mod glm;
pub mod graph;
pub mod kernel;
pub mod linalg;
pub mod moran;
pub mod normal;
pub mod optim;
pub mod stats;
pub mod study;

pub use error::{Error, Result};
pub use fit::{FitResult, Interval, Method};
pub use graph::{build_lattice, car_precision, laplacian, ArealGraph, Lattice};
pub use moran::{moran_i, moran_operator, principal_eigs, projection, MoranBasis};
