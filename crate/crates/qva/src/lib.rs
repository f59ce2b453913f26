//! Exact symbolic engine for quantum vertex algebras of Zamolodchikov-Faddeev
//! type and their θ_N-twisted modules.

pub mod scalar;
pub mod series;
pub mod algebra;
pub mod fock;
pub mod vertex;
pub mod checks;
pub mod cli;
