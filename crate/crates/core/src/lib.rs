//! Physics-informed PDE solving with learnable feature grids decoded by a
//! local synthesis network.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod evaluation;
pub mod grid;
pub mod networks;
pub mod params;
pub mod pde;
pub mod sampling;
pub mod training;
