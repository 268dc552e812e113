pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grad;
pub mod grid;
pub mod gridfile;
pub mod objective;
pub mod prior;
pub mod scene;
pub mod selfsup;
pub mod synthetic;
pub mod train;
