pub mod acceptance;
pub mod data;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod spatial;
pub mod spectral;
pub mod train;
