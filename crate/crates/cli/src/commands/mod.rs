pub mod emitters;
pub mod experiment;
pub mod photonics;
