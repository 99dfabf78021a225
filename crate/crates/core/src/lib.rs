pub mod adversary;
pub mod analyzer;
pub mod chain;
pub mod directory;
pub mod engine;
pub mod epoch;
pub mod model;
pub mod overlay;
pub mod params;
pub mod puzzle;
pub mod rng;
pub mod scenario;
pub mod sweep;
pub mod trace;
