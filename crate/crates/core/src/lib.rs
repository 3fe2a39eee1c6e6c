pub mod blocks;
pub mod bounds;
pub mod ctime;
pub mod engine;
pub mod error;
pub mod fast;
pub mod harness;
pub mod model;
pub mod sampling;
pub mod singleblock;
pub mod stats;
pub mod verify;
