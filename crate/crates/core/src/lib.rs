pub mod geometry;
pub mod kdtree;
pub mod scan;
pub mod solver;
pub mod imu;
pub mod preprocess;
pub mod factors;
pub mod matching;
pub mod sim;
pub mod backend;
pub mod loop_closure;
pub mod io;
pub mod config;
pub mod eval;
pub mod pipeline;
