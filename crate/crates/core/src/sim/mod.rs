//! Deterministic synthetic world: scenes, trajectories, LiDAR sweeps and IMU streams.

pub mod imu;
pub mod lidar;
pub mod scenario;
pub mod scene;
pub mod trajectory;

pub use imu::{simulate_imu, ImuSimConfig};
pub use lidar::{simulate_sweep, LidarNoise, ScanPattern};
pub use scenario::{Scenario, SimData, SCENARIOS};
pub use scene::{Rect, Scene};
pub use trajectory::{Kinematics, Trajectory};
