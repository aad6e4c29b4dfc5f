pub mod apps;
pub mod fabric;
pub mod fid;
pub mod harness;
pub mod ip_baseline;
pub mod nap;
pub mod pce;
pub mod simkernel;
pub mod telemetry;
pub mod topology;
