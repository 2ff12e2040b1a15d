//! Deterministic simulation of a stack under CPU quotas.

pub mod cgroup;
pub mod engine;
pub mod pool;
pub mod scheduler;
pub mod settings;
pub mod trace;

pub use cgroup::{enforce_quota, CgroupState};
pub use engine::{run_simulation, Engine, SimError};
pub use pool::{Dispatch, Job, JobSource, WorkerPoolState};
pub use scheduler::{allocate_cpu, CpuRequest};
pub use settings::{micros_to_secs, secs_to_micros, Micros, SimulationSettings, MICROS_PER_SEC};
pub use trace::{DropReason, EventKind, EventTrace, TraceEvent};
