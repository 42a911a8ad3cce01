//! Experiment harness over the simulation core: parameter sweeps,
//! relaxation runs, trajectory ensembles, and the command-line front end.
//!
//! Every run writes its data as CSV plus a JSON manifest into the chosen
//! output directory. The manifest echoes the fully merged configuration, so
//! feeding it back through `--config` reproduces the CSVs byte-for-byte
//! (the engines are deterministic and all seeds are recorded).

pub mod cli;
pub mod config;
pub mod csvio;
pub mod engines;
pub mod manifest;
pub mod relax;
pub mod sweep;
pub mod traj;

pub use engines::{steady_point, Engine, PointValues};
pub use manifest::RunManifest;
pub use relax::{run_relaxation, RelaxationSpec};
pub use sweep::{run_sweep, AxisSpec, SweepSpec};
pub use traj::{run_trajectories, TrajEnsembleSpec};
