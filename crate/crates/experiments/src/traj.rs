//! Trajectory ensembles with comparison against the deterministic engine.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use quadsqueeze::error::{Result, SimError};
use quadsqueeze::master_eq::Generator;
use quadsqueeze::operators::FockDim;
use quadsqueeze::sme::{
    ensemble_average, run_trajectory, EnsembleSeries, TrajectoryOpts, TrajectoryRecord,
};
use quadsqueeze::states::{DensityMatrix, ObservableReport};
use quadsqueeze::FeedbackModelParams;

use crate::csvio::{fmt_float, io_err, write_csv};
use crate::manifest::{ensure_dir, RunManifest};

#[derive(Clone, Copy, Debug)]
pub struct TrajEnsembleSpec {
    pub params: FeedbackModelParams,
    /// Initial state: thermal at this inverse temperature, or the vacuum.
    pub beta: Option<f64>,
    pub dim: usize,
    pub n_traj: usize,
    pub t_final: f64,
    pub dt: f64,
    pub sample_dt: f64,
    pub seed_base: u64,
    /// Write one CSV + JSON sidecar per trajectory (the ensemble files are
    /// always written).
    pub per_trajectory_files: bool,
}

/// Field indices whose ensemble averages are linear in rho and therefore
/// comparable against the unconditioned engine (purity and the variance
/// products are not).
const LINEAR_FIELDS: [(usize, &str); 5] = [
    (0, "mean_x"),
    (1, "mean_p"),
    (2, "mean_x2"),
    (3, "mean_p2"),
    (6, "sym_xp"),
];

pub struct TrajOutcome {
    pub records: Vec<TrajectoryRecord>,
    pub series: EnsembleSeries,
    /// z-scores `[time][linear field]` against the deterministic engine.
    pub z_scores: Vec<[f64; 5]>,
    pub z_max: f64,
    pub n_aborted: usize,
    pub manifest: RunManifest,
}

/// Run the ensemble, compare against `Generator::evolve`, and write the
/// per-trajectory files, `ensemble_mean.csv` and `zscores.csv`.
pub fn run_trajectories(
    spec: &TrajEnsembleSpec,
    out: &Path,
    config: BTreeMap<String, String>,
) -> Result<TrajOutcome> {
    if spec.n_traj == 0 {
        return Err(SimError::invalid("n_traj must be at least 1".to_string()));
    }
    ensure_dir(out)?;
    let started = Instant::now();
    let mut manifest = RunManifest::new("traj", config);
    manifest.record_dim(spec.dim);

    let dim = FockDim::new(spec.dim)?;
    let rho0 = match spec.beta {
        Some(beta) => DensityMatrix::thermal(dim, beta, 1.0)?,
        None => DensityMatrix::vacuum(dim),
    };
    let opts = TrajectoryOpts {
        t_final: spec.t_final,
        dt: spec.dt,
        sample_dt: spec.sample_dt,
        store_signals: false,
    };

    let results: Vec<(u64, Result<TrajectoryRecord>)> = (0..spec.n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let seed = spec.seed_base + i;
            (seed, run_trajectory(&rho0, &spec.params, &opts, seed))
        })
        .collect();
    let mut records = Vec::with_capacity(results.len());
    let mut n_aborted = 0;
    for (seed, res) in results {
        match res {
            Ok(rec) => {
                manifest.seeds.push(seed);
                records.push(rec);
            }
            Err(e) => {
                n_aborted += 1;
                manifest.notes.push(format!("trajectory seed {seed} aborted: {e}"));
            }
        }
    }
    if records.is_empty() {
        manifest.save(out)?;
        return Err(SimError::Numerical("every trajectory aborted".to_string()));
    }
    if n_aborted > 0 {
        manifest
            .notes
            .push(format!("{n_aborted} aborted trajectories excluded from the ensemble"));
    }

    if spec.per_trajectory_files {
        for (idx, rec) in records.iter().enumerate() {
            let stem = format!("traj_{idx:04}");
            write_trajectory_csv(out, &stem, rec)?;
            manifest.outputs.push(format!("{stem}.csv"));
            manifest.outputs.push(format!("{stem}.json"));
        }
    }

    let series = ensemble_average(&records)?;

    // Deterministic reference on the same sample grid.
    let gen = Generator::new(spec.params, dim)?;
    let det_dt = sub_step(spec.sample_dt, gen.recommended_dt());
    let det = gen.evolve(&rho0, spec.t_final, det_dt, spec.sample_dt)?;
    if det.len() != series.times.len() {
        return Err(SimError::Numerical(format!(
            "sample grids diverged: {} deterministic vs {} ensemble",
            det.len(),
            series.times.len()
        )));
    }

    let mut z_scores = Vec::with_capacity(series.times.len());
    let mut z_max = 0.0_f64;
    for (k, (_, rho)) in det.iter().enumerate() {
        let want = rho.report(&gen.ops)?.fields();
        let mut row = [0.0; 5];
        for (slot, (fi, _)) in LINEAR_FIELDS.iter().enumerate() {
            let diff = series.mean[k][*fi] - want[*fi];
            let se = series.stderr[k][*fi];
            row[slot] = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            z_max = z_max.max(row[slot].abs());
        }
        z_scores.push(row);
    }

    write_ensemble_csv(out, &series, &mut manifest)?;
    write_zscore_csv(out, &series.times, &z_scores, &mut manifest)?;

    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    manifest.save(out)?;
    Ok(TrajOutcome {
        records,
        series,
        z_scores,
        z_max,
        n_aborted,
        manifest,
    })
}

/// Largest step that divides `sample_dt` exactly while staying at or below
/// `dt_max`; keeps the deterministic reference on the ensemble sample grid.
fn sub_step(sample_dt: f64, dt_max: f64) -> f64 {
    sample_dt / (sample_dt / dt_max).ceil().max(1.0)
}

fn write_trajectory_csv(out: &Path, stem: &str, rec: &TrajectoryRecord) -> Result<()> {
    let header: Vec<String> = ["t", "mean_x", "mean_p", "var_x", "var_p", "purity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = rec
        .times
        .iter()
        .zip(&rec.reports)
        .map(|(t, rep)| {
            vec![
                fmt_float(*t),
                fmt_float(rep.mean_x),
                fmt_float(rep.mean_p),
                fmt_float(rep.var_x),
                fmt_float(rep.var_p),
                fmt_float(rep.purity),
            ]
        })
        .collect();
    write_csv(&out.join(format!("{stem}.csv")), &header, &rows)?;

    let sidecar = serde_json::json!({
        "seed": rec.seed,
        "dt": rec.dt,
        "params": rec.params,
    });
    let path = out.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&sidecar).expect("json"))
        .map_err(|e| io_err(&path, e))
}

fn write_ensemble_csv(out: &Path, series: &EnsembleSeries, manifest: &mut RunManifest) -> Result<()> {
    let mut header = vec!["t".to_string()];
    for name in ObservableReport::FIELD_NAMES {
        header.push(format!("mean_{name}"));
        header.push(format!("se_{name}"));
    }
    let rows: Vec<Vec<String>> = series
        .times
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let mut row = vec![fmt_float(*t)];
            for i in 0..ObservableReport::FIELD_NAMES.len() {
                row.push(fmt_float(series.mean[k][i]));
                row.push(fmt_float(series.stderr[k][i]));
            }
            row
        })
        .collect();
    write_csv(&out.join("ensemble_mean.csv"), &header, &rows)?;
    manifest.outputs.push("ensemble_mean.csv".to_string());
    Ok(())
}

fn write_zscore_csv(
    out: &Path,
    times: &[f64],
    z_scores: &[[f64; 5]],
    manifest: &mut RunManifest,
) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(LINEAR_FIELDS.iter().map(|(_, n)| format!("z_{n}")));
    let rows: Vec<Vec<String>> = times
        .iter()
        .zip(z_scores)
        .map(|(t, row)| {
            let mut cells = vec![fmt_float(*t)];
            cells.extend(row.iter().map(|z| fmt_float(*z)));
            cells
        })
        .collect();
    write_csv(&out.join("zscores.csv"), &header, &rows)?;
    manifest.outputs.push("zscores.csv".to_string());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use quadsqueeze::Variant;

    fn spec(n_traj: usize, seed: u64) -> TrajEnsembleSpec {
        TrajEnsembleSpec {
            params: FeedbackModelParams {
                omega: 1.0,
                gamma_x: 9.0,
                gamma_p: 4.0,
                kappa_f: 3.0,
                include_unitary: false,
                variant: Variant::DualFeedback,
            },
            beta: None,
            dim: 12,
            n_traj,
            t_final: 0.1,
            dt: 1e-3,
            sample_dt: 0.05,
            seed_base: seed,
            per_trajectory_files: true,
        }
    }

    #[test]
    fn single_trajectory_reproduces_core_run() {
        let s = spec(1, 42);
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_trajectories(&s, dir.path(), BTreeMap::new()).unwrap();
        let rho0 = DensityMatrix::vacuum(FockDim::new(12).unwrap());
        let opts = TrajectoryOpts {
            t_final: 0.1,
            dt: 1e-3,
            sample_dt: 0.05,
            store_signals: false,
        };
        let direct = run_trajectory(&rho0, &s.params, &opts, 42).unwrap();
        for (a, b) in outcome.records[0].reports.iter().zip(&direct.reports) {
            assert_eq!(a.fields(), b.fields());
        }
        assert!(dir.path().join("traj_0000.csv").is_file());
        assert!(dir.path().join("traj_0000.json").is_file());
        assert!(dir.path().join("ensemble_mean.csv").is_file());
        assert!(dir.path().join("zscores.csv").is_file());
    }

    #[test]
    fn clt_scaling_of_standard_errors() {
        let dir = tempfile::tempdir().unwrap();
        let small = run_trajectories(&spec(100, 7), dir.path(), BTreeMap::new()).unwrap();
        let big = run_trajectories(
            &TrajEnsembleSpec {
                per_trajectory_files: false,
                ..spec(400, 7)
            },
            dir.path(),
            BTreeMap::new(),
        )
        .unwrap();
        // Quadrupling N halves the standard error (within sampling slack).
        let k = small.series.times.len() - 1;
        let i = 2; // mean_x2
        let ratio = small.series.stderr[k][i] / big.series.stderr[k][i];
        assert!(
            (ratio - 2.0).abs() < 0.4,
            "stderr ratio {ratio:.2}, expected ~2"
        );
    }

    #[test]
    fn sub_step_divides_sample_interval() {
        let dt = sub_step(0.05, 0.012);
        assert!(dt <= 0.012);
        let n = 0.05 / dt;
        assert!((n - n.round()).abs() < 1e-12);
    }
}
