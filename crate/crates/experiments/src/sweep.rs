//! Steady-state sweeps over the reduced strengths gamma_x/kappa_f and
//! gamma_p/kappa_f.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use quadsqueeze::error::{Result, SimError};
use quadsqueeze::{FeedbackModelParams, Variant};

use crate::csvio::{fmt_float, write_csv};
use crate::engines::{steady_point, Engine};
use crate::manifest::{ensure_dir, RunManifest};

/// One sweep axis in units of kappa_f.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub n: usize,
    pub log: bool,
}

impl AxisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(SimError::invalid("axis needs at least 2 points".to_string()));
        }
        if !(self.min < self.max) {
            return Err(SimError::invalid(format!(
                "axis min {} must be below max {}",
                self.min, self.max
            )));
        }
        if self.min <= 0.0 {
            return Err(SimError::invalid(
                "axis values must be positive strengths".to_string(),
            ));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                let f = i as f64 / (n - 1) as f64;
                if self.log {
                    (self.min.ln() + f * (self.max.ln() - self.min.ln())).exp()
                } else {
                    self.min + f * (self.max - self.min)
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SweepSpec {
    pub gx_axis: AxisSpec,
    pub gp_axis: AxisSpec,
    pub kappa_f: f64,
    pub omega: f64,
    pub include_unitary: bool,
    pub engine: Engine,
    /// Starting Fock dimension for the full engine; the guard climbs the
    /// ladder per point when it trips.
    pub start_dim: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.gx_axis.validate()?;
        self.gp_axis.validate()?;
        if self.kappa_f <= 0.0 {
            return Err(SimError::invalid(
                "sweeps require kappa_f > 0".to_string(),
            ));
        }
        Ok(())
    }
}

/// In-memory sweep result; `grids` are indexed `[gx_index][gp_index]`.
pub struct SweepOutcome {
    pub gx_values: Vec<f64>,
    pub gp_values: Vec<f64>,
    pub r_x: Vec<Vec<f64>>,
    pub r_p: Vec<Vec<f64>>,
    pub product: Vec<Vec<f64>>,
    pub purity: Vec<Vec<f64>>,
    pub manifest: RunManifest,
}

/// Run the sweep and write `r_x.csv`, `r_p.csv`, `product.csv`,
/// `purity.csv` plus the manifest into `out`. Failed points become NaN
/// cells, each with a manifest note.
pub fn run_sweep(
    spec: &SweepSpec,
    out: &Path,
    config: BTreeMap<String, String>,
) -> Result<SweepOutcome> {
    spec.validate()?;
    ensure_dir(out)?;
    let started = Instant::now();
    let mut manifest = RunManifest::new("sweep", config);

    let gx_values = spec.gx_axis.values();
    let gp_values = spec.gp_axis.values();
    let kf = spec.kappa_f;

    let cells: Vec<(usize, usize)> = (0..gx_values.len())
        .flat_map(|i| (0..gp_values.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<_> = cells
        .par_iter()
        .map(|&(i, j)| {
            let params = FeedbackModelParams {
                omega: spec.omega,
                gamma_x: gx_values[i] * kf,
                gamma_p: gp_values[j] * kf,
                kappa_f: kf,
                include_unitary: spec.include_unitary,
                variant: Variant::DualFeedback,
            };
            steady_point(&params, spec.engine, spec.start_dim)
        })
        .collect();

    let (ni, nj) = (gx_values.len(), gp_values.len());
    let mut r_x = vec![vec![f64::NAN; nj]; ni];
    let mut r_p = vec![vec![f64::NAN; nj]; ni];
    let mut product = vec![vec![f64::NAN; nj]; ni];
    let mut purity = vec![vec![f64::NAN; nj]; ni];
    for (&(i, j), res) in cells.iter().zip(&results) {
        match res {
            Ok((v, dim)) => {
                r_x[i][j] = v.r_x;
                r_p[i][j] = v.r_p;
                product[i][j] = v.product;
                purity[i][j] = v.purity;
                manifest.record_dim(*dim);
            }
            Err(e) => {
                manifest.notes.push(format!(
                    "NaN cell ({i},{j}): gamma_x/kf = {}, gamma_p/kf = {}: {e}",
                    gx_values[i], gp_values[j]
                ));
            }
        }
    }
    if !manifest.notes.is_empty() {
        manifest.truncation = "partial".to_string();
    }

    let mut header: Vec<String> = vec!["gx_over_kf".to_string()];
    header.extend(gp_values.iter().map(|v| fmt_float(*v)));
    for (name, grid) in [
        ("r_x", &r_x),
        ("r_p", &r_p),
        ("product", &product),
        ("purity", &purity),
    ] {
        let rows: Vec<Vec<String>> = gx_values
            .iter()
            .zip(grid.iter())
            .map(|(gx, row)| {
                let mut cells = vec![fmt_float(*gx)];
                cells.extend(row.iter().map(|v| fmt_float(*v)));
                cells
            })
            .collect();
        let file = format!("{name}.csv");
        write_csv(&out.join(&file), &header, &rows)?;
        manifest.outputs.push(file);
    }

    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    manifest.save(out)?;
    Ok(SweepOutcome {
        gx_values,
        gp_values,
        r_x,
        r_p,
        product,
        purity,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn axis(min: f64, max: f64, n: usize) -> AxisSpec {
        AxisSpec {
            min,
            max,
            n,
            log: false,
        }
    }

    #[test]
    fn axis_values() {
        let a = axis(1.0, 3.0, 3);
        assert_eq!(a.values(), vec![1.0, 2.0, 3.0]);
        let l = AxisSpec {
            min: 1.0,
            max: 100.0,
            n: 3,
            log: true,
        };
        let v = l.values();
        assert_abs_diff_eq!(v[1], 10.0, epsilon = 1e-12);
        assert!(axis(1.0, 3.0, 1).validate().is_err());
        assert!(axis(3.0, 1.0, 5).validate().is_err());
        assert!(axis(-1.0, 3.0, 5).validate().is_err());
    }

    #[test]
    fn moment_sweep_matches_closed_forms() {
        let spec = SweepSpec {
            gx_axis: axis(1.0, 4.0, 4),
            gp_axis: axis(1.0, 4.0, 4),
            kappa_f: 1.0,
            omega: 1.0,
            include_unitary: false,
            engine: Engine::Moments,
            start_dim: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_sweep(&spec, dir.path(), BTreeMap::new()).unwrap();
        for (i, gx) in outcome.gx_values.iter().enumerate() {
            for (j, gp) in outcome.gp_values.iter().enumerate() {
                let want =
                    quadsqueeze::moments::uncertainty_product_ss(gx * 1.0, gp * 1.0, 1.0).unwrap();
                assert_abs_diff_eq!(outcome.product[i][j], want, epsilon = 1e-12);
            }
        }
        // gx gp = 4 kf^2 diagonal: (1,4), (2,2), (4,1) sit on the manifold.
        assert_abs_diff_eq!(outcome.product[1][1], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(outcome.product[0][3], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(outcome.purity[1][1], 1.0, epsilon = 1e-12);
        assert_eq!(outcome.manifest.outputs.len(), 4);
        assert!(dir.path().join("manifest.json").is_file());
        assert!(dir.path().join("product.csv").is_file());
    }

    #[test]
    fn full_sweep_small_grid_agrees_with_moments() {
        let spec = SweepSpec {
            gx_axis: axis(1.5, 3.0, 2),
            gp_axis: axis(1.5, 3.0, 2),
            kappa_f: 1.0,
            omega: 1.0,
            include_unitary: false,
            engine: Engine::Full,
            start_dim: 16,
        };
        let dir = tempfile::tempdir().unwrap();
        let full = run_sweep(&spec, dir.path(), BTreeMap::new()).unwrap();
        let mom = run_sweep(
            &SweepSpec {
                engine: Engine::Moments,
                ..spec
            },
            dir.path(),
            BTreeMap::new(),
        )
        .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let rel = (full.r_x[i][j] - mom.r_x[i][j]).abs() / mom.r_x[i][j];
                assert!(rel < 5e-3, "cell ({i},{j}): rel {rel:.2e}");
            }
        }
        assert!(full.manifest.notes.is_empty());
    }
}
