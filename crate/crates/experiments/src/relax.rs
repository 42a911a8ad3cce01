//! Relaxation runs from thermal states: variance and purity time series.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use quadsqueeze::error::{Result, SimError};
use quadsqueeze::master_eq::{evolve_auto, Generator};
use quadsqueeze::operators::{FockDim, OperatorSet};
use quadsqueeze::states::DensityMatrix;
use quadsqueeze::{FeedbackModelParams, Variant};

use crate::csvio::{fmt_float, write_csv};
use crate::manifest::{ensure_dir, RunManifest};

#[derive(Clone, Debug)]
pub struct RelaxationSpec {
    /// Inverse temperatures of the initial thermal states.
    pub betas: Vec<f64>,
    /// Feedback strengths; one series per (beta, kappa_f) pair.
    pub kappa_fs: Vec<f64>,
    pub gamma_x: f64,
    pub gamma_p: f64,
    pub omega: f64,
    pub include_unitary: bool,
    /// Defaults to 10 / kappa_f per series.
    pub t_final: Option<f64>,
    /// Defaults to t_final / 200.
    pub sample_dt: Option<f64>,
    /// Defaults to the generator's recommended step.
    pub dt: Option<f64>,
    pub start_dim: usize,
}

impl RelaxationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.kappa_fs.is_empty() {
            return Err(SimError::invalid(
                "relaxation needs at least one beta and one kappa_f".to_string(),
            ));
        }
        if self.betas.iter().any(|b| *b <= 0.0) {
            return Err(SimError::invalid("beta must be positive".to_string()));
        }
        if let Some(t) = self.t_final {
            if t <= 0.0 {
                return Err(SimError::invalid("t_final must be positive".to_string()));
            }
        }
        Ok(())
    }
}

/// One (beta, kappa_f) time series.
#[derive(Clone, Debug)]
pub struct RelaxSeries {
    pub beta: f64,
    pub kappa_f: f64,
    pub times: Vec<f64>,
    pub var_x: Vec<f64>,
    pub purity: Vec<f64>,
    pub dim_used: usize,
}

pub struct RelaxOutcome {
    pub series: Vec<RelaxSeries>,
    pub manifest: RunManifest,
}

fn series_file(beta: f64, kf: f64) -> String {
    format!("relax_beta{beta}_kf{kf}.csv")
}

/// Run every (beta, kappa_f) combination, writing one CSV per series with
/// columns (t, var_x, purity). Integrator aborts are recorded as manifest
/// notes; the remaining series still complete.
pub fn run_relaxation(
    spec: &RelaxationSpec,
    out: &Path,
    config: BTreeMap<String, String>,
) -> Result<RelaxOutcome> {
    spec.validate()?;
    ensure_dir(out)?;
    let started = Instant::now();
    let mut manifest = RunManifest::new("relax", config);
    let mut series = Vec::new();

    for &beta in &spec.betas {
        for &kf in &spec.kappa_fs {
            let params = FeedbackModelParams {
                omega: spec.omega,
                gamma_x: spec.gamma_x,
                gamma_p: spec.gamma_p,
                kappa_f: kf,
                include_unitary: spec.include_unitary,
                variant: Variant::DualFeedback,
            };
            let run = run_one(spec, &params, beta, kf);
            match run {
                Ok(s) => {
                    let rows: Vec<Vec<String>> = s
                        .times
                        .iter()
                        .zip(s.var_x.iter().zip(&s.purity))
                        .map(|(t, (v, p))| vec![fmt_float(*t), fmt_float(*v), fmt_float(*p)])
                        .collect();
                    let file = series_file(beta, kf);
                    write_csv(
                        &out.join(&file),
                        &["t".into(), "var_x".into(), "purity".into()],
                        &rows,
                    )?;
                    manifest.outputs.push(file);
                    manifest.record_dim(s.dim_used);
                    manifest.notes.push(format!(
                        "beta = {beta}, kappa_f = {kf}: asymptotics var_x = {:.6}, purity = {:.6}",
                        s.var_x.last().unwrap(),
                        s.purity.last().unwrap()
                    ));
                    series.push(s);
                }
                Err(e) => {
                    manifest
                        .notes
                        .push(format!("beta = {beta}, kappa_f = {kf}: aborted: {e}"));
                    manifest.truncation = "partial".to_string();
                }
            }
        }
    }
    if series.is_empty() {
        manifest.save(out)?;
        return Err(SimError::Numerical(
            "every relaxation series aborted".to_string(),
        ));
    }

    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    manifest.save(out)?;
    Ok(RelaxOutcome { series, manifest })
}

fn run_one(
    spec: &RelaxationSpec,
    params: &FeedbackModelParams,
    beta: f64,
    kf: f64,
) -> Result<RelaxSeries> {
    let t_final = spec.t_final.unwrap_or(10.0 / kf.max(1e-12));
    let sample_dt = spec.sample_dt.unwrap_or(t_final / 200.0);
    let dim = FockDim::new(spec.start_dim)?;
    let gen = Generator::new(*params, dim)?;
    let dt = spec.dt.unwrap_or_else(|| gen.recommended_dt());
    let rho0 = DensityMatrix::thermal(dim, beta, 1.0)?;
    let (samples, dim_used) = evolve_auto(params, &rho0, t_final, dt, sample_dt)?;
    let ops = OperatorSet::new(FockDim::new(dim_used)?);
    let mut times = Vec::with_capacity(samples.len());
    let mut var_x = Vec::with_capacity(samples.len());
    let mut purity = Vec::with_capacity(samples.len());
    for (t, rho) in &samples {
        let rep = rho.report(&ops)?;
        times.push(*t);
        var_x.push(rep.var_x);
        purity.push(rep.purity);
    }
    Ok(RelaxSeries {
        beta,
        kappa_f: kf,
        times,
        var_x,
        purity,
        dim_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spec_validation() {
        let mut spec = RelaxationSpec {
            betas: vec![1.0],
            kappa_fs: vec![3.0],
            gamma_x: 9.0,
            gamma_p: 4.0,
            omega: 1.0,
            include_unitary: false,
            t_final: None,
            sample_dt: None,
            dt: None,
            start_dim: 24,
        };
        assert!(spec.validate().is_ok());
        spec.betas = vec![-1.0];
        assert!(spec.validate().is_err());
        spec.betas = vec![];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn thermal_start_and_closed_form_tail() {
        // No unitary term so the closed-form moments are an exact oracle.
        let spec = RelaxationSpec {
            betas: vec![1.0],
            kappa_fs: vec![3.0],
            gamma_x: 9.0,
            gamma_p: 4.0,
            omega: 1.0,
            include_unitary: false,
            t_final: Some(2.0),
            sample_dt: Some(0.5),
            dt: None,
            start_dim: 24,
        };
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_relaxation(&spec, dir.path(), BTreeMap::new()).unwrap();
        let s = &outcome.series[0];
        // t = 0 row is the thermal report (states-module oracle value).
        assert_abs_diff_eq!(s.var_x[0], 1.0819767068693265, epsilon = 1e-9);
        // Tail reaches the steady variance 1/3 at 2 kf t = 12.
        assert_abs_diff_eq!(*s.var_x.last().unwrap(), 1.0 / 3.0, epsilon = 1e-4);
        assert_abs_diff_eq!(*s.purity.last().unwrap(), 1.0, epsilon = 1e-3);
        assert!(dir.path().join(series_file(1.0, 3.0)).is_file());
    }
}
