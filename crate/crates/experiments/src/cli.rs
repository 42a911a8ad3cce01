//! Command-line front end.
//!
//! Flags override config-file values; the merged result is echoed into the
//! run manifest, and `--config manifest.json` replays a previous run.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

use quadsqueeze::error::{Result, SimError};
use quadsqueeze::moments::{
    closed_form, extended_moments, single_observable_moments, MomentState,
};
use quadsqueeze::{FeedbackModelParams, Variant};

use crate::config;
use crate::csvio::{fmt_float, write_csv};
use crate::engines::{steady_point, Engine};
use crate::manifest::{ensure_dir, RunManifest};
use crate::relax::{run_relaxation, RelaxationSpec};
use crate::sweep::{run_sweep, AxisSpec, SweepSpec};
use crate::traj::{run_trajectories, TrajEnsembleSpec};

#[derive(Parser, Debug)]
#[command(
    name = "quadsqueeze",
    version,
    about = "Feedback-squeezed oscillator simulations: steady states, sweeps, \
             relaxation runs and conditioned trajectories"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Single-point steady-state report.
    Steady(CommonArgs),
    /// Closed-form / linear-system moment time series.
    Moments(CommonArgs),
    /// Steady-state sweep over gamma_x/kappa_f and gamma_p/kappa_f.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Relaxation time series from thermal states.
    Relax {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated list of inverse temperatures.
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
        /// Comma-separated list of feedback strengths.
        #[arg(long = "kappa-fs", value_delimiter = ',')]
        kappa_fs: Vec<f64>,
    },
    /// Conditioned trajectory ensemble with deterministic cross-check.
    Traj(CommonArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum VariantArg {
    Dual,
    Single,
    MeasureOnly,
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    #[arg(long)]
    pub gamma_x: Option<f64>,
    #[arg(long)]
    pub gamma_p: Option<f64>,
    #[arg(long)]
    pub kappa_f: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    /// Inverse temperature of the initial thermal state.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Include the oscillator Hamiltonian.
    #[arg(long, action = ArgAction::SetTrue)]
    pub unitary: bool,
    #[arg(long, action = ArgAction::SetTrue, conflicts_with = "unitary")]
    pub no_unitary: bool,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Fock-space dimension (starting point; the truncation guard may climb).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub sample_dt: Option<f64>,
    #[arg(long)]
    pub n_traj: Option<usize>,
    /// Base seed; trajectory i uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub engine: Option<Engine>,
    /// Output directory for CSV files and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat key=value file, or a manifest.json to replay.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long)]
    pub gx_min: Option<f64>,
    #[arg(long)]
    pub gx_max: Option<f64>,
    #[arg(long)]
    pub gp_min: Option<f64>,
    #[arg(long)]
    pub gp_max: Option<f64>,
    /// Points per axis.
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long, action = ArgAction::SetTrue)]
    pub log_spacing: bool,
}

/// Merged config-file + flag values, keyed by flag name without dashes.
pub struct Settings {
    map: BTreeMap<String, String>,
    /// Output directory; deliberately not echoed so a replay can choose a
    /// fresh directory.
    pub out: Option<PathBuf>,
}

impl Settings {
    pub fn map(&self) -> &BTreeMap<String, String> {
        &self.map
    }

    fn set(&mut self, key: &str, value: String) {
        self.map.insert(key.to_string(), value);
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                SimError::invalid(format!("flag/config value {key} = {raw:?} did not parse"))
            }),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn req_f64(&self, key: &str) -> Result<f64> {
        self.parse(key)?
            .ok_or_else(|| SimError::invalid(format!("--{key} is required")))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        SimError::invalid(format!("{key}: {s:?} is not a number"))
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    fn require_out(&self) -> Result<PathBuf> {
        self.out
            .clone()
            .ok_or_else(|| SimError::invalid("--out DIR is required for this command".to_string()))
    }
}

fn num(v: f64) -> String {
    // Debug formatting round-trips f64 exactly.
    format!("{v:?}")
}

impl CommonArgs {
    /// Build the merged settings: config file first, flags on top.
    pub fn settings(&self) -> Result<Settings> {
        let map = match &self.config {
            Some(path) => config::load(path)?,
            None => BTreeMap::new(),
        };
        let mut s = Settings {
            map,
            out: self.out.clone(),
        };
        if let Some(v) = self.gamma_x {
            s.set("gamma-x", num(v));
        }
        if let Some(v) = self.gamma_p {
            s.set("gamma-p", num(v));
        }
        if let Some(v) = self.kappa_f {
            s.set("kappa-f", num(v));
        }
        if let Some(v) = self.omega {
            s.set("omega", num(v));
        }
        if let Some(v) = self.beta {
            s.set("beta", num(v));
        }
        if self.unitary {
            s.set("unitary", "true".to_string());
        }
        if self.no_unitary {
            s.set("unitary", "false".to_string());
        }
        if let Some(v) = self.variant {
            let name = match v {
                VariantArg::Dual => "dual",
                VariantArg::Single => "single",
                VariantArg::MeasureOnly => "measure-only",
            };
            s.set("variant", name.to_string());
        }
        if let Some(v) = self.dim {
            s.set("dim", v.to_string());
        }
        if let Some(v) = self.dt {
            s.set("dt", num(v));
        }
        if let Some(v) = self.t_final {
            s.set("t-final", num(v));
        }
        if let Some(v) = self.sample_dt {
            s.set("sample-dt", num(v));
        }
        if let Some(v) = self.n_traj {
            s.set("n-traj", v.to_string());
        }
        if let Some(v) = self.seed {
            s.set("seed", v.to_string());
        }
        if let Some(v) = self.engine {
            s.set("engine", v.to_string());
        }
        Ok(s)
    }
}

fn variant_from(s: &Settings) -> Result<Variant> {
    match s.get("variant").unwrap_or("dual") {
        "dual" => Ok(Variant::DualFeedback),
        "single" => Ok(Variant::SingleObservable),
        "measure-only" => Ok(Variant::MeasurementOnly),
        other => Err(SimError::invalid(format!(
            "unknown variant {other:?}; expected dual, single or measure-only"
        ))),
    }
}

fn engine_from(s: &Settings, default: Engine) -> Result<Engine> {
    match s.get("engine") {
        None => Ok(default),
        Some("full") => Ok(Engine::Full),
        Some("moments") => Ok(Engine::Moments),
        Some("extended") => Ok(Engine::Extended),
        Some(other) => Err(SimError::invalid(format!(
            "unknown engine {other:?}; expected full, moments or extended"
        ))),
    }
}

fn params_from(s: &Settings) -> Result<FeedbackModelParams> {
    let variant = variant_from(s)?;
    let kappa_f = match variant {
        Variant::MeasurementOnly => s.f64_or("kappa-f", 0.0)?,
        _ => s.req_f64("kappa-f")?,
    };
    let gamma_p = match variant {
        Variant::SingleObservable => s.f64_or("gamma-p", 0.0)?,
        _ => s.req_f64("gamma-p")?,
    };
    let params = FeedbackModelParams {
        omega: s.f64_or("omega", 1.0)?,
        gamma_x: s.req_f64("gamma-x")?,
        gamma_p,
        kappa_f,
        include_unitary: s.bool_or("unitary", false)?,
        variant,
    };
    params.validate()?;
    Ok(params)
}

/// Thermal second moments of the oscillator at inverse temperature beta
/// (vacuum when beta is absent).
fn initial_moments(s: &Settings) -> Result<MomentState> {
    let var = match s.parse::<f64>("beta")? {
        Some(beta) if beta > 0.0 => {
            let n_bar = 1.0 / (beta.exp() - 1.0);
            n_bar + 0.5
        }
        Some(beta) => {
            return Err(SimError::invalid(format!(
                "beta must be positive, got {beta}"
            )))
        }
        None => 0.5,
    };
    MomentState::new(0.0, 0.0, var, var, 0.0)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Steady(common) => cmd_steady(&common.settings()?),
        Command::Moments(common) => cmd_moments(&common.settings()?),
        Command::Sweep { common, grid } => {
            let mut s = common.settings()?;
            if let Some(v) = grid.gx_min {
                s.set("gx-min", num(v));
            }
            if let Some(v) = grid.gx_max {
                s.set("gx-max", num(v));
            }
            if let Some(v) = grid.gp_min {
                s.set("gp-min", num(v));
            }
            if let Some(v) = grid.gp_max {
                s.set("gp-max", num(v));
            }
            if let Some(v) = grid.n_points {
                s.set("n-points", v.to_string());
            }
            if grid.log_spacing {
                s.set("log-spacing", "true".to_string());
            }
            cmd_sweep(&s)
        }
        Command::Relax {
            common,
            betas,
            kappa_fs,
        } => {
            let mut s = common.settings()?;
            if !betas.is_empty() {
                s.set(
                    "betas",
                    betas.iter().map(|v| num(*v)).collect::<Vec<_>>().join(","),
                );
            }
            if !kappa_fs.is_empty() {
                s.set(
                    "kappa-fs",
                    kappa_fs
                        .iter()
                        .map(|v| num(*v))
                        .collect::<Vec<_>>()
                        .join(","),
                );
            }
            cmd_relax(&s)
        }
        Command::Traj(common) => cmd_traj(&common.settings()?),
    }
}

fn cmd_steady(s: &Settings) -> Result<()> {
    let params = params_from(s)?;
    let engine = engine_from(s, Engine::Full)?;
    let dim = s.usize_or("dim", 40)?;
    let (values, dim_used) = steady_point(&params, engine, dim)?;
    println!("engine = {engine}");
    if dim_used > 0 {
        println!("fock_dim = {dim_used}");
    }
    println!("r_x = {}", values.r_x);
    println!("r_p = {}", values.r_p);
    println!("product = {}", values.product);
    println!("purity = {}", values.purity);

    if let Some(out) = &s.out {
        ensure_dir(out)?;
        let mut manifest = RunManifest::new("steady", s.map().clone());
        manifest.record_dim(dim_used);
        write_csv(
            &out.join("steady.csv"),
            &["r_x".into(), "r_p".into(), "product".into(), "purity".into()],
            &[vec![
                fmt_float(values.r_x),
                fmt_float(values.r_p),
                fmt_float(values.product),
                fmt_float(values.purity),
            ]],
        )?;
        manifest.outputs.push("steady.csv".to_string());
        manifest.save(out)?;
    }
    Ok(())
}

fn cmd_moments(s: &Settings) -> Result<()> {
    let params = params_from(s)?;
    let initial = initial_moments(s)?;
    let default_t = if params.kappa_f > 0.0 {
        10.0 / params.kappa_f
    } else {
        5.0
    };
    let t_final = s.f64_or("t-final", default_t)?;
    if t_final <= 0.0 {
        return Err(SimError::invalid("t-final must be positive".to_string()));
    }
    let step = s.f64_or("dt", t_final / 200.0)?;
    if step <= 0.0 {
        return Err(SimError::invalid("dt must be positive".to_string()));
    }

    let eval = |t: f64| -> Result<MomentState> {
        match params.variant {
            Variant::SingleObservable => single_observable_moments(&params, &initial, t),
            Variant::MeasurementOnly => MomentState::new(
                initial.mean_x,
                initial.mean_p,
                initial.m_x2 + params.gamma_p / 4.0 * t,
                initial.m_p2 + params.gamma_x / 4.0 * t,
                initial.m_sym,
            ),
            Variant::DualFeedback if params.include_unitary => {
                extended_moments(&params, &initial, t)
            }
            Variant::DualFeedback => closed_form(&params, &initial, t),
        }
    };

    let n = (t_final / step).round().max(1.0) as usize;
    let mut rows = Vec::with_capacity(n + 1);
    let mut last = initial;
    for k in 0..=n {
        let t = k as f64 * t_final / n as f64;
        let m = eval(t)?;
        rows.push(vec![
            fmt_float(t),
            fmt_float(m.mean_x),
            fmt_float(m.mean_p),
            fmt_float(m.m_x2),
            fmt_float(m.m_p2),
            fmt_float(m.m_sym),
            fmt_float(m.var_x()),
            fmt_float(m.var_p()),
        ]);
        last = m;
    }
    println!("t = {t_final}");
    println!("mean_x2 = {}", last.m_x2);
    println!("mean_p2 = {}", last.m_p2);
    println!("var_x = {}", last.var_x());
    println!("var_p = {}", last.var_p());

    if let Some(out) = &s.out {
        ensure_dir(out)?;
        let mut manifest = RunManifest::new("moments", s.map().clone());
        let header: Vec<String> = [
            "t", "mean_x", "mean_p", "m_x2", "m_p2", "m_sym", "var_x", "var_p",
        ]
        .iter()
        .map(|v| v.to_string())
        .collect();
        write_csv(&out.join("moments.csv"), &header, &rows)?;
        manifest.outputs.push("moments.csv".to_string());
        manifest.save(out)?;
    }
    Ok(())
}

fn cmd_sweep(s: &Settings) -> Result<()> {
    let out = s.require_out()?;
    let n = s.usize_or("n-points", 30)?;
    let log = s.bool_or("log-spacing", false)?;
    let spec = SweepSpec {
        gx_axis: AxisSpec {
            min: s.f64_or("gx-min", 0.5)?,
            max: s.f64_or("gx-max", 10.0)?,
            n,
            log,
        },
        gp_axis: AxisSpec {
            min: s.f64_or("gp-min", 0.5)?,
            max: s.f64_or("gp-max", 10.0)?,
            n,
            log,
        },
        kappa_f: s.req_f64("kappa-f")?,
        omega: s.f64_or("omega", 1.0)?,
        include_unitary: s.bool_or("unitary", false)?,
        engine: engine_from(s, Engine::Full)?,
        start_dim: s.usize_or("dim", 24)?,
    };
    let outcome = run_sweep(&spec, &out, s.map().clone())?;
    println!(
        "sweep: {} x {} grid, engine {}, {} NaN cells, {:.1} s",
        spec.gx_axis.n,
        spec.gp_axis.n,
        spec.engine,
        outcome.manifest.notes.len(),
        outcome.manifest.wall_clock_s
    );
    Ok(())
}

fn cmd_relax(s: &Settings) -> Result<()> {
    let out = s.require_out()?;
    let betas = s
        .f64_list("betas")?
        .or_else(|| s.get("beta").and_then(|b| b.parse().ok()).map(|b| vec![b]))
        .unwrap_or_else(|| vec![1.0, 2.0]);
    let kappa_fs = s
        .f64_list("kappa-fs")?
        .or_else(|| {
            s.get("kappa-f")
                .and_then(|k| k.parse().ok())
                .map(|k| vec![k])
        })
        .unwrap_or_else(|| vec![1.0, 2.0, 3.0]);
    let spec = RelaxationSpec {
        betas,
        kappa_fs,
        gamma_x: s.req_f64("gamma-x")?,
        gamma_p: s.req_f64("gamma-p")?,
        omega: s.f64_or("omega", 1.0)?,
        include_unitary: s.bool_or("unitary", false)?,
        t_final: s.parse("t-final")?,
        sample_dt: s.parse("sample-dt")?,
        dt: s.parse("dt")?,
        start_dim: s.usize_or("dim", 30)?,
    };
    let outcome = run_relaxation(&spec, &out, s.map().clone())?;
    for series in &outcome.series {
        println!(
            "beta = {}, kappa_f = {}: var_x -> {:.4}, purity -> {:.4} (dim {})",
            series.beta,
            series.kappa_f,
            series.var_x.last().unwrap(),
            series.purity.last().unwrap(),
            series.dim_used
        );
    }
    Ok(())
}

fn cmd_traj(s: &Settings) -> Result<()> {
    let out = s.require_out()?;
    let t_final = s.f64_or("t-final", 1.0)?;
    let spec = TrajEnsembleSpec {
        params: params_from(s)?,
        beta: s.parse("beta")?,
        dim: s.usize_or("dim", 16)?,
        n_traj: s.usize_or("n-traj", 100)?,
        t_final,
        dt: s.f64_or("dt", 1e-3)?,
        sample_dt: s.f64_or("sample-dt", t_final / 10.0)?,
        seed_base: s.u64_or("seed", 1234)?,
        per_trajectory_files: s.bool_or("per-trajectory-files", true)?,
    };
    let outcome = run_trajectories(&spec, &out, s.map().clone())?;
    println!(
        "traj: {} trajectories ({} aborted), max |z| = {:.2}, {:.1} s",
        outcome.records.len(),
        outcome.n_aborted,
        outcome.z_max,
        outcome.manifest.wall_clock_s
    );
    Ok(())
}

/// Map errors onto the documented exit codes: 1 invalid input, 2 numerical
/// failure, 3 truncation-guard hard failure.
pub fn exit_code(e: &SimError) -> i32 {
    match e {
        SimError::InvalidInput(_) | SimError::ShapeMismatch { .. } => 1,
        SimError::TruncationGuard { .. } => 3,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "gamma-x = 1\nkappa-f = 3\ngamma-p = 4\n").unwrap();
        let cli = parse(&[
            "quadsqueeze",
            "steady",
            "--gamma-x",
            "9",
            "--config",
            cfg.to_str().unwrap(),
        ]);
        let Command::Steady(common) = cli.command else {
            panic!("wrong subcommand")
        };
        let s = common.settings().unwrap();
        assert_eq!(s.get("gamma-x"), Some("9.0"));
        assert_eq!(s.get("kappa-f"), Some("3"));
        let params = params_from(&s).unwrap();
        assert_eq!(params.gamma_x, 9.0);
        assert_eq!(params.kappa_f, 3.0);
    }

    #[test]
    fn missing_required_flag_is_invalid_input() {
        let cli = parse(&["quadsqueeze", "steady", "--gamma-x", "9"]);
        let Command::Steady(common) = cli.command else {
            panic!("wrong subcommand")
        };
        let err = params_from(&common.settings().unwrap()).unwrap_err();
        assert_eq!(exit_code(&err), 1);
    }

    #[test]
    fn variant_and_engine_parsing() {
        let mut s = Settings {
            map: BTreeMap::new(),
            out: None,
        };
        s.set("variant", "measure-only".into());
        assert_eq!(variant_from(&s).unwrap(), Variant::MeasurementOnly);
        s.set("variant", "sideways".into());
        assert!(variant_from(&s).is_err());
        s.set("engine", "extended".into());
        assert!(matches!(engine_from(&s, Engine::Full), Ok(Engine::Extended)));
        s.set("engine", "warp".into());
        assert!(engine_from(&s, Engine::Full).is_err());
    }

    #[test]
    fn thermal_initial_moments() {
        let mut s = Settings {
            map: BTreeMap::new(),
            out: None,
        };
        assert_eq!(initial_moments(&s).unwrap().m_x2, 0.5);
        s.set("beta", "1".into());
        let m = initial_moments(&s).unwrap();
        // n_bar(beta = 1) + 1/2 must match the states-module thermal oracle.
        approx::assert_abs_diff_eq!(m.m_x2, 1.0819767068693265, epsilon = 1e-12);
    }
}
