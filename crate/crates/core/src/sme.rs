//! Conditioned stochastic trajectories.
//!
//! One Euler (Ito) step of the conditioned master equation consists of
//!
//! - the deterministic drift `-i[H, rho] dt - gamma_x/8 [x,[x,rho]] dt
//!   - gamma_p/8 [p,[p,rho]] dt`,
//! - the innovation terms `sqrt(gamma_j) H[(A_j - <A_j>) rho] d_xi_j` with
//!   `H[O] = (O + O^dag)/2`,
//! - the Markovian feedback conjugation
//!   `exp(-i H_f dt) (rho + d rho) exp(i H_f dt)` expanded to first order in
//!   dt. Four terms survive: `(rho + d rho)`, `-i[H_f dt, rho]`,
//!   `-i[H_f dt, d rho]`, and `-1/2 [H_f dt, [H_f dt, rho]]`; products of
//!   like noise increments are replaced by dt (Ito rule), cross products by
//!   zero.
//!
//! The feedback Hamiltonian is built from the measurement signals of the
//! same step: `H_f dt = -kappa_f (x_bar dt) p + kappa_f (p_bar dt) x` with
//! `x_bar dt = <x> dt + d_xi_x / sqrt(gamma_x)` (and symmetrically for p).
//! The state is renormalized to unit trace after every step.
//!
//! Trajectories are reproducible: one ChaCha stream per trajectory, seeded
//! as `seed_base + trajectory_index`, makes runs bit-identical regardless
//! of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Result, SimError};
use crate::master_eq::{FeedbackModelParams, Variant};
use crate::operators::{FockDim, OperatorSet};
use crate::states::{min_eigenvalue, DensityMatrix, ObservableReport};
use crate::{C64, CMat};

/// Two independent Gaussian increment streams with E[d_xi] = 0 and
/// Var[d_xi] = dt per step.
pub struct NoiseStream {
    pub seed: u64,
    pub dt: f64,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl NoiseStream {
    pub fn new(seed: u64, dt: f64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(SimError::invalid(format!("dt must be positive, got {dt}")));
        }
        Ok(NoiseStream {
            seed,
            dt,
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, dt.sqrt()).expect("finite std"),
        })
    }

    /// Next pair (d_xi_x, d_xi_p).
    pub fn next_pair(&mut self) -> (f64, f64) {
        (
            self.normal.sample(&mut self.rng),
            self.normal.sample(&mut self.rng),
        )
    }
}

/// Measurement signal increments (x_bar dt, p_bar dt) of one trajectory;
/// entries for unmeasured channels are NaN.
#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct MeasurementRecord {
    pub x_signal_dt: Vec<f64>,
    pub p_signal_dt: Vec<f64>,
}

/// Time series of conditioned expectation values plus the noise-seed
/// provenance of one SME run.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub reports: Vec<ObservableReport>,
    pub seed: u64,
    pub dt: f64,
    pub params: FeedbackModelParams,
    /// Signal increments, stored only when requested.
    pub record: Option<MeasurementRecord>,
}

/// Options for one trajectory run.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryOpts {
    pub t_final: f64,
    pub dt: f64,
    pub sample_dt: f64,
    pub store_signals: bool,
}

/// Precomputed operators and coefficients for SME stepping at one Fock
/// dimension.
pub struct SmeStepper {
    pub params: FeedbackModelParams,
    pub ops: OperatorSet,
    h: Option<CMat>,
    measure_x: bool,
    measure_p: bool,
}

impl SmeStepper {
    pub fn new(params: FeedbackModelParams, dim: FockDim) -> Result<Self> {
        params.validate()?;
        let ops = OperatorSet::new(dim);
        let h = if params.include_unitary {
            Some(ops.hamiltonian(params.omega)?)
        } else {
            None
        };
        let measure_x = params.gamma_x > 0.0;
        let measure_p = params.variant != Variant::SingleObservable && params.gamma_p > 0.0;
        Ok(SmeStepper {
            params,
            ops,
            h,
            measure_x,
            measure_p,
        })
    }

    /// One Ito-Euler update. Returns the new (trace-renormalized) state and
    /// the signal increments (x_bar dt, p_bar dt); unmeasured channels
    /// report NaN.
    pub fn step(&self, rho: &CMat, dxi_x: f64, dxi_p: f64, dt: f64) -> (CMat, (f64, f64)) {
        let p = &self.params;
        let kf = p.kappa_f;
        let (gx, gp) = (p.gamma_x, p.gamma_p);

        let mean_x = trace_product_re(&self.ops.x, rho);
        let mean_p = trace_product_re(&self.ops.p, rho);

        let xr = self.ops.x.dot(rho);
        let rx = rho.dot(&self.ops.x);
        let pr = self.ops.p.dot(rho);
        let rp = rho.dot(&self.ops.p);
        let comm_x = &xr - &rx; // [x, rho]
        let comm_p = &pr - &rp;
        let dcomm_x = self.ops.x.dot(&comm_x) - comm_x.dot(&self.ops.x); // [x,[x,rho]]
        let dcomm_p = self.ops.p.dot(&comm_p) - comm_p.dot(&self.ops.p);

        let cdt = C64::new(dt, 0.0);

        // Drift of the conditioned equation.
        let mut drho = CMat::zeros(rho.raw_dim());
        if let Some(h) = &self.h {
            drho = drho + (h.dot(rho) - rho.dot(h)) * (-C64::i() * cdt);
        }
        if self.measure_x {
            drho = drho - &dcomm_x * C64::new(gx / 8.0 * dt, 0.0);
        }
        if self.measure_p {
            drho = drho - &dcomm_p * C64::new(gp / 8.0 * dt, 0.0);
        }

        // Innovations: sqrt(gamma) H[(A - <A>) rho] d_xi.
        let half = C64::new(0.5, 0.0);
        let m_x = if self.measure_x {
            let m = (&xr + &rx) * half - rho * C64::new(mean_x, 0.0);
            drho = drho + &m * C64::new(gx.sqrt() * dxi_x, 0.0);
            Some(m)
        } else {
            None
        };
        let m_p = if self.measure_p {
            let m = (&pr + &rp) * half - rho * C64::new(mean_p, 0.0);
            drho = drho + &m * C64::new(gp.sqrt() * dxi_p, 0.0);
            Some(m)
        } else {
            None
        };

        // Measurement signals of this same step.
        let x_bar_dt = if self.measure_x {
            mean_x * dt + dxi_x / gx.sqrt()
        } else {
            f64::NAN
        };
        let p_bar_dt = if self.measure_p {
            mean_p * dt + dxi_p / gp.sqrt()
        } else {
            f64::NAN
        };

        let mut out = rho + &drho;

        if kf > 0.0 {
            // -i [H_f dt, rho] with the full stochastic H_f dt
            //   = (kappa_f p_bar dt) x - (kappa_f x_bar dt) p.
            let coeff_x = if self.measure_p { kf * p_bar_dt } else { 0.0 };
            let coeff_p = -kf * x_bar_dt;
            out = out
                + &comm_x * C64::new(0.0, -coeff_x)
                + &comm_p * C64::new(0.0, -coeff_p);

            // Ito cross term -i [H_f dt, d rho]: only like-noise products
            // survive as dt. The x-signal noise enters H_f through
            // B_x = -kappa_f p / sqrt(gamma_x) against M_x d_xi_x.
            if let Some(m_x) = &m_x {
                let comm = self.ops.p.dot(m_x) - m_x.dot(&self.ops.p);
                let scale = -kf / gx.sqrt() * gx.sqrt() * dt; // B_x against sqrt(gx) M_x
                out = out + comm * C64::new(0.0, -scale);
            }
            if let Some(m_p) = &m_p {
                let comm = self.ops.x.dot(m_p) - m_p.dot(&self.ops.x);
                let scale = kf / gp.sqrt() * gp.sqrt() * dt;
                out = out + comm * C64::new(0.0, -scale);
            }

            // -1/2 [H_f dt, [H_f dt, rho]] with d_xi^2 -> dt:
            // (kappa_f^2/gamma_x) [p,[p,rho]] + (kappa_f^2/gamma_p) [x,[x,rho]].
            if self.measure_x {
                out = out - &dcomm_p * C64::new(kf * kf / gx * dt / 2.0, 0.0);
            }
            if self.measure_p {
                out = out - &dcomm_x * C64::new(kf * kf / gp * dt / 2.0, 0.0);
            }
        }

        // Renormalize to unit trace.
        let tr: C64 = out.diag().sum();
        out.mapv_inplace(|z| z / tr);
        (out, (x_bar_dt, p_bar_dt))
    }
}

pub(crate) fn trace_product_re(a: &CMat, b: &CMat) -> f64 {
    let mut tr = C64::new(0.0, 0.0);
    for (i, row) in a.outer_iter().enumerate() {
        for (j, aij) in row.iter().enumerate() {
            tr += aij * b[(j, i)];
        }
    }
    tr.re
}

/// Integrate one conditioned trajectory. Identical
/// (seed, dt, params, rho0) produce bit-identical records.
pub fn run_trajectory(
    rho0: &DensityMatrix,
    params: &FeedbackModelParams,
    opts: &TrajectoryOpts,
    seed: u64,
) -> Result<TrajectoryRecord> {
    if opts.t_final < 0.0 || opts.dt <= 0.0 || opts.sample_dt <= 0.0 {
        return Err(SimError::invalid(
            "trajectory times and steps must be positive".to_string(),
        ));
    }
    let stepper = SmeStepper::new(*params, rho0.dim())?;
    let mut noise = NoiseStream::new(seed, opts.dt)?;
    let n_steps = (opts.t_final / opts.dt).round() as usize;
    let sample_every = (opts.sample_dt / opts.dt).round().max(1.0) as usize;

    let mut rho = rho0.matrix().clone();
    let mut times = Vec::new();
    let mut reports = Vec::new();
    let mut record = opts.store_signals.then(MeasurementRecord::default);

    times.push(0.0);
    reports.push(rho0.report(&stepper.ops)?);

    for step in 1..=n_steps {
        let (dxi_x, dxi_p) = noise.next_pair();
        let (next, (xs, ps)) = stepper.step(&rho, dxi_x, dxi_p, opts.dt);
        rho = next;
        if let Some(rec) = record.as_mut() {
            rec.x_signal_dt.push(xs);
            rec.p_signal_dt.push(ps);
        }
        if step % sample_every == 0 || step == n_steps {
            let t = step as f64 * opts.dt;
            // Euler noise steps leave O(dt^{3/2}) positivity dust; only
            // abort on genuinely unphysical excursions (blow-up, too-large
            // dt), not on discretization noise.
            let min_eig = min_eigenvalue(&rho)?;
            if min_eig < -1e-2 {
                return Err(SimError::StateInvariant {
                    what: format!("conditioned-state positivity (seed {seed}, dt {})", opts.dt),
                    deviation: -min_eig,
                    time: Some(t),
                });
            }
            let herm = hermitize(&rho);
            let tail = crate::states::tail_population(&herm);
            if tail.abs() > 1e-3 {
                return Err(SimError::TruncationGuard {
                    population: tail,
                    dim: stepper.ops.dim.n_levels(),
                });
            }
            times.push(t);
            reports.push(ObservableReport::from_matrix(&herm, &stepper.ops)?);
        }
    }

    Ok(TrajectoryRecord {
        times,
        reports,
        seed,
        dt: opts.dt,
        params: *params,
        record,
    })
}

// Euler noise leaves a small anti-Hermitian residue, O(dt^{3/2}) per step;
// fold it out before validating against the 1e-10 tolerance.
fn hermitize(rho: &CMat) -> CMat {
    let dag = crate::operators::dagger(rho);
    (rho + &dag) * C64::new(0.5, 0.0)
}

/// Run `n_traj` independent trajectories in parallel, seeded
/// `seed_base + index`.
pub fn run_ensemble(
    rho0: &DensityMatrix,
    params: &FeedbackModelParams,
    opts: &TrajectoryOpts,
    n_traj: usize,
    seed_base: u64,
) -> Result<Vec<TrajectoryRecord>> {
    if n_traj == 0 {
        return Err(SimError::invalid("n_traj must be at least 1".to_string()));
    }
    (0..n_traj)
        .into_par_iter()
        .map(|i| run_trajectory(rho0, params, opts, seed_base + i as u64))
        .collect()
}

/// Pointwise ensemble means and standard errors.
#[derive(Clone, Debug)]
pub struct EnsembleSeries {
    pub times: Vec<f64>,
    pub n_traj: usize,
    /// Field-wise means in [`ObservableReport::FIELD_NAMES`] order.
    pub mean: Vec<[f64; 11]>,
    /// Standard error of each mean (zero for a single trajectory).
    pub stderr: Vec<[f64; 11]>,
}

/// Average a set of trajectory records sharing parameters, step and grid.
pub fn ensemble_average(records: &[TrajectoryRecord]) -> Result<EnsembleSeries> {
    let first = records
        .first()
        .ok_or_else(|| SimError::invalid("empty ensemble".to_string()))?;
    for r in records.iter().skip(1) {
        if r.params != first.params || r.dt != first.dt || r.times != first.times {
            return Err(SimError::invalid(
                "ensemble records must share params, dt and sample grid".to_string(),
            ));
        }
    }
    let n = records.len();
    let n_t = first.times.len();
    let mut mean = vec![[0.0; 11]; n_t];
    let mut stderr = vec![[0.0; 11]; n_t];
    for r in records {
        for (t, rep) in r.reports.iter().enumerate() {
            for (k, v) in rep.fields().iter().enumerate() {
                mean[t][k] += v;
            }
        }
    }
    for row in mean.iter_mut() {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    if n > 1 {
        for r in records {
            for (t, rep) in r.reports.iter().enumerate() {
                for (k, v) in rep.fields().iter().enumerate() {
                    let d = v - mean[t][k];
                    stderr[t][k] += d * d;
                }
            }
        }
        for row in stderr.iter_mut() {
            for v in row.iter_mut() {
                *v = (*v / (n as f64 - 1.0) / n as f64).sqrt();
            }
        }
    }
    Ok(EnsembleSeries {
        times: first.times.clone(),
        n_traj: n,
        mean,
        stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::master_eq::Generator;
    use approx::assert_abs_diff_eq;

    fn fd(n: usize) -> FockDim {
        FockDim::new(n).unwrap()
    }

    fn dual(kf: f64) -> FeedbackModelParams {
        FeedbackModelParams::dual(1.0, 9.0, 4.0, kf, false)
    }

    #[test]
    fn noise_stream_statistics() {
        let dt = 1e-3;
        let mut ns = NoiseStream::new(123, dt).unwrap();
        let n = 100_000;
        let (mut sx, mut sp, mut sxx, mut spp, mut sxp) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let (a, b) = ns.next_pair();
            sx += a;
            sp += b;
            sxx += a * a;
            spp += b * b;
            sxp += a * b;
        }
        let nf = n as f64;
        let sigma_mean = (dt / nf).sqrt();
        assert!((sx / nf).abs() < 3.0 * sigma_mean);
        assert!((sp / nf).abs() < 3.0 * sigma_mean);
        // Var estimator std ~ dt sqrt(2/n).
        assert!((sxx / nf - dt).abs() < 3.0 * dt * (2.0 / nf).sqrt());
        assert!((spp / nf - dt).abs() < 3.0 * dt * (2.0 / nf).sqrt());
        // Covariance of independent streams.
        assert!((sxp / nf).abs() < 3.0 * dt / nf.sqrt());
    }

    #[test]
    fn zero_noise_reduction_to_unconditioned_euler() {
        // d_xi = 0 and kappa_f = 0: one step must equal one Euler step of
        // the unconditioned master equation, element-wise.
        let params = FeedbackModelParams {
            kappa_f: 0.0,
            variant: Variant::MeasurementOnly,
            include_unitary: true,
            ..dual(0.0)
        };
        let dim = fd(16);
        let stepper = SmeStepper::new(params, dim).unwrap();
        let gen = Generator::new(params, dim).unwrap();
        let rho0 = DensityMatrix::thermal(dim, 2.0, 1.0).unwrap();
        let dt = 1e-3;
        let (stepped, _) = stepper.step(rho0.matrix(), 0.0, 0.0, dt);
        let euler = rho0.matrix() + &(gen.rhs(rho0.matrix()).unwrap() * C64::new(dt, 0.0));
        let max_diff = (&stepped - &euler)
            .iter()
            .map(|z| z.norm())
            .fold(0.0_f64, f64::max);
        assert!(max_diff < 1e-12, "max diff {max_diff:.3e}");
    }

    #[test]
    fn innovation_term_is_traceless_on_vacuum() {
        let dim = fd(10);
        let ops = OperatorSet::new(dim);
        let rho = DensityMatrix::vacuum(dim);
        let mean_x = trace_product_re(&ops.x, rho.matrix());
        let xr = ops.x.dot(rho.matrix());
        let rx = rho.matrix().dot(&ops.x);
        let m = (&xr + &rx) * C64::new(0.5, 0.0) - rho.matrix() * C64::new(mean_x, 0.0);
        let tr: C64 = m.diag().sum();
        assert!(tr.norm() < 1e-14);
    }

    #[test]
    fn seed_replay_is_bit_identical() {
        let params = dual(3.0);
        let dim = fd(14);
        let rho0 = DensityMatrix::vacuum(dim);
        let opts = TrajectoryOpts {
            t_final: 0.2,
            dt: 1e-3,
            sample_dt: 0.05,
            store_signals: true,
        };
        let a = run_trajectory(&rho0, &params, &opts, 99).unwrap();
        let b = run_trajectory(&rho0, &params, &opts, 99).unwrap();
        assert_eq!(a.times, b.times);
        for (ra, rb) in a.reports.iter().zip(&b.reports) {
            assert_eq!(ra.fields(), rb.fields());
        }
        assert_eq!(
            a.record.as_ref().unwrap().x_signal_dt,
            b.record.as_ref().unwrap().x_signal_dt
        );
        // Different seed diverges.
        let c = run_trajectory(&rho0, &params, &opts, 100).unwrap();
        assert_ne!(
            a.reports.last().unwrap().mean_x2,
            c.reports.last().unwrap().mean_x2
        );
    }

    #[test]
    fn signals_reconstructible_from_means_and_noise() {
        let params = dual(3.0);
        let dim = fd(14);
        let rho0 = DensityMatrix::vacuum(dim);
        let dt = 1e-3;
        let opts = TrajectoryOpts {
            t_final: 0.05,
            dt,
            sample_dt: dt, // sample every step so means line up with signals
            store_signals: true,
        };
        let seed = 7;
        let rec = run_trajectory(&rho0, &params, &opts, seed).unwrap();
        let signals = rec.record.as_ref().unwrap();
        let mut noise = NoiseStream::new(seed, dt).unwrap();
        for (k, xs) in signals.x_signal_dt.iter().enumerate() {
            let (dxi_x, dxi_p) = noise.next_pair();
            // Means entering the signal are those of the pre-step state.
            let expect_x = rec.reports[k].mean_x * dt + dxi_x / params.gamma_x.sqrt();
            let expect_p = rec.reports[k].mean_p * dt + dxi_p / params.gamma_p.sqrt();
            assert_abs_diff_eq!(*xs, expect_x, epsilon = 1e-12);
            assert_abs_diff_eq!(signals.p_signal_dt[k], expect_p, epsilon = 1e-12);
        }
    }

    #[test]
    fn conditioned_purity_stays_physical() {
        let params = dual(3.0);
        let dim = fd(16);
        let rho0 = DensityMatrix::thermal(dim, 1.0, 1.0).unwrap();
        let opts = TrajectoryOpts {
            t_final: 1.0,
            dt: 1e-3,
            sample_dt: 0.1,
            store_signals: false,
        };
        let rec = run_trajectory(&rho0, &params, &opts, 5).unwrap();
        for rep in &rec.reports {
            assert!(rep.purity > 0.0 && rep.purity <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn ensemble_average_contracts() {
        let params = dual(3.0);
        let dim = fd(12);
        let rho0 = DensityMatrix::vacuum(dim);
        let opts = TrajectoryOpts {
            t_final: 0.1,
            dt: 1e-3,
            sample_dt: 0.05,
            store_signals: false,
        };
        let records = run_ensemble(&rho0, &params, &opts, 4, 1000).unwrap();
        let series = ensemble_average(&records).unwrap();
        assert_eq!(series.n_traj, 4);
        assert_eq!(series.times.len(), series.mean.len());

        // A single record averages to itself with zero standard error.
        let single = ensemble_average(&records[..1]).unwrap();
        for (m, rep) in single.mean.iter().zip(&records[0].reports) {
            assert_eq!(*m, rep.fields());
        }
        assert!(single.stderr.iter().all(|row| row.iter().all(|v| *v == 0.0)));

        // Mixed parameters are rejected.
        let mut other = records[0].clone();
        other.params.kappa_f = 1.0;
        assert!(ensemble_average(&[records[0].clone(), other]).is_err());
    }

    #[test]
    fn small_ensemble_tracks_deterministic_engine() {
        // Cheap version of the ensemble-consistency check (the full
        // N = 2000 comparison lives in the acceptance suite).
        let params = dual(3.0);
        let dim = fd(14);
        let rho0 = DensityMatrix::vacuum(dim);
        let opts = TrajectoryOpts {
            t_final: 0.5,
            dt: 1e-3,
            sample_dt: 0.25,
            store_signals: false,
        };
        let n = 200;
        let records = run_ensemble(&rho0, &params, &opts, n, 77).unwrap();
        let series = ensemble_average(&records).unwrap();

        let gen = Generator::new(params, dim).unwrap();
        let det = gen.evolve(&rho0, 0.5, 1e-3, 0.25).unwrap();
        let idx_x2 = 2; // mean_x2 position in ObservableReport::FIELD_NAMES
        for ((t, rho), (m, se)) in det.iter().zip(series.mean.iter().zip(&series.stderr)) {
            if *t == 0.0 {
                continue;
            }
            let want = rho.report(&gen.ops).unwrap().mean_x2;
            let z = (m[idx_x2] - want) / se[idx_x2].max(1e-12);
            assert!(z.abs() < 5.0, "t = {t}: z = {z:.2}");
        }
    }
}
