//! Deterministic (ensemble-averaged) evolution.
//!
//! Three model variants share one generator structure:
//!
//! - `DualFeedback`: both quadratures measured, Markovian feedback applied;
//!   d rho/dt = -i[H, rho] + k1 D[c] rho + k2 D[c^dag] rho
//!   + k3 D[c + c^dag] rho with
//!   k1 = gamma_p/4 + kappa_f^2/gamma_x + kappa_f,
//!   k2 = gamma_p/4 + kappa_f^2/gamma_x - kappa_f,
//!   k3 = (gamma_x - gamma_p)/8 - kappa_f^2/(2 gamma_x)
//!        + kappa_f^2/(2 gamma_p).
//! - `MeasurementOnly`: the same with kappa_f = 0. No steady state exists;
//!   the second moments heat at rates gamma_x/4 and gamma_p/4.
//! - `SingleObservable`: only x is measured and fed back. The extra
//!   coefficient k4 = kappa_f/4 multiplies the commutator with the
//!   anti-Hermitian operator (cc - c^dag c^dag); <p^2> grows linearly at
//!   rate gamma_x/4, so no steady state exists here either.
//!
//! Time integration is classical fixed-step RK4. The steady state is
//! obtained two independent ways: as the solution of the vectorized
//! generator with a trace constraint, and by long-time integration; both
//! must agree before a result is returned.

use ndarray::prelude::*;
use ndarray_linalg::Solve;

use crate::error::{Result, SimError};
use crate::operators::{dagger, FockDim, OperatorSet};
use crate::states::{tail_population, DensityMatrix, GUARD_FAIL};
use crate::{C64, CMat};

/// Which measurement/feedback model the generator implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    DualFeedback,
    SingleObservable,
    MeasurementOnly,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::DualFeedback => "dual",
            Variant::SingleObservable => "single",
            Variant::MeasurementOnly => "measure-only",
        };
        write!(f, "{s}")
    }
}

/// All model constants for one simulation.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeedbackModelParams {
    pub omega: f64,
    pub gamma_x: f64,
    pub gamma_p: f64,
    pub kappa_f: f64,
    pub include_unitary: bool,
    pub variant: Variant,
}

impl FeedbackModelParams {
    pub fn dual(omega: f64, gamma_x: f64, gamma_p: f64, kappa_f: f64, unitary: bool) -> Self {
        FeedbackModelParams {
            omega,
            gamma_x,
            gamma_p,
            kappa_f,
            include_unitary: unitary,
            variant: Variant::DualFeedback,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.include_unitary && self.omega <= 0.0 {
            return Err(SimError::invalid(format!(
                "omega must be positive when the unitary term is included, got {}",
                self.omega
            )));
        }
        if self.kappa_f < 0.0 {
            return Err(SimError::invalid(format!(
                "feedback strength must be nonnegative, got {}",
                self.kappa_f
            )));
        }
        match self.variant {
            Variant::DualFeedback => {
                if self.gamma_x <= 0.0 || self.gamma_p <= 0.0 {
                    return Err(SimError::invalid(format!(
                        "dual feedback requires gamma_x > 0 and gamma_p > 0, got ({}, {})",
                        self.gamma_x, self.gamma_p
                    )));
                }
            }
            Variant::SingleObservable => {
                if self.gamma_x <= 0.0 {
                    return Err(SimError::invalid(format!(
                        "single-observable variant requires gamma_x > 0, got {}",
                        self.gamma_x
                    )));
                }
            }
            Variant::MeasurementOnly => {
                if self.kappa_f != 0.0 {
                    return Err(SimError::invalid(format!(
                        "measurement-only variant forces kappa_f = 0, got {}",
                        self.kappa_f
                    )));
                }
                if self.gamma_x < 0.0 || self.gamma_p < 0.0 {
                    return Err(SimError::invalid(
                        "measurement strengths must be nonnegative".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Dissipator coefficients of the ensemble-averaged master equation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KCoefficients {
    /// Dual-feedback (and, with kappa_f = 0, measurement-only) coefficients,
    /// together with the effective measurement strengths Gamma_x, Gamma_p.
    Dual {
        k1: f64,
        k2: f64,
        k3: f64,
        gamma_eff_x: f64,
        gamma_eff_p: f64,
    },
    /// Single-observable coefficients k1'..k4'.
    Single { k1: f64, k2: f64, k3: f64, k4: f64 },
}

impl KCoefficients {
    pub fn from_params(params: &FeedbackModelParams) -> Result<Self> {
        params.validate()?;
        let (gx, gp, kf) = (params.gamma_x, params.gamma_p, params.kappa_f);
        match params.variant {
            Variant::DualFeedback => Ok(KCoefficients::Dual {
                k1: gp / 4.0 + kf * kf / gx + kf,
                k2: gp / 4.0 + kf * kf / gx - kf,
                k3: (gx - gp) / 8.0 - kf * kf / (2.0 * gx) + kf * kf / (2.0 * gp),
                gamma_eff_x: gx + 4.0 * kf * kf / gp,
                gamma_eff_p: gp + 4.0 * kf * kf / gx,
            }),
            Variant::MeasurementOnly => Ok(KCoefficients::Dual {
                k1: gp / 4.0,
                k2: gp / 4.0,
                k3: (gx - gp) / 8.0,
                gamma_eff_x: gx,
                gamma_eff_p: gp,
            }),
            Variant::SingleObservable => Ok(KCoefficients::Single {
                k1: kf * kf / gx + kf / 2.0,
                k2: kf * kf / gx - kf / 2.0,
                k3: gx / 8.0 - kf * kf / (2.0 * gx),
                k4: kf / 4.0,
            }),
        }
    }

    /// Largest absolute rate appearing in the generator, used for the
    /// step-size rule dt <= 0.05 / max_rate.
    pub fn max_rate(&self, omega: f64, include_unitary: bool) -> f64 {
        let base = if include_unitary { omega } else { 0.0 };
        match *self {
            KCoefficients::Dual { k1, k2, k3, .. } => {
                [k1.abs(), k2.abs(), k3.abs(), base]
                    .into_iter()
                    .fold(0.0, f64::max)
            }
            KCoefficients::Single { k1, k2, k3, k4 } => {
                [k1.abs(), k2.abs(), k3.abs(), k4.abs(), base]
                    .into_iter()
                    .fold(0.0, f64::max)
            }
        }
    }
}

/// Precomputed generator of the deterministic master equation at one Fock
/// dimension. The right-hand side is evaluated as
/// `G rho + rho G^dag + k1 c rho c^dag + k2 c^dag rho c + k3 q rho q`
/// with q = c + c^dag and G collecting the Hamiltonian, the anticommutator
/// halves of the dissipators, and (single variant) the k4 commutator.
#[derive(Clone, Debug)]
pub struct Generator {
    pub params: FeedbackModelParams,
    pub coeffs: KCoefficients,
    pub ops: OperatorSet,
    g: CMat,
    q: CMat,
    k1: f64,
    k2: f64,
    k3: f64,
}

impl Generator {
    pub fn new(params: FeedbackModelParams, dim: FockDim) -> Result<Self> {
        let coeffs = KCoefficients::from_params(&params)?;
        let ops = OperatorSet::new(dim);
        let q = &ops.c + &ops.cdag;
        let (k1, k2, k3, k4) = match coeffs {
            KCoefficients::Dual { k1, k2, k3, .. } => (k1, k2, k3, 0.0),
            KCoefficients::Single { k1, k2, k3, k4 } => (k1, k2, k3, k4),
        };

        let n = dim.n_levels();
        let mut g = CMat::zeros((n, n));
        if params.include_unitary {
            let h = ops.hamiltonian(params.omega)?;
            g = g - h * C64::i();
        }
        let half = C64::new(0.5, 0.0);
        let cdc = ops.cdag.dot(&ops.c);
        let ccd = ops.c.dot(&ops.cdag);
        let qq = q.dot(&q);
        g = g - (cdc * C64::new(k1, 0.0) + ccd * C64::new(k2, 0.0) + qq * C64::new(k3, 0.0)) * half;
        if k4 != 0.0 {
            let cc = ops.c.dot(&ops.c);
            let cdcd = ops.cdag.dot(&ops.cdag);
            g = g + (cc - cdcd) * C64::new(k4, 0.0);
        }

        Ok(Generator {
            params,
            coeffs,
            ops,
            g,
            q,
            k1,
            k2,
            k3,
        })
    }

    pub fn dim(&self) -> FockDim {
        self.ops.dim
    }

    /// Recommended RK4 step: the accuracy rule dt * max_rate <= 0.05
    /// combined with the stability cap [`Generator::max_stable_dt`].
    pub fn recommended_dt(&self) -> f64 {
        let rate = self
            .coeffs
            .max_rate(self.params.omega, self.params.include_unitary)
            .max(1.0);
        (0.05 / rate).min(self.max_stable_dt())
    }

    /// Stability limit of explicit RK4 for this generator. The spectral
    /// radius of the vectorized generator grows linearly with the Fock
    /// dimension (ladder matrix elements scale like sqrt(n)), so the step
    /// must shrink accordingly.
    pub fn max_stable_dt(&self) -> f64 {
        let omega = if self.params.include_unitary {
            self.params.omega
        } else {
            0.0
        };
        let rate_sum = match self.coeffs {
            KCoefficients::Dual { k1, k2, k3, .. } => k1.abs() + k2.abs() + 4.0 * k3.abs(),
            KCoefficients::Single { k1, k2, k3, k4 } => {
                k1.abs() + k2.abs() + 4.0 * k3.abs() + 4.0 * k4.abs()
            }
        };
        let n = self.dim().n_levels() as f64;
        // The rate sum only estimates the spectral radius; keep a margin
        // below the RK4 stability boundary (|lambda dt| ~ 2.8 on the real
        // axis, less once the unitary term rotates eigenvalues off it).
        1.2 / ((rate_sum + omega).max(1e-12) * n)
    }

    /// Right-hand side of the master equation applied to a raw state matrix.
    pub fn rhs(&self, rho: &CMat) -> Result<CMat> {
        crate::operators::check_same_shape(&self.g, rho)?;
        Ok(self.rhs_unchecked(rho))
    }

    fn rhs_unchecked(&self, rho: &CMat) -> CMat {
        let mut out = self.g.dot(rho) + rho.dot(&dagger(&self.g));
        if self.k1 != 0.0 {
            out = out + self.ops.c.dot(rho).dot(&self.ops.cdag) * C64::new(self.k1, 0.0);
        }
        if self.k2 != 0.0 {
            out = out + self.ops.cdag.dot(rho).dot(&self.ops.c) * C64::new(self.k2, 0.0);
        }
        if self.k3 != 0.0 {
            out = out + self.q.dot(rho).dot(&self.q) * C64::new(self.k3, 0.0);
        }
        out
    }

    /// Fixed-step RK4 integration, sampling (t, rho) every `sample_dt`.
    ///
    /// Every recorded snapshot passes the full density-matrix invariants;
    /// a violation or a truncation-guard failure aborts with the offending
    /// time.
    pub fn evolve(
        &self,
        rho0: &DensityMatrix,
        t_final: f64,
        dt: f64,
        sample_dt: f64,
    ) -> Result<Vec<(f64, DensityMatrix)>> {
        if dt <= 0.0 || t_final < 0.0 || sample_dt <= 0.0 {
            return Err(SimError::invalid(
                "dt and sample_dt must be positive and t_final nonnegative".to_string(),
            ));
        }
        if rho0.dim() != self.dim() {
            return Err(SimError::ShapeMismatch {
                expected: self.dim().n_levels(),
                got_rows: rho0.dim().n_levels(),
                got_cols: rho0.dim().n_levels(),
            });
        }
        let n_steps = (t_final / dt).round() as usize;
        let sample_every = (sample_dt / dt).round().max(1.0) as usize;

        let mut rho = rho0.matrix().clone();
        let mut samples = Vec::with_capacity(n_steps / sample_every + 2);
        samples.push((0.0, rho0.clone()));

        let half = C64::new(0.5, 0.0);
        let sixth = C64::new(1.0 / 6.0, 0.0);
        let cdt = C64::new(dt, 0.0);
        for step in 1..=n_steps {
            let k1 = self.rhs_unchecked(&rho);
            let k2 = self.rhs_unchecked(&(&rho + &(&k1 * (cdt * half))));
            let k3 = self.rhs_unchecked(&(&rho + &(&k2 * (cdt * half))));
            let k4 = self.rhs_unchecked(&(&rho + &(&k3 * cdt)));
            rho = rho + (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * (cdt * sixth);

            if step % sample_every == 0 || step == n_steps {
                let t = step as f64 * dt;
                let tail = tail_population(&rho);
                if tail > GUARD_FAIL {
                    return Err(SimError::TruncationGuard {
                        population: tail,
                        dim: self.dim().n_levels(),
                    });
                }
                let state = DensityMatrix::new(rho.clone(), Some(t))?;
                samples.push((t, state));
            }
        }
        Ok(samples)
    }
}

/// Default Fock dimension for desk-scale runs.
pub const DEFAULT_FOCK_DIM: usize = 40;
/// Dimension ladder used when the truncation guard trips (growth factor 1.5).
pub const DIM_LADDER: [usize; 4] = [40, 60, 90, 120];
/// Largest dimension for the vectorized steady-state solve; above this the
/// dense Liouvillian no longer fits comfortably in memory.
pub const MAX_NULLSPACE_DIM: usize = 90;

/// RK4 integration with automatic dimension growth on truncation-guard
/// failure. Returns the samples and the dimension that succeeded.
pub fn evolve_auto(
    params: &FeedbackModelParams,
    rho0: &DensityMatrix,
    t_final: f64,
    dt: f64,
    sample_dt: f64,
) -> Result<(Vec<(f64, DensityMatrix)>, usize)> {
    let start = rho0.dim().n_levels();
    let mut last_err = None;
    for &dim in DIM_LADDER.iter().filter(|&&d| d >= start) {
        let fd = FockDim::new(dim)?;
        let gen = Generator::new(*params, fd)?;
        let rho = rho0.embed(fd)?;
        // The stability limit tightens as the dimension grows; shrink the
        // requested step if it would make RK4 blow up.
        let dt_here = dt.min(gen.max_stable_dt());
        match gen.evolve(&rho, t_final, dt_here, sample_dt) {
            Ok(samples) => return Ok((samples, dim)),
            Err(e @ SimError::TruncationGuard { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| {
        SimError::invalid(format!(
            "initial dimension {start} exceeds the dimension ladder"
        ))
    }))
}

/// Direct steady state of the deterministic master equation.
///
/// The vectorized generator is solved with its first row replaced by the
/// trace constraint, then cross-checked against long-time RK4 integration at
/// t = 10 / kappa_f (all observable-report fields must agree to 1e-6).
/// Variants without a steady state (single-observable, measurement-only,
/// kappa_f = 0) are rejected.
pub fn steady_state(params: &FeedbackModelParams) -> Result<(DensityMatrix, usize)> {
    steady_state_opts(params, DEFAULT_FOCK_DIM, true)
}

/// As [`steady_state`], with a chosen starting dimension and an optional
/// skip of the integration cross-check (used by dense sweeps where the
/// residual check alone is sufficient).
pub fn steady_state_opts(
    params: &FeedbackModelParams,
    start_dim: usize,
    cross_check: bool,
) -> Result<(DensityMatrix, usize)> {
    params.validate()?;
    match params.variant {
        Variant::SingleObservable => {
            return Err(SimError::NoSteadyState(
                "single-observable feedback: <p^2> grows linearly at rate gamma_x/4".to_string(),
            ))
        }
        Variant::MeasurementOnly => {
            return Err(SimError::NoSteadyState(
                "measurement without feedback heats indefinitely".to_string(),
            ))
        }
        Variant::DualFeedback => {}
    }
    if params.kappa_f <= 0.0 {
        return Err(SimError::NoSteadyState(
            "kappa_f must be positive for a steady state to exist".to_string(),
        ));
    }

    let mut last_err = None;
    // Start at the requested dimension (which need not be a ladder entry,
    // e.g. dense sweeps over cool states), then climb the ladder on guard
    // failures.
    let candidates = std::iter::once(start_dim)
        .chain(DIM_LADDER.iter().copied().filter(|&d| d > start_dim))
        .filter(|&d| d <= MAX_NULLSPACE_DIM);
    for dim in candidates {
        match steady_state_at_dim(params, dim) {
            Ok(rho) => {
                if cross_check {
                    cross_check_against_evolution(params, &rho)?;
                }
                return Ok((rho, dim));
            }
            Err(e @ SimError::TruncationGuard { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| SimError::Numerical("steady state not found".to_string())))
}

/// Kronecker product a (x) b.
fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = CMat::zeros((ra * rb, ca * cb));
    for ((i, j), &aij) in a.indexed_iter() {
        if aij != C64::new(0.0, 0.0) {
            out.slice_mut(s![i * rb..(i + 1) * rb, j * cb..(j + 1) * cb])
                .assign(&(b * aij));
        }
    }
    out
}

fn steady_state_at_dim(params: &FeedbackModelParams, dim: usize) -> Result<DensityMatrix> {
    let fd = FockDim::new(dim)?;
    let gen = Generator::new(*params, fd)?;
    let n = dim;
    let eye = CMat::eye(n);
    let g_conj = gen.g.mapv(|z| z.conj());

    // Row-major vectorization: vec(A rho B) = (A kron B^T) vec(rho).
    let mut liouv = kron(&gen.g, &eye) + kron(&eye, &g_conj);
    if gen.k1 != 0.0 {
        liouv = liouv + kron(&gen.ops.c, &gen.ops.c.mapv(|z| z.conj())) * C64::new(gen.k1, 0.0);
    }
    if gen.k2 != 0.0 {
        liouv =
            liouv + kron(&gen.ops.cdag, &gen.ops.cdag.mapv(|z| z.conj())) * C64::new(gen.k2, 0.0);
    }
    if gen.k3 != 0.0 {
        liouv = liouv + kron(&gen.q, &gen.q.mapv(|z| z.conj())) * C64::new(gen.k3, 0.0);
    }

    // Replace the first row by the trace constraint Tr(rho) = 1.
    for j in 0..n * n {
        liouv[(0, j)] = C64::new(0.0, 0.0);
    }
    for i in 0..n {
        liouv[(0, i * n + i)] = C64::new(1.0, 0.0);
    }
    let mut b = Array1::<C64>::zeros(n * n);
    b[0] = C64::new(1.0, 0.0);

    let v = liouv
        .solve(&b)
        .map_err(|e| SimError::Numerical(format!("steady-state solve failed: {e}")))?;
    let raw = v.into_shape_with_order((n, n)).expect("n^2 vector");

    // Hermitize and renormalize; both corrections are at rounding level for
    // a well-conditioned solve.
    let mut rho = (&raw + &dagger(&raw)) * C64::new(0.5, 0.0);
    let tr: C64 = rho.diag().sum();
    rho.mapv_inplace(|z| z / tr);

    let tail = tail_population(&rho);
    if tail > GUARD_FAIL {
        return Err(SimError::TruncationGuard {
            population: tail,
            dim: n,
        });
    }

    let residual = gen
        .rhs(&rho)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0_f64, f64::max);
    if residual > 1e-9 {
        return Err(SimError::Numerical(format!(
            "steady-state residual {residual:.3e} exceeds 1e-9 at dim {n}"
        )));
    }

    DensityMatrix::new(rho, None)
}

fn cross_check_against_evolution(
    params: &FeedbackModelParams,
    rho_ss: &DensityMatrix,
) -> Result<()> {
    let gen = Generator::new(*params, rho_ss.dim())?;
    let t_final = 10.0 / params.kappa_f;
    let dt = gen.recommended_dt() * 0.4; // tightened for the 1e-6 comparison
    let rho0 = DensityMatrix::vacuum(rho_ss.dim());
    let samples = gen.evolve(&rho0, t_final, dt, t_final)?;
    let (_, last) = samples.last().expect("at least the final sample");

    let rep_ss = rho_ss.report(&gen.ops)?;
    let rep_ev = last.report(&gen.ops)?;
    let diff = rep_ss.max_abs_diff(&rep_ev);
    if diff > 1e-6 {
        return Err(SimError::Numerical(format!(
            "steady-state cross-check failed: null-space and integrated results \
             differ by {diff:.3e} (> 1e-6)"
        )));
    }
    Ok(())
}
