//! Closed-form and small-ODE moment engine.
//!
//! Without the unitary term the first and second quadrature moments close on
//! themselves and have elementary exponential solutions:
//!
//! - `<x>(t) = <x>(0) e^{-kappa_f t}`, likewise for `<p>`;
//! - `<x^2>(t) = C1 e^{-2 kappa_f t} + Gamma_p / (8 kappa_f)` with
//!   `Gamma_p = gamma_p + 4 kappa_f^2 / gamma_x`, and symmetrically for
//!   `<p^2>`.
//!
//! With the unitary term the five moments
//! `(<x>, <p>, <x^2>, <p^2>, <xp + px>)` still form a closed linear system;
//! [`extended_moments`] integrates it and [`extended_steady`] solves the
//! stationary second-moment block directly. The extended system is not
//! taken on faith: `coefficients_match_master_equation` in the test module
//! checks every right-hand side against traces of the full density-matrix
//! generator on random states.

use ndarray::prelude::*;
use ndarray_linalg::Solve;

use crate::error::{Result, SimError};
use crate::master_eq::{FeedbackModelParams, KCoefficients, Variant};

/// First and second quadrature moments of one state.
///
/// `m_sym` (= <xp + px>) only couples in when the unitary term is present;
/// it is carried uniformly so that one type serves both paths.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MomentState {
    pub mean_x: f64,
    pub mean_p: f64,
    pub m_x2: f64,
    pub m_p2: f64,
    pub m_sym: f64,
}

impl MomentState {
    pub fn new(mean_x: f64, mean_p: f64, m_x2: f64, m_p2: f64, m_sym: f64) -> Result<Self> {
        if m_x2 < mean_x * mean_x - 1e-12 || m_p2 < mean_p * mean_p - 1e-12 {
            return Err(SimError::invalid(
                "second moments must dominate squared means".to_string(),
            ));
        }
        Ok(MomentState {
            mean_x,
            mean_p,
            m_x2,
            m_p2,
            m_sym,
        })
    }

    pub fn from_report(rep: &crate::states::ObservableReport) -> Self {
        MomentState {
            mean_x: rep.mean_x,
            mean_p: rep.mean_p,
            m_x2: rep.mean_x2,
            m_p2: rep.mean_p2,
            m_sym: rep.sym_xp,
        }
    }

    pub fn var_x(&self) -> f64 {
        self.m_x2 - self.mean_x * self.mean_x
    }

    pub fn var_p(&self) -> f64 {
        self.m_p2 - self.mean_p * self.mean_p
    }
}

/// Decomposition of the no-unitary closed-form solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentSolution {
    /// Initial-condition offset of <x^2> from its steady value.
    pub c1: f64,
    /// Initial-condition offset of <p^2> from its steady value.
    pub c2: f64,
    pub x2_ss: f64,
    pub p2_ss: f64,
    /// Decay rate of the means; second moments decay at twice this rate.
    pub rate: f64,
}

fn require_dual_positive_kf(params: &FeedbackModelParams) -> Result<()> {
    params.validate()?;
    if params.variant != Variant::DualFeedback {
        return Err(SimError::invalid(format!(
            "closed-form moments require the dual-feedback variant, got {}",
            params.variant
        )));
    }
    if params.kappa_f <= 0.0 {
        return Err(SimError::NoSteadyState(
            "kappa_f = 0 has no steady moments; the measurement-only second moments \
             grow linearly at rates gamma_x/4 and gamma_p/4"
                .to_string(),
        ));
    }
    Ok(())
}

/// Steady-state decomposition of the no-unitary dual-feedback solution.
pub fn moment_solution(
    params: &FeedbackModelParams,
    initial: &MomentState,
) -> Result<MomentSolution> {
    require_dual_positive_kf(params)?;
    if params.include_unitary {
        return Err(SimError::invalid(
            "the closed-form solution ignores the unitary term; use extended_moments instead"
                .to_string(),
        ));
    }
    let coeffs = KCoefficients::from_params(params)?;
    let (gamma_eff_x, gamma_eff_p) = match coeffs {
        KCoefficients::Dual {
            gamma_eff_x,
            gamma_eff_p,
            ..
        } => (gamma_eff_x, gamma_eff_p),
        KCoefficients::Single { .. } => unreachable!("variant checked above"),
    };
    let kf = params.kappa_f;
    let x2_ss = gamma_eff_p / (8.0 * kf);
    let p2_ss = gamma_eff_x / (8.0 * kf);
    Ok(MomentSolution {
        c1: initial.m_x2 - x2_ss,
        c2: initial.m_p2 - p2_ss,
        x2_ss,
        p2_ss,
        rate: kf,
    })
}

/// Closed-form dual-feedback moments without the unitary term.
pub fn closed_form(
    params: &FeedbackModelParams,
    initial: &MomentState,
    t: f64,
) -> Result<MomentState> {
    let sol = moment_solution(params, initial)?;
    let kf = params.kappa_f;
    let e1 = (-kf * t).exp();
    let e2 = (-2.0 * kf * t).exp();
    Ok(MomentState {
        mean_x: initial.mean_x * e1,
        mean_p: initial.mean_p * e1,
        m_x2: sol.c1 * e2 + sol.x2_ss,
        m_p2: sol.c2 * e2 + sol.p2_ss,
        // Decoupled without the unitary term; decays at the second-moment rate.
        m_sym: initial.m_sym * e2,
    })
}

/// Steady-state uncertainty product
/// `<x^2><p^2> = 1/8 + gamma_x gamma_p / (64 kappa_f^2)
///  + kappa_f^2 / (4 gamma_x gamma_p)`,
/// minimized at exactly 1/4 on the manifold gamma_x gamma_p = 4 kappa_f^2.
pub fn uncertainty_product_ss(gamma_x: f64, gamma_p: f64, kappa_f: f64) -> Result<f64> {
    if gamma_x <= 0.0 || gamma_p <= 0.0 || kappa_f <= 0.0 {
        return Err(SimError::invalid(
            "uncertainty product requires strictly positive strengths".to_string(),
        ));
    }
    let gg = gamma_x * gamma_p;
    let kk = kappa_f * kappa_f;
    Ok(0.125 + gg / (64.0 * kk) + kk / (4.0 * gg))
}

/// Single-observable moments without the unitary term: `<p>` is frozen,
/// `<x^2>` relaxes to kappa_f / (2 gamma_x), and `<p^2>` grows linearly at
/// rate gamma_x / 4.
pub fn single_observable_moments(
    params: &FeedbackModelParams,
    initial: &MomentState,
    t: f64,
) -> Result<MomentState> {
    params.validate()?;
    if params.variant != Variant::SingleObservable {
        return Err(SimError::invalid(format!(
            "expected the single-observable variant, got {}",
            params.variant
        )));
    }
    if params.kappa_f <= 0.0 {
        return Err(SimError::NoSteadyState(
            "kappa_f = 0 reduces to pure x-measurement heating".to_string(),
        ));
    }
    let kf = params.kappa_f;
    let gx = params.gamma_x;
    let x2_ss = kf / (2.0 * gx);
    let e1 = (-kf * t).exp();
    let e2 = (-2.0 * kf * t).exp();
    Ok(MomentState {
        mean_x: initial.mean_x * e1,
        mean_p: initial.mean_p,
        m_x2: (initial.m_x2 - x2_ss) * e2 + x2_ss,
        m_p2: initial.m_p2 + gx / 4.0 * t,
        m_sym: initial.m_sym * e1,
    })
}

/// Drift matrix and constant term of the extended five-moment linear system
/// (dual feedback with the unitary term):
///
/// ```text
/// d<x>/dt   = omega <p> - kappa_f <x>
/// d<p>/dt   = -omega <x> - kappa_f <p>
/// d<x2>/dt  = omega <xp+px> - 2 kappa_f <x2> + Gamma_p / 4
/// d<p2>/dt  = -omega <xp+px> - 2 kappa_f <p2> + Gamma_x / 4
/// d<sym>/dt = 2 omega (<p2> - <x2>) - 2 kappa_f <sym>
/// ```
fn extended_system(params: &FeedbackModelParams) -> Result<(Array2<f64>, Array1<f64>)> {
    require_dual_positive_kf(params)?;
    if !params.include_unitary {
        return Err(SimError::invalid(
            "the extended system is the unitary-included path; use closed_form otherwise"
                .to_string(),
        ));
    }
    let coeffs = KCoefficients::from_params(params)?;
    let (gamma_eff_x, gamma_eff_p) = match coeffs {
        KCoefficients::Dual {
            gamma_eff_x,
            gamma_eff_p,
            ..
        } => (gamma_eff_x, gamma_eff_p),
        KCoefficients::Single { .. } => unreachable!(),
    };
    let w = params.omega;
    let kf = params.kappa_f;
    // State order: (mean_x, mean_p, m_x2, m_p2, m_sym).
    let a = arr2(&[
        [-kf, w, 0.0, 0.0, 0.0],
        [-w, -kf, 0.0, 0.0, 0.0],
        [0.0, 0.0, -2.0 * kf, 0.0, w],
        [0.0, 0.0, 0.0, -2.0 * kf, -w],
        [0.0, 0.0, -2.0 * w, 2.0 * w, -2.0 * kf],
    ]);
    let b = arr1(&[0.0, 0.0, gamma_eff_p / 4.0, gamma_eff_x / 4.0, 0.0]);
    Ok((a, b))
}

/// Integrate the extended five-moment system from `initial` to time `t`
/// (RK4 on the 5-vector; cost is negligible next to the full solver).
pub fn extended_moments(
    params: &FeedbackModelParams,
    initial: &MomentState,
    t: f64,
) -> Result<MomentState> {
    let (a, b) = extended_system(params)?;
    let mut y = arr1(&[
        initial.mean_x,
        initial.mean_p,
        initial.m_x2,
        initial.m_p2,
        initial.m_sym,
    ]);
    let rate = params
        .kappa_f
        .max(params.omega)
        .max(1.0);
    let dt = (0.01 / rate).min(t.max(1e-9));
    let n_steps = (t / dt).ceil().max(1.0) as usize;
    let h = t / n_steps as f64;
    let f = |y: &Array1<f64>| a.dot(y) + &b;
    for _ in 0..n_steps {
        let k1 = f(&y);
        let k2 = f(&(&y + &(&k1 * (h / 2.0))));
        let k3 = f(&(&y + &(&k2 * (h / 2.0))));
        let k4 = f(&(&y + &(&k3 * h)));
        y = &y + &((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0));
    }
    Ok(MomentState {
        mean_x: y[0],
        mean_p: y[1],
        m_x2: y[2],
        m_p2: y[3],
        m_sym: y[4],
    })
}

/// Stationary point of the extended system (means vanish; the 3x3
/// second-moment block is solved directly).
pub fn extended_steady(params: &FeedbackModelParams) -> Result<MomentState> {
    let (a, b) = extended_system(params)?;
    let block = a.slice(s![2.., 2..]).to_owned();
    let rhs = -b.slice(s![2..]).to_owned();
    let sol = block
        .solve(&rhs)
        .map_err(|e| SimError::Numerical(format!("steady moment solve failed: {e}")))?;
    Ok(MomentState {
        mean_x: 0.0,
        mean_p: 0.0,
        m_x2: sol[0],
        m_p2: sol[1],
        m_sym: sol[2],
    })
}
