//! Steady-state evaluation engines shared by sweeps and the `steady`
//! subcommand.

use quadsqueeze::error::{Result, SimError};
use quadsqueeze::master_eq::steady_state_opts;
use quadsqueeze::moments::{extended_steady, moment_solution, MomentState};
use quadsqueeze::operators::OperatorSet;
use quadsqueeze::FeedbackModelParams;

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Vectorized Liouvillian steady state of the full master equation.
    Full,
    /// Closed-form second moments (no unitary term).
    Moments,
    /// Five-moment linear system (with the unitary term).
    Extended,
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Engine::Full => "full",
            Engine::Moments => "moments",
            Engine::Extended => "extended",
        };
        write!(f, "{s}")
    }
}

/// The four sweep quantities at one grid point.
#[derive(Clone, Copy, Debug)]
pub struct PointValues {
    pub r_x: f64,
    pub r_p: f64,
    pub product: f64,
    pub purity: f64,
}

/// Purity of a zero-mean Gaussian state from its covariance entries:
/// `1 / (2 sqrt(<x^2><p^2> - (<xp+px>/2)^2))`. Exact for the steady states
/// here, which are Gaussian.
pub fn gaussian_purity(m_x2: f64, m_p2: f64, m_sym: f64) -> f64 {
    1.0 / (2.0 * (m_x2 * m_p2 - (m_sym / 2.0).powi(2)).sqrt())
}

/// Steady-state point evaluation. Returns the values and the Fock dimension
/// used (0 for the moment engines, which have no Fock space).
pub fn steady_point(
    params: &FeedbackModelParams,
    engine: Engine,
    start_dim: usize,
) -> Result<(PointValues, usize)> {
    match engine {
        Engine::Full => {
            let (rho, dim) = steady_state_opts(params, start_dim, false)?;
            let rep = rho.report(&OperatorSet::new(rho.dim()))?;
            Ok((
                PointValues {
                    r_x: rep.r_x,
                    r_p: rep.r_p,
                    product: rep.uncertainty_product,
                    purity: rep.purity,
                },
                dim,
            ))
        }
        Engine::Moments => {
            if params.include_unitary {
                return Err(SimError::invalid(
                    "the moments engine drops the unitary term; use --engine extended".to_string(),
                ));
            }
            let vacuum = MomentState::new(0.0, 0.0, 0.5, 0.5, 0.0)?;
            let sol = moment_solution(params, &vacuum)?;
            Ok((
                PointValues {
                    r_x: 2.0 * sol.x2_ss,
                    r_p: 2.0 * sol.p2_ss,
                    product: sol.x2_ss * sol.p2_ss,
                    purity: gaussian_purity(sol.x2_ss, sol.p2_ss, 0.0),
                },
                0,
            ))
        }
        Engine::Extended => {
            let ms = extended_steady(params)?;
            Ok((
                PointValues {
                    r_x: 2.0 * ms.m_x2,
                    r_p: 2.0 * ms.m_p2,
                    product: ms.m_x2 * ms.m_p2,
                    purity: gaussian_purity(ms.m_x2, ms.m_p2, ms.m_sym),
                },
                0,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use quadsqueeze::moments::uncertainty_product_ss;

    #[test]
    fn engines_agree_at_the_ideal_point() {
        let params = FeedbackModelParams::dual(1.0, 9.0, 4.0, 3.0, false);
        let (full, dim) = steady_point(&params, Engine::Full, 40).unwrap();
        let (mom, _) = steady_point(&params, Engine::Moments, 0).unwrap();
        assert_eq!(dim, 40);
        assert_abs_diff_eq!(full.r_x, mom.r_x, epsilon = 1e-5);
        assert_abs_diff_eq!(full.product, 0.25, epsilon = 1e-5);
        assert_abs_diff_eq!(mom.product, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(mom.purity, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            mom.product,
            uncertainty_product_ss(9.0, 4.0, 3.0).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn engine_term_mismatch_rejected() {
        let with_u = FeedbackModelParams::dual(1.0, 9.0, 4.0, 3.0, true);
        let without = FeedbackModelParams::dual(1.0, 9.0, 4.0, 3.0, false);
        assert!(steady_point(&with_u, Engine::Moments, 0).is_err());
        assert!(steady_point(&without, Engine::Extended, 0).is_err());
    }

    #[test]
    fn gaussian_purity_of_coherent_state() {
        assert_abs_diff_eq!(gaussian_purity(0.5, 0.5, 0.0), 1.0, epsilon = 1e-15);
        // Thermal n = 1: variances 3/2, purity 1/(2 n + 1) = 1/3.
        assert_abs_diff_eq!(gaussian_purity(1.5, 1.5, 0.0), 1.0 / 3.0, epsilon = 1e-15);
    }
}
