//! Physical states and their observables.
//!
//! A [`DensityMatrix`] is validated on construction: Hermitian to 1e-10,
//! unit trace to 1e-10, smallest eigenvalue >= -1e-8. Positivity is never
//! silently repaired; violations are errors so that integrator bugs stay
//! visible.
//!
//! The truncation guard watches the population of the top 10% of Fock
//! levels: above 1e-6 it reports a warning, above 1e-3 the state is
//! rejected.

use ndarray::prelude::*;
use ndarray_linalg::{Eigh, UPLO};

use crate::error::{Result, SimError};
use crate::operators::{self, check_same_shape, FockDim, OperatorSet};
use crate::{C64, CMat};

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;
pub const GUARD_WARN: f64 = 1e-6;
pub const GUARD_FAIL: f64 = 1e-3;

/// Result of the truncation guard on one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TruncationStatus {
    /// Top-level population below 1e-6.
    Ok,
    /// Population of the top 10% of levels in (1e-6, 1e-3].
    Warn(f64),
    /// Population above 1e-3; the state is unusable at this dimension.
    Fail(f64),
}

impl TruncationStatus {
    pub fn population(self) -> f64 {
        match self {
            TruncationStatus::Ok => 0.0,
            TruncationStatus::Warn(p) | TruncationStatus::Fail(p) => p,
        }
    }

    pub fn is_fail(self) -> bool {
        matches!(self, TruncationStatus::Fail(_))
    }
}

/// Hermitian, unit-trace, positive matrix on the truncated Fock space.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    dim: FockDim,
    mat: CMat,
}

impl DensityMatrix {
    /// Validate and wrap a raw matrix. `time` is only used for error context.
    pub fn new(mat: CMat, time: Option<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() < 2 {
            return Err(SimError::ShapeMismatch {
                expected: mat.nrows().max(2),
                got_rows: mat.nrows(),
                got_cols: mat.ncols(),
            });
        }
        let herm = operators::hermiticity_deviation(&mat);
        if herm > HERMITICITY_TOL {
            return Err(SimError::StateInvariant {
                what: "hermiticity".into(),
                deviation: herm,
                time,
            });
        }
        let tr: C64 = mat.diag().sum();
        let tr_dev = (tr - C64::new(1.0, 0.0)).norm();
        if tr_dev > TRACE_TOL {
            return Err(SimError::StateInvariant {
                what: "unit trace".into(),
                deviation: tr_dev,
                time,
            });
        }
        let min_eig = min_eigenvalue(&mat)?;
        if min_eig < -POSITIVITY_TOL {
            return Err(SimError::StateInvariant {
                what: "positivity".into(),
                deviation: -min_eig,
                time,
            });
        }
        let dim = FockDim::new(mat.nrows())?;
        Ok(DensityMatrix { dim, mat })
    }

    pub fn dim(&self) -> FockDim {
        self.dim
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn into_matrix(self) -> CMat {
        self.mat
    }

    /// Fock state |n><n|.
    pub fn fock(dim: FockDim, n: usize) -> Result<Self> {
        if n >= dim.n_levels() {
            return Err(SimError::invalid(format!(
                "Fock index {n} outside dimension {dim}"
            )));
        }
        let mut mat = CMat::zeros((dim.n_levels(), dim.n_levels()));
        mat[(n, n)] = C64::new(1.0, 0.0);
        Ok(DensityMatrix { dim, mat })
    }

    pub fn vacuum(dim: FockDim) -> Self {
        Self::fock(dim, 0).expect("dim >= 2")
    }

    /// Coherent state |alpha><alpha| from the truncated expansion
    /// psi_n = e^{-|alpha|^2/2} alpha^n / sqrt(n!), renormalized.
    pub fn coherent(dim: FockDim, alpha: C64) -> Result<Self> {
        let n = dim.n_levels();
        let mut psi = Array1::<C64>::zeros(n);
        let mut amp = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
        for k in 0..n {
            psi[k] = amp;
            amp = amp * alpha / C64::new(((k + 1) as f64).sqrt(), 0.0);
        }
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        let mat = CMat::from_shape_fn((n, n), |(i, j)| psi[i] * psi[j].conj() / norm);
        let state = DensityMatrix { dim, mat };
        match state.truncation_status() {
            TruncationStatus::Fail(p) => Err(SimError::TruncationGuard {
                population: p,
                dim: n,
            }),
            _ => Ok(state),
        }
    }

    /// Thermal (canonical) state exp(-beta H) / Z on the truncated space.
    ///
    /// Diagonal in the Fock basis. Fails the truncation guard if the
    /// occupancy tail reaches the retained top levels.
    pub fn thermal(dim: FockDim, beta: f64, omega: f64) -> Result<Self> {
        if beta <= 0.0 {
            return Err(SimError::invalid(format!(
                "inverse temperature must be positive, got {beta}"
            )));
        }
        if omega <= 0.0 {
            return Err(SimError::invalid(format!(
                "frequency must be positive, got {omega}"
            )));
        }
        let n = dim.n_levels();
        // Boltzmann weights relative to the ground state; the zero-point
        // energy cancels in the normalization.
        let weights: Vec<f64> = (0..n).map(|k| (-beta * omega * k as f64).exp()).collect();
        let z: f64 = weights.iter().sum();
        let mut mat = CMat::zeros((n, n));
        for k in 0..n {
            mat[(k, k)] = C64::new(weights[k] / z, 0.0);
        }
        let state = DensityMatrix { dim, mat };
        match state.truncation_status() {
            TruncationStatus::Fail(p) => Err(SimError::TruncationGuard {
                population: p,
                dim: n,
            }),
            _ => Ok(state),
        }
    }

    /// Zero-pad the state into a larger Fock space.
    pub fn embed(&self, new_dim: FockDim) -> Result<Self> {
        let old = self.dim.n_levels();
        let new = new_dim.n_levels();
        if new < old {
            return Err(SimError::invalid(format!(
                "cannot embed dim {old} into smaller dim {new}"
            )));
        }
        let mut mat = CMat::zeros((new, new));
        mat.slice_mut(s![..old, ..old]).assign(&self.mat);
        Ok(DensityMatrix { dim: new_dim, mat })
    }

    /// Population of the top 10% of Fock levels (at least one level).
    pub fn tail_population(&self) -> f64 {
        tail_population(&self.mat)
    }

    pub fn truncation_status(&self) -> TruncationStatus {
        let p = self.tail_population();
        if p > GUARD_FAIL {
            TruncationStatus::Fail(p)
        } else if p > GUARD_WARN {
            TruncationStatus::Warn(p)
        } else {
            TruncationStatus::Ok
        }
    }

    pub fn purity(&self) -> f64 {
        self.mat
            .dot(&self.mat)
            .diag()
            .sum()
            .re
    }

    /// Full observable report using the operator set for this dimension.
    pub fn report(&self, ops: &OperatorSet) -> Result<ObservableReport> {
        ObservableReport::from_state(self, ops)
    }
}

/// Population of the top 10% of levels of a raw (not necessarily validated)
/// state matrix.
pub fn tail_population(mat: &CMat) -> f64 {
    let n = mat.nrows();
    let tail = (n / 10).max(1);
    (n - tail..n).map(|k| mat[(k, k)].re).sum()
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(mat: &CMat) -> Result<f64> {
    let (eigs, _) = mat
        .eigh(UPLO::Lower)
        .map_err(|e| SimError::Numerical(format!("eigensolve failed: {e}")))?;
    Ok(eigs.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Tr(A rho). For Hermitian A the result must be real to 1e-9; a larger
/// imaginary part signals a corrupted state.
pub fn expectation(a: &CMat, rho: &DensityMatrix) -> Result<C64> {
    check_same_shape(a, rho.matrix())?;
    // Tr(A rho) = sum_{ij} A_ij rho_ji without forming the product.
    let mut tr = C64::new(0.0, 0.0);
    for (i, row) in a.outer_iter().enumerate() {
        for (j, aij) in row.iter().enumerate() {
            tr += aij * rho.matrix()[(j, i)];
        }
    }
    Ok(tr)
}

/// Real expectation value of a Hermitian observable.
pub fn expectation_real(a: &CMat, rho: &DensityMatrix) -> Result<f64> {
    let v = expectation(a, rho)?;
    if v.im.abs() >= 1e-9 {
        return Err(SimError::StateInvariant {
            what: "real expectation of Hermitian observable".into(),
            deviation: v.im.abs(),
            time: None,
        });
    }
    Ok(v.re)
}

/// Means, variances, purity and squeezing parameters of one state.
///
/// `r_x` and `r_p` are the second moments normalized by the coherent-state
/// value 1/2; they coincide with `2 var` only once the means have decayed
/// to zero.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObservableReport {
    pub mean_x: f64,
    pub mean_p: f64,
    pub mean_x2: f64,
    pub mean_p2: f64,
    pub var_x: f64,
    pub var_p: f64,
    /// <xp + px>
    pub sym_xp: f64,
    pub purity: f64,
    pub r_x: f64,
    pub r_p: f64,
    /// var_x * var_p
    pub uncertainty_product: f64,
}

impl ObservableReport {
    pub fn from_state(rho: &DensityMatrix, ops: &OperatorSet) -> Result<Self> {
        if ops.dim != rho.dim() {
            return Err(SimError::ShapeMismatch {
                expected: ops.n_levels(),
                got_rows: rho.dim().n_levels(),
                got_cols: rho.dim().n_levels(),
            });
        }
        Self::from_matrix(rho.matrix(), ops)
    }

    /// Report from a raw Hermitian unit-trace matrix. Skips the state
    /// validation of [`DensityMatrix::new`]; conditioned trajectories use
    /// this because Euler noise steps leave positivity dust beyond the
    /// validated-state tolerance.
    pub fn from_matrix(mat: &CMat, ops: &OperatorSet) -> Result<Self> {
        check_same_shape(&ops.x, mat)?;
        let real = |a: &CMat| -> Result<f64> {
            let mut tr = C64::new(0.0, 0.0);
            for (i, row) in a.outer_iter().enumerate() {
                for (j, aij) in row.iter().enumerate() {
                    tr += aij * mat[(j, i)];
                }
            }
            if tr.im.abs() >= 1e-9 {
                return Err(SimError::StateInvariant {
                    what: "real expectation of Hermitian observable".into(),
                    deviation: tr.im.abs(),
                    time: None,
                });
            }
            Ok(tr.re)
        };
        let mean_x = real(&ops.x)?;
        let mean_p = real(&ops.p)?;
        let mean_x2 = real(&ops.x2)?;
        let mean_p2 = real(&ops.p2)?;
        let sym_xp = real(&ops.sym_xp)?;
        let var_x = mean_x2 - mean_x * mean_x;
        let var_p = mean_p2 - mean_p * mean_p;
        Ok(ObservableReport {
            mean_x,
            mean_p,
            mean_x2,
            mean_p2,
            var_x,
            var_p,
            sym_xp,
            purity: mat.dot(mat).diag().sum().re,
            r_x: 2.0 * mean_x2,
            r_p: 2.0 * mean_p2,
            uncertainty_product: var_x * var_p,
        })
    }

    /// Names of the fields in CSV column order.
    pub const FIELD_NAMES: [&'static str; 11] = [
        "mean_x",
        "mean_p",
        "mean_x2",
        "mean_p2",
        "var_x",
        "var_p",
        "sym_xp",
        "purity",
        "r_x",
        "r_p",
        "uncertainty_product",
    ];

    pub fn fields(&self) -> [f64; 11] {
        [
            self.mean_x,
            self.mean_p,
            self.mean_x2,
            self.mean_p2,
            self.var_x,
            self.var_p,
            self.sym_xp,
            self.purity,
            self.r_x,
            self.r_p,
            self.uncertainty_product,
        ]
    }

    /// Maximum absolute difference over all fields.
    pub fn max_abs_diff(&self, other: &ObservableReport) -> f64 {
        self.fields()
            .iter()
            .zip(other.fields().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max)
    }
}
