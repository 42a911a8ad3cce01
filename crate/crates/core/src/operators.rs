//! Operator algebra of the truncated oscillator Hilbert space.
//!
//! Everything here is a plain dense matrix in the Fock (number) basis
//! `|0>, ..., |n_levels - 1>`. The ladder matrix elements are
//! `<m|c|n> = sqrt(n) delta_{m,n-1}`, the quadratures are
//! `x = (c^dag + c)/sqrt(2)` and `p = i (c^dag - c)/sqrt(2)`, and the
//! Hamiltonian is `H = omega (c^dag c + 1/2)`.
//!
//! Truncation artifacts are confined to the top Fock level: identities such
//! as `[x, p] = i` hold on the diagonal for `n < n_levels - 1` only.

use ndarray::prelude::*;

use crate::error::{Result, SimError};
use crate::{C64, CMat};

/// Number of retained Fock states. At least two.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct FockDim(usize);

impl FockDim {
    pub fn new(n_levels: usize) -> Result<Self> {
        if n_levels < 2 {
            return Err(SimError::invalid(format!(
                "Fock dimension must be >= 2, got {n_levels}"
            )));
        }
        Ok(FockDim(n_levels))
    }

    pub fn n_levels(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for FockDim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Annihilation operator c.
pub fn annihilation(dim: FockDim) -> CMat {
    let n = dim.n_levels();
    let mut c = CMat::zeros((n, n));
    for k in 1..n {
        c[(k - 1, k)] = C64::new((k as f64).sqrt(), 0.0);
    }
    c
}

/// Creation operator c^dag, the exact conjugate transpose of [`annihilation`].
pub fn creation(dim: FockDim) -> CMat {
    dagger(&annihilation(dim))
}

/// Number operator c^dag c, diagonal (0, 1, ..., n_levels - 1).
pub fn number(dim: FockDim) -> CMat {
    let n = dim.n_levels();
    CMat::from_diag(&Array1::from_iter(
        (0..n).map(|k| C64::new(k as f64, 0.0)),
    ))
}

/// Quadrature pair (x, p). Both Hermitian.
pub fn quadratures(dim: FockDim) -> (CMat, CMat) {
    let c = annihilation(dim);
    let cd = dagger(&c);
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let i = C64::i();
    let x = (&cd + &c) * s;
    let p = (&cd - &c) * (i * s);
    (x, p)
}

/// Oscillator Hamiltonian omega (c^dag c + 1/2). Rejects omega <= 0.
pub fn hamiltonian(dim: FockDim, omega: f64) -> Result<CMat> {
    if omega <= 0.0 {
        return Err(SimError::invalid(format!(
            "oscillator frequency must be positive, got {omega}"
        )));
    }
    let n = dim.n_levels();
    Ok(CMat::from_diag(&Array1::from_iter(
        (0..n).map(|k| C64::new(omega * (k as f64 + 0.5), 0.0)),
    )))
}

/// Conjugate transpose.
pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

/// Commutator [a, b] = ab - ba.
pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a.dot(b) - b.dot(a)
}

/// Lindblad dissipator D[L] rho = L rho L^dag - (L^dag L rho + rho L^dag L)/2.
///
/// The output is trace-free for any L and unit-trace rho.
pub fn dissipator(l: &CMat, rho: &CMat) -> Result<CMat> {
    check_same_shape(l, rho)?;
    let ld = dagger(l);
    let ldl = ld.dot(l);
    let half = C64::new(0.5, 0.0);
    Ok(l.dot(rho).dot(&ld) - (ldl.dot(rho) + rho.dot(&ldl)) * half)
}

pub(crate) fn check_same_shape(a: &CMat, b: &CMat) -> Result<()> {
    if a.dim() != b.dim() || a.nrows() != a.ncols() {
        return Err(SimError::ShapeMismatch {
            expected: a.nrows(),
            got_rows: b.nrows(),
            got_cols: b.ncols(),
        });
    }
    Ok(())
}

/// The full operator algebra for one Fock dimension, constructed once and
/// shared immutably afterwards.
#[derive(Clone, Debug)]
pub struct OperatorSet {
    pub dim: FockDim,
    pub c: CMat,
    pub cdag: CMat,
    pub num: CMat,
    pub x: CMat,
    pub p: CMat,
    pub x2: CMat,
    pub p2: CMat,
    /// x p + p x
    pub sym_xp: CMat,
}

impl OperatorSet {
    pub fn new(dim: FockDim) -> Self {
        let c = annihilation(dim);
        let cdag = dagger(&c);
        let num = number(dim);
        let (x, p) = quadratures(dim);
        let x2 = x.dot(&x);
        let p2 = p.dot(&p);
        let sym_xp = x.dot(&p) + p.dot(&x);
        OperatorSet {
            dim,
            c,
            cdag,
            num,
            x,
            p,
            x2,
            p2,
            sym_xp,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.dim.n_levels()
    }

    pub fn identity(&self) -> CMat {
        CMat::eye(self.n_levels())
    }

    pub fn hamiltonian(&self, omega: f64) -> Result<CMat> {
        hamiltonian(self.dim, omega)
    }
}

/// Maximum element deviation of a matrix from hermiticity.
pub fn hermiticity_deviation(a: &CMat) -> f64 {
    let ad = dagger(a);
    (a - &ad)
        .iter()
        .map(|z| z.norm())
        .fold(0.0_f64, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dim(n: usize) -> FockDim {
        FockDim::new(n).unwrap()
    }

    #[test]
    fn fock_dim_rejects_small() {
        assert!(FockDim::new(1).is_err());
        assert!(FockDim::new(0).is_err());
        assert!(FockDim::new(2).is_ok());
    }

    #[test]
    fn annihilation_dim2() {
        let c = annihilation(dim(2));
        assert_abs_diff_eq!(c[(0, 1)].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[(0, 0)].norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[(1, 0)].norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[(1, 1)].norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn annihilation_dim3_sqrt2() {
        let c = annihilation(dim(3));
        assert_abs_diff_eq!(c[(1, 2)].re, 2.0_f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn number_operator_diagonal() {
        let d = dim(6);
        let n_direct = number(d);
        let n_from_ladder = creation(d).dot(&annihilation(d));
        for k in 0..6 {
            assert_abs_diff_eq!(n_direct[(k, k)].re, k as f64, epsilon = 1e-14);
            assert_abs_diff_eq!(
                (n_from_ladder[(k, k)] - n_direct[(k, k)]).norm(),
                0.0,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn creation_is_exact_adjoint() {
        let d = dim(12);
        let c = annihilation(d);
        let cd = creation(d);
        for ((i, j), z) in c.indexed_iter() {
            assert_eq!(cd[(j, i)], z.conj());
        }
    }

    #[test]
    fn quadrature_x_dim2() {
        let (x, _) = quadratures(dim(2));
        let v = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(x[(0, 1)].re, v, epsilon = 1e-15);
        assert_abs_diff_eq!(x[(1, 0)].re, v, epsilon = 1e-15);
    }

    #[test]
    fn quadratures_hermitian() {
        let (x, p) = quadratures(dim(20));
        assert!(hermiticity_deviation(&x) < 1e-12);
        assert!(hermiticity_deviation(&p) < 1e-12);
        assert!(hermiticity_deviation(&hamiltonian(dim(20), 1.3).unwrap()) < 1e-12);
    }

    #[test]
    fn interior_commutator_is_i() {
        // [x, p] = i I except in the bottom-right truncation corner.
        let n = 15;
        let (x, p) = quadratures(dim(n));
        let comm = commutator(&x, &p);
        for k in 0..n - 1 {
            assert_abs_diff_eq!((comm[(k, k)] - C64::i()).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn quadrature_sum_of_squares_interior() {
        // x^2 + p^2 = 2 c^dag c + I on interior indices.
        let n = 10;
        let d = dim(n);
        let (x, p) = quadratures(d);
        let lhs = x.dot(&x) + p.dot(&p);
        let rhs = number(d) * C64::new(2.0, 0.0) + CMat::eye(n);
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                assert_abs_diff_eq!((lhs[(i, j)] - rhs[(i, j)]).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn hamiltonian_spectra() {
        let h = hamiltonian(dim(3), 1.0).unwrap();
        for (k, want) in [0.5, 1.5, 2.5].iter().enumerate() {
            assert_abs_diff_eq!(h[(k, k)].re, *want, epsilon = 1e-14);
        }
        let h2 = hamiltonian(dim(2), 2.0).unwrap();
        assert_abs_diff_eq!(h2[(0, 0)].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(h2[(1, 1)].re, 3.0, epsilon = 1e-14);
        assert!(hamiltonian(dim(2), 0.0).is_err());
        assert!(hamiltonian(dim(2), -1.0).is_err());
    }

    #[test]
    fn hamiltonian_equals_quadrature_form_interior() {
        let n = 12;
        let d = dim(n);
        let h = hamiltonian(d, 1.0).unwrap();
        let (x, p) = quadratures(d);
        let hq = (x.dot(&x) + p.dot(&p)) * C64::new(0.5, 0.0);
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                assert_abs_diff_eq!((h[(i, j)] - hq[(i, j)]).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dissipator_vacuum_examples() {
        let d = dim(4);
        let c = annihilation(d);
        let mut vac = CMat::zeros((4, 4));
        vac[(0, 0)] = C64::new(1.0, 0.0);

        // c annihilates the vacuum.
        let dc = dissipator(&c, &vac).unwrap();
        assert!(dc.iter().all(|z| z.norm() < 1e-14));

        // D[c^dag] |0><0| = |1><1| - |0><0|.
        let dcd = dissipator(&creation(d), &vac).unwrap();
        assert_abs_diff_eq!(dcd[(0, 0)].re, -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(dcd[(1, 1)].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            dcd.iter().map(|z| z.norm()).sum::<f64>(),
            2.0,
            epsilon = 1e-13
        );
    }

    #[test]
    fn dissipator_shape_mismatch() {
        let l = annihilation(dim(3));
        let rho = CMat::eye(4);
        assert!(matches!(
            dissipator(&l, &rho),
            Err(SimError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn dissipator_trace_free_random() {
        // 100 random (L, rho) pairs with Hermitian-normalized rho.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 8;
        for _ in 0..100 {
            let l = CMat::from_shape_fn((n, n), |_| {
                C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let a = CMat::from_shape_fn((n, n), |_| {
                C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let mut rho = a.dot(&dagger(&a));
            let tr: C64 = rho.diag().sum();
            rho.mapv_inplace(|z| z / tr);
            let out = dissipator(&l, &rho).unwrap();
            let tr_out: C64 = out.diag().sum();
            assert!(tr_out.norm() < 1e-10, "trace {:.3e}", tr_out.norm());
        }
    }
}
