//! Dense linear-algebra helpers shared across the crate.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{fp, Scalar};

/// Reciprocal condition number below which an inversion is rejected.
pub const RCOND_MIN: f64 = 1e-12;

/// Maximum absolute deviation from symmetry.
pub fn asymmetry<T: Scalar>(m: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let d = (m[(i, j)] - m[(j, i)]).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

pub fn check_symmetric<T: Scalar>(m: &DMatrix<T>, tol: T) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let dev = asymmetry(m);
    if dev > tol {
        return Err(Error::NotSymmetric(dev.to_subset().unwrap_or(f64::NAN)));
    }
    Ok(())
}

/// (M + Mᵀ)/2
pub fn sym_part<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * fp::<T>(0.5)
}

/// Spectral radius. The QR/Schur iteration is capped because it can stall
/// on matrices with highly degenerate spectra; those fall back to a
/// Gelfand-formula estimate, which approaches ρ from above.
pub fn spectral_radius<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    if let Some(schur) = nalgebra::linalg::Schur::try_new(m.clone(), T::default_epsilon(), 20_000)
    {
        return schur
            .complex_eigenvalues()
            .iter()
            .map(|ev| (ev.re * ev.re + ev.im * ev.im).sqrt())
            .fold(T::zero(), |acc, v| if v > acc { v } else { acc });
    }
    gelfand_radius(m)
}

/// ρ(A) = lim ‖A^k‖^(1/k) evaluated by normalized repeated squaring;
/// after 48 squarings the polynomial over-estimation factor is far below
/// any tolerance used in this crate.
fn gelfand_radius<T: Scalar>(m: &DMatrix<T>) -> T {
    let mut cur = m.clone();
    // invariant: cur = A^(2^j) / exp(s)
    let mut s = T::zero();
    let mut pow = T::one();
    let mut rho = T::zero();
    for _ in 0..48 {
        let nrm = cur.norm();
        if nrm <= T::zero() {
            // nilpotent (or exactly zero) at this power
            return T::zero();
        }
        let log_norm = nrm.ln() + s;
        rho = (log_norm / pow).exp();
        let scaled = &cur * (T::one() / nrm);
        cur = &scaled * &scaled;
        s = log_norm + log_norm;
        pow = pow + pow;
    }
    rho
}

pub fn is_schur_stable<T: Scalar>(m: &DMatrix<T>) -> bool {
    spectral_radius(m) < T::one()
}

/// Positive definiteness of a symmetric matrix via Cholesky.
pub fn is_posdef<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.clone().cholesky().is_some()
}

/// Largest singular value.
pub fn sigma_max<T: Scalar>(m: &DMatrix<T>) -> T {
    m.clone().singular_values().iter().copied().fold(
        T::zero(),
        |acc, v| if v > acc { v } else { acc },
    )
}

/// Smallest singular value.
pub fn sigma_min<T: Scalar>(m: &DMatrix<T>) -> T {
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), |acc, v| if v < acc { v } else { acc })
}

/// Reciprocal condition number from the singular spectrum.
pub fn rcond<T: Scalar>(m: &DMatrix<T>) -> T {
    let smax = sigma_max(m);
    if smax == T::zero() {
        return T::zero();
    }
    sigma_min(m) / smax
}

/// Inverse guarded by a conditioning threshold.
pub fn try_inverse<T: Scalar>(m: &DMatrix<T>, context: &str) -> Result<DMatrix<T>> {
    if rcond(m) < fp(RCOND_MIN) {
        return Err(Error::Singular(context.to_string()));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(context.to_string()))
}

/// Kronecker product.
pub fn kron<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    a.kronecker(b)
}

/// Column-stacked vectorization.
pub fn vec_mat<T: Scalar>(m: &DMatrix<T>) -> nalgebra::DVector<T> {
    nalgebra::DVector::from_column_slice(m.as_slice())
}

/// Solves the discrete Lyapunov equation P = AᵀPA + Q by vectorization,
/// i.e. (I − Aᵀ⊗Aᵀ) vec(P) = vec(Q). Intended for small blocks.
pub fn dlyap_kron<T: Scalar>(a: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    if !a.is_square() || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch(
            "dlyap: A and Q must be square of equal size".into(),
        ));
    }
    if !is_schur_stable(a) {
        return Err(Error::Unstable(
            spectral_radius(a).to_subset().unwrap_or(f64::NAN),
        ));
    }
    let at = a.transpose();
    let sys = DMatrix::<T>::identity(n * n, n * n) - kron(&at, &at);
    let rhs = vec_mat(q);
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("dlyap vectorized system".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(sym_part(&p))
}

/// Solves P = AᵀPA + Q by the doubling recursion
/// Q ← Q + AᵀQA, A ← A², which squares the contraction each step.
/// Used for larger closed-loop solves where vectorization is too costly.
pub fn dlyap_doubling<T: Scalar>(a: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !is_schur_stable(a) {
        return Err(Error::Unstable(
            spectral_radius(a).to_subset().unwrap_or(f64::NAN),
        ));
    }
    let mut acc = q.clone();
    let mut pow = a.clone();
    let tol = fp::<T>(1e-14) * (T::one() + acc.norm());
    for _ in 0..200 {
        let incr = pow.transpose() * &acc * &pow;
        let delta = incr.norm();
        acc += incr;
        pow = &pow * &pow;
        if delta < tol {
            return Ok(sym_part(&acc));
        }
    }
    Err(Error::NonConvergence {
        context: "dlyap doubling".into(),
        iterations: 200,
    })
}

/// Rank test on the controllability matrix [B AB … Aⁿ⁻¹B].
pub fn is_controllable<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> bool {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::<T>::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * &block;
    }
    let eps = fp::<T>(1e-10) * (T::one() + sigma_max(&ctrb));
    ctrb.rank(eps) == n
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn spectral_radius_of_rotation_scaled() {
        // 0.5 * rotation has both eigenvalues at modulus 0.5
        let m = dmatrix![0.0, -0.5; 0.5, 0.0];
        assert!((spectral_radius(&m) - 0.5f64).abs() < 1e-12);
    }

    #[test]
    fn dlyap_scalar_geometric_series() {
        // p = 0.25 p + 1 => p = 4/3
        let a = dmatrix![0.5];
        let q = dmatrix![1.0];
        let p = dlyap_kron(&a, &q).unwrap();
        assert!((p[(0, 0)] - 4.0 / 3.0f64).abs() < 1e-12);
        let p2 = dlyap_doubling(&a, &q).unwrap();
        assert!((p2[(0, 0)] - 4.0 / 3.0f64).abs() < 1e-12);
    }

    #[test]
    fn dlyap_rejects_unstable() {
        let a = dmatrix![1.1];
        let q = dmatrix![1.0];
        assert!(dlyap_kron(&a, &q).is_err());
    }

    #[test]
    fn controllability_detects_rank_deficiency() {
        let a = dmatrix![0.5, 0.0; 0.0, 0.5];
        let b_good = dmatrix![1.0; 1.0];
        // repeated eigenvalue with a single input: not controllable
        assert!(!is_controllable(&a, &b_good));
        let a2 = dmatrix![0.5, 1.0; 0.0, 0.5];
        assert!(is_controllable(&a2, &b_good));
    }
}
