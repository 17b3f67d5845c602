//! Two-block "patterned" matrices: identical diagonal blocks and identical
//! off-diagonal blocks,
//!
//! ```text
//!     N = I_r ⊗ (A − B) + 𝟙_r 𝟙_rᵀ ⊗ B,
//! ```
//!
//! where `A` is the common diagonal block and `B` the common off-diagonal
//! block. The family is closed under products, inverses and discrete
//! Lyapunov solves, which lets every r·n-sized computation collapse to two
//! n-sized ones: one on the 𝟙-aligned eigenspace (block `A + (r−1)B`) and
//! one on its orthogonal complement (block `A − B`).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::{fp, Scalar};

/// Relative tolerance for the symmetry check in [`PatternedMatrix::new`].
const SYM_TOL: f64 = 1e-8;

/// A block matrix with `r × r` blocks of size `n × n`, all diagonal blocks
/// equal and all off-diagonal blocks equal.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternedMatrix<T: Scalar> {
    r: usize,
    /// Common diagonal block.
    diag: DMatrix<T>,
    /// Common off-diagonal block.
    off: DMatrix<T>,
}

impl<T: Scalar> PatternedMatrix<T> {
    /// Builds a patterned matrix from symmetric diagonal/off-diagonal blocks.
    pub fn new(r: usize, diag: DMatrix<T>, off: DMatrix<T>) -> Result<Self> {
        if r < 2 {
            return Err(Error::InvalidInput(format!(
                "patterned matrix needs r >= 2, got {r}"
            )));
        }
        if diag.shape() != off.shape() || !diag.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "blocks must be square and equal-sized, got {:?} and {:?}",
                diag.shape(),
                off.shape()
            )));
        }
        let tol = fp::<T>(SYM_TOL) * (T::one() + diag.norm() + off.norm());
        linalg::check_symmetric(&diag, tol)?;
        linalg::check_symmetric(&off, tol)?;
        Ok(Self { r, diag, off })
    }

    /// Builds from blocks without the symmetry requirement. Products of
    /// patterned matrices and lifted feedback gains live in this
    /// generalized form.
    pub fn from_blocks(r: usize, diag: DMatrix<T>, off: DMatrix<T>) -> Result<Self> {
        if r < 2 {
            return Err(Error::InvalidInput(format!(
                "patterned matrix needs r >= 2, got {r}"
            )));
        }
        if diag.shape() != off.shape() || !diag.is_square() {
            return Err(Error::DimensionMismatch(
                "blocks must be square and equal-sized".into(),
            ));
        }
        Ok(Self { r, diag, off })
    }

    /// Extracts the patterned structure from a dense matrix, failing if any
    /// block deviates from the common blocks by more than `tol` (max-abs).
    pub fn from_dense(m: &DMatrix<T>, r: usize, tol: T) -> Result<Self> {
        let (p, residual) = Self::project_dense(m, r)?;
        if residual > tol {
            return Err(Error::StructureViolation(
                residual.to_subset().unwrap_or(f64::NAN),
            ));
        }
        Ok(p)
    }

    /// Projects a dense matrix onto the patterned subspace by averaging the
    /// diagonal and off-diagonal blocks; returns the projection together
    /// with the max-abs residual.
    pub fn project_dense(m: &DMatrix<T>, r: usize) -> Result<(Self, T)> {
        if r < 2 {
            return Err(Error::InvalidInput(format!(
                "patterned matrix needs r >= 2, got {r}"
            )));
        }
        if !m.is_square() || m.nrows() % r != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix cannot be split into {r}x{r} blocks",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows() / r;
        let mut diag = DMatrix::<T>::zeros(n, n);
        let mut off = DMatrix::<T>::zeros(n, n);
        for i in 0..r {
            for j in 0..r {
                let block = m.view((i * n, j * n), (n, n));
                if i == j {
                    diag += block;
                } else {
                    off += block;
                }
            }
        }
        diag /= fp::<T>(r as f64);
        off /= fp::<T>((r * (r - 1)) as f64);
        let p = Self {
            r,
            diag,
            off,
        };
        let mut residual = T::zero();
        for i in 0..r {
            for j in 0..r {
                let target = if i == j { &p.diag } else { &p.off };
                let dev = (m.view((i * n, j * n), (n, n)) - target).abs().max();
                if dev > residual {
                    residual = dev;
                }
            }
        }
        Ok((p, residual))
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Block size n.
    pub fn block_size(&self) -> usize {
        self.diag.nrows()
    }

    /// Common diagonal block (the `A` of the group definition).
    pub fn diag_block(&self) -> &DMatrix<T> {
        &self.diag
    }

    /// Common off-diagonal block (the `B` of the group definition).
    pub fn off_block(&self) -> &DMatrix<T> {
        &self.off
    }

    /// Block on the 𝟙-aligned eigenspace: `A + (r−1)B`.
    pub fn aligned_block(&self) -> DMatrix<T> {
        &self.diag + &self.off * fp::<T>((self.r - 1) as f64)
    }

    /// Block on the 𝟙-orthogonal eigenspace: `A − B`.
    pub fn decoupled_block(&self) -> DMatrix<T> {
        &self.diag - &self.off
    }

    /// Materializes the full `rn × rn` matrix.
    pub fn to_dense(&self) -> DMatrix<T> {
        let n = self.block_size();
        let mut out = DMatrix::<T>::zeros(self.r * n, self.r * n);
        for i in 0..self.r {
            for j in 0..self.r {
                out.view_mut((i * n, j * n), (n, n))
                    .copy_from(if i == j { &self.diag } else { &self.off });
            }
        }
        out
    }

    /// Determinant via the eigenspace split:
    /// det(N) = det(A−B)^{r−1} · det(A+(r−1)B).
    pub fn det(&self) -> T {
        let dec = self.decoupled_block().determinant();
        let ali = self.aligned_block().determinant();
        dec.powi(self.r as i32 - 1) * ali
    }

    /// Positive definiteness: both eigenspace blocks must be PD.
    pub fn is_posdef(&self) -> bool {
        linalg::is_posdef(&linalg::sym_part(&self.decoupled_block()))
            && linalg::is_posdef(&linalg::sym_part(&self.aligned_block()))
    }

    /// Structured inverse:
    /// F = (A − (r−1)B(A+(r−2)B)⁻¹B)⁻¹, G = (A+(r−1)B)⁻¹ B (A−B)⁻¹,
    /// giving N⁻¹ with diagonal block F and off-diagonal block −G.
    pub fn inverse(&self) -> Result<Self> {
        let r = fp::<T>(self.r as f64);
        let a = &self.diag;
        let b = &self.off;
        let inner = a + b * (r - fp::<T>(2.0));
        let inner_inv = linalg::try_inverse(&inner, "A + (r-2)B")?;
        let bracket = a - b * inner_inv * b * (r - T::one());
        let f = linalg::try_inverse(&bracket, "F-defining bracket")?;
        let aligned_inv = linalg::try_inverse(&self.aligned_block(), "A + (r-1)B")?;
        let dec_inv = linalg::try_inverse(&self.decoupled_block(), "A - B")?;
        let g = aligned_inv * b * dec_inv;
        Self::from_blocks(self.r, f, -g)
    }

    /// Structured product. The resulting blocks are generally not symmetric.
    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        if self.r != rhs.r || self.block_size() != rhs.block_size() {
            return Err(Error::DimensionMismatch(
                "patterned product requires matching r and block size".into(),
            ));
        }
        let r = fp::<T>(self.r as f64);
        let ab = self.decoupled_block(); // A − B
        let cd = rhs.decoupled_block(); // C − D
        let dec = &ab * &cd; // (A−B)(C−D)
        let off = self.off_block() * &cd + ab * rhs.off_block()
            + self.off_block() * rhs.off_block() * r;
        Self::from_blocks(self.r, &dec + &off, off)
    }

    /// Solves P = AclᵀP Acl + Q with patterned Acl and Q by decoupling into
    /// two n×n discrete Lyapunov equations on the eigenspace blocks.
    pub fn lyapunov_solve(acl: &Self, qc: &Self) -> Result<Self> {
        if acl.r != qc.r || acl.block_size() != qc.block_size() {
            return Err(Error::DimensionMismatch(
                "lyapunov_solve requires matching r and block size".into(),
            ));
        }
        if !qc.is_posdef() {
            return Err(Error::NotPositiveDefinite("Lyapunov Q term".into()));
        }
        let p_dec = linalg::dlyap_kron(&acl.decoupled_block(), &qc.decoupled_block())?;
        let p_ali = linalg::dlyap_kron(&acl.aligned_block(), &qc.aligned_block())?;
        let off = (&p_ali - &p_dec) / fp::<T>(acl.r as f64);
        let diag = &p_dec + &off;
        Self::from_blocks(acl.r, diag, off)
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            r: self.r,
            diag: &self.diag * s,
            off: &self.off * s,
        }
    }
}

/// Averages the r×r grid of equally-sized (possibly non-square) blocks of
/// `m` into a (diagonal-block, off-block) pair, returning the max-abs
/// projection residual alongside. Used for rectangular patterned arrays
/// such as lifted gains and cross blocks, which [`PatternedMatrix`] (square
/// blocks only) does not cover.
pub fn pattern_project<T: Scalar>(
    m: &DMatrix<T>,
    r: usize,
) -> Result<(DMatrix<T>, DMatrix<T>, T)> {
    if r < 2 || m.nrows() % r != 0 || m.ncols() % r != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix cannot be split into an {r}x{r} block grid",
            m.nrows(),
            m.ncols()
        )));
    }
    let (bh, bw) = (m.nrows() / r, m.ncols() / r);
    let mut diag = DMatrix::<T>::zeros(bh, bw);
    let mut off = DMatrix::<T>::zeros(bh, bw);
    for i in 0..r {
        for j in 0..r {
            let block = m.view((i * bh, j * bw), (bh, bw));
            if i == j {
                diag += block;
            } else {
                off += block;
            }
        }
    }
    diag /= fp::<T>(r as f64);
    off /= fp::<T>((r * (r - 1)) as f64);
    let mut residual = T::zero();
    for i in 0..r {
        for j in 0..r {
            let target = if i == j { &diag } else { &off };
            let dev = (m.view((i * bh, j * bw), (bh, bw)) - target).abs().max();
            if dev > residual {
                residual = dev;
            }
        }
    }
    Ok((diag, off, residual))
}

/// Tiles a (diagonal-block, off-block) pair into the dense r×r block grid.
pub fn pattern_expand<T: Scalar>(r: usize, diag: &DMatrix<T>, off: &DMatrix<T>) -> DMatrix<T> {
    let (bh, bw) = diag.shape();
    let mut out = DMatrix::<T>::zeros(r * bh, r * bw);
    for i in 0..r {
        for j in 0..r {
            out.view_mut((i * bh, j * bw), (bh, bw))
                .copy_from(if i == j { diag } else { off });
        }
    }
    out
}

impl<T: Scalar> std::ops::Add for &PatternedMatrix<T> {
    type Output = PatternedMatrix<T>;
    fn add(self, rhs: Self) -> PatternedMatrix<T> {
        assert_eq!(self.r, rhs.r);
        PatternedMatrix {
            r: self.r,
            diag: &self.diag + &rhs.diag,
            off: &self.off + &rhs.off,
        }
    }
}

impl<T: Scalar> std::ops::Sub for &PatternedMatrix<T> {
    type Output = PatternedMatrix<T>;
    fn sub(self, rhs: Self) -> PatternedMatrix<T> {
        assert_eq!(self.r, rhs.r);
        PatternedMatrix {
            r: self.r,
            diag: &self.diag - &rhs.diag,
            off: &self.off - &rhs.off,
        }
    }
}
