//! Dense matrix core: SVD, Moore–Penrose pseudoinverse and the structure of
//! the pseudoinverse of a product.
//!
//! Everything is generic over [`Scalar`], implemented for `f64` and
//! [`Complex64`]. Protocol matrices are real; quantum operators are complex.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration. It is slower than
//! bidiagonalization for large inputs but gives small singular values with
//! high relative accuracy, which is what rank decisions in a pseudoinverse
//! depend on.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Real or complex scalar with `f64` precision.
pub trait Scalar: nalgebra::ComplexField<RealField = f64> + Copy {
    /// Draws a standard Gaussian (for complex scalars, real and imaginary
    /// parts are independent standard normals).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for Complex64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }
}

/// Thin singular value decomposition `x = u · diag(s) · v*`.
#[derive(Debug, Clone)]
pub struct SvdFactorization<T: Scalar> {
    pub u: DMatrix<T>,
    /// Nonincreasing, nonnegative.
    pub singular_values: DVector<f64>,
    pub v: DMatrix<T>,
    /// Absolute cutoff below which a singular value counts as zero, using the
    /// default relative tolerance `max(rows, cols) · ε`.
    pub rank_tolerance: f64,
}

impl<T: Scalar> SvdFactorization<T> {
    pub fn largest(&self) -> f64 {
        self.singular_values.get(0).copied().unwrap_or(0.0)
    }

    /// Absolute cutoff for a relative tolerance (`None` gives the default).
    pub fn cutoff(&self, rtol: Option<f64>) -> f64 {
        match rtol {
            Some(r) => r * self.largest(),
            None => self.rank_tolerance,
        }
    }

    /// Numerical rank under the given relative tolerance.
    pub fn rank(&self, rtol: Option<f64>) -> usize {
        let cut = self.cutoff(rtol);
        self.singular_values.iter().filter(|&&s| s > cut).count()
    }

    pub fn reconstruct(&self) -> DMatrix<T> {
        let mut us = self.u.clone();
        for (k, &s) in self.singular_values.iter().enumerate() {
            us.column_mut(k).scale_mut(s);
        }
        us * self.v.adjoint()
    }

    /// `U_r U_r*`, the orthogonal projector onto the column space.
    pub fn range_projector(&self, rtol: Option<f64>) -> DMatrix<T> {
        let r = self.rank(rtol);
        let ur = self.u.columns(0, r);
        ur * ur.adjoint()
    }

    /// `V_r V_r*`, the orthogonal projector onto the row space.
    pub fn corange_projector(&self, rtol: Option<f64>) -> DMatrix<T> {
        let r = self.rank(rtol);
        let vr = self.v.columns(0, r);
        vr * vr.adjoint()
    }

    /// `V · diag(1/s) · U*` keeping singular values above the cutoff.
    pub fn pseudoinverse(&self, rtol: Option<f64>) -> DMatrix<T> {
        let r = self.rank(rtol);
        let mut vs = self.v.columns(0, r).into_owned();
        for k in 0..r {
            vs.column_mut(k).unscale_mut(self.singular_values[k]);
        }
        vs * self.u.columns(0, r).adjoint()
    }
}

fn check_input<T: Scalar>(x: &DMatrix<T>) -> Result<()> {
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::Empty { rows, cols });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { rows, cols });
    }
    Ok(())
}

/// Default relative rank tolerance `max(rows, cols) · ε`.
pub fn default_rtol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Thin SVD of a finite, nonempty matrix.
pub fn svd<T: Scalar>(x: &DMatrix<T>) -> Result<SvdFactorization<T>> {
    check_input(x)?;
    let (rows, cols) = x.shape();
    if rows >= cols {
        svd_tall(x.clone())
    } else {
        let t = svd_tall(x.adjoint())?;
        Ok(SvdFactorization {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
            rank_tolerance: t.rank_tolerance,
        })
    }
}

fn svd_tall<T: Scalar>(mut a: DMatrix<T>) -> Result<SvdFactorization<T>> {
    let (m, n) = a.shape();
    let mut v = DMatrix::<T>::identity(n, n);
    let tol = f64::EPSILON * m as f64;

    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for j in 1..n {
            for i in 0..j {
                if rotate_pair(a.as_mut_slice(), m, i, j, tol, v.as_mut_slice(), n) {
                    rotated = true;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }

    let norms: Vec<f64> = (0..n).map(|k| a.column(k).norm()).collect();
    if !converged {
        let max = norms.iter().cloned().fold(0.0, f64::max);
        let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::SvdNoConvergence {
            rows: m,
            cols: n,
            sweeps,
            condition: max / min,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| norms[q].total_cmp(&norms[p]));

    let mut u = DMatrix::<T>::zeros(m, n);
    let mut vs = DMatrix::<T>::zeros(n, n);
    let mut s = DVector::<f64>::zeros(n);
    let mut missing = Vec::new();
    for (k, &src) in order.iter().enumerate() {
        s[k] = norms[src];
        vs.set_column(k, &v.column(src));
        if norms[src] > f64::MIN_POSITIVE * 1e16 {
            u.set_column(k, &a.column(src).unscale(norms[src]));
        } else {
            s[k] = 0.0;
            missing.push(k);
        }
    }
    complete_orthonormal(&mut u, &missing);

    let rank_tolerance = default_rtol(m, n) * s[0];
    Ok(SvdFactorization {
        u,
        singular_values: s,
        v: vs,
        rank_tolerance,
    })
}

/// One Jacobi rotation on columns `i < j` of the column-major `a` (m rows),
/// mirrored on `v` (n rows). Returns whether a rotation was applied.
fn rotate_pair<T: Scalar>(
    a: &mut [T],
    m: usize,
    i: usize,
    j: usize,
    tol: f64,
    v: &mut [T],
    n: usize,
) -> bool {
    let (left, right) = a.split_at_mut(j * m);
    let ci = &mut left[i * m..(i + 1) * m];
    let cj = &mut right[..m];

    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = T::zero();
    for (x, y) in ci.iter().zip(cj.iter()) {
        alpha += x.modulus_squared();
        beta += y.modulus_squared();
        gamma += x.conjugate() * *y;
    }
    let g = gamma.modulus();
    if g == 0.0 || g <= tol * (alpha * beta).sqrt() {
        return false;
    }

    // rotate y by the conjugate phase of gamma so the pair has a real overlap
    let phase_conj = gamma.conjugate().unscale(g);
    let zeta = (beta - alpha) / (2.0 * g);
    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = c * t;

    let apply = |ci: &mut [T], cj: &mut [T]| {
        for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
            let xv = *x;
            let yv = *y * phase_conj;
            *x = xv.scale(c) - yv.scale(s);
            *y = xv.scale(s) + yv.scale(c);
        }
    };
    apply(ci, cj);

    let (vl, vr) = v.split_at_mut(j * n);
    apply(&mut vl[i * n..(i + 1) * n], &mut vr[..n]);
    true
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every
/// other column (two-pass Gram–Schmidt against the standard basis).
fn complete_orthonormal<T: Scalar>(u: &mut DMatrix<T>, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = u.nrows();
    let mut filled: Vec<usize> = (0..u.ncols()).filter(|k| !missing.contains(k)).collect();
    let mut candidate = 0;
    for &k in missing {
        while candidate < m {
            let mut w = DVector::<T>::zeros(m);
            w[candidate] = T::one();
            candidate += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let col = u.column(f);
                    let proj = col.dotc(&w);
                    w -= col * proj;
                }
            }
            let nw = w.norm();
            if nw > 1e-8 {
                u.set_column(k, &w.unscale(nw));
                filled.push(k);
                break;
            }
        }
    }
}

/// Moore–Penrose pseudoinverse. `rtol` is relative to the largest singular
/// value; `None` uses [`default_rtol`].
pub fn pinv<T: Scalar>(x: &DMatrix<T>, rtol: Option<f64>) -> Result<DMatrix<T>> {
    if let Some(r) = rtol {
        if !(r > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rtol must be positive, got {r}"
            )));
        }
    }
    Ok(svd(x)?.pseudoinverse(rtol))
}

/// The ridge form `(X*X + δ𝟙)⁻¹ X*` (or `X*(XX* + δ𝟙)⁻¹` for wide `X`),
/// whose `δ → 0` limit is the pseudoinverse.
pub fn ridge_pinv<T: Scalar>(x: &DMatrix<T>, delta: f64) -> Result<DMatrix<T>> {
    check_input(x)?;
    let xh = x.adjoint();
    let (rows, cols) = x.shape();
    let singular = || Error::InvalidArgument("ridge system is singular; increase delta".into());
    if rows >= cols {
        let gram = &xh * x + DMatrix::<T>::identity(cols, cols).scale(delta);
        gram.lu().solve(&xh).ok_or_else(singular)
    } else {
        let gram = x * &xh + DMatrix::<T>::identity(rows, rows).scale(delta);
        // X*(XX*+δ)⁻¹ = ((XX*+δ)⁻¹ X)*, the Gram matrix being Hermitian
        Ok(gram.lu().solve(x).ok_or_else(singular)?.adjoint())
    }
}

/// Hilbert–Schmidt (Frobenius) norm `√tr(x*x)`.
pub fn hs_norm<T: Scalar>(x: &DMatrix<T>) -> f64 {
    x.iter().map(|v| v.modulus_squared()).sum::<f64>().sqrt()
}

fn rel(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Residuals of the four Penrose conditions, each relative to the natural
/// scale of the quantity it compares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenroseResiduals {
    /// `‖XX⁺X − X‖ / ‖X‖`
    pub c1: f64,
    /// `‖X⁺XX⁺ − X⁺‖ / ‖X⁺‖`
    pub c2: f64,
    /// `‖(XX⁺)* − XX⁺‖ / ‖XX⁺‖`
    pub c3: f64,
    /// `‖(X⁺X)* − X⁺X‖ / ‖X⁺X‖`
    pub c4: f64,
}

impl PenroseResiduals {
    pub fn max(&self) -> f64 {
        self.c1.max(self.c2).max(self.c3).max(self.c4)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.c1, self.c2, self.c3, self.c4]
    }
}

pub fn penrose_check<T: Scalar>(x: &DMatrix<T>, xp: &DMatrix<T>) -> Result<PenroseResiduals> {
    if xp.nrows() != x.ncols() || xp.ncols() != x.nrows() {
        return Err(Error::ShapeMismatch {
            op: "penrose_check",
            left: x.shape(),
            right: xp.shape(),
        });
    }
    let xxp = x * xp;
    let xpx = xp * x;
    let nx = hs_norm(x);
    let nxp = hs_norm(xp);
    Ok(PenroseResiduals {
        c1: rel(hs_norm(&(&xxp * x - x)), nx),
        c2: rel(hs_norm(&(&xpx * xp - xp)), nxp),
        c3: rel(hs_norm(&(xxp.adjoint() - &xxp)), hs_norm(&xxp)),
        c4: rel(hs_norm(&(xpx.adjoint() - &xpx)), hs_norm(&xpx)),
    })
}

/// Residuals of the standard pseudoinverse identities:
///
/// 1. `X⁺ = (X*X)⁺X* = X*(XX*)⁺`
/// 2. `(X*)⁺ = (X⁺)*`
/// 3. `(X⁺)⁺ = X`
/// 4. `(X*X)⁺ = X⁺(X*)⁺` and `(XX*)⁺ = (X*)⁺X⁺`
/// 5. `R(X⁺) = R(X⁺X) = R(X*)` and `N(X⁺) = N(XX⁺) = N(X*)`
pub fn pinv_property_residuals<T: Scalar>(x: &DMatrix<T>, rtol: Option<f64>) -> Result<[f64; 5]> {
    let xh = x.adjoint();
    let xp = pinv(x, rtol)?;
    let xhp = pinv(&xh, rtol)?;
    let xhx = &xh * x;
    let xxh = x * &xh;
    let xhx_p = pinv(&xhx, rtol)?;
    let xxh_p = pinv(&xxh, rtol)?;
    let nxp = hs_norm(&xp);
    let nx = hs_norm(x);

    let p1 = rel(hs_norm(&(&xhx_p * &xh - &xp)), nxp).max(rel(hs_norm(&(&xh * &xxh_p - &xp)), nxp));
    let p2 = rel(hs_norm(&(&xhp - xp.adjoint())), nxp);
    let p3 = rel(hs_norm(&(pinv(&xp, rtol)? - x)), nx);
    let p4 = rel(hs_norm(&(&xp * &xhp - &xhx_p)), hs_norm(&xhx_p))
        .max(rel(hs_norm(&(&xhp * &xp - &xxh_p)), hs_norm(&xxh_p)));

    // ranges via projector identities, null spaces via annihilation of the
    // complement of R(X)
    let xpx = &xp * x;
    let xxp = x * &xp;
    let comp = DMatrix::<T>::identity(x.nrows(), x.nrows()) - &xxp;
    let rank_eq = {
        let r1 = svd(&xp)?.rank(rtol);
        let r2 = svd(x)?.rank(rtol);
        if r1 == r2 {
            0.0
        } else {
            1.0
        }
    };
    let p5 = [
        rel(hs_norm(&(&xpx * &xp - &xp)), nxp),
        rel(hs_norm(&(&xpx * &xh - &xh)), nx),
        rel(hs_norm(&(&xp * &comp)), nxp),
        rel(hs_norm(&(&xh * &comp)), nx),
        rank_eq,
    ]
    .into_iter()
    .fold(0.0, f64::max);

    Ok([p1, p2, p3, p4, p5])
}

fn check_inner<T: Scalar>(op: &'static str, x: &DMatrix<T>, y: &DMatrix<T>) -> Result<()> {
    if x.ncols() != y.nrows() {
        return Err(Error::ShapeMismatch {
            op,
            left: x.shape(),
            right: y.shape(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseOrder {
    pub holds: bool,
    /// `‖(XY)⁺ − Y⁺X⁺‖ / ‖(XY)⁺‖`
    pub residual: f64,
}

/// Tests the reverse-order law `(XY)⁺ = Y⁺X⁺`.
pub fn reverse_order_holds<T: Scalar>(
    x: &DMatrix<T>,
    y: &DMatrix<T>,
    tol: f64,
) -> Result<ReverseOrder> {
    check_inner("reverse_order_holds", x, y)?;
    let xy_p = pinv(&(x * y), None)?;
    let yp_xp = pinv(y, None)? * pinv(x, None)?;
    let residual = rel(hs_norm(&(&xy_p - yp_xp)), hs_norm(&xy_p));
    Ok(ReverseOrder {
        holds: residual <= tol,
        residual,
    })
}

/// Galperin–Waksman representation `(XY)⁺ = Y⁺(h + g)X⁺`.
///
/// `h = (X⁺X YY⁺)⁺` is a skew projector; `g` is the unique correction with
/// `YY⁺ g X⁺X = g`, orthogonal to `h` and of minimal effect among all
/// admissible corrections.
#[derive(Debug, Clone)]
pub struct GwDecomposition<T: Scalar> {
    pub h: DMatrix<T>,
    pub g: DMatrix<T>,
    pub numerical_rank_x: usize,
    pub numerical_rank_y: usize,
    pub rtol: Option<f64>,
}

/// Computes `h` from the two orthogonal projectors and recovers
/// `g = Y(XY)⁺X − h`. The recovery is exact because `YY⁺h = h` and
/// `hX⁺X = h` (range and null space of `h`).
pub fn gw_decompose<T: Scalar>(
    x: &DMatrix<T>,
    y: &DMatrix<T>,
    rtol: Option<f64>,
) -> Result<GwDecomposition<T>> {
    check_inner("gw_decompose", x, y)?;
    let sx = svd(x)?;
    let sy = svd(y)?;
    let row_x = sx.corange_projector(rtol);
    let col_y = sy.range_projector(rtol);
    let h = pinv(&(&row_x * &col_y), rtol)?;
    let xy_p = pinv(&(x * y), rtol)?;
    let g = y * xy_p * x - &h;
    Ok(GwDecomposition {
        h,
        g,
        numerical_rank_x: sx.rank(rtol),
        numerical_rank_y: sy.rank(rtol),
        rtol,
    })
}

impl<T: Scalar> GwDecomposition<T> {
    /// `Y⁺(h + z)X⁺` for an arbitrary correction `z`.
    pub fn sandwich(&self, x: &DMatrix<T>, y: &DMatrix<T>, z: &DMatrix<T>) -> Result<DMatrix<T>> {
        Ok(pinv(y, self.rtol)? * (&self.h + z) * pinv(x, self.rtol)?)
    }

    pub fn reconstruct(&self, x: &DMatrix<T>, y: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.sandwich(x, y, &self.g)
    }

    /// `‖Y⁺(h+g)X⁺ − (XY)⁺‖ / ‖(XY)⁺‖`
    pub fn reconstruction_residual(&self, x: &DMatrix<T>, y: &DMatrix<T>) -> Result<f64> {
        let direct = pinv(&(x * y), self.rtol)?;
        Ok(rel(
            hs_norm(&(self.reconstruct(x, y)? - &direct)),
            hs_norm(&direct),
        ))
    }

    /// `|tr(g* h)|`, normalized by `‖g‖‖h‖` when that exceeds one.
    pub fn orthogonality_residual(&self) -> f64 {
        let tr = self.g.dotc(&self.h).modulus();
        tr / (hs_norm(&self.g) * hs_norm(&self.h)).max(1.0)
    }

    /// `‖YY⁺ g X⁺X − g‖`, normalized by `max(1, ‖g‖)`.
    pub fn invariance_residual(&self, x: &DMatrix<T>, y: &DMatrix<T>) -> Result<f64> {
        let p = svd(x)?.corange_projector(self.rtol);
        let q = svd(y)?.range_projector(self.rtol);
        Ok(hs_norm(&(q * &self.g * p - &self.g)) / hs_norm(&self.g).max(1.0))
    }
}

/// Draws corrections `z` with `YY⁺ z X⁺X = z` and `X z Y = 0`.
///
/// A Gaussian matrix `w` is projected onto the null space of
/// `w ↦ X·(YY⁺ w X⁺X)·Y` (least squares on the vectorized map), then mapped
/// through `YY⁺ (·) X⁺X`.
#[derive(Debug, Clone)]
pub struct AdmissibleSampler<T: Scalar> {
    null_projector: DMatrix<T>,
    col_proj_y: DMatrix<T>,
    row_proj_x: DMatrix<T>,
}

impl<T: Scalar> AdmissibleSampler<T> {
    pub fn new(x: &DMatrix<T>, y: &DMatrix<T>, rtol: Option<f64>) -> Result<Self> {
        check_inner("AdmissibleSampler::new", x, y)?;
        let p = svd(x)?.corange_projector(rtol);
        let q = svd(y)?.range_projector(rtol);
        // vec(A W B) = (Bᵀ ⊗ A) vec(W), column-major
        let a = x * &q;
        let b = &p * y;
        let k = b.transpose().kronecker(&a);
        let dim = k.ncols();
        let null_projector = DMatrix::<T>::identity(dim, dim) - pinv(&k, rtol)? * &k;
        Ok(Self {
            null_projector,
            col_proj_y: q,
            row_proj_x: p,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<T> {
        let n = self.col_proj_y.nrows();
        let w = DVector::<T>::from_fn(n * n, |_, _| T::standard_normal(rng));
        let w = &self.null_projector * w;
        let w = DMatrix::from_column_slice(n, n, w.as_slice());
        &self.col_proj_y * w * &self.row_proj_x
    }
}

/// Matrix of i.i.d. standard Gaussian entries.
pub fn gaussian_matrix<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols, |_, _| T::standard_normal(rng))
}

/// `rows × cols` matrix (`cols ≤ rows`) with orthonormal columns, from the QR
/// factor of a Gaussian matrix.
pub fn random_isometry<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> DMatrix<T> {
    assert!(cols <= rows, "isometry needs cols <= rows");
    let g = gaussian_matrix::<T, R>(rows, cols, rng);
    g.qr().q()
}

/// `rows × cols` matrix `U diag(s) V*` with Haar-like random `U`, `V` and
/// the given singular values (at most `min(rows, cols)` of them).
pub fn random_with_singular_values<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    singular_values: &[f64],
    rng: &mut R,
) -> DMatrix<T> {
    let k = singular_values.len();
    assert!(
        k <= rows.min(cols),
        "too many singular values for the shape"
    );
    if k == 0 {
        return DMatrix::zeros(rows, cols);
    }
    let mut u = random_isometry::<T, R>(rows, k, rng);
    let v = random_isometry::<T, R>(cols, k, rng);
    for (j, &s) in singular_values.iter().enumerate() {
        u.column_mut(j).scale_mut(s);
    }
    u * v.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn orthonormality<T: Scalar>(q: &DMatrix<T>) -> f64 {
        hs_norm(&(q.adjoint() * q - DMatrix::<T>::identity(q.ncols(), q.ncols())))
    }

    #[test]
    fn svd_identity() {
        let f = svd(&DMatrix::<f64>::identity(3, 3)).unwrap();
        assert_eq!(f.singular_values.as_slice(), &[1.0, 1.0, 1.0]);
        assert!(hs_norm(&(f.reconstruct() - DMatrix::<f64>::identity(3, 3))) < 1e-15);
    }

    #[test]
    fn svd_diagonal_with_zero() {
        let f = svd(&dmatrix![3.0, 0.0; 0.0, 0.0]).unwrap();
        assert_eq!(f.singular_values.as_slice(), &[3.0, 0.0]);
        assert!(orthonormality(&f.u) < 1e-15);
        assert!(orthonormality(&f.v) < 1e-15);
        assert_eq!(f.rank(None), 1);
    }

    #[test]
    fn svd_reconstructs_random_tall_and_wide() {
        let mut r = rng(1);
        for (m, n) in [(7, 4), (4, 7), (1, 5), (5, 1), (9, 9)] {
            let x: DMatrix<f64> = gaussian_matrix(m, n, &mut r);
            let f = svd(&x).unwrap();
            assert!(hs_norm(&(f.reconstruct() - &x)) / hs_norm(&x) < 1e-10);
            assert!(orthonormality(&f.u) < 1e-12);
            assert!(orthonormality(&f.v) < 1e-12);
            let s = f.singular_values.as_slice();
            assert!(s.windows(2).all(|w| w[0] >= w[1]) && s.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn svd_complex_matches_nalgebra_singular_values() {
        let mut r = rng(2);
        let x: DMatrix<Complex64> = gaussian_matrix(6, 4, &mut r);
        let ours = svd(&x).unwrap();
        let theirs = x.clone().svd(false, false);
        let mut sv: Vec<f64> = theirs.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in ours.singular_values.iter().zip(sv) {
            assert!(close(*a, b, 1e-12 * ours.largest()));
        }
        assert!(hs_norm(&(ours.reconstruct() - &x)) / hs_norm(&x) < 1e-12);
    }

    #[test]
    fn svd_rejects_bad_input() {
        let x = dmatrix![1.0, f64::NAN];
        assert!(matches!(svd(&x), Err(Error::NonFinite { .. })));
        let e = DMatrix::<f64>::zeros(0, 3);
        assert!(matches!(svd(&e), Err(Error::Empty { .. })));
    }

    #[test]
    fn svd_rank_deficient_completes_u() {
        let mut r = rng(3);
        let x: DMatrix<f64> = random_with_singular_values(6, 5, &[2.0, 1.0], &mut r);
        let f = svd(&x).unwrap();
        assert_eq!(f.rank(None), 2);
        assert!(orthonormality(&f.u) < 1e-12);
        let z = svd(&DMatrix::<f64>::zeros(4, 3)).unwrap();
        assert!(orthonormality(&z.u) < 1e-14);
        assert_eq!(z.rank(None), 0);
    }

    #[test]
    fn pinv_identity_and_rank_one() {
        let i = DMatrix::<f64>::identity(4, 4);
        assert!(hs_norm(&(pinv(&i, None).unwrap() - &i)) < 1e-15);
        let v = dmatrix![3.0; 4.0];
        let vp = pinv(&v, None).unwrap();
        assert!(close(vp[(0, 0)], 0.12, 1e-15) && close(vp[(0, 1)], 0.16, 1e-15));
    }

    #[test]
    fn pinv_zero_matrix_is_zero() {
        let z = DMatrix::<f64>::zeros(3, 2);
        assert_eq!(pinv(&z, None).unwrap(), DMatrix::<f64>::zeros(2, 3));
    }

    #[test]
    fn pinv_rejects_nonpositive_rtol() {
        assert!(pinv(&DMatrix::<f64>::identity(2, 2), Some(0.0)).is_err());
    }

    #[test]
    fn penrose_random_shapes() {
        let mut r = rng(4);
        for (m, n) in [(5, 3), (3, 5)] {
            let x: DMatrix<f64> = gaussian_matrix(m, n, &mut r);
            let res = penrose_check(&x, &pinv(&x, None).unwrap()).unwrap();
            assert!(res.max() < 1e-9, "{res:?}");
        }
        let i = DMatrix::<f64>::identity(3, 3);
        assert_eq!(penrose_check(&i, &i).unwrap().max(), 0.0);
    }

    #[test]
    fn penrose_negative_control_transpose() {
        let mut r = rng(5);
        let x: DMatrix<f64> = gaussian_matrix(4, 3, &mut r);
        let res = penrose_check(&x, &x.transpose()).unwrap();
        assert!(res.max() > 1e-3);
    }

    #[test]
    fn penrose_shape_mismatch() {
        let x = DMatrix::<f64>::zeros(3, 2);
        assert!(matches!(
            penrose_check(&x, &DMatrix::zeros(3, 2)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn truncated_pinv_fails_c1() {
        let mut r = rng(6);
        let x: DMatrix<f64> = random_with_singular_values(5, 5, &[4.0, 3.0, 1.0, 0.5, 0.1], &mut r);
        let res = penrose_check(&x, &pinv(&x, Some(0.5)).unwrap()).unwrap();
        assert!(res.c1 > 1e-3);
    }

    #[test]
    fn ridge_limit_agrees() {
        let mut r = rng(7);
        for (m, n) in [(6, 4), (4, 6)] {
            let x: DMatrix<f64> = random_with_singular_values(m, n, &[3.0, 2.0, 1.5, 1.0], &mut r);
            let a = pinv(&x, None).unwrap();
            let b = ridge_pinv(&x, 1e-12).unwrap();
            assert!(hs_norm(&(a - b)) < 1e-6);
        }
    }

    #[test]
    fn hs_norm_examples() {
        assert!(close(
            hs_norm(&DMatrix::<f64>::identity(5, 5)),
            5f64.sqrt(),
            1e-15
        ));
        assert_eq!(hs_norm(&DMatrix::<f64>::zeros(2, 2)), 0.0);
        assert!(close(hs_norm(&dmatrix![3.0, 0.0; 0.0, 4.0]), 5.0, 1e-15));
    }

    #[test]
    fn reverse_order_cases() {
        let mut r = rng(8);
        let q: DMatrix<f64> = random_isometry(6, 3, &mut r);
        let y: DMatrix<f64> = gaussian_matrix(3, 5, &mut r);
        assert!(reverse_order_holds(&q, &y, 1e-9).unwrap().holds);

        let x: DMatrix<f64> = gaussian_matrix(4, 6, &mut r);
        assert!(reverse_order_holds(&x, &x.transpose(), 1e-9).unwrap().holds);

        // full column rank X, full row rank Y
        let x: DMatrix<f64> = gaussian_matrix(6, 3, &mut r);
        let y: DMatrix<f64> = gaussian_matrix(3, 5, &mut r);
        assert!(reverse_order_holds(&x, &y, 1e-9).unwrap().holds);

        let x: DMatrix<f64> = gaussian_matrix(4, 6, &mut r);
        let y: DMatrix<f64> = gaussian_matrix(6, 4, &mut r);
        let ro = reverse_order_holds(&x, &y, 1e-9).unwrap();
        assert!(!ro.holds && ro.residual > 1e-3, "{ro:?}");
    }

    #[test]
    fn gw_identity_pair() {
        let i = DMatrix::<f64>::identity(3, 3);
        let d = gw_decompose(&i, &i, None).unwrap();
        assert!(hs_norm(&(&d.h - &i)) < 1e-14);
        assert!(hs_norm(&d.g) < 1e-14);
    }

    #[test]
    fn gw_full_rank_pair_has_trivial_correction() {
        let mut r = rng(9);
        let x: DMatrix<f64> = gaussian_matrix(7, 4, &mut r);
        let y: DMatrix<f64> = gaussian_matrix(4, 6, &mut r);
        let d = gw_decompose(&x, &y, None).unwrap();
        assert!(hs_norm(&(&d.h - DMatrix::<f64>::identity(4, 4))) < 1e-12);
        assert!(hs_norm(&d.g) < 1e-10);
        assert!(reverse_order_holds(&x, &y, 1e-9).unwrap().holds);
    }

    #[test]
    fn gw_random_pair_properties_and_minimality() {
        let mut r = rng(10);
        let x: DMatrix<f64> = gaussian_matrix(5, 8, &mut r);
        let y: DMatrix<f64> = gaussian_matrix(8, 6, &mut r);
        let d = gw_decompose(&x, &y, None).unwrap();
        assert!(d.reconstruction_residual(&x, &y).unwrap() < 1e-9);
        assert!(d.orthogonality_residual() < 1e-9);
        assert!(d.invariance_residual(&x, &y).unwrap() < 1e-9);

        let best = hs_norm(&d.reconstruct(&x, &y).unwrap());
        let sampler = AdmissibleSampler::new(&x, &y, None).unwrap();
        for _ in 0..100 {
            let z = sampler.sample(&mut r);
            assert!(hs_norm(&(&x * &z * &y)) < 1e-9 * hs_norm(&z).max(1.0));
            let other = hs_norm(&d.sandwich(&x, &y, &z).unwrap());
            assert!(best <= other + 1e-10, "{best} > {other}");
        }
    }

    #[test]
    fn gw_complex_pair() {
        let mut r = rng(11);
        let x: DMatrix<Complex64> = gaussian_matrix(3, 5, &mut r);
        let y: DMatrix<Complex64> = gaussian_matrix(5, 4, &mut r);
        let d = gw_decompose(&x, &y, None).unwrap();
        assert!(d.reconstruction_residual(&x, &y).unwrap() < 1e-9);
        assert!(d.orthogonality_residual() < 1e-9);
    }

    #[test]
    fn property_residuals_small() {
        let mut r = rng(12);
        let x: DMatrix<f64> = random_with_singular_values(6, 4, &[5.0, 2.0, 0.3], &mut r);
        let res = pinv_property_residuals(&x, None).unwrap();
        assert!(res.iter().all(|&v| v < 1e-9), "{res:?}");
    }
}
