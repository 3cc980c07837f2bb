//! Dense symmetric eigensolvers and spectral counting.
//!
//! The engine needs three access patterns that a generic eigensolver does not
//! expose cheaply:
//!
//! * many spectral *counts* per operator sample (number of eigenvalues below
//!   a level) — served by one Householder tridiagonalization per sample plus
//!   an O(n) Sturm-sequence query per level;
//! * values-only spectra of large (~10^3) samples inside a tight serial time
//!   budget — served by a tridiagonalization that maintains the full
//!   symmetric block so every inner loop is contiguous;
//! * a handful of eigenpairs next to zero of a large sample — served by
//!   LU-based block inverse iteration with a Rayleigh–Ritz finish.
//!
//! The with-vectors path is a classical Householder + implicit-shift QL
//! reduction (the EISPACK `tred2`/`tql2` pair). `nalgebra` supplies matrix
//! storage and the dense LU factorization.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Relative tolerance for symmetry checks.
pub const SYM_TOL: f64 = 1e-12;
/// Relative tolerance on eigenvalue residuals.
pub const EIG_TOL: f64 = 1e-10;
/// Relative half-width of the spectral band treated as "zero".
pub const ZERO_TOL_REL: f64 = 1e-8;
/// A kernel candidate must be separated from the rest of the spectrum by this
/// factor times the zero tolerance.
pub const GAP_FACTOR: f64 = 10.0;
/// Relative guard half-width around counting-interval edges.
pub const GAP_GUARD_REL: f64 = 1e-9;

/// Infinity norm (maximum absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    let (n, _) = m.shape();
    (0..n)
        .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest absolute entry of `M - M^T`.
pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Absolute zero-band half-width for a given operator.
pub fn default_zero_tol(m: &DMatrix<f64>) -> f64 {
    ZERO_TOL_REL * (1.0 + inf_norm(m))
}

/// Absolute guard width for counting-interval edges.
pub fn default_gap_guard(m: &DMatrix<f64>) -> f64 {
    GAP_GUARD_REL * (1.0 + inf_norm(m))
}

/// Errors unless `M` is square and symmetric to `tol` (absolute, on entries).
pub fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let defect = symmetry_defect(m);
    if defect > tol {
        return Err(Error::NotSymmetric { asym: defect, tol });
    }
    Ok(())
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut i = 0;
    while i + 4 <= n {
        s0 += x[i] * y[i];
        s1 += x[i + 1] * y[i + 1];
        s2 += x[i + 2] * y[i + 2];
        s3 += x[i + 3] * y[i + 3];
        i += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while i < n {
        s += x[i] * y[i];
        i += 1;
    }
    s
}

/// Symmetric tridiagonal matrix: diagonal `d`, off-diagonal `off` where
/// `off[j]` couples entries `j` and `j + 1`.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub d: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Upper bound on |eigenvalues| from Gershgorin disks.
    pub fn spectral_bound(&self) -> f64 {
        let n = self.d.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { self.off[i - 1].abs() } else { 0.0 };
                let right = if i + 1 < n { self.off[i].abs() } else { 0.0 };
                self.d[i].abs() + left + right
            })
            .fold(0.0, f64::max)
    }

    /// Number of eigenvalues strictly below `x` (Sturm sequence via the
    /// shifted LDL^T pivot recurrence, with the usual tiny-pivot safeguard).
    pub fn count_below(&self, x: f64) -> usize {
        const TINY: f64 = 1e-300;
        let n = self.d.len();
        if n == 0 {
            return 0;
        }
        // A vanishing pivot is perturbed to the negative side *before* it is
        // counted, so the count and the recurrence see the same sign.
        let mut count = 0usize;
        let mut t = self.d[0] - x;
        if t.abs() < TINY {
            t = -TINY;
        }
        if t < 0.0 {
            count += 1;
        }
        for i in 1..n {
            t = self.d[i] - x - self.off[i - 1] * self.off[i - 1] / t;
            if t.abs() < TINY {
                t = -TINY;
            }
            if t < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// All eigenvalues, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let mut d = self.d.clone();
        let mut e = self.off.clone();
        e.push(0.0);
        tql(&mut d, &mut e, None, self.d.len())?;
        d.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN eigenvalues"));
        Ok(d)
    }
}

/// Householder tridiagonalization, values-only path.
///
/// Maintains the full symmetric active block (both triangles) so that the
/// matrix–vector product and the rank-2 update touch memory contiguously;
/// this costs 2x the flops of the half-triangle formulation and runs several
/// times faster on large matrices.
pub fn tridiagonalize(m: &DMatrix<f64>) -> Tridiagonal {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "tridiagonalize requires a square matrix");
    // Row-major copy; the matrix is symmetric so the storage order of the
    // source does not matter.
    let mut a = vec![0.0f64; n * n];
    for j in 0..n {
        for i in 0..n {
            a[i * n + j] = m[(i, j)];
        }
    }
    let mut d = vec![0.0f64; n];
    let mut off = vec![0.0f64; n.saturating_sub(1)];
    let mut u = vec![0.0f64; n];
    let mut q = vec![0.0f64; n];

    for i in (1..n).rev() {
        let l = i - 1;
        d[i] = a[i * n + i];
        u[..i].copy_from_slice(&a[i * n..i * n + i]);
        let scale: f64 = u[..i].iter().map(|x| x.abs()).sum();
        if scale == 0.0 {
            off[l] = 0.0;
            continue;
        }
        if i == 1 {
            off[0] = u[0];
            continue;
        }
        for x in &mut u[..i] {
            *x /= scale;
        }
        let mut h = dot(&u[..i], &u[..i]);
        let f = u[l];
        let g = -h.sqrt().copysign(f);
        off[l] = scale * g;
        h -= f * g; // now h = |u|^2 / 2 for the updated u below
        u[l] = f - g;

        // q = A u / h on the active block, then subtract the Householder
        // correction so that A <- A - u q^T - q u^T is the similarity update.
        for (j, qj) in q[..i].iter_mut().enumerate() {
            *qj = dot(&a[j * n..j * n + i], &u[..i]) / h;
        }
        let kappa = dot(&u[..i], &q[..i]) / (2.0 * h);
        for j in 0..i {
            q[j] -= kappa * u[j];
        }
        for j in 0..i {
            let (uj, qj) = (u[j], q[j]);
            let row = &mut a[j * n..j * n + i];
            for (rk, (qk, uk)) in row.iter_mut().zip(q[..i].iter().zip(&u[..i])) {
                *rk -= uj * qk + qj * uk;
            }
        }
    }
    if n > 0 {
        d[0] = a[0];
    }
    Tridiagonal { d, off }
}

/// Implicit-shift QL sweep on a tridiagonal (`d`, `e`); `e` must carry a
/// trailing guard entry. When `z` is given (column-major `n x n`), the plane
/// rotations are accumulated into its columns.
fn tql(d: &mut [f64], e: &mut [f64], mut z: Option<&mut [f64]>, n: usize) -> Result<()> {
    if n <= 1 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0usize;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::Numerical(format!(
                    "QL iteration failed to converge for eigenvalue {l} of {n}"
                )));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0f64, 1.0f64, 0.0f64);
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if let Some(zz) = z.as_deref_mut() {
                    // Rotate columns i and i+1.
                    let (left, right) = zz.split_at_mut((i + 1) * n);
                    let ci = &mut left[i * n..];
                    let ci1 = &mut right[..n];
                    for k in 0..n {
                        let f = ci1[k];
                        ci1[k] = s * ci[k] + c * f;
                        ci[k] = c * ci[k] - s * f;
                    }
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Householder tridiagonalization with accumulated transformations
/// (with-vectors path). `a` is row-major and is overwritten by the
/// accumulated orthogonal factor; returns `(d, e)` with `e[i]` coupling
/// `i - 1` and `i` (EISPACK convention, shifted by the caller).
fn tred2_accumulate(a: &mut [f64], n: usize, d: &mut [f64], e: &mut [f64]) {
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0f64;
        if l > 0 {
            let mut scale = 0.0f64;
            for k in 0..=l {
                scale += a[i * n + k].abs();
            }
            if scale == 0.0 {
                e[i] = a[i * n + l];
            } else {
                for k in 0..=l {
                    a[i * n + k] /= scale;
                    h += a[i * n + k] * a[i * n + k];
                }
                let f = a[i * n + l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[i * n + l] = f - g;
                let mut f_acc = 0.0f64;
                for j in 0..=l {
                    a[j * n + i] = a[i * n + j] / h;
                    let mut g_acc = 0.0f64;
                    for k in 0..=j {
                        g_acc += a[j * n + k] * a[i * n + k];
                    }
                    for k in (j + 1)..=l {
                        g_acc += a[k * n + j] * a[i * n + k];
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * a[i * n + j];
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let fj = a[i * n + j];
                    let gj = e[j] - hh * fj;
                    e[j] = gj;
                    for k in 0..=j {
                        a[j * n + k] -= fj * e[k] + gj * a[i * n + k];
                    }
                }
            }
        } else {
            e[i] = a[i * n + l];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0f64;
                for k in 0..i {
                    g += a[i * n + k] * a[k * n + j];
                }
                for k in 0..i {
                    a[k * n + j] -= g * a[k * n + i];
                }
            }
        }
        d[i] = a[i * n + i];
        a[i * n + i] = 1.0;
        for j in 0..i {
            a[j * n + i] = 0.0;
            a[i * n + j] = 0.0;
        }
    }
}

/// Eigendecomposition of a symmetric matrix: ascending eigenvalues and the
/// matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

/// Full eigendecomposition via Householder reduction + implicit-shift QL.
///
/// `sym_tol` is the absolute entry tolerance for the symmetry precondition.
pub fn eig_sym(m: &DMatrix<f64>, sym_tol: f64) -> Result<EigenDecomposition> {
    check_symmetric(m, sym_tol)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(EigenDecomposition {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = m[(i, j)];
        }
    }
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    tred2_accumulate(&mut a, n, &mut d, &mut e);
    // Shift the off-diagonal to the `off[j] couples j, j+1` convention and
    // convert the accumulated factor to column-major for the QL sweep.
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut z = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            z[j * n + i] = a[i * n + j];
        }
    }
    tql(&mut d, &mut e, Some(&mut z), n)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).expect("non-NaN eigenvalues"));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| d[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            eigenvectors[(k, dst)] = z[src * n + k];
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// All eigenvalues (ascending) without vectors; the fast large-matrix path.
pub fn eigenvalues_sym(m: &DMatrix<f64>, sym_tol: f64) -> Result<Vec<f64>> {
    check_symmetric(m, sym_tol)?;
    tridiagonalize(m).eigenvalues()
}

fn resolve_edge(edge: f64, bound: f64) -> (f64, bool) {
    if edge == f64::NEG_INFINITY {
        (-(2.0 * bound + 1.0), false)
    } else if edge == f64::INFINITY {
        (2.0 * bound + 1.0, false)
    } else {
        (edge, true)
    }
}

/// Dimension of the spectral subspace for the interval `[lo, hi]`, computed
/// on an already-tridiagonalized sample.
///
/// Finite edges must be separated from the spectrum by `gap_guard`;
/// otherwise the count is ill-conditioned and an error is returned. Infinite
/// edges are replaced by just-beyond-spectral-bound proxies and not guarded.
pub fn spectral_count_tri(tri: &Tridiagonal, lo: f64, hi: f64, gap_guard: f64) -> Result<usize> {
    if !(lo <= hi) {
        return Err(Error::InvalidInput(format!(
            "empty counting interval [{lo}, {hi}]"
        )));
    }
    let bound = tri.spectral_bound();
    let (lo, guard_lo) = resolve_edge(lo, bound);
    let (hi, guard_hi) = resolve_edge(hi, bound);
    for (edge, active) in [(lo, guard_lo), (hi, guard_hi)] {
        if active && tri.count_below(edge + gap_guard) != tri.count_below(edge - gap_guard) {
            return Err(Error::BoundaryEigenvalue {
                edge,
                guard: gap_guard,
            });
        }
    }
    Ok(tri.count_below(hi) - tri.count_below(lo))
}

/// Dimension of the spectral subspace of `M` for `[lo, hi]`; see
/// [`spectral_count_tri`].
pub fn spectral_count(m: &DMatrix<f64>, lo: f64, hi: f64) -> Result<usize> {
    check_symmetric(m, SYM_TOL * (1.0 + inf_norm(m)))?;
    let tri = tridiagonalize(m);
    spectral_count_tri(&tri, lo, hi, default_gap_guard(m))
}

/// Strict Morse index on a tridiagonalized sample: the number of eigenvalues
/// below `-zero_tol`, with an error when any eigenvalue falls inside
/// `[-zero_tol, zero_tol)`.
pub fn morse_index_tri(tri: &Tridiagonal, zero_tol: f64) -> Result<usize> {
    let below_band = tri.count_below(-zero_tol);
    let in_band = tri.count_below(zero_tol) - below_band;
    if in_band > 0 {
        return Err(Error::NearKernelAmbiguity {
            count: in_band,
            lo: -zero_tol,
            hi: zero_tol,
        });
    }
    Ok(below_band)
}

/// Strict Morse index (number of negative eigenvalues) of `M`; errors with a
/// near-kernel ambiguity when the zero band `[-zero_tol, zero_tol)` is
/// populated.
pub fn morse_index(m: &DMatrix<f64>, zero_tol: f64) -> Result<usize> {
    check_symmetric(m, SYM_TOL * (1.0 + inf_norm(m)))?;
    morse_index_tri(&tridiagonalize(m), zero_tol)
}

/// Orthonormal basis (columns) of the spectral subspace for
/// `[-zero_tol, zero_tol]`.
///
/// Requires a clean spectral gap: no eigenvalue magnitude inside
/// `(zero_tol, gap_factor * zero_tol)`, otherwise the kernel is reported as
/// ambiguous.
pub fn kernel_basis(m: &DMatrix<f64>, zero_tol: f64, gap_factor: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    check_symmetric(m, SYM_TOL * (1.0 + inf_norm(m)))?;
    let tri = tridiagonalize(m);
    let below = tri.count_below(-zero_tol);
    let count = tri.count_below(zero_tol) - below;
    let guard_hi = gap_factor * zero_tol;
    let in_guard = (tri.count_below(guard_hi) - tri.count_below(zero_tol))
        + (tri.count_below(-zero_tol) - tri.count_below(-guard_hi));
    if in_guard > 0 {
        return Err(Error::AmbiguousKernel {
            lo: zero_tol,
            hi: guard_hi,
        });
    }
    if count == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    if n <= 256 {
        let dec = eig_sym(m, SYM_TOL * (1.0 + inf_norm(m)))?;
        let cols: Vec<usize> = (0..n)
            .filter(|&j| dec.eigenvalues[j].abs() <= zero_tol)
            .collect();
        debug_assert_eq!(cols.len(), count);
        let mut basis = DMatrix::zeros(n, cols.len());
        for (dst, &src) in cols.iter().enumerate() {
            basis.set_column(dst, &dec.eigenvectors.column(src));
        }
        Ok(basis)
    } else {
        let (_, vectors) = eigenpairs_near_zero(m, count, EIG_TOL * (1.0 + inf_norm(m)))?;
        Ok(vectors)
    }
}

/// Signature (positives minus negatives) of a symmetric quadratic form.
/// Errors as degenerate when any eigenvalue magnitude is at or below
/// `zero_tol`.
pub fn signature(q: &DMatrix<f64>, zero_tol: f64) -> Result<i64> {
    check_symmetric(q, SYM_TOL * (1.0 + inf_norm(q)))?;
    let values = tridiagonalize(q).eigenvalues()?;
    let mut sig = 0i64;
    for v in values {
        if v.abs() <= zero_tol {
            return Err(Error::DegenerateForm {
                value: v.abs(),
                tol: zero_tol,
            });
        }
        sig += if v > 0.0 { 1 } else { -1 };
    }
    Ok(sig)
}

/// Modified Gram–Schmidt orthonormalization of the columns, in place.
pub fn orthonormalize_columns(x: &mut DMatrix<f64>) -> Result<()> {
    let k = x.ncols();
    for j in 0..k {
        for prev in 0..j {
            let proj = x.column(prev).dot(&x.column(j));
            let prev_col = x.column(prev).clone_owned();
            let mut col = x.column_mut(j);
            col.axpy(-proj, &prev_col, 1.0);
        }
        let norm = x.column(j).norm();
        if norm < 1e-200 {
            return Err(Error::Numerical(
                "column collapse during orthonormalization".into(),
            ));
        }
        x.column_mut(j).scale_mut(1.0 / norm);
    }
    Ok(())
}

/// The `k` eigenpairs of smallest magnitude, by block inverse iteration with
/// a Rayleigh–Ritz finish. Returns Ritz values ascending with matching
/// columns; each pair satisfies `|M v - theta v| <= resid_tol`.
pub fn eigenpairs_near_zero(
    m: &DMatrix<f64>,
    k: usize,
    resid_tol: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if k == 0 {
        return Ok((Vec::new(), DMatrix::zeros(n, 0)));
    }
    if k > n {
        return Err(Error::InvalidInput(format!(
            "requested {k} eigenpairs of an {n}-dimensional operator"
        )));
    }
    let norm = inf_norm(m);
    let mut lu = m.clone().lu();
    // Fall back to a tiny diagonal shift when the factorization is exactly
    // singular; inverse iteration only needs an invertible nearby operator.
    if lu.solve(&DMatrix::<f64>::identity(n, 1.min(n))).is_none() {
        let shifted = m + DMatrix::identity(n, n) * (1e-13 * (1.0 + norm));
        lu = shifted.lu();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5f3c21);
    let mut x = DMatrix::from_fn(n, k, |_, _| rng.gen::<f64>() - 0.5);
    orthonormalize_columns(&mut x)?;
    for _ in 0..12 {
        let y = lu.solve(&x).ok_or_else(|| {
            Error::Numerical("singular system in inverse iteration".into())
        })?;
        x = y;
        orthonormalize_columns(&mut x)?;
        // Rayleigh–Ritz on the current block.
        let mx = m * &x;
        let small = x.transpose() * &mx;
        let small_sym = (&small + small.transpose()) * 0.5;
        let dec = eig_sym(&small_sym, 1e-10 * (1.0 + inf_norm(&small_sym)))?;
        let ritz_vecs = &x * &dec.eigenvectors;
        let ritz_m = &mx * &dec.eigenvectors;
        let worst = (0..k)
            .map(|j| (&ritz_m.column(j) - &ritz_vecs.column(j) * dec.eigenvalues[j]).norm())
            .fold(0.0, f64::max);
        if worst <= resid_tol {
            return Ok((dec.eigenvalues.iter().copied().collect(), ritz_vecs));
        }
    }
    Err(Error::Numerical(format!(
        "inverse iteration did not converge to {k} near-zero eigenpairs"
    )))
}

/// Matrix exponential by Padé approximation with scaling and squaring.
/// Intended for the small phase-space matrices of the Hamiltonian module.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");
    let norm = inf_norm(a);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s);

    // Order-6 diagonal Padé: N(A) X = D(A) with coefficients from the
    // standard recurrence c_{j+1} = c_j (q - j) / ((2q - j)(j + 1)).
    const Q: usize = 6;
    let mut c = 1.0f64;
    let mut num = DMatrix::<f64>::identity(n, n);
    let mut den = DMatrix::<f64>::identity(n, n);
    let mut power = DMatrix::<f64>::identity(n, n);
    for j in 0..Q {
        c *= (Q - j) as f64 / ((2 * Q - j) as f64 * (j + 1) as f64);
        power = &power * &scaled;
        num += &power * c;
        if j % 2 == 0 {
            den -= &power * c;
        } else {
            den += &power * c;
        }
    }
    let mut result = den
        .lu()
        .solve(&num)
        .expect("Pade denominator is invertible for scaled input");
    for _ in 0..s {
        result = &result * &result;
    }
    result
}
