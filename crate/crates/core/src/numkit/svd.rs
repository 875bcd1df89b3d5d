//! Singular value decomposition via one-sided Jacobi rotations, plus the
//! Moore-Penrose pseudoinverse and row-space projection built on top of it.
//!
//! One-sided Jacobi is slow compared to bidiagonalization methods but is
//! simple, numerically excellent, and has predictable convergence at the
//! matrix sizes used here (a few thousand columns at most).

use super::{Matrix, NumError};

const MAX_SWEEPS: usize = 64;
const ORTH_TOL: f64 = 1e-15;

/// Thin SVD `A = U S V^T` with `k = min(rows, cols)` singular values in
/// descending order. Columns of `U` belonging to zero singular values are
/// zero vectors; callers filter on `s` before using them.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

impl Svd {
    /// Number of singular values above `tol * s_max`.
    pub fn rank(&self, tol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&sv| sv > tol * smax).count()
    }
}

impl Matrix {
    /// One-sided Jacobi SVD. Always succeeds on finite input (which the
    /// `Matrix` invariant guarantees).
    pub fn svd(&self) -> Svd {
        if self.rows() >= self.cols() {
            jacobi_tall(self)
        } else {
            // Jacobi wants at least as many rows as columns; decompose the
            // transpose and swap the factors.
            let t = jacobi_tall(&self.transpose());
            Svd {
                u: t.vt.transpose(),
                s: t.s,
                vt: t.u.transpose(),
            }
        }
    }

    /// Moore-Penrose pseudoinverse. Singular values at or below
    /// `tol * s_max` are treated as zero.
    pub fn pinv(&self, tol: f64) -> Result<Matrix, NumError> {
        if !(tol > 0.0) {
            return Err(NumError::InvalidArg(format!(
                "pinv tolerance must be positive, got {tol}"
            )));
        }
        let Svd { u, s, vt } = self.svd();
        let smax = s.first().copied().unwrap_or(0.0);
        let cutoff = tol * smax;
        // A^+ = V diag(1/s) U^T, dropping negligible singular values.
        let k = s.len();
        let mut out = Matrix::zeros(self.cols(), self.rows());
        for j in 0..k {
            if s[j] <= cutoff || s[j] == 0.0 {
                continue;
            }
            let inv = 1.0 / s[j];
            for r in 0..self.cols() {
                let v_rj = vt.get(j, r);
                if v_rj == 0.0 {
                    continue;
                }
                for c in 0..self.rows() {
                    let add = v_rj * inv * u.get(c, j);
                    out.set(r, c, out.get(r, c) + add);
                }
            }
        }
        Ok(out)
    }

    /// Largest eigenvalue of the (symmetric positive semidefinite) Gram
    /// matrix `X^T X`, by power iteration on `v -> X^T (X v)`.
    pub fn gram_spectral_max(&self) -> f64 {
        let n = self.cols();
        let mut v: Vec<f64> = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let xv = self.matvec(&v).expect("shape fixed");
            let mut next = vec![0.0; n];
            for (r, &xv_r) in xv.iter().enumerate() {
                let row = self.row(r);
                for j in 0..n {
                    next[j] += row[j] * xv_r;
                }
            }
            let norm = super::sq_norm(&next).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            for x in next.iter_mut() {
                *x /= norm;
            }
            let new_lambda = {
                let xv2 = self.matvec(&next).expect("shape fixed");
                super::sq_norm(&xv2)
            };
            let done = (new_lambda - lambda).abs() <= 1e-13 * new_lambda.max(1e-300);
            lambda = new_lambda;
            v = next;
            if done {
                break;
            }
        }
        lambda
    }
}

fn jacobi_tall(a: &Matrix) -> Svd {
    let m = a.rows();
    let n = a.cols();
    debug_assert!(m >= n);

    // Column-major working copies: b holds the rotated columns of A, v the
    // accumulated right rotations.
    let mut b: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut col = vec![0.0; n];
            col[j] = 1.0;
            col
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (bp, bq) = (&b[p], &b[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        alpha += bp[i] * bp[i];
                        beta += bq[i] * bq[i];
                        gamma += bp[i] * bq[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= ORTH_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut b, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    // Singular values are the column norms; sort descending with a stable
    // permutation so ties keep a deterministic order.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = b.iter().map(|col| super::sq_norm(col).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let mut u = Matrix::zeros(m, n);
    let mut vt = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (slot, &j) in order.iter().enumerate() {
        let norm = norms[j];
        s.push(norm);
        if norm > 0.0 {
            for i in 0..m {
                u.set(i, slot, b[j][i] / norm);
            }
        }
        for i in 0..n {
            vt.set(slot, i, v[j][i]);
        }
    }
    Svd { u, s, vt }
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    debug_assert!(p < q);
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for i in 0..cp.len() {
        let xp = cp[i];
        let xq = cq[i];
        cp[i] = c * xp - s * xq;
        cq[i] = s * xp + c * xq;
    }
}

/// Split `x` into its component inside the row space of `design` and the
/// remainder in the orthogonal complement (the null space of `design`).
pub fn project_rowspace(
    x: &[f64],
    design: &Matrix,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>), NumError> {
    if x.len() != design.cols() {
        return Err(NumError::DimMismatch {
            context: "project_rowspace",
            left_rows: x.len(),
            left_cols: 1,
            right_rows: design.rows(),
            right_cols: design.cols(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(NumError::NonFinite("project_rowspace input"));
    }
    let svd = design.svd();
    let r = svd.rank(tol);
    let n = design.cols();
    let mut in_span = vec![0.0; n];
    for j in 0..r {
        let v_j = svd.vt.row(j);
        let coeff = super::dot(v_j, x);
        for i in 0..n {
            in_span[i] += coeff * v_j[i];
        }
    }
    let orthogonal: Vec<f64> = x.iter().zip(&in_span).map(|(xi, pi)| xi - pi).collect();
    Ok((in_span, orthogonal))
}
