//! Dense linear algebra support: seeded power iteration, spectral norms,
//! conjugate gradients, and LAPACK-backed factorizations.

use crate::error::{MgError, Result};
use crate::{Matrix, Vector};
use ndarray::ArrayView2;
use ndarray_linalg::{EigValsh, Factorize, FactorizeC, InverseC, LUFactorized, Solve, UPLO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Deterministic unit start vector for iterative eigenvalue estimates.
pub fn seeded_unit_vector(n: usize, seed: u64) -> Vector {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut v = Vector::from_shape_fn(n, |_| rng.gen::<f64>() * 2.0 - 1.0);
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v /= norm;
    } else {
        v[0] = 1.0;
    }
    v
}

/// Outcome of a power iteration.
#[derive(Debug, Clone, Copy)]
pub struct PowerEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Power iteration for the largest eigenvalue of a symmetric positive
/// semidefinite operator given by `apply`.  Stops when the Rayleigh quotient
/// changes by less than `rel_tol` relatively, or after `max_iters` sweeps.
pub fn power_iteration<F>(
    n: usize,
    apply: F,
    max_iters: usize,
    rel_tol: f64,
    seed: u64,
) -> PowerEstimate
where
    F: Fn(&Vector) -> Vector,
{
    let mut v = seeded_unit_vector(n, seed);
    let mut lambda = 0.0;
    let mut converged = false;
    let mut used = 0;
    for k in 0..max_iters {
        used = k + 1;
        let w = apply(&v);
        let next = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            // Operator annihilated the iterate: eigenvalue 0.
            return PowerEstimate {
                value: 0.0,
                converged: true,
                iterations: used,
            };
        }
        v = w / norm;
        let change = (next - lambda).abs();
        lambda = next;
        if change <= rel_tol * lambda.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    PowerEstimate {
        value: lambda,
        converged,
        iterations: used,
    }
}

/// Spectral norm `‖A‖₂` of a dense (not necessarily symmetric) matrix via
/// power iteration on `AᵀA`.
pub fn spectral_norm(a: ArrayView2<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let est = power_iteration(
        n,
        |v| a.t().dot(&a.dot(v)),
        500,
        1e-10,
        0x5eed_0001,
    );
    est.value.max(0.0).sqrt()
}

/// All eigenvalues of a symmetric matrix (ascending), LAPACK `dsyev`.
pub fn sym_eigvals(a: &Matrix) -> Result<Vec<f64>> {
    let w = a
        .eigvalsh(UPLO::Lower)
        .map_err(|e| MgError::Conditioning(format!("eigensolve failed: {e}")))?;
    Ok(w.to_vec())
}

/// Largest-magnitude entry.
pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
}

/// `max |K C − I|`: how far `c` is from being the inverse of `k`.
pub fn residual_defect(k: &Matrix, c: &Matrix) -> f64 {
    let mut r = k.dot(c);
    for i in 0..r.nrows().min(r.ncols()) {
        r[[i, i]] -= 1.0;
    }
    max_abs(&r)
}

/// Inverse of a symmetric positive definite matrix with Newton–Schulz
/// refinement: `C ← C + C(I - KC)` until `max|KC - I| ≤ tol` (or `max_steps`).
/// Returns the inverse together with the final residual `max|KC - I|`.
pub fn inverse_spd_refined(k: &Matrix, tol: f64, max_steps: usize) -> Result<(Matrix, f64)> {
    let n = k.nrows();
    if n != k.ncols() {
        return Err(MgError::Dimension("inverse of a non-square matrix".into()));
    }
    let chol = k
        .factorizec(UPLO::Lower)
        .map_err(|e| MgError::Conditioning(format!("Cholesky factorization failed: {e}")))?;
    let mut c = chol
        .invc()
        .map_err(|e| MgError::Conditioning(format!("Cholesky inverse failed: {e}")))?;

    let mut defect = f64::INFINITY;
    for _ in 0..=max_steps {
        // Residual R = I - K C.
        let mut r = k.dot(&c);
        r *= -1.0;
        for i in 0..n {
            r[[i, i]] += 1.0;
        }
        let d = max_abs(&r);
        if !d.is_finite() {
            return Err(MgError::Conditioning(
                "inverse refinement diverged (non-finite residual)".into(),
            ));
        }
        let improved = d < defect;
        defect = d.min(defect);
        if d <= tol || !improved {
            break;
        }
        let correction = c.dot(&r);
        c += &correction;
        // Keep the inverse exactly symmetric (K is symmetric).
        for i in 0..n {
            for j in 0..i {
                let s = 0.5 * (c[[i, j]] + c[[j, i]]);
                c[[i, j]] = s;
                c[[j, i]] = s;
            }
        }
    }
    Ok((c, defect))
}

/// Conjugate gradient run summary.
#[derive(Debug, Clone)]
pub struct CgRun {
    pub x: Vector,
    pub iterations: usize,
    pub converged: bool,
    pub rel_residual: f64,
}

/// Unpreconditioned conjugate gradients for a symmetric positive definite
/// operator, starting from zero.  Converged when `‖b - Ax‖ ≤ rel_tol·‖b‖`.
pub fn cg<F>(n: usize, apply: F, b: &Vector, rel_tol: f64, max_iters: usize) -> CgRun
where
    F: Fn(&Vector) -> Vector,
{
    let b_norm = b.dot(b).sqrt();
    let mut x = Vector::zeros(n);
    if b_norm == 0.0 {
        return CgRun {
            x,
            iterations: 0,
            converged: true,
            rel_residual: 0.0,
        };
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut iterations = 0;
    let mut converged = rr.sqrt() <= rel_tol * b_norm;
    while !converged && iterations < max_iters {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 || !pap.is_finite() {
            break; // not SPD / breakdown
        }
        let alpha = rr / pap;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        let rr_next = r.dot(&r);
        iterations += 1;
        if rr_next.sqrt() <= rel_tol * b_norm {
            converged = true;
            break;
        }
        p = &r + &(p * (rr_next / rr));
        rr = rr_next;
    }
    let rel_residual = r.dot(&r).sqrt() / b_norm;
    CgRun {
        x,
        iterations,
        converged,
        rel_residual,
    }
}

/// Dense direct solver for the coarsest level: LU factorized once, reused.
pub struct CoarseSolver {
    lu: LUFactorized<ndarray::OwnedRepr<f64>>,
    n: usize,
}

impl std::fmt::Debug for CoarseSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoarseSolver").field("n", &self.n).finish()
    }
}

impl CoarseSolver {
    pub fn new(a: &Matrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(MgError::Dimension("coarse matrix must be square".into()));
        }
        let lu = a
            .factorize()
            .map_err(|e| MgError::Conditioning(format!("coarse LU failed: {e}")))?;
        Ok(Self { lu, n: a.nrows() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &Vector) -> Result<Vector> {
        self.lu
            .solve(b)
            .map_err(|e| MgError::Conditioning(format!("coarse solve failed: {e}")))
    }
}

/// Simple least squares fit of `y ≈ slope·x + intercept` with `R²`.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return Err(MgError::InsufficientData(format!(
            "line fit needs ≥ 2 paired samples, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(MgError::InsufficientData(
            "line fit: all abscissae identical".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LineFit {
        slope,
        intercept,
        r2,
        n,
    })
}
