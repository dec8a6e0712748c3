//! Spectrally defined Sobolev kernels on the sphere and the flat torus.
//!
//! Both kernels share the coefficient law `(1 + λ)^{-m}` over the
//! Laplace–Beltrami eigenvalues λ.  Torus:
//! `φ(x,y) = Σ_{|k|∞ ≤ T} (1+|k|²)^{-m} cos(k·(x-y))` over integer frequency
//! pairs.  Sphere:
//! `φ(x,y) = Σ_{ℓ ≤ T} (1+ℓ(ℓ+1))^{-m} (2ℓ+1)/(4π) P_ℓ(x·y)` with the
//! Legendre three-term recurrence.  `m ≥ 3` keeps the native space inside the
//! continuous functions with room for the second-order operator.

use crate::error::{MgError, Result};
use crate::geometry::{Manifold, PointSet, TAU};
use crate::linalg;
use crate::par;
use crate::Matrix;

/// Relative truncation-tail gate checked at construction.
pub const TAIL_RELATIVE_TOL: f64 = 1e-5;

/// Residual target for the Lagrange coefficient solve.
pub const CARDINALITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralKernel {
    manifold: Manifold,
    m: u32,
    cutoff: usize,
    /// Diagonal value `φ(x,x)` (constant by homogeneity).
    diagonal: f64,
    /// Upper bound for the dropped series tail relative to the diagonal.
    tail_relative: f64,
}

impl SpectralKernel {
    /// Kernel with an explicit series cutoff `T`.
    pub fn with_cutoff(manifold: Manifold, m: u32, cutoff: usize) -> Result<Self> {
        if m < 3 {
            return Err(MgError::Domain(format!(
                "smoothness exponent m must be ≥ 3, got {m}"
            )));
        }
        if cutoff == 0 {
            return Err(MgError::Domain("series cutoff must be positive".into()));
        }
        let diagonal = diagonal_value(manifold, m, cutoff);
        let tail = tail_estimate(manifold, m, cutoff);
        let tail_relative = tail / diagonal;
        if tail_relative > TAIL_RELATIVE_TOL {
            return Err(MgError::Domain(format!(
                "series cutoff {cutoff} leaves a relative tail {tail_relative:.3e} > {TAIL_RELATIVE_TOL:.0e}"
            )));
        }
        Ok(Self {
            manifold,
            m,
            cutoff,
            diagonal,
            tail_relative,
        })
    }

    /// Kernel sized for a hierarchy whose finest fill distance is `h`:
    /// torus `T = max(32, ⌈8/h⌉)`, sphere `T = max(64, ⌈8/h⌉)`.
    pub fn for_fill_distance(manifold: Manifold, m: u32, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(MgError::Domain(format!("fill distance must be positive, got {h}")));
        }
        let base = match manifold {
            Manifold::FlatTorus => 32usize,
            Manifold::UnitSphere => 64usize,
        };
        let cutoff = base.max((8.0 / h).ceil() as usize);
        Self::with_cutoff(manifold, m, cutoff)
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn diagonal(&self) -> f64 {
        self.diagonal
    }

    pub fn tail_relative(&self) -> f64 {
        self.tail_relative
    }

    /// Kernel value at a point pair (both on the kernel's manifold).
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.manifold {
            Manifold::FlatTorus => {
                let mi = -(self.m as i32);
                torus_series_eval(x, y, self.cutoff, |kk| (1.0 + kk).powi(mi), None)
            }
            Manifold::UnitSphere => {
                let dot = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
                let mi = -(self.m as i32);
                legendre_series(dot.clamp(-1.0, 1.0), self.cutoff, |l| {
                    let lam = (l * (l + 1)) as f64;
                    (1.0 + lam).powi(mi) * (2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)
                })
            }
        }
    }
}

/// `φ(x,x)` for the truncated series.
fn diagonal_value(manifold: Manifold, m: u32, cutoff: usize) -> f64 {
    let mi = -(m as i32);
    match manifold {
        Manifold::FlatTorus => {
            let t = cutoff as i64;
            let mut s = 0.0;
            for k1 in -t..=t {
                for k2 in -t..=t {
                    let kk = (k1 * k1 + k2 * k2) as f64;
                    s += (1.0 + kk).powi(mi);
                }
            }
            s
        }
        Manifold::UnitSphere => {
            let mut s = 0.0;
            for l in 0..=cutoff {
                let lam = (l * (l + 1)) as f64;
                s += (1.0 + lam).powi(mi) * (2 * l + 1) as f64 / (4.0 * std::f64::consts::PI);
            }
            s
        }
    }
}

/// Upper bound for the dropped tail of `φ(x,x)` beyond the cutoff.
fn tail_estimate(manifold: Manifold, m: u32, cutoff: usize) -> f64 {
    let mi = -(m as i32);
    let mut tail = 0.0;
    match manifold {
        Manifold::FlatTorus => {
            // Shell |k|∞ = j has 8j entries with |k|² ≥ j².
            let mut j = cutoff as i64 + 1;
            loop {
                let term = 8.0 * j as f64 * (1.0 + (j * j) as f64).powi(mi);
                tail += term;
                if term < 1e-20 * tail.max(1e-300) || j > 10_000_000 {
                    break;
                }
                j += 1;
            }
        }
        Manifold::UnitSphere => {
            let mut l = cutoff + 1;
            loop {
                let lam = (l * (l + 1)) as f64;
                let term = (1.0 + lam).powi(mi) * (2 * l + 1) as f64 / (4.0 * std::f64::consts::PI);
                tail += term;
                if term < 1e-20 * tail.max(1e-300) || l > 10_000_000 {
                    break;
                }
                l += 1;
            }
        }
    }
    tail
}

// ---------------------------------------------------------------------------
// Series evaluation primitives
// ---------------------------------------------------------------------------

/// Torus double series `Σ even(|k|²)·cos(k·Δ) [+ odd(k)·sin(k·Δ)]` with the
/// fixed row-major summation order `k₁` outer, `k₂` inner.  The difference is
/// sign-canonicalized so swapping `x` and `y` gives a bitwise identical even
/// part (and an exactly negated odd part).
pub fn torus_series_eval(
    x: &[f64],
    y: &[f64],
    cutoff: usize,
    even: impl Fn(f64) -> f64,
    odd: Option<&(dyn Fn(i64, i64) -> f64 + Sync)>,
) -> f64 {
    let mut d0 = x[0] - y[0];
    let mut d1 = x[1] - y[1];
    let mut sign = 1.0;
    if d0 < 0.0 || (d0 == 0.0 && d1 < 0.0) {
        d0 = -d0;
        d1 = -d1;
        sign = -1.0;
    }
    let t = cutoff as i64;
    let mut acc = 0.0;
    for k1 in -t..=t {
        let a1 = k1 as f64 * d0;
        for k2 in -t..=t {
            let arg = a1 + k2 as f64 * d1;
            let kk = (k1 * k1 + k2 * k2) as f64;
            acc += even(kk) * arg.cos();
            if let Some(o) = odd {
                acc += sign * o(k1, k2) * arg.sin();
            }
        }
    }
    acc
}

/// `Σ_{ℓ ≤ T} coeff(ℓ)·P_ℓ(t)` by the stable three-term recurrence.
pub fn legendre_series(t: f64, cutoff: usize, coeff: impl Fn(usize) -> f64) -> f64 {
    let mut acc = coeff(0);
    if cutoff == 0 {
        return acc;
    }
    let mut p_prev = 1.0;
    let mut p = t;
    acc += coeff(1) * p;
    for l in 1..cutoff {
        let lf = l as f64;
        let p_next = ((2.0 * lf + 1.0) * t * p - lf * p_prev) / (lf + 1.0);
        p_prev = p;
        p = p_next;
        acc += coeff(l + 1) * p;
    }
    acc
}

// ---------------------------------------------------------------------------
// Regular torus grids
// ---------------------------------------------------------------------------

/// A point set recognized as the full `n×n` torus grid (any point order).
#[derive(Debug, Clone)]
pub struct TorusGrid {
    pub n: usize,
    /// Grid index pair of each point.
    pub idx: Vec<[usize; 2]>,
}

/// Recognize a full square torus grid; coordinates must match
/// `2π·i/n` bitwise (which holds for grids built by this crate).
pub fn detect_torus_grid(set: &PointSet) -> Option<TorusGrid> {
    if set.manifold() != Manifold::FlatTorus {
        return None;
    }
    let count = set.len();
    let n = (count as f64).sqrt().round() as usize;
    if n == 0 || n * n != count {
        return None;
    }
    let mut idx = Vec::with_capacity(count);
    let mut seen = vec![false; count];
    for p in set.iter() {
        let mut ij = [0usize; 2];
        for c in 0..2 {
            let i = (p[c] * n as f64 / TAU).round();
            if !(0.0..(n as f64)).contains(&i) || TAU * i / n as f64 != p[c] {
                return None;
            }
            ij[c] = i as usize;
        }
        let flat = ij[0] * n + ij[1];
        if seen[flat] {
            return None;
        }
        seen[flat] = true;
        idx.push(ij);
    }
    Some(TorusGrid { n, idx })
}

/// Index of each point of `sub` within the grid `fine` (points of `sub` must
/// lie on the fine grid).
fn grid_indices_on(fine_n: usize, sub: &PointSet) -> Option<Vec<[usize; 2]>> {
    let mut idx = Vec::with_capacity(sub.len());
    for p in sub.iter() {
        let mut ij = [0usize; 2];
        for c in 0..2 {
            let i = (p[c] * fine_n as f64 / TAU).round();
            if !(0.0..(fine_n as f64)).contains(&i) || TAU * i / fine_n as f64 != p[c] {
                return None;
            }
            ij[c] = i as usize;
        }
        idx.push(ij);
    }
    Some(idx)
}

/// Difference table `g[d] = Σ even·cos + odd·sin` over the `n×n` difference
/// grid, evaluated once per sign-class so that `g[Δ]` and `g[-Δ]` share the
/// even part bitwise.  Arguments are reduced through an exact index table
/// `cos(2π·j/n)`, so entries of a symmetric matrix filled from this table are
/// equal bitwise.
pub fn torus_difference_table(
    n: usize,
    cutoff: usize,
    even: &(dyn Fn(f64) -> f64 + Sync),
    odd: Option<&(dyn Fn(i64, i64) -> f64 + Sync)>,
) -> Vec<f64> {
    let t = cutoff as i64;
    let cos_tab: Vec<f64> = (0..n).map(|j| (TAU * j as f64 / n as f64).cos()).collect();
    let sin_tab: Vec<f64> = (0..n).map(|j| (TAU * j as f64 / n as f64).sin()).collect();

    // Canonical representatives of the sign classes d ~ -d (mod n).
    let mut classes = Vec::with_capacity(n * n / 2 + 2);
    for d0 in 0..n {
        for d1 in 0..n {
            let f0 = (n - d0) % n;
            let f1 = (n - d1) % n;
            if (d0, d1) <= (f0, f1) {
                classes.push((d0, d1));
            }
        }
    }

    let nn = n as i64;
    let vals = par::map_collect(classes.len(), |ci| {
        let (d0, d1) = classes[ci];
        let fixed = (n - d0) % n == d0 && (n - d1) % n == d1;
        let mut e = 0.0;
        let mut o = 0.0;
        for k1 in -t..=t {
            let base = k1 * d0 as i64;
            for k2 in -t..=t {
                let j = (base + k2 * d1 as i64).rem_euclid(nn) as usize;
                let kk = (k1 * k1 + k2 * k2) as f64;
                e += even(kk) * cos_tab[j];
                if let Some(oc) = odd {
                    o += oc(k1, k2) * sin_tab[j];
                }
            }
        }
        // On self-paired differences the odd part vanishes analytically.
        if fixed {
            o = 0.0;
        }
        (e, o)
    });

    let mut table = vec![0.0; n * n];
    for (&(d0, d1), &(e, o)) in classes.iter().zip(&vals) {
        table[d0 * n + d1] = e + o;
        let f0 = (n - d0) % n;
        let f1 = (n - d1) % n;
        table[f0 * n + f1] = e - o;
    }
    table
}

// ---------------------------------------------------------------------------
// Kernel-type matrices
// ---------------------------------------------------------------------------

/// Dense matrix `M[i,j] = Σ even·cos(k·(rowᵢ - colⱼ)) + odd·sin(...)` on the
/// torus.  Uses the difference table when both sets lie on a common regular
/// grid, otherwise evaluates the series per entry.
pub fn torus_matrix(
    rows: &PointSet,
    cols: &PointSet,
    cutoff: usize,
    even: &(dyn Fn(f64) -> f64 + Sync),
    odd: Option<&(dyn Fn(i64, i64) -> f64 + Sync)>,
) -> Matrix {
    let nr = rows.len();
    let nc = cols.len();

    // Shared-grid fast path: the finer of the two sets must be a full grid
    // containing the other one.
    let fast = detect_torus_grid(if nr >= nc { rows } else { cols }).and_then(|g| {
        let ri = grid_indices_on(g.n, rows)?;
        let ci = grid_indices_on(g.n, cols)?;
        Some((g.n, ri, ci))
    });

    if let Some((n, ri, ci)) = fast {
        let table = torus_difference_table(n, cutoff, even, odd);
        let mut buf = vec![0.0; nr * nc];
        par::fill_rows(&mut buf, nc, |i, row| {
            let [a0, a1] = ri[i];
            for (j, slot) in row.iter_mut().enumerate() {
                let [b0, b1] = ci[j];
                let d0 = (a0 + n - b0) % n;
                let d1 = (a1 + n - b1) % n;
                *slot = table[d0 * n + d1];
            }
        });
        return Matrix::from_shape_vec((nr, nc), buf).expect("shape");
    }

    let same = std::ptr::eq(rows, cols) || rows == cols;
    let mut buf = vec![0.0; nr * nc];
    if same && odd.is_none() {
        // Symmetric: evaluate i ≤ j, mirror.
        let vals: Vec<Vec<f64>> = par::map_collect(nr, |i| {
            (i..nc)
                .map(|j| torus_series_eval(rows.point(i), cols.point(j), cutoff, &even, odd))
                .collect()
        });
        for (i, row) in vals.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                let j = i + off;
                buf[i * nc + j] = v;
                buf[j * nc + i] = v;
            }
        }
    } else {
        par::fill_rows(&mut buf, nc, |i, row| {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = torus_series_eval(rows.point(i), cols.point(j), cutoff, &even, odd);
            }
        });
    }
    Matrix::from_shape_vec((nr, nc), buf).expect("shape")
}

/// Lagrange-basis energy matrix `A = Φ⁻¹GΦ⁻¹` on a full torus grid, computed
/// per frequency class instead of through the dense product.
///
/// On an n×n grid both the collocation matrix `Φ` (coefficients `mu`) and the
/// Gram matrix `G` (coefficients `even`/`odd`) are circulant, so they share
/// the grid DFT as eigenbasis and `A` has per-class eigenvalues
/// `t_g / (n⁴·s_g²)` with `s_g`, `t_g` the aliased coefficient sums over
/// `k ≡ g (mod n)`.  The dense route `CᵀGC` cancels catastrophically once
/// `κ(Φ)` approaches 1/ε (high cutoff on a coarse grid); this synthesis is
/// exact in the same regime.
pub fn torus_grid_stiffness(
    grid: &TorusGrid,
    cutoff: usize,
    mu: &(dyn Fn(f64) -> f64 + Sync),
    even: &(dyn Fn(f64) -> f64 + Sync),
    odd: Option<&(dyn Fn(i64, i64) -> f64 + Sync)>,
) -> Result<Matrix> {
    let n = grid.n;
    let t = cutoff as i64;
    if (t as usize) < n / 2 {
        return Err(MgError::Conditioning(format!(
            "kernel cutoff {cutoff} cannot resolve an {n}×{n} grid"
        )));
    }

    // Aliased class sums over k ≡ g (mod n), g indexed as stored residues.
    let mut s = vec![0.0f64; n * n];
    let mut t_even = vec![0.0f64; n * n];
    let mut t_odd = vec![0.0f64; n * n];
    let nn = n as i64;
    for k1 in -t..=t {
        let g1 = k1.rem_euclid(nn) as usize;
        for k2 in -t..=t {
            let g2 = k2.rem_euclid(nn) as usize;
            let kk = (k1 * k1 + k2 * k2) as f64;
            let g = g1 * n + g2;
            s[g] += mu(kk);
            t_even[g] += even(kk);
            if let Some(oc) = odd {
                t_odd[g] += oc(k1, k2);
            }
        }
    }

    let scale = (n as f64).powi(4);
    let mut w_even = vec![0.0f64; n * n];
    let mut w_odd = vec![0.0f64; n * n];
    for g in 0..n * n {
        if !(s[g] > 0.0) {
            return Err(MgError::Conditioning(format!(
                "kernel class sum vanished on the {n}×{n} grid"
            )));
        }
        let denom = scale * s[g] * s[g];
        w_even[g] = t_even[g] / denom;
        w_odd[g] = t_odd[g] / denom;
    }

    // Difference table over grid offsets, canonicalized by sign class so the
    // even part of `A[Δ]` and `A[-Δ]` is shared bitwise.
    let cos_tab: Vec<f64> = (0..n).map(|j| (TAU * j as f64 / n as f64).cos()).collect();
    let sin_tab: Vec<f64> = (0..n).map(|j| (TAU * j as f64 / n as f64).sin()).collect();
    let mut classes = Vec::with_capacity(n * n / 2 + 2);
    for d0 in 0..n {
        for d1 in 0..n {
            let f0 = (n - d0) % n;
            let f1 = (n - d1) % n;
            if (d0, d1) <= (f0, f1) {
                classes.push((d0, d1));
            }
        }
    }
    let has_odd = odd.is_some();
    let vals = par::map_collect(classes.len(), |ci| {
        let (d0, d1) = classes[ci];
        let fixed = (n - d0) % n == d0 && (n - d1) % n == d1;
        let mut e = 0.0;
        let mut o = 0.0;
        for g1 in 0..n {
            let base = g1 * d0;
            for g2 in 0..n {
                let j = (base + g2 * d1) % n;
                let g = g1 * n + g2;
                e += w_even[g] * cos_tab[j];
                if has_odd {
                    o += w_odd[g] * sin_tab[j];
                }
            }
        }
        if fixed {
            o = 0.0;
        }
        (e, o)
    });
    let mut table = vec![0.0; n * n];
    for (&(d0, d1), &(e, o)) in classes.iter().zip(&vals) {
        table[d0 * n + d1] = e + o;
        let f0 = (n - d0) % n;
        let f1 = (n - d1) % n;
        table[f0 * n + f1] = e - o;
    }

    let count = grid.idx.len();
    let mut buf = vec![0.0; count * count];
    par::fill_rows(&mut buf, count, |i, row| {
        let [a0, a1] = grid.idx[i];
        for (j, slot) in row.iter_mut().enumerate() {
            let [b0, b1] = grid.idx[j];
            let d0 = (a0 + n - b0) % n;
            let d1 = (a1 + n - b1) % n;
            *slot = table[d0 * n + d1];
        }
    });
    Ok(Matrix::from_shape_vec((count, count), buf).expect("shape"))
}

/// Dense matrix `M[i,j] = Σ coeff(ℓ)·P_ℓ(rowᵢ·colⱼ)` on the sphere.
pub fn sphere_matrix(
    rows: &PointSet,
    cols: &PointSet,
    cutoff: usize,
    coeff: &(dyn Fn(usize) -> f64 + Sync),
) -> Matrix {
    let nr = rows.len();
    let nc = cols.len();
    let same = std::ptr::eq(rows, cols) || rows == cols;
    let mut buf = vec![0.0; nr * nc];
    if same {
        let vals: Vec<Vec<f64>> = par::map_collect(nr, |i| {
            let x = rows.point(i);
            (i..nc)
                .map(|j| {
                    let y = cols.point(j);
                    let dot = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
                    legendre_series(dot.clamp(-1.0, 1.0), cutoff, &coeff)
                })
                .collect()
        });
        for (i, row) in vals.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                let j = i + off;
                buf[i * nc + j] = v;
                buf[j * nc + i] = v;
            }
        }
    } else {
        par::fill_rows(&mut buf, nc, |i, row| {
            let x = rows.point(i);
            for (j, slot) in row.iter_mut().enumerate() {
                let y = cols.point(j);
                let dot = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
                *slot = legendre_series(dot.clamp(-1.0, 1.0), cutoff, &coeff);
            }
        });
    }
    Matrix::from_shape_vec((nr, nc), buf).expect("shape")
}

/// Gram matrix of L² inner products of kernel translates,
/// `G₂[i,j] = ⟨φ(·,rowᵢ), φ(·,colⱼ)⟩_{L²}` — the kernel series with squared
/// coefficients (mean-normalized measure on the torus, surface measure on
/// the sphere, matching the energy Gram convention).  `‖Σ w φ(·,ζ)‖_{L²}` is
/// then `√(wᵀG₂w)` without quadrature.
pub fn interpolant_l2_gram(kernel: &SpectralKernel, points: &PointSet) -> Matrix {
    let p2m = -2 * (kernel.m() as i32);
    match kernel.manifold() {
        Manifold::FlatTorus => torus_matrix(
            points,
            points,
            kernel.cutoff(),
            &move |kk| (1.0 + kk).powi(p2m),
            None,
        ),
        Manifold::UnitSphere => sphere_matrix(points, points, kernel.cutoff(), &move |l| {
            let lam = (l * (l + 1)) as f64;
            (1.0 + lam).powi(p2m) * (2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)
        }),
    }
}

/// Collocation matrix `K[i,j] = φ(rowᵢ, colⱼ)`.
pub fn collocation_matrix(kernel: &SpectralKernel, rows: &PointSet, cols: &PointSet) -> Matrix {
    let mi = -(kernel.m() as i32);
    match kernel.manifold() {
        Manifold::FlatTorus => torus_matrix(
            rows,
            cols,
            kernel.cutoff(),
            &move |kk| (1.0 + kk).powi(mi),
            None,
        ),
        Manifold::UnitSphere => sphere_matrix(rows, cols, kernel.cutoff(), &move |l| {
            let lam = (l * (l + 1)) as f64;
            (1.0 + lam).powi(mi) * (2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)
        }),
    }
}

// ---------------------------------------------------------------------------
// Kernel combinations Σ_ζ w_ζ φ(x, ζ) at many evaluation points
// ---------------------------------------------------------------------------

/// Evaluate `s(x) = Σ_ζ w_ζ φ(x, ζ)` at every point of `xs`.
///
/// Torus: the centers are folded into Fourier data
/// `Ŵ(k) = Σ_ζ w_ζ e^{-ik·ζ}` once, then each evaluation costs one pass over
/// the frequency square — this is what makes dense probe sampling affordable.
/// Sphere: direct Legendre sums per pair.
pub fn eval_combination(
    kernel: &SpectralKernel,
    centers: &PointSet,
    weights: &[f64],
    xs: &PointSet,
) -> Result<Vec<f64>> {
    if centers.manifold() != kernel.manifold() || xs.manifold() != kernel.manifold() {
        return Err(MgError::ManifoldMismatch(
            "combination evaluation mixes manifolds".into(),
        ));
    }
    if weights.len() != centers.len() {
        return Err(MgError::Dimension(format!(
            "{} weights for {} centers",
            weights.len(),
            centers.len()
        )));
    }
    match kernel.manifold() {
        Manifold::FlatTorus => Ok(torus_combination(kernel, centers, weights, xs)),
        Manifold::UnitSphere => {
            let mi = -(kernel.m() as i32);
            let coeff = move |l: usize| {
                let lam = (l * (l + 1)) as f64;
                (1.0 + lam).powi(mi) * (2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)
            };
            let cutoff = kernel.cutoff();
            Ok(par::map_collect(xs.len(), |xi| {
                let x = xs.point(xi);
                let mut acc = 0.0;
                for (w, z) in weights.iter().zip(centers.iter()) {
                    let dot = x[0] * z[0] + x[1] * z[1] + x[2] * z[2];
                    acc += w * legendre_series(dot.clamp(-1.0, 1.0), cutoff, coeff);
                }
                acc
            }))
        }
    }
}

/// Rotation table `e^{i·s·k·a}` for `k = 0..=t` (`s = ±1`), interleaved re/im.
fn rotations(a: f64, s: f64, t: usize) -> Vec<f64> {
    let (sin, cos) = (s * a).sin_cos();
    let mut out = Vec::with_capacity(2 * (t + 1));
    let mut re = 1.0;
    let mut im = 0.0;
    out.push(re);
    out.push(im);
    for _ in 0..t {
        let nre = re * cos - im * sin;
        let nim = re * sin + im * cos;
        re = nre;
        im = nim;
        out.push(re);
        out.push(im);
    }
    out
}

#[inline]
fn rot_get(tab: &[f64], k: i64) -> (f64, f64) {
    let a = k.unsigned_abs() as usize;
    let (re, im) = (tab[2 * a], tab[2 * a + 1]);
    if k < 0 {
        (re, -im)
    } else {
        (re, im)
    }
}

fn torus_combination(
    kernel: &SpectralKernel,
    centers: &PointSet,
    weights: &[f64],
    xs: &PointSet,
) -> Vec<f64> {
    let t = kernel.cutoff();
    let side = 2 * t + 1;
    let ti = t as i64;

    // Ŵ(k) = Σ_ζ w_ζ e^{-ik·ζ}, chunk-merged deterministically.
    let what = par::accumulate_vec(centers.len(), 2 * side * side, |ci, acc| {
        let z = centers.point(ci);
        let w = weights[ci];
        if w == 0.0 {
            return;
        }
        let r1 = rotations(z[0], -1.0, t);
        let r2 = rotations(z[1], -1.0, t);
        let mut slot = 0;
        for k1 in -ti..=ti {
            let (a, b) = rot_get(&r1, k1);
            let (wa, wb) = (w * a, w * b);
            for k2 in -ti..=ti {
                let (c, d) = rot_get(&r2, k2);
                acc[slot] += wa * c - wb * d;
                acc[slot + 1] += wa * d + wb * c;
                slot += 2;
            }
        }
    });

    // Premultiply the kernel coefficients.
    let mi = -(kernel.m() as i32);
    let mut wc = what;
    {
        let mut slot = 0;
        for k1 in -ti..=ti {
            for k2 in -ti..=ti {
                let coeff = (1.0 + (k1 * k1 + k2 * k2) as f64).powi(mi);
                wc[slot] *= coeff;
                wc[slot + 1] *= coeff;
                slot += 2;
            }
        }
    }

    // s(x) = Σ_k Re(Ŵc(k) e^{ik·x}).
    par::map_collect(xs.len(), |xi| {
        let x = xs.point(xi);
        let r1 = rotations(x[0], 1.0, t);
        let r2 = rotations(x[1], 1.0, t);
        let mut acc = 0.0;
        let mut slot = 0;
        for k1 in -ti..=ti {
            let (a, b) = rot_get(&r1, k1);
            for k2 in -ti..=ti {
                let (c, d) = rot_get(&r2, k2);
                // Re((a+ib)(c+id)) pairs with Ŵc.
                let er = a * c - b * d;
                let ei = a * d + b * c;
                acc += wc[slot] * er - wc[slot + 1] * ei;
                slot += 2;
            }
        }
        acc
    })
}

// ---------------------------------------------------------------------------
// Lagrange bases (coefficients, evaluation, caching) live in `basis`.
// ---------------------------------------------------------------------------

/// Solve `K C = I` for the Lagrange coefficients of `kernel` on `points`.
/// Exposed for reuse by [`crate::basis`].
pub(crate) fn lagrange_coefficients(
    kernel: &SpectralKernel,
    points: &PointSet,
) -> Result<(Matrix, f64)> {
    let k = collocation_matrix(kernel, points, points);
    linalg::inverse_spd_refined(&k, 1e-11, 4)
}
