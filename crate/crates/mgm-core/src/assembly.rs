//! Galerkin assembly: energy Gram matrices, stiffness systems, load vectors,
//! and the intergrid transfer operators.
//!
//! The bilinear form of `ℒu = -Δu + a·∇u + c·u` acts on kernel translates
//! spectrally, so Gram entries are again lattice/Legendre series — with the
//! coefficient law `(λ + c)(1+λ)^{-2m}` plus, on the torus, a skew `sin`
//! part `(a·k)(1+|k|²)^{-2m}` for the advection term.  Stiffness matrices are
//! `A = Cᵀ G C` over the Lagrange coefficients `C`.

use std::io::Write as _;
use std::path::Path;


use crate::basis::{self, LagrangeBasis};
use crate::error::{MgError, Result};
use crate::geometry::{Manifold, MeshStats, PointHierarchy, PointSet, QuadratureRule};
use crate::kernels::{self, SpectralKernel};
use crate::linalg;
use crate::par;
use crate::{Matrix, Vector};

/// Fixed seed for the damping-factor power iteration.
const DAMPING_SEED: u64 = 0x0da3_71e6;

/// Fallback damping when the spectral estimate is unusable.
const DAMPING_FALLBACK: f64 = 0.8;

/// The elliptic operator `ℒu = -Δu + a·∇u + c·u`.
///
/// `c > 0` keeps the form coercive.  The constant advection field `a` is only
/// meaningful on the torus (constant vector fields on the sphere are not
/// tangent); it makes the problem non-symmetric but leaves it coercive.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EllipticOperator {
    pub c: f64,
    #[serde(default)]
    pub advection: Option<[f64; 2]>,
}

impl Default for EllipticOperator {
    fn default() -> Self {
        Self {
            c: 1.0,
            advection: None,
        }
    }
}

impl EllipticOperator {
    pub fn new(c: f64) -> Result<Self> {
        let op = Self { c, advection: None };
        op.validate(Manifold::FlatTorus)?;
        Ok(op)
    }

    pub fn with_advection(c: f64, a: [f64; 2]) -> Result<Self> {
        let op = Self {
            c,
            advection: Some(a),
        };
        op.validate(Manifold::FlatTorus)?;
        Ok(op)
    }

    pub fn validate(&self, manifold: Manifold) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(MgError::Domain(format!(
                "reaction coefficient c must be positive, got {}",
                self.c
            )));
        }
        if let Some(a) = self.advection {
            if manifold != Manifold::FlatTorus {
                return Err(MgError::Domain(
                    "constant advection is only supported on the torus".into(),
                ));
            }
            if !a[0].is_finite() || !a[1].is_finite() {
                return Err(MgError::Domain("advection coefficients must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn is_symmetric(&self) -> bool {
        match self.advection {
            None => true,
            Some(a) => a == [0.0, 0.0],
        }
    }
}

/// Normalization of the volume measure implied by the Gram coefficient law:
/// the torus series corresponds to the mean-normalized measure `dx/(4π²)`,
/// the sphere series to the surface measure itself.  Load vectors and inner
/// products must use the same normalization as the Gram matrix.
pub fn measure_normalization(manifold: Manifold) -> f64 {
    match manifold {
        Manifold::FlatTorus => 1.0 / manifold.volume(),
        Manifold::UnitSphere => 1.0,
    }
}

/// Energy Gram matrix `G[ξ,ζ] = a(φ(·,ζ), φ(·,ξ))` of kernel translates.
pub fn energy_gram(
    op: &EllipticOperator,
    kernel: &SpectralKernel,
    points: &PointSet,
) -> Result<Matrix> {
    op.validate(points.manifold())?;
    if points.manifold() != kernel.manifold() {
        return Err(MgError::ManifoldMismatch(
            "Gram matrix mixes kernel and point manifolds".into(),
        ));
    }
    let c = op.c;
    let p2m = -2 * kernel.m() as i32;
    match kernel.manifold() {
        Manifold::FlatTorus => {
            let even = move |kk: f64| (kk + c) * (1.0 + kk).powi(p2m);
            let advect = op.advection.filter(|a| *a != [0.0, 0.0]);
            let odd_fn;
            let odd: Option<&(dyn Fn(i64, i64) -> f64 + Sync)> = match advect {
                Some(a) => {
                    odd_fn = move |k1: i64, k2: i64| {
                        let kk = (k1 * k1 + k2 * k2) as f64;
                        (a[0] * k1 as f64 + a[1] * k2 as f64) * (1.0 + kk).powi(p2m)
                    };
                    Some(&odd_fn)
                }
                None => None,
            };
            Ok(kernels::torus_matrix(points, points, kernel.cutoff(), &even, odd))
        }
        Manifold::UnitSphere => {
            let coeff = move |l: usize| {
                let lam = (l * (l + 1)) as f64;
                (lam + c) * (1.0 + lam).powi(p2m) * (2 * l + 1) as f64
                    / (4.0 * std::f64::consts::PI)
            };
            Ok(kernels::sphere_matrix(points, points, kernel.cutoff(), &coeff))
        }
    }
}

/// Pointwise energy Gram value `a(φ(·,y), φ(·,x))` — one entry of
/// [`energy_gram`] without assembling a matrix.
pub fn energy_gram_eval(
    op: &EllipticOperator,
    kernel: &SpectralKernel,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    op.validate(kernel.manifold())?;
    let w = kernel.manifold().coord_len();
    if x.len() != w || y.len() != w {
        return Err(MgError::Dimension(format!(
            "points of length {} and {} on {}",
            x.len(),
            y.len(),
            kernel.manifold().name()
        )));
    }
    let c = op.c;
    let p2m = -2 * kernel.m() as i32;
    match kernel.manifold() {
        Manifold::FlatTorus => {
            let advect = op.advection.filter(|a| *a != [0.0, 0.0]);
            let odd_fn;
            let odd: Option<&(dyn Fn(i64, i64) -> f64 + Sync)> = match advect {
                Some(a) => {
                    odd_fn = move |k1: i64, k2: i64| {
                        let kk = (k1 * k1 + k2 * k2) as f64;
                        (a[0] * k1 as f64 + a[1] * k2 as f64) * (1.0 + kk).powi(p2m)
                    };
                    Some(&odd_fn)
                }
                None => None,
            };
            Ok(kernels::torus_series_eval(
                x,
                y,
                kernel.cutoff(),
                |kk| (kk + c) * (1.0 + kk).powi(p2m),
                odd,
            ))
        }
        Manifold::UnitSphere => {
            let dot = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
            Ok(kernels::legendre_series(
                dot.clamp(-1.0, 1.0),
                kernel.cutoff(),
                |l| {
                    let lam = (l * (l + 1)) as f64;
                    (lam + c) * (1.0 + lam).powi(p2m) * (2 * l + 1) as f64
                        / (4.0 * std::f64::consts::PI)
                },
            ))
        }
    }
}

/// One assembled level: stiffness, Jacobi data, damping.
#[derive(Debug, Clone)]
pub struct LevelSystem {
    pub a: Matrix,
    /// Diagonal of `A` (the Jacobi preconditioner).
    pub diag: Vector,
    /// Damping factor `θ` for the smoother `id - θ B⁻¹A`.
    pub theta: f64,
    /// False when the spectral estimate failed and the fallback was used.
    pub theta_converged: bool,
}

/// Stiffness system `A = Cᵀ G C` on the nodes of `basis`, with the damping
/// factor chosen from the estimated top eigenvalue of `B^{-1/2} A B^{-1/2}`.
///
/// On full torus grids the product is synthesized per frequency class
/// ([`kernels::torus_grid_stiffness`]); the dense triple product loses every
/// significant digit there once the collocation conditioning nears 1/ε.
pub fn assemble_stiffness(op: &EllipticOperator, basis: &LagrangeBasis) -> Result<LevelSystem> {
    op.validate(basis.points().manifold())?;
    let mut a = match torus_grid_system(op, basis) {
        Some(a) => a?,
        None => {
            let gram = energy_gram(op, basis.kernel(), basis.points())?;
            let c = basis.coeffs();
            c.t().dot(&gram.dot(c))
        }
    };
    if op.is_symmetric() {
        // G is exactly symmetric entrywise but the two matrix products are
        // not; restore symmetry so downstream eigensolves see it.  (The grid
        // route is symmetric bitwise already; this is then a no-op.)
        let n = a.nrows();
        for i in 0..n {
            for j in 0..i {
                let s = 0.5 * (a[[i, j]] + a[[j, i]]);
                a[[i, j]] = s;
                a[[j, i]] = s;
            }
        }
    }
    let diag = a.diag().to_owned();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(MgError::Conditioning(
            "stiffness diagonal has non-positive entries".into(),
        ));
    }
    let (theta, theta_converged) = select_damping(&a, &diag);
    Ok(LevelSystem {
        a,
        diag,
        theta,
        theta_converged,
    })
}

/// Class-sum stiffness when the node set is a full torus grid; `None` when
/// the generic dense product must be used.
fn torus_grid_system(op: &EllipticOperator, basis: &LagrangeBasis) -> Option<Result<Matrix>> {
    let grid = kernels::detect_torus_grid(basis.points())?;
    let kernel = basis.kernel();
    let c = op.c;
    let mi = -(kernel.m() as i32);
    let p2m = 2 * mi;
    let mu = move |kk: f64| (1.0 + kk).powi(mi);
    let even = move |kk: f64| (kk + c) * (1.0 + kk).powi(p2m);
    let advect = op.advection.filter(|a| *a != [0.0, 0.0]);
    let odd_fn;
    let odd: Option<&(dyn Fn(i64, i64) -> f64 + Sync)> = match advect {
        Some(a) => {
            odd_fn = move |k1: i64, k2: i64| {
                let kk = (k1 * k1 + k2 * k2) as f64;
                (a[0] * k1 as f64 + a[1] * k2 as f64) * (1.0 + kk).powi(p2m)
            };
            Some(&odd_fn)
        }
        None => None,
    };
    Some(kernels::torus_grid_stiffness(
        &grid,
        kernel.cutoff(),
        &mu,
        &even,
        odd,
    ))
}

/// Damping factor for the Jacobi smoother: 100 seeded power-iteration steps
/// estimate the dominant eigenvalue of `B^{-1/2} A B^{-1/2}`, then
/// `θ = 0.9/λ̂` clamped to (0,1).  If the estimate has not settled to
/// relative 1e−6 the safety factor drops to 0.8 and the returned flag is
/// false.
pub fn select_damping(a: &Matrix, diag: &Vector) -> (f64, bool) {
    let n = a.nrows();
    let dinv_sqrt: Vector = diag.mapv(|d| 1.0 / d.sqrt());
    let est = linalg::power_iteration(
        n,
        |v| {
            let scaled = v * &dinv_sqrt;
            let av = a.dot(&scaled);
            av * &dinv_sqrt
        },
        100,
        1e-6,
        DAMPING_SEED,
    );
    damping_decision(&est)
}

/// [`select_damping`] over a dense-or-sparse operator — identical seed,
/// iteration budget, and arithmetic, so a dense operator gives a bitwise
/// identical θ.
pub fn select_damping_op(a: &crate::multigrid::LinOp, diag: &Vector) -> (f64, bool) {
    let n = a.nrows();
    let dinv_sqrt: Vector = diag.mapv(|d| 1.0 / d.sqrt());
    let est = linalg::power_iteration(
        n,
        |v| {
            let scaled = v * &dinv_sqrt;
            let av = a.apply(&scaled);
            av * &dinv_sqrt
        },
        100,
        1e-6,
        DAMPING_SEED,
    );
    damping_decision(&est)
}

fn damping_decision(est: &linalg::PowerEstimate) -> (f64, bool) {
    if est.value.is_finite() && est.value > 0.0 {
        let safety = if est.converged { 0.9 } else { DAMPING_FALLBACK };
        let theta = (safety / est.value).clamp(f64::MIN_POSITIVE, 1.0 - 1e-12);
        return (theta, est.converged);
    }
    (DAMPING_FALLBACK, false)
}

/// Load vector `b[ξ] = (f, χ_ξ)` under the same measure normalization as the
/// Gram matrix.  The quadrature is folded into kernel space once
/// (`v[ζ] = Σ_q w_q f(x_q) φ(x_q, ζ)`, then `b = norm · Cᵀ v`), so the cost
/// is one spectral pass instead of a dense node×quadrature evaluation.
pub fn assemble_load<F>(basis: &LagrangeBasis, f: F, quad: &QuadratureRule) -> Result<Vector>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let manifold = basis.kernel().manifold();
    if quad.nodes.manifold() != manifold {
        return Err(MgError::ManifoldMismatch(
            "quadrature rule on the wrong manifold".into(),
        ));
    }
    let w = manifold.coord_len();
    let coords = quad.nodes.coords();
    let fw = par::map_collect(quad.weights.len(), |q| {
        quad.weights[q] * f(&coords[q * w..(q + 1) * w])
    });
    let v = kernels::eval_combination(basis.kernel(), &quad.nodes, &fw, basis.points())?;
    let v = Vector::from_vec(v);
    let b = basis.coeffs().t().dot(&v) * measure_normalization(manifold);
    Ok(b)
}

/// Prolongation `P[η,ξ] = χ^{coarse}_ξ(η)` for all fine nodes η: the coarse
/// Lagrange basis evaluated on the fine set (`Φ_{fine×coarse} C_coarse`).
/// The coarse nodes must be a verbatim prefix of the fine nodes.
pub fn build_prolongation(fine: &PointSet, coarse: &LagrangeBasis) -> Result<Matrix> {
    let nc = coarse.len();
    if fine.len() < nc {
        return Err(MgError::Nesting(format!(
            "fine level has {} nodes, coarse has {nc}",
            fine.len()
        )));
    }
    if fine.manifold() != coarse.kernel().manifold() {
        return Err(MgError::ManifoldMismatch(
            "prolongation mixes manifolds".into(),
        ));
    }
    for i in 0..nc {
        if fine.point(i) != coarse.points().point(i) {
            return Err(MgError::Nesting(format!(
                "coarse node {i} is not a prefix entry of the fine level"
            )));
        }
    }
    let phi = kernels::collocation_matrix(coarse.kernel(), fine, coarse.points());
    Ok(phi.dot(coarse.coeffs()))
}

/// Everything assembled on one level of a hierarchy.
#[derive(Debug, Clone)]
pub struct AssembledLevel {
    pub basis: LagrangeBasis,
    pub stats: MeshStats,
    pub system: LevelSystem,
    /// Prolongation from the previous (coarser) level; `None` on level 0.
    pub prolongation: Option<Matrix>,
}

impl AssembledLevel {
    pub fn n(&self) -> usize {
        self.basis.len()
    }
}

/// A fully assembled multilevel Galerkin hierarchy sharing one kernel.
#[derive(Debug, Clone)]
pub struct AssembledHierarchy {
    pub manifold: Manifold,
    pub op: EllipticOperator,
    pub kernel: SpectralKernel,
    pub levels: Vec<AssembledLevel>,
}

impl AssembledHierarchy {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn finest(&self) -> &AssembledLevel {
        self.levels.last().expect("non-empty hierarchy")
    }
}

/// Assemble every level of `hierarchy` for the operator `op` with smoothness
/// exponent `m`.  One kernel — sized by the finest fill distance — serves the
/// whole hierarchy, which is what makes the coarse native spaces nested
/// subspaces of the fine one.
///
/// `cache_dir`, when given, is scanned for previously computed Lagrange
/// coefficients (`level{ℓ}.lagb`) and refreshed after any recompute.
pub fn assemble_hierarchy(
    op: &EllipticOperator,
    hierarchy: &PointHierarchy,
    m: u32,
    cache_dir: Option<&Path>,
) -> Result<AssembledHierarchy> {
    op.validate(hierarchy.manifold)?;
    if hierarchy.levels.is_empty() {
        return Err(MgError::Domain("empty hierarchy".into()));
    }
    let h_fine = hierarchy.stats.last().expect("stats per level").h;
    let kernel = SpectralKernel::for_fill_distance(hierarchy.manifold, m, h_fine)?;

    let mut levels: Vec<AssembledLevel> = Vec::with_capacity(hierarchy.levels.len());
    for (l, (points, stats)) in hierarchy
        .levels
        .iter()
        .zip(&hierarchy.stats)
        .enumerate()
    {
        let cache_path = cache_dir.map(|d| d.join(format!("level{l}.lagb")));
        let mut basis = None;
        if let Some(p) = &cache_path {
            basis = basis::load_cached_basis(p, kernel, points)?;
        }
        let basis = match basis {
            Some(b) => b,
            None => {
                let b = LagrangeBasis::compute(kernel, points.clone())?;
                if let Some(p) = &cache_path {
                    basis::write_basis_cache(p, &b)?;
                }
                b
            }
        };
        let system = assemble_stiffness(op, &basis)?;
        let prolongation = match levels.last() {
            Some(coarse) => Some(build_prolongation(points, &coarse.basis)?),
            None => None,
        };
        levels.push(AssembledLevel {
            basis,
            stats: *stats,
            system,
            prolongation,
        });
    }
    Ok(AssembledHierarchy {
        manifold: hierarchy.manifold,
        op: *op,
        kernel,
        levels,
    })
}

// ---------------------------------------------------------------------------
// Dense matrix export
// ---------------------------------------------------------------------------

/// Binary dense-matrix format: magic `DMAT`, `rows` and `cols` as little
/// endian u32, then row-major f64 payload.
pub fn write_dense_matrix(path: &Path, a: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 8 * a.len());
    buf.extend_from_slice(b"DMAT");
    buf.extend_from_slice(&(a.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(a.ncols() as u32).to_le_bytes());
    for &v in a.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = path.with_extension("dmat.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a `DMAT` file back.
pub fn read_dense_matrix(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"DMAT" {
        return Err(MgError::Format("not a DMAT file".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 8 * rows * cols;
    if bytes.len() != expected {
        return Err(MgError::Format(format!(
            "DMAT holds {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for chunk in bytes[12..].chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(Matrix::from_shape_vec((rows, cols), data).expect("shape"))
}

/// Plain CSV export (one row per line, `{:.17e}` entries — round-trip exact).
pub fn write_matrix_csv(path: &Path, a: &Matrix) -> Result<()> {
    let mut out = String::new();
    for row in a.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str(&format!("{v:.17e}"));
        }
        out.push('\n');
    }
    let tmp = path.with_extension("csv.tmp");
    std::fs::write(&tmp, out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
