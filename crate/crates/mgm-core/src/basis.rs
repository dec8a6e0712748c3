//! Lagrange (cardinal) bases of kernel translates.
//!
//! On a node set Ξ the basis functions `χ_ξ = Σ_ζ C[ζ,ξ] φ(·,ζ)` satisfy
//! `χ_ξ(η) = δ_{ξη}`; the coefficient matrix solves `K C = I` against the
//! collocation matrix.  Collocation matrices of smooth kernels are brutally
//! ill-conditioned, so the inverse is Newton-refined until the cardinality
//! defect `max |K C − I|` clears [`kernels::CARDINALITY_TOL`].

use std::io::{Read as _, Write as _};
use std::path::Path;

use crate::error::{MgError, Result};
use crate::geometry::{self, geodesic_distance, Manifold, MeshStats, PointSet};
use crate::kernels::{self, SpectralKernel, CARDINALITY_TOL};
use crate::linalg;
use crate::Matrix;

#[derive(Debug, Clone)]
pub struct LagrangeBasis {
    kernel: SpectralKernel,
    points: PointSet,
    coeffs: Matrix,
    cardinality_defect: f64,
}

impl LagrangeBasis {
    /// Solve for the cardinal coefficients on `points`.
    pub fn compute(kernel: SpectralKernel, points: PointSet) -> Result<Self> {
        if points.manifold() != kernel.manifold() {
            return Err(MgError::ManifoldMismatch(format!(
                "kernel on {} cannot interpolate on {}",
                kernel.manifold().name(),
                points.manifold().name()
            )));
        }
        if points.is_empty() {
            return Err(MgError::Domain("empty node set".into()));
        }
        if points.len() > 1 {
            // Coincident nodes make K exactly singular; fail with the pair.
            geometry::min_pair_distance(&points)?;
        }
        let (coeffs, cardinality_defect) = kernels::lagrange_coefficients(&kernel, &points)?;
        let basis = Self {
            kernel,
            points,
            coeffs,
            cardinality_defect,
        };
        basis.check_defect()?;
        Ok(basis)
    }

    fn check_defect(&self) -> Result<()> {
        if !(self.cardinality_defect <= CARDINALITY_TOL) {
            return Err(MgError::Conditioning(format!(
                "cardinality defect {:.3e} exceeds {CARDINALITY_TOL:.0e} on {} nodes",
                self.cardinality_defect,
                self.points.len()
            )));
        }
        Ok(())
    }

    pub fn kernel(&self) -> &SpectralKernel {
        &self.kernel
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    /// Coefficients `C` with `χ_ξ = Σ_ζ C[ζ,ξ] φ(·,ζ)` (columns index ξ).
    pub fn coeffs(&self) -> &Matrix {
        &self.coeffs
    }

    pub fn cardinality_defect(&self) -> f64 {
        self.cardinality_defect
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `χ_ξ` at every point of `xs`.
    pub fn eval_many(&self, xi: usize, xs: &PointSet) -> Result<Vec<f64>> {
        if xi >= self.len() {
            return Err(MgError::Dimension(format!(
                "basis index {xi} out of range 0..{}",
                self.len()
            )));
        }
        let weights = self.coeffs.column(xi).to_vec();
        kernels::eval_combination(&self.kernel, &self.points, &weights, xs)
    }

    /// `χ_ξ(x)` at a single point.
    pub fn eval(&self, xi: usize, x: &[f64]) -> Result<f64> {
        let xs = PointSet::new(self.kernel.manifold(), x.to_vec())?;
        Ok(self.eval_many(xi, &xs)?[0])
    }

    /// Evaluate the interpolant with nodal values `values` at every point of
    /// `xs` — a single spectral pass with combined weights `C·values`.
    pub fn interpolant_at(&self, values: &[f64], xs: &PointSet) -> Result<Vec<f64>> {
        if values.len() != self.len() {
            return Err(MgError::Dimension(format!(
                "{} nodal values for {} nodes",
                values.len(),
                self.len()
            )));
        }
        let v = ndarray::ArrayView1::from(values);
        let weights = self.coeffs.dot(&v).to_vec();
        kernels::eval_combination(&self.kernel, &self.points, &weights, xs)
    }

    /// Dense evaluation matrix `E[p,ξ] = χ_ξ(x_p)` (`Φ_{xs×Ξ}·C`).
    /// Quadratic in the node count — intended for modest sizes.
    pub fn evaluation_matrix(&self, xs: &PointSet) -> Result<Matrix> {
        if xs.manifold() != self.kernel.manifold() {
            return Err(MgError::ManifoldMismatch(
                "evaluation points on the wrong manifold".into(),
            ));
        }
        let phi = kernels::collocation_matrix(&self.kernel, xs, &self.points);
        Ok(phi.dot(&self.coeffs))
    }
}

// ---------------------------------------------------------------------------
// Decay profiles
// ---------------------------------------------------------------------------

/// Least-squares fit of `ln|χ_ξ(x)|` against `dist(x,ξ)/h`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_samples: usize,
    /// Smallest and largest `|χ|` that entered the fit.
    pub sample_range: (f64, f64),
}

/// Fit the exponential decay of basis function `xi` on a dense probe set
/// sized from the mesh statistics (4× the nodal resolution per axis).
pub fn decay_profile(basis: &LagrangeBasis, xi: usize, stats: &MeshStats) -> Result<DecayFit> {
    let n = basis.len();
    let manifold = basis.kernel().manifold();
    let sample = match manifold {
        Manifold::FlatTorus => {
            let side = (n as f64).sqrt().ceil() as usize;
            geometry::dense_sample(manifold, (4 * side.max(1)).min(256))?
        }
        Manifold::UnitSphere => {
            let mut sub = 0;
            while geometry::icosphere_count(sub) < 4 * n && sub < 6 {
                sub += 1;
            }
            geometry::dense_sample(manifold, sub)?
        }
    };
    decay_profile_on(basis, xi, &sample, stats.h)
}

/// Fit the exponential decay of basis function `xi` over `sample`, with
/// distances scaled by the fill distance `h`.  Samples with `|χ|` outside
/// `[1e-12, 1]` are discarded (numerical noise below, impossible above).
///
/// The decay claim is an upper envelope — the rate constant depends on the
/// direction, so a raw point-cloud fit mixes fast and slow directions and
/// understates the correlation.  The fit therefore bins the samples by
/// distance and regresses the per-bin maximum.
pub fn decay_profile_on(
    basis: &LagrangeBasis,
    xi: usize,
    sample: &PointSet,
    h: f64,
) -> Result<DecayFit> {
    if !(h > 0.0) {
        return Err(MgError::Domain(format!("fill distance must be positive, got {h}")));
    }
    let values = basis.eval_many(xi, sample)?;
    let center = basis.points().point(xi);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (p, &v) in sample.iter().zip(&values) {
        let a = v.abs();
        if !(1e-12..=1.0).contains(&a) {
            continue;
        }
        let d = geodesic_distance(basis.kernel().manifold(), p, center)?;
        xs.push(d / h);
        ys.push(a.ln());
        lo = lo.min(a);
        hi = hi.max(a);
    }
    if xs.len() < 8 {
        return Err(MgError::InsufficientData(format!(
            "only {} usable decay samples (need ≥ 8)",
            xs.len()
        )));
    }

    const BINS: usize = 24;
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (x_max - x_min) / BINS as f64;
    let (bx, by) = if width > 0.0 {
        let mut env = vec![f64::NEG_INFINITY; BINS];
        for (&x, &y) in xs.iter().zip(&ys) {
            let b = (((x - x_min) / width) as usize).min(BINS - 1);
            env[b] = env[b].max(y);
        }
        let mut bx = Vec::new();
        let mut by = Vec::new();
        for (b, &y) in env.iter().enumerate() {
            if y.is_finite() {
                bx.push(x_min + (b as f64 + 0.5) * width);
                by.push(y);
            }
        }
        (bx, by)
    } else {
        (Vec::new(), Vec::new())
    };
    // Too few distinct distances for an envelope: fall back to the cloud.
    let fit = if bx.len() >= 6 {
        linalg::fit_line(&bx, &by)?
    } else {
        linalg::fit_line(&xs, &ys)?
    };
    Ok(DecayFit {
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        n_samples: fit.n,
        sample_range: (lo, hi),
    })
}

// ---------------------------------------------------------------------------
// Coefficient cache (binary, versioned)
// ---------------------------------------------------------------------------

const CACHE_MAGIC: &[u8; 4] = b"LAGB";
const CACHE_VERSION: u32 = 1;

fn manifold_tag(m: Manifold) -> u8 {
    match m {
        Manifold::UnitSphere => 0,
        Manifold::FlatTorus => 1,
    }
}

fn tag_manifold(t: u8) -> Result<Manifold> {
    match t {
        0 => Ok(Manifold::UnitSphere),
        1 => Ok(Manifold::FlatTorus),
        other => Err(MgError::Format(format!("unknown manifold tag {other}"))),
    }
}

/// Write the coefficient matrix with a validated header.  The write goes
/// through a sibling temp file and a rename, so a crash cannot leave a
/// half-written cache behind.
pub fn write_basis_cache(path: &Path, basis: &LagrangeBasis) -> Result<()> {
    let n = basis.len() as u32;
    let mut buf = Vec::with_capacity(16 + 8 * basis.len() * basis.len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&basis.kernel().m().to_le_bytes());
    buf.push(manifold_tag(basis.kernel().manifold()));
    for &v in basis.coeffs().iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = path.with_extension("lagb.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisCacheHeader {
    pub n: usize,
    pub m: u32,
    pub manifold: Manifold,
}

/// Read a cache file back; errors on bad magic, version, or length.
pub fn read_basis_cache(path: &Path) -> Result<(BasisCacheHeader, Matrix)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 17 {
        return Err(MgError::Format("cache file shorter than its header".into()));
    }
    if &bytes[0..4] != CACHE_MAGIC {
        return Err(MgError::Format("bad cache magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(MgError::Format(format!(
            "cache version {version}, expected {CACHE_VERSION}"
        )));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let m = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let manifold = tag_manifold(bytes[16])?;
    let expected = 17 + 8 * n * n;
    if bytes.len() != expected {
        return Err(MgError::Format(format!(
            "cache holds {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(n * n);
    for chunk in bytes[17..].chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let coeffs = Matrix::from_shape_vec((n, n), data).expect("shape");
    Ok((BasisCacheHeader { n, m, manifold }, coeffs))
}

/// Rebuild a basis from a cache if the header matches `kernel` and `points`
/// and the cached coefficients still satisfy the cardinality gate (verified
/// against a freshly assembled collocation matrix).  A stale or mismatched
/// cache yields `Ok(None)`; a corrupt file is an error.
pub fn load_cached_basis(
    path: &Path,
    kernel: SpectralKernel,
    points: &PointSet,
) -> Result<Option<LagrangeBasis>> {
    if !path.exists() {
        return Ok(None);
    }
    let (header, coeffs) = read_basis_cache(path)?;
    if header.n != points.len()
        || header.m != kernel.m()
        || header.manifold != kernel.manifold()
    {
        return Ok(None);
    }
    let k = kernels::collocation_matrix(&kernel, points, points);
    let defect = linalg::residual_defect(&k, &coeffs);
    if !(defect <= CARDINALITY_TOL) {
        return Ok(None);
    }
    Ok(Some(LagrangeBasis {
        kernel,
        points: points.clone(),
        coeffs,
        cardinality_defect: defect,
    }))
}
