//! Manifolds, point sets, nested hierarchies and quadrature.
//!
//! Two compact surfaces are supported: the unit sphere `S²` (points stored as
//! unit 3-vectors) and the flat torus `T² = [0,2π)²` (points stored as angle
//! pairs, one period per axis).  Hierarchies are nested coarse-first: level
//! `ℓ-1` is literally the leading prefix of level `ℓ`.

use crate::error::{MgError, Result};
use crate::par;
use std::collections::HashMap;
use std::f64::consts::PI;

pub const TAU: f64 = 2.0 * PI;

/// Hard cap on points per hierarchy level (memory guard).
pub const MAX_POINTS: usize = 66_000;

/// Tolerance for the on-surface check of sphere points.
const ON_SPHERE_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Manifolds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Manifold {
    #[serde(rename = "sphere")]
    UnitSphere,
    #[serde(rename = "torus")]
    FlatTorus,
}

impl Manifold {
    /// Intrinsic dimension (both surfaces are two-dimensional).
    pub fn dim(self) -> usize {
        2
    }

    /// Number of stored coordinates per point.
    pub fn coord_len(self) -> usize {
        match self {
            Manifold::UnitSphere => 3,
            Manifold::FlatTorus => 2,
        }
    }

    /// Geodesic diameter.
    pub fn diameter(self) -> f64 {
        match self {
            Manifold::UnitSphere => PI,
            Manifold::FlatTorus => PI * std::f64::consts::SQRT_2,
        }
    }

    /// Surface measure of the whole manifold.
    pub fn volume(self) -> f64 {
        match self {
            Manifold::UnitSphere => 4.0 * PI,
            Manifold::FlatTorus => TAU * TAU,
        }
    }

    /// Upper/lower ball-measure ratio `β/α` where
    /// `α r² ≤ μ(B(x,r)) ≤ β r²` for all `r` up to the diameter.
    ///
    /// Torus: a geodesic disc is Euclidean (`μ = π r²`) until it wraps, and at
    /// the diameter `μ/r² = 4π²/2π² = 2`, so `β = π`, `α = 2`.  Sphere:
    /// `μ = 2π(1-cos r)` gives `β = π` at `r → 0` and `α = 4/π` at `r = π`.
    pub fn ball_ratio(self) -> f64 {
        match self {
            Manifold::UnitSphere => PI * PI / 4.0,
            Manifold::FlatTorus => PI / 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Manifold::UnitSphere => "sphere",
            Manifold::FlatTorus => "torus",
        }
    }

    /// Validate a raw coordinate slice for this manifold.
    pub fn check_point(self, x: &[f64], index: usize) -> Result<()> {
        match self {
            Manifold::UnitSphere => {
                if x.len() != 3 {
                    return Err(MgError::Dimension(format!(
                        "sphere point needs 3 coordinates, got {}",
                        x.len()
                    )));
                }
                let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                if !n.is_finite() || (n - 1.0).abs() > ON_SPHERE_TOL {
                    return Err(MgError::OffSurface {
                        manifold: "unit sphere",
                        index,
                        detail: format!("|x| = {n:.17e}"),
                    });
                }
            }
            Manifold::FlatTorus => {
                if x.len() != 2 {
                    return Err(MgError::Dimension(format!(
                        "torus point needs 2 coordinates, got {}",
                        x.len()
                    )));
                }
                for &a in x {
                    if !a.is_finite() || !(0.0..TAU).contains(&a) {
                        return Err(MgError::OffSurface {
                            manifold: "flat torus",
                            index,
                            detail: format!("angle {a:.17e} outside [0, 2π)"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Point sets
// ---------------------------------------------------------------------------

/// A finite set of points on one manifold, stored as a flat coordinate buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    manifold: Manifold,
    coords: Vec<f64>,
}

impl PointSet {
    /// Validates every point (on-surface, canonical torus range).
    pub fn new(manifold: Manifold, coords: Vec<f64>) -> Result<Self> {
        let w = manifold.coord_len();
        if coords.len() % w != 0 {
            return Err(MgError::Dimension(format!(
                "coordinate buffer length {} is not a multiple of {w}",
                coords.len()
            )));
        }
        if coords.len() / w > MAX_POINTS {
            return Err(MgError::Capacity(format!(
                "{} points exceeds the {MAX_POINTS} point guard",
                coords.len() / w
            )));
        }
        for (i, p) in coords.chunks(w).enumerate() {
            manifold.check_point(p, i)?;
        }
        Ok(Self { manifold, coords })
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.manifold.coord_len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let w = self.manifold.coord_len();
        &self.coords[i * w..(i + 1) * w]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.manifold.coord_len())
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// First `n` points as their own set (levels of a nested hierarchy).
    pub fn prefix(&self, n: usize) -> PointSet {
        let w = self.manifold.coord_len();
        PointSet {
            manifold: self.manifold,
            coords: self.coords[..n * w].to_vec(),
        }
    }
}

// ---------------------------------------------------------------------------
// Geodesic distance
// ---------------------------------------------------------------------------

/// Geodesic distance between two validated points.
pub fn geodesic_distance(manifold: Manifold, x: &[f64], y: &[f64]) -> Result<f64> {
    manifold.check_point(x, 0)?;
    manifold.check_point(y, 1)?;
    Ok(dist_unchecked(manifold, x, y))
}

/// Distance without the on-surface checks (hot loops; inputs already valid).
#[inline]
pub fn dist_unchecked(manifold: Manifold, x: &[f64], y: &[f64]) -> f64 {
    match manifold {
        Manifold::UnitSphere => {
            let dot = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
            dot.clamp(-1.0, 1.0).acos()
        }
        Manifold::FlatTorus => {
            let mut s = 0.0;
            for k in 0..2 {
                let d = (x[k] - y[k]).abs();
                let d = d.min(TAU - d);
                s += d * d;
            }
            s.sqrt()
        }
    }
}

// ---------------------------------------------------------------------------
// Mesh norms
// ---------------------------------------------------------------------------

/// Fill distance / separation summary of a point set.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeshStats {
    /// Fill distance estimate `h = max_x min_ξ dist(x, ξ)` over a dense probe.
    pub h: f64,
    /// Separation radius `q = ½ min_{ξ≠ζ} dist(ξ, ζ)` (exact pairwise).
    pub q: f64,
    /// Mesh ratio `ρ = h/q`.
    pub rho: f64,
    /// Number of points.
    pub count: usize,
    /// Resolution of the probe sample used for `h`; the fill distance is
    /// accurate to about one probe cell.
    pub probe_spacing: f64,
}

/// Exact minimum pairwise geodesic distance; errors on coincident points.
pub fn min_pair_distance(set: &PointSet) -> Result<f64> {
    let n = set.len();
    if n < 2 {
        return Err(MgError::Domain(
            "separation radius needs at least two points".into(),
        ));
    }
    let m = set.manifold();
    let row_min: Vec<(f64, usize, usize)> = par::map_collect(n, |i| {
        let xi = set.point(i);
        let mut best = (f64::INFINITY, i, i);
        for j in i + 1..n {
            let d = dist_unchecked(m, xi, set.point(j));
            if d < best.0 {
                best = (d, i, j);
            }
        }
        best
    });
    let &(dmin, bi, bj) = row_min
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("non-empty");
    if dmin == 0.0 {
        return Err(MgError::CoincidentPoints { i: bi, j: bj });
    }
    Ok(dmin)
}

/// Compute [`MeshStats`] with a probe sample `probe_density` times denser per
/// axis than the set itself (rounded up to an even factor ≥ 2, which makes the
/// fill distance exact for regular torus grids).
pub fn mesh_norms(set: &PointSet, probe_density: usize) -> Result<MeshStats> {
    let n = set.len();
    let m = set.manifold();
    let q = min_pair_distance(set)? / 2.0;

    // Dense probe for the fill distance.
    let density = probe_density.max(2).next_multiple_of(2);
    let (probe, probe_spacing) = probe_points(m, n, density);
    let probe_n = probe.len() / m.coord_len();
    let w = m.coord_len();
    let far = par::map_collect(probe_n, |pi| {
        let x = &probe[pi * w..(pi + 1) * w];
        let mut near = f64::INFINITY;
        for xi in set.iter() {
            let d = dist_unchecked(m, x, xi);
            if d < near {
                near = d;
            }
        }
        near
    });
    let h = far.iter().fold(0.0_f64, |a, &b| a.max(b));

    Ok(MeshStats {
        h,
        q,
        rho: h / q,
        count: n,
        probe_spacing,
    })
}

/// Raw probe sample (flat coords) plus an estimate of its own resolution.
fn probe_points(m: Manifold, n_points: usize, density: usize) -> (Vec<f64>, f64) {
    match m {
        Manifold::FlatTorus => {
            let side = (n_points as f64).sqrt().ceil() as usize;
            let p = density * side.max(1);
            let mut coords = Vec::with_capacity(p * p * 2);
            for i in 0..p {
                for j in 0..p {
                    coords.push(TAU * i as f64 / p as f64);
                    coords.push(TAU * j as f64 / p as f64);
                }
            }
            let spacing = TAU / p as f64 * std::f64::consts::SQRT_2 / 2.0;
            (coords, spacing)
        }
        Manifold::UnitSphere => {
            let target = n_points.saturating_mul(density * density);
            let mut sub = 0;
            while icosphere_count(sub) < target && sub < 7 {
                sub += 1;
            }
            let (verts, _) = icosphere(sub);
            let count = verts.len();
            let mut coords = Vec::with_capacity(count * 3);
            for v in verts {
                coords.extend_from_slice(&v);
            }
            let spacing = (4.0 * PI / count as f64).sqrt();
            (coords, spacing)
        }
    }
}

/// Uniform evaluation sample: an `r×r` grid on the torus, an `r`-times
/// subdivided icosphere on the sphere.  Used for decay profiles and error
/// measurement, not as collocation nodes.
pub fn dense_sample(m: Manifold, resolution: usize) -> Result<PointSet> {
    match m {
        Manifold::FlatTorus => {
            if resolution < 2 {
                return Err(MgError::Domain(format!(
                    "torus sample resolution must be ≥ 2, got {resolution}"
                )));
            }
            let mut coords = Vec::with_capacity(resolution * resolution * 2);
            for i in 0..resolution {
                for j in 0..resolution {
                    coords.push(TAU * i as f64 / resolution as f64);
                    coords.push(TAU * j as f64 / resolution as f64);
                }
            }
            PointSet::new(m, coords)
        }
        Manifold::UnitSphere => {
            if resolution > 7 {
                return Err(MgError::Capacity(format!(
                    "sphere sample subdivision {resolution} exceeds 7"
                )));
            }
            let (verts, _) = icosphere(resolution);
            let mut coords = Vec::with_capacity(verts.len() * 3);
            for v in verts {
                coords.extend_from_slice(&v);
            }
            PointSet::new(m, coords)
        }
    }
}

// ---------------------------------------------------------------------------
// Icosphere construction
// ---------------------------------------------------------------------------

pub fn icosphere_count(subdivisions: usize) -> usize {
    10 * 4usize.pow(subdivisions as u32) + 2
}

/// Icosahedron subdivided `subdivisions` times, vertices projected to the unit
/// sphere.  Each subdivision appends the new edge midpoints after the existing
/// vertices, so the vertex list of level `k` is a prefix of level `k+1`.
pub fn icosphere(subdivisions: usize) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let raw: [[f64; 3]; 12] = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut verts: Vec<[f64; 3]> = raw.iter().map(|v| normalize(*v)).collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = midpoint(&mut verts, &mut cache, f[0], f[1]);
            let bc = midpoint(&mut verts, &mut cache, f[1], f[2]);
            let ca = midpoint(&mut verts, &mut cache, f[2], f[0]);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    (verts, faces)
}

fn midpoint(
    verts: &mut Vec<[f64; 3]>,
    cache: &mut HashMap<(usize, usize), usize>,
    a: usize,
    b: usize,
) -> usize {
    let key = (a.min(b), a.max(b));
    if let Some(&i) = cache.get(&key) {
        return i;
    }
    let va = verts[a];
    let vb = verts[b];
    let m = normalize([va[0] + vb[0], va[1] + vb[1], va[2] + vb[2]]);
    verts.push(m);
    let i = verts.len() - 1;
    cache.insert(key, i);
    i
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

// ---------------------------------------------------------------------------
// Hierarchies
// ---------------------------------------------------------------------------

/// Nested point sets, coarse first; level `ℓ-1` is a prefix of level `ℓ`.
#[derive(Debug, Clone)]
pub struct PointHierarchy {
    pub manifold: Manifold,
    pub levels: Vec<PointSet>,
    pub stats: Vec<MeshStats>,
    /// Observed `(min, max)` of `h_{ℓ+1}/h_ℓ`; `None` for a single level.
    pub gamma_bounds: Option<(f64, f64)>,
}

impl PointHierarchy {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }
}

/// Build a nested hierarchy with levels `0..=depth`.
///
/// Torus: `base` is the coarsest grid side `n₀ ≥ 2`; level `ℓ` is the
/// `n₀·2^ℓ` square grid.  Sphere: `base` is the number of subdivisions of the
/// icosahedron forming level 0 (`base = 0` → the 12 icosahedron vertices);
/// each further level subdivides once more.
pub fn build_hierarchy(manifold: Manifold, depth: usize, base: usize) -> Result<PointHierarchy> {
    let levels: Vec<PointSet> = match manifold {
        Manifold::FlatTorus => {
            if base < 2 {
                return Err(MgError::Domain("torus base grid side must be ≥ 2".into()));
            }
            let n_fine = base
                .checked_shl(depth as u32)
                .filter(|n| n * n <= MAX_POINTS)
                .ok_or_else(|| {
                    MgError::Capacity(format!(
                        "torus hierarchy base {base} depth {depth} exceeds {MAX_POINTS} points"
                    ))
                })?;
            let _ = n_fine;
            let mut levels = Vec::with_capacity(depth + 1);
            let mut coords: Vec<f64> = Vec::new();
            for l in 0..=depth {
                let n = base << l;
                if l == 0 {
                    for i in 0..n {
                        for j in 0..n {
                            coords.push(TAU * i as f64 / n as f64);
                            coords.push(TAU * j as f64 / n as f64);
                        }
                    }
                } else {
                    // Keep the coarse prefix verbatim, append the new points.
                    for i in 0..n {
                        for j in 0..n {
                            if i % 2 == 0 && j % 2 == 0 {
                                continue;
                            }
                            coords.push(TAU * i as f64 / n as f64);
                            coords.push(TAU * j as f64 / n as f64);
                        }
                    }
                }
                levels.push(PointSet::new(manifold, coords.clone())?);
            }
            levels
        }
        Manifold::UnitSphere => {
            if icosphere_count(base + depth) > MAX_POINTS {
                return Err(MgError::Capacity(format!(
                    "sphere hierarchy base {base} depth {depth} exceeds {MAX_POINTS} points"
                )));
            }
            let (verts, _) = icosphere(base + depth);
            let full: Vec<f64> = verts.iter().flat_map(|v| v.iter().copied()).collect();
            let full = PointSet::new(manifold, full)?;
            (0..=depth)
                .map(|l| full.prefix(icosphere_count(base + l)))
                .collect()
        }
    };

    let stats: Vec<MeshStats> = levels
        .iter()
        .map(|s| mesh_norms(s, 2))
        .collect::<Result<_>>()?;
    let ratios: Vec<f64> = stats.windows(2).map(|w| w[1].h / w[0].h).collect();
    let gamma_bounds = if ratios.is_empty() {
        None
    } else {
        Some((
            ratios.iter().fold(f64::INFINITY, |a, &b| a.min(b)),
            ratios.iter().fold(0.0_f64, |a, &b| a.max(b)),
        ))
    };
    Ok(PointHierarchy {
        manifold,
        levels,
        stats,
        gamma_bounds,
    })
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// Positive-weight quadrature rule; weights sum to the manifold volume.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: PointSet,
    pub weights: Vec<f64>,
    /// Accuracy level the rule was built with.
    pub level: usize,
}

impl QuadratureRule {
    pub fn integrate<F: Fn(&[f64]) -> f64 + Sync>(&self, f: F) -> f64 {
        let m = self.nodes.manifold();
        let w = m.coord_len();
        let coords = self.nodes.coords();
        par::sum_scalar(self.weights.len(), |i| {
            self.weights[i] * f(&coords[i * w..(i + 1) * w])
        })
    }
}

/// Build a quadrature rule.  Torus: trapezoidal (= midpoint) rule on an
/// `M×M` grid, `M = 8·2^level`, spectrally accurate for smooth periodic
/// integrands.  Sphere: centroid rule on the `level`-times subdivided
/// icosahedron with exact spherical-triangle areas as weights.
pub fn build_quadrature(manifold: Manifold, level: usize) -> Result<QuadratureRule> {
    if level < 1 {
        return Err(MgError::Domain("quadrature accuracy level must be ≥ 1".into()));
    }
    match manifold {
        Manifold::FlatTorus => {
            let m = 8usize
                .checked_shl(level as u32)
                .filter(|m| m * m <= MAX_POINTS)
                .ok_or_else(|| MgError::Capacity(format!("torus quadrature level {level}")))?;
            let mut coords = Vec::with_capacity(m * m * 2);
            for i in 0..m {
                for j in 0..m {
                    coords.push(TAU * i as f64 / m as f64);
                    coords.push(TAU * j as f64 / m as f64);
                }
            }
            let w = (TAU / m as f64) * (TAU / m as f64);
            Ok(QuadratureRule {
                nodes: PointSet::new(manifold, coords)?,
                weights: vec![w; m * m],
                level,
            })
        }
        Manifold::UnitSphere => {
            if 20 * 4usize.pow(level as u32) > MAX_POINTS {
                return Err(MgError::Capacity(format!("sphere quadrature level {level}")));
            }
            let (verts, faces) = icosphere(level);
            let mut coords = Vec::with_capacity(faces.len() * 3);
            let mut weights = Vec::with_capacity(faces.len());
            for f in &faces {
                let (a, b, c) = (verts[f[0]], verts[f[1]], verts[f[2]]);
                let centroid = normalize([
                    a[0] + b[0] + c[0],
                    a[1] + b[1] + c[1],
                    a[2] + b[2] + c[2],
                ]);
                coords.extend_from_slice(&centroid);
                weights.push(spherical_triangle_area(a, b, c));
            }
            Ok(QuadratureRule {
                nodes: PointSet::new(manifold, coords)?,
                weights,
                level,
            })
        }
    }
}

/// Spherical excess of the geodesic triangle `abc` (van Oosterom–Strackee).
pub fn spherical_triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let triple = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0]);
    let dab = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let dbc = b[0] * c[0] + b[1] * c[1] + b[2] * c[2];
    let dca = c[0] * a[0] + c[1] * a[1] + c[2] * a[2];
    2.0 * triple.abs().atan2(1.0 + dab + dbc + dca)
}

// ---------------------------------------------------------------------------
// Hierarchy JSON
// ---------------------------------------------------------------------------

/// Serialize a hierarchy; coordinates are written with 17 significant digits,
/// which round-trips 64-bit floats exactly.
pub fn hierarchy_to_json(h: &PointHierarchy) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    s.push_str("{\n  \"manifold\": \"");
    s.push_str(h.manifold.name());
    s.push_str("\",\n  \"levels\": [\n");
    for (li, level) in h.levels.iter().enumerate() {
        s.push_str("    [");
        for (pi, p) in level.iter().enumerate() {
            if pi > 0 {
                s.push_str(", ");
            }
            s.push('[');
            for (ci, c) in p.iter().enumerate() {
                if ci > 0 {
                    s.push_str(", ");
                }
                let _ = write!(s, "{c:.16e}");
            }
            s.push(']');
        }
        s.push(']');
        if li + 1 < h.levels.len() {
            s.push(',');
        }
        s.push('\n');
    }
    s.push_str("  ],\n  \"stats\": [\n");
    for (si, st) in h.stats.iter().enumerate() {
        let _ = write!(
            s,
            "    {{\"count\": {}, \"h\": {:.16e}, \"q\": {:.16e}, \"rho\": {:.16e}, \"probe_spacing\": {:.16e}}}",
            st.count, st.h, st.q, st.rho, st.probe_spacing
        );
        if si + 1 < h.stats.len() {
            s.push(',');
        }
        s.push('\n');
    }
    s.push_str("  ],\n  \"gamma_bounds\": ");
    match h.gamma_bounds {
        Some((g1, g2)) => {
            let _ = write!(s, "[{g1:.16e}, {g2:.16e}]");
        }
        None => s.push_str("null"),
    }
    s.push_str("\n}\n");
    s
}

/// Parse a hierarchy produced by [`hierarchy_to_json`].
pub fn hierarchy_from_json(text: &str) -> Result<PointHierarchy> {
    let v: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| MgError::Format(format!("hierarchy json: {e}")))?;
    let manifold = match v.get("manifold").and_then(|m| m.as_str()) {
        Some("sphere") => Manifold::UnitSphere,
        Some("torus") => Manifold::FlatTorus,
        other => {
            return Err(MgError::Format(format!(
                "hierarchy json: bad manifold {other:?}"
            )))
        }
    };
    let levels_v = v
        .get("levels")
        .and_then(|l| l.as_array())
        .ok_or_else(|| MgError::Format("hierarchy json: missing levels".into()))?;
    let mut levels = Vec::with_capacity(levels_v.len());
    for lv in levels_v {
        let pts = lv
            .as_array()
            .ok_or_else(|| MgError::Format("hierarchy json: level is not an array".into()))?;
        let mut coords = Vec::new();
        for p in pts {
            let cs = p
                .as_array()
                .ok_or_else(|| MgError::Format("hierarchy json: point is not an array".into()))?;
            for c in cs {
                coords.push(
                    c.as_f64()
                        .ok_or_else(|| MgError::Format("hierarchy json: non-numeric coord".into()))?,
                );
            }
        }
        levels.push(PointSet::new(manifold, coords)?);
    }
    if levels.is_empty() {
        return Err(MgError::Format("hierarchy json: no levels".into()));
    }
    let stats_v = v
        .get("stats")
        .and_then(|x| x.as_array())
        .ok_or_else(|| MgError::Format("hierarchy json: missing stats".into()))?;
    let mut stats = Vec::with_capacity(stats_v.len());
    for st in stats_v {
        stats.push(
            serde_json::from_value::<MeshStats>(st.clone())
                .map_err(|e| MgError::Format(format!("hierarchy json stats: {e}")))?,
        );
    }
    let gamma_bounds = match v.get("gamma_bounds") {
        Some(serde_json::Value::Array(a)) if a.len() == 2 => {
            Some((a[0].as_f64().unwrap_or(f64::NAN), a[1].as_f64().unwrap_or(f64::NAN)))
        }
        _ => None,
    };
    Ok(PointHierarchy {
        manifold,
        levels,
        stats,
        gamma_bounds,
    })
}
