//! Distance truncation of stiffness and transfer matrices, compressed sparse
//! row storage with FLOP-counted products, and the exponential tail bound
//! that justifies dropping far-field entries.

use std::io::Write as _;
use std::path::Path;

use crate::error::{MgError, Result};
use crate::geometry::{geodesic_distance, Manifold, PointSet};
use crate::multigrid::{LevelStack, LinOp, StackLevel, StackMode};
use crate::par;
use crate::{assembly, linalg, Matrix, Vector};

// ---------------------------------------------------------------------------
// FLOP accounting
// ---------------------------------------------------------------------------

/// Multiply-add counter for one solve.  One sparse matvec adds exactly
/// `2·nnz`; dense products add `2·rows·cols`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct FlopLedger {
    multiply_adds: u64,
}

impl FlopLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, multiply_adds: u64) {
        self.multiply_adds += multiply_adds;
    }

    pub fn merge(&mut self, other: &FlopLedger) {
        self.multiply_adds += other.multiply_adds;
    }

    pub fn multiply_adds(&self) -> u64 {
        self.multiply_adds
    }
}

// ---------------------------------------------------------------------------
// Compressed sparse row matrices
// ---------------------------------------------------------------------------

/// CSR matrix with strictly increasing column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from raw CSR parts, validating the invariants.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 {
            return Err(MgError::Dimension(format!(
                "{} row offsets for {rows} rows",
                row_offsets.len()
            )));
        }
        if col_indices.len() != values.len() || row_offsets[rows] != values.len() {
            return Err(MgError::Dimension(
                "column/value lengths disagree with the final row offset".into(),
            ));
        }
        if row_offsets[0] != 0 {
            return Err(MgError::Format("row offsets must start at 0".into()));
        }
        for i in 0..rows {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if hi < lo {
                return Err(MgError::Format(format!("row {i} offsets decrease")));
            }
            let mut prev = None;
            for &c in &col_indices[lo..hi] {
                if c >= cols {
                    return Err(MgError::Dimension(format!(
                        "row {i} references column {c} ≥ {cols}"
                    )));
                }
                if let Some(p) = prev {
                    if c <= p {
                        return Err(MgError::Format(format!(
                            "row {i} column indices not strictly increasing"
                        )));
                    }
                }
                prev = Some(c);
            }
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entry (i, j), zero when outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        match self.col_indices[lo..hi].binary_search(&j) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros((self.rows, self.cols));
        for i in 0..self.rows {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                m[[i, self.col_indices[k]]] = self.values[k];
            }
        }
        m
    }

    /// `y = Mx` without touching a ledger; rows evaluate independently.
    pub fn matvec_untracked(&self, x: &Vector) -> Vector {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let xs = x.as_slice().expect("contiguous");
        let out = par::map_collect(self.rows, |i| {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * xs[self.col_indices[k]];
            }
            acc
        });
        Vector::from_vec(out)
    }

    /// `y = Mᵀx` (sequential scatter; used by norm estimators only).
    pub fn matvec_transpose_untracked(&self, x: &Vector) -> Vector {
        assert_eq!(x.len(), self.rows, "transpose matvec dimension mismatch");
        let mut out = Vector::zeros(self.cols);
        for i in 0..self.rows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                out[self.col_indices[k]] += self.values[k] * xi;
            }
        }
        out
    }

    /// Exact transpose (counting sort; preserves sorted columns).
    pub fn transpose(&self) -> SparseMatrix {
        let nnz = self.nnz();
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let row_offsets = counts.clone();
        let mut cursor = counts;
        let mut col_indices = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        for i in 0..self.rows {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let c = self.col_indices[k];
                let slot = cursor[c];
                cursor[c] += 1;
                col_indices[slot] = i;
                values[slot] = self.values[k];
            }
        }
        SparseMatrix {
            rows: self.cols,
            cols: self.rows,
            row_offsets,
            col_indices,
            values,
        }
    }
}

/// `y = Mx`, charging exactly `2·nnz` multiply-adds to the ledger.
pub fn sparse_matvec(m: &SparseMatrix, x: &Vector, ledger: &mut FlopLedger) -> Result<Vector> {
    if x.len() != m.cols() {
        return Err(MgError::Dimension(format!(
            "matvec: {} columns against a vector of length {}",
            m.cols(),
            x.len()
        )));
    }
    ledger.add(2 * m.nnz() as u64);
    Ok(m.matvec_untracked(x))
}

// ---------------------------------------------------------------------------
// Truncation
// ---------------------------------------------------------------------------

/// `r = K·h·|log h|`; only meaningful for `h < 1` where the log is negative.
pub fn truncation_radius(h: f64, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(MgError::Domain(format!("truncation constant must be positive, got {k}")));
    }
    if !(h > 0.0 && h < 1.0) {
        return Err(MgError::Domain(format!(
            "truncation radius needs 0 < h < 1, got {h}"
        )));
    }
    Ok(k * h * h.ln().abs())
}

/// Drop every entry whose node pair is farther than `r` apart; kept values
/// are copied bitwise.
pub fn truncate(
    m: &Matrix,
    row_pts: &PointSet,
    col_pts: &PointSet,
    r: f64,
) -> Result<SparseMatrix> {
    if m.nrows() != row_pts.len() || m.ncols() != col_pts.len() {
        return Err(MgError::Dimension(format!(
            "truncate: {}×{} matrix against {} and {} points",
            m.nrows(),
            m.ncols(),
            row_pts.len(),
            col_pts.len()
        )));
    }
    if row_pts.manifold() != col_pts.manifold() {
        return Err(MgError::ManifoldMismatch("truncate mixes manifolds".into()));
    }
    if !(r >= 0.0) {
        return Err(MgError::Domain(format!("truncation radius must be ≥ 0, got {r}")));
    }
    let manifold = row_pts.manifold();
    let rows = m.nrows();
    let cols = m.ncols();

    struct Row {
        cols: Vec<usize>,
        vals: Vec<f64>,
    }
    let kept: Vec<Row> = par::map_collect(rows, |i| {
        let x = row_pts.point(i);
        let mut cols_i = Vec::new();
        let mut vals_i = Vec::new();
        for j in 0..cols {
            let d = geodesic_distance(manifold, x, col_pts.point(j)).expect("validated points");
            if d <= r {
                cols_i.push(j);
                vals_i.push(m[[i, j]]);
            }
        }
        Row {
            cols: cols_i,
            vals: vals_i,
        }
    });

    let mut row_offsets = Vec::with_capacity(rows + 1);
    row_offsets.push(0);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    for row in kept {
        col_indices.extend_from_slice(&row.cols);
        values.extend_from_slice(&row.vals);
        row_offsets.push(col_indices.len());
    }
    SparseMatrix::from_csr(rows, cols, row_offsets, col_indices, values)
}

/// How much truncation changed a matrix.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TruncationErrorReport {
    /// `‖M − M_r‖₂` by power iteration.
    pub spectral_norm_diff: f64,
    /// Largest ℓ₁ row or column sum of the dropped entries — the quantity
    /// the decay lemmas actually bound.
    pub max_row_sum_diff: f64,
}

/// Compare a dense matrix with its truncation (dense-size guarded).
pub fn truncation_error_report(
    m: &Matrix,
    m_r: &SparseMatrix,
) -> Result<TruncationErrorReport> {
    if m.nrows() != m_r.rows() || m.ncols() != m_r.cols() {
        return Err(MgError::Dimension(
            "truncation report: shapes disagree".into(),
        ));
    }
    if m.nrows().max(m.ncols()) > crate::multigrid::DENSE_GUARD {
        return Err(MgError::SizeGuard(format!(
            "truncation report needs dims ≤ {}, got {}×{}",
            crate::multigrid::DENSE_GUARD,
            m.nrows(),
            m.ncols()
        )));
    }
    let diff = m - &m_r.to_dense();
    let spectral_norm_diff = linalg::spectral_norm(diff.view());
    let mut max_row = 0.0_f64;
    for row in diff.rows() {
        max_row = max_row.max(row.iter().map(|v| v.abs()).sum());
    }
    for col in diff.columns() {
        max_row = max_row.max(col.iter().map(|v| v.abs()).sum());
    }
    Ok(TruncationErrorReport {
        spectral_norm_diff,
        max_row_sum_diff: max_row,
    })
}

/// Tail bound `(β/α)(r/q)^d e^{-cr} Σ_{j≥0}(j+2)^d e^{-cjq}` for the
/// cumulative weight of exponentially decaying entries beyond radius `r` on a
/// manifold whose ball volumes are pinched by the ratio `β/α`.
pub fn tail_bound(manifold: Manifold, q: f64, r: f64, c: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(MgError::Domain(format!("separation must be positive, got {q}")));
    }
    if !(c > 0.0) {
        return Err(MgError::Domain(format!("decay rate must be positive, got {c}")));
    }
    if r < 2.0 * q {
        return Err(MgError::Domain(format!(
            "tail bound requires r ≥ 2q (r = {r}, q = {q})"
        )));
    }
    let d = manifold.dim() as i32;
    let ratio = manifold.ball_ratio();
    let decay = (-c * q).exp();
    let mut series = 0.0_f64;
    let mut weight = 1.0_f64; // e^{-c j q}
    let mut j = 0u64;
    loop {
        let term = ((j as f64) + 2.0).powi(d) * weight;
        series += term;
        if term <= 1e-12 * series || j > 100_000_000 {
            break;
        }
        weight *= decay;
        j += 1;
    }
    Ok(ratio * (r / q).powi(d) * (-c * r).exp() * series)
}

// ---------------------------------------------------------------------------
// Truncated stacks
// ---------------------------------------------------------------------------

/// Replace each level's operators by their truncations with radii
/// `r_ℓ = K·h_ℓ·|log h_ℓ|` (transfers use the coarse level's radius, and the
/// restriction is exactly the transposed truncated prolongation).  Levels
/// whose fill distance is ≥ 1 — where the radius formula is void — keep
/// their dense operators, as does the directly solved level 0 matrix.
pub fn build_truncated_stack(stack: &LevelStack, k: f64) -> Result<LevelStack> {
    if !(k > 0.0) {
        return Err(MgError::Domain(format!("truncation constant must be positive, got {k}")));
    }
    let depth = stack.depth();
    let mut levels = Vec::with_capacity(depth + 1);
    let mut radii = Vec::with_capacity(depth + 1);
    for l in 0..=depth {
        let lev = stack.level(l);
        let h = lev.stats.h;
        let radius = if h < 1.0 {
            truncation_radius(h, k)?
        } else {
            f64::INFINITY
        };
        radii.push(radius);

        let a = if l == 0 || !radius.is_finite() {
            lev.a.clone()
        } else {
            LinOp::Sparse(truncate(&lev.a.to_dense(), &lev.points, &lev.points, radius)?)
        };

        let (p, r) = match &lev.p {
            None => (None, None),
            Some(p_op) => {
                let coarse = stack.level(l - 1);
                let coarse_radius = radii[l - 1];
                if coarse_radius.is_finite() {
                    let p_sparse = truncate(
                        &p_op.to_dense(),
                        &lev.points,
                        &coarse.points,
                        coarse_radius,
                    )?;
                    let r_sparse = p_sparse.transpose();
                    (Some(LinOp::Sparse(p_sparse)), Some(LinOp::Sparse(r_sparse)))
                } else {
                    (lev.p.clone(), lev.r.clone())
                }
            }
        };

        let diag = match &a {
            LinOp::Dense(m) => m.diag().to_owned(),
            LinOp::Sparse(s) => Vector::from_shape_fn(s.rows(), |i| s.get(i, i)),
        };
        if diag.iter().any(|&d| !(d > 0.0)) {
            return Err(MgError::Domain(format!(
                "truncation with K = {k} removed a positive diagonal at level {l}"
            )));
        }
        let (theta, theta_converged) = assembly::select_damping_op(&a, &diag);
        levels.push(StackLevel {
            points: lev.points.clone(),
            stats: lev.stats,
            a,
            diag,
            theta,
            theta_converged,
            p,
            r,
        });
    }
    LevelStack::from_levels(
        stack.manifold(),
        *stack.op(),
        levels,
        StackMode::Truncated { k, radii },
    )
}

// ---------------------------------------------------------------------------
// Matrix Market export
// ---------------------------------------------------------------------------

/// Coordinate-format Matrix Market export (1-based indices, row-major entry
/// order).
pub fn write_matrix_market(path: &Path, m: &SparseMatrix) -> Result<()> {
    let mut out = String::with_capacity(64 + 48 * m.nnz());
    out.push_str("%%MatrixMarket matrix coordinate real general\n");
    out.push_str(&format!("{} {} {}\n", m.rows(), m.cols(), m.nnz()));
    for i in 0..m.rows() {
        for k in m.row_offsets()[i]..m.row_offsets()[i + 1] {
            out.push_str(&format!(
                "{} {} {:.17e}\n",
                i + 1,
                m.col_indices()[k] + 1,
                m.values()[k]
            ));
        }
    }
    let tmp = path.with_extension("mtx.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(out.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
