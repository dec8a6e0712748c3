//! Damped Jacobi smoothing, two-grid and τ-cycle multigrid, perturbed
//! variants, explicit error-propagation matrices, and the scalar recursion
//! bound behind the level-independence argument.

use std::sync::OnceLock;


use crate::assembly::{self, AssembledHierarchy, EllipticOperator, LevelSystem};
use crate::error::{MgError, Result};
use crate::geometry::{Manifold, MeshStats, PointSet};
use crate::linalg::{self, CoarseSolver};
use crate::sparsify::{FlopLedger, SparseMatrix};
use crate::{Matrix, Vector};

/// Dense construction guard for explicit iteration matrices.
pub const DENSE_GUARD: usize = 3000;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Cycle parameters.  `tau = 1` is a V-cycle (runnable but outside the
/// supported contraction theory, which needs `tau ≥ 2`), `tau = 2` the
/// W-cycle.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MgConfig {
    pub tau: usize,
    pub nu1: usize,
    pub nu2: usize,
    /// Relative-residual stopping tolerance.
    pub eps_max: f64,
    pub max_iters: usize,
    /// Contraction bound studies test against.
    pub gamma_target: f64,
    /// Truncation constant `K`; `None` leaves operators dense.
    pub truncation: Option<f64>,
}

impl Default for MgConfig {
    fn default() -> Self {
        Self {
            tau: 2,
            nu1: 3,
            nu2: 3,
            eps_max: 1e-10,
            max_iters: 100,
            gamma_target: 0.5,
            truncation: None,
        }
    }
}

impl MgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nu1 < 1 {
            return Err(MgError::Domain("nu1 must be ≥ 1".into()));
        }
        if self.tau < 1 {
            return Err(MgError::Domain("tau must be ≥ 1".into()));
        }
        if !(self.gamma_target > 0.0 && self.gamma_target < 1.0) {
            return Err(MgError::Domain(format!(
                "gamma_target must lie in (0,1), got {}",
                self.gamma_target
            )));
        }
        if !(self.eps_max > 0.0) {
            return Err(MgError::Domain("eps_max must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(MgError::Domain("max_iters must be ≥ 1".into()));
        }
        if let Some(k) = self.truncation {
            if !(k > 0.0) {
                return Err(MgError::Domain("truncation constant must be positive".into()));
            }
        }
        Ok(())
    }

    /// True when the configuration is covered by the contraction theory.
    pub fn within_theory(&self) -> bool {
        self.tau >= 2
    }
}

// ---------------------------------------------------------------------------
// Linear operators (dense or compressed sparse row)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum LinOp {
    Dense(Matrix),
    Sparse(SparseMatrix),
}

impl LinOp {
    pub fn nrows(&self) -> usize {
        match self {
            LinOp::Dense(a) => a.nrows(),
            LinOp::Sparse(s) => s.rows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            LinOp::Dense(a) => a.ncols(),
            LinOp::Sparse(s) => s.cols(),
        }
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        match self {
            LinOp::Dense(a) => a.dot(v),
            LinOp::Sparse(s) => s.matvec_untracked(v),
        }
    }

    pub fn apply_transpose(&self, v: &Vector) -> Vector {
        match self {
            LinOp::Dense(a) => a.t().dot(v),
            LinOp::Sparse(s) => s.matvec_transpose_untracked(v),
        }
    }

    /// Multiply-add cost of one application.
    pub fn apply_flops(&self) -> u64 {
        match self {
            LinOp::Dense(a) => 2 * (a.nrows() as u64) * (a.ncols() as u64),
            LinOp::Sparse(s) => 2 * s.nnz() as u64,
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            LinOp::Dense(a) => a.len(),
            LinOp::Sparse(s) => s.nnz(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, LinOp::Dense(_))
    }

    pub fn to_dense(&self) -> Matrix {
        match self {
            LinOp::Dense(a) => a.clone(),
            LinOp::Sparse(s) => s.to_dense(),
        }
    }
}

// ---------------------------------------------------------------------------
// Level stacks
// ---------------------------------------------------------------------------

/// How a stack's operators were produced.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StackMode {
    Dense,
    Perturbed { eps: Vec<f64> },
    Truncated { k: f64, radii: Vec<f64> },
}

impl StackMode {
    pub fn name(&self) -> &'static str {
        match self {
            StackMode::Dense => "dense",
            StackMode::Perturbed { .. } => "perturbed",
            StackMode::Truncated { .. } => "truncated",
        }
    }
}

/// All operator data of one level inside a stack.
#[derive(Debug)]
pub struct StackLevel {
    pub points: PointSet,
    pub stats: MeshStats,
    pub a: LinOp,
    pub diag: Vector,
    pub theta: f64,
    pub theta_converged: bool,
    /// Prolongation from the next coarser level (`None` on level 0).
    pub p: Option<LinOp>,
    /// Restriction to the next coarser level (`None` on level 0).
    pub r: Option<LinOp>,
}

impl StackLevel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

/// A multigrid hierarchy ready to cycle: per-level operators, smoother data,
/// and a factorized coarsest-level solver.
#[derive(Debug)]
pub struct LevelStack {
    manifold: Manifold,
    op: EllipticOperator,
    levels: Vec<StackLevel>,
    coarse: CoarseSolver,
    /// Lazily factorized direct solvers for two-grid coarse corrections at
    /// levels above 0.
    direct: Vec<OnceLock<CoarseSolver>>,
    mode: StackMode,
}

impl LevelStack {
    /// Dense stack over an assembled hierarchy.
    pub fn from_assembled(h: &AssembledHierarchy) -> Result<Self> {
        let mut levels = Vec::with_capacity(h.levels.len());
        for al in &h.levels {
            let p = al.prolongation.clone().map(LinOp::Dense);
            let r = al
                .prolongation
                .as_ref()
                .map(|p| LinOp::Dense(p.t().to_owned()));
            levels.push(StackLevel {
                points: al.basis.points().clone(),
                stats: al.stats,
                a: LinOp::Dense(al.system.a.clone()),
                diag: al.system.diag.clone(),
                theta: al.system.theta,
                theta_converged: al.system.theta_converged,
                p,
                r,
            });
        }
        Self::from_levels(h.manifold, h.op, levels, StackMode::Dense)
    }

    /// Assemble a stack from raw levels; validates dimensional consistency
    /// and factorizes the coarsest matrix.
    pub fn from_levels(
        manifold: Manifold,
        op: EllipticOperator,
        levels: Vec<StackLevel>,
        mode: StackMode,
    ) -> Result<Self> {
        if levels.is_empty() {
            return Err(MgError::Domain("empty level stack".into()));
        }
        for (l, lev) in levels.iter().enumerate() {
            let n = lev.a.nrows();
            if lev.a.ncols() != n || lev.diag.len() != n || lev.points.len() != n {
                return Err(MgError::Dimension(format!(
                    "level {l}: inconsistent operator/diagonal/point sizes"
                )));
            }
            if l == 0 {
                if lev.p.is_some() || lev.r.is_some() {
                    return Err(MgError::Dimension(
                        "level 0 must not carry transfer operators".into(),
                    ));
                }
            } else {
                let nc = levels[l - 1].a.nrows();
                let p = lev.p.as_ref().ok_or_else(|| {
                    MgError::Dimension(format!("level {l} lacks a prolongation"))
                })?;
                let r = lev.r.as_ref().ok_or_else(|| {
                    MgError::Dimension(format!("level {l} lacks a restriction"))
                })?;
                if p.nrows() != n || p.ncols() != nc || r.nrows() != nc || r.ncols() != n {
                    return Err(MgError::Dimension(format!(
                        "level {l}: transfer shapes do not match {n}×{nc}"
                    )));
                }
            }
        }
        let coarse = CoarseSolver::new(&levels[0].a.to_dense())?;
        let direct = (0..levels.len()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            manifold,
            op,
            levels,
            coarse,
            direct,
            mode,
        })
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn op(&self) -> &EllipticOperator {
        &self.op
    }

    pub fn mode(&self) -> &StackMode {
        &self.mode
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &[StackLevel] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &StackLevel {
        &self.levels[l]
    }

    /// Direct solve with the (dense-factorized) matrix of level `l`.
    fn direct_solve(&self, l: usize, b: &Vector, ledger: &mut FlopLedger) -> Result<Vector> {
        let solver = if l == 0 {
            &self.coarse
        } else {
            // Factorized on first use; only two-grid corrections above the
            // base level need these.
            if self.direct[l].get().is_none() {
                let solver = CoarseSolver::new(&self.levels[l].a.to_dense())?;
                let _ = self.direct[l].set(solver);
            }
            self.direct[l].get().expect("just initialized")
        };
        ledger.add(2 * (solver.n() as u64) * (solver.n() as u64));
        solver.solve(b)
    }

    /// `ν` damped Jacobi sweeps on level `l`.
    fn smooth(
        &self,
        l: usize,
        mut u: Vector,
        b: &Vector,
        sweeps: usize,
        ledger: &mut FlopLedger,
    ) -> Vector {
        let lev = &self.levels[l];
        for _ in 0..sweeps {
            u = jacobi_apply(&lev.a, &lev.diag, lev.theta, &u, b, ledger);
        }
        u
    }

    /// Two-grid step at level `l` (exact solve on level `l-1`).
    pub fn tgm(
        &self,
        l: usize,
        u_old: &Vector,
        b: &Vector,
        cfg: &MgConfig,
        ledger: &mut FlopLedger,
    ) -> Result<Vector> {
        cfg.validate()?;
        self.check_rhs(l, u_old, b)?;
        if l == 0 {
            return self.direct_solve(0, b, ledger);
        }
        let lev = &self.levels[l];
        let mut u = self.smooth(l, u_old.clone(), b, cfg.nu1, ledger);
        let d = self.restrict_residual(l, &u, b, ledger);
        let e = self.direct_solve(l - 1, &d, ledger)?;
        let p = lev.p.as_ref().expect("level > 0 has p");
        u += &p.apply(&e);
        ledger.add(p.apply_flops() + lev.n() as u64);
        Ok(self.smooth(l, u, b, cfg.nu2, ledger))
    }

    /// τ-cycle multigrid step at level `l` (recursive corrections started
    /// from zero).
    pub fn mgm(
        &self,
        l: usize,
        u_old: &Vector,
        b: &Vector,
        cfg: &MgConfig,
        ledger: &mut FlopLedger,
    ) -> Result<Vector> {
        cfg.validate()?;
        self.check_rhs(l, u_old, b)?;
        self.mgm_inner(l, u_old.clone(), b, cfg, ledger)
    }

    fn mgm_inner(
        &self,
        l: usize,
        u_old: Vector,
        b: &Vector,
        cfg: &MgConfig,
        ledger: &mut FlopLedger,
    ) -> Result<Vector> {
        if l == 0 {
            return self.direct_solve(0, b, ledger);
        }
        let lev = &self.levels[l];
        let mut u = self.smooth(l, u_old, b, cfg.nu1, ledger);
        let d = self.restrict_residual(l, &u, b, ledger);
        let mut e = Vector::zeros(d.len());
        for _ in 0..cfg.tau {
            e = self.mgm_inner(l - 1, e, &d, cfg, ledger)?;
        }
        let p = lev.p.as_ref().expect("level > 0 has p");
        u += &p.apply(&e);
        ledger.add(p.apply_flops() + lev.n() as u64);
        Ok(self.smooth(l, u, b, cfg.nu2, ledger))
    }

    /// `R(b - A u)` from level `l` down to `l-1`.
    fn restrict_residual(
        &self,
        l: usize,
        u: &Vector,
        b: &Vector,
        ledger: &mut FlopLedger,
    ) -> Vector {
        let lev = &self.levels[l];
        let mut res = lev.a.apply(u);
        res.zip_mut_with(b, |r, &bv| *r = bv - *r);
        ledger.add(lev.a.apply_flops() + lev.n() as u64);
        let r = lev.r.as_ref().expect("level > 0 has r");
        ledger.add(r.apply_flops());
        r.apply(&res)
    }

    fn check_rhs(&self, l: usize, u: &Vector, b: &Vector) -> Result<()> {
        if l >= self.levels.len() {
            return Err(MgError::Dimension(format!(
                "level {l} outside stack of depth {}",
                self.depth()
            )));
        }
        let n = self.levels[l].n();
        if u.len() != n || b.len() != n {
            return Err(MgError::Dimension(format!(
                "level {l} expects vectors of length {n}, got {} and {}",
                u.len(),
                b.len()
            )));
        }
        Ok(())
    }

    /// Iterate the τ-cycle on the finest level until the relative residual
    /// drops below `cfg.eps_max` or `cfg.max_iters` is exhausted.
    pub fn solve(
        &self,
        b: &Vector,
        cfg: &MgConfig,
        u0: Option<&Vector>,
    ) -> Result<(Vector, SolveReport)> {
        self.solve_at(self.depth(), b, cfg, u0)
    }

    /// [`LevelStack::solve`] restricted to level `top` (cycling only through
    /// levels `0..=top`).
    pub fn solve_at(
        &self,
        top: usize,
        b: &Vector,
        cfg: &MgConfig,
        u0: Option<&Vector>,
    ) -> Result<(Vector, SolveReport)> {
        cfg.validate()?;
        if top >= self.levels.len() {
            return Err(MgError::Dimension(format!(
                "level {top} outside stack of depth {}",
                self.depth()
            )));
        }
        let n = self.levels[top].n();
        let mut u = match u0 {
            Some(v) => {
                if v.len() != n {
                    return Err(MgError::Dimension(format!(
                        "initial guess has length {}, expected {n}",
                        v.len()
                    )));
                }
                v.clone()
            }
            None => Vector::zeros(n),
        };
        if b.len() != n {
            return Err(MgError::Dimension(format!(
                "right-hand side has length {}, expected {n}",
                b.len()
            )));
        }

        let lev = &self.levels[top];
        let b_norm = b.dot(b).sqrt();
        // For b = 0 the relative criterion degenerates; fall back to the
        // absolute residual so a zero fixed point still registers.
        let denom = if b_norm > 0.0 { b_norm } else { 1.0 };

        let mut ledger = FlopLedger::default();
        let residual_norm = |u: &Vector, ledger: &mut FlopLedger| -> f64 {
            let mut r = lev.a.apply(u);
            ledger.add(lev.a.apply_flops() + n as u64);
            r.zip_mut_with(b, |rv, &bv| *rv = bv - *rv);
            r.dot(&r).sqrt()
        };

        let mut residual_history = vec![residual_norm(&u, &mut ledger)];
        let mut converged = residual_history[0] <= cfg.eps_max * denom;
        let mut iterations = 0;
        while !converged && iterations < cfg.max_iters {
            u = self.mgm_inner(top, u, b, cfg, &mut ledger)?;
            iterations += 1;
            let res = residual_norm(&u, &mut ledger);
            residual_history.push(res);
            if res <= cfg.eps_max * denom {
                converged = true;
            }
            if !res.is_finite() {
                break;
            }
        }

        let contraction_history: Vec<f64> = residual_history
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect();
        let asymptotic_contraction = geometric_tail(&contraction_history, 5);
        let report = SolveReport {
            iterations,
            converged,
            residual_history,
            contraction_history,
            asymptotic_contraction,
            flops: ledger.multiply_adds(),
            mode: self.mode.name().to_string(),
            within_theory: cfg.within_theory(),
        };
        Ok((u, report))
    }

    /// Explicit error-propagation matrix of level `l`: columns are the b=0
    /// algorithm applied to canonical basis vectors.  `TwoGrid` builds
    /// `T_ℓ = W^{ν₂}(id − P A⁻¹ R A)W^{ν₁}`, `TauCycle` the recursive `M_ℓ`.
    pub fn error_propagation_matrix(
        &self,
        l: usize,
        cfg: &MgConfig,
        kind: CycleKind,
    ) -> Result<Matrix> {
        cfg.validate()?;
        if l >= self.levels.len() {
            return Err(MgError::Dimension(format!(
                "level {l} outside stack of depth {}",
                self.depth()
            )));
        }
        let n = self.levels[l].n();
        if n > DENSE_GUARD {
            return Err(MgError::SizeGuard(format!(
                "explicit iteration matrix needs n ≤ {DENSE_GUARD}, level {l} has {n}"
            )));
        }
        let b = Vector::zeros(n);
        let mut cols: Vec<Vector> = Vec::with_capacity(n);
        for j in 0..n {
            let mut e = Vector::zeros(n);
            e[j] = 1.0;
            let mut ledger = FlopLedger::default();
            let out = match kind {
                CycleKind::TwoGrid => self.tgm(l, &e, &b, cfg, &mut ledger)?,
                CycleKind::TauCycle => self.mgm(l, &e, &b, cfg, &mut ledger)?,
            };
            cols.push(out);
        }
        let mut m = Matrix::zeros((n, n));
        for (j, col) in cols.iter().enumerate() {
            m.column_mut(j).assign(col);
        }
        Ok(m)
    }

    /// `‖B^{1/2} W B^{-1/2}‖₂` of level `l`'s smoother (power iteration on
    /// `SᵀS`); the non-expansiveness quantity of the damped Jacobi step.
    pub fn smoother_weighted_norm(&self, l: usize) -> f64 {
        let lev = &self.levels[l];
        let n = lev.n();
        let d_inv_sqrt = lev.diag.mapv(|d| 1.0 / d.sqrt());
        // B^{1/2} W B^{-1/2} = id − θ B^{-1/2} A B^{-1/2}.
        let s_apply = |v: &Vector| -> Vector {
            let x = v * &d_inv_sqrt;
            let ax = lev.a.apply(&x);
            let mut out = v.clone();
            out.scaled_add(-lev.theta, &(&ax * &d_inv_sqrt));
            out
        };
        let st_apply = |v: &Vector| -> Vector {
            let x = v * &d_inv_sqrt;
            let atx = lev.a.apply_transpose(&x);
            let mut out = v.clone();
            out.scaled_add(-lev.theta, &(&atx * &d_inv_sqrt));
            out
        };
        let est = linalg::power_iteration(n, |v| st_apply(&s_apply(v)), 600, 1e-12, 0x5111_0007);
        est.value.max(0.0).sqrt()
    }

    /// Perturbed copy: `Ǎ = A + E_A`, `P̌ = P + E_P`, `Ř = R + E_R` with
    /// independent seeded draws scaled to spectral norm `ε_ℓ`; Jacobi data
    /// and the coarse factorization are rebuilt from the perturbed matrices.
    /// `ε_ℓ = 0` copies that level's operators bitwise.
    pub fn perturbed(&self, eps: &[f64], seed: u64) -> Result<LevelStack> {
        if eps.len() != self.levels.len() {
            return Err(MgError::Dimension(format!(
                "{} perturbation sizes for {} levels",
                eps.len(),
                self.levels.len()
            )));
        }
        if let Some(bad) = eps.iter().find(|&&e| !(e >= 0.0)) {
            return Err(MgError::Domain(format!(
                "perturbation sizes must be ≥ 0, got {bad}"
            )));
        }
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize, e: f64| -> Option<Matrix> {
            if e == 0.0 {
                return None;
            }
            let mut m = Matrix::from_shape_fn((rows, cols), |_| rng.gen::<f64>() * 2.0 - 1.0);
            let norm = linalg::spectral_norm(m.view());
            if norm == 0.0 {
                return None;
            }
            m *= e / norm;
            Some(m)
        };

        let mut levels = Vec::with_capacity(self.levels.len());
        for (l, lev) in self.levels.iter().enumerate() {
            let n = lev.n();
            let a_dense = lev.a.to_dense();
            let a = match draw(n, n, eps[l]) {
                Some(e_a) => a_dense + e_a,
                None => a_dense,
            };
            let diag = a.diag().to_owned();
            if diag.iter().any(|&d| !(d > 0.0)) {
                return Err(MgError::Domain(format!(
                    "perturbation ε = {} drove a level-{l} diagonal entry non-positive",
                    eps[l]
                )));
            }
            let (theta, theta_converged) = assembly::select_damping(&a, &diag);
            let (p, r) = match (&lev.p, &lev.r) {
                (Some(p), Some(rm)) => {
                    let p_dense = p.to_dense();
                    let r_dense = rm.to_dense();
                    let p_new = match draw(p_dense.nrows(), p_dense.ncols(), eps[l]) {
                        Some(e_p) => p_dense + e_p,
                        None => p_dense,
                    };
                    let r_new = match draw(r_dense.nrows(), r_dense.ncols(), eps[l]) {
                        Some(e_r) => r_dense + e_r,
                        None => r_dense,
                    };
                    (Some(LinOp::Dense(p_new)), Some(LinOp::Dense(r_new)))
                }
                _ => (None, None),
            };
            levels.push(StackLevel {
                points: lev.points.clone(),
                stats: lev.stats,
                a: LinOp::Dense(a),
                diag,
                theta,
                theta_converged,
                p,
                r,
            });
        }
        LevelStack::from_levels(
            self.manifold,
            self.op,
            levels,
            StackMode::Perturbed { eps: eps.to_vec() },
        )
    }

    /// Sub-stack starting at level `from`, which becomes the directly solved
    /// coarsest level.  Because nested grids refine by the same factor, this
    /// is exactly the stack a shallower hierarchy with a finer base would
    /// produce — the kernel depends only on the finest fill distance.
    pub fn suffix(&self, from: usize) -> Result<LevelStack> {
        if from >= self.levels.len() {
            return Err(MgError::Dimension(format!(
                "suffix start {from} exceeds depth {}",
                self.depth()
            )));
        }
        let levels = self
            .levels
            .iter()
            .enumerate()
            .skip(from)
            .map(|(l, lev)| StackLevel {
                points: lev.points.clone(),
                stats: lev.stats,
                a: lev.a.clone(),
                diag: lev.diag.clone(),
                theta: lev.theta,
                theta_converged: lev.theta_converged,
                p: if l == from { None } else { lev.p.clone() },
                r: if l == from { None } else { lev.r.clone() },
            })
            .collect();
        LevelStack::from_levels(self.manifold, self.op, levels, self.mode.clone())
    }

    /// The perturbation schedule `ε_ℓ = h_ℓ^{d+2}` under which contraction
    /// provably survives.
    pub fn default_perturbation_sizes(&self) -> Vec<f64> {
        // h^(d+2) only makes sense below unit fill distance; a coarsest level
        // with h ≥ 1 would get a perturbation larger than the matrix itself,
        // so such levels are left exact.
        let d = self.manifold.dim() as i32;
        self.levels
            .iter()
            .map(|lev| {
                if lev.stats.h < 1.0 {
                    lev.stats.h.powi(d + 2)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Which error-propagation matrix to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleKind {
    TwoGrid,
    TauCycle,
}

// ---------------------------------------------------------------------------
// Jacobi step
// ---------------------------------------------------------------------------

fn jacobi_apply(
    a: &LinOp,
    diag: &Vector,
    theta: f64,
    u: &Vector,
    b: &Vector,
    ledger: &mut FlopLedger,
) -> Vector {
    let n = u.len();
    let au = a.apply(u);
    let mut out = u.clone();
    for i in 0..n {
        out[i] += theta * (b[i] - au[i]) / diag[i];
    }
    ledger.add(a.apply_flops() + 4 * n as u64);
    out
}

/// One damped Jacobi step `(id − θB⁻¹A)u + θB⁻¹b` on a dense level system.
pub fn jacobi_step(system: &LevelSystem, u: &Vector, b: &Vector) -> Result<Vector> {
    let n = system.a.nrows();
    if u.len() != n || b.len() != n {
        return Err(MgError::Dimension(format!(
            "Jacobi step on {n} unknowns got vectors of length {} and {}",
            u.len(),
            b.len()
        )));
    }
    let mut ledger = FlopLedger::default();
    let op = LinOp::Dense(system.a.clone());
    Ok(jacobi_apply(&op, &system.diag, system.theta, u, b, &mut ledger))
}

// ---------------------------------------------------------------------------
// Solve reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// ℓ₂ residual norms, starting with the initial residual.
    pub residual_history: Vec<f64>,
    /// Successive residual ratios.
    pub contraction_history: Vec<f64>,
    /// Geometric mean of the last (up to) 5 ratios.
    pub asymptotic_contraction: Option<f64>,
    /// Multiply-adds spent in this solve (matvecs, smoothing, transfers,
    /// coarse solves, residual checks).
    pub flops: u64,
    pub mode: String,
    /// False for configurations (τ < 2) outside the contraction theory.
    pub within_theory: bool,
}

/// Geometric mean of the last `k` entries (`None` when empty).
pub fn geometric_tail(ratios: &[f64], k: usize) -> Option<f64> {
    if ratios.is_empty() {
        return None;
    }
    let tail = &ratios[ratios.len().saturating_sub(k)..];
    let log_sum: f64 = tail.iter().map(|&r| r.max(f64::MIN_POSITIVE).ln()).sum();
    Some((log_sum / tail.len() as f64).exp())
}

// ---------------------------------------------------------------------------
// Scalar recursion bound
// ---------------------------------------------------------------------------

/// Outcome of iterating `x_{n+1} = α + β·x_nᵗ` from `x₀ = 0`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct RecursionCheck {
    /// Whether the trajectory stayed ≤ γ for all steps.
    pub holds: bool,
    pub trajectory_max: f64,
    /// Whether (τ, β, γ, α) satisfy the lemma hypotheses
    /// `τ ≥ 2`, `β > 1/τ`, `0 < γ < 1`,
    /// `α ≤ (τ−1)/τ · min{(βτ)^{−1/(τ−1)}, γ}`.
    pub hypotheses_met: bool,
    /// The admissible α threshold above.
    pub alpha_bound: f64,
}

/// Iterate the recursion governing level-wise contraction factors and test
/// whether it stays below `gamma`.  Hypothesis violations are reported, not
/// rejected — divergent trajectories simply fail `holds`.
pub fn recursive_bound_check(
    alpha: f64,
    beta: f64,
    tau: usize,
    gamma: f64,
    n_steps: usize,
) -> RecursionCheck {
    let tf = tau as f64;
    let alpha_bound = if tau >= 2 && beta > 0.0 {
        (tf - 1.0) / tf * ((beta * tf).powf(-1.0 / (tf - 1.0))).min(gamma)
    } else {
        f64::NAN
    };
    let hypotheses_met = tau >= 2
        && beta > 1.0 / tf
        && gamma > 0.0
        && gamma < 1.0
        && alpha >= 0.0
        && alpha_bound.is_finite()
        && alpha <= alpha_bound;

    let mut x = 0.0_f64;
    let mut trajectory_max = 0.0_f64;
    let mut holds = true;
    for _ in 0..n_steps {
        x = alpha + beta * x.powi(tau as i32);
        if !x.is_finite() {
            trajectory_max = f64::INFINITY;
            holds = false;
            break;
        }
        trajectory_max = trajectory_max.max(x);
        if x > gamma {
            holds = false;
        }
    }
    RecursionCheck {
        holds,
        trajectory_max,
        hypotheses_met,
        alpha_bound,
    }
}
