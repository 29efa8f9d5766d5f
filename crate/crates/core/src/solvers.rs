//! Krylov and relaxation machinery: Chebyshev smoothing, SOR sweeps,
//! preconditioned CG with an optional nullspace projection, flexible GMRES
//! with restarts, and the geometric V-cycle over an AGCA hierarchy with a
//! CG-SOR coarsest-level solve.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coarsening::{AgcaHierarchy, LevelOperator, LocalKernel};
use crate::sparse::CsrMatrix;
use crate::transfer::{prolongate, prolongate_vector, restrict, restrict_vector};
use crate::{Error, Result};

/// A square linear operator applied matrix-free.
pub trait LinOp {
    fn dim(&self) -> usize;
    fn apply_to(&self, x: &[f64], y: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_to(x, &mut y);
        y
    }
}

impl LinOp for CsrMatrix {
    fn dim(&self) -> usize {
        debug_assert_eq!(self.n_rows, self.n_cols);
        self.n_rows
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }
}

impl<K: LocalKernel<N>, const N: usize> LinOp for LevelOperator<'_, K, N> {
    fn dim(&self) -> usize {
        self.n_dofs()
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        self.apply_into(x, y);
    }
}

/// Dense row-major operator, mostly for tests and tiny oracles.
#[derive(Debug, Clone)]
pub struct DenseOp(pub Vec<Vec<f64>>);

impl LinOp for DenseOp {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        for (yi, row) in y.iter_mut().zip(&self.0) {
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

/// Mutable preconditioner application: `z <- M^-1 r`.
pub type PrecondFn<'a> = &'a mut dyn FnMut(&[f64], &mut [f64]);
/// In-place subspace projection hook.
pub type ProjectFn<'a> = &'a dyn Fn(&mut [f64]);

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// V-cycle parameters.
#[derive(Debug, Clone, Serialize)]
pub struct VCycleConfig {
    pub pre_smooth: usize,
    pub post_smooth: usize,
    pub cheby_order: usize,
    pub coarse_tol: f64,
    pub min_level: usize,
}

impl Default for VCycleConfig {
    fn default() -> Self {
        VCycleConfig {
            pre_smooth: 2,
            post_smooth: 2,
            cheby_order: 3,
            coarse_tol: 1e-8,
            min_level: 0,
        }
    }
}

impl VCycleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.cheby_order) {
            return Err(Error::InvalidArgument(format!(
                "cheby_order must be in [2, 4], got {}",
                self.cheby_order
            )));
        }
        if self.coarse_tol <= 0.0 || self.coarse_tol >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "coarse_tol must be in (0, 1), got {}",
                self.coarse_tol
            )));
        }
        Ok(())
    }
}

/// Krylov solver parameters. `floor` is the relative machine-precision
/// stop: iteration also ends once the residual reaches `floor * ||b||`.
#[derive(Debug, Clone, Serialize)]
pub struct KrylovConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
    pub floor: f64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            tol: 1e-6,
            max_iter: 500,
            restart: 30,
            floor: 1e-13,
        }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tol must be in (0, 1), got {}",
                self.tol
            )));
        }
        if self.restart == 0 || self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "restart and max_iter must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

/// Stored-operator memory snapshot attached to solve reports.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct MemorySnapshot {
    pub stored_matrices: usize,
    pub stored_entries: usize,
    pub stored_bytes: usize,
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// l2 residual norms, starting with the initial residual.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub stagnated: bool,
    pub seconds: f64,
    pub memory: Option<MemorySnapshot>,
}

impl SolveReport {
    fn new() -> Self {
        SolveReport {
            iterations: 0,
            residuals: Vec::new(),
            converged: false,
            stagnated: false,
            seconds: 0.0,
            memory: None,
        }
    }
}

/// Largest eigenvalue estimate of `D^-1 A` on the interior subspace: 25
/// power iterations from a fixed-seed random vector, Rayleigh quotient.
pub fn estimate_lambda_max<O: LinOp + ?Sized>(
    op: &O,
    diag: &[f64],
    interior: &[bool],
) -> Result<f64> {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut x: Vec<f64> = (0..n)
        .map(|i| if interior[i] { rng.gen_range(-1.0..1.0) } else { 0.0 })
        .collect();
    let nx = norm2(&x);
    if nx == 0.0 {
        return Err(Error::InvalidArgument("empty interior subspace".into()));
    }
    x.iter_mut().for_each(|v| *v /= nx);
    let mut y = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..25 {
        op.apply_to(&x, &mut y);
        for i in 0..n {
            y[i] = if interior[i] { y[i] / diag[i] } else { 0.0 };
        }
        lambda = dot(&x, &y);
        let ny = norm2(&y);
        if ny == 0.0 {
            return Err(Error::Breakdown("power iteration hit a zero vector".into()));
        }
        for i in 0..n {
            x[i] = y[i] / ny;
        }
    }
    if lambda <= 0.0 {
        return Err(Error::Breakdown(format!(
            "nonpositive Rayleigh quotient {lambda:.3e} in lambda_max estimate"
        )));
    }
    Ok(lambda)
}

/// One Chebyshev smoothing application of the given polynomial order on the
/// Jacobi-preconditioned residual, targeting the interval `[a_lo, a_hi]` of
/// the `D^-1 A` spectrum. Boundary DoFs are left untouched.
pub fn chebyshev_smooth<O: LinOp + ?Sized>(
    op: &O,
    diag: &[f64],
    interior: &[bool],
    b: &[f64],
    x: &mut [f64],
    order: usize,
    interval: (f64, f64),
) -> Result<()> {
    let (lo, hi) = interval;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidArgument(format!(
            "invalid Chebyshev interval [{lo}, {hi}]"
        )));
    }
    if order == 0 {
        return Ok(());
    }
    let n = op.dim();
    let theta = 0.5 * (hi + lo);
    let delta = 0.5 * (hi - lo);
    let sigma = theta / delta;
    let mut r = vec![0.0; n];
    op.apply_to(x, &mut r);
    for i in 0..n {
        r[i] = if interior[i] { b[i] - r[i] } else { 0.0 };
    }
    let mut d: Vec<f64> = (0..n)
        .map(|i| if interior[i] { r[i] / diag[i] / theta } else { 0.0 })
        .collect();
    let mut rho_old = 1.0 / sigma;
    let mut ad = vec![0.0; n];
    for _ in 1..order {
        for i in 0..n {
            x[i] += d[i];
        }
        op.apply_to(&d, &mut ad);
        for i in 0..n {
            if interior[i] {
                r[i] -= ad[i];
            }
        }
        let rho = 1.0 / (2.0 * sigma - rho_old);
        for i in 0..n {
            d[i] = if interior[i] {
                rho * rho_old * d[i] + 2.0 * rho / delta * r[i] / diag[i]
            } else {
                0.0
            };
        }
        rho_old = rho;
    }
    for i in 0..n {
        x[i] += d[i];
    }
    Ok(())
}

/// One forward SOR/Gauss-Seidel sweep on an assembled matrix.
pub fn sor_sweep(a: &CsrMatrix, b: &[f64], x: &mut [f64], omega: f64) -> Result<()> {
    for i in 0..a.n_rows {
        let mut sum = 0.0;
        let mut diag = 0.0;
        for (j, v) in a.row(i) {
            if j == i {
                diag = v;
            } else {
                sum += v * x[j];
            }
        }
        if diag == 0.0 {
            return Err(Error::Matrix(format!("zero diagonal entry at row {i}")));
        }
        let xi = (b[i] - sum) / diag;
        x[i] += omega * (xi - x[i]);
    }
    Ok(())
}

/// One backward SOR sweep; with the forward sweep it forms the symmetric
/// smoother used to precondition CG.
pub fn sor_sweep_backward(a: &CsrMatrix, b: &[f64], x: &mut [f64], omega: f64) -> Result<()> {
    for i in (0..a.n_rows).rev() {
        let mut sum = 0.0;
        let mut diag = 0.0;
        for (j, v) in a.row(i) {
            if j == i {
                diag = v;
            } else {
                sum += v * x[j];
            }
        }
        if diag == 0.0 {
            return Err(Error::Matrix(format!("zero diagonal entry at row {i}")));
        }
        let xi = (b[i] - sum) / diag;
        x[i] += omega * (xi - x[i]);
    }
    Ok(())
}

/// Symmetric SOR application from a zero initial guess: `z ~ M^-1 r` with
/// `M` the SSOR splitting (omega = 1 gives symmetric Gauss-Seidel).
pub fn ssor_apply(a: &CsrMatrix, r: &[f64], z: &mut [f64], omega: f64) -> Result<()> {
    z.fill(0.0);
    sor_sweep(a, r, z, omega)?;
    sor_sweep_backward(a, r, z, omega)
}

/// Preconditioned conjugate gradients with an optional nullspace projection
/// hook applied to the residual, the preconditioned residual, and the
/// iterate each iteration. Stops on the relative-residual criterion.
pub fn cg<O: LinOp + ?Sized>(
    op: &O,
    mut precond: Option<PrecondFn<'_>>,
    b: &[f64],
    x0: &[f64],
    cfg: &KrylovConfig,
    project: Option<ProjectFn<'_>>,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let n = op.dim();
    assert_eq!(b.len(), n, "rhs size mismatch");
    let start = Instant::now();
    let mut report = SolveReport::new();
    let mut x = x0.to_vec();
    if let Some(p) = project {
        p(&mut x);
    }
    let norm_b = norm2(b);
    let target = (cfg.tol.max(cfg.floor)) * norm_b;
    let mut r = vec![0.0; n];
    op.apply_to(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if let Some(p) = project {
        p(&mut r);
    }
    let mut res = norm2(&r);
    report.residuals.push(res);
    if res <= target || norm_b == 0.0 {
        report.converged = true;
        report.seconds = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }
    let mut z = vec![0.0; n];
    let apply_m = |precond: &mut Option<PrecondFn<'_>>,
                   r: &[f64],
                   z: &mut [f64]| match precond {
        Some(m) => m(r, z),
        None => z.copy_from_slice(r),
    };
    apply_m(&mut precond, &r, &mut z);
    if let Some(p) = project {
        p(&mut z);
    }
    let mut p_dir = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..cfg.max_iter {
        op.apply_to(&p_dir, &mut ap);
        let pap = dot(&p_dir, &ap);
        if pap <= 0.0 {
            return Err(Error::Breakdown(format!(
                "CG direction with nonpositive curvature: p^T A p = {pap:.3e}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p_dir[i];
            r[i] -= alpha * ap[i];
        }
        if let Some(pr) = project {
            pr(&mut x);
            pr(&mut r);
        }
        report.iterations += 1;
        res = norm2(&r);
        report.residuals.push(res);
        if res <= target {
            report.converged = true;
            break;
        }
        apply_m(&mut precond, &r, &mut z);
        if let Some(pr) = project {
            pr(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p_dir[i] = z[i] + beta * p_dir[i];
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok((x, report))
}

/// Right-preconditioned flexible GMRES with restarts. The preconditioner may
/// change between iterations (inner iterative solves); both the Krylov basis
/// and the preconditioned vectors are stored. Stops on the relative-residual
/// criterion or the machine-precision floor; a restart cycle without
/// progress is reported as stagnation, not an error.
pub fn fgmres<O: LinOp + ?Sized>(
    op: &O,
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x0: &[f64],
    cfg: &KrylovConfig,
) -> (Vec<f64>, SolveReport) {
    let n = op.dim();
    assert_eq!(b.len(), n, "rhs size mismatch");
    let start = Instant::now();
    let mut report = SolveReport::new();
    let mut x = x0.to_vec();
    let norm_b = norm2(b);
    if norm_b == 0.0 {
        report.converged = true;
        report.residuals.push(0.0);
        report.seconds = start.elapsed().as_secs_f64();
        return (x, report);
    }
    let target = (cfg.tol * norm_b).max(cfg.floor * norm_b);
    let m = cfg.restart;
    let mut r = vec![0.0; n];
    op.apply_to(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut beta = norm2(&r);
    report.residuals.push(beta);
    if beta <= target {
        report.converged = true;
        report.seconds = start.elapsed().as_secs_f64();
        return (x, report);
    }
    'outer: loop {
        let cycle_start_res = beta;
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(m);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h_cols: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<f64> = Vec::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut j_done = 0;
        let mut happy = false;
        for j in 0..m {
            let mut z = vec![0.0; n];
            precond(&basis[j], &mut z);
            let mut w = op.apply_vec(&z);
            zs.push(z);
            let mut h = vec![0.0; j + 2];
            for (i, v) in basis.iter().enumerate() {
                h[i] = dot(&w, v);
                for k in 0..n {
                    w[k] -= h[i] * v[k];
                }
            }
            let wn = norm2(&w);
            h[j + 1] = wn;
            for i in 0..j {
                let t = cs[i] * h[i] + sn[i] * h[i + 1];
                h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
                h[i] = t;
            }
            let denom = (h[j] * h[j] + h[j + 1] * h[j + 1]).sqrt();
            let (c, s) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (h[j] / denom, h[j + 1] / denom)
            };
            cs.push(c);
            sn.push(s);
            h[j] = c * h[j] + s * h[j + 1];
            h[j + 1] = 0.0;
            let g_next = -s * g[j];
            g[j] *= c;
            g[j + 1] = g_next;
            h_cols.push(h);
            j_done = j + 1;
            report.iterations += 1;
            let res_est = g[j + 1].abs();
            report.residuals.push(res_est);
            if wn <= 1e-14 * norm_b {
                happy = true; // invariant subspace reached
                break;
            }
            if res_est <= target || report.iterations >= cfg.max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        // back-substitute R y = g
        let mut y = vec![0.0; j_done];
        for i in (0..j_done).rev() {
            let mut s = g[i];
            for k in (i + 1)..j_done {
                s -= h_cols[k][i] * y[k];
            }
            y[i] = s / h_cols[i][i];
        }
        for (k, z) in zs.iter().take(j_done).enumerate() {
            for i in 0..n {
                x[i] += y[k] * z[i];
            }
        }
        op.apply_to(&x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        beta = norm2(&r);
        if beta <= target || happy {
            report.converged = true;
            break 'outer;
        }
        if report.iterations >= cfg.max_iter {
            break 'outer;
        }
        if beta >= cycle_start_res * (1.0 - 1e-12) {
            report.stagnated = true;
            break 'outer;
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    (x, report)
}

/// Geometric multigrid over an AGCA hierarchy: per-level Chebyshev smoothing
/// with power-iteration spectral bounds, transpose restriction, and a
/// CG-SOR solve on the assembled coarsest operator.
pub struct MgSolver<'a, K: LocalKernel<N>, const N: usize> {
    hier: &'a AgcaHierarchy<K, N>,
    pub cfg: VCycleConfig,
    diags: Vec<Vec<f64>>,
    intervals: Vec<(f64, f64)>,
    coarse: CsrMatrix,
}

impl<'a, K: LocalKernel<N>, const N: usize> MgSolver<'a, K, N> {
    pub fn new(hier: &'a AgcaHierarchy<K, N>, cfg: VCycleConfig) -> Result<Self> {
        cfg.validate()?;
        let top = hier.max_level();
        if cfg.min_level > top {
            return Err(Error::Level(format!(
                "min_level {} exceeds max level {top}",
                cfg.min_level
            )));
        }
        let mut diags = vec![Vec::new(); top + 1];
        let mut intervals = vec![(0.0, 0.0); top + 1];
        for l in cfg.min_level..=top {
            let op = hier.level(l);
            let d = op.diagonal();
            if l > cfg.min_level {
                let lam = estimate_lambda_max(&op, &d, op.interior())?;
                intervals[l] = (lam / 8.0, 1.1 * lam);
            }
            diags[l] = d;
        }
        let coarse = hier.level(cfg.min_level).assemble_sparse();
        Ok(MgSolver {
            hier,
            cfg,
            diags,
            intervals,
            coarse,
        })
    }

    fn components(&self) -> usize {
        N / 3
    }

    fn restrict_level(&self, l_fine: usize, v: &[f64]) -> Vec<f64> {
        let mesh = &self.hier.mesh;
        if self.components() == 2 {
            restrict_vector(mesh, l_fine, v).expect("level in range")
        } else {
            restrict(mesh, l_fine, v).expect("level in range")
        }
    }

    fn prolongate_level(&self, l_coarse: usize, v: &[f64]) -> Vec<f64> {
        let mesh = &self.hier.mesh;
        if self.components() == 2 {
            prolongate_vector(mesh, l_coarse, v).expect("level in range")
        } else {
            prolongate(mesh, l_coarse, v).expect("level in range")
        }
    }

    fn smooth(&self, level: usize, b: &[f64], x: &mut [f64], steps: usize) {
        let op = self.hier.level(level);
        for _ in 0..steps {
            chebyshev_smooth(
                &op,
                &self.diags[level],
                op.interior(),
                b,
                x,
                self.cfg.cheby_order,
                self.intervals[level],
            )
            .expect("valid smoothing interval");
        }
    }

    fn coarse_solve(&self, b: &[f64], x: &mut [f64]) {
        let cfg = KrylovConfig {
            tol: self.cfg.coarse_tol,
            max_iter: 10 * self.coarse.n_rows.max(100),
            restart: 30,
            floor: 1e-14,
        };
        let coarse = &self.coarse;
        let mut precond = |r: &[f64], z: &mut [f64]| {
            ssor_apply(coarse, r, z, 1.0).expect("nonzero diagonal");
        };
        let (sol, _) =
            cg(coarse, Some(&mut precond), b, x, &cfg, None).expect("coarse operator is SPD");
        x.copy_from_slice(&sol);
    }

    fn cycle(&self, level: usize, b: &[f64], x: &mut [f64]) {
        if level == self.cfg.min_level {
            self.coarse_solve(b, x);
            return;
        }
        let op = self.hier.level(level);
        self.smooth(level, b, x, self.cfg.pre_smooth);
        let mut r = op.apply_vec(x);
        for i in 0..r.len() {
            r[i] = b[i] - r[i];
        }
        let mut r_c = self.restrict_level(level, &r);
        let interior_c = self.hier.interior(level - 1);
        for (v, &keep) in r_c.iter_mut().zip(interior_c) {
            if !keep {
                *v = 0.0;
            }
        }
        let mut e_c = vec![0.0; r_c.len()];
        self.cycle(level - 1, &r_c, &mut e_c);
        let e = self.prolongate_level(level - 1, &e_c);
        for i in 0..x.len() {
            x[i] += e[i];
        }
        self.smooth(level, b, x, self.cfg.post_smooth);
    }

    /// One V-cycle from the finest level. The right-hand side must be zero
    /// on boundary DoFs; boundary components of `x` are left untouched.
    pub fn vcycle(&self, b: &[f64], x: &mut [f64]) {
        let top = self.hier.max_level();
        assert_eq!(b.len(), self.hier.level(top).n_dofs(), "rhs size mismatch");
        self.cycle(top, b, x);
    }

    /// Stationary V-cycle iteration until `||r|| <= tol * ||b||`.
    pub fn solve(&self, b: &[f64], tol: f64, max_cycles: usize) -> (Vec<f64>, SolveReport) {
        let start = Instant::now();
        let top = self.hier.max_level();
        let op = self.hier.level(top);
        let interior = op.interior();
        let b0: Vec<f64> = b
            .iter()
            .zip(interior)
            .map(|(&v, &keep)| if keep { v } else { 0.0 })
            .collect();
        let mut x = vec![0.0; b.len()];
        let norm_b = norm2(&b0);
        let mut report = SolveReport::new();
        let mut res = norm_b;
        report.residuals.push(res);
        while res > tol * norm_b && report.iterations < max_cycles && norm_b > 0.0 {
            self.vcycle(&b0, &mut x);
            let mut r = op.apply_vec(&x);
            for i in 0..r.len() {
                r[i] = b0[i] - r[i];
            }
            res = norm2(&r);
            report.iterations += 1;
            report.residuals.push(res);
        }
        report.converged = res <= tol * norm_b;
        report.seconds = start.elapsed().as_secs_f64();
        (x, report)
    }
}
