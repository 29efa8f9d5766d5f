//! The discrete generalized Stokes saddle-point system on the P1-iso-P2/P1
//! pairing (linear velocity on the once-more-refined grid, linear pressure),
//! its matrix-free application, the block-triangular preconditioner with an
//! AGCA-multigrid velocity solve, and the diag(A)-BFBT Schur complement
//! approximation with an assembled sparse Z suboperator.

use std::sync::Arc;

use crate::coarsening::{
    build_agca_hierarchy, AgcaHierarchy, CoarseningPlan, LevelOperator, ViscousKernel,
};
use crate::fem::{
    assemble_vector_load, local_divergence, quadrature, CoefficientEval, QuadratureRule,
    VectorFn,
};
use crate::mesh::MeshHierarchy;
use crate::solvers::{
    cg, fgmres, norm2, ssor_apply, KrylovConfig, LinOp, MemorySnapshot, MgSolver, SolveReport,
    VCycleConfig,
};
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

/// Removes the algebraic mean: the explicit handling of the constant
/// pressure nullspace of the enclosed flow.
pub fn project_mean_free(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// The saddle-point operator `K = [[A, B^T], [B, 0]]` at one level pair:
/// velocity on `velocity_level`, pressure one level coarser. The A block is
/// a blended AGCA level operator; B and B^T are coefficient-free and always
/// re-discretized, applied matrix-free from per-pressure-element blocks.
/// Homogeneous Dirichlet rows of the velocity block act as the identity.
pub struct StokesOperator<'a> {
    hier: &'a AgcaHierarchy<ViscousKernel, 6>,
    pub velocity_level: usize,
    pub pressure_level: usize,
    quad: QuadratureRule,
}

impl<'a> StokesOperator<'a> {
    pub fn new(
        hier: &'a AgcaHierarchy<ViscousKernel, 6>,
        velocity_level: usize,
    ) -> Result<Self> {
        if velocity_level == 0 {
            return Err(Error::Level(
                "velocity level 0 leaves no coarser grid for the pressure".into(),
            ));
        }
        if velocity_level > hier.max_level() {
            return Err(Error::Level(format!(
                "velocity level {velocity_level} exceeds hierarchy max {}",
                hier.max_level()
            )));
        }
        Ok(StokesOperator {
            hier,
            velocity_level,
            pressure_level: velocity_level - 1,
            quad: quadrature(2).expect("degree-2 rule"),
        })
    }

    pub fn mesh(&self) -> &Arc<MeshHierarchy> {
        &self.hier.mesh
    }

    pub fn a_block(&self) -> LevelOperator<'a, ViscousKernel, 6> {
        self.hier.level(self.velocity_level)
    }

    pub fn n_velocity(&self) -> usize {
        2 * self.hier.mesh.n_vertices(self.velocity_level)
    }

    pub fn n_pressure(&self) -> usize {
        self.hier.mesh.n_vertices(self.pressure_level)
    }

    pub fn velocity_interior(&self) -> &'a [bool] {
        self.hier.interior(self.velocity_level)
    }

    /// `B u`: boundary velocity components are zeroed first.
    pub fn apply_divergence(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.n_velocity(), "velocity size mismatch");
        let mesh = &self.hier.mesh;
        let interior = self.velocity_interior();
        let mut out = vec![0.0; self.n_pressure()];
        for m in 0..mesh.macro_grid.macro_elements.len() {
            for pel in mesh
                .micro_elements(m, self.pressure_level)
                .expect("valid level")
            {
                let div = local_divergence(mesh, &pel, &self.quad).expect("non-degenerate");
                let pids = pel.vertex_ids(mesh);
                for (c, child) in div.children.iter().enumerate() {
                    let vdofs = child.vector_dofs(mesh);
                    let mut uloc = [0.0; 6];
                    for j in 0..6 {
                        uloc[j] = if interior[vdofs[j]] { u[vdofs[j]] } else { 0.0 };
                    }
                    for k in 0..3 {
                        let mut acc = 0.0;
                        for j in 0..6 {
                            acc += div.blocks[c][k][j] * uloc[j];
                        }
                        out[pids[k]] += acc;
                    }
                }
            }
        }
        out
    }

    /// `B^T p`: output is zero on boundary velocity DoFs (identity rows).
    pub fn apply_gradient(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.n_pressure(), "pressure size mismatch");
        let mesh = &self.hier.mesh;
        let interior = self.velocity_interior();
        let mut out = vec![0.0; self.n_velocity()];
        for m in 0..mesh.macro_grid.macro_elements.len() {
            for pel in mesh
                .micro_elements(m, self.pressure_level)
                .expect("valid level")
            {
                let div = local_divergence(mesh, &pel, &self.quad).expect("non-degenerate");
                let pids = pel.vertex_ids(mesh);
                for (c, child) in div.children.iter().enumerate() {
                    let vdofs = child.vector_dofs(mesh);
                    for k in 0..3 {
                        let pk = p[pids[k]];
                        if pk != 0.0 {
                            for j in 0..6 {
                                out[vdofs[j]] += div.blocks[c][k][j] * pk;
                            }
                        }
                    }
                }
            }
        }
        for (v, &keep) in out.iter_mut().zip(interior) {
            if !keep {
                *v = 0.0;
            }
        }
        out
    }

    /// Assembles B as a sparse matrix (pressure rows, masked velocity
    /// columns), entrywise the same data the matrix-free application uses.
    pub fn assemble_b(&self) -> CsrMatrix {
        let mesh = &self.hier.mesh;
        let interior = self.velocity_interior();
        let mut trips = Vec::new();
        for m in 0..mesh.macro_grid.macro_elements.len() {
            for pel in mesh
                .micro_elements(m, self.pressure_level)
                .expect("valid level")
            {
                let div = local_divergence(mesh, &pel, &self.quad).expect("non-degenerate");
                let pids = pel.vertex_ids(mesh);
                for (c, child) in div.children.iter().enumerate() {
                    let vdofs = child.vector_dofs(mesh);
                    for k in 0..3 {
                        for j in 0..6 {
                            if interior[vdofs[j]] && div.blocks[c][k][j] != 0.0 {
                                trips.push((pids[k], vdofs[j], div.blocks[c][k][j]));
                            }
                        }
                    }
                }
            }
        }
        CsrMatrix::from_triplets(self.n_pressure(), self.n_velocity(), trips)
    }

    /// `K (u, p) = (A u + B^T p, B u)` with identity rows on the velocity
    /// boundary.
    pub fn apply_k(&self, u: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut r_u = self.a_block().apply(u);
        let g = self.apply_gradient(p);
        for i in 0..r_u.len() {
            r_u[i] += g[i];
        }
        let r_p = self.apply_divergence(u);
        (r_u, r_p)
    }
}

impl LinOp for StokesOperator<'_> {
    fn dim(&self) -> usize {
        self.n_velocity() + self.n_pressure()
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        let nv = self.n_velocity();
        let (r_u, r_p) = self.apply_k(&x[..nv], &x[nv..]);
        y[..nv].copy_from_slice(&r_u);
        y[nv..].copy_from_slice(&r_p);
    }
}

/// The matrix-free middle operator `B W^-1 A W^-1 B^T` of the BFBT
/// approximation, acting on the pressure space.
pub struct BfbtMiddleOp<'a, 'b> {
    stokes: &'b StokesOperator<'a>,
    w: &'b [f64],
}

impl LinOp for BfbtMiddleOp<'_, '_> {
    fn dim(&self) -> usize {
        self.stokes.n_pressure()
    }

    fn apply_to(&self, p: &[f64], out: &mut [f64]) {
        let mut t = self.stokes.apply_gradient(p);
        for (v, w) in t.iter_mut().zip(self.w) {
            *v /= w;
        }
        let mut a_t = self.stokes.a_block().apply(&t);
        for (v, w) in a_t.iter_mut().zip(self.w) {
            *v /= w;
        }
        out.copy_from_slice(&self.stokes.apply_divergence(&a_t));
    }
}

/// Extracts `W = diag(A_L)` through the matrix-free diagonal and assembles
/// the sparse suboperator `Z = B W^-1 B^T` on the pressure space.
pub fn assemble_z(stokes: &StokesOperator<'_>) -> Result<(CsrMatrix, Vec<f64>)> {
    let w = stokes.a_block().diagonal();
    if let Some((i, &d)) = w.iter().enumerate().find(|(_, &d)| d <= 0.0) {
        return Err(Error::Matrix(format!(
            "nonpositive diagonal entry {d:.3e} at velocity DoF {i}"
        )));
    }
    let b = stokes.assemble_b();
    let w_inv: Vec<f64> = w.iter().map(|d| 1.0 / d).collect();
    let z = b.scaled_aat(&w_inv);
    Ok((z, w))
}

/// The diag(A)-BFBT least-squares commutator: `S~^-1 = Z^-1 M Z^-1` with
/// `M = B W^-1 A W^-1 B^T`, `W = diag(A)`, `Z = B W^-1 B^T`. Z solves are
/// projected CG preconditioned by symmetric SOR; all pressure vectors are
/// kept mean-free (constant nullspace of the enclosed flow).
pub struct BfbtPreconditioner {
    pub w: Vec<f64>,
    pub z: CsrMatrix,
    pub z_cfg: KrylovConfig,
}

impl BfbtPreconditioner {
    pub fn new(stokes: &StokesOperator<'_>, z_tol: f64) -> Result<Self> {
        let (z, w) = assemble_z(stokes)?;
        let z_cfg = KrylovConfig {
            tol: z_tol,
            max_iter: 40 * z.n_rows.max(50),
            restart: 30,
            floor: 1e-14,
        };
        Ok(BfbtPreconditioner { w, z, z_cfg })
    }

    /// Projected CG-SOR solve of `Z t = rhs` on the mean-free subspace.
    pub fn solve_z(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut b = rhs.to_vec();
        project_mean_free(&mut b);
        let z = &self.z;
        let mut precond =
            |r: &[f64], out: &mut [f64]| ssor_apply(z, r, out, 1.0).expect("nonzero diagonal");
        let project = |v: &mut [f64]| project_mean_free(v);
        let (t, report) = cg(
            z,
            Some(&mut precond),
            &b,
            &vec![0.0; b.len()],
            &self.z_cfg,
            Some(&project),
        )?;
        if !report.converged {
            return Err(Error::Breakdown(format!(
                "Z-solve stalled at relative residual {:.3e} after {} iterations",
                report.residuals.last().unwrap() / report.residuals[0].max(f64::MIN_POSITIVE),
                report.iterations
            )));
        }
        Ok(t)
    }

    /// `S~^-1 r_p` with a caller-supplied middle operator (the standard one
    /// is `B W^-1 A W^-1 B^T`; tests collapse it to Z by substituting W for
    /// A).
    pub fn apply_with_mid<M: LinOp + ?Sized>(&self, mid: &M, r_p: &[f64]) -> Result<Vec<f64>> {
        let t1 = self.solve_z(r_p)?;
        let t2 = mid.apply_vec(&t1);
        let mut out = self.solve_z(&t2)?;
        project_mean_free(&mut out);
        Ok(out)
    }

    /// The full `S~^-1 r_p` application.
    pub fn apply(&self, stokes: &StokesOperator<'_>, r_p: &[f64]) -> Result<Vec<f64>> {
        let mid = BfbtMiddleOp { stokes, w: &self.w };
        self.apply_with_mid(&mid, r_p)
    }
}

/// One application of the block upper-triangular preconditioner:
/// `p^ = S~^-1 r_p`, then `u^ = A~^-1 (r_u + B^T p^)` where `A~^-1` is a
/// single AGCA-multigrid V-cycle with zero initial guess. `flip_sign`
/// switches the gradient coupling to `r_u - B^T p^` for comparison with the
/// opposite sign convention.
pub fn apply_q_inv(
    stokes: &StokesOperator<'_>,
    bfbt: &BfbtPreconditioner,
    mg: &MgSolver<'_, ViscousKernel, 6>,
    r_u: &[f64],
    r_p: &[f64],
    flip_sign: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p_hat = bfbt.apply(stokes, r_p)?;
    let g = stokes.apply_gradient(&p_hat);
    let sign = if flip_sign { -1.0 } else { 1.0 };
    let interior = stokes.velocity_interior();
    let rhs: Vec<f64> = (0..r_u.len())
        .map(|i| if interior[i] { r_u[i] + sign * g[i] } else { 0.0 })
        .collect();
    let mut u_hat = vec![0.0; r_u.len()];
    mg.vcycle(&rhs, &mut u_hat);
    Ok((u_hat, p_hat))
}

/// Configuration of the outer Stokes solve.
#[derive(Debug, Clone, Default)]
pub struct StokesSolveConfig {
    pub krylov: KrylovConfig,
    pub vcycle: VCycleConfig,
    /// Inner Z-solve tolerance; `None` derives `max(1e-6, tol / 100)` from
    /// the outer tolerance.
    pub z_tol: Option<f64>,
    /// Flip the sign of the gradient coupling inside the preconditioner.
    pub flip_schur_sign: bool,
}

impl StokesSolveConfig {
    pub fn effective_z_tol(&self) -> f64 {
        self.z_tol.unwrap_or_else(|| (self.krylov.tol / 100.0).max(1e-6))
    }
}

/// Result of a Stokes solve: velocity, mean-free pressure, and the report.
pub struct StokesSolution {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub report: SolveReport,
}

/// FGMRES on the right-preconditioned saddle-point system. The velocity
/// hierarchy coarsens only the A block (B stays re-discretized at the finest
/// pair); the final pressure has its mean removed. Non-convergence within
/// the iteration cap is reported, never an error.
pub fn solve_stokes(
    mesh: Arc<MeshHierarchy>,
    eval: CoefficientEval,
    plan: CoarseningPlan,
    rhs: &VectorFn,
    cfg: &StokesSolveConfig,
) -> Result<StokesSolution> {
    cfg.krylov.validate()?;
    cfg.vcycle.validate()?;
    let hier = build_agca_hierarchy(mesh.clone(), ViscousKernel::default(), eval, plan)?;
    let stokes = StokesOperator::new(&hier, mesh.max_level)?;
    let bfbt = BfbtPreconditioner::new(&stokes, cfg.effective_z_tol())?;
    let mg = MgSolver::new(&hier, cfg.vcycle.clone())?;
    let quad = quadrature(2).expect("degree-2 rule");
    let mut b_u = assemble_vector_load(&mesh, stokes.velocity_level, rhs, &quad);
    let interior = stokes.velocity_interior();
    for (v, &keep) in b_u.iter_mut().zip(interior) {
        if !keep {
            *v = 0.0;
        }
    }
    let nv = stokes.n_velocity();
    let np = stokes.n_pressure();
    let mut b = vec![0.0; nv + np];
    b[..nv].copy_from_slice(&b_u);
    let mut inner_failure: Option<Error> = None;
    let precond = |r: &[f64], z: &mut [f64]| {
        match apply_q_inv(
            &stokes,
            &bfbt,
            &mg,
            &r[..nv],
            &r[nv..],
            cfg.flip_schur_sign,
        ) {
            Ok((u_hat, p_hat)) => {
                z[..nv].copy_from_slice(&u_hat);
                z[nv..].copy_from_slice(&p_hat);
            }
            Err(e) => {
                // Fall back to the identity for this application; the outer
                // flexible iteration tolerates it and the run is flagged.
                z.copy_from_slice(r);
                inner_failure = Some(e);
            }
        }
    };
    let (x, mut report) = fgmres(&stokes, precond, &b, &vec![0.0; nv + np], &cfg.krylov);
    if let Some(e) = inner_failure {
        report.stagnated = true;
        report.converged = false;
        eprintln!("warning: inner Schur solve failed during preconditioning: {e}");
    }
    let u = x[..nv].to_vec();
    let mut p = x[nv..].to_vec();
    project_mean_free(&mut p);
    report.memory = Some(MemorySnapshot {
        stored_matrices: hier.store.stored_matrices(),
        stored_entries: hier.store.stored_entries(),
        stored_bytes: hier.store.stored_entries() * std::mem::size_of::<f64>(),
    });
    Ok(StokesSolution { u, p, report })
}

/// Relative residual `|| b - K x ||_2 / || b ||_2` of a Stokes solution,
/// for reporting and tests.
pub fn stokes_relative_residual(
    stokes: &StokesOperator<'_>,
    u: &[f64],
    p: &[f64],
    b_u: &[f64],
) -> f64 {
    let (r_u, r_p) = stokes.apply_k(u, p);
    let mut num = 0.0;
    for i in 0..r_u.len() {
        num += (b_u[i] - r_u[i]).powi(2);
    }
    for v in &r_p {
        num += v * v;
    }
    num.sqrt() / norm2(b_u).max(f64::MIN_POSITIVE)
}
