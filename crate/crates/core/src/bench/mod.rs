//! The sinker benchmark suite: the six viscosity families in their 2D form,
//! deterministic sinker placement, convergence / nu / macro-size sweeps with
//! CSV output, and the memory model for coarse-grid operator storage.

pub mod plot;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarsening::{select_macros, CoarseningPlan};
use crate::fem::{EvalMode, ScalarFn, VectorFn};
use crate::mesh::{build_macro_grid, refine_hierarchy, MeshHierarchy};
use crate::stokes::{solve_stokes, StokesSolveConfig};
use crate::{Error, Result};

/// Grid-unaligned center coordinate: the denominator carries a factor 3, so
/// no 2-power lattice over nx in {4, 8, 16, ...} ever hits it.
pub const C_UA: f64 = 11.0 / 24.0;

/// Radix-inverse Halton value for a 1-based index.
pub fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Deterministic sinker centers: Halton bases (2, 3) mapped affinely into
/// [0.15, 0.85]^2.
pub fn sinker_positions(n: usize) -> Vec<[f64; 2]> {
    (1..=n)
        .map(|j| [0.15 + 0.7 * halton(j, 2), 0.15 + 0.7 * halton(j, 3)])
        .collect()
}

/// Sign convention of the smooth multi-sinker forcing term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsSign {
    /// `f_5 = (0, +(1 - xi_5))`: the force points up at the sinkers.
    Upward,
    /// `f_5 = (0, -(1 - xi_5))`: downward drag at the sinkers.
    Downward,
}

/// One sinker-type test problem: viscosity family, dynamic ratio, smoothing
/// parameter, sinker count and positions, and evaluation conventions.
#[derive(Debug, Clone)]
pub struct SinkerProblem {
    pub family: usize,
    pub dr: f64,
    pub omega: f64,
    pub n_sinkers: usize,
    pub positions: Vec<[f64; 2]>,
    pub eval_mode: EvalMode,
    pub rhs_sign: RhsSign,
    /// Run family 6 with the literal product of ball indicators instead of
    /// the union indicator.
    pub xi6_literal_product: bool,
}

impl SinkerProblem {
    pub fn new(
        family: usize,
        dr: f64,
        omega: f64,
        n_sinkers: usize,
        eval_mode: EvalMode,
    ) -> Result<Self> {
        if !(1..=6).contains(&family) {
            return Err(Error::InvalidArgument(format!(
                "viscosity family must be 1..=6, got {family}"
            )));
        }
        if dr < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "dynamic ratio must be >= 1, got {dr}"
            )));
        }
        if omega < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "smoothing parameter omega must be >= 1, got {omega}"
            )));
        }
        if matches!(family, 5 | 6) && n_sinkers == 0 {
            return Err(Error::InvalidArgument(
                "multi-sinker families need n_sinkers >= 1".into(),
            ));
        }
        Ok(SinkerProblem {
            family,
            dr,
            omega,
            n_sinkers,
            positions: sinker_positions(n_sinkers.max(1)),
            eval_mode,
            rhs_sign: RhsSign::Upward,
            xi6_literal_product: false,
        })
    }

    pub fn eta_high(&self) -> f64 {
        self.dr.sqrt()
    }

    pub fn eta_low(&self) -> f64 {
        self.dr.powf(-0.5)
    }

    /// The characteristic function of the family (values in [0, 1]).
    pub fn xi(&self) -> ScalarFn {
        let omega = self.omega;
        let positions = self.positions.clone();
        let literal = self.xi6_literal_product;
        match self.family {
            1 => Arc::new(move |x, y| square_indicator(x, y, 0.5, 0.125)),
            2 => Arc::new(move |x, y| square_indicator(x, y, C_UA, 0.125)),
            3 => Arc::new(move |x, y| {
                tanh_bump(x, C_UA, 0.125, omega) * tanh_bump(y, C_UA, 0.125, omega)
            }),
            4 => Arc::new(move |x, y| disk_indicator(x, y, [0.5, 0.5], 0.1)),
            5 => Arc::new(move |x, y| {
                positions
                    .iter()
                    .map(|p| smooth_sinker(x, y, *p, 0.1, omega))
                    .product()
            }),
            6 => {
                if literal {
                    Arc::new(move |x, y| {
                        positions
                            .iter()
                            .map(|p| disk_indicator(x, y, *p, 0.1))
                            .product()
                    })
                } else {
                    Arc::new(move |x, y| {
                        1.0 - positions
                            .iter()
                            .map(|p| 1.0 - disk_indicator(x, y, *p, 0.1))
                            .product::<f64>()
                    })
                }
            }
            _ => unreachable!("validated family"),
        }
    }

    /// The analytic viscosity on the unit square.
    pub fn viscosity(&self) -> ScalarFn {
        let lo = self.eta_low();
        let hi = self.eta_high();
        let xi = self.xi();
        if self.family == 5 {
            Arc::new(move |x, y| lo + (hi - lo) * (1.0 - xi(x, y)))
        } else {
            Arc::new(move |x, y| lo + (hi - lo) * xi(x, y))
        }
    }

    /// The forcing term of the Stokes problem.
    pub fn rhs(&self) -> VectorFn {
        let xi = self.xi();
        if self.family == 5 {
            match self.rhs_sign {
                RhsSign::Upward => Arc::new(move |x, y| [0.0, 1.0 - xi(x, y)]),
                RhsSign::Downward => Arc::new(move |x, y| [0.0, -(1.0 - xi(x, y))]),
            }
        } else {
            Arc::new(move |x, y| [0.0, -xi(x, y)])
        }
    }
}

fn square_indicator(x: f64, y: f64, center: f64, half_side: f64) -> f64 {
    if (x - center).abs().max((y - center).abs()) <= half_side {
        1.0
    } else {
        0.0
    }
}

fn disk_indicator(x: f64, y: f64, p: [f64; 2], radius: f64) -> f64 {
    if ((x - p[0]).powi(2) + (y - p[1]).powi(2)).sqrt() <= radius {
        1.0
    } else {
        0.0
    }
}

fn tanh_bump(t: f64, p: f64, r: f64, omega: f64) -> f64 {
    0.5 * ((omega * (t - (p - r))).tanh() - (omega * (t - (p + r))).tanh())
}

fn smooth_sinker(x: f64, y: f64, p: [f64; 2], r: f64, omega: f64) -> f64 {
    let dist = ((x - p[0]).powi(2) + (y - p[1]).powi(2)).sqrt();
    let d = (dist - 0.5 * r).max(0.0);
    1.0 - (-omega * d * d).exp()
}

/// Coarsening strategy of a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoarseningMode {
    Dca,
    Agca,
    Gca,
}

impl CoarseningMode {
    pub fn name(&self) -> &'static str {
        match self {
            CoarseningMode::Dca => "dca",
            CoarseningMode::Agca => "agca",
            CoarseningMode::Gca => "gca",
        }
    }

    pub fn plan(&self, eta: &ScalarFn, mesh: &MeshHierarchy, nu: f64) -> CoarseningPlan {
        let n = mesh.macro_grid.macro_elements.len();
        match self {
            CoarseningMode::Dca => CoarseningPlan::all_dca(n),
            CoarseningMode::Gca => CoarseningPlan::all_gca(n),
            CoarseningMode::Agca => select_macros(eta, mesh, nu),
        }
    }
}

/// Mesh extent of a benchmark run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeshExtent {
    pub nx: usize,
    pub ny: usize,
    pub level: usize,
}

impl MeshExtent {
    pub fn build(&self) -> Result<Arc<MeshHierarchy>> {
        Ok(Arc::new(refine_hierarchy(
            build_macro_grid(self.nx, self.ny)?,
            self.level,
        )))
    }
}

/// One row of the sweep CSVs.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub family: String,
    pub dr: f64,
    pub omega: f64,
    pub n_sinkers: usize,
    pub eval_mode: String,
    pub coarsening_mode: String,
    pub nu: f64,
    pub macro_nx: usize,
    pub level: usize,
    pub iterations: usize,
    pub converged: bool,
    pub c_agca: f64,
    pub stored_bytes: usize,
    pub seconds: f64,
}

pub const RESULT_CSV_HEADER: &str =
    "family,DR,omega,n_sinkers,eval_mode,coarsening_mode,nu,macro_nx,L,iterations,converged,c_agca,stored_bytes,seconds";

/// Renders results as CSV; `zero_timings` replaces wall times with 0 so
/// repeated runs produce byte-identical files.
pub fn results_to_csv(results: &[ExperimentResult], zero_timings: bool) -> String {
    let mut out = String::from(RESULT_CSV_HEADER);
    out.push('\n');
    for r in results {
        let secs = if zero_timings { 0.0 } else { r.seconds };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.6},{},{:.3}\n",
            r.family,
            r.dr,
            r.omega,
            r.n_sinkers,
            r.eval_mode,
            r.coarsening_mode,
            r.nu,
            r.macro_nx,
            r.level,
            r.iterations,
            r.converged,
            r.c_agca,
            r.stored_bytes,
            secs
        ));
    }
    out
}

/// Solves one benchmark configuration end to end.
pub fn run_single(
    extent: MeshExtent,
    problem: &SinkerProblem,
    mode: CoarseningMode,
    nu: f64,
    solve_cfg: &StokesSolveConfig,
) -> Result<ExperimentResult> {
    let mesh = extent.build()?;
    let eta = problem.viscosity();
    let plan = mode.plan(&eta, &mesh, nu);
    let c_agca = plan.c_agca();
    let eval = crate::fem::CoefficientEval::new(problem.eval_mode, eta, mesh.clone())?;
    let rhs = problem.rhs();
    let sol = solve_stokes(mesh, eval, plan, &rhs, solve_cfg)?;
    Ok(ExperimentResult {
        family: problem.family.to_string(),
        dr: problem.dr,
        omega: problem.omega,
        n_sinkers: problem.n_sinkers,
        eval_mode: problem.eval_mode.name().to_string(),
        coarsening_mode: mode.name().to_string(),
        nu,
        macro_nx: extent.nx,
        level: extent.level,
        iterations: sol.report.iterations,
        converged: sol.report.converged,
        c_agca,
        stored_bytes: sol.report.memory.map(|m| m.stored_bytes).unwrap_or(0),
        seconds: sol.report.seconds,
    })
}

/// Parameter grid of a convergence sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    pub family: usize,
    pub dr: Vec<f64>,
    pub omega: Vec<f64>,
    pub n_sinkers: Vec<usize>,
    pub eval_modes: Vec<EvalMode>,
    pub modes: Vec<CoarseningMode>,
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.dr.is_empty()
            || self.omega.is_empty()
            || self.n_sinkers.is_empty()
            || self.eval_modes.is_empty()
            || self.modes.is_empty()
    }
}

/// Runs the full cross product of a sweep grid. Individual failures are
/// recorded as non-converged rows; the sweep continues. With `threads > 1`
/// the configurations run concurrently (each one is internally
/// deterministic and the output order is fixed by the grid).
pub fn run_convergence_sweep(
    extent: MeshExtent,
    grid: &SweepGrid,
    nu: f64,
    solve_cfg: &StokesSolveConfig,
    threads: usize,
) -> Result<Vec<ExperimentResult>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty sweep grid".into()));
    }
    let mut configs = Vec::new();
    for &dr in &grid.dr {
        for &omega in &grid.omega {
            for &n_sinkers in &grid.n_sinkers {
                for &eval_mode in &grid.eval_modes {
                    for &mode in &grid.modes {
                        configs.push((dr, omega, n_sinkers, eval_mode, mode));
                    }
                }
            }
        }
    }
    let run_one = |&(dr, omega, n_sinkers, eval_mode, mode): &(
        f64,
        f64,
        usize,
        EvalMode,
        CoarseningMode,
    )|
     -> ExperimentResult {
        match SinkerProblem::new(grid.family, dr, omega, n_sinkers, eval_mode)
            .and_then(|p| run_single(extent, &p, mode, nu, solve_cfg))
        {
            Ok(r) => r,
            Err(e) => {
                eprintln!(
                    "sweep configuration failed (family {} DR {dr} omega {omega} \
                     sinkers {n_sinkers} {} {}): {e}",
                    grid.family,
                    eval_mode.name(),
                    mode.name()
                );
                ExperimentResult {
                    family: grid.family.to_string(),
                    dr,
                    omega,
                    n_sinkers,
                    eval_mode: eval_mode.name().to_string(),
                    coarsening_mode: mode.name().to_string(),
                    nu,
                    macro_nx: extent.nx,
                    level: extent.level,
                    iterations: 0,
                    converged: false,
                    c_agca: f64::NAN,
                    stored_bytes: 0,
                    seconds: 0.0,
                }
            }
        }
    };
    let results = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Build(format!("thread pool: {e}")))?;
        pool.install(|| configs.par_iter().map(run_one).collect())
    } else {
        configs.iter().map(run_one).collect()
    };
    Ok(results)
}

/// Runs the nu-sweep of the adaptive selector for one problem: per nu, the
/// GCA macro count, stored-matrix memory, and iteration count.
pub fn run_nu_sweep(
    extent: MeshExtent,
    problem: &SinkerProblem,
    nus: &[f64],
    solve_cfg: &StokesSolveConfig,
) -> Result<Vec<ExperimentResult>> {
    if nus.is_empty() {
        return Err(Error::InvalidArgument("empty nu grid".into()));
    }
    let mut rows = Vec::with_capacity(nus.len());
    for &nu in nus {
        rows.push(run_single(extent, problem, CoarseningMode::Agca, nu, solve_cfg)?);
    }
    // Monotonicity of the selector: the GCA set shrinks as nu grows.
    for w in rows.windows(2) {
        if w[1].c_agca > w[0].c_agca + 1e-15 {
            return Err(Error::Build(format!(
                "selector not monotone: c_agca {} at nu {} vs {} at nu {}",
                w[1].c_agca, w[1].nu, w[0].c_agca, w[0].nu
            )));
        }
    }
    Ok(rows)
}

/// One row of the macro-size study: how the Galerkin-coarsened fraction
/// decays as the macro grid is refined at fixed level count.
#[derive(Debug, Clone, Serialize)]
pub struct CagcaRow {
    pub family: String,
    pub dr: f64,
    pub macro_nx: usize,
    pub level: usize,
    pub n_macros: usize,
    pub n_gca: usize,
    pub c_agca: f64,
}

pub const CAGCA_CSV_HEADER: &str = "family,DR,macro_nx,L,n_macros,n_gca,c_agca";

pub fn cagca_to_csv(rows: &[CagcaRow]) -> String {
    let mut out = String::from(CAGCA_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6}\n",
            r.family, r.dr, r.macro_nx, r.level, r.n_macros, r.n_gca, r.c_agca
        ));
    }
    out
}

/// Evaluates `c_agca` over a sequence of macro sizes at fixed refinement
/// depth; no solves are run.
pub fn run_cagca_study(
    problem: &SinkerProblem,
    macro_sizes: &[usize],
    level: usize,
    nu: f64,
) -> Result<Vec<CagcaRow>> {
    if macro_sizes.is_empty() {
        return Err(Error::InvalidArgument("empty macro-size grid".into()));
    }
    let eta = problem.viscosity();
    let mut rows = Vec::with_capacity(macro_sizes.len());
    for &nx in macro_sizes {
        let mesh = MeshExtent {
            nx,
            ny: nx,
            level,
        }
        .build()?;
        let plan = select_macros(&eta, &mesh, nu);
        rows.push(CagcaRow {
            family: problem.family.to_string(),
            dr: problem.dr,
            macro_nx: nx,
            level,
            n_macros: plan.gca.len(),
            n_gca: plan.n_gca(),
            c_agca: plan.c_agca(),
        });
    }
    Ok(rows)
}

/// The analytic 3D memory model in units of fine-grid vectors N_L,
/// reproducing the printed constants: Mem_A = 86.5, Mem_K = 89.5, sparse
/// GCA = 10.8 n_fill, elementwise GCA = 34, stencils = 5.4.
///
/// Velocity/pressure DoF fractions use the rounded tetrahedral limits
/// c_u = 0.95, c_p = 0.05 (the exact vertex-growth limit 1 - 1/24 would
/// shift Mem_A to 87.2). A_L rows carry 45 nonzeros at 2 words each plus a
/// row pointer; the B/B^T couplings enter the same CSR structure at 2 words
/// per entry plus one row pointer per pressure row.
#[derive(Debug, Clone, Serialize)]
pub struct MemoryModel3D {
    pub n_fill_in: f64,
    pub n_restart: usize,
    pub c_agca: f64,
    pub c_u: f64,
    pub c_p: f64,
    pub mem_a: f64,
    pub mem_k: f64,
    pub sparse_gca: f64,
    pub elementwise_gca: f64,
    pub stencil_gca: f64,
    pub pde_vectors: f64,
    pub fgmres_vectors: f64,
    pub precond_vectors: f64,
}

pub fn memory_model_3d(n_fill_in: f64, n_restart: usize, c_agca: f64) -> Result<MemoryModel3D> {
    if n_fill_in < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "fill-in factor must be >= 1, got {n_fill_in}"
        )));
    }
    if !(0.0..=1.0).contains(&c_agca) {
        return Err(Error::InvalidArgument(format!(
            "c_agca must be in [0, 1], got {c_agca}"
        )));
    }
    let c_u = 0.95;
    let c_p = 0.05;
    let mem_a = (45.0 * 2.0 + 1.0) * c_u;
    let mem_k = mem_a + (2.0 * 15.0 * 2.0 + 1.0) * c_p;
    Ok(MemoryModel3D {
        n_fill_in,
        n_restart,
        c_agca,
        c_u,
        c_p,
        mem_a,
        mem_k,
        sparse_gca: n_fill_in * mem_a / 8.0,
        elementwise_gca: 3.0 * 16.0 * 6.0 / 8.0 * c_u * c_agca,
        stencil_gca: 3.0 * 15.0 / 8.0 * c_u * c_agca,
        pde_vectors: 2.0,
        fgmres_vectors: 2.0 + 2.0 * n_restart as f64,
        precond_vectors: 4.0,
    })
}

impl MemoryModel3D {
    /// Coarse-plus-fine grid operator memory per strategy, in N_L units:
    /// (purely matrix-based, sparse GCA, AGCA, AGCA stencils, DCA).
    pub fn strategy_totals(&self) -> [f64; 5] {
        let common = self.pde_vectors + self.fgmres_vectors + self.precond_vectors;
        [
            common + self.mem_k + self.sparse_gca,
            common + self.sparse_gca,
            common + self.elementwise_gca,
            common + self.stencil_gca,
            common,
        ]
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str("memory model (units of fine-grid vectors N_L)\n");
        s.push_str(&format!(
            "  c_u = {:.2}, c_p = {:.2}, n_fill_in = {}, n_restart = {}, c_agca = {}\n",
            self.c_u, self.c_p, self.n_fill_in, self.n_restart, self.c_agca
        ));
        s.push_str(&format!("  Mem_A  (assembled velocity block) = {:.2}\n", self.mem_a));
        s.push_str(&format!("  Mem_K  (assembled Stokes operator) = {:.2}\n", self.mem_k));
        s.push_str(&format!("  sparse GCA matrix                  = {:.2}\n", self.sparse_gca));
        s.push_str(&format!(
            "  elementwise GCA (c_agca scaled)    = {:.2}\n",
            self.elementwise_gca
        ));
        s.push_str(&format!(
            "  stencil storage (c_agca scaled)    = {:.2}\n",
            self.stencil_gca
        ));
        s.push_str(&format!(
            "  PDE / FGMRES / preconditioner      = {} / {} / {}\n",
            self.pde_vectors, self.fgmres_vectors, self.precond_vectors
        ));
        let t = self.strategy_totals();
        s.push_str(&format!(
            "  totals: matrix-based {:.1}, sparse-GCA {:.1}, AGCA {:.1}, stencils {:.1}, DCA {:.1}\n",
            t[0], t[1], t[2], t[3], t[4]
        ));
        s
    }
}

/// Measured 2D storage tally of a built plan, with the analogously derived
/// 2D reference constants (coarse-grid DoF factor 1/4, two cells per
/// vertex, c_u = 8/9).
#[derive(Debug, Clone, Serialize)]
pub struct MemoryTally2D {
    pub stored_matrices: usize,
    pub stored_entries: usize,
    pub stored_bytes: usize,
    pub c_agca: f64,
    /// N(V_L) + N(Q_L) of the velocity/pressure pairing.
    pub n_l: usize,
    pub c_u_2d: f64,
    pub cells_per_vertex_2d: f64,
    pub coarse_factor_2d: f64,
    /// Elementwise GCA estimate in N_L units at this c_agca.
    pub elementwise_model_2d: f64,
    /// Measured stored reals per N_L.
    pub measured_per_nl: f64,
    /// (level, stored matrices) below the finest level.
    pub per_level: Vec<(usize, usize)>,
}

/// Tallies a built AGCA hierarchy (the usual entry point).
pub fn tally_hierarchy<K: crate::coarsening::LocalKernel<N>, const N: usize>(
    hier: &crate::coarsening::AgcaHierarchy<K, N>,
) -> MemoryTally2D {
    let per_level: Vec<(usize, usize)> = (0..hier.mesh.max_level)
        .map(|l| (l, hier.store.stored_matrices_at(l)))
        .collect();
    memory_tally_2d(&hier.mesh, &hier.plan, &per_level, N * N)
}

pub fn memory_tally_2d(
    mesh: &MeshHierarchy,
    plan: &CoarseningPlan,
    store_matrices_per_level: &[(usize, usize)],
    entries_per_matrix: usize,
) -> MemoryTally2D {
    let stored_matrices: usize = store_matrices_per_level.iter().map(|&(_, n)| n).sum();
    let stored_entries = stored_matrices * entries_per_matrix;
    let n_l = 2 * mesh.n_vertices(mesh.max_level)
        + mesh.n_vertices(mesh.max_level.saturating_sub(1));
    let c_u_2d = 8.0 / 9.0;
    MemoryTally2D {
        stored_matrices,
        stored_entries,
        stored_bytes: stored_entries * std::mem::size_of::<f64>(),
        c_agca: plan.c_agca(),
        n_l,
        c_u_2d,
        cells_per_vertex_2d: 2.0,
        coarse_factor_2d: 0.25,
        elementwise_model_2d: 2.0 * 9.0 * 2.0 * 0.25 * c_u_2d * plan.c_agca(),
        measured_per_nl: stored_entries as f64 / n_l as f64,
        per_level: store_matrices_per_level.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_first_points() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert_eq!(halton(3, 2), 0.75);
        assert!((halton(1, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((halton(2, 3) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sinker_positions_deterministic_and_inside() {
        let p = sinker_positions(1);
        assert!((p[0][0] - 0.5).abs() < 1e-15);
        assert!((p[0][1] - (0.15 + 0.7 / 3.0)).abs() < 1e-15);
        let p = sinker_positions(2);
        assert!((p[1][0] - (0.15 + 0.7 * 0.25)).abs() < 1e-15);
        assert!((p[1][1] - (0.15 + 0.7 * 2.0 / 3.0)).abs() < 1e-15);
        for p in sinker_positions(64) {
            assert!(p[0] > 0.15 && p[0] < 0.85);
            assert!(p[1] > 0.15 && p[1] < 0.85);
        }
    }

    #[test]
    fn viscosity_family1_values() {
        let prob = SinkerProblem::new(1, 1e4, 200.0, 1, EvalMode::Analytic).unwrap();
        let eta = prob.viscosity();
        assert!((eta(0.5, 0.5) - 100.0).abs() < 1e-12);
        assert!((eta(0.9, 0.9) - 0.01).abs() < 1e-14);
        assert!((prob.eta_high() * prob.eta_low() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn viscosity_family3_saturates() {
        for omega in [200.0, 500.0] {
            let prob = SinkerProblem::new(3, 100.0, omega, 1, EvalMode::Analytic).unwrap();
            let xi = prob.xi();
            assert!((xi(C_UA, C_UA) - 1.0).abs() < 1e-6, "omega {omega}");
        }
    }

    #[test]
    fn viscosity_range_invariant() {
        // min/max over a dense lattice stays within [eta_low, eta_high]
        for family in 1..=6 {
            let prob = SinkerProblem::new(family, 1e6, 200.0, 4, EvalMode::Analytic).unwrap();
            let eta = prob.viscosity();
            let (lo, hi) = (prob.eta_low(), prob.eta_high());
            let mut min = f64::MAX;
            let mut max = f64::MIN;
            for i in 0..=100 {
                for j in 0..=100 {
                    let v = eta(i as f64 / 100.0, j as f64 / 100.0);
                    min = min.min(v);
                    max = max.max(v);
                }
            }
            assert!(min >= lo - 1e-12, "family {family}: min {min} < {lo}");
            assert!(max <= hi + 1e-12, "family {family}: max {max} > {hi}");
        }
    }

    #[test]
    fn rhs_values() {
        let p1 = SinkerProblem::new(1, 1e4, 200.0, 1, EvalMode::Analytic).unwrap();
        let f = p1.rhs();
        assert_eq!(f(0.0, 0.0), [0.0, 0.0]);
        assert_eq!(f(0.5, 0.5), [0.0, -1.0]);
        // family 5: the default sign points upward deep inside a sinker
        let mut p5 = SinkerProblem::new(5, 1e4, 200.0, 1, EvalMode::Analytic).unwrap();
        let center = p5.positions[0];
        let f5 = p5.rhs();
        let v = f5(center[0], center[1]);
        assert!(v[1] > 0.999, "upward f5 at a sinker: {v:?}");
        p5.rhs_sign = RhsSign::Downward;
        let f5d = p5.rhs();
        let vd = f5d(center[0], center[1]);
        assert!(vd[1] < -0.999);
    }

    #[test]
    fn xi6_union_vs_literal_product() {
        let mut prob = SinkerProblem::new(6, 1e4, 200.0, 2, EvalMode::Analytic).unwrap();
        let p0 = prob.positions[0];
        let union = prob.xi();
        assert_eq!(union(p0[0], p0[1]), 1.0); // inside the first ball
        prob.xi6_literal_product = true;
        let literal = prob.xi();
        // the literal product is 1 only where every ball overlaps
        assert_eq!(literal(p0[0], p0[1]), 0.0);
    }

    #[test]
    fn unaligned_center_misses_every_lattice() {
        // 11/24 has a factor 3 in the denominator; lattices over nx in
        // {4, 8, 16} refine by powers of two and never contain it.
        for nx in [4usize, 8, 16] {
            for l in 0..=6 {
                let n = nx << l;
                for k in 0..=n {
                    assert!(
                        (k as f64 / n as f64 - C_UA).abs() > 1e-12,
                        "lattice {nx} level {l} hits C_ua at {k}/{n}"
                    );
                }
            }
        }
    }

    #[test]
    fn invalid_problems_rejected() {
        assert!(SinkerProblem::new(0, 1e4, 200.0, 1, EvalMode::Analytic).is_err());
        assert!(SinkerProblem::new(7, 1e4, 200.0, 1, EvalMode::Analytic).is_err());
        assert!(SinkerProblem::new(1, 0.5, 200.0, 1, EvalMode::Analytic).is_err());
        assert!(SinkerProblem::new(3, 1e4, 0.5, 1, EvalMode::Analytic).is_err());
        assert!(SinkerProblem::new(6, 1e4, 200.0, 0, EvalMode::Analytic).is_err());
    }

    #[test]
    fn memory_model_reproduces_printed_constants() {
        let m = memory_model_3d(1.0, 30, 1.0).unwrap();
        assert!((m.mem_a - 86.5).abs() <= 0.2, "Mem_A = {}", m.mem_a);
        assert!((m.mem_k - 89.5).abs() <= 0.2, "Mem_K = {}", m.mem_k);
        assert!((m.sparse_gca - 10.8).abs() <= 0.2, "sparse = {}", m.sparse_gca);
        assert!(
            (m.elementwise_gca - 34.0).abs() <= 0.5,
            "elementwise = {}",
            m.elementwise_gca
        );
        assert!((m.stencil_gca - 5.4).abs() <= 0.1, "stencil = {}", m.stencil_gca);
        assert_eq!(m.fgmres_vectors, 62.0);
        assert_eq!(m.pde_vectors, 2.0);
        assert_eq!(m.precond_vectors, 4.0);
        // c_agca scaling
        let half = memory_model_3d(1.0, 30, 0.5).unwrap();
        assert!((half.elementwise_gca - 0.5 * m.elementwise_gca).abs() < 1e-12);
        assert!(memory_model_3d(0.5, 30, 1.0).is_err());
        assert!(memory_model_3d(1.0, 30, 1.5).is_err());
    }

    #[test]
    fn cagca_study_disk_decays() {
        let prob = SinkerProblem::new(4, 1e4, 200.0, 1, EvalMode::Analytic).unwrap();
        let rows = run_cagca_study(&prob, &[4, 8, 16], 3, 10.0).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].c_agca > rows[1].c_agca);
        assert!(rows[1].c_agca > rows[2].c_agca);
        assert!(rows[2].c_agca <= 0.5 * rows[0].c_agca);
        // constant viscosity: zero everywhere
        let flat = SinkerProblem::new(4, 1.0, 200.0, 1, EvalMode::Analytic).unwrap();
        let rows = run_cagca_study(&flat, &[4, 8], 2, 10.0).unwrap();
        assert!(rows.iter().all(|r| r.c_agca == 0.0));
    }

    #[test]
    fn tally_counts_stored_entries_exactly() {
        use crate::coarsening::{build_agca_hierarchy, CoarseningPlan, ViscousKernel};
        use crate::fem::CoefficientEval;
        let mesh = MeshExtent {
            nx: 1,
            ny: 1,
            level: 2,
        }
        .build()
        .unwrap();
        let eval = CoefficientEval::new(
            EvalMode::Analytic,
            Arc::new(|_, _| 1.0),
            mesh.clone(),
        )
        .unwrap();
        let hier = build_agca_hierarchy(
            mesh.clone(),
            ViscousKernel::default(),
            eval,
            CoarseningPlan::all_gca(2),
        )
        .unwrap();
        let tally = tally_hierarchy(&hier);
        // level 0: 2 elements, level 1: 8 -> 10 matrices of 36 entries
        assert_eq!(tally.stored_matrices, 10);
        assert_eq!(tally.stored_entries, 360);
        assert_eq!(tally.stored_bytes, 2880);
        assert_eq!(tally.c_agca, 1.0);
        assert_eq!(tally.per_level, vec![(0, 2), (1, 8)]);
        assert!((tally.c_u_2d - 8.0 / 9.0).abs() < 1e-15);
        assert_eq!(tally.n_l, 2 * 25 + 9);
        // empty plan stores nothing
        let mesh2 = MeshExtent {
            nx: 1,
            ny: 1,
            level: 2,
        }
        .build()
        .unwrap();
        let eval2 = CoefficientEval::new(
            EvalMode::Analytic,
            Arc::new(|_, _| 1.0),
            mesh2.clone(),
        )
        .unwrap();
        let dca = build_agca_hierarchy(
            mesh2,
            ViscousKernel::default(),
            eval2,
            CoarseningPlan::all_dca(2),
        )
        .unwrap();
        assert_eq!(tally_hierarchy(&dca).stored_entries, 0);
    }

    #[test]
    fn csv_schema_and_determinism() {
        let rows = vec![ExperimentResult {
            family: "2".into(),
            dr: 1e4,
            omega: 200.0,
            n_sinkers: 1,
            eval_mode: "analytic".into(),
            coarsening_mode: "agca".into(),
            nu: 10.0,
            macro_nx: 8,
            level: 3,
            iterations: 41,
            converged: true,
            c_agca: 0.25,
            stored_bytes: 1024,
            seconds: 1.234567,
        }];
        let csv = results_to_csv(&rows, true);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), RESULT_CSV_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "2,10000,200,1,analytic,agca,10,8,3,41,true,0.250000,1024,0.000"
        );
        assert_eq!(results_to_csv(&rows, true), results_to_csv(&rows, true));
    }
}
