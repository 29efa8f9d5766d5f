//! Coarse-grid operators: direct re-discretization (DCA), element-wise
//! distributed Galerkin coarsening (GCA) via the recursive local triple
//! product, the gradient-threshold macro selector, and the blended AGCA
//! level operators.
//!
//! GCA matrices are built per micro element from the next-finer level,
//!
//! ```text
//! A_parent = sum over children of  P_local^T * A_child * P_local,
//! ```
//!
//! starting from the (Dirichlet-masked) finest-level local matrices, so no
//! global sparse matrix is ever formed and macros never communicate. Level
//! operators apply stored matrices on GCA macros and re-discretize on the
//! fly everywhere else; the finest level is always matrix-free.

use std::sync::Arc;

use crate::fem::{
    local_diffusion, local_viscous, CoefficientEval, LocalMatrix, QuadratureRule, ScalarFn,
};
use crate::mesh::{MeshHierarchy, MicroElement};
use crate::sparse::CsrMatrix;
use crate::transfer::{local_interp, local_interp_vector};
use crate::{Error, Result};

/// Element-local assembly and DoF mapping for one operator family.
pub trait LocalKernel<const N: usize>: Sync {
    fn local(
        &self,
        mesh: &MeshHierarchy,
        el: &MicroElement,
        eval: &CoefficientEval,
    ) -> Result<LocalMatrix<N>>;
    fn dofs(&self, mesh: &MeshHierarchy, el: &MicroElement) -> [usize; N];
    fn interior(&self, mesh: &MeshHierarchy, el: &MicroElement) -> [bool; N];
    fn n_dofs(&self, mesh: &MeshHierarchy, level: usize) -> usize;
    fn interp(&self, parent: &MicroElement, child: &MicroElement) -> LocalMatrix<N>;
}

/// Scalar diffusion operator `-div(eta grad u)`.
pub struct DiffusionKernel {
    pub quad: QuadratureRule,
}

impl Default for DiffusionKernel {
    fn default() -> Self {
        DiffusionKernel {
            quad: crate::fem::quadrature(2).expect("degree-2 rule"),
        }
    }
}

impl LocalKernel<3> for DiffusionKernel {
    fn local(
        &self,
        mesh: &MeshHierarchy,
        el: &MicroElement,
        eval: &CoefficientEval,
    ) -> Result<LocalMatrix<3>> {
        local_diffusion(mesh, el, eval, &self.quad)
    }

    fn dofs(&self, mesh: &MeshHierarchy, el: &MicroElement) -> [usize; 3] {
        el.vertex_ids(mesh)
    }

    fn interior(&self, mesh: &MeshHierarchy, el: &MicroElement) -> [bool; 3] {
        el.boundary_flags(mesh).map(|b| !b)
    }

    fn n_dofs(&self, mesh: &MeshHierarchy, level: usize) -> usize {
        mesh.n_vertices(level)
    }

    fn interp(&self, parent: &MicroElement, child: &MicroElement) -> LocalMatrix<3> {
        local_interp(parent, child)
    }
}

/// Vector viscous block `2 eta eps(u):eps(v)`, component-major.
pub struct ViscousKernel {
    pub quad: QuadratureRule,
}

impl Default for ViscousKernel {
    fn default() -> Self {
        ViscousKernel {
            quad: crate::fem::quadrature(2).expect("degree-2 rule"),
        }
    }
}

impl LocalKernel<6> for ViscousKernel {
    fn local(
        &self,
        mesh: &MeshHierarchy,
        el: &MicroElement,
        eval: &CoefficientEval,
    ) -> Result<LocalMatrix<6>> {
        local_viscous(mesh, el, eval, &self.quad)
    }

    fn dofs(&self, mesh: &MeshHierarchy, el: &MicroElement) -> [usize; 6] {
        el.vector_dofs(mesh)
    }

    fn interior(&self, mesh: &MeshHierarchy, el: &MicroElement) -> [bool; 6] {
        let b = el.boundary_flags(mesh);
        [!b[0], !b[1], !b[2], !b[0], !b[1], !b[2]]
    }

    fn n_dofs(&self, mesh: &MeshHierarchy, level: usize) -> usize {
        2 * mesh.n_vertices(level)
    }

    fn interp(&self, parent: &MicroElement, child: &MicroElement) -> LocalMatrix<6> {
        local_interp_vector(parent, child)
    }
}

/// Re-discretized local matrix on a (usually coarse) element: the coefficient
/// is evaluated at the element's own level per the evaluation-mode semantics.
pub fn dca_local<K: LocalKernel<N>, const N: usize>(
    mesh: &MeshHierarchy,
    kernel: &K,
    el: &MicroElement,
    eval: &CoefficientEval,
) -> Result<LocalMatrix<N>> {
    kernel.local(mesh, el, eval)
}

/// Partition of the macro elements into GCA and DCA sets for a threshold nu.
#[derive(Debug, Clone)]
pub struct CoarseningPlan {
    pub nu: f64,
    /// Per-macro flag: true = Galerkin-coarsen this macro.
    pub gca: Vec<bool>,
}

impl CoarseningPlan {
    pub fn all_dca(n_macros: usize) -> Self {
        CoarseningPlan {
            nu: f64::INFINITY,
            gca: vec![false; n_macros],
        }
    }

    pub fn all_gca(n_macros: usize) -> Self {
        CoarseningPlan {
            nu: 0.0,
            gca: vec![true; n_macros],
        }
    }

    pub fn is_gca(&self, m: usize) -> bool {
        self.gca[m]
    }

    pub fn n_gca(&self) -> usize {
        self.gca.iter().filter(|&&g| g).count()
    }

    pub fn gca_macros(&self) -> Vec<usize> {
        (0..self.gca.len()).filter(|&m| self.gca[m]).collect()
    }

    pub fn dca_macros(&self) -> Vec<usize> {
        (0..self.gca.len()).filter(|&m| !self.gca[m]).collect()
    }

    /// Fraction of macro elements selected for Galerkin coarsening.
    pub fn c_agca(&self) -> f64 {
        self.n_gca() as f64 / self.gca.len() as f64
    }
}

/// Selects the macros whose interpolated coefficient varies too strongly:
/// a macro is Galerkin-coarsened iff the Euclidean norm of the (per-element
/// constant) gradient of the finest-level P1 interpolant of `eta` exceeds
/// `nu` strictly on at least one of its finest micro elements.
pub fn select_macros(eta: &ScalarFn, mesh: &MeshHierarchy, nu: f64) -> CoarseningPlan {
    let lev = mesh.max_level;
    let (nxl, nyl) = mesh.lattice_dims(lev);
    let mut nodal = vec![0.0; mesh.n_vertices(lev)];
    for iy in 0..=nyl as i64 {
        for ix in 0..=nxl as i64 {
            let [x, y] = mesh.vertex_coord(lev, ix, iy);
            nodal[mesh.vertex_index(lev, ix, iy)] = eta(x, y);
        }
    }
    let n_macros = mesh.macro_grid.macro_elements.len();
    let mut gca = vec![false; n_macros];
    for (m, flag) in gca.iter_mut().enumerate() {
        let mut max_grad: f64 = 0.0;
        for el in mesh.micro_elements(m, lev).expect("valid level") {
            let geom = crate::fem::tri_geometry(&el.coords(mesh)).expect("non-degenerate");
            let ids = el.vertex_ids(mesh);
            let mut g = [0.0, 0.0];
            for k in 0..3 {
                g[0] += nodal[ids[k]] * geom.grads[k][0];
                g[1] += nodal[ids[k]] * geom.grads[k][1];
            }
            max_grad = max_grad.max((g[0] * g[0] + g[1] * g[1]).sqrt());
        }
        *flag = max_grad > nu;
    }
    CoarseningPlan { nu, gca }
}

/// Stored per-element Galerkin matrices for the GCA macros on levels below
/// the finest.
#[derive(Debug)]
pub struct GcaStore<const N: usize> {
    /// levels[l][macro]: matrices in flat micro-element order, present only
    /// for GCA macros and l < max_level.
    levels: Vec<Vec<Option<Box<[LocalMatrix<N>]>>>>,
}

impl<const N: usize> GcaStore<N> {
    pub fn empty(mesh: &MeshHierarchy) -> Self {
        let n_macros = mesh.macro_grid.macro_elements.len();
        let levels = (0..mesh.max_level)
            .map(|_| vec![None; n_macros])
            .collect();
        GcaStore { levels }
    }

    pub fn get(&self, level: usize, macro_idx: usize) -> Option<&[LocalMatrix<N>]> {
        self.levels.get(level)?.get(macro_idx)?.as_deref()
    }

    pub fn level_complete(&self, level: usize, plan: &CoarseningPlan) -> bool {
        match self.levels.get(level) {
            None => true, // the finest level stores nothing
            Some(row) => plan.gca_macros().iter().all(|&m| row[m].is_some()),
        }
    }

    /// Number of stored local matrices.
    pub fn stored_matrices(&self) -> usize {
        self.levels
            .iter()
            .flat_map(|row| row.iter())
            .filter_map(|m| m.as_ref().map(|v| v.len()))
            .sum()
    }

    pub fn stored_matrices_at(&self, level: usize) -> usize {
        self.levels[level]
            .iter()
            .filter_map(|m| m.as_ref().map(|v| v.len()))
            .sum()
    }

    /// Total stored real entries: matrices times N^2.
    pub fn stored_entries(&self) -> usize {
        self.stored_matrices() * N * N
    }
}

/// `p^T a p` accumulated into `acc`, one child contribution of the local
/// triple product.
fn triple_product<const N: usize>(
    p: &LocalMatrix<N>,
    a: &LocalMatrix<N>,
    acc: &mut LocalMatrix<N>,
) {
    let mut ap = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            let mut s = 0.0;
            for k in 0..N {
                s += a.0[i][k] * p.0[k][j];
            }
            ap[i][j] = s;
        }
    }
    for i in 0..N {
        for j in 0..N {
            let mut s = 0.0;
            for k in 0..N {
                s += p.0[k][i] * ap[k][j];
            }
            acc.0[i][j] += s;
        }
    }
}

/// Populates the GCA store at `level` for all GCA macros of the plan.
///
/// The finer source is the masked finest-level local matrices when
/// `level == max_level - 1` (computed on the fly), and the stored level+1
/// matrices otherwise; in the latter case the finer level must already be
/// built.
pub fn build_gca_level<K: LocalKernel<N>, const N: usize>(
    mesh: &MeshHierarchy,
    kernel: &K,
    eval: &CoefficientEval,
    plan: &CoarseningPlan,
    store: &mut GcaStore<N>,
    level: usize,
) -> Result<()> {
    let finest = mesh.max_level;
    if level >= finest {
        return Err(Error::Level(format!(
            "GCA stores matrices only below the finest level, got {level}"
        )));
    }
    if level + 1 < finest && !store.level_complete(level + 1, plan) {
        return Err(Error::Build(format!(
            "cannot build GCA level {level}: level {} not built yet",
            level + 1
        )));
    }
    for m in plan.gca_macros() {
        let n_el = mesh.micro_count(level);
        let mut mats = Vec::with_capacity(n_el);
        for k in 0..n_el {
            let el = mesh.micro_element(m, level, k);
            let children = mesh.children(&el)?;
            let mut acc = LocalMatrix::zero();
            for ch in &children {
                let a_child = if level + 1 == finest {
                    kernel
                        .local(mesh, ch, eval)?
                        .masked(&kernel.interior(mesh, ch))
                } else {
                    let fine = store.get(level + 1, m).expect("finer level built");
                    fine[mesh.micro_flat_index(ch)]
                };
                let p = kernel.interp(&el, ch);
                triple_product(&p, &a_child, &mut acc);
            }
            mats.push(acc);
        }
        store.levels[level][m] = Some(mats.into_boxed_slice());
    }
    Ok(())
}

/// Builds the whole store, finest-minus-one down to level zero.
pub fn build_gca_store<K: LocalKernel<N>, const N: usize>(
    mesh: &MeshHierarchy,
    kernel: &K,
    eval: &CoefficientEval,
    plan: &CoarseningPlan,
) -> Result<GcaStore<N>> {
    let mut store = GcaStore::empty(mesh);
    for level in (0..mesh.max_level).rev() {
        build_gca_level(mesh, kernel, eval, plan, &mut store, level)?;
    }
    Ok(store)
}

/// The AGCA operator hierarchy: one blended operator per level.
pub struct AgcaHierarchy<K: LocalKernel<N>, const N: usize> {
    pub mesh: Arc<MeshHierarchy>,
    pub kernel: K,
    pub eval: CoefficientEval,
    pub plan: CoarseningPlan,
    pub store: GcaStore<N>,
    /// Per level: interior flag per global DoF (false = Dirichlet boundary).
    interior: Vec<Vec<bool>>,
}

/// Builds the level operators for `l = 0..=max_level`: the finest level is
/// fully matrix-free; below it, DCA macros re-discretize on the fly and GCA
/// macros apply their stored local Galerkin matrices.
pub fn build_agca_hierarchy<K: LocalKernel<N>, const N: usize>(
    mesh: Arc<MeshHierarchy>,
    kernel: K,
    eval: CoefficientEval,
    plan: CoarseningPlan,
) -> Result<AgcaHierarchy<K, N>> {
    if plan.gca.len() != mesh.macro_grid.macro_elements.len() {
        return Err(Error::Build(format!(
            "plan covers {} macros, mesh has {}",
            plan.gca.len(),
            mesh.macro_grid.macro_elements.len()
        )));
    }
    let store = build_gca_store(&mesh, &kernel, &eval, &plan)?;
    // Validate DCA assembly on every level now so apply cannot fail later.
    for level in 0..=mesh.max_level {
        for m in 0..mesh.macro_grid.macro_elements.len() {
            if level < mesh.max_level && plan.is_gca(m) {
                continue;
            }
            for el in mesh.micro_elements(m, level)? {
                kernel.local(&mesh, &el, &eval)?;
            }
        }
    }
    let interior = (0..=mesh.max_level)
        .map(|l| {
            let vert = mesh.boundary_mask(l);
            let comps = kernel.n_dofs(&mesh, l) / mesh.n_vertices(l);
            let mut flags = Vec::with_capacity(kernel.n_dofs(&mesh, l));
            for _ in 0..comps {
                flags.extend(vert.iter().map(|&b| !b));
            }
            flags
        })
        .collect();
    Ok(AgcaHierarchy {
        mesh,
        kernel,
        eval,
        plan,
        store,
        interior,
    })
}

impl<K: LocalKernel<N>, const N: usize> AgcaHierarchy<K, N> {
    pub fn max_level(&self) -> usize {
        self.mesh.max_level
    }

    pub fn level(&self, level: usize) -> LevelOperator<'_, K, N> {
        assert!(level <= self.mesh.max_level, "level out of range");
        LevelOperator { hier: self, level }
    }

    pub fn levels(&self) -> Vec<LevelOperator<'_, K, N>> {
        (0..=self.mesh.max_level).map(|l| self.level(l)).collect()
    }

    /// Interior flags (true = free DoF) at a level.
    pub fn interior(&self, level: usize) -> &[bool] {
        &self.interior[level]
    }
}

/// One level of the AGCA hierarchy, applied matrix-free with homogeneous
/// Dirichlet handling: boundary components of the input are zeroed before
/// the element sum and the output equals the input on the boundary.
pub struct LevelOperator<'a, K: LocalKernel<N>, const N: usize> {
    hier: &'a AgcaHierarchy<K, N>,
    pub level: usize,
}

impl<'a, K: LocalKernel<N>, const N: usize> LevelOperator<'a, K, N> {
    pub fn n_dofs(&self) -> usize {
        self.hier.kernel.n_dofs(&self.hier.mesh, self.level)
    }

    pub fn interior(&self) -> &'a [bool] {
        &self.hier.interior[self.level]
    }

    pub fn mesh(&self) -> &'a Arc<MeshHierarchy> {
        &self.hier.mesh
    }

    fn local_matrix(&self, macro_idx: usize, flat: usize, el: &MicroElement) -> LocalMatrix<N> {
        let h = self.hier;
        if self.level < h.mesh.max_level && h.plan.is_gca(macro_idx) {
            h.store.get(self.level, macro_idx).expect("store built")[flat]
        } else {
            h.kernel
                .local(&h.mesh, el, &h.eval)
                .expect("assembly validated at build")
                .masked(&h.kernel.interior(&h.mesh, el))
        }
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let h = self.hier;
        let n = self.n_dofs();
        assert_eq!(u.len(), n, "input size mismatch");
        assert_eq!(out.len(), n, "output size mismatch");
        let interior = self.interior();
        let mut u0: Vec<f64> = u.to_vec();
        for (v, &keep) in u0.iter_mut().zip(interior) {
            if !keep {
                *v = 0.0;
            }
        }
        out.fill(0.0);
        for m in 0..h.mesh.macro_grid.macro_elements.len() {
            for (flat, el) in h
                .mesh
                .micro_elements(m, self.level)
                .expect("valid level")
                .enumerate()
            {
                let a = self.local_matrix(m, flat, &el);
                let dofs = h.kernel.dofs(&h.mesh, &el);
                let mut x = [0.0; N];
                for k in 0..N {
                    x[k] = u0[dofs[k]];
                }
                let y = a.apply(&x);
                for k in 0..N {
                    out[dofs[k]] += y[k];
                }
            }
        }
        for i in 0..n {
            if !interior[i] {
                out[i] = u[i];
            }
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        self.apply_into(u, &mut out);
        out
    }

    /// Matrix-free operator diagonal (1.0 on boundary DoFs).
    pub fn diagonal(&self) -> Vec<f64> {
        let h = self.hier;
        let mut d = vec![0.0; self.n_dofs()];
        for m in 0..h.mesh.macro_grid.macro_elements.len() {
            for (flat, el) in h
                .mesh
                .micro_elements(m, self.level)
                .expect("valid level")
                .enumerate()
            {
                let a = self.local_matrix(m, flat, &el);
                let dofs = h.kernel.dofs(&h.mesh, &el);
                for k in 0..N {
                    d[dofs[k]] += a.0[k][k];
                }
            }
        }
        for (v, &keep) in d.iter_mut().zip(self.interior()) {
            if !keep {
                *v = 1.0;
            }
        }
        d
    }

    /// Assembles the effective operator as a sparse matrix: entrywise equal
    /// to the action of `apply` on unit vectors.
    pub fn assemble_sparse(&self) -> CsrMatrix {
        let h = self.hier;
        let n = self.n_dofs();
        let interior = self.interior();
        let mut trips: Vec<(usize, usize, f64)> = Vec::new();
        for m in 0..h.mesh.macro_grid.macro_elements.len() {
            for (flat, el) in h
                .mesh
                .micro_elements(m, self.level)
                .expect("valid level")
                .enumerate()
            {
                let a = self.local_matrix(m, flat, &el);
                let dofs = h.kernel.dofs(&h.mesh, &el);
                for i in 0..N {
                    if !interior[dofs[i]] {
                        continue;
                    }
                    for j in 0..N {
                        if interior[dofs[j]] && a.0[i][j] != 0.0 {
                            trips.push((dofs[i], dofs[j], a.0[i][j]));
                        }
                    }
                }
            }
        }
        for i in 0..n {
            if !interior[i] {
                trips.push((i, i, 1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, trips)
    }

    /// Stored-matrix tally for this level (zero at the finest level).
    pub fn stored_matrices(&self) -> usize {
        if self.level < self.hier.mesh.max_level {
            self.hier.store.stored_matrices_at(self.level)
        } else {
            0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::EvalMode;
    use crate::mesh::{build_macro_grid, refine_hierarchy};
    use crate::transfer::prolongate;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn mesh(nx: usize, ny: usize, level: usize) -> Arc<MeshHierarchy> {
        Arc::new(refine_hierarchy(build_macro_grid(nx, ny).unwrap(), level))
    }

    fn constant_eval(mesh: &Arc<MeshHierarchy>, v: f64) -> CoefficientEval {
        CoefficientEval::new(EvalMode::Analytic, Arc::new(move |_, _| v), mesh.clone()).unwrap()
    }

    fn dense_from_apply<K: LocalKernel<N>, const N: usize>(
        op: &LevelOperator<'_, K, N>,
    ) -> Vec<Vec<f64>> {
        let n = op.n_dofs();
        let mut dense = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = op.apply(&e);
            for i in 0..n {
                dense[i][j] = col[i];
            }
        }
        dense
    }

    #[test]
    fn selector_constant_coefficient_all_dca() {
        let m = mesh(4, 4, 2);
        let eta: ScalarFn = Arc::new(|_, _| 2.0);
        for nu in [0.0, 1.0, 1e6] {
            let plan = select_macros(&eta, &m, nu);
            assert_eq!(plan.n_gca(), 0);
            assert_eq!(plan.c_agca(), 0.0);
        }
    }

    #[test]
    fn selector_infinite_nu_is_pure_dca() {
        let m = mesh(4, 4, 2);
        let eta: ScalarFn = Arc::new(|x, y| if x + y < 0.8 { 1.0 } else { 100.0 });
        let plan = select_macros(&eta, &m, f64::INFINITY);
        assert_eq!(plan.n_gca(), 0);
    }

    #[test]
    fn selector_monotone_in_nu() {
        let m = mesh(4, 4, 3);
        let eta: ScalarFn = Arc::new(|x, y| {
            let r = ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt();
            if r < 0.25 {
                100.0
            } else {
                0.01
            }
        });
        let nus = [0.01, 1.0, 10.0, 1e3, 1e6, f64::INFINITY];
        let mut prev: Option<Vec<bool>> = None;
        for nu in nus {
            let plan = select_macros(&eta, &m, nu);
            if let Some(p) = &prev {
                // the GCA set shrinks (subset) as nu grows
                for (a, b) in plan.gca.iter().zip(p) {
                    assert!(!a | b, "selector not monotone at nu={nu}");
                }
            }
            prev = Some(plan.gca);
        }
    }

    #[test]
    fn selector_disk_matches_geometric_oracle() {
        // Macros whose finest elements straddle the circle r=0.1 around the
        // center are exactly the GCA macros for a jump far above threshold.
        let m = mesh(8, 8, 3);
        let dr: f64 = 1e4;
        let (hi, lo) = (dr.sqrt(), dr.powf(-0.5));
        let eta: ScalarFn = Arc::new(move |x, y| {
            let r = ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt();
            if r <= 0.1 {
                hi
            } else {
                lo
            }
        });
        let plan = select_macros(&eta, &m, 10.0);
        let mut want = vec![false; m.macro_grid.macro_elements.len()];
        for (mac, w) in want.iter_mut().enumerate() {
            'els: for el in m.micro_elements(mac, 3).unwrap() {
                let mut has_in = false;
                let mut has_out = false;
                for v in el.verts {
                    let [x, y] = m.vertex_coord(3, v[0], v[1]);
                    let r = ((x - 0.5f64).powi(2) + (y - 0.5).powi(2)).sqrt();
                    if r <= 0.1 {
                        has_in = true;
                    } else {
                        has_out = true;
                    }
                }
                if has_in && has_out {
                    *w = true;
                    break 'els;
                }
            }
        }
        assert_eq!(plan.gca, want);
        assert!(plan.n_gca() > 0);
    }

    #[test]
    fn gca_equals_dca_for_constant_coefficient() {
        // Compared under the operator's masking convention: stored matrices
        // carry Galerkin contributions in boundary rows/cols that the apply
        // discards, so both sides are masked before the entrywise check.
        let m = mesh(2, 1, 2);
        let eval = constant_eval(&m, 3.0);
        let kernel = DiffusionKernel::default();
        let plan = CoarseningPlan::all_gca(m.macro_grid.macro_elements.len());
        let store = build_gca_store(&m, &kernel, &eval, &plan).unwrap();
        for level in 0..2 {
            for mac in 0..4 {
                let stored = store.get(level, mac).unwrap();
                for (k, el) in m.micro_elements(mac, level).unwrap().enumerate() {
                    let keep = kernel.interior(&m, &el);
                    let dca = kernel.local(&m, &el, &eval).unwrap().masked(&keep);
                    let g = stored[k].masked(&keep);
                    let scale = dca.frobenius().max(1e-30);
                    for i in 0..3 {
                        for j in 0..3 {
                            assert!(
                                (g.0[i][j] - dca.0[i][j]).abs() <= 1e-12 * scale,
                                "level {level} macro {mac} elem {k} entry ({i},{j}): {} vs {}",
                                g.0[i][j],
                                dca.0[i][j]
                            );
                        }
                    }
                    assert!(g.max_asymmetry() <= 1e-13 * scale);
                }
            }
        }
    }

    #[test]
    fn gca_build_order_enforced() {
        let m = mesh(1, 1, 3);
        let eval = constant_eval(&m, 1.0);
        let kernel = DiffusionKernel::default();
        let plan = CoarseningPlan::all_gca(2);
        let mut store = GcaStore::empty(&m);
        assert!(build_gca_level(&m, &kernel, &eval, &plan, &mut store, 0).is_err());
        assert!(build_gca_level(&m, &kernel, &eval, &plan, &mut store, 3).is_err());
        build_gca_level(&m, &kernel, &eval, &plan, &mut store, 2).unwrap();
        build_gca_level(&m, &kernel, &eval, &plan, &mut store, 1).unwrap();
        build_gca_level(&m, &kernel, &eval, &plan, &mut store, 0).unwrap();
        assert_eq!(store.stored_matrices(), 2 * (1 + 4 + 16));
    }

    /// Dense triple-product oracle: assemble the masked fine operator and
    /// the global prolongation densely, then compare P^T A P against the
    /// assembled sum of stored local GCA matrices, level by level.
    fn dense_gca_oracle<K: LocalKernel<N>, const N: usize>(
        m: &Arc<MeshHierarchy>,
        kernel: &K,
        eval: &CoefficientEval,
    ) {
        let plan = CoarseningPlan::all_gca(m.macro_grid.macro_elements.len());
        let store = build_gca_store(m, kernel, eval, &plan).unwrap();
        let comps = N / 3;
        let assemble_masked = |level: usize| -> Vec<Vec<f64>> {
            let n = kernel.n_dofs(m, level);
            let mut a = vec![vec![0.0; n]; n];
            for mac in 0..m.macro_grid.macro_elements.len() {
                for el in m.micro_elements(mac, level).unwrap() {
                    let loc = if level == m.max_level {
                        kernel
                            .local(m, &el, eval)
                            .unwrap()
                            .masked(&kernel.interior(m, &el))
                    } else {
                        store.get(level, mac).unwrap()[m.micro_flat_index(&el)]
                    };
                    let dofs = kernel.dofs(m, &el);
                    for i in 0..N {
                        for j in 0..N {
                            a[dofs[i]][dofs[j]] += loc.0[i][j];
                        }
                    }
                }
            }
            a
        };
        let dense_p = |level: usize| -> Vec<Vec<f64>> {
            let nc = m.n_vertices(level);
            let nf = m.n_vertices(level + 1);
            let mut p = vec![vec![0.0; comps * nc]; comps * nf];
            for j in 0..nc {
                let mut e = vec![0.0; nc];
                e[j] = 1.0;
                let col = prolongate(m, level, &e).unwrap();
                for c in 0..comps {
                    for i in 0..nf {
                        p[c * nf + i][c * nc + j] = col[i];
                    }
                }
            }
            p
        };
        let mut fine = assemble_masked(m.max_level);
        for level in (0..m.max_level).rev() {
            let p = dense_p(level);
            let nf = fine.len();
            let nc = p[0].len();
            let mut fp = vec![vec![0.0; nc]; nf];
            for i in 0..nf {
                for k in 0..nf {
                    if fine[i][k] != 0.0 {
                        for j in 0..nc {
                            fp[i][j] += fine[i][k] * p[k][j];
                        }
                    }
                }
            }
            let mut coarse = vec![vec![0.0; nc]; nc];
            for i in 0..nc {
                for k in 0..nf {
                    if p[k][i] != 0.0 {
                        for j in 0..nc {
                            coarse[i][j] += p[k][i] * fp[k][j];
                        }
                    }
                }
            }
            let stored = assemble_masked(level);
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..nc {
                for j in 0..nc {
                    num += (stored[i][j] - coarse[i][j]).powi(2);
                    den += coarse[i][j].powi(2);
                }
            }
            let rel = (num / den).sqrt();
            assert!(
                rel <= 1e-12,
                "distributed GCA differs from dense PtAP at level {level}: rel {rel:.3e}"
            );
            fine = stored;
        }
    }

    #[test]
    fn distributed_gca_matches_dense_triple_product_scalar() {
        let m = mesh(1, 1, 2);
        let dr: f64 = 1e4;
        let (hi, lo) = (dr.sqrt(), dr.powf(-0.5));
        let c = 11.0 / 24.0;
        let eta: ScalarFn = Arc::new(move |x, y| {
            if (x - c).abs().max((y - c).abs()) <= 0.125 {
                hi
            } else {
                lo
            }
        });
        let eval = CoefficientEval::new(EvalMode::Analytic, eta, m.clone()).unwrap();
        dense_gca_oracle::<_, 3>(&m, &DiffusionKernel::default(), &eval);
    }

    #[test]
    fn distributed_gca_matches_dense_triple_product_vector() {
        let m = mesh(1, 1, 2);
        let dr: f64 = 1e4;
        let (hi, lo) = (dr.sqrt(), dr.powf(-0.5));
        let c = 11.0 / 24.0;
        let eta: ScalarFn = Arc::new(move |x, y| {
            if (x - c).abs().max((y - c).abs()) <= 0.125 {
                hi
            } else {
                lo
            }
        });
        let eval = CoefficientEval::new(EvalMode::Analytic, eta, m.clone()).unwrap();
        dense_gca_oracle::<_, 6>(&m, &ViscousKernel::default(), &eval);
    }

    #[test]
    fn apply_matches_dense_assembly() {
        let m = mesh(2, 2, 2);
        let eta: ScalarFn = Arc::new(|x, y| 1.0 + 0.5 * (3.0 * x).sin() + y * y);
        let eval = CoefficientEval::new(EvalMode::Analytic, eta.clone(), m.clone()).unwrap();
        let plan = select_macros(&eta, &m, 0.5);
        let hier =
            build_agca_hierarchy(m.clone(), DiffusionKernel::default(), eval, plan).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for level in 0..=2 {
            let op = hier.level(level);
            let csr = op.assemble_sparse();
            for _ in 0..5 {
                let u: Vec<f64> = (0..op.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let via_apply = op.apply(&u);
                let mut via_csr = vec![0.0; op.n_dofs()];
                csr.matvec(&u, &mut via_csr);
                for i in 0..op.n_dofs() {
                    assert!(
                        (via_apply[i] - via_csr[i]).abs() < 1e-12,
                        "level {level} dof {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn apply_zero_is_zero_and_symmetric_on_interior() {
        let m = mesh(2, 1, 2);
        let eta: ScalarFn = Arc::new(|x, _| if x < 0.52 { 1.0 } else { 50.0 });
        let eval = CoefficientEval::new(EvalMode::Analytic, eta.clone(), m.clone()).unwrap();
        let plan = select_macros(&eta, &m, 10.0);
        let hier =
            build_agca_hierarchy(m.clone(), DiffusionKernel::default(), eval, plan).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for level in 0..=2 {
            let op = hier.level(level);
            let z = vec![0.0; op.n_dofs()];
            assert!(op.apply(&z).iter().all(|&v| v == 0.0));
            let interior = op.interior();
            let mut mk = || -> Vec<f64> {
                (0..op.n_dofs())
                    .map(|i| {
                        if interior[i] {
                            rng.gen_range(-1.0..1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            };
            let u = mk();
            let w = mk();
            let au: f64 = op.apply(&u).iter().zip(&w).map(|(a, b)| a * b).sum();
            let aw: f64 = op.apply(&w).iter().zip(&u).map(|(a, b)| a * b).sum();
            assert!((au - aw).abs() <= 1e-12 * au.abs().max(1.0));
        }
    }

    #[test]
    fn agca_equals_dca_for_grid_aligned_jump() {
        // An eta_1-style jump on [3/8, 5/8]^2 over an 8x8 macro grid lies on
        // macro edges at every level; AGCA and DCA level operators agree
        // entrywise.
        let m = mesh(8, 8, 2);
        let dr: f64 = 1e4;
        let (hi, lo) = (dr.sqrt(), dr.powf(-0.5));
        let eta: ScalarFn = Arc::new(move |x, y| {
            if (x - 0.5).abs().max((y - 0.5).abs()) <= 0.125 {
                hi
            } else {
                lo
            }
        });
        let eval = CoefficientEval::new(EvalMode::Analytic, eta.clone(), m.clone()).unwrap();
        let plan = select_macros(&eta, &m, 10.0);
        assert!(plan.n_gca() > 0, "jump macros selected");
        let agca =
            build_agca_hierarchy(m.clone(), DiffusionKernel::default(), eval.clone(), plan)
                .unwrap();
        let dca = build_agca_hierarchy(
            m.clone(),
            DiffusionKernel::default(),
            eval,
            CoarseningPlan::all_dca(m.macro_grid.macro_elements.len()),
        )
        .unwrap();
        for level in 0..=2 {
            let a = agca.level(level).assemble_sparse().to_dense();
            let d = dca.level(level).assemble_sparse().to_dense();
            let scale: f64 = d
                .iter()
                .flat_map(|r| r.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            for i in 0..a.len() {
                for j in 0..a.len() {
                    assert!(
                        (a[i][j] - d[i][j]).abs() <= 1e-12 * scale,
                        "level {level} entry ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn empty_plan_stores_nothing() {
        let m = mesh(2, 2, 2);
        let eval = constant_eval(&m, 1.0);
        let plan = CoarseningPlan::all_dca(8);
        let hier =
            build_agca_hierarchy(m.clone(), DiffusionKernel::default(), eval, plan).unwrap();
        assert_eq!(hier.store.stored_entries(), 0);
        assert_eq!(hier.plan.c_agca(), 0.0);
    }

    #[test]
    fn stored_entry_ledger() {
        // All-GCA plan on ((1,1), L=2): level 0 has 2 elements, level 1 has
        // 8; stored vector entries = 10 * 36.
        let m = mesh(1, 1, 2);
        let eval = constant_eval(&m, 1.0);
        let plan = CoarseningPlan::all_gca(2);
        let hier =
            build_agca_hierarchy(m.clone(), ViscousKernel::default(), eval, plan).unwrap();
        assert_eq!(hier.store.stored_matrices(), 10);
        assert_eq!(hier.store.stored_entries(), 360);
    }

    #[test]
    fn interior_row_nnz_bounded_by_valence() {
        let m = mesh(4, 4, 2);
        let eval = constant_eval(&m, 1.0);
        let plan = CoarseningPlan::all_dca(32);
        let hier =
            build_agca_hierarchy(m.clone(), DiffusionKernel::default(), eval, plan).unwrap();
        let csr = hier.level(2).assemble_sparse();
        assert!(csr.max_row_nnz() <= 7);
    }

    #[test]
    fn spd_on_interior_for_masked_operator() {
        // Smallest eigenvalue of the assembled interior block > 0.
        let m = mesh(2, 2, 2);
        let eta: ScalarFn = Arc::new(|x, y| if x.max(y) < 0.6 { 30.0 } else { 0.5 });
        let eval = CoefficientEval::new(EvalMode::Analytic, eta.clone(), m.clone()).unwrap();
        let plan = select_macros(&eta, &m, 1.0);
        let hier =
            build_agca_hierarchy(m.clone(), DiffusionKernel::default(), eval, plan).unwrap();
        for level in 0..=2 {
            let dense = dense_from_apply(&hier.level(level));
            let interior = hier.interior(level);
            let keep: Vec<usize> = (0..dense.len()).filter(|&i| interior[i]).collect();
            let nk = keep.len();
            let mut block = nalgebra::DMatrix::zeros(nk, nk);
            for (a, &i) in keep.iter().enumerate() {
                for (b, &j) in keep.iter().enumerate() {
                    block[(a, b)] = dense[i][j];
                }
            }
            let eig = nalgebra::SymmetricEigen::new(block);
            let min = eig.eigenvalues.min();
            assert!(min > 0.0, "level {level} interior block not SPD: {min}");
        }
    }

    #[test]
    fn dca_scale_invariance_for_constant_eta() {
        // 2D P1 diffusion stiffness is h-independent: the level-l matrix of
        // a parent equals each child's level-(l+1) matrix for constant eta.
        let m = mesh(1, 1, 2);
        let eval = constant_eval(&m, 2.0);
        let kernel = DiffusionKernel::default();
        let parent = m.micro_element(0, 1, 1);
        let a_parent = dca_local(&m, &kernel, &parent, &eval).unwrap();
        for ch in m.children(&parent).unwrap() {
            let a_child = dca_local(&m, &kernel, &ch, &eval).unwrap();
            // the child triangle is congruent (possibly rotated); compare
            // Frobenius norms and traces which are invariant
            assert!((a_child.frobenius() - a_parent.frobenius()).abs() < 1e-13);
            let tr_p: f64 = (0..3).map(|i| a_parent.0[i][i]).sum();
            let tr_c: f64 = (0..3).map(|i| a_child.0[i][i]).sum();
            assert!((tr_p - tr_c).abs() < 1e-13);
        }
    }
}
