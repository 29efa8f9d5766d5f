//! P1 element matrices for the scalar diffusion operator, the vector viscous
//! block `2 eta eps(u):eps(v)`, and the pressure-velocity divergence coupling,
//! together with interior quadrature rules and the five coefficient
//! evaluation modes (analytic, P1 interpolation, and the three P0 means).

use std::sync::Arc;

use crate::mesh::{MeshHierarchy, MicroElement};
use crate::{Error, Result};

/// Analytic scalar field on the unit square.
pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Analytic 2-vector field on the unit square.
pub type VectorFn = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;

/// Dense element matrix: 3x3 for scalar P1, 6x6 for two-component vector P1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalMatrix<const N: usize>(pub [[f64; N]; N]);

impl<const N: usize> LocalMatrix<N> {
    pub fn zero() -> Self {
        LocalMatrix([[0.0; N]; N])
    }

    pub fn apply(&self, x: &[f64; N]) -> [f64; N] {
        let mut y = [0.0; N];
        for i in 0..N {
            for j in 0..N {
                y[i] += self.0[i][j] * x[j];
            }
        }
        y
    }

    /// Zeroes rows and columns of masked (boundary) DoFs.
    pub fn masked(&self, keep: &[bool; N]) -> Self {
        let mut out = *self;
        for i in 0..N {
            for j in 0..N {
                if !keep[i] || !keep[j] {
                    out.0[i][j] = 0.0;
                }
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|r| r.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..N {
            for j in 0..N {
                m = m.max((self.0[i][j] - self.0[j][i]).abs());
            }
        }
        m
    }
}

/// Interior quadrature rule on the reference triangle, barycentric points and
/// weights summing to one (so `integral = area * sum w_q f(x_q)`).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// Returns the interior rule of the requested polynomial degree (1 or 2).
///
/// No point lies on the element boundary, so grid-aligned coefficient jumps
/// are evaluated unambiguously.
pub fn quadrature(degree: usize) -> Result<QuadratureRule> {
    match degree {
        1 => Ok(QuadratureRule {
            degree: 1,
            points: vec![[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
            weights: vec![1.0],
        }),
        2 => Ok(QuadratureRule {
            degree: 2,
            points: vec![
                [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
                [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
                [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
            ],
            weights: vec![1.0 / 3.0; 3],
        }),
        d => Err(Error::InvalidArgument(format!(
            "unsupported quadrature degree {d}, expected 1 or 2"
        ))),
    }
}

impl QuadratureRule {
    /// Fixed 6-point degree-4 rule used to sample coefficients for the P0
    /// mean projections and as a dense oracle rule in tests.
    pub fn degree4() -> QuadratureRule {
        let a = 0.445_948_490_915_965;
        let b = 0.091_576_213_509_771;
        let wa = 0.223_381_589_678_011;
        let wb = 0.109_951_743_655_322;
        QuadratureRule {
            degree: 4,
            points: vec![
                [1.0 - 2.0 * a, a, a],
                [a, 1.0 - 2.0 * a, a],
                [a, a, 1.0 - 2.0 * a],
                [1.0 - 2.0 * b, b, b],
                [b, 1.0 - 2.0 * b, b],
                [b, b, 1.0 - 2.0 * b],
            ],
            weights: vec![wa, wa, wa, wb, wb, wb],
        }
    }
}

/// Area and constant P1 shape-function gradients of a triangle.
#[derive(Debug, Clone, Copy)]
pub struct TriGeometry {
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

pub fn tri_geometry(p: &[[f64; 2]; 3]) -> Result<TriGeometry> {
    let two_a = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
        - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    if two_a.abs() < 2e-14 {
        return Err(Error::Geometry(format!(
            "degenerate element with area {:.3e}",
            two_a / 2.0
        )));
    }
    let grads = [
        [(p[1][1] - p[2][1]) / two_a, (p[2][0] - p[1][0]) / two_a],
        [(p[2][1] - p[0][1]) / two_a, (p[0][0] - p[2][0]) / two_a],
        [(p[0][1] - p[1][1]) / two_a, (p[1][0] - p[0][0]) / two_a],
    ];
    Ok(TriGeometry {
        area: two_a / 2.0,
        grads,
    })
}

/// Barycentric coordinates of `x` with respect to triangle `p`.
pub fn barycentric(p: &[[f64; 2]; 3], x: [f64; 2]) -> [f64; 3] {
    let two_a = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
        - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let l1 = ((x[0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (x[1] - p[0][1]))
        / two_a;
    let l2 = ((p[1][0] - p[0][0]) * (x[1] - p[0][1]) - (x[0] - p[0][0]) * (p[1][1] - p[0][1]))
        / two_a;
    [1.0 - l1 - l2, l1, l2]
}

/// Coefficient evaluation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Analytic,
    InterpP1,
    MeanArithmetic,
    MeanHarmonic,
    MeanGeometric,
}

impl EvalMode {
    pub const ALL: [EvalMode; 5] = [
        EvalMode::Analytic,
        EvalMode::InterpP1,
        EvalMode::MeanArithmetic,
        EvalMode::MeanHarmonic,
        EvalMode::MeanGeometric,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EvalMode::Analytic => "analytic",
            EvalMode::InterpP1 => "interp_p1",
            EvalMode::MeanArithmetic => "mean_arithmetic",
            EvalMode::MeanHarmonic => "mean_harmonic",
            EvalMode::MeanGeometric => "mean_geometric",
        }
    }
}

fn weighted_mean(mode: EvalMode, samples: &[(f64, f64)]) -> f64 {
    match mode {
        EvalMode::MeanArithmetic => samples.iter().map(|(w, v)| w * v).sum(),
        EvalMode::MeanHarmonic => {
            1.0 / samples.iter().map(|(w, v)| w / v).sum::<f64>()
        }
        EvalMode::MeanGeometric => {
            samples.iter().map(|(w, v)| w * v.ln()).sum::<f64>().exp()
        }
        _ => unreachable!("not a mean mode"),
    }
}

/// Evaluates the viscosity/diffusion coefficient under one of the five modes.
///
/// `InterpP1` holds the nodal values of the analytic source at finest-grid
/// vertices; the mean modes hold one constant per finest-grid element,
/// computed from samples at the fixed degree-4 rule. On coarser elements the
/// mean modes recompute their constant by sampling the analytic source on
/// the coarse element, and `InterpP1` re-interpolates from the (finest-grid)
/// nodal values at the coarse element's vertices.
#[derive(Clone)]
pub struct CoefficientEval {
    pub mode: EvalMode,
    mesh: Arc<MeshHierarchy>,
    source: ScalarFn,
    nodal: Option<Vec<f64>>,
    element_consts: Option<Vec<Vec<f64>>>,
    sampling: QuadratureRule,
}

impl std::fmt::Debug for CoefficientEval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientEval")
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

impl CoefficientEval {
    pub fn new(mode: EvalMode, source: ScalarFn, mesh: Arc<MeshHierarchy>) -> Result<Self> {
        let sampling = QuadratureRule::degree4();
        let mut eval = CoefficientEval {
            mode,
            mesh: mesh.clone(),
            source,
            nodal: None,
            element_consts: None,
            sampling,
        };
        let lev = mesh.max_level;
        match mode {
            EvalMode::Analytic => {}
            EvalMode::InterpP1 => {
                let (nxl, nyl) = mesh.lattice_dims(lev);
                let mut nodal = vec![0.0; mesh.n_vertices(lev)];
                for iy in 0..=nyl as i64 {
                    for ix in 0..=nxl as i64 {
                        let [x, y] = mesh.vertex_coord(lev, ix, iy);
                        let v = (eval.source)(x, y);
                        check_positive(v, x, y)?;
                        nodal[mesh.vertex_index(lev, ix, iy)] = v;
                    }
                }
                eval.nodal = Some(nodal);
            }
            _ => {
                let n_macro = mesh.macro_grid.macro_elements.len();
                let mut consts = Vec::with_capacity(n_macro);
                for m in 0..n_macro {
                    let mut per_elem = Vec::with_capacity(mesh.micro_count(lev));
                    for el in mesh.micro_elements(m, lev)? {
                        per_elem.push(eval.sample_mean(&el)?);
                    }
                    consts.push(per_elem);
                }
                eval.element_consts = Some(consts);
            }
        }
        Ok(eval)
    }

    pub fn mesh(&self) -> &Arc<MeshHierarchy> {
        &self.mesh
    }

    pub fn source(&self) -> &ScalarFn {
        &self.source
    }

    fn sample_mean(&self, el: &MicroElement) -> Result<f64> {
        let p = el.coords(&self.mesh);
        let mut samples = Vec::with_capacity(self.sampling.points.len());
        for (bary, &w) in self.sampling.points.iter().zip(&self.sampling.weights) {
            let x = bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0];
            let y = bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1];
            let v = (self.source)(x, y);
            check_positive(v, x, y)?;
            samples.push((w, v));
        }
        Ok(weighted_mean(self.mode, &samples))
    }

    /// Coefficient value at a barycentric point of a micro element.
    pub fn evaluate(&self, el: &MicroElement, bary: [f64; 3]) -> Result<f64> {
        match self.mode {
            EvalMode::Analytic => {
                let p = el.coords(&self.mesh);
                let x = bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0];
                let y = bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1];
                let v = (self.source)(x, y);
                check_positive(v, x, y)?;
                Ok(v)
            }
            EvalMode::InterpP1 => {
                let nodal = self.nodal.as_ref().expect("nodal values present");
                let shift = self.mesh.max_level - el.level;
                let mut v = 0.0;
                for k in 0..3 {
                    let fine = self.mesh.vertex_index(
                        self.mesh.max_level,
                        el.verts[k][0] << shift,
                        el.verts[k][1] << shift,
                    );
                    v += bary[k] * nodal[fine];
                }
                Ok(v)
            }
            _ => {
                if el.level == self.mesh.max_level {
                    let consts = self.element_consts.as_ref().expect("element constants");
                    Ok(consts[el.macro_idx][self.mesh.micro_flat_index(el)])
                } else {
                    self.sample_mean(el)
                }
            }
        }
    }
}

fn check_positive(v: f64, x: f64, y: f64) -> Result<()> {
    if v <= 0.0 || v.is_nan() {
        return Err(Error::Coefficient(format!(
            "coefficient must be positive, got {v:.3e} at ({x:.4}, {y:.4})"
        )));
    }
    Ok(())
}

/// Integral of the coefficient over the element, by quadrature.
fn coefficient_integral(
    el: &MicroElement,
    geom: &TriGeometry,
    eta: &CoefficientEval,
    quad: &QuadratureRule,
) -> Result<f64> {
    let mut acc = 0.0;
    for (bary, &w) in quad.points.iter().zip(&quad.weights) {
        acc += w * eta.evaluate(el, *bary)?;
    }
    Ok(acc * geom.area)
}

/// Local stiffness matrix of `-div(eta grad u)`.
pub fn local_diffusion(
    mesh: &MeshHierarchy,
    el: &MicroElement,
    eta: &CoefficientEval,
    quad: &QuadratureRule,
) -> Result<LocalMatrix<3>> {
    let geom = tri_geometry(&el.coords(mesh))?;
    let eta_int = coefficient_integral(el, &geom, eta, quad)?;
    let g = &geom.grads;
    let mut a = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] = eta_int * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    Ok(LocalMatrix(a))
}

/// Local matrix of the viscous block `2 eta eps(u):eps(v)`, component-major
/// (x-component DoFs 0..3, y-component DoFs 3..6).
pub fn local_viscous(
    mesh: &MeshHierarchy,
    el: &MicroElement,
    eta: &CoefficientEval,
    quad: &QuadratureRule,
) -> Result<LocalMatrix<6>> {
    let geom = tri_geometry(&el.coords(mesh))?;
    let eta_int = coefficient_integral(el, &geom, eta, quad)?;
    let g = &geom.grads;
    let mut a = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            let (gix, giy) = (g[i][0], g[i][1]);
            let (gjx, gjy) = (g[j][0], g[j][1]);
            // 2 eps(phi_i e_c) : eps(phi_j e_d), integrated.
            a[i][j] = eta_int * (2.0 * gix * gjx + giy * gjy);
            a[i][3 + j] = eta_int * (giy * gjx);
            a[3 + i][j] = eta_int * (gix * gjy);
            a[3 + i][3 + j] = eta_int * (2.0 * giy * gjy + gix * gjx);
        }
    }
    Ok(LocalMatrix(a))
}

/// Divergence coupling of one pressure element: the 3x6 blocks
/// `B[k][j] = int psi_k div Phi_j` over each of its four velocity children.
#[derive(Debug, Clone)]
pub struct DivergenceBlocks {
    pub pressure: MicroElement,
    pub children: [MicroElement; 4],
    /// blocks[c][k][j]: pressure DoF k of the parent against velocity DoF j
    /// (component-major) of child c.
    pub blocks: [[[f64; 6]; 3]; 4],
}

pub fn local_divergence(
    mesh: &MeshHierarchy,
    pressure_el: &MicroElement,
    quad: &QuadratureRule,
) -> Result<DivergenceBlocks> {
    let children = mesh.children(pressure_el)?;
    let parent_coords = pressure_el.coords(mesh);
    let mut blocks = [[[0.0; 6]; 3]; 4];
    for (c, child) in children.iter().enumerate() {
        let p = child.coords(mesh);
        let geom = tri_geometry(&p)?;
        // int_child psi_k: the coarse P1 function is linear on the child.
        let mut psi_int = [0.0; 3];
        for (bary, &w) in quad.points.iter().zip(&quad.weights) {
            let x = bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0];
            let y = bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1];
            let lp = barycentric(&parent_coords, [x, y]);
            for k in 0..3 {
                psi_int[k] += w * lp[k];
            }
        }
        for k in 0..3 {
            psi_int[k] *= geom.area;
        }
        for k in 0..3 {
            for j in 0..3 {
                blocks[c][k][j] = psi_int[k] * geom.grads[j][0]; // div of (phi_j, 0)
                blocks[c][k][3 + j] = psi_int[k] * geom.grads[j][1]; // div of (0, phi_j)
            }
        }
    }
    Ok(DivergenceBlocks {
        pressure: *pressure_el,
        children,
        blocks,
    })
}

/// Load vector `b_i = int f phi_i` on the level-`level` scalar space.
pub fn assemble_scalar_load(
    mesh: &MeshHierarchy,
    level: usize,
    f: &ScalarFn,
    quad: &QuadratureRule,
) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_vertices(level)];
    for m in 0..mesh.macro_grid.macro_elements.len() {
        for el in mesh.micro_elements(m, level).expect("valid level") {
            let p = el.coords(mesh);
            let area = el.signed_area(mesh);
            let ids = el.vertex_ids(mesh);
            for (bary, &w) in quad.points.iter().zip(&quad.weights) {
                let x = bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0];
                let y = bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1];
                let fv = f(x, y);
                for k in 0..3 {
                    b[ids[k]] += w * area * fv * bary[k];
                }
            }
        }
    }
    b
}

/// Load vector `b_i = int f . Phi_i` on the level-`level` vector space,
/// component-major.
pub fn assemble_vector_load(
    mesh: &MeshHierarchy,
    level: usize,
    f: &VectorFn,
    quad: &QuadratureRule,
) -> Vec<f64> {
    let n = mesh.n_vertices(level);
    let mut b = vec![0.0; 2 * n];
    for m in 0..mesh.macro_grid.macro_elements.len() {
        for el in mesh.micro_elements(m, level).expect("valid level") {
            let p = el.coords(mesh);
            let area = el.signed_area(mesh);
            let ids = el.vertex_ids(mesh);
            for (bary, &w) in quad.points.iter().zip(&quad.weights) {
                let x = bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0];
                let y = bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1];
                let fv = f(x, y);
                for k in 0..3 {
                    b[ids[k]] += w * area * fv[0] * bary[k];
                    b[n + ids[k]] += w * area * fv[1] * bary[k];
                }
            }
        }
    }
    b
}
