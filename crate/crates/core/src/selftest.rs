//! The built-in oracle and invariant suite behind the `selftest` command:
//! dense triple-product equivalence of the distributed Galerkin coarsening,
//! the DCA/GCA collapse for constant coefficients, transfer adjointness and
//! linear exactness, and the memory-model constants.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bench::memory_model_3d;
use crate::coarsening::{
    build_gca_store, CoarseningPlan, DiffusionKernel, LocalKernel, ViscousKernel,
};
use crate::fem::{CoefficientEval, EvalMode, ScalarFn};
use crate::mesh::{build_macro_grid, refine_hierarchy, MeshHierarchy};
use crate::solvers::norm2;
use crate::transfer::{prolongate, restrict};

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail,
    }
}

fn small_mesh() -> Arc<MeshHierarchy> {
    Arc::new(refine_hierarchy(build_macro_grid(1, 1).unwrap(), 2))
}

fn jump_eta() -> ScalarFn {
    let c = 11.0 / 24.0;
    Arc::new(move |x, y| {
        if (x - c).abs().max((y - c).abs()) <= 0.125 {
            100.0
        } else {
            0.01
        }
    })
}

/// Relative Frobenius distance between the assembled distributed-GCA
/// operator and the dense triple product `P^T A P`, maximized over levels.
fn triple_product_error<K: LocalKernel<N>, const N: usize>(
    mesh: &Arc<MeshHierarchy>,
    kernel: &K,
    eval: &CoefficientEval,
) -> f64 {
    let comps = N / 3;
    let plan = CoarseningPlan::all_gca(mesh.macro_grid.macro_elements.len());
    let store = build_gca_store(mesh, kernel, eval, &plan).expect("store builds");
    let assemble = |level: usize| -> Vec<Vec<f64>> {
        let n = kernel.n_dofs(mesh, level);
        let mut a = vec![vec![0.0; n]; n];
        for mac in 0..mesh.macro_grid.macro_elements.len() {
            for el in mesh.micro_elements(mac, level).unwrap() {
                let loc = if level == mesh.max_level {
                    kernel
                        .local(mesh, &el, eval)
                        .unwrap()
                        .masked(&kernel.interior(mesh, &el))
                } else {
                    store.get(level, mac).unwrap()[mesh.micro_flat_index(&el)]
                };
                let dofs = kernel.dofs(mesh, &el);
                for i in 0..N {
                    for j in 0..N {
                        a[dofs[i]][dofs[j]] += loc.0[i][j];
                    }
                }
            }
        }
        a
    };
    let mut worst: f64 = 0.0;
    let mut fine = assemble(mesh.max_level);
    for level in (0..mesh.max_level).rev() {
        let nc = mesh.n_vertices(level);
        let nf = mesh.n_vertices(level + 1);
        // dense P, componentwise blocks
        let mut p = vec![vec![0.0; comps * nc]; comps * nf];
        for j in 0..nc {
            let mut e = vec![0.0; nc];
            e[j] = 1.0;
            let col = prolongate(mesh, level, &e).unwrap();
            for c in 0..comps {
                for i in 0..nf {
                    p[c * nf + i][c * nc + j] = col[i];
                }
            }
        }
        let (rf, rc) = (comps * nf, comps * nc);
        let mut fp = vec![vec![0.0; rc]; rf];
        for i in 0..rf {
            for k in 0..rf {
                if fine[i][k] != 0.0 {
                    for j in 0..rc {
                        fp[i][j] += fine[i][k] * p[k][j];
                    }
                }
            }
        }
        let mut coarse = vec![vec![0.0; rc]; rc];
        for i in 0..rc {
            for k in 0..rf {
                if p[k][i] != 0.0 {
                    for j in 0..rc {
                        coarse[i][j] += p[k][i] * fp[k][j];
                    }
                }
            }
        }
        let stored = assemble(level);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..rc {
            for j in 0..rc {
                num += (stored[i][j] - coarse[i][j]).powi(2);
                den += coarse[i][j].powi(2);
            }
        }
        worst = worst.max((num / den).sqrt());
        fine = stored;
    }
    worst
}

/// Runs the full suite; each entry prints one pass/fail line downstream.
pub fn run_selftest() -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mesh = small_mesh();

    // Distributed GCA vs dense P^T A P, scalar and vector, jumping eta.
    let eval = CoefficientEval::new(EvalMode::Analytic, jump_eta(), mesh.clone()).unwrap();
    let err = triple_product_error::<_, 3>(&mesh, &DiffusionKernel::default(), &eval);
    results.push(check(
        "triple-product equivalence (scalar diffusion)",
        err <= 1e-12,
        format!("relative Frobenius error {err:.2e} (tolerance 1e-12)"),
    ));
    let err = triple_product_error::<_, 6>(&mesh, &ViscousKernel::default(), &eval);
    results.push(check(
        "triple-product equivalence (vector viscous)",
        err <= 1e-12,
        format!("relative Frobenius error {err:.2e} (tolerance 1e-12)"),
    ));

    // DCA == GCA for constant coefficients (masked comparison).
    let const_eval =
        CoefficientEval::new(EvalMode::Analytic, Arc::new(|_, _| 2.0), mesh.clone()).unwrap();
    let kernel = DiffusionKernel::default();
    let plan = CoarseningPlan::all_gca(2);
    let store = build_gca_store(&mesh, &kernel, &const_eval, &plan).unwrap();
    let mut worst: f64 = 0.0;
    for level in 0..2 {
        for mac in 0..2 {
            let stored = store.get(level, mac).unwrap();
            for (k, el) in mesh.micro_elements(mac, level).unwrap().enumerate() {
                let keep = kernel.interior(&mesh, &el);
                let dca = kernel.local(&mesh, &el, &const_eval).unwrap().masked(&keep);
                let g = stored[k].masked(&keep);
                let scale = dca.frobenius().max(1e-30);
                for i in 0..3 {
                    for j in 0..3 {
                        worst = worst.max((g.0[i][j] - dca.0[i][j]).abs() / scale);
                    }
                }
            }
        }
    }
    results.push(check(
        "DCA/GCA collapse for constant coefficients",
        worst <= 1e-12,
        format!("max relative entry deviation {worst:.2e} (tolerance 1e-12)"),
    ));

    // Transfer adjointness and linear exactness.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst_adj: f64 = 0.0;
    for _ in 0..10 {
        let v: Vec<f64> = (0..mesh.n_vertices(1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..mesh.n_vertices(2)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pv = prolongate(&mesh, 1, &v).unwrap();
        let rw = restrict(&mesh, 2, &w).unwrap();
        let lhs: f64 = pv.iter().zip(&w).map(|(a, b)| a * b).sum();
        let rhs: f64 = v.iter().zip(&rw).map(|(a, b)| a * b).sum();
        worst_adj = worst_adj.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    results.push(check(
        "restriction is the transpose of prolongation",
        worst_adj <= 1e-13,
        format!("max relative adjoint defect {worst_adj:.2e} (tolerance 1e-13)"),
    ));
    let mut lin: f64 = 0.0;
    let (nxc, nyc) = mesh.lattice_dims(1);
    let mut coarse = vec![0.0; mesh.n_vertices(1)];
    for iy in 0..=nyc as i64 {
        for ix in 0..=nxc as i64 {
            let [x, y] = mesh.vertex_coord(1, ix, iy);
            coarse[mesh.vertex_index(1, ix, iy)] = 2.0 * x + 3.0 * y;
        }
    }
    let fine = prolongate(&mesh, 1, &coarse).unwrap();
    let (nxf, nyf) = mesh.lattice_dims(2);
    for iy in 0..=nyf as i64 {
        for ix in 0..=nxf as i64 {
            let [x, y] = mesh.vertex_coord(2, ix, iy);
            lin = lin.max((fine[mesh.vertex_index(2, ix, iy)] - (2.0 * x + 3.0 * y)).abs());
        }
    }
    results.push(check(
        "prolongation reproduces affine functions",
        lin <= 1e-14,
        format!("max nodal deviation {lin:.2e} (tolerance 1e-14)"),
    ));

    // Memory-model constants.
    let m = memory_model_3d(1.0, 30, 1.0).unwrap();
    let ok = (m.mem_a - 86.5).abs() <= 0.2
        && (m.mem_k - 89.5).abs() <= 0.2
        && (m.sparse_gca - 10.8).abs() <= 0.2
        && (m.elementwise_gca - 34.0).abs() <= 0.5
        && (m.stencil_gca - 5.4).abs() <= 0.1;
    results.push(check(
        "memory-model constants (86.5 / 89.5 / 10.8 / 34 / 5.4)",
        ok,
        format!(
            "Mem_A {:.2}, Mem_K {:.2}, sparse {:.2}, elementwise {:.2}, stencil {:.2}",
            m.mem_a, m.mem_k, m.sparse_gca, m.elementwise_gca, m.stencil_gca
        ),
    ));

    // Sanity: norm helper used by downstream reporting.
    let _ = norm2(&[3.0, 4.0]);
    results
}
