//! Property tests for the structural invariants: transfer partition of
//! unity and linear exactness over random meshes, mean-mode ordering,
//! selector monotonicity, and sparse-matrix consistency.

use std::sync::Arc;

use agca::coarsening::select_macros;
use agca::fem::{CoefficientEval, EvalMode, ScalarFn};
use agca::mesh::{build_macro_grid, refine_hierarchy, MeshHierarchy};
use agca::sparse::CsrMatrix;
use agca::transfer::{local_interp, prolongate, restrict};
use proptest::prelude::*;

fn mesh(nx: usize, ny: usize, level: usize) -> Arc<MeshHierarchy> {
    Arc::new(refine_hierarchy(build_macro_grid(nx, ny).unwrap(), level))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn prolongation_reproduces_affine_on_random_meshes(
        nx in 1usize..4,
        ny in 1usize..4,
        level in 1usize..3,
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
        c in -5.0f64..5.0,
    ) {
        let m = mesh(nx, ny, level);
        let l = level - 1;
        let f = |x: f64, y: f64| a + b * x + c * y;
        let (nxc, nyc) = m.lattice_dims(l);
        let mut coarse = vec![0.0; m.n_vertices(l)];
        for iy in 0..=nyc as i64 {
            for ix in 0..=nxc as i64 {
                let [x, y] = m.vertex_coord(l, ix, iy);
                coarse[m.vertex_index(l, ix, iy)] = f(x, y);
            }
        }
        let fine = prolongate(&m, l, &coarse).unwrap();
        let (nxf, nyf) = m.lattice_dims(l + 1);
        for iy in 0..=nyf as i64 {
            for ix in 0..=nxf as i64 {
                let [x, y] = m.vertex_coord(l + 1, ix, iy);
                prop_assert!(
                    (fine[m.vertex_index(l + 1, ix, iy)] - f(x, y)).abs() <= 1e-13,
                );
            }
        }
    }

    #[test]
    fn restriction_adjoint_on_random_vectors(
        seed in 0u64..1000,
        nx in 1usize..4,
        level in 1usize..3,
    ) {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let m = mesh(nx, nx, level);
        let l = level - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..m.n_vertices(l)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..m.n_vertices(l + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pv = prolongate(&m, l, &v).unwrap();
        let rw = restrict(&m, l + 1, &w).unwrap();
        let lhs: f64 = pv.iter().zip(&w).map(|(x, y)| x * y).sum();
        let rhs: f64 = v.iter().zip(&rw).map(|(x, y)| x * y).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
    }

    #[test]
    fn local_interp_rows_are_partition_of_unity(
        mac in 0usize..8,
        flat in 0usize..16,
    ) {
        let m = mesh(2, 2, 2);
        let el = m.micro_element(mac, 1, flat % 4);
        for ch in m.children(&el).unwrap() {
            let p = local_interp(&el, &ch);
            for row in p.0 {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
                for e in row {
                    prop_assert!(e == 0.0 || e == 0.5 || e == 1.0);
                }
            }
        }
    }

    #[test]
    fn mean_modes_are_ordered(
        ax in 0.1f64..20.0,
        fx in 1.0f64..20.0,
        off in 0.05f64..5.0,
    ) {
        let m = mesh(1, 1, 2);
        let src: ScalarFn = Arc::new(move |x, y| off + ax * ((fx * x).sin().powi(2) + y * y));
        let evals: Vec<_> = [
            EvalMode::MeanHarmonic,
            EvalMode::MeanGeometric,
            EvalMode::MeanArithmetic,
        ]
        .iter()
        .map(|&mode| CoefficientEval::new(mode, src.clone(), m.clone()).unwrap())
        .collect();
        let bary = [1.0 / 3.0; 3];
        for mac in 0..2 {
            for el in m.micro_elements(mac, 2).unwrap() {
                let h = evals[0].evaluate(&el, bary).unwrap();
                let g = evals[1].evaluate(&el, bary).unwrap();
                let a = evals[2].evaluate(&el, bary).unwrap();
                prop_assert!(h <= g * (1.0 + 1e-12));
                prop_assert!(g <= a * (1.0 + 1e-12));
                prop_assert!(h > 0.0);
            }
        }
    }

    #[test]
    fn selector_gca_set_shrinks_with_nu(
        nu_lo in 0.0f64..50.0,
        gap in 0.1f64..100.0,
        r in 0.08f64..0.3,
    ) {
        let m = mesh(4, 4, 2);
        let eta: ScalarFn = Arc::new(move |x, y| {
            let d = ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt();
            if d < r { 50.0 } else { 0.02 }
        });
        let lo = select_macros(&eta, &m, nu_lo);
        let hi = select_macros(&eta, &m, nu_lo + gap);
        for (a, b) in hi.gca.iter().zip(&lo.gca) {
            prop_assert!(!a | b, "GCA set must shrink as nu grows");
        }
        prop_assert!((lo.c_agca() - lo.n_gca() as f64 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn csr_matvec_matches_dense(
        entries in proptest::collection::vec((0usize..6, 0usize..6, -5.0f64..5.0), 0..24),
        x in proptest::collection::vec(-2.0f64..2.0, 6),
    ) {
        let m = CsrMatrix::from_triplets(6, 6, entries.clone());
        let dense = m.to_dense();
        let mut y = vec![0.0; 6];
        m.matvec(&x, &mut y);
        for i in 0..6 {
            let want: f64 = (0..6).map(|j| dense[i][j] * x[j]).sum();
            prop_assert!((y[i] - want).abs() <= 1e-12);
        }
        // transpose consistency
        let mt = m.transpose();
        let mut yt = vec![0.0; 6];
        m.matvec_transpose(&x, &mut yt);
        let mut yt2 = vec![0.0; 6];
        mt.matvec(&x, &mut yt2);
        for i in 0..6 {
            prop_assert!((yt[i] - yt2[i]).abs() <= 1e-12);
        }
    }
}
