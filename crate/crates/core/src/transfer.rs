//! Linear grid transfer between consecutive levels, and the fully-assembled
//! local interpolation matrices used by Galerkin coarsening.
//!
//! The whole domain is one uniform lattice triangulation per level, so the
//! global prolongation is a lattice stencil: fine vertices coinciding with
//! coarse vertices copy the value, edge-midpoint vertices take the mean of
//! the edge endpoints (horizontal, vertical, or the cell diagonal).
//! Restriction is the exact transpose. The transfers carry no boundary
//! handling; the operators apply the Dirichlet mask themselves.

use crate::fem::LocalMatrix;
use crate::mesh::{MeshHierarchy, MicroElement};
use crate::{Error, Result};

/// Prolongates a scalar level-`l` vector to level `l+1`.
pub fn prolongate(mesh: &MeshHierarchy, l: usize, coarse: &[f64]) -> Result<Vec<f64>> {
    if l + 1 > mesh.max_level {
        return Err(Error::Level(format!(
            "cannot prolongate from level {l} in a hierarchy of max level {}",
            mesh.max_level
        )));
    }
    assert_eq!(coarse.len(), mesh.n_vertices(l), "coarse vector size");
    let (nxf, nyf) = mesh.lattice_dims(l + 1);
    let mut fine = vec![0.0; mesh.n_vertices(l + 1)];
    let cidx = |ix: i64, iy: i64| mesh.vertex_index(l, ix, iy);
    for iy in 0..=nyf as i64 {
        for ix in 0..=nxf as i64 {
            let f = mesh.vertex_index(l + 1, ix, iy);
            fine[f] = match (ix % 2, iy % 2) {
                (0, 0) => coarse[cidx(ix / 2, iy / 2)],
                (1, 0) => 0.5 * (coarse[cidx(ix / 2, iy / 2)] + coarse[cidx(ix / 2 + 1, iy / 2)]),
                (0, 1) => 0.5 * (coarse[cidx(ix / 2, iy / 2)] + coarse[cidx(ix / 2, iy / 2 + 1)]),
                _ => {
                    // midpoint of the cell diagonal
                    0.5 * (coarse[cidx(ix / 2, iy / 2)] + coarse[cidx(ix / 2 + 1, iy / 2 + 1)])
                }
            };
        }
    }
    Ok(fine)
}

/// Restricts a scalar level-`l+1` vector to level `l`: the exact transpose
/// of [`prolongate`].
pub fn restrict(mesh: &MeshHierarchy, l_fine: usize, fine: &[f64]) -> Result<Vec<f64>> {
    if l_fine == 0 || l_fine > mesh.max_level {
        return Err(Error::Level(format!(
            "cannot restrict from level {l_fine} in a hierarchy of max level {}",
            mesh.max_level
        )));
    }
    let l = l_fine - 1;
    assert_eq!(fine.len(), mesh.n_vertices(l_fine), "fine vector size");
    let (nxc, nyc) = mesh.lattice_dims(l);
    let mut coarse = vec![0.0; mesh.n_vertices(l)];
    // Transpose stencil: own fine copy plus half of the six adjacent
    // midpoint vertices along the lattice edge directions.
    const NEIGHBORS: [[i64; 2]; 6] = [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, -1]];
    for iy in 0..=nyc as i64 {
        for ix in 0..=nxc as i64 {
            let mut acc = fine[mesh.vertex_index(l_fine, 2 * ix, 2 * iy)];
            for d in NEIGHBORS {
                let (fx, fy) = (2 * ix + d[0], 2 * iy + d[1]);
                if mesh.in_lattice(l_fine, fx, fy) {
                    acc += 0.5 * fine[mesh.vertex_index(l_fine, fx, fy)];
                }
            }
            coarse[mesh.vertex_index(l, ix, iy)] = acc;
        }
    }
    Ok(coarse)
}

/// Componentwise prolongation of a component-major vector field.
pub fn prolongate_vector(mesh: &MeshHierarchy, l: usize, coarse: &[f64]) -> Result<Vec<f64>> {
    let nc = mesh.n_vertices(l);
    assert_eq!(coarse.len(), 2 * nc, "coarse vector-field size");
    let x = prolongate(mesh, l, &coarse[..nc])?;
    let y = prolongate(mesh, l, &coarse[nc..])?;
    Ok([x, y].concat())
}

/// Componentwise restriction of a component-major vector field.
pub fn restrict_vector(mesh: &MeshHierarchy, l_fine: usize, fine: &[f64]) -> Result<Vec<f64>> {
    let nf = mesh.n_vertices(l_fine);
    assert_eq!(fine.len(), 2 * nf, "fine vector-field size");
    let x = restrict(mesh, l_fine, &fine[..nf])?;
    let y = restrict(mesh, l_fine, &fine[nf..])?;
    Ok([x, y].concat())
}

/// The 3x3 matrix mapping a coarse element's nodal values to one child's
/// nodal values. Rows are the child's vertices in canonical order, entries
/// are exactly 0, 1/2, or 1, and each row sums to one.
pub fn local_interp(parent: &MicroElement, child: &MicroElement) -> LocalMatrix<3> {
    // Parent vertices in child-level (doubled) integer coordinates.
    let pa = [2 * parent.verts[0][0], 2 * parent.verts[0][1]];
    let pb = [2 * parent.verts[1][0], 2 * parent.verts[1][1]];
    let pc = [2 * parent.verts[2][0], 2 * parent.verts[2][1]];
    let denom = ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])) as f64;
    let mut rows = [[0.0; 3]; 3];
    for (r, v) in child.verts.iter().enumerate() {
        let l1 = ((v[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (v[1] - pa[1])) as f64
            / denom;
        let l2 = ((pb[0] - pa[0]) * (v[1] - pa[1]) - (v[0] - pa[0]) * (pb[1] - pa[1])) as f64
            / denom;
        rows[r] = [1.0 - l1 - l2, l1, l2];
    }
    LocalMatrix(rows)
}

/// Block-diagonal 6x6 variant: two identical scalar blocks, one per velocity
/// component.
pub fn local_interp_vector(parent: &MicroElement, child: &MicroElement) -> LocalMatrix<6> {
    let p = local_interp(parent, child);
    let mut m = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = p.0[i][j];
            m[3 + i][3 + j] = p.0[i][j];
        }
    }
    LocalMatrix(m)
}
