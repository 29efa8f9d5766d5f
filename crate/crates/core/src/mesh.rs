//! Block-structured triangular grids: a macro triangulation of the unit
//! square plus uniform refinement levels with lattice-based global numbering.
//!
//! The macro grid splits the unit square into `nx x ny` cells, each cut into
//! two triangles along the (+1,+1) diagonal. Refining any triangle l times
//! (red refinement) produces micro elements whose vertices all lie on the
//! level-l lattice with `nx*2^l + 1` by `ny*2^l + 1` points, so global DoF
//! numbering is a plain lattice index and interface DoFs are shared between
//! macros for free.

use crate::{Error, Result};

/// Orientation of a micro triangle inside the barycentric lattice of its
/// macro element. `Up` triangles have their right angle at the local origin,
/// `Down` triangles are the 180-degree rotated complements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriKind {
    Up,
    Down,
}

/// Macro triangulation of the unit square.
#[derive(Debug, Clone)]
pub struct MacroGrid {
    pub nx: usize,
    pub ny: usize,
    /// Macro vertex coordinates, lattice order (row-major, x fastest).
    pub vertices: Vec<[f64; 2]>,
    /// Vertex-index triples per macro triangle, counterclockwise.
    pub macro_elements: Vec<[usize; 3]>,
    /// Boundary flag per macro vertex.
    pub boundary: Vec<bool>,
}

/// Builds the `nx x ny` macro grid: each cell split along the same diagonal.
pub fn build_macro_grid(nx: usize, ny: usize) -> Result<MacroGrid> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "macro grid needs nx, ny >= 1, got {nx} x {ny}"
        )));
    }
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut boundary = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([i as f64 / nx as f64, j as f64 / ny as f64]);
            boundary.push(i == 0 || i == nx || j == 0 || j == ny);
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut macro_elements = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            // Diagonal from (i,j) to (i+1,j+1): lower-right and upper-left halves.
            macro_elements.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            macro_elements.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    Ok(MacroGrid {
        nx,
        ny,
        vertices,
        macro_elements,
        boundary,
    })
}

impl MacroGrid {
    /// Cell-unit integer coordinates of a macro vertex.
    fn cell_coords(&self, v: usize) -> [i64; 2] {
        let i = (v % (self.nx + 1)) as i64;
        let j = (v / (self.nx + 1)) as i64;
        [i, j]
    }

    pub fn signed_area(&self, m: usize) -> f64 {
        let [a, b, c] = self.macro_elements[m];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }
}

/// A micro element: one triangle of the level-`level` triangulation,
/// identified by its macro element and barycentric lattice position.
#[derive(Debug, Clone, Copy)]
pub struct MicroElement {
    pub macro_idx: usize,
    pub level: usize,
    pub kind: TriKind,
    /// Barycentric lattice position (i, j) within the macro element.
    pub bary: [usize; 2],
    /// Level-`level` integer lattice coordinates of the three vertices.
    pub verts: [[i64; 2]; 3],
}

/// Macro grid plus `max_level` uniform refinement levels.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    pub macro_grid: MacroGrid,
    pub max_level: usize,
}

pub fn refine_hierarchy(macro_grid: MacroGrid, max_level: usize) -> MeshHierarchy {
    MeshHierarchy {
        macro_grid,
        max_level,
    }
}

impl MeshHierarchy {
    /// Lattice dimensions (cells per axis) at level `l`.
    pub fn lattice_dims(&self, l: usize) -> (usize, usize) {
        (self.macro_grid.nx << l, self.macro_grid.ny << l)
    }

    /// Number of lattice vertices at level `l`.
    pub fn n_vertices(&self, l: usize) -> usize {
        let (nxl, nyl) = self.lattice_dims(l);
        (nxl + 1) * (nyl + 1)
    }

    /// Lattice spacing per axis at level `l`.
    pub fn spacing(&self, l: usize) -> (f64, f64) {
        let (nxl, nyl) = self.lattice_dims(l);
        (1.0 / nxl as f64, 1.0 / nyl as f64)
    }

    pub fn vertex_index(&self, l: usize, ix: i64, iy: i64) -> usize {
        let (nxl, _) = self.lattice_dims(l);
        debug_assert!(self.in_lattice(l, ix, iy));
        iy as usize * (nxl + 1) + ix as usize
    }

    pub fn in_lattice(&self, l: usize, ix: i64, iy: i64) -> bool {
        let (nxl, nyl) = self.lattice_dims(l);
        ix >= 0 && iy >= 0 && ix <= nxl as i64 && iy <= nyl as i64
    }

    /// Inverse of `vertex_index`.
    pub fn vertex_lattice(&self, l: usize, idx: usize) -> [i64; 2] {
        let (nxl, _) = self.lattice_dims(l);
        [(idx % (nxl + 1)) as i64, (idx / (nxl + 1)) as i64]
    }

    pub fn vertex_coord(&self, l: usize, ix: i64, iy: i64) -> [f64; 2] {
        let (hx, hy) = self.spacing(l);
        [ix as f64 * hx, iy as f64 * hy]
    }

    pub fn is_boundary(&self, l: usize, ix: i64, iy: i64) -> bool {
        let (nxl, nyl) = self.lattice_dims(l);
        ix == 0 || iy == 0 || ix == nxl as i64 || iy == nyl as i64
    }

    /// Boundary mask over all level-`l` lattice vertices.
    pub fn boundary_mask(&self, l: usize) -> Vec<bool> {
        let (nxl, nyl) = self.lattice_dims(l);
        let mut mask = vec![false; self.n_vertices(l)];
        for iy in 0..=nyl as i64 {
            for ix in 0..=nxl as i64 {
                mask[self.vertex_index(l, ix, iy)] = self.is_boundary(l, ix, iy);
            }
        }
        mask
    }

    /// Number of micro elements of one macro element at level `l`.
    pub fn micro_count(&self, l: usize) -> usize {
        1 << (2 * l)
    }

    /// Corner and edge-direction data of a macro element in cell units.
    fn macro_frame(&self, m: usize) -> ([i64; 2], [i64; 2], [i64; 2]) {
        let [a, b, c] = self.macro_grid.macro_elements[m];
        let pa = self.macro_grid.cell_coords(a);
        let pb = self.macro_grid.cell_coords(b);
        let pc = self.macro_grid.cell_coords(c);
        let u = [pb[0] - pa[0], pb[1] - pa[1]];
        let v = [pc[0] - pa[0], pc[1] - pa[1]];
        (pa, u, v)
    }

    fn make_element(
        &self,
        m: usize,
        l: usize,
        kind: TriKind,
        i: usize,
        j: usize,
    ) -> MicroElement {
        let (pa, u, v) = self.macro_frame(m);
        let base = [(pa[0] << l), (pa[1] << l)];
        let node = |a: i64, b: i64| -> [i64; 2] {
            [base[0] + a * u[0] + b * v[0], base[1] + a * u[1] + b * v[1]]
        };
        let (a, b) = (i as i64, j as i64);
        let verts = match kind {
            TriKind::Up => [node(a, b), node(a + 1, b), node(a, b + 1)],
            TriKind::Down => [node(a + 1, b), node(a + 1, b + 1), node(a, b + 1)],
        };
        MicroElement {
            macro_idx: m,
            level: l,
            kind,
            bary: [i, j],
            verts,
        }
    }

    /// Micro element by flat index `k` in the documented enumeration order:
    /// row-major over the barycentric lattice (j outer, i inner), up and down
    /// triangles interleaved per row.
    pub fn micro_element(&self, m: usize, l: usize, k: usize) -> MicroElement {
        let n = 1usize << l;
        debug_assert!(k < n * n);
        let mut offset = 0;
        for j in 0..n {
            let row_len = 2 * (n - j) - 1;
            if k < offset + row_len {
                let r = k - offset;
                let i = r / 2;
                let kind = if r.is_multiple_of(2) { TriKind::Up } else { TriKind::Down };
                return self.make_element(m, l, kind, i, j);
            }
            offset += row_len;
        }
        unreachable!("flat micro index out of range")
    }

    /// Flat enumeration index of a micro element (inverse of `micro_element`).
    pub fn micro_flat_index(&self, el: &MicroElement) -> usize {
        let n = 1usize << el.level;
        let [i, j] = el.bary;
        let offset: usize = (0..j).map(|r| 2 * (n - r) - 1).sum();
        offset + 2 * i + if el.kind == TriKind::Down { 1 } else { 0 }
    }

    /// Iterates the micro elements of macro `m` at level `l` in enumeration
    /// order. Yields exactly `4^l` elements.
    pub fn micro_elements(
        &self,
        m: usize,
        l: usize,
    ) -> Result<impl Iterator<Item = MicroElement> + '_> {
        if m >= self.macro_grid.macro_elements.len() {
            return Err(Error::InvalidArgument(format!(
                "macro index {m} out of range"
            )));
        }
        if l > self.max_level {
            return Err(Error::Level(format!(
                "level {l} exceeds max level {}",
                self.max_level
            )));
        }
        let n = 1usize << l;
        Ok((0..n).flat_map(move |j| {
            (0..2 * (n - j) - 1).map(move |r| {
                let i = r / 2;
                let kind = if r.is_multiple_of(2) { TriKind::Up } else { TriKind::Down };
                self.make_element(m, l, kind, i, j)
            })
        }))
    }

    /// The four level-(l+1) children of a micro element (red refinement):
    /// three corner children in parent-vertex order, then the central
    /// (inverted) child.
    pub fn children(&self, el: &MicroElement) -> Result<[MicroElement; 4]> {
        if el.level >= self.max_level {
            return Err(Error::Level(format!(
                "element at level {} has no children in a hierarchy of max level {}",
                el.level, self.max_level
            )));
        }
        let (m, l) = (el.macro_idx, el.level + 1);
        let [i, j] = el.bary;
        let (i, j) = (2 * i, 2 * j);
        let ch = match el.kind {
            TriKind::Up => [
                self.make_element(m, l, TriKind::Up, i, j),
                self.make_element(m, l, TriKind::Up, i + 1, j),
                self.make_element(m, l, TriKind::Up, i, j + 1),
                self.make_element(m, l, TriKind::Down, i, j),
            ],
            TriKind::Down => [
                self.make_element(m, l, TriKind::Down, i + 1, j),
                self.make_element(m, l, TriKind::Down, i + 1, j + 1),
                self.make_element(m, l, TriKind::Down, i, j + 1),
                self.make_element(m, l, TriKind::Up, i + 1, j + 1),
            ],
        };
        Ok(ch)
    }
}

impl MicroElement {
    /// Real coordinates of the three vertices.
    pub fn coords(&self, mesh: &MeshHierarchy) -> [[f64; 2]; 3] {
        [
            mesh.vertex_coord(self.level, self.verts[0][0], self.verts[0][1]),
            mesh.vertex_coord(self.level, self.verts[1][0], self.verts[1][1]),
            mesh.vertex_coord(self.level, self.verts[2][0], self.verts[2][1]),
        ]
    }

    /// Global lattice vertex indices (the scalar DoF map).
    pub fn vertex_ids(&self, mesh: &MeshHierarchy) -> [usize; 3] {
        [
            mesh.vertex_index(self.level, self.verts[0][0], self.verts[0][1]),
            mesh.vertex_index(self.level, self.verts[1][0], self.verts[1][1]),
            mesh.vertex_index(self.level, self.verts[2][0], self.verts[2][1]),
        ]
    }

    /// Component-major vector DoF indices: x-components first, then y.
    pub fn vector_dofs(&self, mesh: &MeshHierarchy) -> [usize; 6] {
        let v = self.vertex_ids(mesh);
        let n = mesh.n_vertices(self.level);
        [v[0], v[1], v[2], n + v[0], n + v[1], n + v[2]]
    }

    /// Per-vertex boundary flags.
    pub fn boundary_flags(&self, mesh: &MeshHierarchy) -> [bool; 3] {
        [
            mesh.is_boundary(self.level, self.verts[0][0], self.verts[0][1]),
            mesh.is_boundary(self.level, self.verts[1][0], self.verts[1][1]),
            mesh.is_boundary(self.level, self.verts[2][0], self.verts[2][1]),
        ]
    }

    pub fn signed_area(&self, mesh: &MeshHierarchy) -> f64 {
        let p = self.coords(mesh);
        0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
            - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
    }
}
