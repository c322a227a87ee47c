//! Weighted graphs playing the role of the measured space (M, dx).
//!
//! A [`WeightedGraph`] carries a strictly positive vertex measure, positive
//! edge conductances, optional vertex coordinates and an optional set of
//! vertices flagged as Dirichlet boundary. Builders cover the substrates the
//! experiments run on: 1-D chains, tensor grids with or without Dirichlet
//! boundary, radial surrogates of R^n and connected sums of two flat sheets.

use crate::error::{Error, Result};

/// Undirected edge with a positive conductance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// Metadata kept by the grid builder so that downstream code can recognize
/// tensor-product structure (used for the exact fast spectral path).
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeta {
    pub dims: Vec<usize>,
    pub spacing: f64,
    pub dirichlet: bool,
}

/// Finite weighted graph: the discrete (M, dx).
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    pub n_vertices: usize,
    /// strictly positive vertex measure (plays dx)
    pub measure: Vec<f64>,
    /// at most one edge per unordered pair, no self-loops
    pub edges: Vec<Edge>,
    /// optional coordinates, used by position-dependent potentials and probes
    pub positions: Option<Vec<Vec<f64>>>,
    /// vertices flagged as Dirichlet boundary (functions vanish there)
    pub boundary: Vec<bool>,
    /// set by `build_grid`, `None` for other builders
    pub grid_meta: Option<GridMeta>,
    /// human-readable provenance, e.g. "path(16,1)"
    pub label: String,
}

impl WeightedGraph {
    /// Validates the structural invariants and returns the graph.
    pub fn new(
        measure: Vec<f64>,
        edges: Vec<Edge>,
        positions: Option<Vec<Vec<f64>>>,
        boundary: Option<Vec<bool>>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let n = measure.len();
        if n == 0 {
            return Err(Error::invalid("graph needs at least one vertex"));
        }
        if measure.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::invalid("vertex measures must be strictly positive"));
        }
        if let Some(p) = &positions {
            if p.len() != n {
                return Err(Error::invalid("positions length must match vertex count"));
            }
        }
        let boundary = boundary.unwrap_or_else(|| vec![false; n]);
        if boundary.len() != n {
            return Err(Error::invalid("boundary flags length must match vertex count"));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &edges {
            if e.u >= n || e.v >= n {
                return Err(Error::invalid("edge endpoint out of range"));
            }
            if e.u == e.v {
                return Err(Error::invalid("self-loops are not allowed"));
            }
            if !(e.weight > 0.0) || !e.weight.is_finite() {
                return Err(Error::invalid("edge conductances must be strictly positive"));
            }
            let key = (e.u.min(e.v), e.u.max(e.v));
            if !seen.insert(key) {
                return Err(Error::invalid(format!(
                    "duplicate edge between {} and {}",
                    key.0, key.1
                )));
            }
        }
        Ok(WeightedGraph {
            n_vertices: n,
            measure,
            edges,
            positions,
            boundary,
            grid_meta: None,
            label: label.into(),
        })
    }

    pub fn total_measure(&self) -> f64 {
        self.measure.iter().sum()
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary.iter().filter(|b| **b).count()
    }

    /// Connected components over all vertices (boundary included).
    pub fn connected_components(&self) -> usize {
        components(self.n_vertices, self.edges.iter().map(|e| (e.u, e.v)))
    }

    /// Connected components of the subgraph induced by non-boundary vertices.
    pub fn interior_components(&self) -> usize {
        let keep: Vec<usize> = (0..self.n_vertices).filter(|&v| !self.boundary[v]).collect();
        let index: Vec<Option<usize>> = {
            let mut idx = vec![None; self.n_vertices];
            for (i, &v) in keep.iter().enumerate() {
                idx[v] = Some(i);
            }
            idx
        };
        components(
            keep.len(),
            self.edges.iter().filter_map(|e| match (index[e.u], index[e.v]) {
                (Some(a), Some(b)) => Some((a, b)),
                _ => None,
            }),
        )
    }
}

fn components(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut count = n;
    for (u, v) in edges {
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru != rv {
            parent[ru] = rv;
            count -= 1;
        }
    }
    count
}

/// 1-D chain: n vertices with measure h, n-1 edges with conductance 1/h.
pub fn build_path_graph(n: usize, h: f64) -> Result<WeightedGraph> {
    if n < 2 {
        return Err(Error::invalid("path graph needs n >= 2"));
    }
    if !(h > 0.0) {
        return Err(Error::invalid("spacing h must be positive"));
    }
    let measure = vec![h; n];
    let edges = (0..n - 1)
        .map(|i| Edge { u: i, v: i + 1, weight: 1.0 / h })
        .collect();
    let positions = Some((0..n).map(|i| vec![i as f64 * h]).collect());
    WeightedGraph::new(measure, edges, positions, None, format!("path({n},{h})"))
}

/// Tensor grid with spacing h. Vertex measure h^d, edge conductance h^{d-2},
/// so the quadratic form discretizes the Dirichlet energy of a box in R^d.
///
/// With `dirichlet` set, the outermost layer is flagged as boundary; the
/// operator bundle then acts on interior vertices with zero extension.
pub fn build_grid(dims: &[usize], h: f64, dirichlet: bool) -> Result<WeightedGraph> {
    if dims.is_empty() {
        return Err(Error::invalid("grid needs at least one dimension"));
    }
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::invalid("every grid dimension must be >= 2"));
    }
    if !(h > 0.0) {
        return Err(Error::invalid("spacing h must be positive"));
    }
    let d = dims.len();
    let n: usize = dims.iter().product();
    let strides: Vec<usize> = {
        let mut s = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * dims[k + 1];
        }
        s
    };
    let coords = |v: usize| -> Vec<usize> {
        let mut c = Vec::with_capacity(d);
        let mut rem = v;
        for k in 0..d {
            c.push(rem / strides[k]);
            rem %= strides[k];
        }
        c
    };
    let measure = vec![h.powi(d as i32); n];
    let w = h.powi(d as i32 - 2);
    let mut edges = Vec::new();
    let mut boundary = vec![false; n];
    let mut positions = Vec::with_capacity(n);
    for v in 0..n {
        let c = coords(v);
        positions.push(c.iter().map(|&ci| ci as f64 * h).collect::<Vec<f64>>());
        if dirichlet && c.iter().zip(dims).any(|(&ci, &di)| ci == 0 || ci == di - 1) {
            boundary[v] = true;
        }
        for k in 0..d {
            if c[k] + 1 < dims[k] {
                edges.push(Edge { u: v, v: v + strides[k], weight: w });
            }
        }
    }
    let mut g = WeightedGraph::new(
        measure,
        edges,
        Some(positions),
        Some(boundary),
        format!("grid({dims:?},{h},{})", if dirichlet { "dirichlet" } else { "free" }),
    )?;
    g.grid_meta = Some(GridMeta { dims: dims.to_vec(), spacing: h, dirichlet });
    Ok(g)
}

/// Radial surrogate of R^n: a chain on radii r_i = i*r_max/m carrying the
/// r^{n-1} dr measure, with midpoint edge conductances, so that the quadratic
/// form discretizes the radial Dirichlet integral of f(|x|) on R^n.
pub fn build_radial_graph(n_dim: u32, r_max: f64, m: usize) -> Result<WeightedGraph> {
    if n_dim < 2 {
        return Err(Error::invalid("radial surrogate needs n_dim >= 2"));
    }
    if m < 3 {
        return Err(Error::invalid("radial graph needs m >= 3"));
    }
    if !(r_max > 0.0) {
        return Err(Error::invalid("r_max must be positive"));
    }
    let dr = r_max / m as f64;
    let pow = (n_dim - 1) as i32;
    let radius = |i: usize| (i + 1) as f64 * dr;
    let measure: Vec<f64> = (0..m).map(|i| radius(i).powi(pow) * dr).collect();
    let edges: Vec<Edge> = (0..m - 1)
        .map(|i| Edge {
            u: i,
            v: i + 1,
            weight: ((radius(i) + radius(i + 1)) / 2.0).powi(pow) / dr,
        })
        .collect();
    let positions = Some((0..m).map(|i| vec![radius(i)]).collect());
    WeightedGraph::new(
        measure,
        edges,
        positions,
        None,
        format!("radial(n={n_dim},rmax={r_max},m={m})"),
    )
}

/// Connected sum of two flat sheets, the discrete stand-in for R^n # R^n.
///
/// Each sheet is a `side^n` unit grid with a central block of side
/// `neck_width` removed. The two sheets are glued by identifying one face
/// strip of the removed block (the layer of vertices adjacent to the hole on
/// its low side along axis 0), which is `neck_width^{n-1}` vertices. The
/// identified strip is kept once with the measure of a single sheet vertex.
/// V = 0 everywhere.
pub fn build_connected_sum(n_dim: u32, side: usize, neck_width: usize) -> Result<WeightedGraph> {
    if n_dim < 2 {
        return Err(Error::invalid("connected sum needs n_dim >= 2"));
    }
    if neck_width == 0 {
        return Err(Error::invalid("neck_width must be >= 1"));
    }
    if side < 4 * neck_width {
        return Err(Error::invalid("connected sum needs side >= 4*neck_width"));
    }
    let d = n_dim as usize;
    let n_sheet: usize = side.pow(n_dim);
    let strides: Vec<usize> = {
        let mut s = vec![1usize; d];
        for k in (0..d - 1).rev() {
            s[k] = s[k + 1] * side;
        }
        s
    };
    let coords = |v: usize| -> Vec<usize> {
        let mut c = Vec::with_capacity(d);
        let mut rem = v;
        for k in 0..d {
            c.push(rem / strides[k]);
            rem %= strides[k];
        }
        c
    };
    let lo = (side - neck_width) / 2;
    let hi = lo + neck_width; // hole occupies [lo, hi) in every axis
    let in_hole = |c: &[usize]| c.iter().all(|&ci| ci >= lo && ci < hi);
    // strip: layer adjacent to the hole at coordinate lo-1 along axis 0
    let in_strip =
        |c: &[usize]| c[0] + 1 == lo && c[1..].iter().all(|&ci| ci >= lo && ci < hi);

    // Global ids: sheet A vertices first, then sheet B vertices that are not
    // identified with the strip.
    let mut id_a = vec![usize::MAX; n_sheet];
    let mut id_b = vec![usize::MAX; n_sheet];
    let mut measure = Vec::new();
    let mut positions = Vec::new();
    let mut next = 0usize;
    for v in 0..n_sheet {
        let c = coords(v);
        if in_hole(&c) {
            continue;
        }
        id_a[v] = next;
        next += 1;
        measure.push(1.0);
        let mut p: Vec<f64> = c.iter().map(|&ci| ci as f64).collect();
        p.push(if in_strip(&c) { 0.5 } else { 0.0 });
        positions.push(p);
    }
    for v in 0..n_sheet {
        let c = coords(v);
        if in_hole(&c) {
            continue;
        }
        if in_strip(&c) {
            id_b[v] = id_a[v]; // identified with sheet A
        } else {
            id_b[v] = next;
            next += 1;
            measure.push(1.0);
            let mut p: Vec<f64> = c.iter().map(|&ci| ci as f64).collect();
            p.push(1.0);
            positions.push(p);
        }
    }
    let mut edges = Vec::new();
    for (ids, _sheet) in [(&id_a, 0), (&id_b, 1)] {
        for v in 0..n_sheet {
            if ids[v] == usize::MAX {
                continue;
            }
            let c = coords(v);
            for k in 0..d {
                if c[k] + 1 < side {
                    let w = v + strides[k];
                    if ids[w] == usize::MAX {
                        continue;
                    }
                    edges.push(Edge { u: ids[v], v: ids[w], weight: 1.0 });
                }
            }
        }
    }
    // Deduplicate edges duplicated through the identification (strip-internal
    // edges appear once per sheet).
    edges.sort_by_key(|e| (e.u.min(e.v), e.u.max(e.v)));
    edges.dedup_by_key(|e| (e.u.min(e.v), e.u.max(e.v)));
    WeightedGraph::new(
        measure,
        edges,
        Some(positions),
        None,
        format!("connected_sum(n={n_dim},side={side},neck={neck_width})"),
    )
}

/// Per-edge elliptic coefficient field a_{uv} >= nu > 0 for divergence-form
/// operators on grid graphs.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    /// one coefficient per edge, aligned with `WeightedGraph::edges`
    pub edge_coefficients: Vec<f64>,
    /// ellipticity constant: min over edges
    pub ellipticity: f64,
}

impl CoefficientField {
    /// Builds coefficients by evaluating `A(midpoint, axis)` at edge midpoints.
    ///
    /// `axis` is the grid direction of the edge, so a diagonal matrix field
    /// A(x) = diag(a_1(x), ..., a_d(x)) is expressed as `|x, k| a_k(x)`.
    pub fn from_fn(
        grid: &WeightedGraph,
        a: impl Fn(&[f64], usize) -> f64,
    ) -> Result<CoefficientField> {
        let meta = grid
            .grid_meta
            .as_ref()
            .ok_or_else(|| Error::Unsupported("coefficient fields need a grid-built graph".into()))?;
        let pos = grid.positions.as_ref().expect("grid graphs carry positions");
        let tol = meta.spacing * 1e-9;
        let mut coeffs = Vec::with_capacity(grid.edges.len());
        for e in &grid.edges {
            let (pu, pv) = (&pos[e.u], &pos[e.v]);
            let axis = pu
                .iter()
                .zip(pv)
                .position(|(a, b)| (a - b).abs() > tol)
                .expect("grid edge endpoints differ in one coordinate");
            let mid: Vec<f64> = pu.iter().zip(pv).map(|(a, b)| 0.5 * (a + b)).collect();
            let c = a(&mid, axis);
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::invalid("elliptic coefficients must be strictly positive"));
            }
            coeffs.push(c);
        }
        let nu = coeffs.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(CoefficientField { edge_coefficients: coeffs, ellipticity: nu })
    }

    /// Constant multiple of the identity matrix field.
    pub fn isotropic(grid: &WeightedGraph, c: f64) -> Result<CoefficientField> {
        CoefficientField::from_fn(grid, |_, _| c)
    }

    /// Checkerboard field: `a0` on cells of even parity, `a1` on odd, decided
    /// by the integer part of the edge midpoint in grid units.
    pub fn checkerboard(grid: &WeightedGraph, a0: f64, a1: f64) -> Result<CoefficientField> {
        let h = grid
            .grid_meta
            .as_ref()
            .ok_or_else(|| Error::Unsupported("coefficient fields need a grid-built graph".into()))?
            .spacing;
        CoefficientField::from_fn(grid, move |mid, _| {
            let parity: i64 = mid.iter().map(|&x| (x / h).floor() as i64).sum();
            if parity.rem_euclid(2) == 0 {
                a0
            } else {
                a1
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_graph_shape() {
        let g = build_path_graph(3, 1.0).unwrap();
        assert_eq!(g.n_vertices, 3);
        assert_eq!(g.edges.len(), 2);
        assert!(g.measure.iter().all(|&m| m == 1.0));
        assert_eq!(g.connected_components(), 1);
    }

    #[test]
    fn path_graph_rejects_bad_args() {
        assert!(build_path_graph(1, 1.0).is_err());
        assert!(build_path_graph(4, 0.0).is_err());
        assert!(build_path_graph(4, -1.0).is_err());
    }

    #[test]
    fn grid_8x8_counts() {
        let g = build_grid(&[8, 8], 1.0, false).unwrap();
        assert_eq!(g.n_vertices, 64);
        assert_eq!(g.edges.len(), 112); // 2 * 8 * 7
        assert_eq!(g.boundary_count(), 0);
    }

    #[test]
    fn grid_dirichlet_interior() {
        let g = build_grid(&[3], 1.0, true).unwrap();
        assert_eq!(g.n_vertices, 3);
        assert_eq!(g.boundary_count(), 2);
        assert!(g.boundary[0] && g.boundary[2] && !g.boundary[1]);
    }

    #[test]
    fn grid_rejects_empty_dims() {
        assert!(build_grid(&[], 1.0, false).is_err());
    }

    #[test]
    fn radial_measures_follow_r_squared() {
        let g = build_radial_graph(3, 1.0, 4).unwrap();
        let dr = 0.25;
        for i in 0..4 {
            let r = (i + 1) as f64 * dr;
            assert!((g.measure[i] - r * r * dr).abs() < 1e-15);
        }
    }

    #[test]
    fn radial_total_measure_riemann() {
        // int_0^2 r dr = 2 for n=2; right-endpoint sum overshoots by <= 10%
        let g = build_radial_graph(2, 2.0, 10).unwrap();
        let total = g.total_measure();
        assert!((total - 2.0).abs() <= 0.2 + 1e-12, "total {total}");
    }

    #[test]
    fn radial_rejects_low_dim() {
        assert!(build_radial_graph(1, 1.0, 10).is_err());
    }

    #[test]
    fn connected_sum_counts_and_connectivity() {
        // 2*(8^2 - 1) - 1 shared strip vertex
        let g = build_connected_sum(2, 8, 1).unwrap();
        assert_eq!(g.n_vertices, 2 * (64 - 1) - 1);
        assert_eq!(g.connected_components(), 1);

        let g = build_connected_sum(2, 16, 2).unwrap();
        assert_eq!(g.n_vertices, 2 * (256 - 4) - 2);
        assert_eq!(g.connected_components(), 1);
    }

    #[test]
    fn connected_sum_rejects_fat_neck() {
        assert!(build_connected_sum(2, 8, 3).is_err());
    }

    #[test]
    fn checkerboard_coefficients() {
        let g = build_grid(&[4, 4], 1.0, false).unwrap();
        let a = CoefficientField::checkerboard(&g, 1.0, 10.0).unwrap();
        assert_eq!(a.edge_coefficients.len(), g.edges.len());
        assert_eq!(a.ellipticity, 1.0);
        assert!(a.edge_coefficients.iter().any(|&c| c == 10.0));
    }

    #[test]
    fn coefficient_field_needs_grid() {
        let g = build_path_graph(4, 1.0).unwrap();
        // path graphs are not grid-built
        assert!(CoefficientField::isotropic(&g, 1.0).is_err());
    }
}
