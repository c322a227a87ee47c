//! The operator bundle (L, V, Γ): L = Δ_G + V assembled so that the discrete
//! integration by parts <Lf, f> = ||∇f||_2^2 + ||√V f||_2^2 holds exactly.
//!
//! Vertex functions handled by the bundle live on the *active* vertices
//! (everything not flagged Dirichlet); Dirichlet vertices enter through zero
//! extension, i.e. an edge into the boundary contributes w f(x)^2 to the
//! quadratic form and the full w/µ(x) f(x)^2 share to the carré du champ at x.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{CoefficientField, WeightedGraph};

/// Which Γ channel a field operation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaChannel {
    /// Γ = ∇, realized through the carré du champ
    Gradient,
    /// Γ = multiplication by √V
    SqrtV,
    /// both channels stacked; magnitudes combine quadratically,
    /// |Γf|(x)^2 = |∇f|(x)^2 + V(x) f(x)^2
    Stacked,
}

/// Marker mirroring the bundle's intended Γ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientKind {
    Nabla,
    SqrtPotential,
}

/// Edge of the active subgraph, indices into the active vertex list.
#[derive(Debug, Clone, Copy)]
pub struct ActiveEdge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// Schrödinger (or divergence-form) operator L = Δ_G + V on a weighted graph.
#[derive(Debug, Clone)]
pub struct OperatorBundle {
    pub graph: WeightedGraph,
    /// nonnegative potential on active vertices
    pub potential: DVector<f64>,
    pub gradient_kind: GradientKind,
    /// active (non-Dirichlet) vertex ids in the underlying graph
    active: Vec<usize>,
    /// measure restricted to active vertices
    measure: DVector<f64>,
    /// edges with both endpoints active
    edges: Vec<ActiveEdge>,
    /// per active vertex, the summed conductance into Dirichlet vertices
    boundary_weight: Vec<f64>,
    /// incident edge lists (indices into `edges`)
    incidence: Vec<Vec<usize>>,
}

impl OperatorBundle {
    fn assemble(
        graph: WeightedGraph,
        potential_full: &[f64],
        gradient_kind: GradientKind,
    ) -> Result<OperatorBundle> {
        if potential_full.len() != graph.n_vertices {
            return Err(Error::invalid("potential length must match vertex count"));
        }
        if potential_full.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid("the potential must satisfy V >= 0"));
        }
        let active: Vec<usize> =
            (0..graph.n_vertices).filter(|&v| !graph.boundary[v]).collect();
        if active.is_empty() {
            return Err(Error::invalid("no interior vertices left after Dirichlet flags"));
        }
        let mut index = vec![usize::MAX; graph.n_vertices];
        for (i, &v) in active.iter().enumerate() {
            index[v] = i;
        }
        let measure = DVector::from_iterator(active.len(), active.iter().map(|&v| graph.measure[v]));
        let potential =
            DVector::from_iterator(active.len(), active.iter().map(|&v| potential_full[v]));
        let mut edges = Vec::new();
        let mut boundary_weight = vec![0.0; active.len()];
        for e in &graph.edges {
            match (index[e.u], index[e.v]) {
                (usize::MAX, usize::MAX) => {}
                (u, usize::MAX) => boundary_weight[u] += e.weight,
                (usize::MAX, v) => boundary_weight[v] += e.weight,
                (u, v) => edges.push(ActiveEdge { u, v, weight: e.weight }),
            }
        }
        let mut incidence = vec![Vec::new(); active.len()];
        for (i, e) in edges.iter().enumerate() {
            incidence[e.u].push(i);
            incidence[e.v].push(i);
        }
        Ok(OperatorBundle {
            graph,
            potential,
            gradient_kind,
            active,
            measure,
            edges,
            boundary_weight,
            incidence,
        })
    }

    /// Number of active vertices; the dimension all operator-level vertex
    /// functions have.
    pub fn n(&self) -> usize {
        self.active.len()
    }

    pub fn active_vertices(&self) -> &[usize] {
        &self.active
    }

    pub fn measure(&self) -> &DVector<f64> {
        &self.measure
    }

    pub fn active_edges(&self) -> &[ActiveEdge] {
        &self.edges
    }

    pub fn boundary_weight(&self) -> &[f64] {
        &self.boundary_weight
    }

    /// Positions of active vertices, if the graph carries coordinates.
    pub fn active_positions(&self) -> Option<Vec<&[f64]>> {
        self.graph
            .positions
            .as_ref()
            .map(|p| self.active.iter().map(|&v| p[v].as_slice()).collect())
    }

    /// µ-weighted inner product on active vertices.
    pub fn inner(&self, f: &DVector<f64>, g: &DVector<f64>) -> f64 {
        f.iter()
            .zip(g.iter())
            .zip(self.measure.iter())
            .map(|((a, b), m)| a * b * m)
            .sum()
    }

    pub fn norm2(&self, f: &DVector<f64>) -> f64 {
        self.inner(f, f).max(0.0).sqrt()
    }

    /// L f, with L = Δ_G + V acting through the measure:
    /// (Lf)(x) = (1/µ(x)) [Σ_y w_xy (f(x)-f(y)) + b(x) f(x)] + V(x) f(x).
    pub fn apply_l(&self, f: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        for e in &self.edges {
            let d = f[e.u] - f[e.v];
            out[e.u] += e.weight * d;
            out[e.v] -= e.weight * d;
        }
        for x in 0..self.n() {
            out[x] += self.boundary_weight[x] * f[x];
            out[x] = out[x] / self.measure[x] + self.potential[x] * f[x];
        }
        out
    }

    /// Dirichlet energy <Lf, f>_µ evaluated edgewise (never through apply_l),
    /// the right-hand side of the integration-by-parts identity.
    pub fn quadratic_form(&self, f: &DVector<f64>) -> f64 {
        let mut q = 0.0;
        for e in &self.edges {
            let d = f[e.u] - f[e.v];
            q += e.weight * d * d;
        }
        for x in 0..self.n() {
            q += self.boundary_weight[x] * f[x] * f[x];
            q += self.measure[x] * self.potential[x] * f[x] * f[x];
        }
        q
    }

    /// Dense symmetric matrix S = D^{1/2} L D^{-1/2} in the µ-weighted sense,
    /// for the eigensolver: S is symmetric positive semidefinite and shares
    /// eigenvalues with L.
    pub fn dense_symmetrized(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut s = DMatrix::zeros(n, n);
        let inv_sqrt: Vec<f64> = self.measure.iter().map(|m| 1.0 / m.sqrt()).collect();
        for e in &self.edges {
            s[(e.u, e.u)] += e.weight * inv_sqrt[e.u] * inv_sqrt[e.u];
            s[(e.v, e.v)] += e.weight * inv_sqrt[e.v] * inv_sqrt[e.v];
            let off = -e.weight * inv_sqrt[e.u] * inv_sqrt[e.v];
            s[(e.u, e.v)] += off;
            s[(e.v, e.u)] += off;
        }
        for x in 0..n {
            s[(x, x)] += self.boundary_weight[x] * inv_sqrt[x] * inv_sqrt[x];
            s[(x, x)] += self.potential[x];
        }
        s
    }

    /// Dense matrix of L itself (small instances / diagnostics).
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut l = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            l.set_column(j, &self.apply_l(&e));
        }
        l
    }

    /// Carré du champ |∇f|^2(x) = (1/2µ(x)) Σ_y w_xy (f(y)-f(x))^2 plus the
    /// full-weight Dirichlet share (1/µ(x)) b(x) f(x)^2, chosen so that
    /// Σ_x µ(x) |∇f|^2(x) equals the edge sum of the quadratic form exactly.
    pub fn carre_du_champ(&self, f: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        for e in &self.edges {
            let d = f[e.v] - f[e.u];
            let c = e.weight * d * d;
            out[e.u] += 0.5 * c;
            out[e.v] += 0.5 * c;
        }
        for x in 0..self.n() {
            out[x] += self.boundary_weight[x] * f[x] * f[x];
            out[x] /= self.measure[x];
        }
        out
    }

    /// |Γf|^2(x) for the requested channel.
    pub fn gamma_squared(&self, f: &DVector<f64>, channel: GammaChannel) -> DVector<f64> {
        match channel {
            GammaChannel::Gradient => self.carre_du_champ(f),
            GammaChannel::SqrtV => DVector::from_iterator(
                self.n(),
                f.iter().zip(self.potential.iter()).map(|(v, p)| p * v * v),
            ),
            GammaChannel::Stacked => {
                let mut g = self.carre_du_champ(f);
                for x in 0..self.n() {
                    g[x] += self.potential[x] * f[x] * f[x];
                }
                g
            }
        }
    }

    /// |Γf|(x).
    pub fn gamma_magnitude(&self, f: &DVector<f64>, channel: GammaChannel) -> DVector<f64> {
        self.gamma_squared(f, channel).map(|v| v.max(0.0).sqrt())
    }
}

/// Schrödinger bundle L = Δ_G + diag(V); `potential` is given on all graph
/// vertices (boundary entries are ignored by the zero extension).
pub fn attach_potential(graph: &WeightedGraph, potential: &[f64]) -> Result<OperatorBundle> {
    OperatorBundle::assemble(graph.clone(), potential, GradientKind::SqrtPotential)
}

/// Pure Laplacian bundle (V = 0).
pub fn laplacian_bundle(graph: &WeightedGraph) -> Result<OperatorBundle> {
    let v = vec![0.0; graph.n_vertices];
    OperatorBundle::assemble(graph.clone(), &v, GradientKind::Nabla)
}

/// Potential defined through vertex positions.
pub fn attach_potential_fn(
    graph: &WeightedGraph,
    v: impl Fn(&[f64]) -> f64,
) -> Result<OperatorBundle> {
    let pos = graph
        .positions
        .as_ref()
        .ok_or_else(|| Error::invalid("position-dependent potential needs positions"))?;
    let pot: Vec<f64> = pos.iter().map(|p| v(p)).collect();
    attach_potential(graph, &pot)
}

/// Divergence-form operator: edge conductances scaled by the elliptic
/// coefficient field, V = 0. Only grid-built graphs are supported.
pub fn attach_divergence_form(
    grid: &WeightedGraph,
    a: &CoefficientField,
) -> Result<OperatorBundle> {
    if grid.grid_meta.is_none() {
        return Err(Error::Unsupported(
            "divergence-form operators need a grid-built graph".into(),
        ));
    }
    if a.edge_coefficients.len() != grid.edges.len() {
        return Err(Error::invalid("coefficient field does not match the grid's edges"));
    }
    if !(a.ellipticity > 0.0) {
        return Err(Error::invalid("ellipticity constant must be positive"));
    }
    let mut g = grid.clone();
    for (e, &c) in g.edges.iter_mut().zip(&a.edge_coefficients) {
        e.weight *= c;
    }
    g.label = format!("{}+divform", g.label);
    let v = vec![0.0; g.n_vertices];
    OperatorBundle::assemble(g, &v, GradientKind::Nabla)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_grid, build_path_graph, build_radial_graph};
    use approx::assert_relative_eq;

    fn p3() -> OperatorBundle {
        laplacian_bundle(&build_path_graph(3, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn p3_matrix() {
        let l = p3().dense_matrix();
        let expect = [[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(l[(i, j)], expect[i][j], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn constant_in_kernel() {
        let g = build_path_graph(4, 0.5).unwrap();
        let b = laplacian_bundle(&g).unwrap();
        let ones = DVector::from_element(4, 1.0);
        assert!(b.quadratic_form(&ones).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_interval_is_scalar_two() {
        let g = build_grid(&[3], 1.0, true).unwrap();
        let b = laplacian_bundle(&g).unwrap();
        assert_eq!(b.n(), 1);
        let f = DVector::from_element(1, 1.0);
        assert_relative_eq!(b.apply_l(&f)[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn potential_shifts_operator() {
        let g = build_path_graph(3, 1.0).unwrap();
        let b = attach_potential(&g, &[1.0, 1.0, 1.0]).unwrap();
        let f = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        // (Δ+I) f = 2 f on the λ=1 eigenvector
        let lf = b.apply_l(&f);
        for i in 0..3 {
            assert_relative_eq!(lf[i], 2.0 * f[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn negative_potential_rejected() {
        let g = build_path_graph(3, 1.0).unwrap();
        assert!(attach_potential(&g, &[0.0, -0.1, 0.0]).is_err());
    }

    #[test]
    fn carre_du_champ_p3() {
        let b = p3();
        let f = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        let g2 = b.carre_du_champ(&f);
        assert_relative_eq!(g2[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(g2[1], 1.0, epsilon = 1e-14);
        assert_relative_eq!(g2[2], 0.5, epsilon = 1e-14);
        // Σ µ |∇f|² = <Lf, f> = 2 with V = 0
        let total: f64 = (0..3).map(|x| b.measure()[x] * g2[x]).sum();
        assert_relative_eq!(total, 2.0, epsilon = 1e-13);
        assert_relative_eq!(total, b.inner(&b.apply_l(&f), &f), epsilon = 1e-13);
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let b = p3();
        let f = DVector::from_element(3, 3.7);
        assert!(b.carre_du_champ(&f).amax() < 1e-15);
    }

    #[test]
    fn integration_by_parts_exact_on_radial_with_potential() {
        let g = build_radial_graph(3, 1.0, 60).unwrap();
        let b = attach_potential_fn(&g, |p| p[0].powf(-1.5)).unwrap();
        let f = DVector::from_iterator(60, (0..60).map(|i| ((i * 7919 + 13) % 101) as f64 / 50.0 - 1.0));
        let lhs = b.inner(&b.apply_l(&f), &f);
        let grad: f64 = b
            .carre_du_champ(&f)
            .iter()
            .zip(b.measure().iter())
            .map(|(g2, m)| g2 * m)
            .sum();
        let pot: f64 = (0..60).map(|x| b.measure()[x] * b.potential[x] * f[x] * f[x]).sum();
        assert!((lhs - grad - pot).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn radial_quadratic_form_matches_integral() {
        // <Lf, f> for f(r) = r approximates int_0^1 r^2 dr = 1/3 within 2%
        let g = build_radial_graph(3, 1.0, 100).unwrap();
        let b = laplacian_bundle(&g).unwrap();
        let f = DVector::from_iterator(100, (0..100).map(|i| (i + 1) as f64 * 0.01));
        let q = b.quadratic_form(&f);
        assert!((q - 1.0 / 3.0).abs() < 0.02 / 3.0, "q = {q}");
    }

    #[test]
    fn divergence_form_scaling() {
        let g = build_grid(&[4, 4], 1.0, false).unwrap();
        let a1 = CoefficientField::isotropic(&g, 1.0).unwrap();
        let a2 = CoefficientField::isotropic(&g, 2.0).unwrap();
        let b0 = laplacian_bundle(&g).unwrap();
        let b1 = attach_divergence_form(&g, &a1).unwrap();
        let b2 = attach_divergence_form(&g, &a2).unwrap();
        let f = DVector::from_iterator(16, (0..16).map(|i| (i as f64 * 0.3).sin()));
        assert_relative_eq!(b0.quadratic_form(&f), b1.quadratic_form(&f), epsilon = 1e-12);
        assert_relative_eq!(2.0 * b1.quadratic_form(&f), b2.quadratic_form(&f), epsilon = 1e-12);
    }

    #[test]
    fn divergence_form_rejects_non_grid() {
        let p = build_path_graph(4, 1.0).unwrap();
        let g = build_grid(&[4, 4], 1.0, false).unwrap();
        let a = CoefficientField::isotropic(&g, 1.0).unwrap();
        assert!(attach_divergence_form(&p, &a).is_err());
    }
}
