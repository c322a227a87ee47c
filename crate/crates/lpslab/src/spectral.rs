//! Spectral resolution of L and the operator functions built on it:
//! m(L), e^{-tL}, e^{-t√L}, L^{-1/2}, (I + tL)^{-δ'}.
//!
//! Two backends sit behind one API. `Dense` eigendecomposes the µ-symmetrized
//! matrix directly. `Tensor2` exploits the Kronecker-sum structure of flat
//! uniform 2-D grids with V = 0 (free or Dirichlet): eigenpairs are tensor
//! products of the two 1-D chains and every calculus application costs two
//! small matrix products instead of a dense n x n solve. Both routes produce
//! the same operator to within eigensolver precision; the tensor route keeps
//! large-grid experiments inside the runtime budget without iterative solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operator::{laplacian_bundle, OperatorBundle};

pub const DEFAULT_VERTEX_CAP: usize = 4000;
/// Grids at least this large take the tensor route by default.
const TENSOR_THRESHOLD: usize = 600;

#[derive(Debug, Clone)]
pub struct DecomposeOptions {
    /// hard cap on the dense eigensolve
    pub vertex_cap: usize,
    /// kernel threshold; `None` means 1e-10 * lambda_max
    pub kernel_tolerance: Option<f64>,
    /// disable the tensor fast path (testing / cross-validation)
    pub force_dense: bool,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions { vertex_cap: DEFAULT_VERTEX_CAP, kernel_tolerance: None, force_dense: false }
    }
}

#[derive(Debug, Clone)]
struct Axis1D {
    eigenvalues: Vec<f64>,
    /// columns µ-orthonormal w.r.t. the 1-D measure
    phi: DMatrix<f64>,
    measure: DVector<f64>,
}

#[derive(Debug, Clone)]
enum Backend {
    Dense {
        /// columns are µ-orthonormal eigenvectors in ascending eigenvalue order
        phi: DMatrix<f64>,
        measure: DVector<f64>,
    },
    Tensor2 {
        rows: Axis1D,
        cols: Axis1D,
        /// sorted index -> (row mode, column mode)
        perm: Vec<(u32, u32)>,
    },
}

/// Eigenpairs of L, orthonormal in the µ-weighted inner product.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    kernel_dim: usize,
    kernel_tolerance: f64,
    backend: Backend,
}

impl SpectralDecomposition {
    /// Builds a decomposition from explicit dense parts. Intended for tests
    /// and exploration; the caller is responsible for µ-orthonormality.
    pub fn from_dense_parts(
        eigenvalues: Vec<f64>,
        phi: DMatrix<f64>,
        measure: DVector<f64>,
        kernel_tolerance: f64,
    ) -> SpectralDecomposition {
        let kernel_dim = eigenvalues.iter().take_while(|&&l| l <= kernel_tolerance).count();
        SpectralDecomposition {
            eigenvalues,
            kernel_dim,
            kernel_tolerance,
            backend: Backend::Dense { phi, measure },
        }
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel_dim
    }

    pub fn kernel_tolerance(&self) -> f64 {
        self.kernel_tolerance
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    /// Smallest eigenvalue above the kernel tolerance.
    pub fn lambda_min_positive(&self) -> Option<f64> {
        self.eigenvalues.get(self.kernel_dim).copied()
    }

    /// Coefficients c_j = <f, φ_j>_µ in ascending eigenvalue order.
    pub fn coefficients(&self, f: &DVector<f64>) -> DVector<f64> {
        match &self.backend {
            Backend::Dense { phi, measure } => {
                let mf = f.component_mul(measure);
                phi.tr_mul(&mf)
            }
            Backend::Tensor2 { rows, cols, perm } => {
                let c = self.tensor_coefficient_matrix(rows, cols, f);
                DVector::from_iterator(
                    perm.len(),
                    perm.iter().map(|&(i, j)| c[(i as usize, j as usize)]),
                )
            }
        }
    }

    /// Σ_j c_j φ_j.
    pub fn synthesize(&self, c: &DVector<f64>) -> DVector<f64> {
        match &self.backend {
            Backend::Dense { phi, .. } => phi * c,
            Backend::Tensor2 { rows, cols, perm } => {
                let (m1, m2) = (rows.eigenvalues.len(), cols.eigenvalues.len());
                let mut cm = DMatrix::zeros(m1, m2);
                for (k, &(i, j)) in perm.iter().enumerate() {
                    cm[(i as usize, j as usize)] = c[k];
                }
                self.tensor_synthesize(rows, cols, &cm)
            }
        }
    }

    /// m(L) f for a scalar multiplier evaluated on the spectrum.
    pub fn apply_multiplier(&self, g: impl Fn(f64) -> f64, f: &DVector<f64>) -> DVector<f64> {
        match &self.backend {
            Backend::Dense { phi, measure } => {
                let mf = f.component_mul(measure);
                let mut c = phi.tr_mul(&mf);
                for (ck, &l) in c.iter_mut().zip(&self.eigenvalues) {
                    *ck *= g(l);
                }
                phi * c
            }
            Backend::Tensor2 { rows, cols, .. } => {
                let mut c = self.tensor_coefficient_matrix(rows, cols, f);
                for j in 0..c.ncols() {
                    for i in 0..c.nrows() {
                        c[(i, j)] *= g(rows.eigenvalues[i] + cols.eigenvalues[j]);
                    }
                }
                self.tensor_synthesize(rows, cols, &c)
            }
        }
    }

    /// Like [`apply_multiplier`] with one explicit weight per sorted mode.
    pub fn apply_weights(&self, w: &[f64], f: &DVector<f64>) -> DVector<f64> {
        assert_eq!(w.len(), self.n());
        match &self.backend {
            Backend::Dense { phi, measure } => {
                let mf = f.component_mul(measure);
                let mut c = phi.tr_mul(&mf);
                for (ck, wk) in c.iter_mut().zip(w) {
                    *ck *= wk;
                }
                phi * c
            }
            Backend::Tensor2 { rows, cols, perm } => {
                let mut c = self.tensor_coefficient_matrix(rows, cols, f);
                for (k, &(i, j)) in perm.iter().enumerate() {
                    c[(i as usize, j as usize)] *= w[k];
                }
                self.tensor_synthesize(rows, cols, &c)
            }
        }
    }

    /// Eigenvector for the k-th sorted mode.
    pub fn eigenvector(&self, k: usize) -> DVector<f64> {
        match &self.backend {
            Backend::Dense { phi, .. } => phi.column(k).into_owned(),
            Backend::Tensor2 { rows, cols, perm } => {
                let (i, j) = perm[k];
                let (m1, m2) = (rows.measure.len(), cols.measure.len());
                let mut v = DVector::zeros(m1 * m2);
                for r in 0..m1 {
                    for c in 0..m2 {
                        v[r * m2 + c] = rows.phi[(r, i as usize)] * cols.phi[(c, j as usize)];
                    }
                }
                v
            }
        }
    }

    /// Dense eigenvector matrix, available on the dense backend only.
    pub fn dense_eigenvectors(&self) -> Option<&DMatrix<f64>> {
        match &self.backend {
            Backend::Dense { phi, .. } => Some(phi),
            Backend::Tensor2 { .. } => None,
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.backend, Backend::Dense { .. })
    }

    /// Component of f in ker L (modes below the kernel tolerance).
    pub fn kernel_component(&self, f: &DVector<f64>) -> DVector<f64> {
        if self.kernel_dim == 0 {
            return DVector::zeros(f.len());
        }
        let mut w = vec![0.0; self.n()];
        for wk in w.iter_mut().take(self.kernel_dim) {
            *wk = 1.0;
        }
        self.apply_weights(&w, f)
    }

    pub fn project_off_kernel(&self, f: &DVector<f64>) -> DVector<f64> {
        if self.kernel_dim == 0 {
            return f.clone();
        }
        f - self.kernel_component(f)
    }

    fn tensor_coefficient_matrix(
        &self,
        rows: &Axis1D,
        cols: &Axis1D,
        f: &DVector<f64>,
    ) -> DMatrix<f64> {
        let (m1, m2) = (rows.measure.len(), cols.measure.len());
        assert_eq!(f.len(), m1 * m2, "vertex function does not match the grid");
        let mut fm = DMatrix::zeros(m1, m2);
        for r in 0..m1 {
            for c in 0..m2 {
                fm[(r, c)] = f[r * m2 + c] * rows.measure[r] * cols.measure[c];
            }
        }
        rows.phi.tr_mul(&(fm * &cols.phi))
    }

    fn tensor_synthesize(&self, rows: &Axis1D, cols: &Axis1D, c: &DMatrix<f64>) -> DVector<f64> {
        let fm = &rows.phi * c * cols.phi.transpose();
        let (m1, m2) = (rows.measure.len(), cols.measure.len());
        let mut f = DVector::zeros(m1 * m2);
        for r in 0..m1 {
            for c_ in 0..m2 {
                f[r * m2 + c_] = fm[(r, c_)];
            }
        }
        f
    }
}

fn dense_axis(bundle: &OperatorBundle) -> Axis1D {
    let s = bundle.dense_symmetrized();
    let eig = s.symmetric_eigen();
    let m = bundle.n();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut phi = DMatrix::zeros(m, m);
    let mut vals = Vec::with_capacity(m);
    for (k, &j) in order.iter().enumerate() {
        vals.push(eig.eigenvalues[j]);
        for x in 0..m {
            phi[(x, k)] = eig.eigenvectors[(x, j)] / bundle.measure()[x].sqrt();
        }
    }
    Axis1D { eigenvalues: vals, phi, measure: bundle.measure().clone() }
}

fn tensor_eligible(bundle: &OperatorBundle) -> bool {
    let Some(meta) = &bundle.graph.grid_meta else { return false };
    meta.dims.len() == 2 && bundle.potential.amax() == 0.0
}

/// Spectral resolution of the bundle. Flat uniform 2-D grids with V = 0 take
/// an exact tensor-product route; everything else is a dense symmetric
/// eigensolve, guarded by `vertex_cap`.
pub fn decompose(bundle: &OperatorBundle, opts: &DecomposeOptions) -> Result<SpectralDecomposition> {
    let n = bundle.n();
    let tensor = !opts.force_dense && n >= TENSOR_THRESHOLD && tensor_eligible(bundle);
    let (eigenvalues, backend) = if tensor {
        let meta = bundle.graph.grid_meta.as_ref().unwrap();
        let h = meta.spacing;
        let mk_axis = |len: usize| -> Result<Axis1D> {
            let g = crate::graph::build_grid(&[len], h, meta.dirichlet)?;
            let b = laplacian_bundle(&g)?;
            Ok(dense_axis(&b))
        };
        let rows = mk_axis(meta.dims[0])?;
        let cols = mk_axis(meta.dims[1])?;
        let mut modes: Vec<(f64, u32, u32)> = Vec::with_capacity(n);
        for (i, li) in rows.eigenvalues.iter().enumerate() {
            for (j, lj) in cols.eigenvalues.iter().enumerate() {
                modes.push((li + lj, i as u32, j as u32));
            }
        }
        modes.sort_by(|a, b| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        });
        let eigenvalues: Vec<f64> = modes.iter().map(|m| m.0).collect();
        let perm: Vec<(u32, u32)> = modes.iter().map(|m| (m.1, m.2)).collect();
        (eigenvalues, Backend::Tensor2 { rows, cols, perm })
    } else {
        if n > opts.vertex_cap {
            return Err(Error::ResourceLimit { n, cap: opts.vertex_cap });
        }
        let axis = dense_axis(bundle);
        (axis.eigenvalues.clone(), Backend::Dense { phi: axis.phi, measure: axis.measure })
    };
    let lambda_max = eigenvalues.last().copied().unwrap_or(0.0).max(0.0);
    let tol = opts.kernel_tolerance.unwrap_or(1e-10 * lambda_max);
    let kernel_dim = eigenvalues.iter().take_while(|&&l| l <= tol).count();
    Ok(SpectralDecomposition { eigenvalues, kernel_dim, kernel_tolerance: tol, backend })
}

/// Scalar multiplier function evaluated on the spectrum of L.
#[derive(Debug, Clone, PartialEq)]
pub enum MultiplierFunction {
    /// m ≡ 1, the identity of the calculus
    One,
    /// e^{-z}
    Exp,
    /// z e^{-z}
    ZExp,
    /// e^{-√z}
    PoissonExp,
    /// (1 + z)^{-δ'}
    ResolventPower { delta_prime: f64 },
    /// compact bump supported exactly in [1/2, 2]
    Bump(BumpShape),
    /// λ^{-1/2}, undefined at 0 (kernel collision unless projected)
    InverseSqrt,
    /// tabulated samples with linear interpolation, zero outside the table
    Tabulated(TabulatedFn),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BumpShape {
    /// C^∞ bump exp(-s²/(1-s²)) in the rescaled variable s, exactly zero
    /// outside [1/2, 2]
    Smooth,
    /// tent peaked at 5/4
    Triangle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedFn {
    pub x0: f64,
    pub dx: f64,
    pub values: Vec<f64>,
}

impl TabulatedFn {
    pub fn from_fn(x0: f64, x1: f64, samples: usize, f: impl Fn(f64) -> f64) -> TabulatedFn {
        assert!(samples >= 2 && x1 > x0);
        let dx = (x1 - x0) / (samples - 1) as f64;
        let values = (0..samples).map(|i| f(x0 + i as f64 * dx)).collect();
        TabulatedFn { x0, dx, values }
    }

    pub fn x_end(&self) -> f64 {
        self.x0 + self.dx * (self.values.len() - 1) as f64
    }

    pub fn eval(&self, x: f64) -> f64 {
        let s = (x - self.x0) / self.dx;
        if s < 0.0 || s > (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = (s.floor() as usize).min(self.values.len() - 2);
        let t = s - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    /// ∫ |m|² over the tabulation interval (trapezoid).
    pub fn l2_squared(&self) -> f64 {
        let v = &self.values;
        let mut s = 0.0;
        for i in 0..v.len() - 1 {
            s += 0.5 * (v[i] * v[i] + v[i + 1] * v[i + 1]) * self.dx;
        }
        s
    }
}

/// Tail behaviour of a multiplier as z -> ∞, used by the time-grid policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayClass {
    Exponential,
    SqrtExponential,
    PowerLaw(f64),
    CompactSupport { z_max: f64 },
    NoDecay,
}

impl MultiplierFunction {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            MultiplierFunction::One => 1.0,
            MultiplierFunction::Exp => (-z).exp(),
            MultiplierFunction::ZExp => z * (-z).exp(),
            MultiplierFunction::PoissonExp => (-z.max(0.0).sqrt()).exp(),
            MultiplierFunction::ResolventPower { delta_prime } => {
                (1.0 + z).powf(-delta_prime)
            }
            MultiplierFunction::Bump(shape) => {
                let s = (z - 1.25) / 0.75;
                if s.abs() >= 1.0 {
                    0.0
                } else {
                    match shape {
                        BumpShape::Smooth => (-s * s / (1.0 - s * s)).exp(),
                        BumpShape::Triangle => 1.0 - s.abs(),
                    }
                }
            }
            MultiplierFunction::InverseSqrt => {
                if z > 0.0 {
                    1.0 / z.sqrt()
                } else {
                    f64::INFINITY
                }
            }
            MultiplierFunction::Tabulated(t) => t.eval(z),
        }
    }

    pub fn decay_class(&self) -> DecayClass {
        match self {
            MultiplierFunction::One | MultiplierFunction::InverseSqrt => DecayClass::NoDecay,
            MultiplierFunction::Exp | MultiplierFunction::ZExp => DecayClass::Exponential,
            MultiplierFunction::PoissonExp => DecayClass::SqrtExponential,
            MultiplierFunction::ResolventPower { delta_prime } => {
                DecayClass::PowerLaw(2.0 * delta_prime)
            }
            MultiplierFunction::Bump(_) => DecayClass::CompactSupport { z_max: 2.0 },
            MultiplierFunction::Tabulated(t) => DecayClass::CompactSupport { z_max: t.x_end() },
        }
    }
}

/// m(L) f = Σ_j m(λ_j) <f, φ_j>_µ φ_j.
///
/// If m is not finite on some eigenvalue the call fails with a kernel
/// collision unless `project_kernel` drops the offending modes (only modes
/// within the kernel tolerance may be dropped; a non-kernel collision is a
/// numeric failure).
pub fn apply_function(
    dec: &SpectralDecomposition,
    m: &MultiplierFunction,
    f: &DVector<f64>,
    project_kernel: bool,
) -> Result<DVector<f64>> {
    let mut w = Vec::with_capacity(dec.n());
    for (k, &l) in dec.eigenvalues().iter().enumerate() {
        let v = m.eval(l.max(0.0));
        if !v.is_finite() {
            if k < dec.kernel_dim() && project_kernel {
                w.push(0.0);
                continue;
            }
            if k < dec.kernel_dim() {
                return Err(Error::KernelCollision(format!(
                    "multiplier undefined on the kernel (λ_{k} = {l:.3e})"
                )));
            }
            return Err(Error::NumericFailure(format!(
                "multiplier not finite at λ_{k} = {l:.3e}"
            )));
        }
        w.push(v);
    }
    Ok(dec.apply_weights(&w, f))
}

/// Heat semigroup e^{-tL} f.
pub fn heat(dec: &SpectralDecomposition, t: f64, f: &DVector<f64>) -> Result<DVector<f64>> {
    if t < 0.0 {
        return Err(Error::invalid("heat semigroup needs t >= 0"));
    }
    Ok(dec.apply_multiplier(|l| (-t * l.max(0.0)).exp(), f))
}

/// Poisson semigroup e^{-t√L} f.
pub fn poisson(dec: &SpectralDecomposition, t: f64, f: &DVector<f64>) -> Result<DVector<f64>> {
    if t < 0.0 {
        return Err(Error::invalid("poisson semigroup needs t >= 0"));
    }
    Ok(dec.apply_multiplier(|l| (-t * l.max(0.0).sqrt()).exp(), f))
}

/// L^{-1/2} f on the kernel-orthogonal complement.
pub fn inverse_sqrt(
    dec: &SpectralDecomposition,
    f: &DVector<f64>,
    project_kernel: bool,
) -> Result<DVector<f64>> {
    if dec.kernel_dim() > 0 && !project_kernel {
        return Err(Error::KernelCollision(format!(
            "L has a {}-dimensional kernel; λ^{{-1/2}} is undefined there",
            dec.kernel_dim()
        )));
    }
    let w: Vec<f64> = dec
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(k, &l)| if k < dec.kernel_dim() { 0.0 } else { 1.0 / l.max(0.0).sqrt() })
        .collect();
    Ok(dec.apply_weights(&w, f))
}

/// L^{1/2} f.
pub fn sqrt_l(dec: &SpectralDecomposition, f: &DVector<f64>) -> DVector<f64> {
    dec.apply_multiplier(|l| l.max(0.0).sqrt(), f)
}

/// (I + tL)^{-δ'} f with the standing hypothesis δ' > 1/2.
pub fn resolvent_power(
    dec: &SpectralDecomposition,
    t: f64,
    delta_prime: f64,
    f: &DVector<f64>,
) -> Result<DVector<f64>> {
    if delta_prime <= 0.5 {
        return Err(Error::invalid(format!(
            "resolvent power needs δ' > 1/2 (got {delta_prime}); use resolvent_power_unchecked to explore"
        )));
    }
    resolvent_power_unchecked(dec, t, delta_prime, f)
}

/// Exploration variant without the δ' > 1/2 gate. Results computed through it
/// never feed R-bound equivalence checks.
pub fn resolvent_power_unchecked(
    dec: &SpectralDecomposition,
    t: f64,
    delta_prime: f64,
    f: &DVector<f64>,
) -> Result<DVector<f64>> {
    if t < 0.0 {
        return Err(Error::invalid("resolvent power needs t >= 0"));
    }
    Ok(dec.apply_multiplier(|l| (1.0 + t * l.max(0.0)).powf(-delta_prime), f))
}
