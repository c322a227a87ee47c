//! Shared probe battery for the operator-norm estimators.
//!
//! One deterministic stream per (bundle, seed): the constant, low and mid
//! eigenvectors, coordinate indicators on a fixed vertex lattice, smooth
//! positional bumps at several widths, seeded Gaussians, and greedy
//! sign-flip/perturbation ascent steps interleaved so that a larger budget
//! always extends the same sequence (running maxima are monotone in budget).
//! The battery is shared across the functional, Riesz and R-bound estimators
//! so their constants are comparable.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::operator::OperatorBundle;
use crate::spectral::SpectralDecomposition;

/// splitmix64: derive independent per-index seeds from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Hex digest of a vertex function (witness fingerprinting in reports).
pub fn hash_vector(v: &DVector<f64>) -> String {
    let mut h = Sha256::new();
    for x in v.iter() {
        h.update(x.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

pub struct ProbeStream {
    n: usize,
    measure: DVector<f64>,
    positions: Option<Vec<Vec<f64>>>,
    length_scale: f64,
    eigenvectors: Vec<(usize, DVector<f64>)>,
    lattice: Vec<usize>,
    rng: ChaCha8Rng,
    index: usize,
}

impl ProbeStream {
    pub fn new(bundle: &OperatorBundle, dec: Option<&SpectralDecomposition>, seed: u64) -> Self {
        let n = bundle.n();
        let positions = bundle
            .active_positions()
            .map(|ps| ps.into_iter().map(|p| p.to_vec()).collect::<Vec<_>>());
        // typical edge length in position space, for bump widths
        let length_scale = positions
            .as_ref()
            .map(|pos| {
                let mut acc = 0.0;
                let mut cnt = 0usize;
                for e in bundle.active_edges().iter().take(64) {
                    let d2: f64 = pos[e.u]
                        .iter()
                        .zip(&pos[e.v])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    acc += d2.sqrt();
                    cnt += 1;
                }
                if cnt > 0 {
                    acc / cnt as f64
                } else {
                    1.0
                }
            })
            .unwrap_or(1.0);
        let eigenvectors = dec
            .map(|d| {
                let mut js: Vec<usize> = [1, 2, 3, n / 2, n.saturating_sub(1)]
                    .into_iter()
                    .filter(|&j| j < d.n())
                    .collect();
                js.dedup();
                js.into_iter().map(|j| (j, d.eigenvector(j))).collect()
            })
            .unwrap_or_default();
        let lattice: Vec<usize> = (0..8).map(|i| i * n / 8).filter(|&v| v < n).collect();
        ProbeStream {
            n,
            measure: bundle.measure().clone(),
            positions,
            length_scale,
            eigenvectors,
            lattice,
            rng: ChaCha8Rng::seed_from_u64(seed),
            index: 0,
        }
    }

    fn normalize(&self, mut f: DVector<f64>) -> DVector<f64> {
        let n2: f64 = f
            .iter()
            .zip(self.measure.iter())
            .map(|(v, m)| m * v * v)
            .sum();
        if n2 > 0.0 {
            f /= n2.sqrt();
        }
        f
    }

    fn gaussian(&mut self) -> DVector<f64> {
        DVector::from_iterator(
            self.n,
            (0..self.n).map(|_| self.rng.sample::<f64, _>(rand_distr::StandardNormal)),
        )
    }

    fn bump(&self, center: usize, width: f64) -> Option<DVector<f64>> {
        let pos = self.positions.as_ref()?;
        let c = &pos[center];
        Some(DVector::from_iterator(
            self.n,
            (0..self.n).map(|x| {
                let d2: f64 = pos[x].iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * width * width)).exp()
            }),
        ))
    }

    /// Next probe. `best` feeds the ascent steps: (current best probe, its
    /// ratio); the ratio is unused beyond determinism bookkeeping.
    pub fn next(&mut self, best: Option<(&DVector<f64>, f64)>) -> (String, DVector<f64>) {
        let m = self.index;
        self.index += 1;
        if m == 0 {
            return ("constant".into(), self.normalize(DVector::from_element(self.n, 1.0)));
        }
        let ne = self.eigenvectors.len();
        if m - 1 < ne {
            let (j, v) = &self.eigenvectors[m - 1];
            return (format!("eigenvector[{j}]"), v.clone());
        }
        let b = m - 1 - ne;
        match b % 4 {
            0 => {
                let v = self.lattice[(b / 4) % self.lattice.len()];
                let mut f = DVector::zeros(self.n);
                f[v] = 1.0;
                (format!("indicator[{v}]"), self.normalize(f))
            }
            1 => {
                let center = self.lattice[(b / 4 * 3) % self.lattice.len()];
                let widths = [1.0, 2.0, 4.0];
                let w = widths[(b / 4) % widths.len()] * self.length_scale;
                match self.bump(center, w) {
                    Some(f) => (format!("bump[{center},{w:.3}]"), self.normalize(f)),
                    None => ("gaussian".into(), self.normalize(self.gaussian())),
                }
            }
            2 => ("gaussian".into(), self.normalize(self.gaussian())),
            _ => match best {
                Some((f, _)) => {
                    let mut g = f.clone();
                    let i = self.rng.random_range(0..self.n);
                    if self.rng.random_bool(0.5) {
                        g[i] = -g[i];
                    } else {
                        let factor = 1.0 + 0.5 * (self.rng.random::<f64>() - 0.5);
                        g[i] *= factor;
                    }
                    ("ascent".into(), self.normalize(g))
                }
                None => ("gaussian".into(), self.normalize(self.gaussian())),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_grid;
    use crate::operator::laplacian_bundle;
    use crate::spectral::{decompose, DecomposeOptions};

    #[test]
    fn stream_is_deterministic_and_prefix_stable() {
        let g = build_grid(&[4, 4], 1.0, false).unwrap();
        let b = laplacian_bundle(&g).unwrap();
        let d = decompose(&b, &DecomposeOptions::default()).unwrap();
        let collect = |count: usize| -> Vec<(String, DVector<f64>)> {
            let mut s = ProbeStream::new(&b, Some(&d), 42);
            let mut out = Vec::new();
            let mut best: Option<(DVector<f64>, f64)> = None;
            for i in 0..count {
                let (l, f) = s.next(best.as_ref().map(|(f, r)| (f, *r)));
                // pretend ratios improve deterministically
                best = Some((f.clone(), i as f64));
                out.push((l, f));
            }
            out
        };
        let a = collect(20);
        let c = collect(30);
        for (x, y) in a.iter().zip(&c) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1, y.1);
        }
    }

    #[test]
    fn seeds_derive_distinctly() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }
}
