//! Empirical reverse Hölder class B_q check for potentials.
//!
//! The class is defined over all balls, which is uncheckable; we sample balls
//! centered on a fixed decimated lattice of vertices (at most 64 centers) at
//! the radii provided by the caller, with measure-weighted averages. The 0/0
//! convention is 1, so V ≡ 0 trivially satisfies the class.

use crate::error::{Error, Result};
use crate::graph::WeightedGraph;

#[derive(Debug, Clone)]
pub struct BallSample {
    pub center_vertex: usize,
    pub radius: f64,
    pub ratio: f64,
    pub vertices_in_ball: usize,
}

#[derive(Debug, Clone)]
pub struct ReverseHolderReport {
    pub q: f64,
    /// max over sampled balls of (avg_B V^q)^{1/q} / (avg_B V); infinite when
    /// some ball averages V to zero while V^q does not
    pub constant: f64,
    pub worst_ball: Option<BallSample>,
    pub balls_sampled: usize,
}

const MAX_CENTERS: usize = 64;

/// Estimates the B_q constant of `potential` over sampled balls.
pub fn check_reverse_holder(
    graph: &WeightedGraph,
    potential: &[f64],
    q: f64,
    ball_radii: &[f64],
) -> Result<ReverseHolderReport> {
    if q <= 1.0 {
        return Err(Error::invalid("reverse Hölder needs q > 1"));
    }
    if potential.len() != graph.n_vertices {
        return Err(Error::invalid("potential length must match vertex count"));
    }
    if potential.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("the potential must satisfy V >= 0"));
    }
    if ball_radii.is_empty() || ball_radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::invalid("ball radii must be positive"));
    }
    let positions = graph
        .positions
        .as_ref()
        .ok_or_else(|| Error::invalid("reverse Hölder check needs vertex positions"))?;

    let stride = graph.n_vertices.div_ceil(MAX_CENTERS).max(1);
    let centers: Vec<usize> = (0..graph.n_vertices).step_by(stride).collect();

    let mut constant: f64 = 0.0;
    let mut worst: Option<BallSample> = None;
    let mut sampled = 0usize;
    for &c in &centers {
        let pc = &positions[c];
        for &r in ball_radii {
            let mut mass = 0.0;
            let mut avg = 0.0;
            let mut avg_q = 0.0;
            let mut count = 0usize;
            for x in 0..graph.n_vertices {
                let d2: f64 = positions[x]
                    .iter()
                    .zip(pc)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d2 <= r * r {
                    mass += graph.measure[x];
                    avg += graph.measure[x] * potential[x];
                    avg_q += graph.measure[x] * potential[x].powf(q);
                    count += 1;
                }
            }
            if count == 0 {
                continue;
            }
            sampled += 1;
            avg /= mass;
            avg_q = (avg_q / mass).powf(1.0 / q);
            let ratio = if avg == 0.0 {
                if avg_q == 0.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            } else {
                avg_q / avg
            };
            if ratio > constant || worst.is_none() {
                constant = ratio;
                worst = Some(BallSample {
                    center_vertex: c,
                    radius: r,
                    ratio,
                    vertices_in_ball: count,
                });
            }
        }
    }
    Ok(ReverseHolderReport { q, constant, worst_ball: worst, balls_sampled: sampled })
}
