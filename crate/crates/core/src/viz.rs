//! Exact t-SNE for desk-scale data plus an uncertainty-aware scatter
//! renderer: map positions come from embeddings, circle size and transparency
//! come from predicted uncertainty.
//!
//! Everything is O(n²) and single-threaded with a fixed summation order, so a
//! seed pins the output down to the byte. All map math runs in f64.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::matrix::Matrix;
use crate::seeding::derive_seed;

/// Floor for squared distances between distinct indices: coincident points
/// would otherwise break the bandwidth search (every bandwidth gives the
/// same distribution), so they are treated as 1e-6 apart.
const DISTANCE_FLOOR: f64 = 1e-12;

/// Floor for probabilities inside KL terms; keeps logs finite when a map
/// pair drifts far apart and its Student-t weight underflows.
const PROB_FLOOR: f64 = 1e-12;

/// Map-layout hyperparameters. The published visualization names no
/// settings, so these defaults are toolkit conventions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    /// Target perplexity of each conditional row; must satisfy
    /// `1 < perplexity <= n - 1`.
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Momentum before and after `momentum_switch_iter`.
    pub early_momentum: f64,
    pub late_momentum: f64,
    pub momentum_switch_iter: usize,
    /// Affinities are multiplied by this factor for the first
    /// `exaggeration_iters` iterations.
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_momentum: 0.5,
            late_momentum: 0.8,
            momentum_switch_iter: 250,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        if n_samples < 3 {
            return Err(Error::invalid("map layout needs at least 3 points"));
        }
        if !(self.perplexity.is_finite() && self.perplexity > 1.0) {
            return Err(Error::invalid("perplexity must exceed 1"));
        }
        if self.perplexity > (n_samples - 1) as f64 {
            return Err(Error::invalid(format!(
                "perplexity {} unreachable with {} points (max {})",
                self.perplexity,
                n_samples,
                n_samples - 1
            )));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be finite and positive"));
        }
        for m in [self.early_momentum, self.late_momentum] {
            if !(m.is_finite() && (0.0..1.0).contains(&m)) {
                return Err(Error::invalid("momentum must lie in [0, 1)"));
            }
        }
        if !(self.exaggeration.is_finite() && self.exaggeration >= 1.0) {
            return Err(Error::invalid("exaggeration factor must be at least 1"));
        }
        Ok(())
    }
}

fn squared_distances(embeddings: &Matrix<f32>) -> Result<Matrix<f64>> {
    let n = embeddings.rows();
    if embeddings.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("embeddings contain non-finite values"));
    }
    let mut d = Matrix::filled(n, n, 0.0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0f64;
            for (a, b) in embeddings.row(i).iter().zip(embeddings.row(j)) {
                let diff = *a as f64 - *b as f64;
                acc += diff * diff;
            }
            let acc = acc.max(DISTANCE_FLOOR);
            d.set(i, j, acc);
            d.set(j, i, acc);
        }
    }
    Ok(d)
}

/// Row-stochastic conditional affinities: entry (i, j) is the probability of
/// picking `j` as a neighbor of `i` under a Gaussian kernel whose per-row
/// bandwidth is bisected (at most 64 steps) until the row's perplexity is
/// within 1e-4 of the target. Diagonal entries are zero.
pub fn tsne_conditionals(embeddings: &Matrix<f32>, perplexity: f64) -> Result<Matrix<f64>> {
    let n = embeddings.rows();
    let probe = TsneConfig {
        perplexity,
        ..TsneConfig::default()
    };
    probe.validate(n.max(3))?;
    if n < 3 {
        return Err(Error::invalid("affinities need at least 3 points"));
    }
    let d = squared_distances(embeddings)?;
    let target_entropy = perplexity.ln();
    let mut cond = Matrix::filled(n, n, 0.0f64);

    for i in 0..n {
        let mut beta = 1.0f64;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        let mut row = vec![0.0f64; n];
        for _ in 0..64 {
            let mut sum = 0.0f64;
            let mut weighted = 0.0f64;
            for j in 0..n {
                if j == i {
                    row[j] = 0.0;
                    continue;
                }
                let w = (-beta * d.get(i, j)).exp();
                row[j] = w;
                sum += w;
                weighted += w * d.get(i, j);
            }
            // Shannon entropy of the normalized row, in nats.
            let entropy = if sum > 0.0 {
                sum.ln() + beta * weighted / sum
            } else {
                0.0
            };
            if (entropy.exp() - perplexity).abs() < 1e-4 {
                break;
            }
            if entropy > target_entropy {
                // Too flat: raise beta (narrow the kernel).
                beta_min = beta;
                beta = if beta_max.is_finite() {
                    0.5 * (beta + beta_max)
                } else {
                    beta * 2.0
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_finite() {
                    0.5 * (beta + beta_min)
                } else {
                    beta * 0.5
                };
            }
        }
        let sum: f64 = row.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(Error::Degenerate {
                detail: format!("bandwidth search failed on row {i}"),
            });
        }
        for j in 0..n {
            cond.set(i, j, row[j] / sum);
        }
    }
    Ok(cond)
}

/// Symmetrized affinities `P`: nonnegative, symmetric, entries sum to 1.
pub fn tsne_affinities(embeddings: &Matrix<f32>, perplexity: f64) -> Result<Matrix<f64>> {
    let cond = tsne_conditionals(embeddings, perplexity)?;
    let n = cond.rows();
    let mut p = Matrix::filled(n, n, 0.0f64);
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            p.set(i, j, (cond.get(i, j) + cond.get(j, i)) * scale);
        }
    }
    Ok(p)
}

/// Student-t pair weights for the current map and their total mass.
fn map_weights(coords: &Matrix<f64>) -> (Matrix<f64>, f64) {
    let n = coords.rows();
    let mut w = Matrix::filled(n, n, 0.0f64);
    let mut z = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = coords.get(i, 0) - coords.get(j, 0);
            let dy = coords.get(i, 1) - coords.get(j, 1);
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            w.set(i, j, v);
            w.set(j, i, v);
            z += 2.0 * v;
        }
    }
    (w, z)
}

/// KL(P || Q) of the map against affinities `p`.
pub fn tsne_kl(p: &Matrix<f64>, coords: &Matrix<f64>) -> Result<f64> {
    let n = p.rows();
    if p.cols() != n || coords.rows() != n || coords.cols() != 2 {
        return Err(Error::invalid(
            "affinity matrix must be n x n and coordinates n x 2",
        ));
    }
    let (w, z) = map_weights(coords);
    let mut kl = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pij = p.get(i, j);
            if pij > 0.0 {
                let qij = (w.get(i, j) / z).max(PROB_FLOOR);
                kl += pij * (pij / qij).ln();
            }
        }
    }
    Ok(kl)
}

/// A finished map layout with the evidence that optimization made progress.
#[derive(Debug, Clone)]
pub struct TsneOutput {
    /// One (x, y) row per input point.
    pub coords: Matrix<f64>,
    /// KL at the random initialization, against the plain affinities.
    pub initial_kl: f64,
    /// KL at the last iteration, against the plain affinities.
    pub final_kl: f64,
}

/// Lays out `embeddings` in 2-D by gradient descent on KL(P‖Q) with a
/// Student-t map kernel, early exaggeration, and a two-phase momentum.
///
/// Initial coordinates are N(0, 1e-2²) draws from the seed's `"map-init"`
/// stream; the map is re-centered each iteration. The same inputs always
/// produce bitwise-identical coordinates. Non-finite coordinates abort with
/// the iteration index instead of being repaired.
pub fn tsne_embed(embeddings: &Matrix<f32>, config: &TsneConfig) -> Result<TsneOutput> {
    let n = embeddings.rows();
    config.validate(n)?;
    let p_plain = tsne_affinities(embeddings, config.perplexity)?;

    let mut coords = Matrix::filled(n, 2, 0.0f64);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "map-init", 0));
    let normal = Normal::new(0.0f64, 1e-2).expect("fixed parameters");
    for v in coords.as_mut_slice() {
        *v = normal.sample(&mut rng);
    }
    let initial_kl = tsne_kl(&p_plain, &coords)?;

    let mut velocity = Matrix::filled(n, 2, 0.0f64);
    let mut grad = Matrix::filled(n, 2, 0.0f64);
    for iteration in 0..config.iterations {
        let exaggerate = iteration < config.exaggeration_iters;
        let momentum = if iteration < config.momentum_switch_iter {
            config.early_momentum
        } else {
            config.late_momentum
        };
        let (w, z) = map_weights(&coords);

        for v in grad.as_mut_slice() {
            *v = 0.0;
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut pij = p_plain.get(i, j);
                if exaggerate {
                    pij *= config.exaggeration;
                }
                let wij = w.get(i, j);
                let qij = wij / z;
                let f = 4.0 * (pij - qij) * wij;
                grad.set(i, 0, grad.get(i, 0) + f * (coords.get(i, 0) - coords.get(j, 0)));
                grad.set(i, 1, grad.get(i, 1) + f * (coords.get(i, 1) - coords.get(j, 1)));
            }
        }

        let mut mean = [0.0f64; 2];
        for i in 0..n {
            for c in 0..2 {
                let v = momentum * velocity.get(i, c) - config.learning_rate * grad.get(i, c);
                velocity.set(i, c, v);
                let y = coords.get(i, c) + v;
                coords.set(i, c, y);
                mean[c] += y;
            }
        }
        for c in 0..2 {
            mean[c] /= n as f64;
        }
        for i in 0..n {
            for c in 0..2 {
                coords.set(i, c, coords.get(i, c) - mean[c]);
            }
        }
        if coords.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCoordinate { iteration });
        }
    }

    let final_kl = tsne_kl(&p_plain, &coords)?;
    Ok(TsneOutput {
        coords,
        initial_kl,
        final_kl,
    })
}

/// Fixed class palette; labels beyond its length wrap around.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Circle styling: radius grows and opacity falls with uncertainty, both
/// driven by the min-max normalized uncertainty of the plotted set (predicted
/// uncertainties are scale-free, so absolute values carry no meaning).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterStyle {
    pub base_radius: f64,
    /// Extra radius at normalized uncertainty 1.
    pub radius_scale: f64,
    /// Opacity at normalized uncertainty 1 (the floor of the clamp).
    pub min_opacity: f64,
    /// Opacity at normalized uncertainty 0.
    pub max_opacity: f64,
}

impl Default for ScatterStyle {
    fn default() -> Self {
        ScatterStyle {
            base_radius: 3.0,
            radius_scale: 9.0,
            min_opacity: 0.15,
            max_opacity: 1.0,
        }
    }
}

impl ScatterStyle {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_radius.is_finite() && self.base_radius > 0.0) {
            return Err(Error::invalid("base radius must be positive"));
        }
        if !(self.radius_scale.is_finite() && self.radius_scale >= 0.0) {
            return Err(Error::invalid("radius scale must be nonnegative"));
        }
        if !(self.min_opacity.is_finite()
            && self.max_opacity.is_finite()
            && 0.0 < self.min_opacity
            && self.min_opacity < self.max_opacity
            && self.max_opacity <= 1.0)
        {
            return Err(Error::invalid(
                "opacities must satisfy 0 < min < max <= 1",
            ));
        }
        Ok(())
    }

    fn radius(&self, normalized: f64) -> f64 {
        self.base_radius + self.radius_scale * normalized
    }

    fn opacity(&self, normalized: f64) -> f64 {
        let o = self.max_opacity - (self.max_opacity - self.min_opacity) * normalized;
        o.clamp(self.min_opacity, self.max_opacity)
    }
}

const CANVAS: f64 = 800.0;
const MARGIN: f64 = 40.0;

fn check_plot_inputs(
    coords: &Matrix<f64>,
    labels: &[u32],
    uncertainties: &[f32],
) -> Result<()> {
    let n = coords.rows();
    if coords.cols() != 2 {
        return Err(Error::invalid("plot coordinates must be n x 2"));
    }
    if n == 0 {
        return Err(Error::invalid("nothing to plot"));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            what: "plot labels",
            expected: n,
            got: labels.len(),
        });
    }
    if uncertainties.len() != n {
        return Err(Error::ShapeMismatch {
            what: "plot uncertainties",
            expected: n,
            got: uncertainties.len(),
        });
    }
    if coords.as_slice().iter().any(|v| !v.is_finite())
        || uncertainties.iter().any(|u| !u.is_finite())
    {
        return Err(Error::invalid("plot inputs must be finite"));
    }
    Ok(())
}

/// Min-max normalization; a constant vector maps to all zeros, so every
/// point gets the base radius and full opacity.
fn normalize(uncertainties: &[f32]) -> Vec<f64> {
    let lo = uncertainties.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = uncertainties.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if hi > lo {
        uncertainties
            .iter()
            .map(|&u| (u as f64 - lo) / (hi - lo))
            .collect()
    } else {
        vec![0.0; uncertainties.len()]
    }
}

/// Renders one circle per point into a self-contained SVG file.
///
/// Radius is `base + scale * normalized uncertainty`; opacity falls linearly
/// from `max_opacity` to `min_opacity` over the same range; color comes from
/// the fixed palette by label. Points are emitted in a canonical sort over
/// (label, x, y, uncertainty), so permuting the inputs in lockstep produces a
/// byte-identical file.
pub fn render_scatter(
    coords: &Matrix<f64>,
    labels: &[u32],
    uncertainties: &[f32],
    style: &ScatterStyle,
    path: &Path,
) -> Result<()> {
    style.validate()?;
    check_plot_inputs(coords, labels, uncertainties)?;
    let n = coords.rows();
    let normalized = normalize(uncertainties);

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for i in 0..n {
        for c in 0..2 {
            lo[c] = lo[c].min(coords.get(i, c));
            hi[c] = hi[c].max(coords.get(i, c));
        }
    }
    let place = |v: f64, c: usize| -> f64 {
        if hi[c] > lo[c] {
            MARGIN + (v - lo[c]) / (hi[c] - lo[c]) * (CANVAS - 2.0 * MARGIN)
        } else {
            CANVAS / 2.0
        }
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| {
        (
            labels[i],
            coords.get(i, 0).to_bits(),
            coords.get(i, 1).to_bits(),
            uncertainties[i].to_bits(),
        )
    });

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CANVAS}\" height=\"{CANVAS}\" \
         viewBox=\"0 0 {CANVAS} {CANVAS}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    ));
    for &i in &order {
        let cx = place(coords.get(i, 0), 0);
        let cy = place(coords.get(i, 1), 1);
        let r = style.radius(normalized[i]);
        let opacity = style.opacity(normalized[i]);
        let color = PALETTE[labels[i] as usize % PALETTE.len()];
        svg.push_str(&format!(
            "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"{r}\" fill=\"{color}\" fill-opacity=\"{opacity}\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    atomic_write(path, svg.as_bytes())
}

/// Plain-text companion to the plot: `x y label uncertainty`, one point per
/// line in input order.
pub fn write_coordinate_table(
    coords: &Matrix<f64>,
    labels: &[u32],
    uncertainties: &[f32],
    path: &Path,
) -> Result<()> {
    check_plot_inputs(coords, labels, uncertainties)?;
    let mut out = String::from("# x y label uncertainty\n");
    for i in 0..coords.rows() {
        out.push_str(&format!(
            "{} {} {} {}\n",
            coords.get(i, 0),
            coords.get(i, 1),
            labels[i],
            uncertainties[i]
        ));
    }
    atomic_write(path, out.as_bytes())
}
