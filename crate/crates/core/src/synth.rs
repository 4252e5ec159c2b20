//! Synthetic embedding generator with a closed-form per-sample Bayes risk.
//!
//! The generator draws samples from an equal-prior mixture of isotropic
//! Gaussians with unit-vector class means, optionally flips observed labels
//! with a position-dependent probability, and emits a standard embedding
//! cache whose task losses come from the Bayes-optimal linear classifier.
//! Because every quantity has a closed form, the true aleatoric uncertainty
//! (the error probability of the optimal classifier at each point) is known
//! exactly and can serve as ground truth for evaluating trained heads.
//!
//! All randomness is counter-based: sample `i` draws from a stream seeded by
//! `derive_seed(seed, "sample", i)`, and the view for `(epoch, i)` from
//! `derive_seed(seed, "view", (epoch << 32) | i)`. Base points, labels, and
//! Bayes risks are therefore independent of how many augmented views are
//! generated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

use crate::cache::{build_cache, CacheBuildOptions, ClassifierHead};
use crate::error::{Error, Result};
use crate::eval::r_auroc;
use crate::fsio::atomic_write_with;
use crate::matrix::Matrix;
use crate::seeding::derive_seed;

/// Ratio of augmentation jitter to the within-class spread.
pub const VIEW_JITTER_RATIO: f64 = 0.1;

/// Position-dependent label-noise field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseField {
    /// No label noise; ambiguity comes from class overlap alone.
    None,
    /// Flip probability that rises with distance from the nearest decision
    /// boundary: `max_flip * (1 - exp(-d^2 / (2 width^2)))`. Zero on the
    /// boundary itself, saturating at `max_flip` far away — ambiguity in the
    /// interior of each class region, on top of the overlap at the boundary.
    BoundaryRamp { max_flip: f64, width: f64 },
}

impl NoiseField {
    fn flip_probability(&self, boundary_distance: f64) -> f64 {
        match *self {
            NoiseField::None => 0.0,
            NoiseField::BoundaryRamp { max_flip, width } => {
                let z = boundary_distance / width;
                max_flip * (1.0 - (-0.5 * z * z).exp())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            NoiseField::None => Ok(()),
            NoiseField::BoundaryRamp { max_flip, width } => {
                if !(0.0..=0.5).contains(&max_flip) || !max_flip.is_finite() {
                    return Err(Error::invalid("max_flip must lie in [0, 0.5]"));
                }
                if !(width > 0.0) || !width.is_finite() {
                    return Err(Error::invalid("noise field width must be positive"));
                }
                Ok(())
            }
        }
    }
}

/// Mixture-of-Gaussians oracle over embedding space.
///
/// Class means are unit vectors: `+e1`/`-e1` for two classes, the first
/// `n_classes` standard basis vectors otherwise.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    n_classes: usize,
    embed_dim: usize,
    means: Vec<Vec<f64>>,
    sigma: f64,
    noise: NoiseField,
    seed: u64,
}

impl SyntheticOracle {
    pub fn new(
        n_classes: usize,
        embed_dim: usize,
        sigma: f64,
        noise: NoiseField,
        seed: u64,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::invalid("oracle needs at least 2 classes"));
        }
        if embed_dim == 0 {
            return Err(Error::invalid("embed_dim must be positive"));
        }
        if n_classes > 2 && embed_dim < n_classes {
            return Err(Error::invalid(
                "basis-vector means need embed_dim >= n_classes beyond the 2-class case",
            ));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("sigma must be positive"));
        }
        noise.validate()?;
        let mut means = vec![vec![0.0; embed_dim]; n_classes];
        if n_classes == 2 {
            means[0][0] = -1.0;
            means[1][0] = 1.0;
        } else {
            for (k, mean) in means.iter_mut().enumerate() {
                mean[k] = 1.0;
            }
        }
        Ok(SyntheticOracle {
            n_classes,
            embed_dim,
            means,
            sigma,
            noise,
            seed,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Posterior class probabilities of the generating mixture at `point`
    /// (before label noise). Computed in 64-bit with max-subtraction.
    pub fn posterior(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check_point(point)?;
        let inv = 1.0 / (self.sigma * self.sigma);
        let mut scores: Vec<f64> = self
            .means
            .iter()
            .map(|mu| {
                let dot: f64 = mu.iter().zip(point).map(|(m, x)| m * x).sum();
                let norm2: f64 = mu.iter().map(|m| m * m).sum();
                (dot - 0.5 * norm2) * inv
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        for s in scores.iter_mut() {
            *s /= total;
        }
        Ok(scores)
    }

    /// Euclidean distance from `point` to the nearest decision boundary of
    /// the mixture (equal priors, shared isotropic covariance).
    pub fn boundary_distance(&self, point: &[f64]) -> Result<f64> {
        self.check_point(point)?;
        let d2 = |mu: &[f64]| -> f64 {
            mu.iter()
                .zip(point)
                .map(|(m, x)| (x - m) * (x - m))
                .sum::<f64>()
        };
        let dists2: Vec<f64> = self.means.iter().map(|mu| d2(mu)).collect();
        let nearest = dists2
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, _)| k)
            .unwrap();
        let mut best = f64::INFINITY;
        for (j, mu) in self.means.iter().enumerate() {
            if j == nearest {
                continue;
            }
            let gap: f64 = mu
                .iter()
                .zip(&self.means[nearest])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let margin = (dists2[j] - dists2[nearest]) / (2.0 * gap);
            best = best.min(margin);
        }
        Ok(best)
    }

    /// Flip probability of the label-noise field at `point`.
    pub fn flip_probability(&self, point: &[f64]) -> Result<f64> {
        Ok(self.noise.flip_probability(self.boundary_distance(point)?))
    }

    /// Exact error probability of the optimal classifier on *observed*
    /// labels at `point`: `1 - max_k p_obs(k | point)`, where label noise
    /// redistributes `flip` mass uniformly over the other classes.
    pub fn bayes_risk_at(&self, point: &[f64]) -> Result<f64> {
        let posterior = self.posterior(point)?;
        let flip = self.flip_probability(point)?;
        let c = self.n_classes as f64;
        let best = posterior
            .iter()
            .map(|p| p * (1.0 - flip) + (1.0 - p) * flip / (c - 1.0))
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(1.0 - best)
    }

    /// The Bayes-optimal linear classifier of the mixture in 32-bit weights:
    /// `W_k = mu_k / sigma^2`, `b_k = -|mu_k|^2 / (2 sigma^2)`. Symmetric
    /// label noise does not move the decision boundaries, so this is optimal
    /// for observed labels too.
    pub fn bayes_classifier(&self) -> ClassifierHead {
        let inv = 1.0 / (self.sigma * self.sigma);
        let mut weight = Vec::with_capacity(self.n_classes * self.embed_dim);
        let mut bias = Vec::with_capacity(self.n_classes);
        for mu in &self.means {
            weight.extend(mu.iter().map(|m| (m * inv) as f32));
            let norm2: f64 = mu.iter().map(|m| m * m).sum();
            bias.push((-0.5 * norm2 * inv) as f32);
        }
        ClassifierHead::new(
            Matrix::from_vec(self.n_classes, self.embed_dim, weight).unwrap(),
            bias,
        )
        .unwrap()
    }

    /// Draws the dataset: base points, observed labels, per-epoch jittered
    /// views, and exact Bayes risks of the base points.
    pub fn generate(&self, n_samples: usize, n_epochs: u16) -> Result<SyntheticDataset> {
        if n_samples < self.n_classes {
            return Err(Error::invalid("need at least one sample per class"));
        }
        if n_samples as u64 >= 1 << 32 {
            return Err(Error::invalid("sample count exceeds the view-seed space"));
        }
        if n_epochs == 0 {
            return Err(Error::invalid("need at least one epoch view"));
        }
        let d = self.embed_dim;
        let mut base = Vec::with_capacity(n_samples * d);
        let mut labels = Vec::with_capacity(n_samples);
        let mut risks = Vec::with_capacity(n_samples);
        let mut point = vec![0.0f64; d];
        for i in 0..n_samples {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "sample", i as u64));
            let class = rng.gen_range(0..self.n_classes);
            for (x, mu) in point.iter_mut().zip(&self.means[class]) {
                let z: f64 = rng.sample(StandardNormal);
                *x = mu + self.sigma * z;
            }
            let flip = self.noise.flip_probability(self.boundary_distance(&point)?);
            let observed = if rng.gen::<f64>() < flip {
                // uniform over the other classes
                let mut other = rng.gen_range(0..self.n_classes - 1);
                if other >= class {
                    other += 1;
                }
                other
            } else {
                class
            };
            base.extend(point.iter().copied());
            labels.push(observed as u32);
            risks.push(self.bayes_risk_at(&point)?);
        }
        let jitter = VIEW_JITTER_RATIO * self.sigma;
        let mut epochs = Vec::with_capacity(n_epochs as usize);
        for epoch in 0..n_epochs as u64 {
            let mut view = Vec::with_capacity(n_samples * d);
            for i in 0..n_samples as u64 {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "view", (epoch << 32) | i));
                for &b in &base[(i as usize) * d..(i as usize + 1) * d] {
                    let z: f64 = rng.sample(StandardNormal);
                    view.push((b + jitter * z) as f32);
                }
            }
            epochs.push(Matrix::from_vec(n_samples, d, view)?);
        }
        Ok(SyntheticDataset {
            base,
            labels,
            epochs,
            bayes_risk: risks,
            embed_dim: d,
            n_classes: self.n_classes as u32,
        })
    }

    /// Generates and writes a cache (losses and logits from the Bayes
    /// classifier) plus a text side file of Bayes risks, one per line.
    pub fn generate_to_files(
        &self,
        n_samples: usize,
        n_epochs: u16,
        cache_path: &Path,
        risk_path: &Path,
    ) -> Result<()> {
        let data = self.generate(n_samples, n_epochs)?;
        build_cache(
            cache_path,
            data.epochs,
            data.labels,
            self.n_classes as u32,
            Some(&self.bayes_classifier()),
            CacheBuildOptions {
                store_losses: true,
                store_logits: true,
            },
        )?;
        write_bayes_risk(risk_path, &data.bayes_risk)
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.embed_dim {
            return Err(Error::ShapeMismatch {
                what: "oracle point dimension",
                expected: self.embed_dim,
                got: point.len(),
            });
        }
        Ok(())
    }
}

/// Everything one generation run produces, before serialization.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    /// Unjittered sample positions, row-major `n x d`, 64-bit.
    pub base: Vec<f64>,
    /// Observed (possibly flipped) labels.
    pub labels: Vec<u32>,
    /// Per-epoch jittered views in cache precision.
    pub epochs: Vec<Matrix<f32>>,
    /// Exact Bayes risk of each base point.
    pub bayes_risk: Vec<f64>,
    pub embed_dim: usize,
    pub n_classes: u32,
}

impl SyntheticDataset {
    /// Base points in cache precision (handy for evaluation oracles).
    pub fn base_f32(&self) -> Matrix<f32> {
        let data = self.base.iter().map(|&v| v as f32).collect();
        Matrix::from_vec(self.labels.len(), self.embed_dim, data).unwrap()
    }
}

/// Best achievable R-AUROC on this data: what a head would score if it
/// predicted the true Bayes risk itself.
pub fn oracle_ceiling_r_auroc(
    embeddings: &Matrix<f32>,
    labels: &[u32],
    bayes_risk: &[f64],
) -> Result<f64> {
    r_auroc(embeddings, labels, bayes_risk)
}

/// Writes one risk value per line (shortest-roundtrip decimal).
pub fn write_bayes_risk(path: &Path, risks: &[f64]) -> Result<()> {
    use std::io::Write;
    atomic_write_with(path, |w| {
        for r in risks {
            writeln!(w, "{r}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    })
}

/// Reads a risk side file written by [`write_bayes_risk`].
pub fn read_bayes_risk(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|e| Error::Config {
                line: i + 1,
                detail: format!("bad risk value: {e}"),
            })
        })
        .collect()
}
