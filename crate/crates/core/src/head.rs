//! The uncertainty head: a small feed-forward network mapping a frozen
//! embedding to a single nonnegative uncertainty value.
//!
//! Architecture: `Linear(input_dim -> hidden) -> LeakyReLU -> Linear(hidden ->
//! hidden) -> LeakyReLU -> Linear(hidden -> 1) -> Softplus`. The head is the
//! only trainable object in the toolkit; embeddings enter as plain data with
//! no gradient path back to whatever produced them.
//!
//! Parameters are stored in `f32` (that is what checkpoints hold and what
//! training updates), but the arithmetic is generic over the float type so
//! the exact same code path can be instantiated at `f64` when tests compare
//! analytic gradients against finite differences.

use std::fs;
use std::io::Read;
use std::path::Path;

use num_traits::Float;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::matrix::Matrix;

/// Default hidden width.
pub const DEFAULT_HIDDEN_DIM: usize = 512;
/// Negative slope of the LeakyReLU activations.
pub const DEFAULT_LEAKY_SLOPE: f32 = 0.01;
/// Softplus scale parameter.
pub const DEFAULT_SOFTPLUS_BETA: f32 = 1.0;
/// Above `beta * z > threshold` the softplus is taken to be the identity.
pub const DEFAULT_SOFTPLUS_THRESHOLD: f32 = 20.0;

const CHECKPOINT_MAGIC: &[u8; 4] = b"UHED";
const CHECKPOINT_VERSION: u16 = 1;

/// Numerically stable softplus `(1/beta) * ln(1 + exp(beta * z))`.
///
/// For `beta * z > threshold` the function returns `z` exactly; the identity
/// branch both avoids `exp` overflow and makes large pre-activations pass
/// through untouched. Below the threshold, `ln_1p(exp(beta * z))` is used,
/// which stays accurate for very negative inputs.
pub fn softplus_stable<T: Float>(z: T, beta: T, threshold: T) -> T {
    let scaled = beta * z;
    if scaled > threshold {
        z
    } else {
        scaled.exp().ln_1p() / beta
    }
}

/// Derivative of [`softplus_stable`] with respect to `z`.
///
/// `sigmoid(beta * z)` below the threshold, exactly 1 above it.
pub fn softplus_stable_derivative<T: Float>(z: T, beta: T, threshold: T) -> T {
    let scaled = beta * z;
    if scaled > threshold {
        T::one()
    } else if scaled >= T::zero() {
        T::one() / (T::one() + (-scaled).exp())
    } else {
        // Evaluate via exp(scaled) to avoid overflow of exp(-scaled).
        let e = scaled.exp();
        e / (T::one() + e)
    }
}

/// LeakyReLU: `z` for positive inputs, `slope * z` otherwise.
pub fn leaky_relu<T: Float>(z: T, slope: T) -> T {
    if z > T::zero() {
        z
    } else {
        slope * z
    }
}

/// Derivative of [`leaky_relu`]; at exactly zero the negative slope is used.
pub fn leaky_relu_derivative<T: Float>(z: T, slope: T) -> T {
    if z > T::zero() {
        T::one()
    } else {
        slope
    }
}

/// Activation hyperparameters, stored alongside the weights in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationConfig {
    pub leaky_slope: f32,
    pub softplus_beta: f32,
    pub softplus_threshold: f32,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        ActivationConfig {
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            softplus_beta: DEFAULT_SOFTPLUS_BETA,
            softplus_threshold: DEFAULT_SOFTPLUS_THRESHOLD,
        }
    }
}

/// Feed-forward uncertainty head. `T` is `f32` in production; tests
/// instantiate `f64` shadows via [`UncertaintyHead::to_f64`].
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyHead<T = f32> {
    input_dim: usize,
    hidden_dim: usize,
    /// `input_dim x hidden_dim`
    w1: Matrix<T>,
    b1: Vec<T>,
    /// `hidden_dim x hidden_dim`
    w2: Matrix<T>,
    b2: Vec<T>,
    /// `hidden_dim x 1`
    w3: Vec<T>,
    b3: T,
    activation: ActivationConfig,
}

/// Intermediate activations retained by [`UncertaintyHead::forward`] so a
/// matching backward pass can be run without recomputing the forward.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    input: Matrix<T>,
    z1: Matrix<T>,
    h1: Matrix<T>,
    z2: Matrix<T>,
    h2: Matrix<T>,
    z3: Vec<T>,
    uncertainties: Vec<T>,
}

impl<T: Copy> ForwardTrace<T> {
    /// Predicted uncertainty per input row.
    pub fn uncertainties(&self) -> &[T] {
        &self.uncertainties
    }

    pub fn batch_size(&self) -> usize {
        self.uncertainties.len()
    }
}

/// Parameter gradients, shape-congruent with the head's parameters.
#[derive(Debug, Clone)]
pub struct HeadGradients<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
    pub w3: Vec<T>,
    pub b3: T,
}

impl<T: Float> HeadGradients<T> {
    fn zeros_like(head: &UncertaintyHead<T>) -> Self {
        HeadGradients {
            w1: Matrix::filled(head.input_dim, head.hidden_dim, T::zero()),
            b1: vec![T::zero(); head.hidden_dim],
            w2: Matrix::filled(head.hidden_dim, head.hidden_dim, T::zero()),
            b2: vec![T::zero(); head.hidden_dim],
            w3: vec![T::zero(); head.hidden_dim],
            b3: T::zero(),
        }
    }

    /// True if any gradient entry is NaN or infinite.
    pub fn any_non_finite(&self) -> bool {
        self.w1.as_slice().iter().any(|v| !v.is_finite())
            || self.b1.iter().any(|v| !v.is_finite())
            || self.w2.as_slice().iter().any(|v| !v.is_finite())
            || self.b2.iter().any(|v| !v.is_finite())
            || self.w3.iter().any(|v| !v.is_finite())
            || !self.b3.is_finite()
    }
}

impl UncertaintyHead<f32> {
    /// Fresh head with weights drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// and zero biases. The same `(input_dim, hidden_dim, seed)` triple always
    /// produces bitwise-identical parameters.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::invalid(format!(
                "head dimensions must be positive, got input_dim={input_dim}, hidden_dim={hidden_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |fan_in: usize, n: usize| -> Vec<f32> {
            let bound = 1.0 / (fan_in as f32).sqrt();
            let dist = Uniform::new(-bound, bound);
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        let w1 = draw(input_dim, input_dim * hidden_dim);
        let w2 = draw(hidden_dim, hidden_dim * hidden_dim);
        let w3 = draw(hidden_dim, hidden_dim);
        let head = UncertaintyHead {
            input_dim,
            hidden_dim,
            w1: Matrix::from_vec(input_dim, hidden_dim, w1)?,
            b1: vec![0.0; hidden_dim],
            w2: Matrix::from_vec(hidden_dim, hidden_dim, w2)?,
            b2: vec![0.0; hidden_dim],
            w3,
            b3: 0.0,
            activation: ActivationConfig::default(),
        };
        debug_assert!(!head.all_parameters_zero());
        Ok(head)
    }

    /// Widens every parameter to `f64` for shadow-precision checks.
    pub fn to_f64(&self) -> UncertaintyHead<f64> {
        UncertaintyHead {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w1: Matrix::from_vec(
                self.input_dim,
                self.hidden_dim,
                self.w1.as_slice().iter().map(|&v| v as f64).collect(),
            )
            .expect("shape preserved"),
            b1: self.b1.iter().map(|&v| v as f64).collect(),
            w2: Matrix::from_vec(
                self.hidden_dim,
                self.hidden_dim,
                self.w2.as_slice().iter().map(|&v| v as f64).collect(),
            )
            .expect("shape preserved"),
            b2: self.b2.iter().map(|&v| v as f64).collect(),
            w3: self.w3.iter().map(|&v| v as f64).collect(),
            b3: self.b3 as f64,
            activation: self.activation,
        }
    }

    /// Serializes the head to its checkpoint format (atomic write).
    ///
    /// Layout, all integers and floats little endian: magic `UHED`, version
    /// `u16`, `input_dim: u32`, `hidden_dim: u32`, `leaky_slope: f32`,
    /// `softplus_beta: f32`, `softplus_threshold: f32`, then the parameter
    /// tensors in declaration order (`w1, b1, w2, b2, w3, b3`), each as raw
    /// `f32` values in row-major order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(26 + 4 * self.parameter_count());
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.hidden_dim as u32).to_le_bytes());
        bytes.extend_from_slice(&self.activation.leaky_slope.to_le_bytes());
        bytes.extend_from_slice(&self.activation.softplus_beta.to_le_bytes());
        bytes.extend_from_slice(&self.activation.softplus_threshold.to_le_bytes());
        for tensor in [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
            &self.w3,
            std::slice::from_ref(&self.b3),
        ] {
            for v in tensor {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        atomic_write(path, &bytes)
    }

    /// Reads a checkpoint written by [`UncertaintyHead::save`].
    ///
    /// Rejects wrong magic, unknown versions, dimension overflow and files
    /// whose size does not exactly match the declared dimensions.
    pub fn load(path: &Path) -> Result<Self> {
        let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header = [0u8; 26];
        file.read_exact(&mut header)
            .map_err(|_| Error::format(path, "file shorter than checkpoint header"))?;
        if &header[0..4] != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "bad magic, not a head checkpoint"));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let input_dim = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
        let hidden_dim = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
        let leaky_slope = f32::from_le_bytes(header[14..18].try_into().unwrap());
        let softplus_beta = f32::from_le_bytes(header[18..22].try_into().unwrap());
        let softplus_threshold = f32::from_le_bytes(header[22..26].try_into().unwrap());
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::format(path, "zero head dimension in header"));
        }
        let param_count = checkpoint_param_count(input_dim, hidden_dim)
            .ok_or_else(|| Error::format(path, "dimension overflow in header"))?;
        let byte_count = param_count
            .checked_mul(4)
            .ok_or_else(|| Error::format(path, "dimension overflow in header"))?;

        let mut body = Vec::new();
        file.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
        if body.len() != byte_count {
            return Err(Error::format(
                path,
                format!(
                    "parameter payload is {} bytes, expected {byte_count}",
                    body.len()
                ),
            ));
        }
        let mut values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f32> { values.by_ref().take(n).collect() };
        let w1 = take(input_dim * hidden_dim);
        let b1 = take(hidden_dim);
        let w2 = take(hidden_dim * hidden_dim);
        let b2 = take(hidden_dim);
        let w3 = take(hidden_dim);
        let b3 = take(1)[0];
        Ok(UncertaintyHead {
            input_dim,
            hidden_dim,
            w1: Matrix::from_vec(input_dim, hidden_dim, w1)?,
            b1,
            w2: Matrix::from_vec(hidden_dim, hidden_dim, w2)?,
            b2,
            w3,
            b3,
            activation: ActivationConfig {
                leaky_slope,
                softplus_beta,
                softplus_threshold,
            },
        })
    }
}

/// Total parameter count for the given dimensions, `None` on overflow.
fn checkpoint_param_count(input_dim: usize, hidden_dim: usize) -> Option<usize> {
    let w1 = input_dim.checked_mul(hidden_dim)?;
    let w2 = hidden_dim.checked_mul(hidden_dim)?;
    w1.checked_add(w2)?
        .checked_add(hidden_dim.checked_mul(3)?)?
        .checked_add(1)
}

impl<T: Float> UncertaintyHead<T> {
    /// Builds a head from explicit parameters, rejecting the all-zero
    /// parameter vector (an all-zero head has no gradient signal and can
    /// never train; see [`UncertaintyHead::from_parameters_unchecked`]).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parameters(
        w1: Matrix<T>,
        b1: Vec<T>,
        w2: Matrix<T>,
        b2: Vec<T>,
        w3: Vec<T>,
        b3: T,
        activation: ActivationConfig,
    ) -> Result<Self> {
        let head = Self::from_parameters_unchecked(w1, b1, w2, b2, w3, b3, activation)?;
        if head.all_parameters_zero() {
            return Err(Error::invalid(
                "all head parameters are zero; such a head emits a constant and cannot train",
            ));
        }
        Ok(head)
    }

    /// Like [`UncertaintyHead::from_parameters`] but allows the all-zero
    /// head. Exists so tests can demonstrate why zero init is rejected.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parameters_unchecked(
        w1: Matrix<T>,
        b1: Vec<T>,
        w2: Matrix<T>,
        b2: Vec<T>,
        w3: Vec<T>,
        b3: T,
        activation: ActivationConfig,
    ) -> Result<Self> {
        let input_dim = w1.rows();
        let hidden_dim = w1.cols();
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::invalid("head dimensions must be positive"));
        }
        for (what, expected, got) in [
            ("b1 length", hidden_dim, b1.len()),
            ("w2 rows", hidden_dim, w2.rows()),
            ("w2 cols", hidden_dim, w2.cols()),
            ("b2 length", hidden_dim, b2.len()),
            ("w3 length", hidden_dim, w3.len()),
        ] {
            if got != expected {
                return Err(Error::ShapeMismatch {
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(UncertaintyHead {
            input_dim,
            hidden_dim,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn activation(&self) -> ActivationConfig {
        self.activation
    }

    /// Number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.input_dim * self.hidden_dim
            + self.hidden_dim * self.hidden_dim
            + 3 * self.hidden_dim
            + 1
    }

    fn all_parameters_zero(&self) -> bool {
        self.w1.as_slice().iter().all(|v| v.is_zero())
            && self.b1.iter().all(|v| v.is_zero())
            && self.w2.as_slice().iter().all(|v| v.is_zero())
            && self.b2.iter().all(|v| v.is_zero())
            && self.w3.iter().all(|v| v.is_zero())
            && self.b3.is_zero()
    }

    /// Read-only views of the parameter tensors in declaration order.
    pub fn parameter_tensors(&self) -> [&[T]; 6] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
            &self.w3,
            std::slice::from_ref(&self.b3),
        ]
    }

    /// Mutable views of the parameter tensors in declaration order.
    pub fn parameter_tensors_mut(&mut self) -> [&mut [T]; 6] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
            &mut self.w3,
            std::slice::from_mut(&mut self.b3),
        ]
    }

    /// Runs the head on a batch (one embedding per row) and retains every
    /// intermediate needed by [`UncertaintyHead::backward`].
    pub fn forward(&self, batch: &Matrix<T>) -> Result<ForwardTrace<T>> {
        if batch.cols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                what: "batch embedding dimension",
                expected: self.input_dim,
                got: batch.cols(),
            });
        }
        let n = batch.rows();
        let h = self.hidden_dim;
        let slope = T::from(self.activation.leaky_slope).expect("slope fits float");
        let beta = T::from(self.activation.softplus_beta).expect("beta fits float");
        let threshold = T::from(self.activation.softplus_threshold).expect("threshold fits float");

        let mut z1 = Matrix::filled(n, h, T::zero());
        let mut h1 = Matrix::filled(n, h, T::zero());
        let mut z2 = Matrix::filled(n, h, T::zero());
        let mut h2 = Matrix::filled(n, h, T::zero());
        let mut z3 = vec![T::zero(); n];
        let mut uncertainties = vec![T::zero(); n];

        for i in 0..n {
            let x = batch.row(i);
            {
                let z1_row = z1.row_mut(i);
                z1_row.copy_from_slice(&self.b1);
                for (d, &xv) in x.iter().enumerate() {
                    let w_row = self.w1.row(d);
                    for j in 0..h {
                        z1_row[j] = z1_row[j] + xv * w_row[j];
                    }
                }
            }
            for j in 0..h {
                h1.set(i, j, leaky_relu(z1.get(i, j), slope));
            }
            {
                let h1_row = h1.row(i);
                let z2_row = z2.row_mut(i);
                z2_row.copy_from_slice(&self.b2);
                for (j, &hv) in h1_row.iter().enumerate() {
                    let w_row = self.w2.row(j);
                    for k in 0..h {
                        z2_row[k] = z2_row[k] + hv * w_row[k];
                    }
                }
            }
            for k in 0..h {
                h2.set(i, k, leaky_relu(z2.get(i, k), slope));
            }
            let mut z = self.b3;
            for (k, &hv) in h2.row(i).iter().enumerate() {
                z = z + hv * self.w3[k];
            }
            z3[i] = z;
            uncertainties[i] = softplus_stable(z, beta, threshold);
        }
        Ok(ForwardTrace {
            input: batch.clone(),
            z1,
            h1,
            z2,
            h2,
            z3,
            uncertainties,
        })
    }

    /// Backpropagates `output_grad` (one value per batch row, the gradient of
    /// some scalar objective with respect to each predicted uncertainty)
    /// through the trace, returning parameter gradients. The head's input is
    /// data, not a parameter: no input gradient is computed anywhere.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        output_grad: &[T],
    ) -> Result<HeadGradients<T>> {
        let n = trace.batch_size();
        if output_grad.len() != n {
            return Err(Error::ShapeMismatch {
                what: "output gradient length",
                expected: n,
                got: output_grad.len(),
            });
        }
        if trace.input.cols() != self.input_dim || trace.z1.cols() != self.hidden_dim {
            return Err(Error::invalid(
                "forward trace does not match this head's dimensions",
            ));
        }
        let h = self.hidden_dim;
        let slope = T::from(self.activation.leaky_slope).expect("slope fits float");
        let beta = T::from(self.activation.softplus_beta).expect("beta fits float");
        let threshold = T::from(self.activation.softplus_threshold).expect("threshold fits float");

        let mut grads = HeadGradients::zeros_like(self);
        let mut delta2 = vec![T::zero(); h];
        let mut delta1 = vec![T::zero(); h];

        for i in 0..n {
            let d3 = output_grad[i] * softplus_stable_derivative(trace.z3[i], beta, threshold);
            grads.b3 = grads.b3 + d3;
            let h2_row = trace.h2.row(i);
            for k in 0..h {
                grads.w3[k] = grads.w3[k] + d3 * h2_row[k];
            }
            // delta2 = d3 * w3 (.) leaky'(z2)
            let z2_row = trace.z2.row(i);
            for k in 0..h {
                delta2[k] = d3 * self.w3[k] * leaky_relu_derivative(z2_row[k], slope);
            }
            let h1_row = trace.h1.row(i);
            for j in 0..h {
                let gw2_row = grads.w2.row_mut(j);
                let hv = h1_row[j];
                for k in 0..h {
                    gw2_row[k] = gw2_row[k] + hv * delta2[k];
                }
            }
            for k in 0..h {
                grads.b2[k] = grads.b2[k] + delta2[k];
            }
            // delta1 = (delta2 . W2^T) (.) leaky'(z1)
            let z1_row = trace.z1.row(i);
            for j in 0..h {
                let w2_row = self.w2.row(j);
                let mut acc = T::zero();
                for k in 0..h {
                    acc = acc + delta2[k] * w2_row[k];
                }
                delta1[j] = acc * leaky_relu_derivative(z1_row[j], slope);
            }
            let x = trace.input.row(i);
            for (d, &xv) in x.iter().enumerate() {
                let gw1_row = grads.w1.row_mut(d);
                for j in 0..h {
                    gw1_row[j] = gw1_row[j] + xv * delta1[j];
                }
            }
            for j in 0..h {
                grads.b1[j] = grads.b1[j] + delta1[j];
            }
        }
        Ok(grads)
    }

    /// Convenience: forward pass returning only the uncertainties.
    pub fn predict(&self, batch: &Matrix<T>) -> Result<Vec<T>> {
        Ok(self.forward(batch)?.uncertainties)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_head(seed: u64) -> UncertaintyHead {
        UncertaintyHead::init(5, 7, seed).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = UncertaintyHead::init(8, 512, 0).unwrap();
        let b = UncertaintyHead::init(8, 512, 0).unwrap();
        assert_eq!(a, b, "same seed must give bitwise-identical parameters");
        let c = UncertaintyHead::init(8, 512, 1).unwrap();
        assert_ne!(a, c, "different seeds must differ");

        assert_eq!(a.w1.rows(), 8);
        assert_eq!(a.w1.cols(), 512);
        assert_eq!(a.w2.rows(), 512);
        assert_eq!(a.w3.len(), 512);
        let bound1 = 1.0 / (8.0f32).sqrt();
        assert!(a.w1.as_slice().iter().all(|v| v.abs() <= bound1));
        let bound2 = 1.0 / (512.0f32).sqrt();
        assert!(a.w2.as_slice().iter().all(|v| v.abs() <= bound2));
        assert!(a.b1.iter().all(|&v| v == 0.0));
        assert!(a.b2.iter().all(|&v| v == 0.0));
        assert_eq!(a.b3, 0.0);
        assert!(!a.all_parameters_zero());
    }

    #[test]
    fn softplus_matches_hand_values() {
        // softplus(0) = ln 2.
        assert!((softplus_stable(0.0f64, 1.0, 20.0) - std::f64::consts::LN_2).abs() < 1e-15);
        // Identity above the threshold.
        assert_eq!(softplus_stable(25.0f32, 1.0, 20.0), 25.0);
        assert_eq!(softplus_stable(20.0f32 + 1e-4, 1.0, 20.0), 20.0 + 1e-4);
        // Very negative input: positive and approximately exp(z).
        let v = softplus_stable(-30.0f64, 1.0, 20.0);
        assert!(v > 0.0 && (v - (-30.0f64).exp()).abs() < 1e-18);
        // Beta rescales: softplus(z; beta) = softplus(beta z; 1) / beta.
        let a = softplus_stable(0.7f64, 2.5, 20.0);
        let b = softplus_stable(0.7f64 * 2.5, 1.0, 20.0) / 2.5;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn leaky_relu_matches_hand_values() {
        assert_eq!(leaky_relu(2.0f32, 0.01), 2.0);
        assert_eq!(leaky_relu(-2.0f32, 0.01), -0.02);
        assert_eq!(leaky_relu(0.0f32, 0.01), 0.0);
        assert_eq!(leaky_relu_derivative(0.0f32, 0.01), 0.01);
        assert_eq!(leaky_relu_derivative(3.0f32, 0.01), 1.0);
    }

    #[test]
    fn forward_is_positive_and_deterministic() {
        let head = small_head(3);
        let batch = Matrix::from_vec(
            4,
            5,
            vec![
                0.5, -1.0, 2.0, 0.0, 1.5, //
                -0.3, 0.7, -2.2, 1.1, 0.0, //
                3.0, 3.0, 3.0, 3.0, 3.0, //
                -3.0, -3.0, -3.0, -3.0, -3.0,
            ],
        )
        .unwrap();
        let t1 = head.forward(&batch).unwrap();
        let t2 = head.forward(&batch).unwrap();
        assert_eq!(t1.uncertainties(), t2.uncertainties());
        for &u in t1.uncertainties() {
            assert!(u.is_finite() && u > 0.0, "got {u}");
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let head = small_head(0);
        let batch = Matrix::filled(2, 4, 0.0f32);
        assert!(head.forward(&batch).is_err());
    }

    #[test]
    fn zero_head_is_rejected_but_hook_allows_it() {
        let z = || {
            (
                Matrix::filled(3, 4, 0.0f32),
                vec![0.0; 4],
                Matrix::filled(4, 4, 0.0f32),
                vec![0.0; 4],
                vec![0.0; 4],
                0.0,
            )
        };
        let (w1, b1, w2, b2, w3, b3) = z();
        let err = UncertaintyHead::from_parameters(w1, b1, w2, b2, w3, b3, Default::default())
            .unwrap_err();
        assert!(err.to_string().contains("zero"), "{err}");
        let (w1, b1, w2, b2, w3, b3) = z();
        let head =
            UncertaintyHead::from_parameters_unchecked(w1, b1, w2, b2, w3, b3, Default::default())
                .unwrap();
        // A zero head emits softplus(0) = ln 2 for every input.
        let batch = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 0.0, 4.0, -1.0]).unwrap();
        for &u in head.forward(&batch).unwrap().uncertainties() {
            assert_eq!(u, std::f32::consts::LN_2);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.uhed");
        let head = small_head(11);
        head.save(&path).unwrap();
        let loaded = UncertaintyHead::load(&path).unwrap();
        assert_eq!(head, loaded);
        // Exact file size: 26-byte header + 4 bytes per parameter.
        let meta = std::fs::metadata(&path).unwrap();
        assert_eq!(meta.len() as usize, 26 + 4 * head.parameter_count());
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.uhed");
        let head = small_head(2);
        head.save(&path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let bad_magic = {
            let mut b = good.clone();
            b[0] = b'X';
            b
        };
        let bad_version = {
            let mut b = good.clone();
            b[4] = 99;
            b
        };
        let truncated = good[..good.len() - 3].to_vec();
        let oversized = {
            let mut b = good.clone();
            b.extend_from_slice(&[0u8; 4]);
            b
        };
        for (name, bytes) in [
            ("magic", bad_magic),
            ("version", bad_version),
            ("truncated", truncated),
            ("oversized", oversized),
        ] {
            let p = dir.path().join(format!("{name}.uhed"));
            std::fs::write(&p, &bytes).unwrap();
            assert!(
                UncertaintyHead::load(&p).is_err(),
                "{name} corruption must be rejected"
            );
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_small_head() {
        // Small deterministic spot check; the full 100-trial sweep lives in
        // the acceptance suite.
        let head = UncertaintyHead::init(3, 4, 42).unwrap().to_f64();
        let batch = Matrix::from_vec(2, 3, vec![0.4, -1.2, 0.9, -0.5, 0.3, 1.7]).unwrap();
        let output_grad = vec![1.0, -0.7];
        let trace = head.forward(&batch).unwrap();
        let analytic = head.backward(&trace, &output_grad).unwrap();

        let scalar = |h: &UncertaintyHead<f64>| -> f64 {
            h.forward(&batch)
                .unwrap()
                .uncertainties()
                .iter()
                .zip(&output_grad)
                .map(|(u, g)| u * g)
                .sum()
        };
        let step = 1e-5;
        let mut max_rel = 0.0f64;
        for t in 0..6 {
            let len = head.parameter_tensors()[t].len();
            for idx in 0..len {
                let mut plus = head.clone();
                plus.parameter_tensors_mut()[t][idx] += step;
                let mut minus = head.clone();
                minus.parameter_tensors_mut()[t][idx] -= step;
                let numeric = (scalar(&plus) - scalar(&minus)) / (2.0 * step);
                let analytic_v = analytic_tensor(&analytic, t)[idx];
                let denom = analytic_v.abs().max(numeric.abs()).max(1e-6);
                max_rel = max_rel.max((analytic_v - numeric).abs() / denom);
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    fn analytic_tensor<'g>(g: &'g HeadGradients<f64>, t: usize) -> &'g [f64] {
        match t {
            0 => g.w1.as_slice(),
            1 => &g.b1,
            2 => g.w2.as_slice(),
            3 => &g.b2,
            4 => &g.w3,
            5 => std::slice::from_ref(&g.b3),
            _ => unreachable!(),
        }
    }
}
