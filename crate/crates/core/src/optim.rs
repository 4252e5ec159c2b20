//! Optimizers and the learning-rate schedule used for head pretraining.
//!
//! AdamW here is the decoupled-weight-decay variant: the decay term is
//! applied directly to the parameter, outside the moment estimates. The
//! second-moment epsilon sits outside the square root. Both optimizers keep
//! their state as flat tensors congruent with the parameters they update, and
//! all update arithmetic is in `f32`, matching the parameter dtype, so runs
//! are bitwise reproducible.

use crate::error::{Error, Result};

/// Warmup-then-cosine learning-rate schedule.
///
/// Steps `0..=warmup_steps` interpolate linearly from `warmup_start_lr` to
/// `peak_lr`; steps `warmup_steps..=total_steps` follow a half cosine from
/// `peak_lr` down to `final_lr`. Both branches are written as exact linear
/// interpolations so the endpoints (`start`, `peak`, `final`) are returned
/// exactly and the two branches agree exactly at `warmup_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub warmup_start_lr: f64,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

/// Schedule defaults mirroring the published pretraining recipe.
pub const DEFAULT_WARMUP_START_LR: f64 = 0.0001;
pub const DEFAULT_PEAK_LR: f64 = 0.0028;
pub const DEFAULT_FINAL_LR: f64 = 1e-8;

impl CosineSchedule {
    pub fn new(
        warmup_start_lr: f64,
        peak_lr: f64,
        final_lr: f64,
        warmup_steps: usize,
        total_steps: usize,
    ) -> Result<Self> {
        if warmup_steps == 0 {
            return Err(Error::invalid("warmup_steps must be positive"));
        }
        if total_steps <= warmup_steps {
            return Err(Error::invalid(format!(
                "total_steps ({total_steps}) must exceed warmup_steps ({warmup_steps})"
            )));
        }
        for (name, v) in [
            ("warmup_start_lr", warmup_start_lr),
            ("peak_lr", peak_lr),
            ("final_lr", final_lr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and positive")));
            }
        }
        Ok(CosineSchedule {
            warmup_start_lr,
            peak_lr,
            final_lr,
            warmup_steps,
            total_steps,
        })
    }

    /// Default learning rates with caller-chosen step counts.
    pub fn with_default_rates(warmup_steps: usize, total_steps: usize) -> Result<Self> {
        CosineSchedule::new(
            DEFAULT_WARMUP_START_LR,
            DEFAULT_PEAK_LR,
            DEFAULT_FINAL_LR,
            warmup_steps,
            total_steps,
        )
    }

    /// Learning rate at `step`; defined only for `step <= total_steps`.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::invalid(format!(
                "step {step} beyond schedule end {}",
                self.total_steps
            )));
        }
        if step <= self.warmup_steps {
            let t = step as f64 / self.warmup_steps as f64;
            Ok(self.warmup_start_lr * (1.0 - t) + self.peak_lr * t)
        } else {
            let progress =
                (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
            let w = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            Ok(self.final_lr * (1.0 - w) + self.peak_lr * w)
        }
    }
}

/// AdamW hyperparameters. Defaults follow the published recipe; the epsilon
/// default is the usual Adam convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.8,
            beta2: 0.95,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// SGD-with-momentum hyperparameters. The decay term is handled exactly like
/// AdamW's: applied to the parameter, outside the velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Optimizer selection plus hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    AdamW(AdamWConfig),
    Sgd(SgdConfig),
}

struct TensorState {
    /// First moment (AdamW) or velocity (SGD).
    m: Vec<f32>,
    /// Second moment (AdamW only).
    v: Vec<f32>,
}

/// Stateful optimizer over an ordered list of parameter tensors.
///
/// The tensor list must have the same shapes on every call; state is
/// allocated lazily on the first step.
pub struct Optimizer {
    kind: OptimizerKind,
    state: Vec<TensorState>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            state: Vec::new(),
            step_count: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update with learning rate `lr` to every tensor.
    ///
    /// `params` and `grads` are parallel lists; any non-finite gradient entry
    /// aborts the step with an error before any parameter is touched.
    pub fn step(&mut self, params: &mut [&mut [f32]], grads: &[&[f32]], lr: f32) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                what: "optimizer tensor list length",
                expected: params.len(),
                got: grads.len(),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::ShapeMismatch {
                    what: "optimizer tensor length",
                    expected: p.len(),
                    got: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    "non-finite gradient entry passed to optimizer",
                ));
            }
        }
        if self.state.is_empty() {
            let needs_v = matches!(self.kind, OptimizerKind::AdamW(_));
            self.state = params
                .iter()
                .map(|p| TensorState {
                    m: vec![0.0; p.len()],
                    v: if needs_v { vec![0.0; p.len()] } else { Vec::new() },
                })
                .collect();
        } else if self.state.len() != params.len()
            || self
                .state
                .iter()
                .zip(params.iter())
                .any(|(s, p)| s.m.len() != p.len())
        {
            return Err(Error::invalid(
                "optimizer state does not match the given tensor shapes",
            ));
        }

        self.step_count += 1;
        match self.kind {
            OptimizerKind::AdamW(cfg) => {
                let t = self.step_count as i32;
                let bias1 = 1.0 - cfg.beta1.powi(t);
                let bias2 = 1.0 - cfg.beta2.powi(t);
                for (state, (param, grad)) in
                    self.state.iter_mut().zip(params.iter_mut().zip(grads))
                {
                    for i in 0..param.len() {
                        let g = grad[i];
                        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
                        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
                        let m_hat = state.m[i] / bias1;
                        let v_hat = state.v[i] / bias2;
                        param[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.epsilon)
                            + cfg.weight_decay * param[i]);
                    }
                }
            }
            OptimizerKind::Sgd(cfg) => {
                for (state, (param, grad)) in
                    self.state.iter_mut().zip(params.iter_mut().zip(grads))
                {
                    for i in 0..param.len() {
                        state.m[i] = cfg.momentum * state.m[i] + grad[i];
                        param[i] -= lr * (state.m[i] + cfg.weight_decay * param[i]);
                    }
                }
            }
        }
        Ok(())
    }
}
