//! Maximum-likelihood baseline: marginal (hidden-variable) negative
//! log-likelihood, its exact gradient via clamped/unclamped clique marginals,
//! and a limited-memory quasi-Newton optimizer (two-loop recursion, Wolfe
//! line search).

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{build_potentials, expected_feature, log_partition, posteriors};
use crate::model::{
    Feature, LabelSpace, Model, NormStats, ObservationSequence, PartialLabeling, TrainingSequence,
};

/// Hyperparameters of the quasi-Newton baseline.
#[derive(Clone, Copy, Debug)]
pub struct MleConfig {
    pub sigma: f64,
    /// History size of the (s, y) pair buffer.
    pub memory: usize,
    /// Convergence threshold on the gradient infinity-norm.
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            sigma: f64::INFINITY,
            memory: 10,
            grad_tol: 1e-5,
            max_iters: 500,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::BadConfig("memory must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::BadConfig(format!(
                "grad_tol must be positive, got {}",
                self.grad_tol
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::BadConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Regularized marginal NLL and its exact gradient:
/// loss = -Σ_i [log Z(v_i) - log Z] + Σ_k λ_k²/2σ²,
/// grad_k = Σ_i (E_{y|x_i}[f_k] - E_{y|x_i, v clamped}[f_k]) + λ_k/σ².
pub fn nll_and_grad(
    model: &Model,
    data: &[TrainingSequence],
    sigma: f64,
) -> Result<(f64, Vec<f64>)> {
    for (i, seq) in data.iter().enumerate() {
        if seq.clamp.observed_count() == 0 {
            return Err(Error::NoObservedSlot(i));
        }
    }
    let parts: Vec<Result<(f64, Vec<f64>)>> = data
        .par_iter()
        .map(|seq| {
            let pots = build_potentials(model, &seq.obs)?;
            let free = posteriors(&pots, &PartialLabeling::all_hidden(seq.obs.len()));
            let clamped = posteriors(&pots, &seq.clamp);
            let loss = free.log_z - clamped.log_z;
            let grad: Vec<f64> = model
                .features()
                .iter()
                .map(|f| {
                    expected_feature(f, &seq.obs, &free) - expected_feature(f, &seq.obs, &clamped)
                })
                .collect();
            Ok((loss, grad))
        })
        .collect();
    let k = model.num_features();
    let mut loss = 0.0;
    let mut grad = vec![0.0; k];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    if sigma.is_finite() {
        let s2 = sigma * sigma;
        for (g, &w) in grad.iter_mut().zip(model.weights()) {
            *g += w / s2;
        }
        loss += model.weights().iter().map(|w| w * w).sum::<f64>() / (2.0 * s2);
    }
    Ok((loss, grad))
}

/// One accepted optimizer iteration.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct MleIteration {
    pub iter: usize,
    pub loss: f64,
    pub grad_inf_norm: f64,
    pub step: f64,
}

/// Optimizer trace: configuration echo, per-iteration records (entry 0 is
/// the starting point), and how the run terminated.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct MleTrace {
    pub algorithm: String,
    #[serde(with = "crate::io::sigma_string")]
    pub sigma: f64,
    pub memory: usize,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub degenerate_channels: Vec<usize>,
    pub iterations: Vec<MleIteration>,
    pub converged: bool,
    pub termination: String,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Two-loop recursion: approximate -H·g from the stored (s, y) pairs.
fn search_direction(history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, grad: &[f64]) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let gamma = history
        .back()
        .map(|(s, y, _)| dot(s, y) / dot(y, y))
        .unwrap_or(1.0);
    for qi in q.iter_mut() {
        *qi *= gamma;
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    for qi in q.iter_mut() {
        *qi = -*qi;
    }
    q
}

struct LineSearchResult {
    alpha: f64,
    loss: f64,
    grad: Vec<f64>,
}

/// Strong-Wolfe line search (bracket and zoom). `eval` returns loss and
/// gradient at λ + α·d.
fn wolfe_search(
    mut eval: impl FnMut(f64) -> Result<(f64, Vec<f64>)>,
    f0: f64,
    slope0: f64,
    direction: &[f64],
) -> Result<Option<LineSearchResult>> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    const MAX_EXPAND: usize = 20;
    const MAX_ZOOM: usize = 30;
    if slope0 >= 0.0 {
        return Ok(None);
    }
    let phi_slope = |g: &[f64]| dot(g, direction);

    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut slope_prev = slope0;
    let mut alpha = 1.0;
    let mut bracket = None;
    for i in 0..MAX_EXPAND {
        let (f, g) = eval(alpha)?;
        let slope = phi_slope(&g);
        if !f.is_finite() || f > f0 + C1 * alpha * slope0 || (i > 0 && f >= f_prev) {
            bracket = Some((alpha_prev, f_prev, slope_prev, alpha, f));
            break;
        }
        if slope.abs() <= -C2 * slope0 {
            return Ok(Some(LineSearchResult { alpha, loss: f, grad: g }));
        }
        if slope >= 0.0 {
            bracket = Some((alpha, f, slope, alpha_prev, f_prev));
            break;
        }
        alpha_prev = alpha;
        f_prev = f;
        slope_prev = slope;
        alpha *= 2.0;
    }
    let Some((mut lo, mut f_lo, mut slope_lo, mut hi, mut f_hi)) = bracket else {
        return Ok(None);
    };
    for _ in 0..MAX_ZOOM {
        // bisection is robust enough here; the interval halves every step
        let mid = 0.5 * (lo + hi);
        let (f, g) = eval(mid)?;
        let slope = phi_slope(&g);
        if !f.is_finite() || f > f0 + C1 * mid * slope0 || f >= f_lo {
            hi = mid;
            f_hi = f;
        } else {
            if slope.abs() <= -C2 * slope0 {
                return Ok(Some(LineSearchResult { alpha: mid, loss: f, grad: g }));
            }
            if slope * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
            }
            lo = mid;
            f_lo = f;
            slope_lo = slope;
        }
        if (hi - lo).abs() < 1e-16 * lo.abs().max(1.0) {
            break;
        }
    }
    let _ = (slope_lo, f_hi);
    // fall back to the best sufficient-decrease point found, if any
    if f_lo < f0 {
        let (f, g) = eval(lo)?;
        return Ok(Some(LineSearchResult { alpha: lo, loss: f, grad: g }));
    }
    Ok(None)
}

/// Minimizes the regularized marginal NLL from the zero vector. Stops when
/// the gradient infinity-norm falls below `grad_tol` or `max_iters` is
/// reached; a failed line search falls back to steepest descent once and
/// terminates if it recurs.
pub fn train_mle(
    label_space: &LabelSpace,
    data: &[TrainingSequence],
    features: Vec<Feature>,
    config: &MleConfig,
) -> Result<(Model, MleTrace)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    for (i, seq) in data.iter().enumerate() {
        if seq.clamp.observed_count() == 0 {
            return Err(Error::NoObservedSlot(i));
        }
        seq.clamp.validate_labels(label_space.size())?;
    }

    let raw: Vec<ObservationSequence> = data.iter().map(|s| s.obs.clone()).collect();
    let (stats, degenerate_channels) = NormStats::fit(&raw);
    let data: Vec<TrainingSequence> = data
        .iter()
        .map(|s| TrainingSequence {
            obs: s.obs.normalized(&stats),
            clamp: s.clamp.clone(),
        })
        .collect();

    let mut model = Model::new(label_space.clone(), features, stats);
    let num_features = model.num_features();
    let (mut loss, mut grad) = nll_and_grad(&model, &data, config.sigma)?;
    let mut trace = MleTrace {
        algorithm: "mle".into(),
        sigma: config.sigma,
        memory: config.memory,
        grad_tol: config.grad_tol,
        max_iters: config.max_iters,
        degenerate_channels,
        iterations: vec![MleIteration {
            iter: 0,
            loss,
            grad_inf_norm: inf_norm(&grad),
            step: 0.0,
        }],
        converged: false,
        termination: String::new(),
    };

    let mut weights = vec![0.0; num_features];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut fallback_spent = false;

    for iter in 1..=config.max_iters {
        if inf_norm(&grad) <= config.grad_tol {
            trace.converged = true;
            trace.termination = "converged".into();
            break;
        }
        let mut direction = search_direction(&history, &grad);
        if dot(&direction, &grad) >= 0.0 {
            // not a descent direction; drop the history and restart
            history.clear();
            direction = grad.iter().map(|g| -g).collect();
        }
        let mut eval = |alpha: f64| -> Result<(f64, Vec<f64>)> {
            for (w, (base, d)) in model
                .weights_mut()
                .iter_mut()
                .zip(weights.iter().zip(&direction))
            {
                *w = base + alpha * d;
            }
            nll_and_grad(&model, &data, config.sigma)
        };
        let slope0 = dot(&grad, &direction);
        let mut outcome = wolfe_search(&mut eval, loss, slope0, &direction)?;
        if outcome.is_none() {
            if fallback_spent {
                trace.termination = "line_search_failed".into();
                break;
            }
            fallback_spent = true;
            history.clear();
            direction = grad.iter().map(|g| -g).collect();
            let slope0 = dot(&grad, &direction);
            let mut eval = |alpha: f64| -> Result<(f64, Vec<f64>)> {
                for (w, (base, d)) in model
                    .weights_mut()
                    .iter_mut()
                    .zip(weights.iter().zip(&direction))
                {
                    *w = base + alpha * d;
                }
                nll_and_grad(&model, &data, config.sigma)
            };
            outcome = wolfe_search(&mut eval, loss, slope0, &direction)?;
            if outcome.is_none() {
                trace.termination = "line_search_failed".into();
                break;
            }
        }
        let result = outcome.unwrap();
        let step: Vec<f64> = direction.iter().map(|d| result.alpha * d).collect();
        let grad_diff: Vec<f64> = result.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&step, &grad_diff);
        if sy > 1e-10 {
            if history.len() == config.memory {
                history.pop_front();
            }
            history.push_back((step.clone(), grad_diff, 1.0 / sy));
        }
        for (w, s) in weights.iter_mut().zip(&step) {
            *w += s;
        }
        loss = result.loss;
        grad = result.grad;
        trace.iterations.push(MleIteration {
            iter,
            loss,
            grad_inf_norm: inf_norm(&grad),
            step: result.alpha,
        });
    }
    if trace.termination.is_empty() {
        if inf_norm(&grad) <= config.grad_tol {
            trace.converged = true;
            trace.termination = "converged".into();
        } else {
            trace.termination = "max_iters".into();
        }
    }
    model.weights_mut().copy_from_slice(&weights);
    Ok((model, trace))
}
