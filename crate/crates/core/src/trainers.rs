//! Full-batch gradient descent for logistic regression and linear SVM.
//!
//! Both models need exactly two matrix-vector products per iteration,
//! `s = X·w` and `Xᵀ·p`. Those are delegated to a [`MatvecEngine`], which can
//! be a local dense product or the coded cluster.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Supplies `X·v` and `Xᵀ·v` for a fixed training matrix `X`.
pub trait MatvecEngine {
    fn n_samples(&self) -> usize;

    fn n_features(&self) -> usize;

    fn multiply_x(&mut self, v: &[f64]) -> Result<Vec<f64>>;

    fn multiply_xt(&mut self, v: &[f64]) -> Result<Vec<f64>>;

    /// Called once before the two products of iteration `iter`.
    fn begin_iteration(&mut self, _iter: u64) {}
}

impl<E: MatvecEngine + ?Sized> MatvecEngine for &mut E {
    fn n_samples(&self) -> usize {
        (**self).n_samples()
    }

    fn n_features(&self) -> usize {
        (**self).n_features()
    }

    fn multiply_x(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        (**self).multiply_x(v)
    }

    fn multiply_xt(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        (**self).multiply_xt(v)
    }

    fn begin_iteration(&mut self, iter: u64) {
        (**self).begin_iteration(iter)
    }
}

/// Uncoded single-process engine.
#[derive(Clone, Debug)]
pub struct LocalEngine {
    x: DenseMatrix,
    xt: DenseMatrix,
}

impl LocalEngine {
    pub fn new(x: DenseMatrix) -> Self {
        let xt = x.transpose();
        Self { x, xt }
    }
}

impl MatvecEngine for LocalEngine {
    fn n_samples(&self) -> usize {
        self.x.rows()
    }

    fn n_features(&self) -> usize {
        self.x.cols()
    }

    fn multiply_x(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        self.x.matvec(v)
    }

    fn multiply_xt(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        self.xt.matvec(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Model {
    LogisticRegression,
    Svm,
}

impl Model {
    /// Maps a raw `{0,1}` or `{-1,+1}` label into this model's coding.
    pub fn map_label(self, raw: f64) -> Option<f64> {
        match (self, raw) {
            (Model::LogisticRegression, 0.0 | 1.0) | (Model::Svm, 1.0 | -1.0) => Some(raw),
            (Model::LogisticRegression, -1.0) => Some(0.0),
            (Model::Svm, 0.0) => Some(-1.0),
            _ => None,
        }
    }

    pub fn negative_label(self) -> f64 {
        match self {
            Model::LogisticRegression => 0.0,
            Model::Svm => -1.0,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::LogisticRegression => "lr",
            Model::Svm => "svm",
        })
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" | "logistic" | "logistic-regression" => Ok(Model::LogisticRegression),
            "svm" => Ok(Model::Svm),
            other => Err(Error::invalid(format!("unknown model '{other}'"))),
        }
    }
}

/// Features `x` (samples × features) and labels `y` in the model's coding.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub x: DenseMatrix,
    pub y: Vec<f64>,
}

impl LabeledDataset {
    pub fn new(x: DenseMatrix, y: Vec<f64>) -> Result<Self> {
        if y.len() != x.rows() {
            return Err(Error::Data(format!("{} labels for {} samples", y.len(), x.rows())));
        }
        Ok(Self { x, y })
    }

    pub fn n_samples(&self) -> usize {
        self.x.rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub w: Vec<f64>,
    pub eta: f64,
    pub lambda: f64,
    pub iter: u64,
}

impl TrainState {
    pub fn new(w: Vec<f64>, eta: f64, lambda: f64) -> Result<Self> {
        if eta.is_nan() || eta <= 0.0 {
            return Err(Error::invalid(format!("learning rate must be positive, got {eta}")));
        }
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::invalid(format!("regularization must be nonnegative, got {lambda}")));
        }
        Ok(Self { w, eta, lambda, iter: 0 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub eta: f64,
    pub lambda: f64,
    pub num_iter: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self { eta: 0.1, lambda: 0.01, num_iter: 100 }
    }
}

/// Overflow-free logistic function.
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^a)` without overflow.
fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn check_labels(s: &[f64], y: &[f64]) -> Result<()> {
    if s.len() != y.len() {
        return Err(Error::invalid(format!("{} scores for {} labels", s.len(), y.len())));
    }
    Ok(())
}

fn lr_gradient_and_scores(engine: &mut impl MatvecEngine, state: &TrainState, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = engine.multiply_x(&state.w)?;
    check_labels(&s, y)?;
    let p: Vec<f64> = s.iter().zip(y).map(|(&si, &yi)| sigmoid(si) - yi).collect();
    Ok((engine.multiply_xt(&p)?, s))
}

/// `Xᵀ(σ(X·w) − y)`.
pub fn lr_gradient(engine: &mut impl MatvecEngine, state: &TrainState, y: &[f64]) -> Result<Vec<f64>> {
    lr_gradient_and_scores(engine, state, y).map(|(g, _)| g)
}

/// `m_j = −y_j` where `y_j·s_j < 1`, else 0.
pub fn svm_margin_vector(s: &[f64], y: &[f64]) -> Vec<f64> {
    s.iter().zip(y).map(|(&sj, &yj)| if yj * sj < 1.0 { -yj } else { 0.0 }).collect()
}

fn svm_gradient_and_scores(
    engine: &mut impl MatvecEngine,
    state: &TrainState,
    y: &[f64],
    n_samples: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let s = engine.multiply_x(&state.w)?;
    check_labels(&s, y)?;
    let m = svm_margin_vector(&s, y);
    let scale = 1.0 / n_samples as f64;
    let g = engine.multiply_xt(&m)?.into_iter().map(|v| v * scale).collect();
    Ok((g, s))
}

/// Hinge-loss sub-gradient `(1/N) Xᵀ m`.
pub fn svm_gradient(engine: &mut impl MatvecEngine, state: &TrainState, y: &[f64], n_samples: usize) -> Result<Vec<f64>> {
    svm_gradient_and_scores(engine, state, y, n_samples).map(|(g, _)| g)
}

/// `w ← w − η(grad + λw)`.
pub fn gd_step(state: &TrainState, grad: &[f64]) -> TrainState {
    debug_assert_eq!(grad.len(), state.w.len());
    let w = state
        .w
        .iter()
        .zip(grad)
        .map(|(&wi, &gi)| wi - state.eta * (gi + state.lambda * wi))
        .collect();
    TrainState { w, iter: state.iter + 1, ..*state }
}

fn half_sq_norm(w: &[f64]) -> f64 {
    0.5 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Regularized training objective evaluated from scores `s = X·w`.
/// Summed log-loss for LR, mean hinge loss for SVM.
pub fn objective(model: Model, s: &[f64], y: &[f64], w: &[f64], lambda: f64) -> f64 {
    let data = match model {
        Model::LogisticRegression => s.iter().zip(y).map(|(&si, &yi)| softplus(si) - yi * si).sum::<f64>(),
        Model::Svm => {
            s.iter().zip(y).map(|(&si, &yi)| (1.0 - yi * si).max(0.0)).sum::<f64>() / s.len().max(1) as f64
        }
    };
    data + lambda * half_sq_norm(w)
}

/// Seeded uniform(−0.01, 0.01) initial weights.
pub fn init_weights(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.random_range(-0.01..0.01)).collect()
}

/// Fraction of samples whose predicted side matches the label.
pub fn accuracy(model: Model, x: &DenseMatrix, y: &[f64], w: &[f64]) -> Result<f64> {
    let s = x.matvec(w)?;
    let hits = s
        .iter()
        .zip(y)
        .filter(|(&si, &yi)| {
            let positive = match model {
                Model::LogisticRegression => sigmoid(si) >= 0.5,
                Model::Svm => si >= 0.0,
            };
            positive == (yi > model.negative_label())
        })
        .count();
    Ok(hits as f64 / y.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub w: Vec<f64>,
    /// Objective at the start of each iteration, `objectives[t]` at `w_t`.
    pub objectives: Vec<f64>,
}

pub fn train(
    model: Model,
    engine: &mut impl MatvecEngine,
    y: &[f64],
    n_samples: usize,
    hyper: Hyper,
    init_seed: u64,
) -> Result<TrainOutcome> {
    let mut state = TrainState::new(init_weights(engine.n_features(), init_seed), hyper.eta, hyper.lambda)?;
    let mut objectives = Vec::with_capacity(hyper.num_iter as usize);
    for t in 0..hyper.num_iter {
        engine.begin_iteration(t);
        let step = match model {
            Model::LogisticRegression => lr_gradient_and_scores(engine, &state, y),
            Model::Svm => svm_gradient_and_scores(engine, &state, y, n_samples),
        };
        let (grad, s) = step.map_err(|e| Error::TrainingAborted { completed: t, source: Box::new(e) })?;
        objectives.push(objective(model, &s, y, &state.w, state.lambda));
        state = gd_step(&state, &grad);
        log::trace!("iteration {t} objective {}", objectives[t as usize]);
    }
    Ok(TrainOutcome { w: state.w, objectives })
}
