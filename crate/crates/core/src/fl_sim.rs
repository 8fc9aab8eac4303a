//! DANE-style federated training.
//!
//! Each round the server broadcasts the global gradient at the current
//! model; every user approximately minimizes a gradient-corrected copy of its
//! local loss by gradient descent and uploads the resulting step; the server
//! moves the model by the average step.
//!
//! Local accuracy is measured against a high-precision reference solve of the
//! same local problem, and the global stopping rule against a reference
//! centralized solve, so both iteration counts can be compared with their
//! theoretical bounds.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FlParams;

/// One training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

/// The samples held by one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDataset {
    pub samples: Vec<Sample>,
}

impl UserDataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let d = UserDataset { samples };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature dimension (of the first sample).
    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Config("a user dataset needs at least one sample".into()));
        }
        let d = self.dim();
        for (row, s) in self.samples.iter().enumerate() {
            if s.x.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: s.x.len(),
                });
            }
            if !s.y.is_finite() || s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data {
                    row,
                    column: 0,
                    message: "non-finite value".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `½(xᵀw − y)²`
    LinearRegression,
    /// `−log(1 + exp(−y·xᵀw))`, taken as written; it is concave, so training
    /// with it needs the proximal term.
    LogisticRegression,
}

/// Per-sample loss plus an optional proximal weight `ρ`: each round the local
/// objective gains `ρ·‖w − w⁽ⁿ⁾‖²`, anchored at that round's global model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub kind: LossKind,
    pub regularization: Option<f64>,
}

impl LossModel {
    pub fn linear() -> Self {
        LossModel {
            kind: LossKind::LinearRegression,
            regularization: None,
        }
    }

    pub fn logistic(proximal: f64) -> Self {
        LossModel {
            kind: LossKind::LogisticRegression,
            regularization: Some(proximal),
        }
    }

    fn proximal(&self) -> f64 {
        self.regularization.unwrap_or(0.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `log(1 + eᵗ)` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// `1/(1 + e⁻ᵗ)`
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Per-sample loss value and its derivative in `z = xᵀw`.
fn sample_loss(kind: LossKind, z: f64, y: f64) -> (f64, f64) {
    match kind {
        LossKind::LinearRegression => {
            let r = z - y;
            (0.5 * r * r, r)
        }
        LossKind::LogisticRegression => (-softplus(-y * z), y * sigmoid(-y * z)),
    }
}

fn check_dim(w: &[f64], data: &UserDataset) -> Result<()> {
    if data.dim() != w.len() {
        return Err(Error::Dimension {
            expected: data.dim(),
            got: w.len(),
        });
    }
    Ok(())
}

/// Mean loss `F_k(w)` over `data` and its gradient (proximal term excluded).
pub fn loss_and_grad(model: &LossModel, w: &[f64], data: &UserDataset) -> Result<(f64, Vec<f64>)> {
    check_dim(w, data)?;
    Ok(batch_loss_and_grad(model.kind, w, data, None))
}

fn batch_loss_and_grad(
    kind: LossKind,
    w: &[f64],
    data: &UserDataset,
    batch: Option<&[usize]>,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; w.len()];
    let mut total = 0.0;
    let mut add = |s: &Sample| {
        let (f, df) = sample_loss(kind, dot(&s.x, w), s.y);
        total += f;
        for (g, x) in grad.iter_mut().zip(&s.x) {
            *g += df * x;
        }
    };
    let n = match batch {
        Some(idx) => {
            idx.iter().for_each(|&i| add(&data.samples[i]));
            idx.len()
        }
        None => {
            data.samples.iter().for_each(&mut add);
            data.len()
        }
    };
    let scale = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (total * scale, grad)
}

fn weights(datasets: &[UserDataset]) -> Vec<f64> {
    let total: usize = datasets.iter().map(UserDataset::len).sum();
    datasets
        .iter()
        .map(|d| d.len() as f64 / total as f64)
        .collect()
}

/// Sample-weighted global loss `Σ_k (D_k/D)·F_k(w)` and its gradient.
pub fn global_loss_and_grad(
    model: &LossModel,
    w: &[f64],
    datasets: &[UserDataset],
) -> Result<(f64, Vec<f64>)> {
    if datasets.is_empty() {
        return Err(Error::Config("no user datasets".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; w.len()];
    for (data, share) in datasets.iter().zip(weights(datasets)) {
        let (f, g) = loss_and_grad(model, w, data)?;
        loss += share * f;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += share * gi;
        }
    }
    Ok((loss, grad))
}

/// Sample-weighted global loss.
pub fn global_loss(model: &LossModel, w: &[f64], datasets: &[UserDataset]) -> Result<f64> {
    Ok(global_loss_and_grad(model, w, datasets)?.0)
}

/// A user's local problem in round `n`:
/// `G_k(h) = F_k(w⁽ⁿ⁾ + h) + ρ‖h‖² − (∇F_k(w⁽ⁿ⁾) − ξ∇F(w⁽ⁿ⁾))ᵀh`.
#[derive(Debug, Clone)]
pub struct Surrogate<'a> {
    pub data: &'a UserDataset,
    pub model: LossModel,
    pub anchor: Vec<f64>,
    /// `∇F_k(w⁽ⁿ⁾) − ξ∇F(w⁽ⁿ⁾)`
    pub correction: Vec<f64>,
}

impl<'a> Surrogate<'a> {
    pub fn new(
        data: &'a UserDataset,
        model: LossModel,
        anchor: &[f64],
        global_grad: &[f64],
        local_grad: &[f64],
        xi: f64,
    ) -> Result<Self> {
        check_dim(anchor, data)?;
        for v in [global_grad, local_grad] {
            if v.len() != anchor.len() {
                return Err(Error::Dimension {
                    expected: anchor.len(),
                    got: v.len(),
                });
            }
        }
        Ok(Surrogate {
            data,
            model,
            anchor: anchor.to_vec(),
            correction: local_grad
                .iter()
                .zip(global_grad)
                .map(|(l, g)| l - xi * g)
                .collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    fn eval(&self, h: &[f64], batch: Option<&[usize]>) -> (f64, Vec<f64>) {
        let w: Vec<f64> = self.anchor.iter().zip(h).map(|(a, b)| a + b).collect();
        let (f, mut g) = batch_loss_and_grad(self.model.kind, &w, self.data, batch);
        let rho = self.model.proximal();
        let mut value = f - dot(&self.correction, h);
        if rho > 0.0 {
            value += rho * dot(h, h);
        }
        for ((gi, c), hi) in g.iter_mut().zip(&self.correction).zip(h) {
            *gi += 2.0 * rho * hi - c;
        }
        (value, g)
    }

    /// Value and gradient in `h`.
    pub fn value_and_grad(&self, h: &[f64]) -> Result<(f64, Vec<f64>)> {
        if h.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: h.len(),
            });
        }
        Ok(self.eval(h, None))
    }

    /// Gradient in `h` with the loss term averaged over `batch` only.
    pub fn batch_grad(&self, h: &[f64], batch: &[usize]) -> Vec<f64> {
        self.eval(h, Some(batch)).1
    }
}

/// Free-function form of [`Surrogate::value_and_grad`].
#[allow(clippy::too_many_arguments)]
pub fn local_surrogate(
    w_n: &[f64],
    global_grad: &[f64],
    local_grad_at_wn: &[f64],
    xi: f64,
    h: &[f64],
    data: &UserDataset,
    model: &LossModel,
) -> Result<(f64, Vec<f64>)> {
    Surrogate::new(data, *model, w_n, global_grad, local_grad_at_wn, xi)?.value_and_grad(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalSolver {
    Gd,
    Sgd { batch_size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalStop {
    /// Stop once the remaining suboptimality is at most this fraction of the initial one.
    AccuracyTarget(f64),
    FixedIters(usize),
}

/// Result of one local solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolve {
    pub h: Vec<f64>,
    pub iters: usize,
    /// `(G(h) − G(h*)) / (G(0) − G(h*))`, zero when `0` is already optimal.
    pub measured_eta: f64,
}

/// Gradient-norm target of the reference local solve.
pub const ORACLE_TOL: f64 = 1e-10;

/// Iteration cap of every gradient-descent loop.
pub const MAX_LOCAL_ITERS: usize = 1_000_000;

/// Runs plain gradient descent from zero until the gradient norm is at most
/// `tol`, returning the value at every iterate.
fn reference_run(g: &Surrogate<'_>, delta: f64, tol: f64) -> Result<Vec<f64>> {
    let mut h = vec![0.0; g.dim()];
    let mut values = Vec::new();
    for _ in 0..MAX_LOCAL_ITERS {
        let (v, grad) = g.eval(&h, None);
        values.push(v);
        if !v.is_finite() {
            break;
        }
        if norm(&grad) <= tol {
            return Ok(values);
        }
        for (hi, gi) in h.iter_mut().zip(&grad) {
            *hi -= delta * gi;
        }
    }
    Err(Error::NoConvergence {
        what: "reference local solve".into(),
        iterations: values.len(),
    })
}

fn gd_iterate(g: &Surrogate<'_>, delta: f64, iters: usize) -> Vec<f64> {
    let mut h = vec![0.0; g.dim()];
    for _ in 0..iters {
        let (_, grad) = g.eval(&h, None);
        for (hi, gi) in h.iter_mut().zip(&grad) {
            *hi -= delta * gi;
        }
    }
    h
}

fn ratio(value: f64, start: f64, best: f64) -> f64 {
    let span = start - best;
    if span <= f64::EPSILON * start.abs().max(best.abs()).max(1.0) {
        0.0
    } else {
        ((value - best) / span).max(0.0)
    }
}

/// Approximately minimizes `g` by gradient descent with step `delta`.
///
/// With [`LocalSolver::Sgd`] each step uses a mini-batch drawn without
/// replacement from a per-epoch shuffle driven by `rng`.
pub fn solve_local(
    g: &Surrogate<'_>,
    delta: f64,
    solver: LocalSolver,
    stop: LocalStop,
    oracle_tol: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LocalSolve> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!("step size must be positive, got {delta}")));
    }
    let reference = reference_run(g, delta, oracle_tol)?;
    let start = reference[0];
    let best = *reference.last().expect("reference run records the start");
    match solver {
        LocalSolver::Gd => {
            let iters = match stop {
                LocalStop::FixedIters(n) => n,
                LocalStop::AccuracyTarget(eta) => reference
                    .iter()
                    .position(|&v| v - best <= eta * (start - best))
                    .unwrap_or(reference.len() - 1),
            };
            let h = gd_iterate(g, delta, iters);
            let value = reference
                .get(iters)
                .copied()
                .unwrap_or_else(|| g.eval(&h, None).0);
            Ok(LocalSolve {
                measured_eta: ratio(value, start, best),
                h,
                iters,
            })
        }
        LocalSolver::Sgd { batch_size } => {
            let n = g.data.len();
            if batch_size == 0 || batch_size > n {
                return Err(Error::Config(format!(
                    "batch size {batch_size} outside [1, {n}]"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let mut cursor = 0;
            let mut h = vec![0.0; g.dim()];
            let mut iters = 0;
            loop {
                let done = match stop {
                    LocalStop::FixedIters(k) => iters >= k,
                    LocalStop::AccuracyTarget(eta) => {
                        g.eval(&h, None).0 - best <= eta * (start - best)
                    }
                };
                if done {
                    break;
                }
                if iters >= MAX_LOCAL_ITERS {
                    return Err(Error::NoConvergence {
                        what: "mini-batch local solve".into(),
                        iterations: iters,
                    });
                }
                if cursor + batch_size > n {
                    order.shuffle(rng);
                    cursor = 0;
                }
                let grad = g.batch_grad(&h, &order[cursor..cursor + batch_size]);
                cursor += batch_size;
                for (hi, gi) in h.iter_mut().zip(&grad) {
                    *hi -= delta * gi;
                }
                iters += 1;
            }
            let value = g.eval(&h, None).0;
            Ok(LocalSolve {
                measured_eta: ratio(value, start, best),
                h,
                iters,
            })
        }
    }
}

/// Controls of [`run_dane`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaneConfig {
    pub fl_params: FlParams,
    pub local_solver: LocalSolver,
    pub local_stop: LocalStop,
    pub max_rounds: usize,
    pub seed: u64,
    /// Halve the surrogate weight whenever the loss fails to drop for three rounds.
    pub halve_xi_on_stall: bool,
}

impl DaneConfig {
    pub fn new(fl_params: FlParams, local_stop: LocalStop, max_rounds: usize) -> Self {
        DaneConfig {
            fl_params,
            local_solver: LocalSolver::Gd,
            local_stop,
            max_rounds,
            seed: 0,
            halve_xi_on_stall: false,
        }
    }
}

/// Record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// Global loss before the first round and after every round.
    pub global_loss: Vec<f64>,
    /// `local_iters[n][k]`: iterations user `k` ran in round `n`.
    pub local_iters: Vec<Vec<usize>>,
    pub measured_local_accuracy: Vec<Vec<f64>>,
    /// Surrogate weight used in every round.
    pub xi: Vec<f64>,
    /// First round count at which the global accuracy target was met.
    pub rounds_to_eps0: Option<usize>,
    /// Loss at the reference optimum, when the loss is convex.
    pub optimal_loss: Option<f64>,
    pub weights: Vec<f64>,
}

impl TrainingTrace {
    pub fn rounds(&self) -> usize {
        self.local_iters.len()
    }

    /// Local iterations summed over users, accumulated over rounds.
    pub fn cumulative_computations(&self) -> Vec<usize> {
        let mut acc = 0;
        std::iter::once(0)
            .chain(self.local_iters.iter().map(|r| {
                acc += r.iter().sum::<usize>();
                acc
            }))
            .collect()
    }
}

/// Global optimum by gradient descent with step `1/L`, to gradient norm `tol`.
pub fn reference_optimum(
    model: &LossModel,
    datasets: &[UserDataset],
    lipschitz: f64,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let d = datasets.first().map_or(0, UserDataset::dim);
    let mut w = vec![0.0; d];
    let step = 1.0 / lipschitz;
    for _ in 0..MAX_LOCAL_ITERS {
        let (f, g) = global_loss_and_grad(model, &w, datasets)?;
        if norm(&g) <= tol {
            return Ok((w, f));
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= step * gi;
        }
    }
    Err(Error::NoConvergence {
        what: "reference global solve".into(),
        iterations: MAX_LOCAL_ITERS,
    })
}

fn user_rng(seed: u64, round: usize, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((round as u64) << 32) | user as u64);
    rng
}

/// Rounds without improvement before the surrogate weight is halved.
const STALL_WINDOW: usize = 3;
/// Consecutive loss increases treated as divergence.
const DIVERGENCE_WINDOW: usize = 5;

/// Runs federated training from `w = 0`.
///
/// Stops when `F(w⁽ⁿ⁾) − F(w*) ≤ ε₀·(F(w⁽⁰⁾) − F(w*))` (linear regression
/// only, where the optimum is computed once up front) or after
/// `config.max_rounds` rounds.
pub fn run_dane(
    datasets: &[UserDataset],
    model: &LossModel,
    config: &DaneConfig,
) -> Result<TrainingTrace> {
    if datasets.is_empty() {
        return Err(Error::Config("no user datasets".into()));
    }
    let d = datasets[0].dim();
    for data in datasets {
        data.validate()?;
        if data.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                got: data.dim(),
            });
        }
        if let LocalSolver::Sgd { batch_size } = config.local_solver {
            if batch_size == 0 || batch_size > data.len() {
                return Err(Error::Config(format!(
                    "batch size {batch_size} outside [1, {}]",
                    data.len()
                )));
            }
        }
    }
    let fl = &config.fl_params;
    let delta = fl.step_size;
    let mut xi = fl.xi;
    let optimal_loss = match model.kind {
        LossKind::LinearRegression => {
            let curv = estimate_curvature(datasets, model)?;
            Some(reference_optimum(model, datasets, curv.lipschitz, 1e-11)?.1)
        }
        LossKind::LogisticRegression => None,
    };
    let k = datasets.len() as f64;
    let mut w = vec![0.0; d];
    let (mut loss, mut grad) = global_loss_and_grad(model, &w, datasets)?;
    let initial = loss;
    let reached = |loss: f64| {
        optimal_loss.is_some_and(|best| loss - best <= fl.global_accuracy * (initial - best))
    };
    let mut trace = TrainingTrace {
        global_loss: vec![loss],
        local_iters: Vec::new(),
        measured_local_accuracy: Vec::new(),
        xi: Vec::new(),
        rounds_to_eps0: reached(loss).then_some(0),
        optimal_loss,
        weights: w.clone(),
    };
    let mut increases = 0;
    let mut best_loss = loss;
    let mut since_best = 0;
    for round in 0..config.max_rounds {
        if trace.rounds_to_eps0.is_some() {
            break;
        }
        let solves: Vec<LocalSolve> = datasets
            .par_iter()
            .enumerate()
            .map(|(user, data)| {
                let (_, local_grad) = loss_and_grad(model, &w, data)?;
                let g = Surrogate::new(data, *model, &w, &grad, &local_grad, xi)?;
                let mut rng = user_rng(config.seed, round, user);
                solve_local(&g, delta, config.local_solver, config.local_stop, ORACLE_TOL, &mut rng)
            })
            .collect::<Result<_>>()?;
        for s in &solves {
            for (wi, hi) in w.iter_mut().zip(&s.h) {
                *wi += hi / k;
            }
        }
        trace.local_iters.push(solves.iter().map(|s| s.iters).collect());
        trace
            .measured_local_accuracy
            .push(solves.iter().map(|s| s.measured_eta).collect());
        trace.xi.push(xi);
        let prev = loss;
        (loss, grad) = global_loss_and_grad(model, &w, datasets)?;
        trace.global_loss.push(loss);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                rounds: round + 1,
                xi,
            });
        }
        increases = if loss > prev { increases + 1 } else { 0 };
        if increases >= DIVERGENCE_WINDOW {
            return Err(Error::Divergence {
                rounds: increases,
                xi,
            });
        }
        if loss < best_loss {
            best_loss = loss;
            since_best = 0;
        } else {
            since_best += 1;
            if config.halve_xi_on_stall && since_best >= STALL_WINDOW {
                xi *= 0.5;
                since_best = 0;
            }
        }
        if reached(loss) {
            trace.rounds_to_eps0 = Some(round + 1);
        }
    }
    trace.weights = w;
    Ok(trace)
}

/// Smoothness and strong-convexity constants of a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curvature {
    pub lipschitz: f64,
    pub strong_convexity: f64,
}

/// Relative residual target of the power iterations.
const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITER: usize = 1_000_000;

/// `(1/D)·XᵀX`, row-major.
fn gram(data: &UserDataset) -> Vec<f64> {
    let d = data.dim();
    let mut m = vec![0.0; d * d];
    for s in &data.samples {
        for i in 0..d {
            for j in i..d {
                m[i * d + j] += s.x[i] * s.x[j];
            }
        }
    }
    let scale = 1.0 / data.len() as f64;
    for i in 0..d {
        for j in i..d {
            m[i * d + j] *= scale;
            m[j * d + i] = m[i * d + j];
        }
    }
    m
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], v)).collect()
}

/// Dominant eigenvalue of the symmetric positive semidefinite operator
/// `apply`, iterated until the residual is at most `POWER_TOL·scale`.
fn power_iteration(apply: impl Fn(&[f64]) -> Vec<f64>, d: usize, scale: f64) -> f64 {
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.37 * (i as f64 + 1.0).sin()).collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let mv = apply(&v);
        lambda = dot(&v, &mv);
        let residual: f64 = mv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= POWER_TOL * scale {
            return lambda;
        }
        let n = norm(&mv);
        if n == 0.0 {
            return 0.0;
        }
        v = mv.into_iter().map(|x| x / n).collect();
    }
    log::warn!("power iteration hit its cap; eigenvalue estimate {lambda}");
    lambda
}

/// Extreme eigenvalues `(max, min)` of `(1/D)·XᵀX`.
pub fn gram_extremes(data: &UserDataset) -> (f64, f64) {
    let d = data.dim();
    let m = gram(data);
    let trace: f64 = (0..d).map(|i| m[i * d + i]).sum();
    let scale = trace.max(f64::MIN_POSITIVE);
    let hi = power_iteration(|v| mat_vec(&m, v), d, scale).max(0.0);
    // the spread hi − λ_min is the top eigenvalue of hi·I − m
    let spread = power_iteration(
        |v| {
            let mv = mat_vec(&m, v);
            v.iter().zip(mv).map(|(a, b)| hi * a - b).collect()
        },
        d,
        scale,
    );
    (hi, (hi - spread).max(0.0))
}

/// Curvature constants over all users.
///
/// For linear regression these are the largest and smallest Gram
/// eigenvalues over users. For the logistic loss the smoothness is a quarter
/// of the largest Gram eigenvalue and the strong convexity is the configured
/// proximal weight.
pub fn estimate_curvature(datasets: &[UserDataset], model: &LossModel) -> Result<Curvature> {
    if datasets.is_empty() {
        return Err(Error::Config("no user datasets".into()));
    }
    let extremes: Vec<(f64, f64)> = datasets.iter().map(gram_extremes).collect();
    let top = extremes.iter().map(|e| e.0).fold(0.0, f64::max);
    let c = match model.kind {
        LossKind::LinearRegression => Curvature {
            lipschitz: top,
            strong_convexity: extremes.iter().map(|e| e.1).fold(f64::INFINITY, f64::min),
        },
        LossKind::LogisticRegression => Curvature {
            lipschitz: 0.25 * top,
            strong_convexity: model.proximal(),
        },
    };
    if c.strong_convexity < 1e-12 {
        log::warn!(
            "strong convexity {:.3e} is numerically zero; enable the proximal term",
            c.strong_convexity
        );
    }
    Ok(c)
}

/// How samples are spread across users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Shuffle, then cut into equal parts.
    Iid,
    /// Sort by target, cut into shards, deal `shards_per_user` shards to each user.
    NonIid {
        shards_per_user: usize,
        shard_size: usize,
    },
}

/// Splits `samples` among `k` users.
pub fn partition(
    mut samples: Vec<Sample>,
    k: usize,
    mode: PartitionMode,
    seed: u64,
) -> Result<Vec<UserDataset>> {
    if k == 0 {
        return Err(Error::Config("need at least one user".into()));
    }
    let n = samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        PartitionMode::Iid => {
            if !n.is_multiple_of(k) || n == 0 {
                return Err(Error::Config(format!(
                    "{n} samples do not split into {k} equal parts"
                )));
            }
            samples.shuffle(&mut rng);
            let part = n / k;
            let mut it = samples.into_iter();
            (0..k)
                .map(|_| UserDataset::new(it.by_ref().take(part).collect()))
                .collect()
        }
        PartitionMode::NonIid {
            shards_per_user,
            shard_size,
        } => {
            if shards_per_user == 0 || shard_size == 0 || k * shards_per_user * shard_size != n {
                return Err(Error::Config(format!(
                    "{n} samples do not form {k}·{shards_per_user} shards of {shard_size}"
                )));
            }
            samples.sort_by(|a, b| a.y.total_cmp(&b.y));
            let mut shards: Vec<Vec<Sample>> = Vec::with_capacity(n / shard_size);
            let mut it = samples.into_iter();
            for _ in 0..n / shard_size {
                shards.push(it.by_ref().take(shard_size).collect());
            }
            shards.shuffle(&mut rng);
            let mut shards = shards.into_iter();
            (0..k)
                .map(|_| {
                    UserDataset::new(shards.by_ref().take(shards_per_user).flatten().collect())
                })
                .collect()
        }
    }
}

/// Reads samples from a CSV file: features then target on every row, with
/// an optional header row. With `normalize`, every feature is min-max scaled
/// to `[0, 1]` (constant features become 0).
pub fn read_csv(path: &Path, normalize: bool) -> Result<Vec<Sample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut samples = Vec::new();
    let mut width = None;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, usize> = record
            .iter()
            .enumerate()
            .map(|(c, v)| v.parse::<f64>().map_err(|_| c))
            .collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(column) => {
                return Err(Error::Data {
                    row,
                    column,
                    message: format!("not a number: {:?}", &record[column]),
                })
            }
        };
        if values.len() < 2 {
            return Err(Error::Data {
                row,
                column: values.len(),
                message: "need at least one feature and a target".into(),
            });
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Data {
                    row,
                    column: values.len().min(w),
                    message: format!("expected {w} columns, found {}", values.len()),
                })
            }
            _ => {}
        }
        if let Some(column) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                row,
                column,
                message: "non-finite value".into(),
            });
        }
        let (y, x) = values.split_last().expect("at least two values");
        samples.push(Sample { x: x.to_vec(), y: *y });
    }
    if normalize {
        min_max_normalize(&mut samples);
    }
    Ok(samples)
}

/// Scales every feature to `[0, 1]` in place.
pub fn min_max_normalize(samples: &mut [Sample]) {
    let Some(d) = samples.first().map(|s| s.x.len()) else {
        return;
    };
    for j in 0..d {
        let (lo, hi) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.x[j]), hi.max(s.x[j]))
            });
        let span = hi - lo;
        for s in samples.iter_mut() {
            s.x[j] = if span > 0.0 { (s.x[j] - lo) / span } else { 0.0 };
        }
    }
}

/// Synthetic linear-regression pool: standard normal features,
/// `y = xᵀw_true + noise·N(0, 1)` with `w_true` also standard normal.
pub fn synthetic_linear(n: usize, dim: usize, noise: f64, rng: &mut impl Rng) -> Vec<Sample> {
    let truth: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let e: f64 = rng.sample(StandardNormal);
            Sample {
                y: dot(&x, &truth) + noise * e,
                x,
            }
        })
        .collect()
}

/// Local iteration bound `⌈v·log₂(1/η)⌉` with `v = 2/((2 − Lδ)δγ)`.
pub fn local_iteration_bound(curv: &Curvature, delta: f64, eta: f64) -> f64 {
    let v = 2.0 / ((2.0 - curv.lipschitz * delta) * delta * curv.strong_convexity);
    (v * (1.0 / eta).log2()).ceil()
}

/// Global round bound `⌈a/(1 − η)⌉` with `a = 2L²/(γ²ξ)·ln(1/ε₀)`.
pub fn global_round_bound(curv: &Curvature, xi: f64, eps0: f64, eta: f64) -> f64 {
    let a = 2.0 * curv.lipschitz.powi(2) / (curv.strong_convexity.powi(2) * xi) * (1.0 / eps0).ln();
    (a / (1.0 - eta)).ceil()
}
