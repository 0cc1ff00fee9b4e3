//! Bayesian Personalized Ranking over (event, positive supplier, negative supplier) triples.
//!
//! The per-pair objective is the negative log-likelihood
//! `-ln σ(r̂(x⁺) − r̂(x⁻))` plus a Gaussian prior on the parameters, which
//! appears as L2 decay on the parameters touched by each update.
//!
//! With `q_f = Σ_j v_{j,f} x_j` the gradients of the score are
//!
//! ```text
//! ∂r̂/∂w0     = 1
//! ∂r̂/∂w_i    = x_i
//! ∂r̂/∂v_{i,f} = x_i q_f − v_{i,f} x_i²
//! ```
//!
//! and the intercept cancels in the pair difference.

use std::fmt::Write as _;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Event, InteractionDataset};
use crate::error::{Error, Result};
use crate::fm::FmParameters;
use crate::scalar::{sigmoid, Scalar, SIGMOID_CLAMP};
use crate::seed::derive_seed;
use crate::sparse::SparseVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub n_iterations: usize,
    pub learning_rate: f64,
    pub lambda_reg: f64,
    pub negatives_per_positive: usize,
    pub init_sigma: f64,
    pub seed: u64,
    /// Number of fixed (event, positive, negative) triples used to track the loss.
    pub probe_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_dim: 8,
            n_iterations: 50,
            learning_rate: 0.05,
            lambda_reg: 0.01,
            negatives_per_positive: 5,
            init_sigma: 0.1,
            seed: 0,
            probe_size: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::Config("lambda_reg must be nonnegative".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be at least 1".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.init_sigma.is_nan() || self.init_sigma < 0.0 {
            return Err(Error::Config("init_sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Uniform draw over suppliers that did not participate in `event`.
pub fn sample_negative<R: Rng + ?Sized>(
    dataset: &InteractionDataset,
    event: usize,
    rng: &mut R,
) -> Result<usize> {
    draw_non_participant(dataset.event(event), dataset.n_suppliers(), rng)
        .ok_or(Error::NoNegative(event))
}

fn draw_non_participant<R: Rng + ?Sized>(
    event: &Event,
    n_suppliers: usize,
    rng: &mut R,
) -> Option<usize> {
    let free = n_suppliers.checked_sub(event.participants.len())?;
    if free == 0 {
        return None;
    }
    // rank r among non-participants, shifted past every participant at or below it
    let mut candidate = rng.gen_range(0..free);
    for &p in &event.participants {
        if p <= candidate {
            candidate += 1;
        } else {
            break;
        }
    }
    Some(candidate)
}

/// −ln σ(r̂(x⁺) − r̂(x⁻)), with the difference clamped to ±34.
pub fn pair_loss<T: Scalar>(
    params: &FmParameters<T>,
    x_pos: &SparseVector<T>,
    x_neg: &SparseVector<T>,
) -> Result<T> {
    let diff = params.score(x_pos)? - params.score(x_neg)?;
    Ok(softplus_neg(diff))
}

fn softplus_neg<T: Scalar>(diff: T) -> T {
    let bound = T::of(SIGMOID_CLAMP);
    let d = diff.max(-bound).min(bound);
    (-d).exp().ln_1p()
}

/// Gradient of [`pair_loss`] with respect to every parameter touched by the pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient<T> {
    pub w0: T,
    pub w: Vec<(usize, T)>,
    pub v: Vec<(usize, Vec<T>)>,
}

pub fn pair_gradient<T: Scalar>(
    params: &FmParameters<T>,
    x_pos: &SparseVector<T>,
    x_neg: &SparseVector<T>,
) -> Result<PairGradient<T>> {
    x_pos.check_dimension(params.n_features())?;
    x_neg.check_dimension(params.n_features())?;
    let d = params.latent_dim();
    let mut q_pos = vec![T::zero(); d];
    let mut q_neg = vec![T::zero(); d];
    let diff = params.score_with_sums(x_pos, &mut q_pos) - params.score_with_sums(x_neg, &mut q_neg);
    let delta = T::one() - sigmoid(diff);
    let mut grad = PairGradient {
        w0: T::zero(),
        w: Vec::new(),
        v: Vec::new(),
    };
    for_each_touched(x_pos, x_neg, |i, xp, xn| {
        let row = params.v_row(i);
        grad.w.push((i, -delta * (xp - xn)));
        let gv = row
            .iter()
            .enumerate()
            .map(|(f, &vif)| {
                -delta * ((xp * q_pos[f] - vif * xp * xp) - (xn * q_neg[f] - vif * xn * xn))
            })
            .collect();
        grad.v.push((i, gv));
    });
    Ok(grad)
}

/// Walks the union of the two index sets in increasing order.
fn for_each_touched<T: Scalar>(
    a: &SparseVector<T>,
    b: &SparseVector<T>,
    mut f: impl FnMut(usize, T, T),
) {
    let (a, b) = (a.entries(), b.entries());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&(ia, va)), Some(&(ib, vb))) if ia == ib => {
                f(ia, va, vb);
                i += 1;
                j += 1;
            }
            (Some(&(ia, va)), Some(&(ib, _))) if ia < ib => {
                f(ia, va, T::zero());
                i += 1;
            }
            (Some(&(ia, va)), None) => {
                f(ia, va, T::zero());
                i += 1;
            }
            (_, Some(&(ib, vb))) => {
                f(ib, T::zero(), vb);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
}

/// Reusable per-factor sums for SGD steps.
#[derive(Debug, Clone)]
pub struct StepWorkspace<T> {
    q_pos: Vec<T>,
    q_neg: Vec<T>,
}

impl<T: Scalar> StepWorkspace<T> {
    pub fn new(latent_dim: usize) -> Self {
        StepWorkspace {
            q_pos: vec![T::zero(); latent_dim],
            q_neg: vec![T::zero(); latent_dim],
        }
    }
}

/// One stochastic ascent step on the per-pair log-posterior.
///
/// With δ = 1 − σ(r̂(x⁺) − r̂(x⁻)), each touched θ becomes
/// θ + lr·(δ·∂(r̂(x⁺) − r̂(x⁻))/∂θ − λ·θ). The intercept is always touched.
pub fn pair_gradient_step<T: Scalar>(
    params: &mut FmParameters<T>,
    x_pos: &SparseVector<T>,
    x_neg: &SparseVector<T>,
    learning_rate: T,
    lambda_reg: T,
    workspace: &mut StepWorkspace<T>,
) -> Result<()> {
    x_pos.check_dimension(params.n_features())?;
    x_neg.check_dimension(params.n_features())?;
    let StepWorkspace { q_pos, q_neg } = workspace;
    let diff =
        params.score_with_sums(x_pos, q_pos) - params.score_with_sums(x_neg, q_neg);
    let delta = T::one() - sigmoid(diff);
    let mut finite = true;

    let w0 = params.w0();
    let w0 = w0 - learning_rate * lambda_reg * w0;
    *params.w0_mut() = w0;
    finite &= w0.is_finite();

    for_each_touched(x_pos, x_neg, |i, xp, xn| {
        let wi = params.w()[i];
        let wi = wi + learning_rate * (delta * (xp - xn) - lambda_reg * wi);
        params.w_mut()[i] = wi;
        finite &= wi.is_finite();
        let (xp2, xn2) = (xp * xp, xn * xn);
        for ((vif, &qp), &qn) in params.v_row_mut(i).iter_mut().zip(q_pos.iter()).zip(q_neg.iter()) {
            let g = (xp * qp - *vif * xp2) - (xn * qn - *vif * xn2);
            *vif = *vif + learning_rate * (delta * g - lambda_reg * *vif);
            finite &= vif.is_finite();
        }
    });

    if finite {
        Ok(())
    } else {
        Err(Error::NonFinite {
            learning_rate: learning_rate.as_f64(),
        })
    }
}

/// Scratch space for [`shared_event_step`].
#[derive(Debug, Clone)]
struct SharedEventWorkspace<T> {
    context: Vec<T>,
    gap: Vec<T>,
}

impl<T: Scalar> SharedEventWorkspace<T> {
    fn new(latent_dim: usize) -> Self {
        SharedEventWorkspace {
            context: vec![T::zero(); latent_dim],
            gap: vec![T::zero(); latent_dim],
        }
    }
}

/// r̂(x⁺) − r̂(x⁻) for instances that share the event part and differ only in
/// the supplier one-hot. Leaves `c_f = Σ_j v_{j,f} x_j` over the event part
/// in `ws.context` and `v_pos − v_neg` in `ws.gap`.
fn shared_event_diff<T: Scalar>(
    params: &FmParameters<T>,
    offset: usize,
    event: &SparseVector<T>,
    pos: usize,
    neg: usize,
    ws: &mut SharedEventWorkspace<T>,
) -> T {
    let d = params.latent_dim();
    let v = params.v();
    ws.context.iter_mut().for_each(|c| *c = T::zero());
    for &(j, x) in event.entries() {
        let row = &v[(offset + j) * d..(offset + j + 1) * d];
        for (c, &vjf) in ws.context.iter_mut().zip(row) {
            *c = *c + vjf * x;
        }
    }
    let (vp, vn) = (params.v_row(pos), params.v_row(neg));
    let mut diff = params.w()[pos] - params.w()[neg];
    for f in 0..d {
        let g = vp[f] - vn[f];
        ws.gap[f] = g;
        diff = diff + g * ws.context[f];
    }
    diff
}

/// [`pair_gradient_step`] for the instance pair
/// `(encode_instance(pos, event), encode_instance(neg, event))`, without
/// building either instance. The event part cancels from the linear terms
/// and its pairwise terms, leaving O(nnz·D) work.
#[allow(clippy::too_many_arguments)]
fn shared_event_step<T: Scalar>(
    params: &mut FmParameters<T>,
    offset: usize,
    event: &SparseVector<T>,
    pos: usize,
    neg: usize,
    learning_rate: T,
    lambda_reg: T,
    ws: &mut SharedEventWorkspace<T>,
) -> Result<()> {
    let diff = shared_event_diff(params, offset, event, pos, neg, ws);
    let delta = T::one() - sigmoid(diff);
    let d = params.latent_dim();
    let (lr, lambda) = (learning_rate, lambda_reg);
    let mut finite = true;

    let w0 = params.w0();
    let w0 = w0 - lr * lambda * w0;
    *params.w0_mut() = w0;
    finite &= w0.is_finite();

    {
        let w = params.w_mut();
        for (i, sign) in [(pos, T::one()), (neg, -T::one())] {
            w[i] = w[i] + lr * (sign * delta - lambda * w[i]);
            finite &= w[i].is_finite();
        }
        for &(j, _) in event.entries() {
            let i = offset + j;
            w[i] = w[i] - lr * lambda * w[i];
        }
    }

    let v = params.v_mut();
    for &(j, x) in event.entries() {
        let row = &mut v[(offset + j) * d..(offset + j + 1) * d];
        let scale = delta * x;
        for (vjf, &g) in row.iter_mut().zip(&ws.gap) {
            *vjf = *vjf + lr * (scale * g - lambda * *vjf);
            finite &= vjf.is_finite();
        }
    }
    for (i, sign) in [(pos, T::one()), (neg, -T::one())] {
        let row = &mut v[i * d..(i + 1) * d];
        for (vif, &c) in row.iter_mut().zip(&ws.context) {
            *vif = *vif + lr * (sign * delta * c - lambda * *vif);
            finite &= vif.is_finite();
        }
    }

    if finite {
        Ok(())
    } else {
        Err(Error::NonFinite {
            learning_rate: learning_rate.as_f64(),
        })
    }
}

/// Trained parameters and the probe loss before training and after each epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: FmParameters<T>,
    pub loss_history: Vec<f64>,
}

impl<T> TrainOutcome<T> {
    pub fn initial_loss(&self) -> f64 {
        self.loss_history[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history holds the initial loss")
    }

    /// `epoch,mean_pair_loss` rows; epoch 0 is before any update.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,mean_pair_loss\n");
        for (epoch, loss) in self.loss_history.iter().enumerate() {
            writeln!(out, "{},{}", epoch, loss).expect("write to string");
        }
        out
    }
}

/// SGD over all positives of `train_events`, `negatives_per_positive` fresh
/// negatives per positive per epoch. Events in which every supplier took part
/// have no negatives and are skipped.
pub fn train<T: Scalar>(
    dataset: &InteractionDataset,
    train_events: &[usize],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let schema = dataset.schema();
    let n_suppliers = dataset.n_suppliers();
    if n_suppliers < 2 {
        return Err(Error::EmptyDataset("training needs at least two suppliers".into()));
    }
    let mut positives = Vec::new();
    for &e in train_events {
        let event = dataset.event(e);
        if event.participants.len() >= n_suppliers {
            warn!("event {} has no negatives; skipped in training", event.id);
            continue;
        }
        positives.extend(event.participants.iter().map(|&s| (e, s)));
    }
    if positives.is_empty() {
        return Err(Error::EmptyDataset("no positive interactions to train on".into()));
    }

    let features: Vec<SparseVector<T>> = dataset.events().iter().map(|e| e.features.cast()).collect();
    let mut params = FmParameters::<T>::init(
        schema.dimension(),
        config.latent_dim,
        config.init_sigma,
        derive_seed(config.seed, "init", &[]),
    )?;

    let offset = schema.event_offset();
    let probe: Vec<(usize, usize, usize)> = {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "probe", &[]));
        let mut order = positives.clone();
        order.shuffle(&mut rng);
        order.truncate(config.probe_size.max(1));
        order
            .into_iter()
            .map(|(e, s)| {
                let neg = draw_non_participant(dataset.event(e), n_suppliers, &mut rng)
                    .expect("events without negatives were skipped");
                (e, s, neg)
            })
            .collect()
    };
    let mut workspace = SharedEventWorkspace::new(config.latent_dim);
    let probe_loss = |params: &FmParameters<T>, ws: &mut SharedEventWorkspace<T>| -> f64 {
        let total: f64 = probe
            .iter()
            .map(|&(e, p, n)| {
                let diff = shared_event_diff(params, offset, &features[e], p, n, ws);
                softplus_neg(diff).as_f64()
            })
            .sum();
        total / probe.len() as f64
    };

    let mut loss_history = Vec::with_capacity(config.n_iterations + 1);
    loss_history.push(probe_loss(&params, &mut workspace));

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "sgd", &[]));
    let lr = T::of(config.learning_rate);
    let lambda = T::of(config.lambda_reg);
    for epoch in 0..config.n_iterations {
        positives.shuffle(&mut rng);
        for &(e, s) in &positives {
            for _ in 0..config.negatives_per_positive {
                let neg = draw_non_participant(dataset.event(e), n_suppliers, &mut rng)
                    .expect("events without negatives were skipped");
                shared_event_step(&mut params, offset, &features[e], s, neg, lr, lambda, &mut workspace)?;
            }
        }
        let loss = probe_loss(&params, &mut workspace);
        debug!("epoch {}: probe loss {:.6}", epoch + 1, loss);
        loss_history.push(loss);
    }
    Ok(TrainOutcome {
        params,
        loss_history,
    })
}
