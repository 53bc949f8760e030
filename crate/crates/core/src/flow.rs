//! Flow-matching objective, optimizer loop, and ODE sampler.
//!
//! The probability path is linear: r_tau = tau * r0 + (1 - tau) * eps with
//! target velocity r0 - eps, constant in tau. Training draws tau from a
//! sigmoid-normal distribution, minimizes the area- and channel-weighted
//! squared velocity error with decoupled-weight-decay Adam, and sampling
//! integrates the learned velocity from noise at tau = 0 to a residual at
//! tau = 1 with a fixed-step Euler or Heun scheme.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::net::{ParamGrads, VelocityNet};
use crate::norm::ResidualSample;
use crate::rng::{domain, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Heun,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FMConfig {
    pub n_sample_steps: usize,
    pub integrator: Integrator,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub n_train_steps: usize,
    pub seed: u64,
}

impl Default for FMConfig {
    fn default() -> Self {
        FMConfig {
            n_sample_steps: 50,
            integrator: Integrator::Euler,
            batch_size: 8,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.98,
            weight_decay: 0.05,
            n_train_steps: 400,
            seed: 0,
        }
    }
}

impl FMConfig {
    /// Zero learning rate is allowed as the no-op boundary so that the
    /// parameters-unchanged property is expressible.
    pub fn validate(&self) -> Result<()> {
        if self.n_sample_steps == 0 {
            return Err(Error::validation("n_sample_steps must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning rate must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::validation("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::validation("weight decay must be >= 0"));
        }
        Ok(())
    }
}

/// One point on the linear noise-to-data path.
pub struct PathPoint {
    pub tau: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub noisy: Field,
    pub target_velocity: Field,
}

/// tau = sigmoid(z), z ~ N(0, 1); concentrates training effort at
/// mid-path timesteps.
pub fn sample_timestep(rng: &mut impl Rng) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    1.0 / (1.0 + (-z).exp())
}

pub fn make_path_point(r0: &Field, eps: &Field, tau: f64) -> Result<PathPoint> {
    if !r0.same_shape(eps) {
        return Err(Error::validation("r0 and eps must share grid and catalog"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::validation(format!("tau {tau} outside [0, 1]")));
    }
    let alpha = tau;
    let sigma = 1.0 - tau;
    let noisy: Vec<f32> = r0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(r, e)| (alpha * *r as f64 + sigma * *e as f64) as f32)
        .collect();
    let velocity: Vec<f32> = r0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(r, e)| (*r as f64 - *e as f64) as f32)
        .collect();
    Ok(PathPoint {
        tau,
        alpha,
        sigma,
        noisy: Field::from_data(r0.grid().clone(), r0.channels().clone(), noisy, None)?,
        target_velocity: Field::from_data(
            r0.grid().clone(),
            r0.channels().clone(),
            velocity,
            None,
        )?,
    })
}

/// Per-element weights lw(c) * w(j) flattened channel-major; the loss is
/// their weighted squared-error sum divided by the channel count, so a
/// unit error under unit weights scores exactly 1.
fn element_weights(field: &Field) -> Vec<f64> {
    let grid = field.grid();
    let cat = field.channels();
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let mut out = Vec::with_capacity(cat.len() * h * w);
    for c in 0..cat.len() {
        let lw = cat.loss_weight(c);
        for j in 0..h {
            let cw = grid.cell_area_weight(j);
            for _ in 0..w {
                out.push(lw * cw);
            }
        }
    }
    out
}

pub fn weighted_fm_loss(predicted: &Field, target: &Field) -> Result<f64> {
    if !predicted.same_shape(target) {
        return Err(Error::validation(
            "predicted and target must share grid and catalog",
        ));
    }
    let weights = element_weights(predicted);
    let n_ch = predicted.channels().len() as f64;
    let mut acc = 0.0f64;
    for ((p, t), w) in predicted.data().iter().zip(target.data()).zip(&weights) {
        let e = *p as f64 - *t as f64;
        acc += w * e * e;
    }
    Ok(acc / n_ch)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    fn new(n: usize) -> AdamW {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &FMConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let eps = 1e-8;
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grads[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -=
                cfg.learning_rate * (mhat / (vhat.sqrt() + eps) + cfg.weight_decay * params[i]);
        }
    }
}

struct RawSample {
    cond: Vec<f64>,
    r0: Vec<f64>,
}

/// Trains the velocity net in place and returns the per-step loss history.
///
/// Each step draws `batch_size` (sample, tau, eps) triples in a fixed
/// order from one seeded stream, accumulates gradients sequentially, and
/// applies one decoupled-weight-decay Adam update.
pub fn train(
    samples: &[ResidualSample],
    net: &mut VelocityNet,
    cfg: &FMConfig,
) -> Result<Vec<TrainRecord>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::validation("no training samples"));
    }
    let grid = samples[0].conditioning.grid().clone();
    let catalog = samples[0].conditioning.channels().clone();
    if catalog.len() != net.descriptor().channels {
        return Err(Error::validation(format!(
            "net expects {} channels, samples have {}",
            net.descriptor().channels,
            catalog.len()
        )));
    }
    for s in samples {
        if !s.conditioning.same_shape(&s.target)
            || !s.conditioning.same_shape(&samples[0].conditioning)
        {
            return Err(Error::validation("inconsistent training sample shapes"));
        }
    }
    let raw: Vec<RawSample> = samples
        .iter()
        .map(|s| RawSample {
            cond: s.conditioning.data().iter().map(|v| *v as f64).collect(),
            r0: s.target.data().iter().map(|v| *v as f64).collect(),
        })
        .collect();
    let (h, w) = (grid.n_lat(), grid.n_lon());
    let n_px = catalog.len() * h * w;
    let weights = {
        let probe = Field::zeros(grid.clone(), catalog.clone());
        element_weights(&probe)
    };
    let n_ch = catalog.len() as f64;

    let mut rng = substream(cfg.seed, &[domain::TRAIN]);
    let mut opt = AdamW::new(net.param_count());
    let mut history = Vec::with_capacity(cfg.n_train_steps);
    let mut noisy = vec![0.0f64; n_px];
    let mut eps = vec![0.0f64; n_px];
    let mut upstream = vec![0.0f64; n_px];

    for step in 0..cfg.n_train_steps {
        let mut batch_grads: Option<ParamGrads> = None;
        let mut batch_loss = 0.0f64;
        for _ in 0..cfg.batch_size {
            let idx = rng.random_range(0..raw.len());
            let tau = sample_timestep(&mut rng);
            for e in eps.iter_mut() {
                *e = rng.sample(StandardNormal);
            }
            let sample = &raw[idx];
            for i in 0..n_px {
                noisy[i] = tau * sample.r0[i] + (1.0 - tau) * eps[i];
            }
            let (pred, tape) = net.forward_raw(&noisy, &sample.cond, h, w, tau);
            let mut loss = 0.0f64;
            for i in 0..n_px {
                let err = pred[i] - (sample.r0[i] - eps[i]);
                loss += weights[i] * err * err;
                upstream[i] = 2.0 * weights[i] * err / n_ch;
            }
            loss /= n_ch;
            batch_loss += loss;
            let grads = net.backward_raw(&tape, &upstream)?;
            match &mut batch_grads {
                Some(acc) => acc.add_assign(&grads),
                None => batch_grads = Some(grads),
            }
        }
        let mut grads = batch_grads.expect("batch_size >= 1");
        grads.scale(1.0 / cfg.batch_size as f64);
        let loss = batch_loss / cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite loss at training step {step}"
            )));
        }
        opt.step(net.params_mut(), grads.as_slice(), cfg);
        history.push(TrainRecord { step, loss });
    }
    Ok(history)
}

/// Integrates the learned velocity from noise to a normalized residual on
/// raw f64 buffers.
pub(crate) fn sample_residual_raw(
    net: &VelocityNet,
    cond: &[f64],
    h: usize,
    w: usize,
    cfg: &FMConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let n_px = net.descriptor().channels * h * w;
    let eps: Vec<f64> = (0..n_px).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    integrate_velocity(net, eps, cond, h, w, cfg)
}

/// Deterministic core of the sampler: integrates from an explicit initial
/// noise state, so degenerate noise can be injected in tests.
pub(crate) fn integrate_velocity(
    net: &VelocityNet,
    mut r: Vec<f64>,
    cond: &[f64],
    h: usize,
    w: usize,
    cfg: &FMConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n_px = net.descriptor().channels * h * w;
    if cond.len() != n_px || r.len() != n_px {
        return Err(Error::validation("conditioning or state has wrong shape"));
    }
    let n = cfg.n_sample_steps;
    let dt = 1.0 / n as f64;
    for s in 0..n {
        let tau0 = s as f64 * dt;
        let (v0, _) = net.forward_raw(&r, cond, h, w, tau0);
        match cfg.integrator {
            Integrator::Euler => {
                for (ri, vi) in r.iter_mut().zip(&v0) {
                    *ri += dt * vi;
                }
            }
            Integrator::Heun => {
                let tau1 = (s + 1) as f64 * dt;
                let pred: Vec<f64> = r.iter().zip(&v0).map(|(ri, vi)| ri + dt * vi).collect();
                let (v1, _) = net.forward_raw(&pred, cond, h, w, tau1);
                for i in 0..n_px {
                    r[i] += 0.5 * dt * (v0[i] + v1[i]);
                }
            }
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite state at sampling step {s}"
            )));
        }
    }
    Ok(r)
}

/// Draws one normalized residual conditioned on a normalized input field.
pub fn sample_residual(
    net: &VelocityNet,
    conditioning: &Field,
    cfg: &FMConfig,
    rng: &mut impl Rng,
) -> Result<Field> {
    if conditioning.channels().len() != net.descriptor().channels {
        return Err(Error::validation(format!(
            "net expects {} channels, conditioning has {}",
            net.descriptor().channels,
            conditioning.channels().len()
        )));
    }
    let grid = conditioning.grid();
    let cond: Vec<f64> = conditioning.data().iter().map(|v| *v as f64).collect();
    let out = sample_residual_raw(net, &cond, grid.n_lat(), grid.n_lon(), cfg, rng)?;
    let data: Vec<f32> = out.iter().map(|v| *v as f32).collect();
    Field::from_data(grid.clone(), conditioning.channels().clone(), data, None)
}
