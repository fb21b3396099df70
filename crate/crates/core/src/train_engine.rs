//! Supervised training: NLL loss with an L2 penalty, SGD with classical
//! momentum, a two-step learning-rate schedule, prediction and evaluation.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi_data::{BatchPlan, Pixel, Scene};
use crate::metrics::MetricsReport;
use crate::model::{ModelState, TrainPass};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub momentum: f64,
    pub l2_weight: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Number of trailing epochs run at `lr_final`.
    pub final_phase_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            momentum: 0.9,
            l2_weight: 1e-5,
            batch_size: 20,
            epochs: 60,
            lr_initial: 0.01,
            lr_final: 0.001,
            final_phase_epochs: 12,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l2_weight", self.l2_weight),
            ("lr_initial", self.lr_initial),
            ("lr_final", self.lr_final),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.final_phase_epochs > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "final_phase_epochs {} exceeds epochs {}",
                self.final_phase_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

/// Learning rate for 0-based `epoch`: `lr_initial` before
/// `epochs - final_phase_epochs`, `lr_final` from there on.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside 0..{}",
            config.epochs
        )));
    }
    Ok(if epoch < config.epochs - config.final_phase_epochs {
        config.lr_initial
    } else {
        config.lr_final
    })
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l == 0 || l > num_classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, num_classes }),
        None => Ok(()),
    }
}

/// Mean negative log-likelihood of 1-based `labels` under `log_probs [B, C]`.
pub fn nll<T: Real>(log_probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let s = log_probs.shape();
    if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for log-probabilities {s:?}",
            labels.len()
        )));
    }
    check_labels(labels, s[1])?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &l)| -log_probs.row(b)[l - 1].to_f64_lossy())
        .sum();
    Ok(total / labels.len() as f64)
}

/// `l2_weight` times the sum of squared convolution and classifier weights.
pub fn l2_penalty<T: Real>(model: &ModelState<T>, l2_weight: f64) -> f64 {
    let sum: f64 = model
        .infos()
        .iter()
        .zip(model.values())
        .filter(|(i, _)| i.kind.is_decayed())
        .map(|(_, v)| v.data().iter().map(|x| x.to_f64_lossy().powi(2)).sum::<f64>())
        .sum();
    l2_weight * sum
}

/// Full training objective: [`nll`] plus [`l2_penalty`].
pub fn loss<T: Real>(log_probs: &Tensor<T>, labels: &[usize], model: &ModelState<T>, l2_weight: f64) -> Result<f64> {
    Ok(nll(log_probs, labels)? + l2_penalty(model, l2_weight))
}

/// Gradient of the mean NLL with respect to the log-probabilities.
pub fn nll_grad<T: Real>(shape: &[usize], labels: &[usize]) -> Tensor<T> {
    let mut g = Tensor::zeros(shape);
    let c = shape[1];
    let w = T::from_f64_lossy(-1.0 / labels.len() as f64);
    for (b, &l) in labels.iter().enumerate() {
        g.data_mut()[b * c + l - 1] = w;
    }
    g
}

/// One training-mode evaluation with its loss and the gradient of the full
/// objective for every array (buffers get zeros).
pub struct Step<T> {
    pub pass: TrainPass<T>,
    pub loss: f64,
    pub grads: Vec<Tensor<T>>,
}

pub fn loss_and_gradients<T: Real>(
    model: &ModelState<T>,
    batch: Tensor<T>,
    labels: &[usize],
    l2_weight: f64,
) -> Result<Step<T>> {
    let pass = model.forward_train(batch)?;
    let loss = loss(pass.log_probs(), labels, model, l2_weight)?;
    let mut grads = pass.backward(model, nll_grad(pass.log_probs().shape(), labels))?;
    let two_l = T::from_f64_lossy(2.0 * l2_weight);
    for ((info, g), p) in model.infos().iter().zip(&mut grads).zip(model.values()) {
        if info.kind.is_decayed() {
            for (gv, &pv) in g.data_mut().iter_mut().zip(p.data()) {
                *gv = *gv + two_l * pv;
            }
        }
    }
    Ok(Step { pass, loss, grads })
}

/// Classical momentum update of every array whose scale is `Some`:
/// `v <- momentum * v + g`, then `p <- p - lr * scale * v`. A scale of zero
/// leaves both `p` and `v` untouched. Nothing is modified when any gradient
/// is non-finite.
pub fn sgd_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    velocity: &mut [Tensor<T>],
    lr: f64,
    momentum: f64,
    scales: &[Option<f64>],
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || velocity.len() != n || scales.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} parameters, {} gradients, {} velocities, {} scales",
            grads.len(),
            velocity.len(),
            scales.len()
        )));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(velocity.iter()).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::ShapeMismatch(format!(
                "array {i}: parameter {:?}, gradient {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        if scales[i].is_some() && !g.all_finite() {
            let bad = g.data().iter().position(|x| !x.is_finite()).unwrap_or(0);
            return Err(Error::Numerical(format!(
                "non-finite gradient in array {i} at element {bad}"
            )));
        }
    }
    let mu = T::from_f64_lossy(momentum);
    for (i, scale) in scales.iter().enumerate() {
        let Some(scale) = *scale else { continue };
        if scale == 0.0 {
            continue;
        }
        let step = T::from_f64_lossy(lr * scale);
        let (p, v) = (params[i].data_mut(), velocity[i].data_mut());
        for ((pv, vv), &gv) in p.iter_mut().zip(v.iter_mut()).zip(grads[i].data()) {
            *vv = mu * *vv + gv;
            *pv = *pv - step * *vv;
        }
    }
    Ok(())
}

/// Momentum buffers and per-array learning-rate scales for one model.
pub struct Sgd<T> {
    velocity: Vec<Tensor<T>>,
    momentum: f64,
}

impl<T: Real> Sgd<T> {
    pub fn new(model: &ModelState<T>, momentum: f64) -> Self {
        Sgd {
            velocity: model.values().iter().map(|v| Tensor::zeros(v.shape())).collect(),
            momentum,
        }
    }

    pub fn step(&mut self, model: &mut ModelState<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        let scales: Vec<Option<f64>> = model
            .infos()
            .iter()
            .map(|i| i.kind.is_learnable().then(|| model.group_lr_scale(i.group)))
            .collect();
        sgd_step(
            model.values_mut(),
            grads,
            &mut self.velocity,
            lr,
            self.momentum,
            &scales,
        )
    }
}

/// Row-wise argmax as 1-based classes; ties go to the lower class.
pub fn argmax_rows<T: Real>(scores: &Tensor<T>) -> Vec<usize> {
    let c = scores.shape()[1];
    scores
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = j;
                }
            }
            best + 1
        })
        .collect()
}

/// Inference-mode class predictions for `pixels`, evaluated `batch_size` at a time.
pub fn predict<T: Real>(
    model: &ModelState<T>,
    scene: &Scene,
    pixels: &[Pixel],
    batch_size: usize,
) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let size = model.config().patch_size;
    let mut out = Vec::with_capacity(pixels.len());
    for chunk in pixels.chunks(batch_size) {
        let x = scene.batch_tensor(chunk, size)?;
        out.extend(argmax_rows(&model.forward(&x)?));
    }
    Ok(out)
}

pub fn evaluate<T: Real>(
    model: &ModelState<T>,
    scene: &Scene,
    pixels: &[Pixel],
    batch_size: usize,
) -> Result<MetricsReport> {
    let predicted = predict(model, scene, pixels, batch_size)?;
    let truth: Vec<usize> = pixels.iter().map(|p| p.label).collect();
    MetricsReport::evaluate(&truth, &predicted, model.num_classes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch objectives.
    pub loss: f64,
    pub lr: f64,
    /// Fraction of training samples classified correctly by the training-mode
    /// forward passes of this epoch.
    pub train_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub train_samples: usize,
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
    /// Inference-mode accuracy on the training set after the last epoch.
    pub final_train_accuracy: f64,
    pub wall_time_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::json("train report", e))
    }

    /// `epoch,loss,lr,train_acc` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,lr,train_acc\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.loss, e.lr, e.train_acc);
        }
        out
    }
}

/// Training-set and optional held-out pixels of one scene.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub scene: &'a Scene,
    pub train: &'a [Pixel],
    pub test: Option<&'a [Pixel]>,
}

/// Runs `config.epochs` epochs of minibatch SGD. Batches are reshuffled every
/// epoch from `config.seed`; the result is a pure function of the inputs.
pub fn train<T: Real>(
    mut model: ModelState<T>,
    data: TrainData<'_>,
    config: &TrainConfig,
) -> Result<(ModelState<T>, TrainReport)> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    check_labels(
        &data.train.iter().map(|p| p.label).collect::<Vec<_>>(),
        model.num_classes(),
    )?;
    let started = Instant::now();
    let size = model.config().patch_size;
    let plan = BatchPlan::new(data.train.len(), config.batch_size, true, config.seed)?;
    let mut opt = Sgd::new(&model, config.momentum);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut steps = 0;

    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config)?;
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, idx) in plan.epoch(epoch as u64).iter().enumerate() {
            let pixels: Vec<Pixel> = idx.iter().map(|&i| data.train[i]).collect();
            let labels: Vec<usize> = pixels.iter().map(|p| p.label).collect();
            let batch = data.scene.batch_tensor(&pixels, size)?;
            let step = loss_and_gradients(&model, batch, &labels, config.l2_weight)?;
            if !step.loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            opt.step(&mut model, &step.grads, lr)
                .map_err(|e| Error::Numerical(format!("epoch {epoch}, batch {b}: {e}")))?;
            model.update_running_stats(&step.pass);
            loss_sum += step.loss * labels.len() as f64;
            correct += argmax_rows(step.pass.log_probs())
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            steps += 1;
        }
        let n = data.train.len() as f64;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n,
            lr,
            train_acc: correct as f64 / n,
        };
        log::info!(
            "epoch {:>3}  loss {:.5}  lr {}  train_acc {:.4}",
            epoch,
            record.loss,
            record.lr,
            record.train_acc
        );
        epochs.push(record);
    }

    let final_train_accuracy = {
        let predicted = predict(&model, data.scene, data.train, config.batch_size)?;
        let hits = predicted
            .iter()
            .zip(data.train)
            .filter(|(p, px)| **p == px.label)
            .count();
        hits as f64 / data.train.len() as f64
    };
    let metrics = match data.test {
        Some(test) if !test.is_empty() => Some(evaluate(&model, data.scene, test, config.batch_size)?),
        _ => None,
    };
    let report = TrainReport {
        config: config.clone(),
        train_samples: data.train.len(),
        steps,
        epochs,
        final_train_accuracy,
        wall_time_secs: started.elapsed().as_secs_f64(),
        metrics,
    };
    Ok((model, report))
}
