//! The asymmetric inception network.
//!
//! A `3x3x3` stem convolution feeds ten inception sub-units grouped into six
//! units of widths 32, 64, 64, 128, 128 and 256. Each sub-unit runs three
//! parallel paths (pointwise; pointwise + asymmetric conv; pointwise + two
//! asymmetric convs) whose concatenation is added to a shortcut. Space
//! sub-units convolve with `1x3x3` kernels and spectrum sub-units with
//! `3x1x1`. Four max-pooling layers shrink the volume, a spectral pyramid
//! pooling layer maps any band count to a fixed `256 * 6` vector, and a
//! fully connected layer with log-softmax produces class log-probabilities.
//!
//! Every convolution is followed by batch normalization and, on the paths, a
//! rectifier.

mod checkpoint;
mod config;
mod graph;
mod network;
pub(crate) mod ops;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{
    path_widths, AINetConfig, AIUnitSpec, LayerCensus, PathSplit, ShortcutKind, ShortcutRule, StemSpec, SubUnitKind,
    NUM_POOLS, NUM_UNITS,
};
pub use network::{ParamGroup, ParamInfo, ParamKind};
pub use ops::PoolGeometry;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use graph::Tape;
use network::{Mode, Network, Outputs};

/// Parameters and buffers of a built network together with its architecture.
#[derive(Clone, Debug)]
pub struct ModelState<T = f32> {
    config: AINetConfig,
    infos: Vec<ParamInfo>,
    values: Vec<Tensor<T>>,
    net: Network,
    feature_lr_scale: f64,
}

fn init_value<T: Real>(info: &ParamInfo, rng: &mut ChaCha8Rng) -> Tensor<T> {
    match info.kind {
        ParamKind::ConvWeight | ParamKind::LinearWeight => {
            let std = (2.0 / info.fan_in as f64).sqrt();
            let data = (0..info.numel())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    T::from_f64_lossy(z * std)
                })
                .collect();
            Tensor::from_vec(&info.shape, data).expect("sized by info")
        }
        ParamKind::NormScale | ParamKind::RunningVar => Tensor::filled(&info.shape, T::one()),
        ParamKind::NormShift | ParamKind::RunningMean | ParamKind::LinearBias => Tensor::zeros(&info.shape),
    }
}

/// Builds a freshly initialized network. Weights are zero-mean Gaussians with
/// standard deviation `sqrt(2 / fan_in)`, drawn in parameter order from a
/// stream seeded by `seed`; normalization starts as the identity and biases
/// at zero.
pub fn build_ainet<T: Real>(config: &AINetConfig, seed: u64) -> Result<ModelState<T>> {
    let (net, infos) = network::plan(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = infos.iter().map(|info| init_value(info, &mut rng)).collect();
    Ok(ModelState {
        config: config.clone(),
        infos,
        values,
        net,
        feature_lr_scale: 1.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamScope {
    /// Convolution kernels only, the convention of published parameter counts.
    ConvOnly,
    /// Every learnable value, including normalization and classifier.
    All,
}

pub fn count_parameters<T: Real>(model: &ModelState<T>, scope: ParamScope) -> usize {
    model
        .infos
        .iter()
        .filter(|info| match scope {
            ParamScope::ConvOnly => info.kind == ParamKind::ConvWeight,
            ParamScope::All => info.kind.is_learnable(),
        })
        .map(ParamInfo::numel)
        .sum()
}

/// Replaces the classifier with a fresh Gaussian head for `num_classes`.
/// Feature-extractor values are left untouched.
pub fn reinit_classifier<T: Real>(mut model: ModelState<T>, num_classes: usize, seed: u64) -> Result<ModelState<T>> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "classifier needs at least 2 classes, got {num_classes}"
        )));
    }
    let mut config = model.config.clone();
    config.num_classes = num_classes;
    let (net, infos) = network::plan(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (idx, info) in infos.iter().enumerate() {
        if info.group == ParamGroup::Classifier {
            model.values[idx] = init_value(info, &mut rng);
        } else {
            debug_assert_eq!(info, &model.infos[idx]);
        }
    }
    model.config = config;
    model.infos = infos;
    model.net = net;
    Ok(model)
}

/// Sets the learning-rate multiplier of the feature-extractor group; `0`
/// freezes it. The classifier group always trains at the full rate.
pub fn set_feature_lr_scale<T: Real>(mut model: ModelState<T>, scale: f64) -> Result<ModelState<T>> {
    model.set_feature_lr_scale(scale)?;
    Ok(model)
}

/// Spectral pyramid max pooling of one `[Ch, D, h, w]` feature map with bin
/// counts `levels`. Output is ordered by level, then channel, then bin.
pub fn pyramid_pool<T: Real>(features: &Tensor<T>, levels: &[usize]) -> Result<Vec<T>> {
    let s = features.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch(format!("expected [Ch, D, h, w], got {s:?}")));
    }
    let max_level = levels.iter().copied().max().unwrap_or(0);
    if levels.contains(&0) || max_level == 0 {
        return Err(Error::InvalidArgument(format!("invalid pyramid levels {levels:?}")));
    }
    if s[1] < max_level {
        return Err(Error::ShapeMismatch(format!(
            "spectral length {} is below {max_level} bins",
            s[1]
        )));
    }
    if s[2] == 0 || s[3] == 0 {
        return Err(Error::ShapeMismatch(format!("empty spatial extent in {s:?}")));
    }
    let batched = Tensor::from_vec(&[1, s[0], s[1], s[2], s[3]], features.data().to_vec())?;
    Ok(ops::pyramid_forward(&batched, levels).0.into_data())
}

/// One training-mode evaluation, kept for the reverse pass.
pub struct TrainPass<T> {
    tape: Tape<T>,
    outputs: Outputs,
}

impl<T: Real> TrainPass<T> {
    /// `[B, C]` class log-probabilities.
    pub fn log_probs(&self) -> &Tensor<T> {
        self.tape.value(self.outputs.log_probs)
    }

    /// Gradients of a scalar loss with respect to every parameter, given its
    /// gradient with respect to the log-probabilities. Buffers get zeros.
    pub fn backward(&self, model: &ModelState<T>, grad_log_probs: Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if grad_log_probs.shape() != self.log_probs().shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient shape {:?} does not match output {:?}",
                grad_log_probs.shape(),
                self.log_probs().shape()
            )));
        }
        Ok(self
            .tape
            .backward(&model.values, self.outputs.log_probs, grad_log_probs))
    }
}

impl<T: Real> ModelState<T> {
    pub fn config(&self) -> &AINetConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn infos(&self) -> &[ParamInfo] {
        &self.infos
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    /// Mutable access to every array. Shapes must be preserved.
    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.infos.iter().position(|i| i.name == name).map(|i| &self.values[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.infos
            .iter()
            .position(|i| i.name == name)
            .map(move |i| &mut self.values[i])
    }

    pub fn feature_lr_scale(&self) -> f64 {
        self.feature_lr_scale
    }

    pub fn feature_extractor_frozen(&self) -> bool {
        self.feature_lr_scale == 0.0
    }

    pub fn set_feature_lr_scale(&mut self, scale: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&scale) {
            return Err(Error::InvalidArgument(format!(
                "learning-rate scale {scale} outside [0, 1]"
            )));
        }
        self.feature_lr_scale = scale;
        Ok(())
    }

    /// Records `bands` as the spectral length the network is used with. No
    /// array changes shape; the pyramid pooling absorbs the difference.
    pub fn set_bands(&mut self, bands: usize) -> Result<()> {
        self.config.feature_map_shape(bands)?;
        self.config.bands = bands;
        Ok(())
    }

    pub fn group_lr_scale(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::FeatureExtractor => self.feature_lr_scale,
            ParamGroup::Classifier => 1.0,
        }
    }

    /// Copies of every feature-extractor array, in parameter order.
    pub fn feature_extractor(&self) -> Vec<(String, Tensor<T>)> {
        self.infos
            .iter()
            .zip(&self.values)
            .filter(|(i, _)| i.group == ParamGroup::FeatureExtractor)
            .map(|(i, v)| (i.name.clone(), v.clone()))
            .collect()
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let s = batch.shape();
        let size = self.config.patch_size;
        if s.len() != 5 || s[1] != 1 || s[3] != size || s[4] != size || s[0] == 0 {
            return Err(Error::ShapeMismatch(format!(
                "expected input [B, 1, L, {size}, {size}], got {s:?}"
            )));
        }
        self.config
            .feature_map_shape(s[2])
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        if !batch.all_finite() {
            return Err(Error::Numerical("input batch contains non-finite values".into()));
        }
        Ok(())
    }

    /// Class log-probabilities `[B, C]` in inference mode (running
    /// normalization statistics).
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(batch)?;
        let (mut tape, out) = network::run(&self.net, &self.values, batch.clone(), Mode::Eval, false);
        Ok(std::mem::replace(
            &mut tape.nodes[out.log_probs].value,
            Tensor::zeros(&[0]),
        ))
    }

    /// Pyramid-pooled features `[B, feature_len]` in inference mode.
    pub fn features(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(batch)?;
        let (mut tape, out) = network::run(&self.net, &self.values, batch.clone(), Mode::Eval, false);
        Ok(std::mem::replace(
            &mut tape.nodes[out.features].value,
            Tensor::zeros(&[0]),
        ))
    }

    /// Training-mode evaluation: normalization uses batch statistics and the
    /// record is kept for [`TrainPass::backward`].
    pub fn forward_train(&self, batch: Tensor<T>) -> Result<TrainPass<T>> {
        self.check_input(&batch)?;
        let (tape, outputs) = network::run(&self.net, &self.values, batch, Mode::Train, true);
        Ok(TrainPass { tape, outputs })
    }

    /// Folds the batch statistics of `pass` into the running estimates.
    pub fn update_running_stats(&mut self, pass: &TrainPass<T>) {
        let m = T::from_f64_lossy(ops::BN_MOMENTUM);
        let keep = T::one() - m;
        for (mean_idx, var_idx, stats) in pass.tape.norm_updates() {
            for (r, &b) in self.values[mean_idx].data_mut().iter_mut().zip(&stats.mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in self.values[var_idx].data_mut().iter_mut().zip(&stats.var_unbiased) {
                *r = keep * *r + m * b;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            infos: self.infos.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            net: self.net.clone(),
            feature_lr_scale: self.feature_lr_scale,
        }
    }

    pub(crate) fn from_parts(config: AINetConfig, values: Vec<Tensor<T>>, feature_lr_scale: f64) -> Result<Self> {
        let (net, infos) = network::plan(&config)?;
        if values.len() != infos.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} arrays, got {}",
                infos.len(),
                values.len()
            )));
        }
        for (info, v) in infos.iter().zip(&values) {
            if info.shape != v.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: expected shape {:?}, got {:?}",
                    info.name,
                    info.shape,
                    v.shape()
                )));
            }
        }
        let mut model = ModelState {
            config,
            infos,
            values,
            net,
            feature_lr_scale: 1.0,
        };
        model.set_feature_lr_scale(feature_lr_scale)?;
        Ok(model)
    }
}
