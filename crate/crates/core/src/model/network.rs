use serde::{Deserialize, Serialize};

use super::config::{path_widths, AINetConfig, AIUnitSpec, ShortcutKind};
use super::graph::{NodeId, Op, Tape};
use super::ops::{self, ConvGeom, PoolGeometry};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    ConvWeight,
    NormScale,
    NormShift,
    /// Running statistics; carried in checkpoints, never trained.
    RunningMean,
    RunningVar,
    LinearWeight,
    LinearBias,
}

impl ParamKind {
    pub fn is_learnable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Weights that carry the L2 penalty.
    pub fn is_decayed(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::LinearWeight)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamGroup {
    FeatureExtractor,
    Classifier,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub kind: ParamKind,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

impl ParamInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Convolution followed by normalization and an optional rectifier.
#[derive(Clone, Debug)]
pub(crate) struct ConvBlock {
    pub weight: usize,
    pub scale: usize,
    pub shift: usize,
    pub running_mean: usize,
    pub running_var: usize,
    pub geom: ConvGeom,
    pub relu: bool,
    pub out_channels: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct SubUnitPlan {
    pub paths: Vec<Vec<ConvBlock>>,
    pub shortcut: Option<ConvBlock>,
}

#[derive(Clone, Debug)]
pub(crate) enum Stage {
    Stem(ConvBlock),
    SubUnit(SubUnitPlan),
    Pool,
}

#[derive(Clone, Debug)]
pub(crate) struct Network {
    pub stages: Vec<Stage>,
    pub classifier_weight: usize,
    pub classifier_bias: usize,
    pub pool: PoolGeometry,
    pub levels: Vec<usize>,
}

struct Registry {
    infos: Vec<ParamInfo>,
}

impl Registry {
    fn add(&mut self, name: String, kind: ParamKind, group: ParamGroup, shape: Vec<usize>, fan_in: usize) -> usize {
        self.infos.push(ParamInfo {
            name,
            kind,
            group,
            shape,
            fan_in,
        });
        self.infos.len() - 1
    }

    fn conv_block(&mut self, prefix: &str, cin: usize, cout: usize, kernel: [usize; 3], relu: bool) -> ConvBlock {
        let fe = ParamGroup::FeatureExtractor;
        let geom = ConvGeom::same(kernel);
        let weight = self.add(
            format!("{prefix}.conv.weight"),
            ParamKind::ConvWeight,
            fe,
            vec![cout, cin, kernel[0], kernel[1], kernel[2]],
            cin * geom.volume(),
        );
        let scale = self.add(format!("{prefix}.norm.weight"), ParamKind::NormScale, fe, vec![cout], 0);
        let shift = self.add(format!("{prefix}.norm.bias"), ParamKind::NormShift, fe, vec![cout], 0);
        let running_mean = self.add(
            format!("{prefix}.norm.running_mean"),
            ParamKind::RunningMean,
            fe,
            vec![cout],
            0,
        );
        let running_var = self.add(
            format!("{prefix}.norm.running_var"),
            ParamKind::RunningVar,
            fe,
            vec![cout],
            0,
        );
        ConvBlock {
            weight,
            scale,
            shift,
            running_mean,
            running_var,
            geom,
            relu,
            out_channels: cout,
        }
    }
}

fn sub_unit_plan(reg: &mut Registry, prefix: &str, spec: AIUnitSpec) -> Result<SubUnitPlan> {
    let split = path_widths(spec.width)?;
    let k = spec.kind.kernel();
    let pw = [1, 1, 1];
    let cin = spec.in_channels;
    let paths = vec![
        vec![reg.conv_block(&format!("{prefix}.path1.0"), cin, split.p1, pw, true)],
        vec![
            reg.conv_block(&format!("{prefix}.path2.0"), cin, split.p2_pw, pw, true),
            reg.conv_block(&format!("{prefix}.path2.1"), split.p2_pw, split.p2_conv, k, true),
        ],
        vec![
            reg.conv_block(&format!("{prefix}.path3.0"), cin, split.p3_pw, pw, true),
            reg.conv_block(&format!("{prefix}.path3.1"), split.p3_pw, split.p3_a, k, true),
            reg.conv_block(&format!("{prefix}.path3.2"), split.p3_a, split.p3_b, k, true),
        ],
    ];
    let concat: usize = paths
        .iter()
        .map(|p| p.last().expect("non-empty path").out_channels)
        .sum();
    let shortcut = match spec.shortcut {
        ShortcutKind::Identity => None,
        ShortcutKind::PointwiseProjection => {
            Some(reg.conv_block(&format!("{prefix}.shortcut"), cin, spec.width, pw, false))
        }
    };
    let shortcut_channels = shortcut.as_ref().map_or(cin, |s| s.out_channels);
    if concat != spec.width || shortcut_channels != spec.width {
        return Err(Error::InvalidConfig(format!(
            "{prefix}: paths give {concat} channels and shortcut {shortcut_channels}, unit width is {}",
            spec.width
        )));
    }
    Ok(SubUnitPlan { paths, shortcut })
}

/// Lays out the parameters and stages for `config`. Parameter order is fixed
/// by the configuration alone.
pub(crate) fn plan(config: &AINetConfig) -> Result<(Network, Vec<ParamInfo>)> {
    config.validate()?;
    let mut reg = Registry { infos: Vec::new() };
    let mut stages = vec![Stage::Stem(reg.conv_block(
        "stem",
        1,
        config.stem.out_channels,
        config.stem.kernel,
        true,
    ))];
    let subs = config.sub_units();
    let mut position = 0usize;
    for unit in 1..=config.unit_widths.len() {
        for spec in subs.iter().filter(|s| s.unit == unit) {
            let prefix = format!("unit{unit}.{position}.{}", spec.kind.as_str());
            stages.push(Stage::SubUnit(sub_unit_plan(&mut reg, &prefix, *spec)?));
            position += 1;
        }
        if config.pool_after.contains(&unit) {
            stages.push(Stage::Pool);
        }
    }
    let features = config.feature_len();
    let cls = ParamGroup::Classifier;
    let classifier_weight = reg.add(
        "classifier.weight".into(),
        ParamKind::LinearWeight,
        cls,
        vec![config.num_classes, features],
        features,
    );
    let classifier_bias = reg.add(
        "classifier.bias".into(),
        ParamKind::LinearBias,
        cls,
        vec![config.num_classes],
        0,
    );
    Ok((
        Network {
            stages,
            classifier_weight,
            classifier_bias,
            pool: config.pool,
            levels: config.pyramid_levels.clone(),
        },
        reg.infos,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Mode {
    Train,
    Eval,
}

pub(crate) struct Outputs {
    pub features: NodeId,
    pub log_probs: NodeId,
}

fn conv_block<T: Real>(
    tape: &mut Tape<T>,
    params: &[Tensor<T>],
    block: &ConvBlock,
    input: NodeId,
    mode: Mode,
) -> NodeId {
    let conv = ops::conv3d_forward(tape.value(input), &params[block.weight], block.geom);
    let conv_id = tape.push(
        conv,
        Op::Conv {
            input,
            weight: block.weight,
            geom: block.geom,
        },
    );
    let gamma = params[block.scale].data();
    let beta = params[block.shift].data();
    let (value, stats) = match mode {
        Mode::Train => ops::norm_forward_train(tape.value(conv_id), gamma, beta, block.relu),
        Mode::Eval => {
            let mean = params[block.running_mean].data();
            let (y, invstd) = ops::norm_forward_eval(
                tape.value(conv_id),
                gamma,
                beta,
                mean,
                params[block.running_var].data(),
                block.relu,
            );
            (
                y,
                ops::NormStats {
                    mean: mean.to_vec(),
                    invstd,
                    var_unbiased: Vec::new(),
                },
            )
        }
    };
    tape.push(
        value,
        Op::Norm {
            input: conv_id,
            scale: block.scale,
            shift: block.shift,
            running_mean: block.running_mean,
            running_var: block.running_var,
            stats,
            relu: block.relu,
            training: mode == Mode::Train,
        },
    )
}

fn sub_unit<T: Real>(
    tape: &mut Tape<T>,
    params: &[Tensor<T>],
    plan: &SubUnitPlan,
    input: NodeId,
    mode: Mode,
) -> NodeId {
    let mut ends = Vec::with_capacity(plan.paths.len());
    let mut channels = Vec::with_capacity(plan.paths.len());
    for path in &plan.paths {
        let mut x = input;
        for block in path {
            x = conv_block(tape, params, block, x, mode);
        }
        ends.push(x);
        channels.push(path.last().expect("non-empty path").out_channels);
    }
    let parts: Vec<&Tensor<T>> = ends.iter().map(|&id| tape.value(id)).collect();
    let cat = ops::concat_channels(&parts);
    let cat_id = tape.push(cat, Op::Concat { inputs: ends, channels });
    let short = match &plan.shortcut {
        Some(block) => conv_block(tape, params, block, input, mode),
        None => input,
    };
    let mut sum = tape.value(cat_id).clone();
    sum.add_assign(tape.value(short));
    tape.push(sum, Op::Add { a: cat_id, b: short })
}

/// Runs the network on `input: [B, 1, L, S, S]`. With `keep == false`
/// intermediate values are released as soon as they are consumed.
pub(crate) fn run<T: Real>(
    net: &Network,
    params: &[Tensor<T>],
    input: Tensor<T>,
    mode: Mode,
    keep: bool,
) -> (Tape<T>, Outputs) {
    let mut tape = Tape::new();
    let mut x = tape.push(input, Op::Input);
    for stage in &net.stages {
        x = match stage {
            Stage::Stem(block) => conv_block(&mut tape, params, block, x, mode),
            Stage::SubUnit(plan) => sub_unit(&mut tape, params, plan, x, mode),
            Stage::Pool => {
                let (y, argmax) =
                    ops::maxpool_forward(tape.value(x), net.pool).expect("pool geometry checked against input");
                let per_plane = y.shape()[2..].iter().product();
                tape.push(
                    y,
                    Op::MaxPool {
                        input: x,
                        argmax,
                        per_plane,
                    },
                )
            }
        };
        if !keep {
            tape.release_before(x);
        }
    }
    let (pooled, argmax) = ops::pyramid_forward(tape.value(x), &net.levels);
    let features = tape.push(pooled, Op::Pyramid { input: x, argmax });
    let logits = ops::linear_forward(
        tape.value(features),
        &params[net.classifier_weight],
        params[net.classifier_bias].data(),
    );
    let logits_id = tape.push(
        logits,
        Op::Linear {
            input: features,
            weight: net.classifier_weight,
            bias: net.classifier_bias,
        },
    );
    let log_probs = ops::log_softmax_forward(tape.value(logits_id));
    let log_probs = tape.push(log_probs, Op::LogSoftmax { input: logits_id });
    (tape, Outputs { features, log_probs })
}
