//! A forward record of one network evaluation and its reverse pass.

use super::ops::{self, ConvGeom, NormStats};
use crate::tensor::{Real, Tensor};

pub(crate) type NodeId = usize;

pub(crate) enum Op<T> {
    Input,
    Conv {
        input: NodeId,
        weight: usize,
        geom: ConvGeom,
    },
    Norm {
        input: NodeId,
        scale: usize,
        shift: usize,
        running_mean: usize,
        running_var: usize,
        stats: NormStats<T>,
        relu: bool,
        training: bool,
    },
    MaxPool {
        input: NodeId,
        argmax: Vec<u32>,
        per_plane: usize,
    },
    Concat {
        inputs: Vec<NodeId>,
        channels: Vec<usize>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Pyramid {
        input: NodeId,
        argmax: Vec<u32>,
    },
    Linear {
        input: NodeId,
        weight: usize,
        bias: usize,
    },
    LogSoftmax {
        input: NodeId,
    },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub shape: Vec<usize>,
    pub op: Op<T>,
}

pub(crate) struct Tape<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        let shape = value.shape().to_vec();
        self.nodes.push(Node { value, shape, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    /// Drops the stored values of every node before `keep`. Used when no
    /// reverse pass will follow.
    pub fn release_before(&mut self, keep: NodeId) {
        for node in &mut self.nodes[..keep] {
            if !node.value.is_empty() {
                node.value = Tensor::zeros(&[0]);
            }
        }
    }

    /// Batch statistics of every normalization layer run in training mode,
    /// keyed by the running-mean and running-variance buffer indices.
    pub fn norm_updates(&self) -> impl Iterator<Item = (usize, usize, &NormStats<T>)> {
        self.nodes.iter().filter_map(|n| match &n.op {
            Op::Norm {
                running_mean,
                running_var,
                stats,
                training: true,
                ..
            } => Some((*running_mean, *running_var, stats)),
            _ => None,
        })
    }

    /// Reverse pass from `output` seeded with `seed`. Returns one gradient
    /// per entry of `params`; entries never touched stay zero.
    pub fn backward(&self, params: &[Tensor<T>], output: NodeId, seed: Tensor<T>) -> Vec<Tensor<T>> {
        let mut param_grads: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output] = Some(seed);

        let accumulate = |grads: &mut Vec<Option<Tensor<T>>>, id: NodeId, g: Tensor<T>| match &mut grads[id] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        let needs_grad = |id: NodeId| !matches!(self.nodes[id].op, Op::Input);

        for id in (0..=output).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Conv { input, weight, geom } => {
                    let (dx, dw) =
                        ops::conv3d_backward(self.value(*input), &params[*weight], &g, *geom, needs_grad(*input));
                    param_grads[*weight].add_assign(&dw);
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *input, dx);
                    }
                }
                Op::Norm {
                    input,
                    scale,
                    shift,
                    stats,
                    relu,
                    training,
                    ..
                } => {
                    let (dx, dgamma, dbeta) = ops::norm_backward(
                        self.value(*input),
                        &node.value,
                        &g,
                        params[*scale].data(),
                        &stats.mean,
                        &stats.invstd,
                        *relu,
                        *training,
                    );
                    for (a, b) in param_grads[*scale].data_mut().iter_mut().zip(dgamma) {
                        *a = *a + b;
                    }
                    for (a, b) in param_grads[*shift].data_mut().iter_mut().zip(dbeta) {
                        *a = *a + b;
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::MaxPool {
                    input,
                    argmax,
                    per_plane,
                } => {
                    let dx = ops::scatter_argmax(&self.nodes[*input].shape, &g, argmax, *per_plane);
                    accumulate(&mut grads, *input, dx);
                }
                Op::Concat { inputs, channels } => {
                    for (part, input) in ops::split_channels(&g, channels).into_iter().zip(inputs) {
                        accumulate(&mut grads, *input, part);
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Pyramid { input, argmax } => {
                    let dx = ops::pyramid_backward(&self.nodes[*input].shape, &g, argmax);
                    accumulate(&mut grads, *input, dx);
                }
                Op::Linear { input, weight, bias } => {
                    let (dx, dw, db) = ops::linear_backward(self.value(*input), &params[*weight], &g);
                    param_grads[*weight].add_assign(&dw);
                    for (a, b) in param_grads[*bias].data_mut().iter_mut().zip(db) {
                        *a = *a + b;
                    }
                    accumulate(&mut grads, *input, dx);
                }
                Op::LogSoftmax { input } => {
                    let dx = ops::log_softmax_backward(&node.value, &g);
                    accumulate(&mut grads, *input, dx);
                }
            }
        }
        param_grads
    }
}
