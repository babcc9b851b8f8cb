//! Ordered layer stacks: the building block behind every encoder.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use super::layers::{
    relu3, relu3_backward, Activation, BandPoolSpec, ConvSpec, LinearSpec, MixerSpec, ResidualSpec,
};
use super::params::{GradSink, Grads, ParamSet, ParamStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// Convolution followed by ReLU.
    ConvRelu(ConvSpec),
    Residual(ResidualSpec),
    BandPool(BandPoolSpec),
    Linear(LinearSpec),
    /// Adds a learned `[len, dim]` position table to a token sequence.
    Positional { path: String, len: usize, dim: usize },
    Mixer(MixerSpec),
    /// Picks the last row of a sequence (the end-of-text slot).
    LastToken,
}

impl Layer {
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let conv = |c: &ConvSpec| {
            vec![
                (c.weight_path(), c.weight_shape().to_vec()),
                (c.bias_path(), vec![c.out_channels]),
            ]
        };
        match self {
            Layer::ConvRelu(c) => conv(c),
            Layer::Residual(r) => r.convs().flat_map(conv).collect(),
            Layer::BandPool(_) | Layer::LastToken => Vec::new(),
            Layer::Linear(l) => {
                let mut v = vec![(l.weight_path(), vec![l.out_features, l.in_features])];
                if l.bias {
                    v.push((l.bias_path(), vec![l.out_features]));
                }
                v
            }
            Layer::Positional { path, len, dim } => vec![(path.clone(), vec![*len, *dim])],
            Layer::Mixer(m) => vec![
                (m.token_path(), vec![m.dim, m.dim]),
                (m.context_path(), vec![m.dim, m.dim]),
                (m.bias_path(), vec![m.dim]),
            ],
        }
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    ConvRelu { input: Array3<f64>, output: Array3<f64> },
    Residual {
        input: Array3<f64>,
        hidden: Array3<f64>,
        output: Array3<f64>,
    },
    BandPool { dims: (usize, usize, usize) },
    Linear { input: Array1<f64> },
    Positional,
    Mixer {
        input: Array2<f64>,
        tanh: Array2<f64>,
        mean: Array1<f64>,
    },
    LastToken { rows: usize, dim: usize },
}

/// Cached activations of one forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct StackTrace {
    caches: Vec<LayerCache>,
}

/// A named, ordered list of layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderStack {
    pub name: String,
    pub layers: Vec<Layer>,
}

impl EncoderStack {
    pub fn new(name: impl Into<String>, layers: Vec<Layer>) -> Self {
        Self {
            name: name.into(),
            layers,
        }
    }

    /// Every parameter path with its shape, in layer order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers.iter().flat_map(Layer::param_shapes).collect()
    }

    pub fn param_paths(&self) -> ParamSet {
        self.param_shapes().into_iter().map(|(p, _)| p).collect()
    }

    pub fn forward(&self, params: &ParamStore, input: Activation) -> (Activation, StackTrace) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut act = input;
        for layer in &self.layers {
            let (next, cache) = forward_layer(layer, params, act);
            caches.push(cache);
            act = next;
        }
        (act, StackTrace { caches })
    }

    /// Forward without keeping activations around.
    pub fn apply(&self, params: &ParamStore, input: Activation) -> Activation {
        self.layers
            .iter()
            .fold(input, |act, layer| forward_layer(layer, params, act).0)
    }

    /// Whether any parameter of this stack is in the sink.
    pub fn has_trainable(&self, sink: GradSink<'_>) -> bool {
        self.param_shapes().iter().any(|(p, _)| sink.wants(p))
    }

    /// Backpropagates `grad_out` through the stack. Returns the gradient with
    /// respect to the stack input when `need_input` is set.
    pub fn backward(
        &self,
        params: &ParamStore,
        trace: &StackTrace,
        grad_out: Activation,
        sink: GradSink<'_>,
        grads: &mut Grads,
        need_input: bool,
    ) -> Option<Activation> {
        // Layers below the lowest trainable one only matter for the input grad.
        let lowest_trainable = self
            .layers
            .iter()
            .position(|l| l.param_shapes().iter().any(|(p, _)| sink.wants(p)));
        let stop = if need_input {
            0
        } else {
            lowest_trainable?
        };
        let mut grad = grad_out;
        for i in (stop..self.layers.len()).rev() {
            let need = need_input || i > stop;
            grad = backward_layer(&self.layers[i], params, &trace.caches[i], grad, sink, grads, need)?;
        }
        need_input.then_some(grad)
    }
}

fn forward_layer(layer: &Layer, params: &ParamStore, act: Activation) -> (Activation, LayerCache) {
    match layer {
        Layer::ConvRelu(conv) => {
            let input = act.into_map();
            let mut out = conv.forward(params, &input);
            relu3(&mut out);
            (
                Activation::Map(out.clone()),
                LayerCache::ConvRelu { input, output: out },
            )
        }
        Layer::Residual(block) => {
            let input = act.into_map();
            let mut hidden = block.conv1.forward(params, &input);
            relu3(&mut hidden);
            let mut out = block.conv2.forward(params, &hidden);
            match &block.shortcut {
                Some(sc) => out += &sc.forward(params, &input),
                None => out += &input,
            }
            relu3(&mut out);
            (
                Activation::Map(out.clone()),
                LayerCache::Residual {
                    input,
                    hidden,
                    output: out,
                },
            )
        }
        Layer::BandPool(pool) => {
            let input = act.into_map();
            let dims = input.dim();
            (Activation::Flat(pool.forward(&input)), LayerCache::BandPool { dims })
        }
        Layer::Linear(lin) => {
            let input = act.into_flat();
            (
                Activation::Flat(lin.forward(params, &input)),
                LayerCache::Linear { input },
            )
        }
        Layer::Positional { path, dim, .. } => {
            let seq = act.into_seq();
            let rows = seq.nrows();
            let table = params.get(path);
            let table = table
                .view()
                .into_shape_with_order((table.len() / dim, *dim))
                .expect("positional table shape");
            let out = seq + table.slice(ndarray::s![..rows, ..]);
            (Activation::Seq(out), LayerCache::Positional)
        }
        Layer::Mixer(mixer) => {
            let input = act.into_seq();
            let (out, tanh, mean) = mixer.forward(params, &input);
            (
                Activation::Seq(out),
                LayerCache::Mixer { input, tanh, mean },
            )
        }
        Layer::LastToken => {
            let seq = act.into_seq();
            let (rows, dim) = seq.dim();
            let last = seq.row(rows - 1).to_owned();
            (Activation::Flat(last), LayerCache::LastToken { rows, dim })
        }
    }
}

fn backward_layer(
    layer: &Layer,
    params: &ParamStore,
    cache: &LayerCache,
    grad: Activation,
    sink: GradSink<'_>,
    grads: &mut Grads,
    need_input: bool,
) -> Option<Activation> {
    match (layer, cache) {
        (Layer::ConvRelu(conv), LayerCache::ConvRelu { input, output }) => {
            let mut g = grad.into_map();
            relu3_backward(output, &mut g);
            conv.backward(params, input, &g, sink, grads, need_input)
                .map(Activation::Map)
        }
        (
            Layer::Residual(block),
            LayerCache::Residual {
                input,
                hidden,
                output,
            },
        ) => {
            let mut g = grad.into_map();
            relu3_backward(output, &mut g);
            let mut g_hidden = block
                .conv2
                .backward(params, hidden, &g, sink, grads, true)
                .expect("hidden grad requested");
            relu3_backward(hidden, &mut g_hidden);
            let from_main = block
                .conv1
                .backward(params, input, &g_hidden, sink, grads, need_input);
            let from_short = match &block.shortcut {
                Some(sc) => sc.backward(params, input, &g, sink, grads, need_input),
                None => need_input.then(|| g.clone()),
            };
            match (from_main, from_short) {
                (Some(a), Some(b)) => Some(Activation::Map(a + b)),
                _ => None,
            }
        }
        (Layer::BandPool(pool), LayerCache::BandPool { dims }) => {
            need_input.then(|| Activation::Map(pool.backward(*dims, &grad.into_flat())))
        }
        (Layer::Linear(lin), LayerCache::Linear { input }) => lin
            .backward(params, input, &grad.into_flat(), sink, grads, need_input)
            .map(Activation::Flat),
        (Layer::Positional { path, len, dim }, LayerCache::Positional) => {
            let g = grad.into_seq();
            if sink.wants(path) {
                let mut full = Array2::<f64>::zeros((*len, *dim));
                full.slice_mut(ndarray::s![..g.nrows(), ..]).assign(&g);
                grads.accumulate(path, &[*len, *dim], full.as_slice().expect("layout"));
            }
            need_input.then_some(Activation::Seq(g))
        }
        (Layer::Mixer(mixer), LayerCache::Mixer { input, tanh, mean }) => {
            let g = mixer.backward(params, input, tanh, mean, &grad.into_seq(), sink, grads);
            need_input.then_some(Activation::Seq(g))
        }
        (Layer::LastToken, LayerCache::LastToken { rows, dim }) => need_input.then(|| {
            let mut g = Array2::zeros((*rows, *dim));
            g.row_mut(rows - 1).assign(&grad.into_flat());
            Activation::Seq(g)
        }),
        _ => unreachable!("layer/cache mismatch"),
    }
}
