//! Parametric layers with hand-written backward passes.
//!
//! Every layer reads its parameters from a [`ParamStore`] by path and writes
//! gradients into [`Grads`] only for paths the [`GradSink`] asks for.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use super::params::{GradSink, Grads, ParamStore};

/// Intermediate value flowing through an encoder stack.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    /// Channel-major image feature map `[C, H, W]`.
    Map(Array3<f64>),
    /// Token sequence `[L, D]`.
    Seq(Array2<f64>),
    /// A single feature vector.
    Flat(Array1<f64>),
}

impl Activation {
    pub fn into_map(self) -> Array3<f64> {
        match self {
            Activation::Map(m) => m,
            other => panic!("expected feature map, got {}", other.kind()),
        }
    }

    pub fn into_seq(self) -> Array2<f64> {
        match self {
            Activation::Seq(s) => s,
            other => panic!("expected sequence, got {}", other.kind()),
        }
    }

    pub fn into_flat(self) -> Array1<f64> {
        match self {
            Activation::Flat(v) => v,
            other => panic!("expected vector, got {}", other.kind()),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Activation::Map(_) => "map",
            Activation::Seq(_) => "seq",
            Activation::Flat(_) => "flat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub path: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn weight_path(&self) -> String {
        format!("{}.weight", self.path)
    }

    pub fn bias_path(&self) -> String {
        format!("{}.bias", self.path)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        (
            (h + 2 * p - self.kernel) / self.stride + 1,
            (w + 2 * p - self.kernel) / self.stride + 1,
        )
    }

    /// Range of output columns whose tap `k` lands inside `[0, len)`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let p = self.pad() as isize;
        let s = self.stride as isize;
        let k = k as isize;
        // o*s + k - p >= 0  and  o*s + k - p < len
        let lo = ((p - k).max(0) + s - 1) / s;
        let hi = ((len as isize - 1 + p - k).div_euclid(s) + 1).clamp(0, out_len as isize);
        (lo as usize, hi.max(lo) as usize)
    }

    pub fn forward(&self, params: &ParamStore, x: &Array3<f64>) -> Array3<f64> {
        let (c_in, h, w) = x.dim();
        assert_eq!(c_in, self.in_channels, "{}: input channels", self.path);
        let (ho, wo) = self.output_size(h, w);
        let k = self.kernel;
        let s = self.stride;
        let p = self.pad();
        let weight = params.get(&self.weight_path());
        let weight = weight.as_slice().expect("standard layout");
        let bias = params.get(&self.bias_path());
        let bias = bias.as_slice().expect("standard layout");
        let xs = x.as_slice().expect("standard layout");

        let mut out = vec![0.0; self.out_channels * ho * wo];
        let (ranges_x, ranges_y): (Vec<_>, Vec<_>) = (0..k)
            .map(|t| (self.valid_range(t, w, wo), self.valid_range(t, h, ho)))
            .unzip();
        for o in 0..self.out_channels {
            let plane = &mut out[o * ho * wo..(o + 1) * ho * wo];
            plane.fill(bias[o]);
            for c in 0..c_in {
                let input = &xs[c * h * w..(c + 1) * h * w];
                for ky in 0..k {
                    let (oy0, oy1) = ranges_y[ky];
                    for kx in 0..k {
                        let wv = weight[((o * c_in + c) * k + ky) * k + kx];
                        let (ox0, ox1) = ranges_x[kx];
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - p;
                            let row_in = &input[iy * w..(iy + 1) * w];
                            let row_out = &mut plane[oy * wo..(oy + 1) * wo];
                            for ox in ox0..ox1 {
                                row_out[ox] += wv * row_in[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
        Array3::from_shape_vec((self.out_channels, ho, wo), out).expect("conv output shape")
    }

    /// Returns the input gradient when `need_input` is set.
    #[allow(clippy::needless_range_loop)]
    pub fn backward(
        &self,
        params: &ParamStore,
        x: &Array3<f64>,
        grad_out: &Array3<f64>,
        sink: GradSink<'_>,
        grads: &mut Grads,
        need_input: bool,
    ) -> Option<Array3<f64>> {
        let (c_in, h, w) = x.dim();
        let (_, ho, wo) = grad_out.dim();
        let k = self.kernel;
        let s = self.stride;
        let p = self.pad();
        let wpath = self.weight_path();
        let bpath = self.bias_path();
        let want_w = sink.wants(&wpath);
        let want_b = sink.wants(&bpath);
        if !(want_w || want_b || need_input) {
            return None;
        }
        let weight = params.get(&wpath);
        let weight = weight.as_slice().expect("standard layout");
        let xs = x.as_slice().expect("standard layout");
        let gs = grad_out.as_slice().expect("standard layout");

        let mut gw = if want_w { vec![0.0; weight.len()] } else { Vec::new() };
        let mut gx = if need_input { vec![0.0; xs.len()] } else { Vec::new() };
        let (ranges_x, ranges_y): (Vec<_>, Vec<_>) = (0..k)
            .map(|t| (self.valid_range(t, w, wo), self.valid_range(t, h, ho)))
            .unzip();

        if want_w || need_input {
            for o in 0..self.out_channels {
                let gplane = &gs[o * ho * wo..(o + 1) * ho * wo];
                for c in 0..c_in {
                    let input = &xs[c * h * w..(c + 1) * h * w];
                    for ky in 0..k {
                        let (oy0, oy1) = ranges_y[ky];
                        for kx in 0..k {
                            let widx = ((o * c_in + c) * k + ky) * k + kx;
                            let wv = weight[widx];
                            let (ox0, ox1) = ranges_x[kx];
                            let mut acc = 0.0;
                            for oy in oy0..oy1 {
                                let iy = oy * s + ky - p;
                                let grow = &gplane[oy * wo..(oy + 1) * wo];
                                if want_w {
                                    let row_in = &input[iy * w..(iy + 1) * w];
                                    for ox in ox0..ox1 {
                                        acc += grow[ox] * row_in[ox * s + kx - p];
                                    }
                                }
                                if need_input {
                                    let base = c * h * w + iy * w;
                                    let row_gx = &mut gx[base..base + w];
                                    for ox in ox0..ox1 {
                                        row_gx[ox * s + kx - p] += wv * grow[ox];
                                    }
                                }
                            }
                            if want_w {
                                gw[widx] += acc;
                            }
                        }
                    }
                }
            }
        }
        if want_w {
            grads.accumulate(&wpath, &self.weight_shape(), &gw);
        }
        if want_b {
            let gb: Vec<f64> = (0..self.out_channels)
                .map(|o| gs[o * ho * wo..(o + 1) * ho * wo].iter().sum())
                .collect();
            grads.accumulate(&bpath, &[self.out_channels], &gb);
        }
        need_input.then(|| Array3::from_shape_vec((c_in, h, w), gx).expect("input grad shape"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearSpec {
    pub path: String,
    pub in_features: usize,
    pub out_features: usize,
    pub bias: bool,
}

impl LinearSpec {
    pub fn weight_path(&self) -> String {
        format!("{}.weight", self.path)
    }

    pub fn bias_path(&self) -> String {
        format!("{}.bias", self.path)
    }

    /// `y = W x (+ b)` with `W` of shape `[out, in]`.
    pub fn forward(&self, params: &ParamStore, x: &Array1<f64>) -> Array1<f64> {
        let w = params.get(&self.weight_path());
        let w = w.as_slice().expect("standard layout");
        let xs = x.as_slice().expect("standard layout");
        assert_eq!(xs.len(), self.in_features, "{}: input size", self.path);
        let mut y: Vec<f64> = (0..self.out_features)
            .map(|o| {
                w[o * self.in_features..(o + 1) * self.in_features]
                    .iter()
                    .zip(xs)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        if self.bias {
            let b = params.get(&self.bias_path());
            for (v, bb) in y.iter_mut().zip(b.iter()) {
                *v += bb;
            }
        }
        Array1::from(y)
    }

    pub fn backward(
        &self,
        params: &ParamStore,
        x: &Array1<f64>,
        grad_out: &Array1<f64>,
        sink: GradSink<'_>,
        grads: &mut Grads,
        need_input: bool,
    ) -> Option<Array1<f64>> {
        let wpath = self.weight_path();
        let xs = x.as_slice().expect("standard layout");
        let g = grad_out.as_slice().expect("standard layout");
        if sink.wants(&wpath) {
            let mut gw = vec![0.0; self.in_features * self.out_features];
            for o in 0..self.out_features {
                for i in 0..self.in_features {
                    gw[o * self.in_features + i] = g[o] * xs[i];
                }
            }
            grads.accumulate(&wpath, &[self.out_features, self.in_features], &gw);
        }
        if self.bias && sink.wants(&self.bias_path()) {
            grads.accumulate(&self.bias_path(), &[self.out_features], g);
        }
        if !need_input {
            return None;
        }
        let w = params.get(&wpath);
        let w = w.as_slice().expect("standard layout");
        let mut gx = vec![0.0; self.in_features];
        for o in 0..self.out_features {
            let row = &w[o * self.in_features..(o + 1) * self.in_features];
            for (gi, wi) in gx.iter_mut().zip(row) {
                *gi += g[o] * wi;
            }
        }
        Some(Array1::from(gx))
    }
}

/// Two 3x3 convolutions with a residual shortcut (1x1 projection when the
/// shape changes).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualSpec {
    pub path: String,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub shortcut: Option<ConvSpec>,
}

impl ResidualSpec {
    pub fn new(path: &str, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        let conv = |name: &str, cin, k, s| ConvSpec {
            path: format!("{path}.{name}"),
            in_channels: cin,
            out_channels,
            kernel: k,
            stride: s,
        };
        let shortcut =
            (stride != 1 || in_channels != out_channels).then(|| conv("shortcut", in_channels, 1, stride));
        Self {
            path: path.to_string(),
            conv1: conv("conv1", in_channels, 3, stride),
            conv2: conv("conv2", out_channels, 3, 1),
            shortcut,
        }
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvSpec> {
        [&self.conv1, &self.conv2]
            .into_iter()
            .chain(self.shortcut.as_ref())
    }
}

/// Aggregates a feature map into `bands` horizontal stripes and averages each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandPoolSpec {
    pub bands: usize,
}

impl BandPoolSpec {
    fn band_rows(&self, h: usize, b: usize) -> (usize, usize) {
        (b * h / self.bands, (b + 1) * h / self.bands)
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array1<f64> {
        let (c, h, w) = x.dim();
        let xs = x.as_slice().expect("standard layout");
        let mut out = Vec::with_capacity(c * self.bands);
        for ch in 0..c {
            for b in 0..self.bands {
                let (r0, r1) = self.band_rows(h, b);
                let slice = &xs[ch * h * w + r0 * w..ch * h * w + r1 * w];
                out.push(slice.iter().sum::<f64>() / slice.len() as f64);
            }
        }
        Array1::from(out)
    }

    pub fn backward(&self, dims: (usize, usize, usize), grad_out: &Array1<f64>) -> Array3<f64> {
        let (c, h, w) = dims;
        let mut gx = vec![0.0; c * h * w];
        for ch in 0..c {
            for b in 0..self.bands {
                let (r0, r1) = self.band_rows(h, b);
                let g = grad_out[ch * self.bands + b] / ((r1 - r0) * w) as f64;
                gx[ch * h * w + r0 * w..ch * h * w + r1 * w].fill(g);
            }
        }
        Array3::from_shape_vec((c, h, w), gx).expect("band pool grad shape")
    }
}

/// Residual token mixer: `H + tanh(H A + mean(H) B + c)`.
///
/// The mean term lets every position, in particular the end-of-text slot,
/// read the whole sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixerSpec {
    pub path: String,
    pub dim: usize,
}

impl MixerSpec {
    pub fn token_path(&self) -> String {
        format!("{}.token.weight", self.path)
    }

    pub fn context_path(&self) -> String {
        format!("{}.context.weight", self.path)
    }

    pub fn bias_path(&self) -> String {
        format!("{}.bias", self.path)
    }

    fn mat(params: &ParamStore, path: &str, dim: usize) -> Array2<f64> {
        params
            .get(path)
            .clone()
            .into_shape_with_order((dim, dim))
            .expect("square mixer weight")
    }

    /// Returns (output, tanh activations, row mean).
    pub fn forward(
        &self,
        params: &ParamStore,
        h: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let a = Self::mat(params, &self.token_path(), self.dim);
        let b = Self::mat(params, &self.context_path(), self.dim);
        let bias = params.get(&self.bias_path());
        let bias = Array1::from(bias.iter().copied().collect::<Vec<_>>());
        let mean = h.mean_axis(ndarray::Axis(0)).expect("non-empty sequence");
        let ctx = mean.dot(&b) + &bias;
        let mut z = h.dot(&a);
        z += &ctx;
        let t = z.mapv(f64::tanh);
        (h + &t, t, mean)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &ParamStore,
        h: &Array2<f64>,
        t: &Array2<f64>,
        mean: &Array1<f64>,
        grad_out: &Array2<f64>,
        sink: GradSink<'_>,
        grads: &mut Grads,
    ) -> Array2<f64> {
        let rows = h.nrows() as f64;
        let a = Self::mat(params, &self.token_path(), self.dim);
        let b = Self::mat(params, &self.context_path(), self.dim);
        let dz = grad_out * &t.mapv(|v| 1.0 - v * v);
        let dz_sum = dz.sum_axis(ndarray::Axis(0));
        if sink.wants(&self.token_path()) {
            let ga = h.t().dot(&dz);
            grads.accumulate(&self.token_path(), &[self.dim, self.dim], ga.as_slice().expect("layout"));
        }
        if sink.wants(&self.context_path()) {
            let gb = outer(mean, &dz_sum);
            grads.accumulate(&self.context_path(), &[self.dim, self.dim], gb.as_slice().expect("layout"));
        }
        if sink.wants(&self.bias_path()) {
            grads.accumulate(&self.bias_path(), &[self.dim], dz_sum.as_slice().expect("layout"));
        }
        let mut gh = grad_out + &dz.dot(&a.t());
        let gmean = b.dot(&dz_sum) / rows;
        gh += &gmean;
        gh
    }
}

pub(crate) fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[[i, j]] = ai * bj;
        }
    }
    out
}

pub(crate) fn relu3(x: &mut Array3<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes `grad` wherever the post-ReLU activation is not positive.
pub(crate) fn relu3_backward(activated: &Array3<f64>, grad: &mut Array3<f64>) {
    ndarray::Zip::from(grad)
        .and(activated)
        .for_each(|g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
}
