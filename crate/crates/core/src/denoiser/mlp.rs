//! Fully connected network with a sinusoidal time embedding and SiLU
//! activations, evaluated on row batches with hand-written reverse mode.
//!
//! Parameters live in one flat `f64` slice; [`LayerSlot`] records where each
//! layer's weight (stored `fan_in x fan_out`, row-major) and bias begin.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

const EMBED_MAX_PERIOD: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub weight_offset: usize,
    pub bias_offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    d: usize,
    embed_dim: usize,
    widths: Vec<usize>,
    layout: Vec<LayerSlot>,
}

/// Activations retained by a forward pass for the backward pass.
pub struct ForwardCache {
    /// Input to every layer; `inputs[0]` is the concatenated network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.output.view()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl Mlp {
    /// `d` data coordinates plus `embed_dim` (even) embedding channels in,
    /// `hidden` SiLU layers, `d` linear outputs.
    pub fn new(d: usize, embed_dim: usize, hidden: &[usize]) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("network dimension must be positive".into()));
        }
        if !embed_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("embedding width must be even, got {embed_dim}")));
        }
        if hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be positive".into()));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(d + embed_dim);
        widths.extend_from_slice(hidden);
        widths.push(d);
        let mut layout = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weight_offset = offset;
            let bias_offset = offset + fan_in * fan_out;
            offset = bias_offset + fan_out;
            layout.push(LayerSlot { weight_offset, bias_offset, fan_in, fan_out });
        }
        Ok(Self { d, embed_dim, widths, layout })
    }

    pub fn from_widths(widths: &[usize], embed_dim: usize) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output widths".into()));
        }
        let d = *widths.last().expect("non-empty");
        if widths[0] != d + embed_dim {
            return Err(Error::InvalidArgument(format!(
                "input width {} must equal output width {d} plus embedding {embed_dim}",
                widths[0]
            )));
        }
        Self::new(d, embed_dim, &widths[1..widths.len() - 1])
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layout(&self) -> &[LayerSlot] {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.last().map(|l| l.bias_offset + l.fan_out).unwrap_or(0)
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    pub fn init(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        for slot in &self.layout {
            let bound = 1.0 / (slot.fan_in as f64).sqrt();
            let end = slot.bias_offset + slot.fan_out;
            for p in &mut params[slot.weight_offset..end] {
                *p = rng.uniform_range(-bound, bound);
            }
        }
        params
    }

    fn weight<'a>(&self, params: &'a [f64], slot: &LayerSlot) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (slot.fan_in, slot.fan_out),
            &params[slot.weight_offset..slot.weight_offset + slot.fan_in * slot.fan_out],
        )
        .expect("layout matches parameter slice")
    }

    fn bias<'a>(&self, params: &'a [f64], slot: &LayerSlot) -> ArrayView1<'a, f64> {
        ArrayView1::from(&params[slot.bias_offset..slot.bias_offset + slot.fan_out])
    }

    /// Sinusoidal features `[sin(c f_k), cos(c f_k)]` with `f_k = 10000^(-k/half)`.
    pub fn embed(&self, c_noise: &[f64]) -> Array2<f64> {
        let half = self.embed_dim / 2;
        let mut out = Array2::zeros((c_noise.len(), self.embed_dim));
        for (mut row, &c) in out.rows_mut().into_iter().zip(c_noise) {
            for k in 0..half {
                let freq = (-(EMBED_MAX_PERIOD.ln()) * k as f64 / half as f64).exp();
                let (sin, cos) = (c * freq).sin_cos();
                row[k] = sin;
                row[half + k] = cos;
            }
        }
        out
    }

    fn check(&self, params: &[f64], input: &ArrayView2<f64>, c_noise: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch { expected: self.param_count(), got: params.len() });
        }
        if input.ncols() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: input.ncols() });
        }
        if c_noise.len() != input.nrows() {
            return Err(Error::DimensionMismatch { expected: input.nrows(), got: c_noise.len() });
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], input: ArrayView2<f64>, c_noise: &[f64]) -> Result<Array2<f64>> {
        Ok(self.forward_cached(params, input, c_noise)?.output)
    }

    pub fn forward_cached(&self, params: &[f64], input: ArrayView2<f64>, c_noise: &[f64]) -> Result<ForwardCache> {
        self.check(params, &input, c_noise)?;
        let mut a = if self.embed_dim > 0 {
            let emb = self.embed(c_noise);
            concatenate(Axis(1), &[input.reborrow(), emb.view()]).expect("matching row counts")
        } else {
            input.to_owned()
        };
        let n_layers = self.layout.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        for (l, slot) in self.layout.iter().enumerate() {
            let mut z = a.dot(&self.weight(params, slot));
            z += &self.bias(params, slot);
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("output of layer {l}")));
            }
            inputs.push(a);
            if l + 1 == n_layers {
                return Ok(ForwardCache { inputs, pre, output: z });
            }
            a = z.mapv(silu);
            pre.push(z);
        }
        unreachable!("network has at least one layer")
    }

    /// Reverse pass: accumulates `d loss / d params` into `grad` (if given)
    /// and returns `d loss / d input` for the data columns.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        d_output: ArrayView2<f64>,
        mut grad: Option<&mut [f64]>,
    ) -> Array2<f64> {
        let mut delta = d_output.to_owned();
        for (l, slot) in self.layout.iter().enumerate().rev() {
            if let Some(g) = grad.as_deref_mut() {
                let (w_part, rest) = g[slot.weight_offset..].split_at_mut(slot.fan_in * slot.fan_out);
                let mut gw = ArrayViewMut2::from_shape((slot.fan_in, slot.fan_out), w_part).expect("layout");
                general_mat_mul(1.0, &cache.inputs[l].t(), &delta, 1.0, &mut gw);
                for (gb, col) in rest[..slot.fan_out].iter_mut().zip(delta.columns()) {
                    *gb += col.sum();
                }
            }
            let mut back = delta.dot(&self.weight(params, slot).t());
            if l == 0 {
                return back.slice(s![.., ..self.d]).to_owned();
            }
            back.zip_mut_with(&cache.pre[l - 1], |b, &z| *b *= silu_grad(z));
            delta = back;
        }
        unreachable!("network has at least one layer")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layout_covers_every_parameter_once() {
        let net = Mlp::new(3, 64, &[128, 128, 128]).unwrap();
        assert_eq!(net.widths(), &[67, 128, 128, 128, 3]);
        let mut covered = vec![0u8; net.param_count()];
        for slot in net.layout() {
            for c in &mut covered[slot.weight_offset..slot.bias_offset + slot.fan_out] {
                *c += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
        assert_eq!(net.param_count(), 67 * 128 + 128 + 2 * (128 * 128 + 128) + 128 * 3 + 3);
    }

    #[test]
    fn embedding_at_zero() {
        let net = Mlp::new(2, 8, &[4]).unwrap();
        let e = net.embed(&[0.0]);
        assert_eq!(e.row(0).to_vec(), vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let e = net.embed(&[1.0]);
        assert_eq!(e[[0, 0]], 1.0_f64.sin());
        assert!((e[[0, 1]] - (0.1_f64).sin()).abs() < 1e-15);
    }

    #[test]
    fn forward_is_deterministic_and_rowwise() {
        let net = Mlp::new(2, 8, &[16, 16]).unwrap();
        let params = net.init(&mut RngStream::new(1));
        let x = array![[0.1, -0.2], [1.0, 2.0], [-3.0, 0.5]];
        let c = [1.0, 50.0, 700.0];
        let a = net.forward(&params, x.view(), &c).unwrap();
        let b = net.forward(&params, x.view(), &c).unwrap();
        assert_eq!(a, b);
        let single = net.forward(&params, x.slice(s![1..2, ..]), &c[1..2]).unwrap();
        assert_eq!(single.row(0), a.row(1));
    }

    #[test]
    fn width_mismatch_rejected() {
        let net = Mlp::new(2, 0, &[4]).unwrap();
        let params = vec![0.0; net.param_count()];
        assert!(net.forward(&params, array![[1.0, 2.0, 3.0]].view(), &[0.0]).is_err());
        assert!(net.forward(&params[1..], array![[1.0, 2.0]].view(), &[0.0]).is_err());
        assert!(Mlp::from_widths(&[3, 8, 2], 0).is_err());
        assert_eq!(Mlp::from_widths(&[6, 8, 2], 4).unwrap().widths(), &[6, 8, 2]);
    }

    #[test]
    fn nonfinite_layer_reported() {
        let net = Mlp::new(1, 0, &[1]).unwrap();
        let params = vec![f64::MAX, 0.0, f64::MAX, 0.0];
        let err = net.forward(&params, array![[10.0]].view(), &[0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref m) if m.contains("layer 0")), "{err}");
    }
}
