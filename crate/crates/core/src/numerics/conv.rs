//! Replicate-padded cross-correlation kernels.
//!
//! Every output element is accumulated as `bias + Σ_in Σ_tap w·x` in exactly
//! that order. The inner loop runs across a row of output positions, each with
//! its own accumulator, so vectorization never reassociates a sum. Encoder and
//! decoder rely on this to round identical network outputs.

use std::borrow::Cow;

use crate::error::{Error, Result};

use super::Tensor;

/// Side(s) on which a layer replicates edge values before convolving.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    None,
    /// `kernel_size − 1` copies of the first value.
    ReplicateLeft,
    /// `kernel_size − 1` copies of the last value.
    ReplicateRight,
    /// `(kernel_size − 1)/2` copies on each side; preserves extent.
    ReplicateBoth,
}

impl Padding {
    pub fn code(self) -> u8 {
        match self {
            Padding::None => 0,
            Padding::ReplicateLeft => 1,
            Padding::ReplicateRight => 2,
            Padding::ReplicateBoth => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Padding::None,
            1 => Padding::ReplicateLeft,
            2 => Padding::ReplicateRight,
            3 => Padding::ReplicateBoth,
            _ => return Err(Error::Parse(format!("unknown padding code {code}"))),
        })
    }

    /// `(before, after)` pad amounts for a kernel of size `k`.
    fn amounts(self, k: usize) -> (usize, usize) {
        match self {
            Padding::None => (0, 0),
            Padding::ReplicateLeft => (k - 1, 0),
            Padding::ReplicateRight => (0, k - 1),
            Padding::ReplicateBoth => ((k - 1) / 2, (k - 1) / 2),
        }
    }
}

/// Spatial axis a one-dimensional layer slides along. Rows (or columns) are
/// treated as an independent batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Width,
    Height,
}

/// One convolution layer: geometry plus its weights and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    /// 1 for `[out, in, k]` weights, 2 for `[out, in, k, k]`.
    pub rank: usize,
    pub padding: Padding,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayerSpec {
    pub fn zeros(
        rank: usize,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        padding: Padding,
    ) -> Self {
        let mut wshape = vec![out_channels, in_channels];
        wshape.extend(std::iter::repeat_n(kernel_size, rank));
        Self {
            in_channels,
            out_channels,
            kernel_size,
            rank,
            padding,
            weight: Tensor::zeros(&wshape),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::contract("conv layer needs positive channel counts"));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::contract(format!(
                "kernel size must be positive and odd, got {}",
                self.kernel_size
            )));
        }
        if !(1..=2).contains(&self.rank) {
            return Err(Error::contract(format!(
                "conv rank {} unsupported",
                self.rank
            )));
        }
        if self.rank == 2
            && matches!(
                self.padding,
                Padding::ReplicateLeft | Padding::ReplicateRight
            )
        {
            return Err(Error::contract(
                "one-sided padding is only defined for 1D layers",
            ));
        }
        let mut wshape = vec![self.out_channels, self.in_channels];
        wshape.extend(std::iter::repeat_n(self.kernel_size, self.rank));
        if self.weight.shape() != wshape.as_slice() {
            return Err(Error::contract(format!(
                "weight shape {:?} does not match {wshape:?}",
                self.weight.shape()
            )));
        }
        if self.bias.shape() != [self.out_channels] {
            return Err(Error::contract(format!(
                "bias shape {:?} does not match [{}]",
                self.bias.shape(),
                self.out_channels
            )));
        }
        Ok(())
    }

    /// Kernel geometry for a `[C,H,W]` input. One-dimensional layers slide
    /// along `axis`.
    pub(crate) fn geometry(&self, c: usize, h: usize, w: usize, axis: Axis) -> Result<ConvGeom> {
        if c != self.in_channels {
            return Err(Error::contract(format!(
                "layer expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let k = self.kernel_size;
        let (before, after) = self.padding.amounts(k);
        let g = match (self.rank, axis) {
            (2, _) => ConvGeom::new(
                c,
                h,
                w,
                self.out_channels,
                k,
                k,
                [before, after, before, after],
            ),
            (_, Axis::Width) => {
                ConvGeom::new(c, h, w, self.out_channels, 1, k, [0, 0, before, after])
            }
            (_, Axis::Height) => {
                ConvGeom::new(c, h, w, self.out_channels, k, 1, [before, after, 0, 0])
            }
        };
        if g.hp < g.kh || g.wp < g.kw {
            return Err(Error::contract(format!(
                "input {h}x{w} too small for a {}x{} kernel",
                g.kh, g.kw
            )));
        }
        Ok(g)
    }
}

/// Geometry of a single convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    /// top, bottom, left, right
    pub pad: [usize; 4],
    pub hp: usize,
    pub wp: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        c: usize,
        h: usize,
        w: usize,
        o: usize,
        kh: usize,
        kw: usize,
        pad: [usize; 4],
    ) -> Self {
        let hp = h + pad[0] + pad[1];
        let wp = w + pad[2] + pad[3];
        Self {
            c,
            h,
            w,
            o,
            kh,
            kw,
            pad,
            hp,
            wp,
            ho: (hp + 1).saturating_sub(kh),
            wo: (wp + 1).saturating_sub(kw),
        }
    }

    fn unpadded(&self) -> bool {
        self.pad == [0; 4]
    }

    /// A pointwise kernel sees each plane as one long row.
    fn rows(&self) -> (usize, usize, usize) {
        if self.kh == 1 && self.kw == 1 && self.unpadded() {
            (1, self.h * self.w, self.h * self.w)
        } else {
            (self.ho, self.wo, self.wp)
        }
    }

    /// Padded plane size; equals `h·w` for the unpadded pointwise case.
    fn padded_plane(&self) -> usize {
        self.hp * self.wp
    }
}

fn pad_replicate<'a>(x: &'a [f32], g: &ConvGeom) -> Cow<'a, [f32]> {
    if g.unpadded() {
        return Cow::Borrowed(x);
    }
    let [pt, _, pl, _] = g.pad;
    let mut out = Vec::with_capacity(g.c * g.padded_plane());
    for ch in 0..g.c {
        let plane = &x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for py in 0..g.hp {
            let sy = py.saturating_sub(pt).min(g.h - 1);
            let row = &plane[sy * g.w..(sy + 1) * g.w];
            for px in 0..g.wp {
                out.push(row[px.saturating_sub(pl).min(g.w - 1)]);
            }
        }
    }
    Cow::Owned(out)
}

fn unpad_accumulate(gp: &[f32], g: &ConvGeom) -> Vec<f32> {
    if g.unpadded() {
        return gp.to_vec();
    }
    let [pt, _, pl, _] = g.pad;
    let mut gx = vec![0.0f32; g.c * g.h * g.w];
    for ch in 0..g.c {
        for py in 0..g.hp {
            let sy = py.saturating_sub(pt).min(g.h - 1);
            for px in 0..g.wp {
                let sx = px.saturating_sub(pl).min(g.w - 1);
                gx[(ch * g.h + sy) * g.w + sx] += gp[(ch * g.hp + py) * g.wp + px];
            }
        }
    }
    gx
}

pub(crate) fn conv_forward(x: &[f32], weight: &[f32], bias: &[f32], g: &ConvGeom) -> Vec<f32> {
    let p = pad_replicate(x, g);
    let (rows, row_len, stride) = g.rows();
    let plane_in = g.padded_plane();
    let mut out = vec![0.0f32; g.o * g.ho * g.wo];
    let taps = g.kh * g.kw;
    for oc in 0..g.o {
        let out_plane = &mut out[oc * rows * row_len..(oc + 1) * rows * row_len];
        for y in 0..rows {
            let acc = &mut out_plane[y * row_len..(y + 1) * row_len];
            acc.fill(bias[oc]);
            for ic in 0..g.c {
                let wbase = (oc * g.c + ic) * taps;
                for ky in 0..g.kh {
                    let prow = &p[ic * plane_in + (y + ky) * stride..];
                    for kx in 0..g.kw {
                        let wv = weight[wbase + ky * g.kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for (a, &s) in acc.iter_mut().zip(&prow[kx..kx + row_len]) {
                            *a += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub(crate) fn conv_backward(
    x: &[f32],
    weight: &[f32],
    grad_out: &[f32],
    g: &ConvGeom,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let p = pad_replicate(x, g);
    let (rows, row_len, stride) = g.rows();
    let plane_in = g.padded_plane();
    let taps = g.kh * g.kw;
    let mut gp = vec![0.0f32; p.len()];
    let mut gw = vec![0.0f32; weight.len()];
    let mut gb = vec![0.0f32; g.o];
    for oc in 0..g.o {
        let gplane = &grad_out[oc * rows * row_len..(oc + 1) * rows * row_len];
        gb[oc] = gplane.iter().sum();
        for y in 0..rows {
            let grow = &gplane[y * row_len..(y + 1) * row_len];
            for ic in 0..g.c {
                let wbase = (oc * g.c + ic) * taps;
                for ky in 0..g.kh {
                    let off = ic * plane_in + (y + ky) * stride;
                    for kx in 0..g.kw {
                        let src = &p[off + kx..off + kx + row_len];
                        let mut s = 0.0f32;
                        for (&gv, &pv) in grow.iter().zip(src) {
                            s += gv * pv;
                        }
                        gw[wbase + ky * g.kw + kx] += s;
                        let wv = weight[wbase + ky * g.kw + kx];
                        if wv != 0.0 {
                            let dst = &mut gp[off + kx..off + kx + row_len];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (unpad_accumulate(&gp, g), gw, gb)
}

fn check_layer_input(input: &Tensor, spec: &ConvLayerSpec) -> Result<()> {
    spec.validate()?;
    if !input.all_finite() {
        return Err(Error::NonFinite("convolution input"));
    }
    Ok(())
}

/// 1D convolution of a `[C, N]` signal.
pub fn conv1d(input: &Tensor, spec: &ConvLayerSpec) -> Result<Tensor> {
    check_layer_input(input, spec)?;
    if spec.rank != 1 {
        return Err(Error::contract("conv1d needs a rank-1 layer"));
    }
    let [c, n] = input.shape()[..] else {
        return Err(Error::contract(format!(
            "conv1d expects [C,N], got {:?}",
            input.shape()
        )));
    };
    let g = spec.geometry(c, 1, n, Axis::Width)?;
    let out = conv_forward(input.data(), spec.weight.data(), spec.bias.data(), &g);
    Tensor::new(vec![g.o, g.wo], out)
}

/// 2D convolution of a `[C, H, W]` tensor.
pub fn conv2d(input: &Tensor, spec: &ConvLayerSpec) -> Result<Tensor> {
    check_layer_input(input, spec)?;
    if spec.rank != 2 {
        return Err(Error::contract("conv2d needs a rank-2 layer"));
    }
    let (c, h, w) = input.chw()?;
    let g = spec.geometry(c, h, w, Axis::Width)?;
    let out = conv_forward(input.data(), spec.weight.data(), spec.bias.data(), &g);
    Tensor::new(vec![g.o, g.ho, g.wo], out)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer1d(
        weight: Vec<f32>,
        c_in: usize,
        c_out: usize,
        k: usize,
        padding: Padding,
    ) -> ConvLayerSpec {
        let mut l = ConvLayerSpec::zeros(1, c_in, c_out, k, padding);
        l.weight = Tensor::new(vec![c_out, c_in, k], weight).unwrap();
        l
    }

    #[test]
    fn replicate_right_pads_with_last_value() {
        let g = ConvGeom::new(1, 1, 3, 1, 1, 3, [0, 0, 0, 2]);
        let p = pad_replicate(&[1.0, 2.0, 3.0], &g);
        assert_eq!(&*p, &[1.0, 2.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn replicate_left_pads_with_first_value() {
        let g = ConvGeom::new(1, 1, 3, 1, 1, 3, [0, 0, 2, 0]);
        let p = pad_replicate(&[1.0, 2.0, 3.0], &g);
        assert_eq!(&*p, &[1.0, 1.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn identity_pointwise_kernel() {
        let l = layer1d(vec![1.0], 1, 1, 1, Padding::None);
        let x = Tensor::new(vec![1, 4], vec![3.0, -1.0, 0.5, 7.0]).unwrap();
        assert_eq!(conv1d(&x, &l).unwrap(), x);
    }

    #[test]
    fn one_sided_padding_keeps_length() {
        // out_k = x_k + x_{k+1} with x_N := x_{N-1}
        let l = layer1d(vec![1.0, 1.0, 0.0], 1, 1, 3, Padding::ReplicateRight);
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(conv1d(&x, &l).unwrap().data(), &[3.0, 5.0, 6.0]);
    }

    #[test]
    fn conv2d_zero_weights_give_bias_plane() {
        let mut l = ConvLayerSpec::zeros(2, 2, 1, 3, Padding::ReplicateBoth);
        l.bias = Tensor::from_vec(vec![2.5]);
        let x = Tensor::new(vec![2, 3, 3], (0..18).map(|v| v as f32).collect()).unwrap();
        let y = conv2d(&x, &l).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn conv2d_average_preserves_constant_plane() {
        let mut l = ConvLayerSpec::zeros(2, 1, 1, 3, Padding::ReplicateBoth);
        l.weight = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
        let x = Tensor::full(&[1, 4, 5], 6.0);
        let y = conv2d(&x, &l).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-5);
    }

    #[test]
    fn conv2d_identity_center_tap() {
        let mut l = ConvLayerSpec::zeros(2, 1, 1, 1, Padding::None);
        l.weight = Tensor::full(&[1, 1, 1, 1], 1.0);
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        assert_eq!(conv2d(&x, &l).unwrap(), x);
    }

    #[test]
    fn channel_mismatch_is_contract_error() {
        let l = ConvLayerSpec::zeros(1, 2, 1, 3, Padding::ReplicateBoth);
        let x = Tensor::zeros(&[3, 8]);
        assert!(matches!(conv1d(&x, &l), Err(Error::Contract(_))));
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    /// Direct evaluation with clamped indices.
    fn naive(x: &Tensor, spec: &ConvLayerSpec, axis: Axis) -> Vec<f32> {
        let (c, h, w) = x.chw().unwrap();
        let g = spec.geometry(c, h, w, axis).unwrap();
        let [pt, _, pl, _] = g.pad;
        let mut out = Vec::new();
        for oc in 0..g.o {
            for y in 0..g.ho {
                for xo in 0..g.wo {
                    let mut acc = spec.bias.data()[oc];
                    for ic in 0..c {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let sy = (y + ky).saturating_sub(pt).min(h - 1);
                                let sx = (xo + kx).saturating_sub(pl).min(w - 1);
                                let wv =
                                    spec.weight.data()[((oc * c + ic) * g.kh + ky) * g.kw + kx];
                                acc += wv * x.data()[(ic * h + sy) * w + sx];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn kernels_match_naive_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let paddings = [
            Padding::None,
            Padding::ReplicateLeft,
            Padding::ReplicateRight,
            Padding::ReplicateBoth,
        ];
        for _ in 0..300 {
            let rank = rng.gen_range(1..=2);
            let k = [1, 3, 5][rng.gen_range(0..3)];
            let padding = if rank == 2 {
                [Padding::None, Padding::ReplicateBoth][rng.gen_range(0..2)]
            } else {
                paddings[rng.gen_range(0..4)]
            };
            let (cin, cout) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let (h, w) = (rng.gen_range(1..7), rng.gen_range(1..7));
            let axis = if rng.gen() { Axis::Width } else { Axis::Height };
            let mut spec = ConvLayerSpec::zeros(rank, cin, cout, k, padding);
            for v in spec
                .weight
                .data_mut()
                .iter_mut()
                .chain(spec.bias.data_mut())
            {
                *v = if rng.gen_bool(0.2) {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0)
                };
            }
            let x = Tensor::new(
                vec![cin, h, w],
                (0..cin * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let Ok(g) = spec.geometry(cin, h, w, axis) else {
                continue;
            };
            let got = conv_forward(x.data(), spec.weight.data(), spec.bias.data(), &g);
            let want = naive(&x, &spec, axis);
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert!(
                    (a - b).abs() < 1e-5,
                    "rank {rank} k {k} {padding:?} {h}x{w} {axis:?}"
                );
            }
        }
    }
}
