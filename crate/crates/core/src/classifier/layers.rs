//! Forward-pass kernels over channel-last feature maps.

/// Feature map dimensions, row-major channel-last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// 3x3 convolution kernel stored `[out][in][ky][kx]`, plus a copy
/// rearranged `[ky][kx][in][out]` so the inner loop runs over contiguous
/// output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    in_channels: usize,
    out_channels: usize,
    taps: Vec<f64>,
    bias: Vec<f64>,
}

impl Conv3x3 {
    pub fn new(in_channels: usize, out_channels: usize, kernel: &[f64], bias: &[f64]) -> Self {
        assert_eq!(kernel.len(), out_channels * in_channels * 9);
        assert_eq!(bias.len(), out_channels);
        let mut taps = vec![0.0; kernel.len()];
        for oc in 0..out_channels {
            for ic in 0..in_channels {
                for k in 0..9 {
                    taps[(k * in_channels + ic) * out_channels + oc] =
                        kernel[(oc * in_channels + ic) * 9 + k];
                }
            }
        }
        Self {
            in_channels,
            out_channels,
            taps,
            bias: bias.to_vec(),
        }
    }

    /// Stride 1, zero "same" padding.
    pub fn forward(&self, input: &[f64], dims: Dims) -> (Vec<f64>, Dims) {
        assert_eq!(dims.channels, self.in_channels);
        assert_eq!(input.len(), dims.len());
        let (h, w, ic_n, oc_n) = (dims.height, dims.width, self.in_channels, self.out_channels);
        let mut out = Vec::with_capacity(h * w * oc_n);
        for r in 0..h {
            for c in 0..w {
                let base = out.len();
                out.extend_from_slice(&self.bias);
                let acc = &mut out[base..base + oc_n];
                for ky in 0..3 {
                    let sr = r as isize + ky as isize - 1;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sc = c as isize + kx as isize - 1;
                        if sc < 0 || sc >= w as isize {
                            continue;
                        }
                        let px = &input[(sr as usize * w + sc as usize) * ic_n..][..ic_n];
                        let tap = &self.taps[(ky * 3 + kx) * ic_n * oc_n..][..ic_n * oc_n];
                        for (ic, &v) in px.iter().enumerate() {
                            for (a, &k) in acc.iter_mut().zip(&tap[ic * oc_n..(ic + 1) * oc_n]) {
                                *a += k * v;
                            }
                        }
                    }
                }
            }
        }
        (out, Dims::new(h, w, oc_n))
    }
}

pub fn relu_in_place(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// 2x2 max pooling with stride 2; a trailing odd row/column is dropped.
pub fn maxpool2x2(input: &[f64], dims: Dims) -> (Vec<f64>, Dims) {
    let (oh, ow, ch) = (dims.height / 2, dims.width / 2, dims.channels);
    let mut out = Vec::with_capacity(oh * ow * ch);
    for r in 0..oh {
        for c in 0..ow {
            for k in 0..ch {
                let at = |rr: usize, cc: usize| input[(rr * dims.width + cc) * ch + k];
                let m = at(2 * r, 2 * c)
                    .max(at(2 * r, 2 * c + 1))
                    .max(at(2 * r + 1, 2 * c))
                    .max(at(2 * r + 1, 2 * c + 1));
                out.push(m);
            }
        }
    }
    (out, Dims::new(oh, ow, ch))
}

/// `weights` is `[outputs][inputs]` row-major.
pub fn dense(input: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = input.len();
    assert_eq!(weights.len(), n * bias.len());
    weights
        .chunks_exact(n)
        .zip(bias)
        .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
