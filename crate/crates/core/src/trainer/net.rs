//! TinyNet: two 3×3 conv blocks, global average pooling, and two affine
//! heads (class logits and a 2-D hue prediction) on the same feature.
//!
//! Parameters are one flat `Vec<f64>`; gradients use the same layout.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationImage;
use crate::error::{Error, Result};

pub const CONV1_CHANNELS: usize = 16;
pub const CONV2_CHANNELS: usize = 32;
pub const FEATURE_DIM: usize = CONV2_CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub width: usize,
    pub height: usize,
    pub in_channels: usize,
    pub classes: usize,
    /// Width of an optional ReLU hidden layer in the hue head.
    pub hue_hidden: Option<usize>,
}

impl NetShape {
    fn validate(&self) -> Result<()> {
        if self.width < 4 || self.height < 4 || self.in_channels == 0 {
            return Err(Error::Config(format!(
                "input must be at least 4x4 with one channel, got {}x{}x{}",
                self.width, self.height, self.in_channels
            )));
        }
        if self.classes < 2 {
            return Err(Error::BadClassCount(self.classes));
        }
        if self.hue_hidden == Some(0) {
            return Err(Error::Config("hue hidden width must be positive".into()));
        }
        Ok(())
    }

    fn pooled(&self) -> [(usize, usize); 2] {
        let (w1, h1) = (self.width / 2, self.height / 2);
        [(w1, h1), (w1 / 2, h1 / 2)]
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub conv1_w: Range<usize>,
    pub conv1_b: Range<usize>,
    pub conv2_w: Range<usize>,
    pub conv2_b: Range<usize>,
    pub onehot_w: Range<usize>,
    pub onehot_b: Range<usize>,
    pub hue_hidden_w: Range<usize>,
    pub hue_hidden_b: Range<usize>,
    pub hue_w: Range<usize>,
    pub hue_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(shape: &NetShape) -> Self {
        let mut at = 0;
        let mut block = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        let conv1_w = block(CONV1_CHANNELS * 9 * shape.in_channels);
        let conv1_b = block(CONV1_CHANNELS);
        let conv2_w = block(CONV2_CHANNELS * 9 * CONV1_CHANNELS);
        let conv2_b = block(CONV2_CHANNELS);
        let onehot_w = block(shape.classes * FEATURE_DIM);
        let onehot_b = block(shape.classes);
        let hue_in = shape.hue_hidden.unwrap_or(FEATURE_DIM);
        let hue_hidden_w = block(shape.hue_hidden.map_or(0, |h| h * FEATURE_DIM));
        let hue_hidden_b = block(shape.hue_hidden.unwrap_or(0));
        let hue_w = block(2 * hue_in);
        let hue_b = block(2);
        Self {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            onehot_w,
            onehot_b,
            hue_hidden_w,
            hue_hidden_b,
            hue_w,
            hue_b,
            total: at,
        }
    }

    /// Every block that belongs to the hue head.
    pub fn hue_head(&self) -> [Range<usize>; 4] {
        [
            self.hue_hidden_w.clone(),
            self.hue_hidden_b.clone(),
            self.hue_w.clone(),
            self.hue_b.clone(),
        ]
    }

    /// (range, fan-in) for initialization.
    fn blocks(&self, shape: &NetShape) -> Vec<(Range<usize>, usize)> {
        let hue_in = shape.hue_hidden.unwrap_or(FEATURE_DIM);
        vec![
            (self.conv1_w.clone(), 9 * shape.in_channels),
            (self.conv1_b.clone(), 9 * shape.in_channels),
            (self.conv2_w.clone(), 9 * CONV1_CHANNELS),
            (self.conv2_b.clone(), 9 * CONV1_CHANNELS),
            (self.onehot_w.clone(), FEATURE_DIM),
            (self.onehot_b.clone(), FEATURE_DIM),
            (self.hue_hidden_w.clone(), FEATURE_DIM),
            (self.hue_hidden_b.clone(), FEATURE_DIM),
            (self.hue_w.clone(), hue_in),
            (self.hue_b.clone(), hue_in),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNet {
    shape: NetShape,
    layout: Layout,
    params: Vec<f64>,
    version: u64,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    input: Vec<f64>,
    z1: Vec<f64>,
    pool1_arg: Vec<usize>,
    p1: Vec<f64>,
    z2: Vec<f64>,
    pool2_arg: Vec<usize>,
    feature: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl ForwardCache {
    pub fn feature(&self) -> &[f64] {
        &self.feature
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub hue: [f64; 2],
    pub cache: ForwardCache,
}

impl TinyNet {
    /// Uniform fan-in initialization: every weight and bias is drawn from
    /// U(−1/√fan_in, 1/√fan_in).
    pub fn new(shape: NetShape, rng: &mut impl Rng) -> Result<Self> {
        shape.validate()?;
        let layout = Layout::new(&shape);
        let mut params = vec![0.0; layout.total];
        for (range, fan_in) in layout.blocks(&shape) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(Self {
            shape,
            layout,
            params,
            version: 0,
        })
    }

    pub fn zeros(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        let layout = Layout::new(&shape);
        Ok(Self {
            params: vec![0.0; layout.total],
            shape,
            layout,
            version: 0,
        })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn parameter_count(&self) -> usize {
        self.layout.total
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn forward(&self, image: &ActivationImage) -> Result<ForwardOutput> {
        let s = &self.shape;
        if image.width() != s.width || image.height() != s.height || image.channels() != s.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "net expects {}x{}x{}, image is {}x{}x{}",
                s.width,
                s.height,
                s.in_channels,
                image.width(),
                image.height(),
                image.channels()
            )));
        }
        let input: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
        self.forward_values(input)
    }

    fn forward_values(&self, input: Vec<f64>) -> Result<ForwardOutput> {
        let s = &self.shape;
        let l = &self.layout;
        let p = &self.params;
        let [(w1, h1), (w2, h2)] = s.pooled();

        let z1 = conv3x3(&input, s.width, s.height, s.in_channels, &p[l.conv1_w.clone()], &p[l.conv1_b.clone()]);
        let a1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let (p1, pool1_arg) = max_pool2(&a1, s.width, s.height, CONV1_CHANNELS);
        let z2 = conv3x3(&p1, w1, h1, CONV1_CHANNELS, &p[l.conv2_w.clone()], &p[l.conv2_b.clone()]);
        let a2: Vec<f64> = z2.iter().map(|v| v.max(0.0)).collect();
        let (p2, pool2_arg) = max_pool2(&a2, w1, h1, CONV2_CHANNELS);

        let cells = (w2 * h2) as f64;
        let mut feature = vec![0.0; FEATURE_DIM];
        for px in p2.chunks_exact(CONV2_CHANNELS) {
            for (f, v) in feature.iter_mut().zip(px) {
                *f += v;
            }
        }
        feature.iter_mut().for_each(|f| *f /= cells);

        let logits = affine(&p[l.onehot_w.clone()], &p[l.onehot_b.clone()], &feature);
        let (hidden_pre, hidden) = match s.hue_hidden {
            Some(_) => {
                let pre = affine(&p[l.hue_hidden_w.clone()], &p[l.hue_hidden_b.clone()], &feature);
                let post = pre.iter().map(|v| v.max(0.0)).collect();
                (pre, post)
            }
            None => (Vec::new(), Vec::new()),
        };
        let hue_in = if s.hue_hidden.is_some() { &hidden } else { &feature };
        let hue = affine(&p[l.hue_w.clone()], &p[l.hue_b.clone()], hue_in);

        if logits.iter().chain(&hue).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(ForwardOutput {
            logits,
            hue: [hue[0], hue[1]],
            cache: ForwardCache {
                version: self.version,
                input,
                z1,
                pool1_arg,
                p1,
                z2,
                pool2_arg,
                feature,
                hidden_pre,
                hidden,
            },
        })
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradients at the two heads.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &[f64], grad_hue: [f64; 2]) -> Result<Vec<f64>> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                net: self.version,
            });
        }
        let s = &self.shape;
        if grad_logits.len() != s.classes {
            return Err(Error::ShapeMismatch(format!(
                "{} logit gradients for {} classes",
                grad_logits.len(),
                s.classes
            )));
        }
        let l = &self.layout;
        let p = &self.params;
        let [(w1, h1), (w2, h2)] = s.pooled();
        let mut g = vec![0.0; l.total];

        // Heads.
        let mut d_feature = vec![0.0; FEATURE_DIM];
        affine_backward(
            &p[l.onehot_w.clone()],
            &cache.feature,
            grad_logits,
            &mut g,
            l.onehot_w.start,
            l.onehot_b.start,
            &mut d_feature,
        );
        match s.hue_hidden {
            Some(h) => {
                let mut d_hidden = vec![0.0; h];
                affine_backward(&p[l.hue_w.clone()], &cache.hidden, &grad_hue, &mut g, l.hue_w.start, l.hue_b.start, &mut d_hidden);
                for (d, pre) in d_hidden.iter_mut().zip(&cache.hidden_pre) {
                    if *pre <= 0.0 {
                        *d = 0.0;
                    }
                }
                affine_backward(
                    &p[l.hue_hidden_w.clone()],
                    &cache.feature,
                    &d_hidden,
                    &mut g,
                    l.hue_hidden_w.start,
                    l.hue_hidden_b.start,
                    &mut d_feature,
                );
            }
            None => affine_backward(&p[l.hue_w.clone()], &cache.feature, &grad_hue, &mut g, l.hue_w.start, l.hue_b.start, &mut d_feature),
        }

        // Global average pool and second block.
        let cells = (w2 * h2) as f64;
        let mut d_a2 = vec![0.0; cache.z2.len()];
        for (cell, &src) in cache.pool2_arg.iter().enumerate() {
            d_a2[src] += d_feature[cell % CONV2_CHANNELS] / cells;
        }
        relu_backward(&mut d_a2, &cache.z2);
        let mut d_p1 = vec![0.0; cache.p1.len()];
        conv3x3_backward(
            &cache.p1,
            w1,
            h1,
            CONV1_CHANNELS,
            &p[l.conv2_w.clone()],
            &d_a2,
            &mut g,
            l.conv2_w.start,
            l.conv2_b.start,
            Some(&mut d_p1),
        );

        // First block.
        let mut d_a1 = vec![0.0; cache.z1.len()];
        for (cell, &src) in cache.pool1_arg.iter().enumerate() {
            d_a1[src] += d_p1[cell];
        }
        relu_backward(&mut d_a1, &cache.z1);
        conv3x3_backward(
            &cache.input,
            s.width,
            s.height,
            s.in_channels,
            &p[l.conv1_w.clone()],
            &d_a1,
            &mut g,
            l.conv1_w.start,
            l.conv1_b.start,
            None,
        );
        Ok(g)
    }

    /// Apply `params -= delta` elementwise.
    pub fn apply(&mut self, delta: &[f64]) {
        for (p, d) in self.params_mut().iter_mut().zip(delta) {
            *p -= d;
        }
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .zip(w.chunks_exact(x.len()))
        .map(|(bias, row)| bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

fn affine_backward(w: &[f64], x: &[f64], dy: &[f64], g: &mut [f64], w_at: usize, b_at: usize, dx: &mut [f64]) {
    let n = x.len();
    for (o, &d) in dy.iter().enumerate() {
        g[b_at + o] += d;
        for i in 0..n {
            g[w_at + o * n + i] += d * x[i];
            dx[i] += d * w[o * n + i];
        }
    }
}

fn relu_backward(d: &mut [f64], pre: &[f64]) {
    for (g, z) in d.iter_mut().zip(pre) {
        if *z <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Same-size 3×3 convolution with zero padding, channel-last layout.
/// Weights are laid out [out][ky][kx][in].
fn conv3x3(x: &[f64], w: usize, h: usize, cin: usize, weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let cout = bias.len();
    let mut out = vec![0.0; w * h * cout];
    for r in 0..h {
        for c in 0..w {
            let o_px = &mut out[(r * w + c) * cout..(r * w + c + 1) * cout];
            o_px.copy_from_slice(bias);
            for ky in 0..3 {
                let rr = r as isize + ky as isize - 1;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let cc = c as isize + kx as isize - 1;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    let at = (rr as usize * w + cc as usize) * cin;
                    let in_px = &x[at..at + cin];
                    for (o, acc) in o_px.iter_mut().enumerate() {
                        let k = &weights[((o * 3 + ky) * 3 + kx) * cin..][..cin];
                        *acc += k.iter().zip(in_px).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    x: &[f64],
    w: usize,
    h: usize,
    cin: usize,
    weights: &[f64],
    dz: &[f64],
    g: &mut [f64],
    w_at: usize,
    b_at: usize,
    mut dx: Option<&mut Vec<f64>>,
) {
    let cout = dz.len() / (w * h);
    for r in 0..h {
        for c in 0..w {
            let d_px = &dz[(r * w + c) * cout..(r * w + c + 1) * cout];
            for (o, &d) in d_px.iter().enumerate() {
                g[b_at + o] += d;
            }
            for ky in 0..3 {
                let rr = r as isize + ky as isize - 1;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let cc = c as isize + kx as isize - 1;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    let at = (rr as usize * w + cc as usize) * cin;
                    for (o, &d) in d_px.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let k_at = ((o * 3 + ky) * 3 + kx) * cin;
                        for i in 0..cin {
                            g[w_at + k_at + i] += d * x[at + i];
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            for i in 0..cin {
                                dx[at + i] += d * weights[k_at + i];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped).
/// Returns the pooled map and, per output cell, the flat index of its source.
fn max_pool2(x: &[f64], w: usize, h: usize, ch: usize) -> (Vec<f64>, Vec<usize>) {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(ow * oh * ch);
    let mut arg = Vec::with_capacity(out.capacity());
    for r in 0..oh {
        for c in 0..ow {
            for k in 0..ch {
                let mut best = ((2 * r) * w + 2 * c) * ch + k;
                for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * r + dr) * w + 2 * c + dc) * ch + k;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn shape(w: usize, classes: usize, hidden: Option<usize>) -> NetShape {
        NetShape {
            width: w,
            height: w,
            in_channels: 3,
            classes,
            hue_hidden: hidden,
        }
    }

    fn random_image(w: usize, c: usize, seed_value: u64) -> ActivationImage {
        let mut rng = seed::rng(seed_value, seed::stream::SYNTH);
        let data = (0..w * w * c).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        ActivationImage::new(w, w, c, data, false).unwrap()
    }

    #[test]
    fn parameter_count_matches_layers() {
        let net = TinyNet::zeros(shape(16, 8, None)).unwrap();
        let expected = 16 * 27 + 16 + 32 * 144 + 32 + 8 * 32 + 8 + 2 * 32 + 2;
        assert_eq!(net.parameter_count(), expected);
        let deep = TinyNet::zeros(shape(16, 8, Some(10))).unwrap();
        assert_eq!(deep.parameter_count(), expected - 66 + 10 * 32 + 10 + 2 * 10 + 2);
    }

    #[test]
    fn zero_image_with_zero_heads_gives_bias_logits() {
        let mut net = TinyNet::new(shape(8, 4, None), &mut seed::rng(1, seed::stream::INIT)).unwrap();
        let l = net.layout().clone();
        let p = net.params_mut();
        for r in [l.onehot_w.clone(), l.hue_w.clone()] {
            p[r].iter_mut().for_each(|v| *v = 0.0);
        }
        for (i, v) in p[l.onehot_b.clone()].iter_mut().enumerate() {
            *v = i as f64 * 0.5;
        }
        p[l.hue_b.start] = 0.25;
        p[l.hue_b.start + 1] = -0.75;
        let out = net.forward(&ActivationImage::zeros(8, 8, 3).unwrap()).unwrap();
        assert_eq!(out.logits, vec![0.0, 0.5, 1.0, 1.5]);
        assert_eq!(out.hue, [0.25, -0.75]);
    }

    #[test]
    fn outputs_are_finite_for_random_inputs() {
        let net = TinyNet::new(shape(8, 5, Some(6)), &mut seed::rng(2, seed::stream::INIT)).unwrap();
        for t in 0..1000 {
            let out = net.forward(&random_image(8, 3, t)).unwrap();
            assert!(out.logits.iter().chain(&out.hue).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let mut rng = seed::rng(3, seed::stream::INIT);
        let weights: Vec<f64> = (0..16 * 27).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = vec![0.0; 16];
        let x: Vec<f64> = (0..6 * 6 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let a = conv3x3(&x, 6, 6, 3, &weights, &bias);
        let b = conv3x3(&doubled, 6, 6, 3, &weights, &bias);
        for (u, v) in a.iter().zip(&b) {
            assert!((2.0 * u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_and_stale_cache() {
        let mut net = TinyNet::new(shape(8, 3, None), &mut seed::rng(4, seed::stream::INIT)).unwrap();
        assert!(matches!(net.forward(&random_image(6, 3, 0)), Err(Error::ShapeMismatch(_))));
        let out = net.forward(&random_image(8, 3, 0)).unwrap();
        net.apply(&vec![0.0; net.parameter_count()]);
        assert!(matches!(
            net.backward(&out.cache, &[0.0; 3], [0.0; 2]),
            Err(Error::StaleCache { cache: 0, net: 1 })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = TinyNet::new(shape(8, 3, Some(4)), &mut seed::rng(5, seed::stream::INIT)).unwrap();
        let out = net.forward(&random_image(8, 3, 1)).unwrap();
        let g = net.backward(&out.cache, &[0.0; 3], [0.0; 2]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hue_head_untouched_by_logit_gradient() {
        let net = TinyNet::new(shape(8, 3, None), &mut seed::rng(6, seed::stream::INIT)).unwrap();
        let out = net.forward(&random_image(8, 3, 2)).unwrap();
        let g = net.backward(&out.cache, &[0.3, -0.1, -0.2], [0.0; 2]).unwrap();
        for r in net.layout().hue_head() {
            assert!(g[r].iter().all(|&v| v == 0.0));
        }
        assert!(g[net.layout().onehot_w.clone()].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn max_pool_picks_first_maximum() {
        let x = vec![1.0, 3.0, 3.0, 2.0];
        let (out, arg) = max_pool2(&x, 2, 2, 1);
        assert_eq!(out, vec![3.0]);
        assert_eq!(arg, vec![1]);
    }
}
