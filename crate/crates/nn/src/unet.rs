//! Symmetric encoder-decoder for cross-AP channel-gain inference.
//!
//! Layout, from input to output (widths `w_l = base_width * 2^l`):
//!
//! ```text
//! reduce   1x1 conv   in_channels -> w_0              (linear)
//! level l  5x5 conv   w_l -> w_l             + relu
//!          5x5 conv   w_l -> w_l             + relu   (only for extra levels)
//!          5x5 conv/2 w_l -> w_{l+1}         + relu   (all but the deepest level)
//! decoder  upsample x2, concat with level-l features,
//!          5x5 conv   w_{l+1} + w_l -> w_l   + relu   (l = depth-2 .. 0)
//! head     1x1 conv   w_0 -> 1                        (linear, unclamped)
//! ```
//!
//! The backward pass is wired by hand against this fixed graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{conv2d, conv2d_backward};
use crate::error::{shape_err, NnError, Result};
use crate::ops::{
    concat_channels, concat_channels_backward, relu, relu_backward, upsample_nearest2,
    upsample_nearest2_backward,
};
use crate::scalar::Scalar;
use crate::tensor::{Param, Shape4, Tensor4};

pub const KERNEL: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    /// Number of resolution levels, bottleneck included.
    pub depth: usize,
    /// Levels (0 = full resolution) that get one extra 5x5 conv block.
    pub extra_conv_levels: Vec<usize>,
}

impl UNetConfig {
    /// Defaults for a given input width: base width 32, extra blocks on the two
    /// coarsest levels above the bottleneck.
    pub fn new(in_channels: usize, depth: usize) -> Self {
        Self {
            in_channels,
            base_width: 32,
            depth,
            extra_conv_levels: Self::default_extra_levels(depth),
        }
    }

    pub fn default_extra_levels(depth: usize) -> Vec<usize> {
        let mut levels: Vec<usize> = (2..=3).filter_map(|k| depth.checked_sub(k)).collect();
        levels.sort_unstable();
        levels
    }

    /// 4 levels for grids up to 64 cells, 5 above.
    pub fn default_depth(grid_width: usize) -> usize {
        if grid_width >= 128 {
            5
        } else {
            4
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.in_channels < 2 {
            return bad(format!("in_channels must be >= 2, got {}", self.in_channels));
        }
        if self.base_width == 0 {
            return bad("base_width must be positive".into());
        }
        if self.depth == 0 || self.depth > 12 {
            return bad(format!("depth must be in 1..=12, got {}", self.depth));
        }
        if let Some(l) = self.extra_conv_levels.iter().find(|&&l| l >= self.depth) {
            return bad(format!("extra conv level {l} is not below depth {}", self.depth));
        }
        Ok(())
    }

    /// Checks that a `grid_width` input survives `depth - 1` halvings.
    pub fn check_grid(&self, grid_width: usize) -> Result<()> {
        let factor = 1usize << (self.depth - 1);
        if grid_width == 0 || grid_width % factor != 0 {
            return Err(NnError::InvalidConfig(format!(
                "grid width {grid_width} is not divisible by 2^(depth-1) = {factor}"
            )));
        }
        Ok(())
    }

    pub fn level_width(&self, level: usize) -> usize {
        self.base_width << level
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub name: String,
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: usize,
    pub relu: bool,
}

impl<T: Scalar> ConvLayer<T> {
    fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        relu: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (in_c * kernel * kernel) as f64;
        let gain = if relu { 6.0 } else { 3.0 };
        let bound = (gain / fan_in).sqrt();
        let shape = Shape4::new(out_c, in_c, kernel, kernel);
        let w: Vec<T> = (0..shape.len())
            .map(|_| T::cast_from(rng.gen_range(-bound..bound)))
            .collect();
        Self {
            name: name.to_string(),
            weight: Param::new(
                format!("{name}.weight"),
                Tensor4::from_vec(shape, w).expect("sized"),
            ),
            bias: Param::new(
                format!("{name}.bias"),
                Tensor4::zeros(Shape4::new(out_c, 1, 1, 1)),
            ),
            stride,
            padding: kernel / 2,
            relu,
        }
    }

    fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let y = conv2d(x, &self.weight.value, self.bias.value.data(), self.stride, self.padding)?;
        Ok(if self.relu { relu(&y) } else { y })
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, x: &Tensor4<T>, y: &Tensor4<T>, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
        let pre;
        let g = if self.relu {
            pre = relu_backward(y, grad_y)?;
            &pre
        } else {
            grad_y
        };
        let grads = conv2d_backward(x, &self.weight.value, g, self.stride, self.padding)?;
        self.weight.grad.add_assign(&grads.weight)?;
        for (acc, v) in self.bias.grad.data_mut().iter_mut().zip(grads.bias) {
            *acc += v;
        }
        Ok(grads.input)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Indices into the layer list.
#[derive(Clone, Debug, PartialEq)]
struct Plan {
    reduce: usize,
    enc: Vec<usize>,
    extra: Vec<Option<usize>>,
    down: Vec<usize>,
    dec: Vec<usize>,
    head: usize,
}

/// Saved activations of a traced forward pass: `(input, output)` per layer.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    acts: Vec<Option<(Tensor4<T>, Tensor4<T>)>>,
}

/// UNet weights together with the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet<T> {
    config: UNetConfig,
    layers: Vec<ConvLayer<T>>,
    plan: Plan,
}

impl<T: Scalar> UNet<T> {
    /// Builds a freshly initialized network; identical seeds give identical weights.
    pub fn build(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.depth;
        let mut layers = Vec::new();
        let mut push = |layer: ConvLayer<T>| {
            layers.push(layer);
            layers.len() - 1
        };
        let reduce = push(ConvLayer::new(
            "reduce",
            config.in_channels,
            config.base_width,
            1,
            1,
            false,
            &mut rng,
        ));
        let (mut enc, mut extra, mut down, mut dec) = (vec![], vec![], vec![], vec![]);
        for l in 0..d {
            let w = config.level_width(l);
            enc.push(push(ConvLayer::new(&format!("enc{l}"), w, w, KERNEL, 1, true, &mut rng)));
            extra.push(config.extra_conv_levels.contains(&l).then(|| {
                push(ConvLayer::new(&format!("extra{l}"), w, w, KERNEL, 1, true, &mut rng))
            }));
            if l + 1 < d {
                let w_next = config.level_width(l + 1);
                down.push(push(ConvLayer::new(
                    &format!("down{l}"),
                    w,
                    w_next,
                    KERNEL,
                    2,
                    true,
                    &mut rng,
                )));
            }
        }
        for l in 0..d.saturating_sub(1) {
            let (w, w_next) = (config.level_width(l), config.level_width(l + 1));
            dec.push(push(ConvLayer::new(
                &format!("dec{l}"),
                w_next + w,
                w,
                KERNEL,
                1,
                true,
                &mut rng,
            )));
        }
        let head = push(ConvLayer::new("head", config.base_width, 1, 1, 1, false, &mut rng));
        Ok(Self {
            config,
            layers,
            plan: Plan {
                reduce,
                enc,
                extra,
                down,
                dec,
                head,
            },
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(Param::zero_grad);
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.value.is_finite())
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = x.shape();
        if s.channels != self.config.in_channels {
            return Err(shape_err(
                "unet",
                format!("input has {} channels, model expects {}", s.channels, self.config.in_channels),
            ));
        }
        if s.height != s.width {
            return Err(shape_err("unet", format!("input {s} is not square")));
        }
        self.config.check_grid(s.width)
    }

    /// Inference forward pass; output shape `(B, 1, H, W)`.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        self.run(x, &mut |_, _, _| {})
    }

    /// Forward pass that keeps every layer's input and output for [`UNet::backward`].
    pub fn forward_traced(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, Trace<T>)> {
        self.check_input(x)?;
        let mut acts = vec![None; self.layers.len()];
        let out = self.run(x, &mut |i, input, output| {
            acts[i] = Some((input.clone(), output.clone()));
        })?;
        Ok((out, Trace { acts }))
    }

    fn run(
        &self,
        x: &Tensor4<T>,
        record: &mut dyn FnMut(usize, &Tensor4<T>, &Tensor4<T>),
    ) -> Result<Tensor4<T>> {
        let mut apply = |i: usize, input: &Tensor4<T>| -> Result<Tensor4<T>> {
            let out = self.layers[i].forward(input)?;
            record(i, input, &out);
            Ok(out)
        };
        let p = &self.plan;
        let d = self.config.depth;
        let mut h = apply(p.reduce, x)?;
        let mut skips = Vec::with_capacity(d);
        for l in 0..d {
            h = apply(p.enc[l], &h)?;
            if let Some(e) = p.extra[l] {
                h = apply(e, &h)?;
            }
            if l + 1 < d {
                let next = apply(p.down[l], &h)?;
                skips.push(h);
                h = next;
            }
        }
        for l in (0..d - 1).rev() {
            let up = upsample_nearest2(&h);
            let cat = concat_channels(&up, &skips[l])?;
            h = apply(p.dec[l], &cat)?;
        }
        apply(p.head, &h)
    }

    /// Backpropagates `grad_out` (gradient of the loss w.r.t. the output)
    /// through a traced pass, accumulating into each parameter's gradient.
    /// Returns the gradient with respect to the network input.
    pub fn backward(&mut self, trace: &Trace<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        if trace.acts.len() != self.layers.len() {
            return Err(shape_err("unet_backward", "trace does not match this network"));
        }
        let plan = self.plan.clone();
        let d = self.config.depth;
        let mut back = |i: usize, g: &Tensor4<T>| -> Result<Tensor4<T>> {
            let (x, y) = trace.acts[i]
                .as_ref()
                .ok_or_else(|| shape_err("unet_backward", format!("layer {i} missing from trace")))?;
            self.layers[i].backward(x, y, g)
        };

        let mut g = back(plan.head, grad_out)?;
        let mut skip_grads: Vec<Option<Tensor4<T>>> = vec![None; d];
        for l in 0..d - 1 {
            let g_cat = back(plan.dec[l], &g)?;
            let up_channels = self.config.level_width(l + 1);
            let (g_up, g_skip) = concat_channels_backward(&g_cat, up_channels)?;
            skip_grads[l] = Some(g_skip);
            g = upsample_nearest2_backward(&g_up)?;
        }
        for l in (0..d).rev() {
            if l + 1 < d {
                g = back(plan.down[l], &g)?;
                if let Some(sg) = skip_grads[l].take() {
                    g.add_assign(&sg)?;
                }
            }
            if let Some(e) = plan.extra[l] {
                g = back(e, &g)?;
            }
            g = back(plan.enc[l], &g)?;
        }
        back(plan.reduce, &g)
    }

    /// Copies the weights into another element type.
    pub fn cast<U: Scalar>(&self) -> UNet<U> {
        let cast_param = |p: &Param<T>| Param::new(p.name.clone(), p.value.cast());
        UNet {
            config: self.config.clone(),
            plan: self.plan.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    name: l.name.clone(),
                    weight: cast_param(&l.weight),
                    bias: cast_param(&l.bias),
                    stride: l.stride,
                    padding: l.padding,
                    relu: l.relu,
                })
                .collect(),
        }
    }

    /// Replaces parameter values in `params()` order. Used by checkpoint loading.
    pub(crate) fn load_values(&mut self, values: Vec<Tensor4<T>>) -> Result<()> {
        let count = self.params().count();
        if values.len() != count {
            return Err(NnError::Checkpoint(format!(
                "expected {count} tensors, found {}",
                values.len()
            )));
        }
        for (p, v) in self.params_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(NnError::Checkpoint(format!(
                    "tensor `{}` has shape {}, model expects {}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_count(ci: usize, co: usize, k: usize) -> usize {
        co * ci * k * k + co
    }

    /// Closed-form count over the layer table in the module docs.
    fn formula(c: &UNetConfig) -> usize {
        let w = |l: usize| c.base_width << l;
        let d = c.depth;
        let mut n = conv_count(c.in_channels, w(0), 1) + conv_count(w(0), 1, 1);
        n += (0..d).map(|l| conv_count(w(l), w(l), 5)).sum::<usize>();
        n += c.extra_conv_levels.iter().map(|&l| conv_count(w(l), w(l), 5)).sum::<usize>();
        n += (0..d - 1).map(|l| conv_count(w(l), w(l + 1), 5)).sum::<usize>();
        n += (0..d - 1).map(|l| conv_count(w(l + 1) + w(l), w(l), 5)).sum::<usize>();
        n
    }

    #[test]
    fn deepest_map_is_eight_for_w64() {
        let cfg = UNetConfig::new(9, 4);
        let net = UNet::<f32>::build(cfg, 0).unwrap();
        let down2 = net.layers().iter().find(|l| l.name == "down2").unwrap();
        assert_eq!(down2.weight.value.shape().batch, 256);
        assert_eq!(64 >> 3, 8);
        assert_eq!(UNetConfig::default_extra_levels(4), vec![1, 2]);
        assert_eq!(UNetConfig::default_extra_levels(5), vec![2, 3]);
    }

    #[test]
    fn first_layer_shape_at_paper_scale() {
        let net = UNet::<f32>::build(UNetConfig::new(81, 5), 0).unwrap();
        assert_eq!(net.layers()[0].weight.value.shape(), Shape4::new(32, 81, 1, 1));
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = UNetConfig { base_width: 4, ..UNetConfig::new(3, 3) };
        let a = UNet::<f32>::build(cfg.clone(), 11).unwrap();
        let b = UNet::<f32>::build(cfg.clone(), 11).unwrap();
        let c = UNet::<f32>::build(cfg, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn param_count_matches_formula() {
        for (ic, base, depth) in [(2, 4, 1), (9, 8, 2), (9, 16, 4), (81, 32, 5), (5, 3, 3)] {
            let cfg = UNetConfig { base_width: base, ..UNetConfig::new(ic, depth) };
            let net = UNet::<f32>::build(cfg.clone(), 0).unwrap();
            assert_eq!(net.count_params(), formula(&cfg), "{cfg:?}");
        }
    }

    #[test]
    fn param_count_depth_one_hand_count() {
        let cfg = UNetConfig { base_width: 4, ..UNetConfig::new(3, 1) };
        let net = UNet::<f32>::build(cfg, 0).unwrap();
        // reduce 3->4 (1x1) + enc0 4->4 (5x5) + head 4->1 (1x1)
        assert_eq!(net.count_params(), (4 * 3 + 4) + (4 * 4 * 25 + 4) + (4 + 1));
    }

    #[test]
    fn wider_base_more_params() {
        let small = UNet::<f32>::build(UNetConfig { base_width: 8, ..UNetConfig::new(9, 4) }, 0).unwrap();
        let big = UNet::<f32>::build(UNetConfig { base_width: 16, ..UNetConfig::new(9, 4) }, 0).unwrap();
        assert!(big.count_params() > small.count_params());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(UNet::<f32>::build(UNetConfig::new(1, 4), 0).is_err());
        let cfg = UNetConfig { extra_conv_levels: vec![4], ..UNetConfig::new(3, 4) };
        assert!(UNet::<f32>::build(cfg, 0).is_err());
        let net = UNet::<f32>::build(UNetConfig { base_width: 2, ..UNetConfig::new(3, 4) }, 0).unwrap();
        let x = Tensor4::zeros(Shape4::new(1, 3, 20, 20));
        assert!(net.forward(&x).is_err());
        let x = Tensor4::zeros(Shape4::new(1, 4, 16, 16));
        assert!(net.forward(&x).is_err());
    }

    #[test]
    fn zero_input_gives_head_bias_everywhere() {
        // Freshly built biases are zero, so every activation vanishes and the
        // output is the head bias alone.
        let mut net = UNet::<f64>::build(UNetConfig { base_width: 4, ..UNetConfig::new(3, 3) }, 5).unwrap();
        net.layers.last_mut().unwrap().bias.value.fill(0.3);
        let y = net.forward(&Tensor4::zeros(Shape4::new(2, 3, 16, 16))).unwrap();
        assert_eq!(y.shape(), Shape4::new(2, 1, 16, 16));
        assert!(y.data().iter().all(|&v| v == 0.3));
    }
}
