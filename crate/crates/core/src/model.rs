//! The attention-based deep residual network.
//!
//! ```text
//! Y_spatial  (N,1,p,p) -> multi-scale block --+
//!                                             +-> concat -> 3x3 conv + ReLU
//! Y_spectral (N,K,p,p) -> multi-scale block --+        -> D channel-attention blocks
//!                                                      -> 3x3 conv -> R (N,1,p,p)
//! ```
//!
//! The clean estimate is `Y_spatial - R`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvVars, Tape, Var};
use crate::error::{param_err, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{ConvKernel, Shape4, Tensor4};

/// Receptive field sizes of the parallel multi-scale paths.
pub const PATH_SIZES: [usize; 4] = [1, 3, 5, 7];

/// Network widths and depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature width `C` of the fused representation and every CAB.
    pub channels: usize,
    /// Output width of each multi-scale path.
    pub path_channels: usize,
    /// Number of channel-attention blocks `D`.
    pub depth: usize,
    /// Number of adjacent bands `K` in the spectral input.
    pub spectral_bands: usize,
    /// Channel reduction ratio `r` of the attention squeeze.
    pub reduction: usize,
    /// When false every attention weight is pinned to 1, giving plain
    /// residual blocks.
    #[serde(default = "default_attention")]
    pub attention: bool,
}

fn default_attention() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            path_channels: 16,
            depth: 9,
            spectral_bands: 64,
            reduction: 10,
            attention: true,
        }
    }
}

impl ModelConfig {
    /// Width after the attention squeeze, `ceil(C / r)`.
    pub fn squeeze_channels(&self) -> usize {
        self.channels.div_ceil(self.reduction)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0
            || self.path_channels == 0
            || self.spectral_bands == 0
            || self.reduction == 0
        {
            return Err(param_err!("model widths must all be >= 1: {self:?}"));
        }
        Ok(())
    }

    /// Number of pixels each output depends on in every direction, ignoring
    /// the global pooling inside attention.
    pub fn receptive_radius(&self) -> usize {
        PATH_SIZES[3] / 2 + 1 + 2 * self.depth + 1
    }
}

/// Draw from `N(0, std^2)` truncated to `[-2 std, 2 std]` by rejection.
pub fn truncated_normal(rng: &mut impl rand::Rng, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return std * z;
        }
    }
}

/// Standard deviation of a normal truncated at two standard deviations,
/// as a fraction of the untruncated one.
pub const TRUNCATED_STD_RATIO: f64 = 0.879_625_661_034_239_8;

fn init_kernel<T: Scalar>(
    rng: &mut ChaCha8Rng,
    out_c: usize,
    in_c: usize,
    k: usize,
) -> ConvKernel<T> {
    let std = (2.0 / (in_c * k * k) as f64).sqrt();
    let weight = Tensor4::from_fn(Shape4::new(out_c, in_c, k, k), |_, _, _, _| {
        T::of(truncated_normal(rng, std))
    });
    ConvKernel {
        weight,
        bias: vec![T::zero(); out_c],
    }
}

/// One multi-scale path: an optional 1x1 bottleneck then a k x k conv.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalePath<T> {
    pub bottleneck: Option<ConvKernel<T>>,
    pub conv: ConvKernel<T>,
}

/// Four parallel paths with receptive fields 1, 3, 5 and 7 whose ReLU
/// outputs are concatenated along channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractionBlock<T> {
    pub paths: Vec<ScalePath<T>>,
}

impl<T: Scalar> FeatureExtractionBlock<T> {
    fn build(
        in_channels: usize,
        path_channels: usize,
        mut make: impl FnMut(usize, usize, usize) -> ConvKernel<T>,
    ) -> Self {
        let paths = PATH_SIZES
            .iter()
            .map(|&k| {
                if k == 1 {
                    ScalePath {
                        bottleneck: None,
                        conv: make(path_channels, in_channels, 1),
                    }
                } else {
                    ScalePath {
                        bottleneck: Some(make(path_channels, in_channels, 1)),
                        conv: make(path_channels, path_channels, k),
                    }
                }
            })
            .collect();
        Self { paths }
    }

    pub fn zeros(in_channels: usize, path_channels: usize) -> Self {
        Self::build(in_channels, path_channels, |o, i, k| {
            ConvKernel::zeros(o, i, k).expect("odd kernel")
        })
    }

    pub fn in_channels(&self) -> usize {
        let p = &self.paths[0];
        p.bottleneck.as_ref().unwrap_or(&p.conv).in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.paths.iter().map(|p| p.conv.out_channels()).sum()
    }

    pub fn kernels(&self) -> Vec<&ConvKernel<T>> {
        self.paths
            .iter()
            .flat_map(|p| p.bottleneck.iter().chain(std::iter::once(&p.conv)))
            .collect()
    }

    pub fn kernels_mut(&mut self) -> Vec<&mut ConvKernel<T>> {
        self.paths
            .iter_mut()
            .flat_map(|p| p.bottleneck.iter_mut().chain(std::iter::once(&mut p.conv)))
            .collect()
    }

    pub fn forward_tape(&self, tape: &mut Tape<T>, vars: &[ConvVars], x: Var) -> Result<Var> {
        if tape.shape(x).c != self.in_channels() {
            return Err(shape_err!(
                "feature extraction expects {} channels, got {}",
                self.in_channels(),
                tape.shape(x).c
            ));
        }
        let mut vars = vars.iter();
        let mut outputs = Vec::with_capacity(self.paths.len());
        for path in &self.paths {
            let mut h = x;
            if path.bottleneck.is_some() {
                h = tape.conv2d(h, *vars.next().expect("bottleneck vars"))?;
            }
            h = tape.conv2d(h, *vars.next().expect("path vars"))?;
            outputs.push(tape.relu(h));
        }
        tape.concat_channels(&outputs)
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut tape = Tape::new();
        let vars = bind_all(&mut tape, &self.kernels());
        let x = tape.constant(x.clone());
        let y = self.forward_tape(&mut tape, &vars, x)?;
        Ok(tape.into_value(y))
    }
}

/// Residual block whose branch `X = W2 * relu(W1 * F)` is rescaled per
/// channel by `sigmoid(W4 * relu(W3 * GP(X)))` before being added back.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAttentionBlock<T> {
    pub w1: ConvKernel<T>,
    pub w2: ConvKernel<T>,
    pub w3: ConvKernel<T>,
    pub w4: ConvKernel<T>,
}

/// Outputs of one block on a tape.
#[derive(Clone, Copy, Debug)]
pub struct CabVars {
    pub output: Var,
    pub attention: Option<Var>,
}

impl<T: Scalar> ChannelAttentionBlock<T> {
    pub fn zeros(channels: usize, reduction: usize) -> Self {
        let s = channels.div_ceil(reduction.max(1));
        Self {
            w1: ConvKernel::zeros(channels, channels, 3).expect("odd kernel"),
            w2: ConvKernel::zeros(channels, channels, 3).expect("odd kernel"),
            w3: ConvKernel::zeros(s, channels, 1).expect("odd kernel"),
            w4: ConvKernel::zeros(channels, s, 1).expect("odd kernel"),
        }
    }

    pub fn channels(&self) -> usize {
        self.w1.in_channels()
    }

    pub fn kernels(&self) -> Vec<&ConvKernel<T>> {
        vec![&self.w1, &self.w2, &self.w3, &self.w4]
    }

    pub fn kernels_mut(&mut self) -> Vec<&mut ConvKernel<T>> {
        vec![&mut self.w1, &mut self.w2, &mut self.w3, &mut self.w4]
    }

    fn check(&self, shape: Shape4) -> Result<()> {
        if shape.c != self.channels() {
            return Err(shape_err!(
                "channel attention block expects {} channels, got {}",
                self.channels(),
                shape.c
            ));
        }
        Ok(())
    }

    /// `sigmoid(W4 * relu(W3 * GP(x)))`, shape `(N, C, 1, 1)`.
    pub fn attention_tape(&self, tape: &mut Tape<T>, vars: &[ConvVars], x: Var) -> Result<Var> {
        self.check(tape.shape(x))?;
        let pooled = tape.global_avg_pool(x);
        let squeezed = tape.conv2d(pooled, vars[2])?;
        let squeezed = tape.relu(squeezed);
        let expanded = tape.conv2d(squeezed, vars[3])?;
        Ok(tape.sigmoid(expanded))
    }

    pub fn forward_tape(
        &self,
        tape: &mut Tape<T>,
        vars: &[ConvVars],
        f_prev: Var,
        attention: bool,
    ) -> Result<CabVars> {
        self.check(tape.shape(f_prev))?;
        let h = tape.conv2d(f_prev, vars[0])?;
        let h = tape.relu(h);
        let x = tape.conv2d(h, vars[1])?;
        let (branch, weights) = if attention {
            let w = self.attention_tape(tape, vars, x)?;
            (tape.scale_channels(x, w)?, Some(w))
        } else {
            (x, None)
        };
        Ok(CabVars {
            output: tape.add(f_prev, branch)?,
            attention: weights,
        })
    }

    pub fn attention_weights(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut tape = Tape::new();
        let vars = bind_all(&mut tape, &self.kernels());
        let x = tape.constant(x.clone());
        let w = self.attention_tape(&mut tape, &vars, x)?;
        Ok(tape.into_value(w))
    }

    fn run(&self, f_prev: &Tensor4<T>, attention: bool) -> Result<Tensor4<T>> {
        let mut tape = Tape::new();
        let vars = bind_all(&mut tape, &self.kernels());
        let f = tape.constant(f_prev.clone());
        let out = self.forward_tape(&mut tape, &vars, f, attention)?;
        Ok(tape.into_value(out.output))
    }

    /// `F + W_CA * X`.
    pub fn forward(&self, f_prev: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.run(f_prev, true)
    }

    /// `F + X`, the block with attention pinned to 1.
    pub fn forward_plain(&self, f_prev: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.run(f_prev, false)
    }
}

fn bind_all<T: Scalar>(tape: &mut Tape<T>, kernels: &[&ConvKernel<T>]) -> Vec<ConvVars> {
    kernels.iter().map(|k| tape.bind_conv(k)).collect()
}

/// Residual and attention weights of one forward pass on a tape.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub residual: Var,
    pub attention: Vec<Var>,
}

/// All learnable parameters plus the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct AdrnModel<T> {
    pub config: ModelConfig,
    pub spatial_fe: FeatureExtractionBlock<T>,
    pub spectral_fe: FeatureExtractionBlock<T>,
    pub fuse: ConvKernel<T>,
    pub cabs: Vec<ChannelAttentionBlock<T>>,
    pub head: ConvKernel<T>,
}

impl<T: Scalar> AdrnModel<T> {
    /// Every weight and bias zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let branch = PATH_SIZES.len() * config.path_channels;
        Ok(Self {
            config,
            spatial_fe: FeatureExtractionBlock::zeros(1, config.path_channels),
            spectral_fe: FeatureExtractionBlock::zeros(config.spectral_bands, config.path_channels),
            fuse: ConvKernel::zeros(config.channels, 2 * branch, 3)?,
            cabs: (0..config.depth)
                .map(|_| ChannelAttentionBlock::zeros(config.channels, config.reduction))
                .collect(),
            head: ConvKernel::zeros(1, config.channels, 3)?,
        })
    }

    /// Weights from a normal truncated at two standard deviations with
    /// `std = sqrt(2 / fan_in)`; biases zero. Deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for kernel in model.kernels_mut() {
            let s = kernel.weight.shape();
            *kernel = init_kernel(&mut rng, s.n, s.c, s.h);
        }
        Ok(model)
    }

    /// Kernels in a fixed canonical order.
    pub fn kernels(&self) -> Vec<&ConvKernel<T>> {
        let mut v = self.spatial_fe.kernels();
        v.extend(self.spectral_fe.kernels());
        v.push(&self.fuse);
        for cab in &self.cabs {
            v.extend(cab.kernels());
        }
        v.push(&self.head);
        v
    }

    pub fn kernels_mut(&mut self) -> Vec<&mut ConvKernel<T>> {
        let mut v = self.spatial_fe.kernels_mut();
        v.extend(self.spectral_fe.kernels_mut());
        v.push(&mut self.fuse);
        for cab in &mut self.cabs {
            v.extend(cab.kernels_mut());
        }
        v.push(&mut self.head);
        v
    }

    /// Flat parameter slices: weight then bias of every kernel.
    pub fn params(&self) -> Vec<&[T]> {
        self.kernels()
            .into_iter()
            .flat_map(|k| [k.weight.data(), k.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.kernels_mut()
            .into_iter()
            .flat_map(|k| {
                let ConvKernel { weight, bias } = k;
                [weight.data_mut(), bias.as_mut_slice()]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<ConvVars> {
        bind_all(tape, &self.kernels())
    }

    fn check_inputs(&self, spatial: Shape4, spectral: Shape4) -> Result<()> {
        if spatial.c != 1 {
            return Err(shape_err!("spatial input must have 1 channel, got {spatial}"));
        }
        if spectral.c != self.config.spectral_bands {
            return Err(shape_err!(
                "spectral input must have {} bands, got {spectral}",
                self.config.spectral_bands
            ));
        }
        if (spatial.n, spatial.h, spatial.w) != (spectral.n, spectral.h, spectral.w) {
            return Err(shape_err!(
                "spatial {spatial} and spectral {spectral} inputs disagree"
            ));
        }
        Ok(())
    }

    /// Residual noise prediction recorded on `tape` with parameters `vars`
    /// from [`AdrnModel::bind`].
    pub fn forward_tape(
        &self,
        tape: &mut Tape<T>,
        vars: &[ConvVars],
        y_spatial: Var,
        y_spectral: Var,
    ) -> Result<ForwardVars> {
        self.check_inputs(tape.shape(y_spatial), tape.shape(y_spectral))?;
        let n_spatial = self.spatial_fe.kernels().len();
        let n_spectral = self.spectral_fe.kernels().len();
        let (spatial_vars, rest) = vars.split_at(n_spatial);
        let (spectral_vars, rest) = rest.split_at(n_spectral);

        let a = self.spatial_fe.forward_tape(tape, spatial_vars, y_spatial)?;
        let b = self.spectral_fe.forward_tape(tape, spectral_vars, y_spectral)?;
        let joined = tape.concat_channels(&[a, b])?;
        let fused = tape.conv2d(joined, rest[0])?;
        let mut f = tape.relu(fused);

        let mut attention = Vec::with_capacity(self.cabs.len());
        for (i, cab) in self.cabs.iter().enumerate() {
            let out = cab.forward_tape(tape, &rest[1 + 4 * i..5 + 4 * i], f, self.config.attention)?;
            f = out.output;
            attention.extend(out.attention);
        }
        let residual = tape.conv2d(f, rest[1 + 4 * self.cabs.len()])?;
        Ok(ForwardVars {
            residual,
            attention,
        })
    }

    /// Predicted residual noise `R`, shape `(N, 1, p, p)`.
    pub fn forward(&self, y_spatial: &Tensor4<T>, y_spectral: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.forward_with_attention(y_spatial, y_spectral)?.0)
    }

    /// Residual plus the attention weights of every block.
    pub fn forward_with_attention(
        &self,
        y_spatial: &Tensor4<T>,
        y_spectral: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, Vec<Tensor4<T>>)> {
        self.check_inputs(y_spatial.shape(), y_spectral.shape())?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let ys = tape.constant(y_spatial.clone());
        let yp = tape.constant(y_spectral.clone());
        let out = self.forward_tape(&mut tape, &vars, ys, yp)?;
        let attention = out.attention.iter().map(|&v| tape.value(v).clone()).collect();
        Ok((tape.into_value(out.residual), attention))
    }

    /// Clean estimate `Y_spatial - R`.
    pub fn denoise(&self, y_spatial: &Tensor4<T>, y_spectral: &Tensor4<T>) -> Result<Tensor4<T>> {
        let r = self.forward(y_spatial, y_spectral)?;
        reconstruct(y_spatial, &r)
    }

    pub fn cast<U: Scalar>(&self) -> AdrnModel<U> {
        let mut out = AdrnModel::<U>::zeros(self.config).expect("validated config");
        for (dst, src) in out.kernels_mut().into_iter().zip(self.kernels()) {
            *dst = src.cast();
        }
        out
    }
}

/// `X_hat = Y_spatial - R`.
pub fn reconstruct<T: Scalar>(y_spatial: &Tensor4<T>, residual: &Tensor4<T>) -> Result<Tensor4<T>> {
    y_spatial.zip_map(residual, |y, r| y - r)
}
