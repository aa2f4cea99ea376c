//! Parameter layout, forward pass and exact backward pass of the residual network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    bn_backward, bn_forward_eval, bn_forward_train, conv_backward, conv_forward, gap_backward, gap_forward,
    maxpool_backward, maxpool_forward, relu, relu_backward, sigmoid, BnCache, ConvGeom,
};
use super::tensor::{Scalar, Tensor};
use super::{ClassifierError, NetConfig, BCE_EPS};
use crate::flowcore::FlowField;

const BN_MOMENTUM: f64 = 0.1;

/// A named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Param<T> {
    fn new(name: String, shape: Vec<usize>, fill: T) -> Self {
        let len = shape.iter().product();
        Self {
            name,
            shape,
            data: vec![fill; len],
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Conv { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvBn {
    geom: ConvGeom,
    weight: usize,
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv1: ConvBn,
    conv2: ConvBn,
    down: Option<ConvBn>,
}

/// Index plan mapping layers onto the flat parameter and buffer lists.
#[derive(Debug, Clone)]
pub(crate) struct Plan {
    stem: ConvBn,
    pool: bool,
    blocks: Vec<Block>,
    fc_weight: usize,
    fc_bias: usize,
}

struct LayoutBuilder {
    params: Vec<(String, Vec<usize>, Init)>,
    buffers: Vec<(String, Vec<usize>, Init)>,
}

impl LayoutBuilder {
    fn param(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.params.push((name, shape, init));
        self.params.len() - 1
    }

    fn buffer(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.buffers.push((name, shape, init));
        self.buffers.len() - 1
    }

    fn conv_bn(&mut self, conv: &str, bn: &str, geom: ConvGeom) -> ConvBn {
        let c = geom.out_c;
        ConvBn {
            geom,
            weight: self.param(
                format!("{conv}.weight"),
                vec![geom.out_c, geom.in_c, geom.k, geom.k],
                Init::Conv {
                    fan_in: geom.in_c * geom.k * geom.k,
                },
            ),
            gamma: self.param(format!("{bn}.weight"), vec![c], Init::Ones),
            beta: self.param(format!("{bn}.bias"), vec![c], Init::Zeros),
            mean: self.buffer(format!("{bn}.running_mean"), vec![c], Init::Zeros),
            var: self.buffer(format!("{bn}.running_var"), vec![c], Init::Ones),
        }
    }
}

fn layout(cfg: &NetConfig) -> (Plan, LayoutBuilder) {
    let mut b = LayoutBuilder {
        params: Vec::new(),
        buffers: Vec::new(),
    };
    let stem = b.conv_bn(
        "stem.conv",
        "stem.bn",
        ConvGeom {
            in_c: cfg.input_channels,
            out_c: cfg.stem_channels,
            k: cfg.stem_kernel,
            stride: cfg.stem_stride,
            pad: cfg.stem_kernel / 2,
        },
    );
    let mut blocks = Vec::new();
    let mut in_c = cfg.stem_channels;
    for (s, (&width, &count)) in cfg.stage_widths.iter().zip(&cfg.blocks_per_stage).enumerate() {
        for k in 0..count {
            let stride = if s > 0 && k == 0 { 2 } else { 1 };
            let pre = format!("stage{s}.block{k}");
            let conv1 = b.conv_bn(
                &format!("{pre}.conv1"),
                &format!("{pre}.bn1"),
                ConvGeom {
                    in_c,
                    out_c: width,
                    k: 3,
                    stride,
                    pad: 1,
                },
            );
            let conv2 = b.conv_bn(
                &format!("{pre}.conv2"),
                &format!("{pre}.bn2"),
                ConvGeom {
                    in_c: width,
                    out_c: width,
                    k: 3,
                    stride: 1,
                    pad: 1,
                },
            );
            let down = (stride != 1 || in_c != width).then(|| {
                b.conv_bn(
                    &format!("{pre}.downsample.conv"),
                    &format!("{pre}.downsample.bn"),
                    ConvGeom {
                        in_c,
                        out_c: width,
                        k: 1,
                        stride,
                        pad: 0,
                    },
                )
            });
            blocks.push(Block { conv1, conv2, down });
            in_c = width;
        }
    }
    let fc_weight = b.param(
        "fc.weight".into(),
        vec![cfg.output_dim, in_c],
        Init::Zeros,
    );
    let fc_bias = b.param("fc.bias".into(), vec![cfg.output_dim], Init::Zeros);
    (
        Plan {
            stem,
            pool: cfg.stem_pool,
            blocks,
            fc_weight,
            fc_bias,
        },
        b,
    )
}

/// Network weights, normalization running statistics and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    config: NetConfig,
    params: Vec<Param<T>>,
    buffers: Vec<Param<T>>,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization: fan-in scaled uniform convolutions, unit/zero
    /// normalization, zero final linear layer.
    pub fn new(config: &NetConfig, seed: u64) -> Result<Self, ClassifierError> {
        config.validate()?;
        let (_, lay) = layout(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(lay.params.len());
        for (name, shape, init) in lay.params {
            let mut p = Param::new(name, shape, T::zero());
            match init {
                Init::Conv { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    for v in &mut p.data {
                        *v = T::lit(rng.random_range(-bound..bound));
                    }
                }
                Init::Ones => p.data.fill(T::one()),
                Init::Zeros => {}
            }
            params.push(p);
        }
        let buffers = lay
            .buffers
            .into_iter()
            .map(|(name, shape, init)| {
                let fill = if matches!(init, Init::Ones) { T::one() } else { T::zero() };
                Param::new(name, shape, fill)
            })
            .collect();
        let velocity = params.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
        Ok(Self {
            config: config.clone(),
            params,
            buffers,
            velocity,
        })
    }

    /// Assembles a model from stored tensors, checking names and shapes against the
    /// layout implied by `config`. Missing velocity defaults to zero.
    pub fn from_parts(
        config: &NetConfig,
        params: Vec<Param<T>>,
        buffers: Vec<Param<T>>,
        velocity: Option<Vec<Vec<T>>>,
    ) -> Result<Self, ClassifierError> {
        config.validate()?;
        let (_, lay) = layout(config);
        let check = |got: &[Param<T>], want: &[(String, Vec<usize>, Init)], what: &str| {
            if got.len() != want.len() {
                return Err(ClassifierError::Shape(format!(
                    "expected {} {what} tensors, got {}",
                    want.len(),
                    got.len()
                )));
            }
            for (g, (name, shape, _)) in got.iter().zip(want) {
                if &g.name != name || &g.shape != shape || g.data.len() != shape.iter().product::<usize>() {
                    return Err(ClassifierError::Shape(format!(
                        "{what} tensor {} {:?} does not match expected {name} {shape:?}",
                        g.name, g.shape
                    )));
                }
            }
            Ok(())
        };
        check(&params, &lay.params, "parameter")?;
        check(&buffers, &lay.buffers, "buffer")?;
        let velocity = match velocity {
            Some(v) => {
                if v.len() != params.len() || v.iter().zip(&params).any(|(a, p)| a.len() != p.data.len()) {
                    return Err(ClassifierError::Shape("velocity does not match parameters".into()));
                }
                v
            }
            None => params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        };
        Ok(Self {
            config: config.clone(),
            params,
            buffers,
            velocity,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Param<T>] {
        &self.buffers
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    pub(crate) fn params_and_velocity_mut(&mut self) -> (&mut [Param<T>], &mut [Vec<T>]) {
        (&mut self.params, &mut self.velocity)
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .chain(&self.buffers)
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |v: &T| U::lit(v.to_f64().unwrap_or(f64::NAN));
        let map = |ps: &[Param<T>]| {
            ps.iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(conv).collect(),
                })
                .collect()
        };
        ModelParams {
            config: self.config.clone(),
            params: map(&self.params),
            buffers: map(&self.buffers),
            velocity: self.velocity.iter().map(|v| v.iter().map(conv).collect()).collect(),
        }
    }

    fn plan(&self) -> Plan {
        layout(&self.config).0
    }
}

/// Gradients aligned with [`ModelParams::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub grads: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    fn zeros_like(params: &ModelParams<T>) -> Self {
        Self {
            grads: params.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Packs ROIs into an `n x 2 x s x s` tensor, flipping those marked in `flip`.
pub fn batch_from_rois<T: Scalar>(rois: &[&FlowField], flip: &[bool], size: usize) -> Result<Tensor<T>, ClassifierError> {
    if rois.len() != flip.len() {
        return Err(ClassifierError::Argument("flip mask length differs from batch".into()));
    }
    let plane = size * size;
    let mut x = Tensor::zeros(rois.len(), 2, size, size);
    for (i, (roi, &f)) in rois.iter().zip(flip).enumerate() {
        if roi.width() != size || roi.height() != size {
            return Err(ClassifierError::Shape(format!(
                "roi is {}x{}, network expects {size}x{size}",
                roi.width(),
                roi.height()
            )));
        }
        let flipped;
        let src = if f {
            flipped = roi.hflip();
            &flipped
        } else {
            *roi
        };
        let dst = x.sample_mut(i);
        for (k, uv) in src.data().chunks_exact(2).enumerate() {
            dst[k] = T::lit(uv[0] as f64);
            dst[plane + k] = T::lit(uv[1] as f64);
        }
    }
    Ok(x)
}

fn check_input<T: Scalar>(cfg: &NetConfig, x: &Tensor<T>) -> Result<(), ClassifierError> {
    if x.n == 0 {
        return Err(ClassifierError::Shape("empty batch".into()));
    }
    if x.c != cfg.input_channels || x.h != cfg.input_size || x.w != cfg.input_size {
        return Err(ClassifierError::Shape(format!(
            "input {}x{}x{} does not match configured {}x{}x{}",
            x.c, x.h, x.w, cfg.input_channels, cfg.input_size, cfg.input_size
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct ConvBnCache<T> {
    input: Tensor<T>,
    bn: BnCache<T>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    conv1: ConvBnCache<T>,
    mid: Tensor<T>,
    conv2: ConvBnCache<T>,
    down: Option<ConvBnCache<T>>,
    out: Tensor<T>,
}

#[derive(Debug, Clone)]
struct BnStat<T> {
    mean_idx: usize,
    var_idx: usize,
    mean: Vec<T>,
    var: Vec<T>,
    count: usize,
}

/// Activations saved by [`forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    stem: ConvBnCache<T>,
    stem_out: Tensor<T>,
    pool: Option<([usize; 4], Vec<usize>)>,
    blocks: Vec<BlockCache<T>>,
    last_shape: [usize; 4],
    features: Vec<T>,
    probs: Vec<T>,
    stats: Vec<BnStat<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn probs(&self) -> &[T] {
        &self.probs
    }
}

fn conv_bn_train<T: Scalar>(
    p: &[Param<T>],
    cb: &ConvBn,
    x: Tensor<T>,
    stats: &mut Vec<BnStat<T>>,
) -> (Tensor<T>, ConvBnCache<T>) {
    let z = conv_forward(&cb.geom, &p[cb.weight].data, &x);
    let count = z.n * z.plane();
    let (y, bn) = bn_forward_train(&z, &p[cb.gamma].data, &p[cb.beta].data);
    stats.push(BnStat {
        mean_idx: cb.mean,
        var_idx: cb.var,
        mean: bn.mean.clone(),
        var: bn.var.clone(),
        count,
    });
    (y, ConvBnCache { input: x, bn })
}

fn conv_bn_eval<T: Scalar>(p: &[Param<T>], b: &[Param<T>], cb: &ConvBn, x: &Tensor<T>) -> Tensor<T> {
    let z = conv_forward(&cb.geom, &p[cb.weight].data, x);
    bn_forward_eval(&z, &p[cb.gamma].data, &p[cb.beta].data, &b[cb.mean].data, &b[cb.var].data)
}

fn conv_bn_backward<T: Scalar>(
    p: &[Param<T>],
    cb: &ConvBn,
    cache: &ConvBnCache<T>,
    dy: &Tensor<T>,
    grads: &mut [Vec<T>],
) -> Tensor<T> {
    let mut dgamma = std::mem::take(&mut grads[cb.gamma]);
    let mut dbeta = std::mem::take(&mut grads[cb.beta]);
    let dz = bn_backward(&cache.bn, &p[cb.gamma].data, dy, &mut dgamma, &mut dbeta);
    grads[cb.gamma] = dgamma;
    grads[cb.beta] = dbeta;
    conv_backward(&cb.geom, &p[cb.weight].data, &cache.input, &dz, &mut grads[cb.weight])
}

fn add_inplace<T: Scalar>(a: &mut Tensor<T>, b: &Tensor<T>) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += *y;
    }
}

fn head<T: Scalar>(p: &[Param<T>], plan: &Plan, features: &[T], n: usize) -> Vec<T> {
    let w = &p[plan.fc_weight].data;
    let b = p[plan.fc_bias].data[0];
    let c = w.len();
    (0..n)
        .map(|i| {
            let z = features[i * c..(i + 1) * c]
                .iter()
                .zip(w)
                .fold(b, |acc, (f, w)| acc + *f * *w);
            sigmoid(z)
        })
        .collect()
}

/// Inference-mode forward pass using running normalization statistics.
pub fn forward<T: Scalar>(params: &ModelParams<T>, x: &Tensor<T>) -> Result<Vec<T>, ClassifierError> {
    check_input(&params.config, x)?;
    let plan = params.plan();
    let (p, b) = (&params.params[..], &params.buffers[..]);
    let mut h = relu(conv_bn_eval(p, b, &plan.stem, x));
    if plan.pool {
        h = maxpool_forward(&h).0;
    }
    for blk in &plan.blocks {
        let mid = relu(conv_bn_eval(p, b, &blk.conv1, &h));
        let mut out = conv_bn_eval(p, b, &blk.conv2, &mid);
        match &blk.down {
            Some(d) => add_inplace(&mut out, &conv_bn_eval(p, b, d, &h)),
            None => add_inplace(&mut out, &h),
        }
        h = relu(out);
    }
    let features = gap_forward(&h);
    Ok(head(p, &plan, &features, x.n))
}

/// Training-mode forward pass (batch statistics); keeps what backward needs.
pub fn forward_train<T: Scalar>(params: &ModelParams<T>, x: &Tensor<T>) -> Result<ForwardCache<T>, ClassifierError> {
    check_input(&params.config, x)?;
    let plan = params.plan();
    let p = &params.params[..];
    let mut stats = Vec::new();
    let (z, stem) = conv_bn_train(p, &plan.stem, x.clone(), &mut stats);
    let stem_out = relu(z);
    let (mut h, pool) = if plan.pool {
        let (y, arg) = maxpool_forward(&stem_out);
        (y, Some((stem_out.shape(), arg)))
    } else {
        (stem_out.clone(), None)
    };
    let mut blocks = Vec::with_capacity(plan.blocks.len());
    for blk in &plan.blocks {
        let (a, conv1) = conv_bn_train(p, &blk.conv1, h.clone(), &mut stats);
        let mid = relu(a);
        let (mut out, conv2) = conv_bn_train(p, &blk.conv2, mid.clone(), &mut stats);
        let down = match &blk.down {
            Some(d) => {
                let (s, c) = conv_bn_train(p, d, h, &mut stats);
                add_inplace(&mut out, &s);
                Some(c)
            }
            None => {
                add_inplace(&mut out, &h);
                None
            }
        };
        let out = relu(out);
        h = out.clone();
        blocks.push(BlockCache {
            conv1,
            mid,
            conv2,
            down,
            out,
        });
    }
    let features = gap_forward(&h);
    let probs = head(p, &plan, &features, x.n);
    Ok(ForwardCache {
        stem,
        stem_out,
        pool,
        blocks,
        last_shape: h.shape(),
        features,
        probs,
        stats,
    })
}

/// Folds the batch statistics of a training forward pass into the running averages.
pub fn update_running_stats<T: Scalar>(params: &mut ModelParams<T>, cache: &ForwardCache<T>) {
    let m = T::lit(BN_MOMENTUM);
    let keep = T::one() - m;
    for s in &cache.stats {
        let unbias = if s.count > 1 {
            T::lit(s.count as f64 / (s.count - 1) as f64)
        } else {
            T::one()
        };
        for (r, v) in params.buffers[s.mean_idx].data.iter_mut().zip(&s.mean) {
            *r = keep * *r + m * *v;
        }
        for (r, v) in params.buffers[s.var_idx].data.iter_mut().zip(&s.var) {
            *r = keep * *r + m * *v * unbias;
        }
    }
}

/// Mean binary cross-entropy with probabilities clamped to `[eps, 1 - eps]`.
pub fn loss_bce<T: Scalar>(probs: &[T], labels: &[T]) -> Result<T, ClassifierError> {
    if probs.len() != labels.len() {
        return Err(ClassifierError::Shape(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(ClassifierError::Argument("empty batch".into()));
    }
    let eps = T::lit(BCE_EPS);
    let mut total = T::zero();
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.max(eps).min(T::one() - eps);
        total -= y * p.ln() + (T::one() - y) * (T::one() - p).ln();
    }
    Ok(total / T::lit(probs.len() as f64))
}

/// Gradients of the mean cross-entropy with respect to every parameter, using the
/// activations saved by [`forward_train`]. Labels are 1 for Moving, 0 for Still.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    labels: &[T],
) -> Result<Gradients<T>, ClassifierError> {
    let n = cache.probs.len();
    if labels.len() != n {
        return Err(ClassifierError::Shape(format!("{n} outputs for {} labels", labels.len())));
    }
    let plan = params.plan();
    let p = &params.params[..];
    let mut g = Gradients::zeros_like(params);
    let inv_n = T::one() / T::lit(n as f64);
    let w = &p[plan.fc_weight].data;
    let c = w.len();
    let mut dfeat = vec![T::zero(); n * c];
    for i in 0..n {
        let dz = (cache.probs[i] - labels[i]) * inv_n;
        g.grads[plan.fc_bias][0] += dz;
        let f = &cache.features[i * c..(i + 1) * c];
        for k in 0..c {
            g.grads[plan.fc_weight][k] += dz * f[k];
            dfeat[i * c + k] = dz * w[k];
        }
    }
    let mut dh = gap_backward(cache.last_shape, &dfeat);
    for (blk, bc) in plan.blocks.iter().zip(&cache.blocks).rev() {
        let dout = relu_backward(&bc.out, dh);
        let dmid = conv_bn_backward(p, &blk.conv2, &bc.conv2, &dout, &mut g.grads);
        let dmid = relu_backward(&bc.mid, dmid);
        let mut dx = conv_bn_backward(p, &blk.conv1, &bc.conv1, &dmid, &mut g.grads);
        match (&blk.down, &bc.down) {
            (Some(d), Some(dc)) => add_inplace(&mut dx, &conv_bn_backward(p, d, dc, &dout, &mut g.grads)),
            _ => add_inplace(&mut dx, &dout),
        }
        dh = dx;
    }
    if let Some((shape, arg)) = &cache.pool {
        dh = maxpool_backward(*shape, arg, &dh);
    }
    let dstem = relu_backward(&cache.stem_out, dh);
    conv_bn_backward(p, &plan.stem, &cache.stem, &dstem, &mut g.grads);
    Ok(g)
}

/// Training-mode forward, loss and backward in one call.
pub fn loss_and_gradients<T: Scalar>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    labels: &[T],
) -> Result<(T, Gradients<T>, ForwardCache<T>), ClassifierError> {
    let cache = forward_train(params, x)?;
    let loss = loss_bce(&cache.probs, labels)?;
    let grads = backward(params, &cache, labels)?;
    Ok((loss, grads, cache))
}
