//! Shared-trunk network with four softmax heads.
//!
//! The architecture is data: a [`ModelConfig`] lists the trunk layers in
//! order, and every head is a dense layer followed by a softmax over the
//! trunk's final activation vector. Parameters are initialized Glorot-uniform
//! (biases zero) and are always held at values exactly representable as
//! `f32`, which is what checkpoints store.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::Head;
use crate::layers::{softmax, Cache, Conv2d, Dense, Layer, MaxPool, Padding};
use crate::rng::Rng;
use crate::tensor::{argmax, Tensor};

pub const INPUT_SHAPE: [usize; 3] = [50, 50, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    GlorotUniform,
}

/// One entry of the trunk description. Dropout layers take their rate from
/// [`ModelConfig::dropout_schedule`] in order of appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d { filters: usize, kernel: usize },
    Relu,
    MaxPool,
    Dropout,
    Flatten,
    Dense { units: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub name: Head,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input: [usize; 3],
    pub blocks: Vec<LayerSpec>,
    pub dropout_schedule: Vec<f64>,
    pub heads: Vec<HeadSpec>,
    pub init: InitScheme,
    pub seed: u64,
    pub conv_stride: usize,
    pub conv_padding: Padding,
    pub pool_window: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::with_trunk(&[32, 32, 64, 64, 128, 128], 256)
    }
}

impl ModelConfig {
    /// Three conv blocks (two 3×3 convs + ReLU each, max-pool, dropout),
    /// flatten, one dense+ReLU+dropout layer, then the heads. `channels`
    /// holds the six conv widths.
    pub fn with_trunk(channels: &[usize; 6], dense_units: usize) -> Self {
        use LayerSpec::*;
        let mut blocks = Vec::new();
        for pair in channels.chunks(2) {
            for &filters in pair {
                blocks.push(Conv2d { filters, kernel: 3 });
                blocks.push(Relu);
            }
            blocks.push(MaxPool);
            blocks.push(Dropout);
        }
        blocks.extend([Flatten, Dense { units: dense_units }, Relu, Dropout]);
        ModelConfig {
            input: INPUT_SHAPE,
            blocks,
            dropout_schedule: vec![0.6, 0.5, 0.4, 0.4],
            heads: Head::ALL
                .iter()
                .map(|&name| HeadSpec {
                    name,
                    classes: name.num_classes(),
                })
                .collect(),
            init: InitScheme::GlorotUniform,
            seed: 0,
            conv_stride: 1,
            conv_padding: Padding::Same,
            pool_window: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |field: &str, msg: String| Error::Config(format!("model.{field}: {msg}"));
        if self.input != INPUT_SHAPE {
            return Err(cfg_err("input", format!("must be {INPUT_SHAPE:?}, got {:?}", self.input)));
        }
        if self.heads.len() != 4 {
            return Err(cfg_err(
                "heads",
                format!("exactly 4 heads are required, got {}", self.heads.len()),
            ));
        }
        for (spec, head) in self.heads.iter().zip(Head::ALL) {
            if spec.name != head || spec.classes != head.num_classes() {
                return Err(cfg_err(
                    "heads",
                    format!(
                        "expected {head} with {} classes, got {} with {}",
                        head.num_classes(),
                        spec.name,
                        spec.classes
                    ),
                ));
            }
        }
        if let Some(r) = self.dropout_schedule.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(cfg_err("dropout_schedule", format!("rate {r} is outside [0, 1)")));
        }
        let dropouts = self.blocks.iter().filter(|b| **b == LayerSpec::Dropout).count();
        if dropouts != self.dropout_schedule.len() {
            return Err(cfg_err(
                "dropout_schedule",
                format!(
                    "{} rates for {dropouts} dropout layers",
                    self.dropout_schedule.len()
                ),
            ));
        }
        if self.conv_stride == 0 {
            return Err(cfg_err("conv_stride", "must be at least 1".into()));
        }
        if self.pool_window == 0 {
            return Err(cfg_err("pool_window", "must be at least 1".into()));
        }
        self.feature_width().map(|_| ())
    }

    /// Walks the trunk shapes and returns the width of the final feature
    /// vector shared by all heads.
    pub fn feature_width(&self) -> Result<usize> {
        let cfg_err = |i: usize, msg: String| Error::Config(format!("model.blocks[{i}]: {msg}"));
        enum Shape {
            Image([usize; 3]),
            Flat(usize),
        }
        let mut shape = Shape::Image(self.input);
        for (i, spec) in self.blocks.iter().enumerate() {
            shape = match (spec, shape) {
                (LayerSpec::Conv2d { filters, kernel }, Shape::Image([h, w, _])) => {
                    if *filters == 0 || *kernel == 0 {
                        return Err(cfg_err(i, "filters and kernel must be positive".into()));
                    }
                    let out = |n: usize| match self.conv_padding {
                        Padding::Same => Some(n.div_ceil(self.conv_stride)),
                        Padding::Valid => n.checked_sub(*kernel).map(|d| d / self.conv_stride + 1),
                    };
                    match (out(h), out(w)) {
                        (Some(oh), Some(ow)) => Shape::Image([oh, ow, *filters]),
                        _ => return Err(cfg_err(i, format!("kernel {kernel} does not fit {h}×{w}"))),
                    }
                }
                (LayerSpec::MaxPool, Shape::Image([h, w, c])) => {
                    let p = self.pool_window;
                    if h < p || w < p {
                        return Err(cfg_err(i, format!("pool window {p} does not fit {h}×{w}")));
                    }
                    Shape::Image([h / p, w / p, c])
                }
                (LayerSpec::Flatten, Shape::Image([h, w, c])) => Shape::Flat(h * w * c),
                (LayerSpec::Dense { units }, Shape::Flat(_)) => {
                    if *units == 0 {
                        return Err(cfg_err(i, "dense units must be positive".into()));
                    }
                    Shape::Flat(*units)
                }
                (LayerSpec::Relu | LayerSpec::Dropout, s) => s,
                (LayerSpec::Conv2d { .. } | LayerSpec::MaxPool | LayerSpec::Flatten, Shape::Flat(_)) => {
                    return Err(cfg_err(i, "spatial layer after flatten".into()))
                }
                (LayerSpec::Dense { .. }, Shape::Image(_)) => {
                    return Err(cfg_err(i, "dense layer before flatten".into()))
                }
            };
        }
        match shape {
            Shape::Flat(n) => Ok(n),
            Shape::Image(_) => Err(Error::Config(
                "model.blocks: trunk must end in a vector (add a flatten layer)".into(),
            )),
        }
    }
}

/// Probability vectors of the four heads for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub probs: [Vec<f64>; 4],
}

impl HeadOutputs {
    pub fn get(&self, head: Head) -> &[f64] {
        &self.probs[head.index()]
    }

    pub fn emotion(&self) -> &[f64] {
        self.get(Head::Emotion)
    }

    pub fn gender(&self) -> &[f64] {
        self.get(Head::Gender)
    }

    pub fn race(&self) -> &[f64] {
        self.get(Head::Race)
    }

    pub fn age(&self) -> &[f64] {
        self.get(Head::Age)
    }
}

/// Per-head argmax with lowest-index tie-break.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub classes: [usize; 4],
    pub confidences: [f64; 4],
}

impl Prediction {
    pub fn from_outputs(out: &HeadOutputs) -> Self {
        let mut classes = [0; 4];
        let mut confidences = [0.0; 4];
        for h in Head::ALL {
            let p = out.get(h);
            let c = argmax(p);
            classes[h.index()] = c;
            confidences[h.index()] = p[c];
        }
        Prediction { classes, confidences }
    }

    pub fn class(&self, head: Head) -> usize {
        self.classes[head.index()]
    }

    pub fn class_name(&self, head: Head) -> &'static str {
        head.class_names()[self.class(head)]
    }
}

/// Everything a backward pass needs from one forward pass.
#[derive(Debug)]
pub struct ForwardCache {
    trunk: Vec<Option<Cache>>,
    features: Tensor,
}

/// Gradient tensors aligned with [`Model::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.scale(factor);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    trunk: Vec<Layer>,
    heads: Vec<Dense>,
}

fn glorot(rng: &mut Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<Tensor> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = rng.uniform(shape, -limit, limit)?;
    round_to_f32(t.data_mut());
    Ok(t)
}

fn round_to_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

impl Model {
    /// Instantiates the configured architecture with freshly initialized
    /// parameters drawn from `config.seed`.
    pub fn build(config: &ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let mut rates = config.dropout_schedule.iter().copied();
        let mut trunk = Vec::with_capacity(config.blocks.len());
        let mut channels = config.input[2];
        let mut width = 0;
        for spec in &config.blocks {
            let layer = match *spec {
                LayerSpec::Conv2d { filters, kernel } => {
                    let shape = [kernel, kernel, channels, filters];
                    let w = glorot(&mut rng, &shape, kernel * kernel * channels, kernel * kernel * filters)?;
                    channels = filters;
                    Layer::Conv2d(Conv2d::new(w, Tensor::zeros(&[filters]), config.conv_stride, config.conv_padding)?)
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool => Layer::MaxPool(MaxPool { window: config.pool_window }),
                LayerSpec::Dropout => Layer::Dropout {
                    rate: rates.next().expect("validated schedule length"),
                },
                LayerSpec::Flatten => {
                    width = config.feature_width_at_flatten();
                    Layer::Flatten
                }
                LayerSpec::Dense { units } => {
                    let w = glorot(&mut rng, &[width, units], width, units)?;
                    width = units;
                    Layer::Dense(Dense::new(w, Tensor::zeros(&[units]))?)
                }
            };
            trunk.push(layer);
        }
        let features = config.feature_width()?;
        let heads = Head::ALL
            .iter()
            .map(|h| {
                let k = h.num_classes();
                Dense::new(glorot(&mut rng, &[features, k], features, k)?, Tensor::zeros(&[k]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            config: config.clone(),
            trunk,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn trunk(&self) -> &[Layer] {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut [Layer] {
        &mut self.trunk
    }

    pub fn head(&self, head: Head) -> &Dense {
        &self.heads[head.index()]
    }

    pub fn head_mut(&mut self, head: Head) -> &mut Dense {
        &mut self.heads[head.index()]
    }

    /// Named parameter tensors: trunk layers in order, then the heads in
    /// canonical head order; weight before bias.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.trunk.iter().enumerate() {
            if let Some((w, b)) = layer.params() {
                out.push((format!("trunk.{i}.{}.weight", layer.kind()), w));
                out.push((format!("trunk.{i}.{}.bias", layer.kind()), b));
            }
        }
        for (h, d) in Head::ALL.iter().zip(&self.heads) {
            out.push((format!("head.{h}.weight"), &d.weights));
            out.push((format!("head.{h}.bias"), &d.bias));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.trunk {
            if let Some((w, b)) = layer.params_mut() {
                out.push(w);
                out.push(b);
            }
        }
        for d in &mut self.heads {
            out.push(&mut d.weights);
            out.push(&mut d.bias);
        }
        out
    }

    /// Positions in [`Model::parameters`] that belong only to `head`.
    pub fn head_parameter_indices(&self, head: Head) -> [usize; 2] {
        let trunk = self.parameters().len() - 2 * Head::ALL.len();
        [trunk + 2 * head.index(), trunk + 2 * head.index() + 1]
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self
                .parameters()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    /// Snaps every parameter to the nearest `f32`.
    pub fn round_parameters(&mut self) {
        for t in self.parameters_mut() {
            round_to_f32(t.data_mut());
        }
    }

    fn check_input(image: &Tensor) -> Result<()> {
        if image.shape() != INPUT_SHAPE {
            return Err(Error::Dimension(format!(
                "model input must be {INPUT_SHAPE:?}, got {:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass for one `50×50×1` image.
    pub fn forward_example(&self, image: &Tensor, mode: Mode, rng: &mut Rng) -> Result<(HeadOutputs, ForwardCache)> {
        Model::check_input(image)?;
        let mut x = image.clone();
        let mut caches = Vec::with_capacity(self.trunk.len());
        for layer in &self.trunk {
            let (y, cache) = layer.forward(&x, mode, rng)?;
            caches.push(Some(cache));
            x = y;
        }
        let outputs = self.heads_forward(&x)?;
        Ok((
            outputs,
            ForwardCache {
                trunk: caches,
                features: x,
            },
        ))
    }

    fn heads_forward(&self, features: &Tensor) -> Result<HeadOutputs> {
        let mut probs: [Vec<f64>; 4] = Default::default();
        for (slot, d) in probs.iter_mut().zip(&self.heads) {
            *slot = softmax(&d.apply(features)?)?.into_data();
        }
        Ok(HeadOutputs { probs })
    }

    /// Inference-mode forward pass; dropout is inactive and no cache is kept.
    pub fn infer(&self, image: &Tensor) -> Result<HeadOutputs> {
        Model::check_input(image)?;
        // infer mode never draws from the generator
        let mut rng = Rng::new(0);
        let mut x = image.clone();
        for layer in &self.trunk {
            x = layer.forward(&x, Mode::Infer, &mut rng)?.0;
        }
        self.heads_forward(&x)
    }

    /// Forward pass over a `b×50×50×1` batch, examples processed in order
    /// with the shared generator.
    pub fn forward(&self, batch: &Tensor, mode: Mode, rng: &mut Rng) -> Result<(Vec<HeadOutputs>, Vec<ForwardCache>)> {
        let &[b, h, w, c] = batch.shape() else {
            return Err(Error::Dimension(format!(
                "batch must be b×50×50×1, got {:?}",
                batch.shape()
            )));
        };
        let per = h * w * c;
        let mut outs = Vec::with_capacity(b);
        let mut caches = Vec::with_capacity(b);
        for i in 0..b {
            let image = Tensor::new(vec![h, w, c], batch.data()[i * per..(i + 1) * per].to_vec())?;
            let (o, cache) = self.forward_example(&image, mode, rng)?;
            outs.push(o);
            if mode == Mode::Train {
                caches.push(cache);
            }
        }
        Ok((outs, caches))
    }

    pub fn predict(&self, image: &Tensor) -> Result<Prediction> {
        Ok(Prediction::from_outputs(&self.infer(image)?))
    }

    /// Backpropagates per-head gradients with respect to the logits.
    /// Heads given `None` contribute nothing; if every head is `None` the
    /// result is all zeros without touching the trunk.
    pub fn backward(&self, mut cache: ForwardCache, logit_grads: &[Option<Tensor>; 4]) -> Result<Gradients> {
        let mut grads = self.zero_gradients();
        let n_trunk = grads.tensors.len() - 2 * Head::ALL.len();
        let mut feature_grad: Option<Tensor> = None;
        for (i, (d, g)) in self.heads.iter().zip(logit_grads).enumerate() {
            let Some(g) = g else { continue };
            let lg = d.backward(g, Cache::Dense { input: cache.features.clone() })?;
            grads.tensors[n_trunk + 2 * i] = lg.weights.expect("dense has weights");
            grads.tensors[n_trunk + 2 * i + 1] = lg.bias.expect("dense has bias");
            match feature_grad.as_mut() {
                Some(acc) => acc.add_assign(&lg.input)?,
                None => feature_grad = Some(lg.input),
            }
        }
        let Some(mut upstream) = feature_grad else {
            return Ok(grads);
        };
        let mut slot = n_trunk;
        for (layer, c) in self.trunk.iter().zip(cache.trunk.iter_mut()).rev() {
            let c = c
                .take()
                .ok_or_else(|| Error::Usage(format!("{} backward called without a cache", layer.kind())))?;
            let lg = layer.backward(&upstream, c)?;
            if let (Some(w), Some(b)) = (lg.weights, lg.bias) {
                slot -= 2;
                grads.tensors[slot] = w;
                grads.tensors[slot + 1] = b;
            }
            upstream = lg.input;
        }
        Ok(grads)
    }
}

impl ModelConfig {
    fn feature_width_at_flatten(&self) -> usize {
        let idx = self
            .blocks
            .iter()
            .position(|b| *b == LayerSpec::Flatten)
            .expect("validated trunk has a flatten layer");
        let prefix = ModelConfig {
            blocks: self.blocks[..=idx].to_vec(),
            ..self.clone()
        };
        prefix.feature_width().expect("validated trunk prefix")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig::with_trunk(&[2, 2, 3, 3, 4, 4], 8)
    }

    #[test]
    fn reference_parameter_count() {
        // closed form, layer by layer: k·k·c_in·c_out + c_out for convs,
        // in·out + out for dense layers
        let conv = |cin: usize, cout: usize| 9 * cin * cout + cout;
        let dense = |i: usize, o: usize| i * o + o;
        let flat = 6 * 6 * 128;
        assert_eq!(flat, 4608);
        let expected = conv(1, 32)
            + conv(32, 32)
            + conv(32, 64)
            + conv(64, 64)
            + conv(64, 128)
            + conv(128, 128)
            + dense(flat, 256)
            + dense(256, 7)
            + dense(256, 3)
            + dense(256, 3)
            + dense(256, 5);
        assert_eq!(expected, 1_470_962);
        let m = Model::build(&ModelConfig::default()).unwrap();
        assert_eq!(m.parameter_count(), expected);
        assert_eq!(ModelConfig::default().feature_width().unwrap(), 256);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::build(&small()).unwrap();
        let b = Model::build(&small()).unwrap();
        assert_eq!(a, b);
        let c = Model::build(&ModelConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn three_heads_is_a_config_error() {
        let mut cfg = small();
        cfg.heads.pop();
        let err = Model::build(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("heads")), "{err}");
    }

    #[test]
    fn dropout_schedule_must_match_layers() {
        let mut cfg = small();
        cfg.dropout_schedule.pop();
        assert!(matches!(Model::build(&cfg), Err(Error::Config(_))));
        let mut cfg = small();
        cfg.dropout_schedule[0] = 1.0;
        assert!(matches!(Model::build(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn parameters_are_f32_exact() {
        let m = Model::build(&small()).unwrap();
        for (_, t) in m.parameters() {
            assert!(t.data().iter().all(|&v| v as f32 as f64 == v));
        }
    }

    #[test]
    fn heads_normalize_and_infer_is_repeatable() {
        let m = Model::build(&small()).unwrap();
        let img = Rng::new(5).uniform(&INPUT_SHAPE, 0.0, 1.0).unwrap();
        let a = m.infer(&img).unwrap();
        let b = m.infer(&img).unwrap();
        assert_eq!(a, b);
        for h in Head::ALL {
            let s: f64 = a.get(h).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(a.get(h).iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn identical_batch_members_match() {
        let m = Model::build(&small()).unwrap();
        let img = Rng::new(6).uniform(&INPUT_SHAPE, 0.0, 1.0).unwrap();
        let mut data = img.data().to_vec();
        data.extend_from_slice(img.data());
        let batch = Tensor::new(vec![2, 50, 50, 1], data).unwrap();
        let (outs, caches) = m.forward(&batch, Mode::Infer, &mut Rng::new(0)).unwrap();
        assert!(caches.is_empty());
        assert_eq!(outs[0], outs[1]);
    }

    #[test]
    fn wrong_input_shape() {
        let m = Model::build(&small()).unwrap();
        assert!(matches!(m.infer(&Tensor::zeros(&[48, 48, 1])), Err(Error::Dimension(_))));
    }

    #[test]
    fn prediction_tie_break() {
        let out = HeadOutputs {
            probs: [
                vec![0.1, 0.1, 0.3, 0.1, 0.1, 0.3, 0.0],
                vec![1.0 / 3.0; 3],
                vec![0.9, 0.05, 0.05],
                vec![0.2; 5],
            ],
        };
        let p = Prediction::from_outputs(&out);
        assert_eq!(p.classes, [2, 0, 0, 0]);
    }

    #[test]
    fn dominant_class_zero_names() {
        let out = HeadOutputs {
            probs: [
                vec![0.9, 0.02, 0.02, 0.02, 0.02, 0.01, 0.01],
                vec![0.9, 0.05, 0.05],
                vec![0.9, 0.05, 0.05],
                vec![0.9, 0.025, 0.025, 0.025, 0.025],
            ],
        };
        let p = Prediction::from_outputs(&out);
        let names: Vec<_> = Head::ALL.iter().map(|&h| p.class_name(h)).collect();
        assert_eq!(names, ["surprise", "male", "Caucasian", "0-3"]);
    }

    #[test]
    fn config_json_roundtrip_and_unknown_keys() {
        let cfg = ModelConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        let err = serde_json::from_str::<ModelConfig>(r#"{"dropout_shedule": [0.5]}"#).unwrap_err();
        assert!(err.to_string().contains("dropout_shedule"));
    }
}
