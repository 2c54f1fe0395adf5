//! Finite-difference gradient checks and nested-loop oracles shared by the
//! integration suites.

#![allow(dead_code)]

use mtfer_core::heads::Head;
use mtfer_core::layers::{softmax, softmax_backward, Cache, Conv2d, Dense, Layer, MaxPool, Padding};
use mtfer_core::loss::{cce_index, cce_logit_grad, LossWeights};
use mtfer_core::model::{Mode, ModelConfig};
use mtfer_core::{Model, Rng, Tensor};

pub const EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const CONFIGS_PER_KIND: usize = 20;
const PROBES_PER_TENSOR: usize = 24;

/// `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps vanishing gradients
/// from turning round-off into large ratios.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn probes(n: usize, rng: &mut Rng) -> Vec<usize> {
    if n <= PROBES_PER_TENSOR {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.truncate(PROBES_PER_TENSOR);
    idx
}

/// Central difference of `f` along coordinate `j` of `t`.
fn central(t: &Tensor, j: usize, f: &dyn Fn(&Tensor) -> f64) -> f64 {
    let mut plus = t.clone();
    plus.data_mut()[j] += EPS;
    let mut minus = t.clone();
    minus.data_mut()[j] -= EPS;
    (f(&plus) - f(&minus)) / (2.0 * EPS)
}

#[derive(Debug, Clone, Copy)]
pub struct KindReport {
    pub kind: &'static str,
    pub configs: usize,
    pub worst: f64,
}

impl KindReport {
    pub fn passed(&self) -> bool {
        self.configs >= CONFIGS_PER_KIND && self.worst <= GRAD_TOL
    }
}

/// Checks input, weight and bias gradients of one layer under the scalar
/// loss `⟨r, layer(x)⟩` with a fixed random `r`. Dropout is replayed with
/// the same seed for every evaluation so its mask is constant.
pub fn check_layer(layer: &Layer, x: &Tensor, rng: &mut Rng) -> f64 {
    let seed = rng.next_u64();
    let run = |l: &Layer, x: &Tensor| l.forward(x, Mode::Train, &mut Rng::new(seed)).unwrap();
    let (y, cache) = run(layer, x);
    let r = rng.uniform(y.shape(), -1.0, 1.0).unwrap();
    let grads = layer.backward(&r, cache).unwrap();
    let mut worst: f64 = 0.0;

    for j in probes(x.len(), rng) {
        let n = central(x, j, &|xp| dot(&run(layer, xp).0, &r));
        worst = worst.max(rel_err(grads.input.data()[j], n));
    }
    if let (Some(gw), Some(gb)) = (&grads.weights, &grads.bias) {
        for (slot, g) in [(0usize, gw), (1, gb)] {
            let (w, b) = layer.params().unwrap();
            let base = if slot == 0 { w.clone() } else { b.clone() };
            for j in probes(base.len(), rng) {
                let f = |t: &Tensor| {
                    let mut l = layer.clone();
                    let (w, b) = l.params_mut().unwrap();
                    *(if slot == 0 { w } else { b }) = t.clone();
                    dot(&run(&l, x).0, &r)
                };
                worst = worst.max(rel_err(g.data()[j], central(&base, j, &f)));
            }
        }
    }
    worst
}

fn pick(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Input values at least `gap` away from zero, so ReLU kinks stay outside
/// the difference stencil.
fn away_from_zero(shape: &[usize], rng: &mut Rng, gap: f64) -> Tensor {
    let mut t = rng.uniform(shape, -1.0, 1.0).unwrap();
    for v in t.data_mut() {
        if v.abs() < gap {
            *v = if *v < 0.0 { -gap } else { gap } * (1.0 + rng.next_f64());
        }
    }
    t
}

/// Distinct values spaced by at least 1e-3, so no pooling window has a
/// near tie.
fn tie_free(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut ranks);
    let data = ranks
        .iter()
        .map(|&k| (k as f64 - n as f64 / 2.0) * 0.01 + 0.004 * rng.next_f64())
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_conv(rng: &mut Rng) -> (Conv2d, Tensor) {
    let k = [1, 2, 3, 5][rng.below(4)];
    let stride = pick(rng, 1, 2);
    let padding = if rng.below(2) == 0 { Padding::Same } else { Padding::Valid };
    let (h, w) = (pick(rng, k, 8), pick(rng, k, 8));
    let (cin, cout) = (pick(rng, 1, 3), pick(rng, 1, 4));
    let conv = Conv2d::new(
        rng.uniform(&[k, k, cin, cout], -1.0, 1.0).unwrap(),
        rng.uniform(&[cout], -1.0, 1.0).unwrap(),
        stride,
        padding,
    )
    .unwrap();
    (conv, rng.uniform(&[h, w, cin], -1.0, 1.0).unwrap())
}

pub fn random_pool(rng: &mut Rng) -> (MaxPool, Tensor) {
    let window = pick(rng, 1, 3);
    let (h, w, c) = (pick(rng, window, 9), pick(rng, window, 9), pick(rng, 1, 3));
    (MaxPool { window }, tie_free(&[h, w, c], rng))
}

pub fn random_dense(rng: &mut Rng) -> (Dense, Tensor) {
    let (i, o) = (pick(rng, 1, 12), pick(rng, 1, 9));
    let d = Dense::new(
        rng.uniform(&[i, o], -1.0, 1.0).unwrap(),
        rng.uniform(&[o], -1.0, 1.0).unwrap(),
    )
    .unwrap();
    (d, rng.uniform(&[i], -1.0, 1.0).unwrap())
}

fn random_shape(rng: &mut Rng) -> Vec<usize> {
    if rng.below(2) == 0 {
        vec![pick(rng, 1, 20)]
    } else {
        vec![pick(rng, 1, 5), pick(rng, 1, 5), pick(rng, 1, 3)]
    }
}

/// Loss `⟨r, softmax(z)⟩` through `softmax_backward`, and the fused
/// `w · cce(softmax(z), c)` gradient.
pub fn check_softmax(rng: &mut Rng) -> f64 {
    let n = pick(rng, 2, 9);
    let z = rng.uniform(&[n], -4.0, 4.0).unwrap();
    let r = rng.uniform(&[n], -1.0, 1.0).unwrap();
    let p = softmax(&z).unwrap();
    let g = softmax_backward(&p, &r).unwrap();
    let c = rng.below(n);
    let w = 0.1 + 4.0 * rng.next_f64();
    let fused = cce_logit_grad(p.data(), c, w);
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let num = central(&z, j, &|zp| dot(&softmax(zp).unwrap(), &r));
        worst = worst.max(rel_err(g.data()[j], num));
        let num = central(&z, j, &|zp| w * cce_index(softmax(zp).unwrap().data(), c));
        worst = worst.max(rel_err(fused.data()[j], num));
    }
    worst
}

/// Small trunk used wherever a full model must train quickly.
pub fn small_config(seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::with_trunk(&[4, 4, 8, 8, 16, 16], 32);
    cfg.seed = seed;
    cfg
}

pub fn without_dropout(mut cfg: ModelConfig) -> ModelConfig {
    cfg.dropout_schedule.iter_mut().for_each(|r| *r = 0.0);
    cfg
}

/// Loss and activation pattern (ReLU signs, pooling winners) of a manual
/// layer-by-layer replay of the model's forward pass.
fn replay(m: &Model, image: &Tensor, seed: u64, labels: &[Option<usize>; 4], weights: &LossWeights) -> (f64, Vec<usize>) {
    let mut rng = Rng::new(seed);
    let mut x = image.clone();
    let mut pattern = Vec::new();
    for layer in m.trunk() {
        let (y, cache) = layer.forward(&x, Mode::Train, &mut rng).unwrap();
        match cache {
            Cache::Relu { input } => pattern.extend(input.data().iter().map(|&v| (v > 0.0) as usize)),
            Cache::MaxPool { argmax, .. } => pattern.extend(argmax),
            _ => {}
        }
        x = y;
    }
    let mut loss = 0.0;
    for h in Head::ALL {
        if let Some(c) = labels[h.index()] {
            let p = softmax(&m.head(h).apply(&x).unwrap()).unwrap();
            loss += weights.get(h) * cce_index(p.data(), c);
        }
    }
    (loss, pattern)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ModelCheck {
    pub worst: f64,
    pub compared: usize,
    pub skipped: usize,
}

/// Whole-model check of the weighted multi-head loss on one example with
/// some heads masked. Probes whose ±ε perturbation flips a ReLU sign or a
/// pooling winner straddle a kink and are skipped; the rest must agree.
pub fn check_model_detailed(rng: &mut Rng) -> ModelCheck {
    let model = Model::build(&small_config(rng.next_u64())).unwrap();
    let image = rng.uniform(&[50, 50, 1], 0.0, 1.0).unwrap();
    let seed = rng.next_u64();
    let weights = LossWeights::default();
    let mut labels = [None; 4];
    for h in Head::ALL {
        if h == Head::Emotion || rng.below(3) > 0 {
            labels[h.index()] = Some(rng.below(h.num_classes()));
        }
    }
    let (out, cache) = model.forward_example(&image, Mode::Train, &mut Rng::new(seed)).unwrap();
    let mut logit_grads: [Option<Tensor>; 4] = Default::default();
    for h in Head::ALL {
        if let Some(c) = labels[h.index()] {
            logit_grads[h.index()] = Some(cce_logit_grad(out.get(h), c, weights.get(h)));
        }
    }
    let grads = model.backward(cache, &logit_grads).unwrap();
    let (_, base_pattern) = replay(&model, &image, seed, &labels, &weights);

    let mut report = ModelCheck::default();
    let n_params = model.parameters().len();
    for t in 0..n_params {
        let base = model.parameters()[t].1.clone();
        for j in probes(base.len(), rng).into_iter().take(4) {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.parameters_mut()[t].data_mut()[j] += delta;
                replay(&m, &image, seed, &labels, &weights)
            };
            let ((lp, pp), (lm, pm)) = (eval(EPS), eval(-EPS));
            if pp != base_pattern || pm != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * EPS);
            report.compared += 1;
            report.worst = report.worst.max(rel_err(grads.tensors[t].data()[j], numeric));
        }
    }
    report
}

pub fn check_model(rng: &mut Rng) -> f64 {
    let r = check_model_detailed(rng);
    assert!(r.compared > r.skipped, "too many kink-straddling probes: {r:?}");
    r.worst
}

/// Runs every kind's check over `CONFIGS_PER_KIND` random configurations.
pub fn gradient_suite(seed: u64) -> Vec<KindReport> {
    let mut rng = Rng::new(seed);
    let mut reports = Vec::new();
    let mut run = |kind: &'static str, f: &mut dyn FnMut(&mut Rng) -> f64| {
        let worst = (0..CONFIGS_PER_KIND).map(|_| f(&mut rng)).fold(0.0, f64::max);
        reports.push(KindReport {
            kind,
            configs: CONFIGS_PER_KIND,
            worst,
        });
    };
    run("conv2d", &mut |rng| {
        let (c, x) = random_conv(rng);
        check_layer(&Layer::Conv2d(c), &x, rng)
    });
    run("maxpool", &mut |rng| {
        let (p, x) = random_pool(rng);
        check_layer(&Layer::MaxPool(p), &x, rng)
    });
    run("dense", &mut |rng| {
        let (d, x) = random_dense(rng);
        check_layer(&Layer::Dense(d), &x, rng)
    });
    run("relu", &mut |rng| {
        let shape = random_shape(rng);
        let x = away_from_zero(&shape, rng, 1e-3);
        check_layer(&Layer::Relu, &x, rng)
    });
    run("dropout", &mut |rng| {
        let shape = random_shape(rng);
        let x = rng.uniform(&shape, -1.0, 1.0).unwrap();
        let rate = 0.7 * rng.next_f64();
        check_layer(&Layer::Dropout { rate }, &x, rng)
    });
    run("flatten", &mut |rng| {
        let shape = vec![pick(rng, 1, 5), pick(rng, 1, 5), pick(rng, 1, 3)];
        let x = rng.uniform(&shape, -1.0, 1.0).unwrap();
        check_layer(&Layer::Flatten, &x, rng)
    });
    run("softmax+cce", &mut check_softmax);
    run("model", &mut check_model);
    reports
}

/// Direct nested-loop convolution with padding computed from the output
/// size: `same` gives `ceil(n / s)` outputs and puts the smaller half of
/// the padding first.
pub fn naive_conv(conv: &Conv2d, x: &Tensor) -> Tensor {
    let (&[h, w, cin], &[k, _, _, cout]) = (x.shape(), conv.weights.shape()) else {
        panic!("bad shapes")
    };
    let s = conv.stride;
    let extent = |n: usize| match conv.padding {
        Padding::Same => {
            let out = (n + s - 1) / s;
            let total = ((out - 1) * s + k).saturating_sub(n);
            (out, total / 2)
        }
        Padding::Valid => ((n - k) / s + 1, 0),
    };
    let ((oh, pt), (ow, pl)) = (extent(h), extent(w));
    let mut y = Tensor::zeros(&[oh, ow, cout]);
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut acc = conv.bias.data()[co];
                for dy in 0..k {
                    for dx in 0..k {
                        let iy = (oy * s + dy) as isize - pt as isize;
                        let ix = (ox * s + dx) as isize - pl as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            acc += x.get(&[iy as usize, ix as usize, ci]).unwrap()
                                * conv.weights.get(&[dy, dx, ci, co]).unwrap();
                        }
                    }
                }
                y.set(&[oy, ox, co], acc).unwrap();
            }
        }
    }
    y
}

pub fn naive_pool(pool: &MaxPool, x: &Tensor) -> Tensor {
    let &[h, w, c] = x.shape() else { panic!("bad shape") };
    let p = pool.window;
    let mut y = Tensor::zeros(&[h / p, w / p, c]);
    for oy in 0..h / p {
        for ox in 0..w / p {
            for ch in 0..c {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..p {
                    for dx in 0..p {
                        m = m.max(x.get(&[oy * p + dy, ox * p + dx, ch]).unwrap());
                    }
                }
                y.set(&[oy, ox, ch], m).unwrap();
            }
        }
    }
    y
}

pub fn naive_dense(d: &Dense, x: &Tensor) -> Tensor {
    let &[i, o] = d.weights.shape() else { panic!("bad shape") };
    let y = (0..o)
        .map(|j| d.bias.data()[j] + (0..i).map(|k| x.data()[k] * d.weights.get(&[k, j]).unwrap()).sum::<f64>())
        .collect();
    Tensor::from_vec(y)
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst deviation between each kernel and its oracle over `n` random
/// instances per kind.
pub fn oracle_suite(seed: u64, n: usize) -> [(&'static str, f64); 3] {
    let mut rng = Rng::new(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..n {
        let (c, x) = random_conv(&mut rng);
        worst[0] = worst[0].max(max_abs_diff(&c.forward(&x).unwrap().0, &naive_conv(&c, &x)));
        let (p, x) = random_pool(&mut rng);
        worst[1] = worst[1].max(max_abs_diff(&p.forward(&x).unwrap().0, &naive_pool(&p, &x)));
        let (d, x) = random_dense(&mut rng);
        worst[2] = worst[2].max(max_abs_diff(&d.forward(&x).unwrap().0, &naive_dense(&d, &x)));
    }
    [("conv2d", worst[0]), ("maxpool", worst[1]), ("dense", worst[2])]
}
