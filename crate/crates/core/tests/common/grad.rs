//! Gradient-check cases for every kernel and for the whole model.

use ntse_core::dsp::{stft, ComplexSpectrogram, StftParams, Waveform, BINS, COMPRESSION};
use ntse_core::enhancer::{
    compressed_magnitude, compressed_loss_var, EmbeddingMode, LossConfig, LossTarget, Model, ModelConfig, Scale,
};
use ntse_core::tensor::{
    grad_check_many, multihead_attention, AttentionParams, BatchNormMode, CellKind, Direction, RnnParams,
    BATCHNORM_EPS,
};
use ntse_core::tokens::TokenConfig;
use ntse_core::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const SEEDS: u64 = 20;
/// Step of the five-point stencil used for whole-model checks. Many weights
/// move the mean loss by only ~1e3 ulps at 1e-5, so a plain central
/// difference at that step is roundoff-bound; the fourth-order stencil at a
/// larger step keeps both roundoff and truncation below 1e-6 relative.
pub const MODEL_EPS: f64 = 1e-3;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Contracts `out` with a fixed random tensor so no gradient is structurally zero.
pub fn project(tape: &Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let r = rand_tensor(&mut rng, &tape.shape(out), 1.0);
    let r = tape.constant(r);
    tape.sum(tape.mul(out, r)?)
}

pub struct KernelCase {
    pub name: &'static str,
    pub tol: f64,
    /// Worst relative error for one seed.
    pub run: fn(u64) -> f64,
}

fn matmul(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rand_tensor(&mut rng, &[3, 4], 1.0);
    let b = rand_tensor(&mut rng, &[4, 2], 1.0);
    grad_check_many(|t, v| project(t, t.matmul(v[0], v[1])?, seed), &[a, b], EPS).unwrap()
}

fn conv2d(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, &[2, 5, 6], 1.0);
    let k = rand_tensor(&mut rng, &[3, 2, 3, 3], 0.5);
    grad_check_many(
        |t, v| project(t, t.conv2d(v[0], v[1], (1, 2), (1, 1))?, seed),
        &[x, k],
        EPS,
    )
    .unwrap()
}

fn norm_inputs(seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        rand_tensor(&mut rng, &[2, 3, 4], 2.0),
        rand_tensor(&mut rng, &[2], 1.5),
        rand_tensor(&mut rng, &[2], 1.0),
    ]
}

fn batchnorm_train(seed: u64) -> f64 {
    grad_check_many(
        |t, v| {
            let (y, _) = t.batchnorm2d(v[0], v[1], v[2], BatchNormMode::Train, BATCHNORM_EPS)?;
            project(t, y, seed)
        },
        &norm_inputs(seed),
        EPS,
    )
    .unwrap()
}

fn batchnorm_eval(seed: u64) -> f64 {
    let (mean, var) = (vec![0.3, -0.2], vec![1.7, 0.4]);
    grad_check_many(
        |t, v| {
            let mode = BatchNormMode::Eval {
                running: Some((&mean, &var)),
            };
            let (y, _) = t.batchnorm2d(v[0], v[1], v[2], mode, BATCHNORM_EPS)?;
            project(t, y, seed)
        },
        &norm_inputs(seed),
        EPS,
    )
    .unwrap()
}

fn rnn_points(rng: &mut ChaCha8Rng, kind: CellKind, d: usize, h: usize) -> Vec<Tensor> {
    let gh = kind.gates() * h;
    vec![
        rand_tensor(rng, &[d, gh], 0.6),
        rand_tensor(rng, &[h, gh], 0.6),
        rand_tensor(rng, &[gh], 0.3),
        rand_tensor(rng, &[gh], 0.3),
    ]
}

fn rnn_params(v: &[Var]) -> RnnParams {
    RnnParams {
        w_ih: v[0],
        w_hh: v[1],
        b_ih: v[2],
        b_hh: v[3],
    }
}

fn recurrent(kind: CellKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![rand_tensor(&mut rng, &[4, 3], 1.0)];
    points.extend(rnn_points(&mut rng, kind, 3, 5));
    points.extend(rnn_points(&mut rng, kind, 3, 5));
    grad_check_many(
        |t, v| {
            let params = [rnn_params(&v[1..5]), rnn_params(&v[5..9])];
            let y = t.recurrent_sequence(kind, Direction::Bidirectional, v[0], &params, None)?;
            project(t, y, seed)
        },
        &points,
        EPS,
    )
    .unwrap()
}

fn attention(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = vec![
        rand_tensor(&mut rng, &[2, 8], 1.0),
        rand_tensor(&mut rng, &[4, 6], 1.0),
        rand_tensor(&mut rng, &[4, 5], 1.0),
        rand_tensor(&mut rng, &[8, 8], 0.6),
        rand_tensor(&mut rng, &[6, 8], 0.6),
        rand_tensor(&mut rng, &[5, 8], 0.6),
        rand_tensor(&mut rng, &[8, 8], 0.6),
    ];
    grad_check_many(
        |t, v| {
            let p = AttentionParams {
                wq: v[3],
                wk: v[4],
                wv: v[5],
                wo: v[6],
            };
            let (y, _) = multihead_attention(t, v[0], v[1], v[2], 2, &p)?;
            project(t, y, seed)
        },
        &points,
        EPS,
    )
    .unwrap()
}

fn pointwise(seed: u64, op: fn(&Tape, Var) -> Result<Var>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // keep inputs away from the relu kink
    let x = Tensor::from_fn(&[3, 4], |_| {
        let v: f64 = rng.gen_range(0.01..2.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    });
    grad_check_many(|t, v| project(t, op(t, v[0])?, seed), &[x], EPS).unwrap()
}

fn linear_sigmoid(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, &[4, 3], 1.0);
    let x = rand_tensor(&mut rng, &[3, 2], 1.0);
    grad_check_many(
        |t, v| {
            let x = t.constant(x.clone());
            t.sum(t.sigmoid(t.matmul(v[0], x)?)?)
        },
        &[w],
        EPS,
    )
    .unwrap()
}

pub fn kernel_cases() -> Vec<KernelCase> {
    let case = |name, tol, run| KernelCase { name, tol, run };
    vec![
        case("matmul", 1e-6, matmul),
        case("conv2d", 1e-4, conv2d),
        case("batchnorm2d/train", 1e-4, batchnorm_train),
        case("batchnorm2d/eval", 1e-4, batchnorm_eval),
        case("gru/bidirectional", 1e-4, |s| recurrent(CellKind::Gru, s)),
        case("lstm/bidirectional", 1e-4, |s| recurrent(CellKind::Lstm, s)),
        case("multihead_attention", 1e-4, attention),
        case("sigmoid", 1e-4, |s| pointwise(s, |t, x| t.sigmoid(x))),
        case("tanh", 1e-4, |s| pointwise(s, |t, x| t.tanh(x))),
        case("relu", 1e-4, |s| pointwise(s, |t, x| t.relu(x))),
        case("leaky_relu", 1e-4, |s| pointwise(s, |t, x| t.leaky_relu(x, 0.3))),
        case("softmax/axis1", 1e-4, |s| pointwise(s, |t, x| t.softmax(x, 1))),
        case("softmax/axis0", 1e-4, |s| pointwise(s, |t, x| t.softmax(x, 0))),
        case("sum(sigmoid(W x))", 1e-6, linear_sigmoid),
    ]
}

/// Worst error of `case` over [`SEEDS`] seeds, or the first failing seed.
pub fn check_case(case: &KernelCase) -> std::result::Result<f64, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let err = (case.run)(seed);
        if !(err < case.tol) {
            return Err(format!("{}: seed {seed} relative error {err:e}", case.name));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

fn random_wave(len: usize, rng: &mut ChaCha8Rng) -> Waveform {
    Waveform::new((0..len).map(|_| rng.gen_range(-0.4..0.4)).collect()).unwrap()
}

/// A (noisy, clean) pair of short spectrograms; `frames` STFT frames.
pub fn pair(frames: usize, seed: u64) -> (ComplexSpectrogram, ComplexSpectrogram) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (frames - 1) * 256;
    let clean = random_wave(len, &mut rng);
    let noise = random_wave(len, &mut rng);
    let noisy: Vec<f64> = clean
        .samples()
        .iter()
        .zip(noise.samples())
        .map(|(c, n)| c + 0.5 * n)
        .collect();
    let p = StftParams::default();
    (
        stft(&Waveform::new(noisy).unwrap(), p).unwrap(),
        stft(&clean, p).unwrap(),
    )
}

pub fn tiny_config(mode: EmbeddingMode) -> ModelConfig {
    let mut cfg = ModelConfig::new(mode, Scale::Toy);
    cfg.proj_dim = 4;
    cfg.lstm_hidden = 3;
    cfg.tokens = TokenConfig {
        channels: [2, 2, 3, 3, 2, 2],
        gru_hidden: 2,
        templates: 3,
        heads: 2,
    };
    cfg
}

pub fn train_loss(model: &Model, noisy: &ComplexSpectrogram, target: &LossTarget) -> (f64, u64) {
    let tape = Tape::new();
    let (loss, _) = model
        .loss(&tape, noisy, target, &LossConfig::default(), true)
        .unwrap();
    (tape.value(loss).item(), tape.kink_signature())
}

/// Worst relative error over `samples` random parameter coordinates
/// (every coordinate of parameters with at most `samples` values).
/// Coordinates whose perturbation moves any ReLU across its kink are skipped.
pub fn model_grad_error(model: &mut Model, seed: u64, samples: usize) -> (f64, usize, usize) {
    let (noisy, clean) = pair(4, seed);
    let cfg = LossConfig::default();
    let target = LossTarget::new(&clean, &cfg).unwrap();
    let tape = Tape::new();
    let (loss, _) = model.loss(&tape, &noisy, &target, &cfg, true).unwrap();
    let pattern = tape.kink_signature();
    let grads = tape.backward(loss).unwrap().for_params(&model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<_> = model.store.ids().collect();
    let mut worst: f64 = 0.0;
    let (mut compared, mut skipped) = (0, 0);
    for (pi, id) in ids.into_iter().enumerate() {
        let n = model.store.get(id).value.len();
        let coords: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            (0..samples).map(|_| rng.gen_range(0..n)).collect()
        };
        for j in coords {
            let orig = model.store.get(id).value.data()[j];
            let mut at = |h: f64| {
                model.store.get_mut(id).value.data_mut()[j] = orig + h;
                let r = train_loss(model, &noisy, &target);
                model.store.get_mut(id).value.data_mut()[j] = orig;
                r
            };
            let h = MODEL_EPS;
            let evals = [at(h), at(-h), at(2.0 * h), at(-2.0 * h)];
            if evals.iter().any(|(_, sig)| *sig != pattern) {
                skipped += 1;
                continue;
            }
            compared += 1;
            let [p1, m1, p2, m2] = evals.map(|(v, _)| v);
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = grads[pi][j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
    }
    (worst, compared, skipped)
}

/// Whole-model check over [`SEEDS`] seeds; errors name the first bad seed.
pub fn check_model(mode: EmbeddingMode) -> std::result::Result<f64, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut model = Model::new(tiny_config(mode), seed).unwrap();
        // Move off the init point (zero biases, small recurrent weights),
        // where many gradients sit at the central-difference noise floor.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        for p in model.store.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
        let (err, compared, skipped) = model_grad_error(&mut model, seed, 24);
        if !(err < 1e-4) {
            return Err(format!("{mode}: seed {seed} relative error {err:e}"));
        }
        if compared < 3 * skipped {
            return Err(format!("{mode}: seed {seed} skipped {skipped} of {}", compared + skipped));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Loss gradient of a one-layer mask model, `mask = sigmoid(|S|^0.3 W + b)`,
/// on a 4-frame spectrogram; plain central differences at [`EPS`].
pub fn one_layer_model(seed: u64) -> f64 {
    let (noisy, clean) = pair(4, seed);
    let cfg = LossConfig::default();
    let target = LossTarget::new(&clean, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_fn(&[BINS, BINS], |_| rng.gen_range(-0.05..0.05));
    let b = Tensor::from_fn(&[BINS], |_| rng.gen_range(-0.5..0.5));
    let loss = |tape: &Tape, w: Var, b: Var| {
        let x = tape.constant(compressed_magnitude(&noisy, COMPRESSION));
        let m = tape.sigmoid(tape.add_bias(tape.matmul(x, w)?, b)?)?;
        let (t, f) = (noisy.frames, noisy.bins);
        let re = tape.mul(m, tape.constant(Tensor::new(&[t, f], noisy.real_parts())?))?;
        let im = tape.mul(m, tape.constant(Tensor::new(&[t, f], noisy.imag_parts())?))?;
        compressed_loss_var(tape, re, im, &target, &cfg)
    };
    let tape = Tape::new();
    let (wv, bv) = (tape.leaf(w.clone()), tape.leaf(b.clone()));
    let out = loss(&tape, wv, bv).unwrap();
    let grads = tape.backward(out).unwrap();
    let (gw, gb) = (grads.get(wv).unwrap().to_vec(), grads.get(bv).unwrap().to_vec());
    let eval = |w: &Tensor, b: &Tensor| {
        let tape = Tape::new();
        let v = loss(&tape, tape.constant(w.clone()), tape.constant(b.clone())).unwrap();
        tape.value(v).item()
    };
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
    let mut worst: f64 = 0.0;
    let (mut w, mut b) = (w, b);
    for _ in 0..200 {
        let j = rng.gen_range(0..w.len());
        let orig = w.data()[j];
        w.data_mut()[j] = orig + EPS;
        let plus = eval(&w, &b);
        w.data_mut()[j] = orig - EPS;
        let minus = eval(&w, &b);
        w.data_mut()[j] = orig;
        worst = worst.max(rel(gw[j], (plus - minus) / (2.0 * EPS)));
    }
    for j in 0..b.len() {
        let orig = b.data()[j];
        b.data_mut()[j] = orig + EPS;
        let plus = eval(&w, &b);
        b.data_mut()[j] = orig - EPS;
        let minus = eval(&w, &b);
        b.data_mut()[j] = orig;
        worst = worst.max(rel(gb[j], (plus - minus) / (2.0 * EPS)));
    }
    worst
}
