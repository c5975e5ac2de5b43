//! Reverse-mode gradients of every kernel against central differences.

mod common;

use common::grad::{check_case, kernel_cases, rand_tensor, SEEDS};
use ntse_core::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check(prefix: &str) {
    let cases: Vec<_> = kernel_cases().into_iter().filter(|c| c.name.starts_with(prefix)).collect();
    assert!(!cases.is_empty(), "no case named {prefix}");
    for case in cases {
        let worst = check_case(&case).unwrap_or_else(|e| panic!("{e}"));
        println!("{}: worst relative error {worst:e} over {SEEDS} seeds", case.name);
    }
}

#[test]
fn matmul_gradients() {
    check("matmul");
}

#[test]
fn conv2d_gradients() {
    check("conv2d");
}

#[test]
fn batchnorm_gradients() {
    check("batchnorm2d");
}

#[test]
fn recurrent_gradients() {
    check("gru");
    check("lstm");
}

#[test]
fn attention_gradients() {
    check("multihead_attention");
}

#[test]
fn pointwise_gradients() {
    for name in ["sigmoid", "tanh", "relu", "leaky_relu", "softmax"] {
        check(name);
    }
}

#[test]
fn composite_sigmoid_of_linear_map() {
    check("sum(sigmoid(W x))");
}

#[test]
fn shared_input_gradient_is_sum_of_consumers() {
    // f(x) = sum(sigmoid(x) * tanh(x)) against the same graph with x duplicated.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, &[6], 1.0);

    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = tape.mul(tape.sigmoid(xv).unwrap(), tape.tanh(xv).unwrap()).unwrap();
    let loss = tape.sum(y).unwrap();
    let shared = tape.backward(loss).unwrap().get(xv).unwrap().to_vec();

    let tape = Tape::new();
    let (a, b) = (tape.leaf(x.clone()), tape.leaf(x));
    let y = tape.mul(tape.sigmoid(a).unwrap(), tape.tanh(b).unwrap()).unwrap();
    let loss = tape.sum(y).unwrap();
    let g = tape.backward(loss).unwrap();
    let (ga, gb) = (g.get(a).unwrap(), g.get(b).unwrap());
    for i in 0..6 {
        assert!((shared[i] - (ga[i] + gb[i])).abs() < 1e-15);
    }
}

#[test]
fn forward_passes_are_bit_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tape = Tape::new();
        let x = tape.constant(rand_tensor(&mut rng, &[1, 6, 17], 1.0));
        let k = tape.constant(rand_tensor(&mut rng, &[4, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, k, (1, 2), (1, 1)).unwrap();
        tape.value(y).data().to_vec()
    };
    assert_eq!(run(), run());
}
