#![allow(dead_code)]

pub mod grad_cases;
pub mod oracles;

use linker_core::tensor::{ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const RTOL: f64 = 1e-4;
pub const ATOL: f64 = 1e-6;
/// Entries probed per tensor; larger tensors are sampled.
const MAX_PROBES: usize = 24;

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= ATOL + RTOL * analytic.abs().max(numeric.abs())
}

fn probes(n: usize, seed: u64) -> Vec<usize> {
    if n <= MAX_PROBES {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..MAX_PROBES).map(|_| rng.gen_range(0..n)).collect()
}

/// Central differences against backward for every input tensor of `f`.
pub fn check_inputs(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) {
    check_inputs_with(&ParamStore::default(), inputs, f)
}

/// As [`check_inputs`], with `params` readable (and frozen) on the tape.
pub fn check_inputs_with(params: &ParamStore, inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) {
    let mut frozen = params.clone();
    frozen.set_trainable("", false);
    let frozen = &frozen;
    let mut tape = Tape::with_params(frozen);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let loss = f(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let eval = |xs: &[Tensor]| {
        let mut t = Tape::with_params(frozen);
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs);
        t.data(l)[0]
    };
    for (k, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let analytic = tape.grad(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for i in probes(n, k as u64) {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += H;
            let up = eval(&xs);
            xs[k].data_mut()[i] -= 2.0 * H;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * H);
            assert!(
                close(analytic[i], numeric),
                "input {k}[{i}]: analytic {} vs numeric {numeric}",
                analytic[i]
            );
        }
    }
}

/// Central differences against backward for every parameter named in
/// `store` (all of them when `only` is empty).
pub fn check_params(store: &ParamStore, only: &[&str], f: impl Fn(&mut Tape) -> Var) -> usize {
    let mut tape = Tape::with_params(store);
    let loss = f(&mut tape);
    tape.backward(loss).unwrap();
    let grads = tape.param_grads();
    let eval = |s: &ParamStore| {
        let mut t = Tape::with_params(s);
        let l = f(&mut t);
        t.data(l)[0]
    };
    let names: Vec<String> = store
        .names()
        .filter(|n| only.is_empty() || only.iter().any(|o| n.starts_with(o)))
        .cloned()
        .collect();
    let mut checked = 0;
    for (k, name) in names.iter().enumerate() {
        let n = store.get(name).unwrap().numel();
        let analytic = grads.get(name).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for i in probes(n, 1000 + k as u64) {
            let mut s = store.clone();
            s.get_mut(name).unwrap().data_mut()[i] += H;
            let up = eval(&s);
            s.get_mut(name).unwrap().data_mut()[i] -= 2.0 * H;
            let down = eval(&s);
            let numeric = (up - down) / (2.0 * H);
            assert!(
                close(analytic[i], numeric),
                "{name}[{i}]: analytic {} vs numeric {numeric}",
                analytic[i]
            );
            checked += 1;
        }
    }
    checked
}

/// Random weighted sum, so that every output entry matters to the loss.
pub fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let w = tape.constant(random(tape.shape(x), seed));
    let y = tape.mul(x, w).unwrap();
    tape.sum_all(y).unwrap()
}
