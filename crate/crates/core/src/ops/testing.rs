//! Finite-difference gradient checking shared by unit and integration tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Uniform values in `[-1, 1)`, deterministic in `seed`.
pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Compare analytic gradients of `sum(f(inputs) * r)` (for a fixed random
/// `r`) against central differences for every input element.
///
/// Panics with the worst offending element when the mismatch exceeds
/// `atol + rtol * |numeric|`.
pub fn gradcheck<F>(inputs: &[Tensor], f: F)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    gradcheck_tol(inputs, 1e-2, 2e-2, 2e-2, f)
}

pub fn gradcheck_tol<F>(inputs: &[Tensor], h: f32, atol: f64, rtol: f64, f: F)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor], weights: Option<&Tensor>| -> (f64, Tensor) {
        let mut g = Graph::inference();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars);
        let y = g.value(out).clone();
        let s = match weights {
            Some(w) => y
                .data()
                .iter()
                .zip(w.data())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum(),
            None => 0.0,
        };
        (s, y)
    };
    let (_, y0) = eval(inputs, None);
    let weights = rand_tensor(y0.shape(), 0xC0FFEE);

    let mut g = Graph::training();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward_with(out, weights.clone());

    for (i, t) in inputs.iter().enumerate() {
        let zero = Tensor::zeros(t.shape());
        let analytic = grads.get(vars[i]).unwrap_or(&zero);
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric =
                (eval(&plus, Some(&weights)).0 - eval(&minus, Some(&weights)).0) / (2.0 * h as f64);
            let a = analytic.data()[j] as f64;
            assert!(
                (a - numeric).abs() <= atol + rtol * numeric.abs(),
                "input {} element {}: analytic {} vs numeric {}",
                i,
                j,
                a,
                numeric
            );
        }
    }
}
