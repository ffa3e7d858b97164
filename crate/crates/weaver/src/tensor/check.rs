//! Finite-difference verification of backward rules.
//!
//! `grad_check` rebuilds the scalar loss under central perturbations of
//! every input coordinate and compares the numeric slope against the
//! analytic gradient from `backward`. The error reported per coordinate is
//!
//!   |analytic - numeric| / max(1, |analytic|)
//!
//! so tiny gradients are judged on absolute error and large ones on
//! relative error. Run these in f64: f32 round-off drowns the signal.

use super::{Graph, Real, Tensor, Var};

/// Max error per input tensor, in input order.
///
/// `build` is called with freshly created leaves each time and must return
/// the scalar loss. It must be a pure function of the leaf values.
pub fn grad_check_many<F: Real>(
    mut build: impl FnMut(&mut Graph<F>, &[Var]) -> Var,
    inputs: &[Tensor<F>],
    eps: F,
) -> Vec<F> {
    let eval = |build: &mut dyn FnMut(&mut Graph<F>, &[Var]) -> Var,
                tensors: &[Tensor<F>]|
     -> F {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).item()
    };

    // analytic pass
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &vars);
    assert_eq!(
        g.value(loss).numel(),
        1,
        "grad_check: loss must be scalar, got shape {:?}",
        g.value(loss).shape()
    );
    g.backward(loss);
    let analytic: Vec<Vec<F>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(|t| t.into_data())
                .unwrap_or_else(|| vec![F::zero(); t.numel()])
        })
        .collect();

    let two = F::from_f64(2.0);
    let mut worst = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<F>> = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        let mut max_err = F::zero();
        for idx in 0..tensor.numel() {
            let orig = tensor.data()[idx];
            work[ti].data_mut()[idx] = orig + eps;
            let up = eval(&mut build, &work);
            work[ti].data_mut()[idx] = orig - eps;
            let down = eval(&mut build, &work);
            work[ti].data_mut()[idx] = orig;
            let numeric = (up - down) / (two * eps);
            let a = analytic[ti][idx];
            let err = (a - numeric).abs() / F::one().max(a.abs());
            if err > max_err {
                max_err = err;
            }
        }
        worst.push(max_err);
    }
    worst
}

/// Max error over every coordinate of every input.
pub fn grad_check<F: Real>(
    build: impl FnMut(&mut Graph<F>, &[Var]) -> Var,
    inputs: &[Tensor<F>],
    eps: F,
) -> F {
    grad_check_many(build, inputs, eps)
        .into_iter()
        .fold(F::zero(), |a, b| a.max(b))
}
