//! Stateless layer ops: per-position linear projection, inverted dropout,
//! and the span cross-entropy loss.

use crate::rng;
use crate::tensor::{Graph, Real, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// Size-1 convolution over an [m, n, d_in] grid: every cell is mapped by
/// the same [d_in, d_out] matrix, no bias.
pub fn conv11<F: Real>(g: &mut Graph<F>, x: Var, w: Var) -> Var {
    let xs = g.value(x).shape().to_vec();
    let ws = g.value(w).shape().to_vec();
    assert!(
        xs.len() == 3 && ws.len() == 2 && xs[2] == ws[0],
        "conv11: input {xs:?} incompatible with weight {ws:?}"
    );
    let (m, n) = (xs[0], xs[1]);
    let flat = g.reshape(x, &[m * n, ws[0]]);
    let mapped = g.matmul(flat, w);
    g.reshape(mapped, &[m, n, ws[1]])
}

/// Inverted dropout: in training mode each element is zeroed with
/// probability `rate` and survivors are scaled by 1/(1-rate), so
/// evaluation is a pure identity (and this function returns `x` itself).
pub fn dropout<F: Real>(
    g: &mut Graph<F>,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Var {
    assert!((0.0..1.0).contains(&rate), "dropout: rate {rate} outside [0, 1)");
    if !training || rate == 0.0 {
        return x;
    }
    let keep_scale = F::from_f64(1.0 / (1.0 - rate));
    let shape = g.value(x).shape().to_vec();
    let numel = g.value(x).numel();
    let mask: Vec<F> = (0..numel)
        .map(|_| {
            if rng::uniform01(rng) < rate {
                F::zero()
            } else {
                keep_scale
            }
        })
        .collect();
    let mask = g.constant(Tensor::new(shape, mask));
    g.mul(x, mask)
}

/// Sum of start and end cross-entropies under masked softmax:
/// −log p_start[gold.0] − log p_end[gold.1].
pub fn span_cross_entropy<F: Real>(
    g: &mut Graph<F>,
    start_logits: Var,
    end_logits: Var,
    mask: &[bool],
    gold: (usize, usize),
) -> Var {
    let (start, end) = gold;
    assert!(start <= end, "span_cross_entropy: gold span {start}..{end} reversed");
    assert!(
        end < mask.len(),
        "span_cross_entropy: gold end {end} out of bounds for {} positions",
        mask.len()
    );
    assert!(
        mask[start] && mask[end],
        "span_cross_entropy: gold span {start}..{end} touches masked positions"
    );
    let lp_start = g.masked_log_softmax(start_logits, mask);
    let lp_end = g.masked_log_softmax(end_logits, mask);
    let at_start = g.row(lp_start, start);
    let at_end = g.row(lp_end, end);
    let total = g.add(at_start, at_end);
    g.scale(total, -F::one())
}
