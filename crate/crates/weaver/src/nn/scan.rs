//! Recurrent scans. All step functions operate on row batches: an input of
//! shape [B, d] advances B independent sequences at once, which is how the
//! co-encoder runs one BiLSTM across every grid row (or column) in a
//! single scan.

use super::{GruVars, LstmVars};
use crate::tensor::{Graph, Real, Tensor, Var};

/// One LSTM step over a row batch. `x` is [B, d_in], `h_prev`/`c_prev`
/// are [B, h]; returns (h_next, c_next).
pub fn lstm_step<F: Real>(
    g: &mut Graph<F>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmVars,
) -> (Var, Var) {
    let hidden = g.value(h_prev).shape()[1];
    let xh = g.concat_last(&[x, h_prev]);
    let z = g.matmul(xh, p.weights);
    let z = g.add_vec(z, p.biases);
    let gate_i = g.slice_last(z, 0, hidden);
    let gate_f = g.slice_last(z, hidden, hidden);
    let gate_c = g.slice_last(z, 2 * hidden, hidden);
    let gate_o = g.slice_last(z, 3 * hidden, hidden);
    let i = g.sigmoid(gate_i);
    let f = g.sigmoid(gate_f);
    let c_tilde = g.tanh(gate_c);
    let o = g.sigmoid(gate_o);
    let keep = g.mul(f, c_prev);
    let write = g.mul(i, c_tilde);
    let c_next = g.add(keep, write);
    let c_act = g.tanh(c_next);
    let h_next = g.mul(o, c_act);
    (h_next, c_next)
}

/// Bidirectional scan over a [L, B, d_in] sequence batch. Positions at or
/// beyond `real_len` are padding: they produce exactly zero output and
/// never enter either scan (the backward direction starts at
/// `real_len - 1`). Output is [L, B, 2h], forward half first.
pub fn bilstm_seq<F: Real>(
    g: &mut Graph<F>,
    seq: Var,
    real_len: usize,
    fwd: &LstmVars,
    bwd: &LstmVars,
    hidden: usize,
) -> Var {
    let shape = g.value(seq).shape().to_vec();
    assert_eq!(shape.len(), 3, "bilstm: expected [L, B, d], got {shape:?}");
    let (len, batch) = (shape[0], shape[1]);
    assert!(len >= 1, "bilstm: empty sequence");
    assert!(
        (1..=len).contains(&real_len),
        "bilstm: real length {real_len} out of range for sequence length {len}"
    );

    let zero_state = g.constant(Tensor::zeros(&[batch, hidden]));
    let mut fwd_outs = Vec::with_capacity(real_len);
    let (mut h, mut c) = (zero_state, zero_state);
    for t in 0..real_len {
        let x = g.row(seq, t);
        let (h2, c2) = lstm_step(g, x, h, c, fwd);
        fwd_outs.push(h2);
        h = h2;
        c = c2;
    }

    let mut bwd_outs = vec![zero_state; real_len];
    let (mut h, mut c) = (zero_state, zero_state);
    for t in (0..real_len).rev() {
        let x = g.row(seq, t);
        let (h2, c2) = lstm_step(g, x, h, c, bwd);
        bwd_outs[t] = h2;
        h = h2;
        c = c2;
    }

    let zero_out = g.constant(Tensor::zeros(&[batch, 2 * hidden]));
    let rows: Vec<Var> = (0..len)
        .map(|t| {
            if t < real_len {
                g.concat_last(&[fwd_outs[t], bwd_outs[t]])
            } else {
                zero_out
            }
        })
        .collect();
    g.stack_rows(&rows)
}

/// Single-sequence BiLSTM: `seq` is [L, d_in], `mask` marks real positions
/// and must be a true-prefix. Returns [L, 2h] with zero rows at padding.
pub fn bilstm<F: Real>(
    g: &mut Graph<F>,
    seq: Var,
    mask: &[bool],
    fwd: &LstmVars,
    bwd: &LstmVars,
    hidden: usize,
) -> Var {
    let shape = g.value(seq).shape().to_vec();
    assert_eq!(shape.len(), 2, "bilstm: expected [L, d], got {shape:?}");
    let (len, d) = (shape[0], shape[1]);
    assert!(len >= 1, "bilstm: empty sequence");
    assert_eq!(mask.len(), len, "bilstm: mask length {} vs sequence length {len}", mask.len());
    let real_len = mask.iter().take_while(|&&b| b).count();
    assert!(
        mask[real_len..].iter().all(|&b| !b),
        "bilstm: mask must be a true-prefix, got {mask:?}"
    );
    assert!(real_len >= 1, "bilstm: every position is masked");
    let batched = g.reshape(seq, &[len, 1, d]);
    let out = bilstm_seq(g, batched, real_len, fwd, bwd, hidden);
    g.reshape(out, &[len, 2 * hidden])
}

/// One GRU step over a row batch: `x` is [B, in], `s` is [B, state].
/// s' = (1 − z) ⊙ s + z ⊙ tanh(W·[x; r ⊙ s] + b).
pub fn gru_step<F: Real>(g: &mut Graph<F>, x: Var, s: Var, p: &GruVars) -> Var {
    let xs = g.concat_last(&[x, s]);
    let zu = g.matmul(xs, p.w_update);
    let zu = g.add_vec(zu, p.b_update);
    let z = g.sigmoid(zu);
    let zr = g.matmul(xs, p.w_reset);
    let zr = g.add_vec(zr, p.b_reset);
    let r = g.sigmoid(zr);
    let gated = g.mul(r, s);
    let x_gated = g.concat_last(&[x, gated]);
    let zc = g.matmul(x_gated, p.w_cand);
    let zc = g.add_vec(zc, p.b_cand);
    let cand = g.tanh(zc);
    let carried = g.mul(z, s);
    let kept = g.sub(s, carried);
    let written = g.mul(z, cand);
    g.add(kept, written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BiLstmParams, GruParams, LstmParams};
    use crate::rng::{Purpose, Streams};
    use crate::tensor::grad_check;

    fn init_rng(sub: u64) -> rand_chacha::ChaCha8Rng {
        Streams::new(11).get_sub(Purpose::Init, sub)
    }

    fn zero_lstm(d: usize, h: usize) -> LstmParams<f64> {
        LstmParams {
            input_size: d,
            hidden_size: h,
            weights: Tensor::zeros(&[d + h, 4 * h]),
            biases: Tensor::zeros(&[4 * h]),
        }
    }

    #[test]
    fn zero_lstm_stays_at_rest() {
        let p = zero_lstm(3, 2);
        let mut g: Graph<f64> = Graph::new();
        let mut reg = Vec::new();
        let vars = p.bind(&mut g, &mut reg);
        let x = g.constant(Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]));
        let h0 = g.constant(Tensor::zeros(&[1, 2]));
        let c0 = g.constant(Tensor::zeros(&[1, 2]));
        let (h1, c1) = lstm_step(&mut g, x, h0, c0, &vars);
        assert_eq!(g.value(h1).data(), &[0.0, 0.0]);
        assert_eq!(g.value(c1).data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_gates_carry_cell_state() {
        // forget bias +20, input bias -20: cell state passes through
        let mut p = zero_lstm(3, 2);
        {
            let b = p.biases.data_mut();
            b[0] = -20.0;
            b[1] = -20.0;
            b[2] = 20.0;
            b[3] = 20.0;
        }
        let mut g: Graph<f64> = Graph::new();
        let mut reg = Vec::new();
        let vars = p.bind(&mut g, &mut reg);
        let x = g.constant(Tensor::new(vec![1, 3], vec![0.3, 0.7, -0.1]));
        let h0 = g.constant(Tensor::zeros(&[1, 2]));
        let c0 = g.constant(Tensor::new(vec![1, 2], vec![0.9, -0.4]));
        let (_, c1) = lstm_step(&mut g, x, h0, c0, &vars);
        for (got, want) in g.value(c1).data().iter().zip([0.9, -0.4]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn lstm_step_gradients_check_out() {
        let mut rng = init_rng(0);
        let p: LstmParams<f64> = LstmParams::init(3, 2, &mut rng);
        let x = Tensor::new(vec![1, 3], vec![0.4, -0.6, 0.2]);
        let h0 = Tensor::new(vec![1, 2], vec![0.1, -0.3]);
        let c0 = Tensor::new(vec![1, 2], vec![0.2, 0.5]);
        let err = grad_check(
            |g, vars| {
                let p = LstmVars {
                    weights: vars[0],
                    biases: vars[1],
                };
                let (h1, c1) = lstm_step(g, vars[2], vars[3], vars[4], &p);
                let both = g.concat_last(&[h1, c1]);
                let t = g.tanh(both);
                g.sum_all(t)
            },
            &[p.weights, p.biases, x, h0, c0],
            1e-5,
        );
        assert!(err < 1e-5, "error {err}");
    }

    #[test]
    fn bilstm_shape_and_padding() {
        let mut rng = init_rng(1);
        let p: BiLstmParams<f64> = BiLstmParams::init(3, 2, &mut rng);
        let mut g: Graph<f64> = Graph::new();
        let mut reg = Vec::new();
        let vars = p.bind(&mut g, &mut reg);
        let mut seq_rng = Streams::new(5).get_sub(Purpose::Synth, 0);
        let seq = g.constant(init_gaussian_like(&mut seq_rng, &[4, 3]));
        let out = bilstm(&mut g, seq, &[true, true, false, false], &vars.fwd, &vars.bwd, 2);
        assert_eq!(g.value(out).shape(), &[4, 4]);
        let data = g.value(out).data();
        assert!(data[8..16].iter().all(|&v| v == 0.0), "padded rows not zero");
        assert!(data[0..8].iter().any(|&v| v != 0.0), "real rows all zero");
    }

    fn init_gaussian_like(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        crate::nn::init_gaussian(shape, 1, rng)
    }

    #[test]
    fn bilstm_real_outputs_ignore_padding_length() {
        let mut rng = init_rng(2);
        let p: BiLstmParams<f64> = BiLstmParams::init(2, 3, &mut rng);
        let mut data_rng = Streams::new(6).get_sub(Purpose::Synth, 1);
        let real = init_gaussian_like(&mut data_rng, &[3, 2]);

        let run = |pad_to: usize| -> Vec<f64> {
            let mut g: Graph<f64> = Graph::new();
            let mut reg = Vec::new();
            let vars = p.bind(&mut g, &mut reg);
            let mut padded = vec![0.0; pad_to * 2];
            padded[..6].copy_from_slice(real.data());
            let seq = g.constant(Tensor::new(vec![pad_to, 2], padded));
            let mask: Vec<bool> = (0..pad_to).map(|i| i < 3).collect();
            let out = bilstm(&mut g, seq, &mask, &vars.fwd, &vars.bwd, 3);
            g.value(out).data()[..3 * 6].to_vec()
        };

        let short = run(3);
        let long = run(9);
        for (a, b) in short.iter().zip(&long) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn palindrome_with_tied_directions_is_symmetric() {
        let mut rng = init_rng(3);
        let shared: LstmParams<f64> = LstmParams::init(2, 3, &mut rng);
        let p = BiLstmParams {
            fwd: shared.clone(),
            bwd: shared,
        };
        let mut g: Graph<f64> = Graph::new();
        let mut reg = Vec::new();
        let vars = p.bind(&mut g, &mut reg);
        // palindromic sequence: row i equals row L-1-i
        let rows = [[0.4, -0.2], [1.0, 0.3], [0.4, -0.2]];
        let seq = g.constant(Tensor::new(vec![3, 2], rows.concat()));
        let out = bilstm(&mut g, seq, &[true; 3], &vars.fwd, &vars.bwd, 3);
        let data = g.value(out).data();
        let l = 3;
        for i in 0..l {
            for k in 0..3 {
                let fwd_i = data[i * 6 + k];
                let bwd_mirror = data[(l - 1 - i) * 6 + 3 + k];
                assert!(
                    (fwd_i - bwd_mirror).abs() < 1e-9,
                    "position {i} unit {k}: {fwd_i} vs {bwd_mirror}"
                );
            }
        }
    }

    #[test]
    fn bilstm_seq_gradients_check_out() {
        let mut rng = init_rng(4);
        let p: BiLstmParams<f64> = BiLstmParams::init(2, 2, &mut rng);
        let mut data_rng = Streams::new(8).get_sub(Purpose::Synth, 2);
        let seq = init_gaussian_like(&mut data_rng, &[3, 2, 2]);
        let err = grad_check(
            |g, vars| {
                let v = BiLstmVars::from_slice(&vars[0..4]);
                let out = bilstm_seq(g, vars[4], 2, &v.fwd, &v.bwd, 2);
                let t = g.tanh(out);
                g.sum_all(t)
            },
            &[
                p.fwd.weights.clone(),
                p.fwd.biases.clone(),
                p.bwd.weights.clone(),
                p.bwd.biases.clone(),
                seq,
            ],
            1e-5,
        );
        assert!(err < 1e-5, "error {err}");
    }

    use crate::nn::BiLstmVars;
    impl BiLstmVars {
        fn from_slice(vars: &[Var]) -> Self {
            BiLstmVars {
                fwd: LstmVars {
                    weights: vars[0],
                    biases: vars[1],
                },
                bwd: LstmVars {
                    weights: vars[2],
                    biases: vars[3],
                },
            }
        }
    }

    #[test]
    fn gru_update_gate_extremes() {
        let zero = |shape: &[usize]| Tensor::<f64>::zeros(shape);
        let mut p = GruParams {
            input_size: 2,
            state_size: 2,
            w_update: zero(&[4, 2]),
            w_reset: zero(&[4, 2]),
            w_cand: zero(&[4, 2]),
            b_update: Tensor::from_vec(vec![-20.0, -20.0]),
            b_reset: zero(&[2]),
            b_cand: zero(&[2]),
        };
        let state = Tensor::new(vec![1, 2], vec![0.7, -0.2]);

        // z ≈ 0: state passes through
        let mut g: Graph<f64> = Graph::new();
        let mut reg = Vec::new();
        let vars = p.bind(&mut g, &mut reg);
        let x = g.constant(Tensor::new(vec![1, 2], vec![0.5, 0.5]));
        let s = g.constant(state.clone());
        let out = gru_step(&mut g, x, s, &vars);
        for (got, want) in g.value(out).data().iter().zip([0.7, -0.2]) {
            assert!((got - want).abs() < 1e-6);
        }

        // z ≈ 1 with zero candidate weights: state overwritten by tanh(0)=0
        p.b_update = Tensor::from_vec(vec![20.0, 20.0]);
        let mut g: Graph<f64> = Graph::new();
        let mut reg = Vec::new();
        let vars = p.bind(&mut g, &mut reg);
        let x = g.constant(Tensor::new(vec![1, 2], vec![0.5, 0.5]));
        let s = g.constant(state);
        let out = gru_step(&mut g, x, s, &vars);
        for &got in g.value(out).data() {
            assert!(got.abs() < 1e-6, "{got}");
        }
    }

    #[test]
    fn gru_step_gradients_check_out() {
        let mut rng = init_rng(5);
        let p: GruParams<f64> = GruParams::init(2, 2, &mut rng);
        let x = Tensor::new(vec![1, 2], vec![0.3, -0.8]);
        let s = Tensor::new(vec![1, 2], vec![0.5, 0.1]);
        let err = grad_check(
            |g, vars| {
                let v = GruVars {
                    w_update: vars[0],
                    w_reset: vars[1],
                    w_cand: vars[2],
                    b_update: vars[3],
                    b_reset: vars[4],
                    b_cand: vars[5],
                };
                let out = gru_step(g, vars[6], vars[7], &v);
                let t = g.tanh(out);
                g.sum_all(t)
            },
            &[
                p.w_update, p.w_reset, p.w_cand, p.b_update, p.b_reset, p.b_cand, x, s,
            ],
            1e-5,
        );
        assert!(err < 1e-5, "error {err}");
    }
}
