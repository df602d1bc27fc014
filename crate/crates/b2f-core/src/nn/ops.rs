use crate::error::{Error, Result};

use super::graph::{softmax_row_in_place, Graph, Var};
use super::rng::RngState;
use super::tensor::{dot, mm_nn, Tensor};

/// y = x @ W + b. x is [T,in], W is [in,out], b is [out].
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row_bias(y, b)
}

/// Temporal convolution, kernel 3, stride 1, zero padding 1 on both ends.
pub fn conv1d_k3p1(g: &mut Graph, x: Var, k: Var, b: Var) -> Result<Var> {
    if g.shape_of(x).first().copied().unwrap_or(0) == 0 {
        return Err(Error::invalid("conv1d_k3p1: empty sequence"));
    }
    g.conv1d_k3(x, k, b)
}

/// Per-row (per-frame) layer normalization with affine parameters.
pub fn layer_norm(g: &mut Graph, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
    g.layer_norm_rows(x, gamma, beta, eps)
}

/// Scaled dot-product attention over pre-projected q/k/v, heads concatenated,
/// followed by the output projection (w_o [C,C], b_o [C]). `mask`, when given,
/// is an additive [Tq,Tk] bias applied to the scores before softmax.
///
/// In a grad-enabled graph this composes tape primitives (so the full [Tq,Tk]
/// attention matrices live on the tape for backward). In an inference graph
/// it runs a fused row-at-a-time path that never holds more than one score
/// row, producing bit-identical values.
pub fn multi_head_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    w_o: Var,
    b_o: Var,
    heads: usize,
    mask: Option<Var>,
) -> Result<Var> {
    let (ctx, _) = attention_core(g, q, k, v, heads, mask, false)?;
    linear(g, ctx, w_o, b_o)
}

/// Same as [`multi_head_attention`] but also returns the per-head attention
/// weight matrices ([Tq,Tk] each). Intended for tests and inspection; always
/// materializes the weights.
pub fn multi_head_attention_with_weights(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    w_o: Var,
    b_o: Var,
    heads: usize,
    mask: Option<Var>,
) -> Result<(Var, Vec<Var>)> {
    let (ctx, weights) = attention_core(g, q, k, v, heads, mask, true)?;
    Ok((linear(g, ctx, w_o, b_o)?, weights))
}

fn attention_core(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    mask: Option<Var>,
    want_weights: bool,
) -> Result<(Var, Vec<Var>)> {
    let qs = g.shape_of(q).to_vec();
    let ks = g.shape_of(k).to_vec();
    let vs = g.shape_of(v).to_vec();
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(Error::shape(
            "multi_head_attention",
            format!("q/k/v must be 2-D, got {qs:?}/{ks:?}/{vs:?}"),
        ));
    }
    let c = qs[1];
    if heads == 0 || c % heads != 0 {
        return Err(Error::shape(
            "multi_head_attention",
            format!("model dim {c} not divisible by {heads} heads"),
        ));
    }
    if ks[1] != c || vs[1] != c || ks[0] != vs[0] {
        return Err(Error::shape(
            "multi_head_attention",
            format!("q is {qs:?} but k is {ks:?} and v is {vs:?}"),
        ));
    }
    if let Some(m) = mask {
        let ms = g.shape_of(m);
        if ms != [qs[0], ks[0]] {
            return Err(Error::shape(
                "multi_head_attention",
                format!("mask must be [{},{}], got {ms:?}", qs[0], ks[0]),
            ));
        }
    }
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    if !g.grad_enabled() && !want_weights {
        return Ok((fused_attention(g, q, k, v, heads, dh, scale, mask), Vec::new()));
    }

    let mut weights = Vec::new();
    let mut ctx: Option<Var> = None;
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let scores = g.matmul_nt(qh, kh)?;
        let mut scaled = g.scale(scores, scale);
        if let Some(m) = mask {
            scaled = g.add(scaled, m)?;
        }
        let attn = g.softmax_rows(scaled)?;
        if want_weights {
            weights.push(attn);
        }
        let ctx_h = g.matmul(attn, vh)?;
        ctx = Some(match ctx {
            None => ctx_h,
            Some(prev) => g.concat_cols(prev, ctx_h)?,
        });
    }
    Ok((ctx.expect("heads >= 1"), weights))
}

/// Row-at-a-time attention for inference graphs: O(Tk) transient memory per
/// query row instead of [Tq,Tk] per head on the tape. Arithmetic mirrors the
/// composed path operation for operation so results are bit-identical.
fn fused_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    dh: usize,
    scale: f64,
    mask: Option<Var>,
) -> Var {
    let tq = g.shape_of(q)[0];
    let tk = g.shape_of(k)[0];
    let c = heads * dh;
    let qd = g.value(q).data.clone();
    let mask_data = mask.map(|m| g.value(m).data.clone());
    let mut out = vec![0.0; tq * c];
    let mut scores = vec![0.0; tk];
    for h in 0..heads {
        // Contiguous per-head copies of k and v, exactly as slice_cols builds.
        let (kh, vh) = {
            let kd = g.value(k);
            let vd = g.value(v);
            let mut kh = Vec::with_capacity(tk * dh);
            let mut vh = Vec::with_capacity(tk * dh);
            for j in 0..tk {
                kh.extend_from_slice(&kd.row(j)[h * dh..(h + 1) * dh]);
                vh.extend_from_slice(&vd.row(j)[h * dh..(h + 1) * dh]);
            }
            (kh, vh)
        };
        for i in 0..tq {
            let qrow = &qd[i * c + h * dh..i * c + (h + 1) * dh];
            for j in 0..tk {
                scores[j] = dot(qrow, &kh[j * dh..(j + 1) * dh]) * scale;
            }
            if let Some(md) = &mask_data {
                for (s, m) in scores.iter_mut().zip(&md[i * tk..(i + 1) * tk]) {
                    *s += m;
                }
            }
            softmax_row_in_place(&mut scores);
            let ctx_row = mm_nn(&scores, &vh, 1, tk, dh);
            out[i * c + h * dh..i * c + (h + 1) * dh].copy_from_slice(&ctx_row);
        }
    }
    g.leaf(Tensor { shape: vec![tq, c], data: out })
}

/// Standard interleaved sinusoidal positional encoding:
/// pe[t, 2i] = sin(t * f_i), pe[t, 2i+1] = cos(t * f_i), f_i = 10000^(-2i/C).
pub fn sinusoidal_pe(t_len: usize, channels: usize) -> Result<Tensor> {
    if channels == 0 || channels % 2 != 0 {
        return Err(Error::invalid(format!(
            "sinusoidal_pe: channel count must be even and positive, got {channels}"
        )));
    }
    let mut data = vec![0.0; t_len * channels];
    for i in 0..channels / 2 {
        let inv_freq = 10000f64.powf(-((2 * i) as f64) / channels as f64);
        for t in 0..t_len {
            let angle = t as f64 * inv_freq;
            data[t * channels + 2 * i] = angle.sin();
            data[t * channels + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![t_len, channels], data)
}

/// Draw one Gumbel-Softmax sample per row of `logits` ([D,K]: D independent
/// categorical variables over K categories). Soft mode returns
/// softmax((logits + g)/tau); hard mode additionally snaps each row to the
/// one-hot argmax with a straight-through gradient.
pub fn gumbel_softmax(
    g: &mut Graph,
    logits: Var,
    tau: f64,
    rng: &mut RngState,
    hard: bool,
) -> Result<Var> {
    let shape = g.shape_of(logits).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape(
            "gumbel_softmax",
            format!("logits must be 2-D, got {shape:?}"),
        ));
    }
    let n = shape[0] * shape[1];
    let noise = Tensor {
        shape,
        data: (0..n).map(|_| rng.gumbel()).collect(),
    };
    gumbel_softmax_with_noise(g, logits, tau, noise, hard)
}

/// Deterministic core of [`gumbel_softmax`] with caller-supplied noise.
pub fn gumbel_softmax_with_noise(
    g: &mut Graph,
    logits: Var,
    tau: f64,
    noise: Tensor,
    hard: bool,
) -> Result<Var> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "gumbel_softmax: tau must be a positive finite number, got {tau}"
        )));
    }
    if g.shape_of(logits) != noise.shape {
        return Err(Error::shape(
            "gumbel_softmax",
            format!(
                "noise shape {:?} does not match logits {:?}",
                noise.shape,
                g.shape_of(logits)
            ),
        ));
    }
    let nv = g.constant(noise);
    let shifted = g.add(logits, nv)?;
    let scaled = g.scale(shifted, 1.0 / tau);
    let soft = g.softmax_rows(scaled)?;
    if hard {
        g.straight_through_hard(soft)
    } else {
        Ok(soft)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use crate::nn::layers::random_uniform;

    fn leaf(g: &mut Graph, shape: &[usize], data: &[f64]) -> Var {
        g.leaf(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
    }

    #[test]
    fn linear_identity_passes_input_through() {
        let mut g = Graph::training();
        let x = leaf(&mut g, &[1, 2], &[1.0, 0.0]);
        let w = leaf(&mut g, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = leaf(&mut g, &[2], &[0.0, 0.0]);
        let y = linear(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y).data, vec![1.0, 0.0]);
    }

    #[test]
    fn linear_sums_and_biases() {
        let mut g = Graph::training();
        let x = leaf(&mut g, &[1, 2], &[1.0, 2.0]);
        let w = leaf(&mut g, &[2, 1], &[1.0, 1.0]);
        let b = leaf(&mut g, &[1], &[3.0]);
        let y = linear(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y).data, vec![6.0]);
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let mut rng = RngState::new(7);
        let x = random_uniform(&mut rng, &[4, 3], -1.0, 1.0);
        let w = random_uniform(&mut rng, &[3, 5], -1.0, 1.0);
        let b = random_uniform(&mut rng, &[5], -1.0, 1.0);
        let params = vec![("x".into(), x), ("w".into(), w), ("b".into(), b)];
        let report = grad_check(&params, 1e-5, &mut |g, p| {
            let x = p.bind(g, "x")?;
            let w = p.bind(g, "w")?;
            let b = p.bind(g, "b")?;
            let y = linear(g, x, w, b)?;
            Ok(g.sum_all(y))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-5, "{report:?}");
    }

    #[test]
    fn conv_zero_input_gives_zero_output() {
        let mut rng = RngState::new(2);
        let mut g = Graph::training();
        let x = g.leaf(Tensor::zeros(&[5, 3]));
        let kt = random_uniform(&mut rng, &[3, 3, 4], -1.0, 1.0);
        let k = g.leaf(kt);
        let b = g.leaf(Tensor::zeros(&[4]));
        let y = conv1d_k3p1(&mut g, x, k, b).unwrap();
        assert!(g.value(y).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_center_tap_identity_on_single_frame() {
        let mut g = Graph::training();
        let x = leaf(&mut g, &[1, 2], &[0.3, -0.7]);
        // Kernel [3,2,2]: taps 0 and 2 zero, tap 1 = identity.
        let mut kd = vec![0.0; 12];
        kd[1 * 4 + 0] = 1.0; // tap 1, cin 0, cout 0
        kd[1 * 4 + 3] = 1.0; // tap 1, cin 1, cout 1
        let k = leaf(&mut g, &[3, 2, 2], &kd);
        let b = leaf(&mut g, &[2], &[0.0, 0.0]);
        let y = conv1d_k3p1(&mut g, x, k, b).unwrap();
        assert_eq!(g.value(y).data, vec![0.3, -0.7]);
    }

    #[test]
    fn conv_rejects_empty_sequence() {
        let mut g = Graph::training();
        let x = g.leaf(Tensor::zeros(&[0, 2]));
        let k = g.leaf(Tensor::zeros(&[3, 2, 2]));
        let b = g.leaf(Tensor::zeros(&[2]));
        assert!(conv1d_k3p1(&mut g, x, k, b).is_err());
    }

    // Independent oracle: direct sliding-window summation with explicit
    // zero padding, no shared code with the graph implementation.
    fn conv_oracle(x: &Tensor, k: &Tensor, b: &Tensor) -> Vec<f64> {
        let (t_len, cin) = (x.shape[0], x.shape[1]);
        let cout = k.shape[2];
        let mut out = vec![0.0; t_len * cout];
        for t in 0..t_len {
            for co in 0..cout {
                let mut acc = b.data[co];
                for tap in 0..3i64 {
                    let src = t as i64 + tap - 1;
                    if src < 0 || src >= t_len as i64 {
                        continue;
                    }
                    for ci in 0..cin {
                        acc += x.data[src as usize * cin + ci]
                            * k.data[(tap as usize * cin + ci) * cout + co];
                    }
                }
                out[t * cout + co] = acc;
            }
        }
        out
    }

    #[test]
    fn conv_matches_sliding_window_oracle_and_finite_differences() {
        let mut rng = RngState::new(11);
        let x = random_uniform(&mut rng, &[7, 3], -1.0, 1.0);
        let k = random_uniform(&mut rng, &[3, 3, 2], -1.0, 1.0);
        let b = random_uniform(&mut rng, &[2], -1.0, 1.0);

        let expected = conv_oracle(&x, &k, &b);
        let mut g = Graph::training();
        let xv = g.leaf(x.clone());
        let kv = g.leaf(k.clone());
        let bv = g.leaf(b.clone());
        let y = conv1d_k3p1(&mut g, xv, kv, bv).unwrap();
        // Same additions in a different order would drift in the last ulp;
        // require closeness at that level rather than bit equality.
        for (got, want) in g.value(y).data.iter().zip(&expected) {
            assert!((got - want).abs() <= 1e-15 * want.abs().max(1.0));
        }

        let params = vec![("x".into(), x), ("k".into(), k), ("b".into(), b)];
        let report = grad_check(&params, 1e-5, &mut |g, p| {
            let x = p.bind(g, "x")?;
            let k = p.bind(g, "k")?;
            let b = p.bind(g, "b")?;
            let y = conv1d_k3p1(g, x, k, b)?;
            // Square so the gradient depends on the values, not just ones.
            let s = g.square(y);
            Ok(g.sum_all(s))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-5, "{report:?}");
    }

    #[test]
    fn layer_norm_constant_rows_collapse_to_beta() {
        let mut g = Graph::training();
        let x = leaf(&mut g, &[1, 4], &[2.5; 4]);
        let gamma = leaf(&mut g, &[4], &[1.0; 4]);
        let beta = leaf(&mut g, &[4], &[0.0; 4]);
        let y = layer_norm(&mut g, x, gamma, beta, 1e-5).unwrap();
        assert!(g.value(y).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_leaves_already_normalized_row_alone() {
        let mut g = Graph::training();
        let x = leaf(&mut g, &[1, 2], &[1.0, -1.0]);
        let gamma = leaf(&mut g, &[2], &[1.0, 1.0]);
        let beta = leaf(&mut g, &[2], &[0.0, 0.0]);
        let y = layer_norm(&mut g, x, gamma, beta, 0.0).unwrap();
        assert_eq!(g.value(y).data, vec![1.0, -1.0]);
    }

    #[test]
    fn layer_norm_output_mean_is_beta_and_gradients_check() {
        let mut rng = RngState::new(3);
        let x = random_uniform(&mut rng, &[6, 8], -2.0, 2.0);
        let beta = random_uniform(&mut rng, &[8], -0.5, 0.5);

        // With unit gamma the channel mean of every output row is exactly the
        // mean of beta (the normalized part is zero-mean by construction).
        let mut g = Graph::training();
        let xv = g.leaf(x.clone());
        let gv = g.leaf(Tensor::full(&[8], 1.0));
        let bv = g.leaf(beta.clone());
        let y = layer_norm(&mut g, xv, gv, bv, 1e-5).unwrap();
        let beta_mean = beta.data.iter().sum::<f64>() / 8.0;
        for row in g.value(y).data.chunks_exact(8) {
            let mean = row.iter().sum::<f64>() / 8.0;
            assert!((mean - beta_mean).abs() < 1e-9);
        }

        let gamma = random_uniform(&mut rng, &[8], 0.5, 1.5);
        let params = vec![("x".into(), x), ("gamma".into(), gamma), ("beta".into(), beta)];
        let report = grad_check(&params, 1e-5, &mut |g, p| {
            let x = p.bind(g, "x")?;
            let ga = p.bind(g, "gamma")?;
            let be = p.bind(g, "beta")?;
            let y = layer_norm(g, x, ga, be, 1e-5)?;
            let s = g.square(y);
            Ok(g.sum_all(s))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-5, "{report:?}");
    }

    fn identity_proj(g: &mut Graph, c: usize) -> (Var, Var) {
        let mut w = Tensor::zeros(&[c, c]);
        for i in 0..c {
            w.data[i * c + i] = 1.0;
        }
        let wv = g.leaf(w);
        let bv = g.leaf(Tensor::zeros(&[c]));
        (wv, bv)
    }

    #[test]
    fn attention_single_key_copies_value_row() {
        let mut rng = RngState::new(4);
        let mut g = Graph::training();
        let q = g.leaf(random_uniform(&mut rng, &[3, 4], -1.0, 1.0));
        let k = g.leaf(random_uniform(&mut rng, &[1, 4], -1.0, 1.0));
        let v_t = random_uniform(&mut rng, &[1, 4], -1.0, 1.0);
        let v = g.leaf(v_t.clone());
        let (wo, bo) = identity_proj(&mut g, 4);
        let (out, weights) =
            multi_head_attention_with_weights(&mut g, q, k, v, wo, bo, 2, None).unwrap();
        for w in &weights {
            assert!(g.value(*w).data.iter().all(|&x| x == 1.0));
        }
        for row in 0..3 {
            assert_eq!(g.value(out).row(row), v_t.row(0));
        }
    }

    #[test]
    fn attention_identical_keys_give_uniform_weights() {
        let mut rng = RngState::new(6);
        let mut g = Graph::training();
        let q = g.leaf(random_uniform(&mut rng, &[2, 4], -1.0, 1.0));
        let key_row = random_uniform(&mut rng, &[1, 4], -1.0, 1.0);
        let k = g.leaf(Tensor::from_rows(&vec![key_row.data.clone(); 5]).unwrap());
        let v = g.leaf(random_uniform(&mut rng, &[5, 4], -1.0, 1.0));
        let (wo, bo) = identity_proj(&mut g, 4);
        let (_, weights) =
            multi_head_attention_with_weights(&mut g, q, k, v, wo, bo, 2, None).unwrap();
        for w in &weights {
            for &x in &g.value(*w).data {
                assert!((x - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_gradients_check() {
        let mut rng = RngState::new(5);
        let q = random_uniform(&mut rng, &[5, 8], -1.0, 1.0);
        let k = random_uniform(&mut rng, &[6, 8], -1.0, 1.0);
        let v = random_uniform(&mut rng, &[6, 8], -1.0, 1.0);
        let wo = random_uniform(&mut rng, &[8, 8], -0.5, 0.5);
        let bo = random_uniform(&mut rng, &[8], -0.5, 0.5);

        let mut g = Graph::training();
        let qv = g.leaf(q.clone());
        let kv = g.leaf(k.clone());
        let vv = g.leaf(v.clone());
        let wov = g.leaf(wo.clone());
        let bov = g.leaf(bo.clone());
        let (_, weights) =
            multi_head_attention_with_weights(&mut g, qv, kv, vv, wov, bov, 2, None).unwrap();
        assert_eq!(weights.len(), 2);
        for w in &weights {
            for row in g.value(*w).data.chunks_exact(6) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        let params = vec![
            ("q".into(), q),
            ("k".into(), k),
            ("v".into(), v),
            ("wo".into(), wo),
            ("bo".into(), bo),
        ];
        let report = grad_check(&params, 1e-5, &mut |g, p| {
            let q = p.bind(g, "q")?;
            let k = p.bind(g, "k")?;
            let v = p.bind(g, "v")?;
            let wo = p.bind(g, "wo")?;
            let bo = p.bind(g, "bo")?;
            let y = multi_head_attention(g, q, k, v, wo, bo, 2, None)?;
            let s = g.square(y);
            Ok(g.sum_all(s))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn attention_rejects_indivisible_width() {
        let mut g = Graph::training();
        let q = g.leaf(Tensor::zeros(&[2, 6]));
        let (wo, bo) = identity_proj(&mut g, 6);
        let err = multi_head_attention(&mut g, q, q, q, wo, bo, 4, None).unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }

    #[test]
    fn fused_inference_attention_is_bit_identical_to_tape_path() {
        let mut rng = RngState::new(12);
        let q = random_uniform(&mut rng, &[9, 12], -1.0, 1.0);
        let k = random_uniform(&mut rng, &[7, 12], -1.0, 1.0);
        let v = random_uniform(&mut rng, &[7, 12], -1.0, 1.0);
        let wo = random_uniform(&mut rng, &[12, 12], -0.5, 0.5);
        let bo = random_uniform(&mut rng, &[12], -0.5, 0.5);
        let mask = random_uniform(&mut rng, &[9, 7], -0.2, 0.2);

        let run = |grad: bool| -> Vec<f64> {
            let mut g = Graph::with_grad(grad);
            let qv = g.leaf(q.clone());
            let kv = g.leaf(k.clone());
            let vv = g.leaf(v.clone());
            let wov = g.leaf(wo.clone());
            let bov = g.leaf(bo.clone());
            let mv = g.leaf(mask.clone());
            let y = multi_head_attention(&mut g, qv, kv, vv, wov, bov, 3, Some(mv)).unwrap();
            g.value(y).data.clone()
        };
        let tape = run(true);
        let fused = run(false);
        assert_eq!(tape.len(), fused.len());
        for (a, b) in tape.iter().zip(&fused) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn pe_position_zero_alternates_zero_one() {
        let pe = sinusoidal_pe(3, 6).unwrap();
        for i in 0..3 {
            assert_eq!(pe.row(0)[2 * i], 0.0);
            assert_eq!(pe.row(0)[2 * i + 1], 1.0);
        }
    }

    #[test]
    fn pe_values_bounded_and_deterministic() {
        let a = sinusoidal_pe(50, 32).unwrap();
        let b = sinusoidal_pe(50, 32).unwrap();
        assert!(a.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn pe_matches_direct_formula_table() {
        // Independently coded from the textbook formula, scalar at a time.
        let pe = sinusoidal_pe(8, 4).unwrap();
        for t in 0..8 {
            for i in 0..2 {
                let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / 4.0);
                assert_eq!(pe.at2(t, 2 * i), angle.sin());
                assert_eq!(pe.at2(t, 2 * i + 1), angle.cos());
            }
        }
    }

    #[test]
    fn pe_rejects_odd_channels() {
        assert!(sinusoidal_pe(4, 5).is_err());
        assert!(sinusoidal_pe(4, 0).is_err());
    }

    #[test]
    fn gumbel_uniform_logits_zero_noise_gives_uniform() {
        let mut g = Graph::training();
        let logits = g.leaf(Tensor::full(&[1, 8], 0.37));
        let noise = Tensor::zeros(&[1, 8]);
        let y = gumbel_softmax_with_noise(&mut g, logits, 0.9, noise, false).unwrap();
        for &v in &g.value(y).data {
            assert!((v - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn gumbel_low_tau_saturates_to_one_hot() {
        let mut g = Graph::training();
        let logits = g.leaf(Tensor::new(vec![1, 3], vec![10.0, 0.0, 0.0]).unwrap());
        // Bounded noise, far smaller than the logit gap once divided by tau.
        let noise = Tensor::new(vec![1, 3], vec![0.3, -0.2, 0.5]).unwrap();
        let y = gumbel_softmax_with_noise(&mut g, logits, 1e-6, noise, false).unwrap();
        let d = &g.value(y).data;
        assert!((d[0] - 1.0).abs() < 1e-9);
        assert!(d[1].abs() < 1e-9 && d[2].abs() < 1e-9);
    }

    #[test]
    fn gumbel_matches_closed_form_softmax() {
        let mut g = Graph::training();
        let logits = g.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let noise = Tensor::zeros(&[1, 2]);
        let y = gumbel_softmax_with_noise(&mut g, logits, 0.7, noise, false).unwrap();
        let (a, b): (f64, f64) = (1.0 / 0.7, 2.0 / 0.7);
        let m = b.max(a);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        let z = ea + eb;
        let got = &g.value(y).data;
        assert!((got[0] - ea / z).abs() < 1e-15);
        assert!((got[1] - eb / z).abs() < 1e-15);
    }

    #[test]
    fn gumbel_rejects_bad_tau() {
        let mut g = Graph::training();
        let logits = g.leaf(Tensor::zeros(&[1, 4]));
        let mut rng = RngState::new(1);
        assert!(gumbel_softmax(&mut g, logits, 0.0, &mut rng, false).is_err());
        assert!(gumbel_softmax(&mut g, logits, -1.0, &mut rng, false).is_err());
        assert!(gumbel_softmax(&mut g, logits, f64::NAN, &mut rng, false).is_err());
    }

    #[test]
    fn gumbel_hard_is_one_hot_at_soft_argmax() {
        let mut rng = RngState::new(99);
        for _ in 0..50 {
            let logits_t = random_uniform(&mut rng, &[4, 6], -2.0, 2.0);
            let noise = Tensor {
                shape: vec![4, 6],
                data: (0..24).map(|_| rng.gumbel()).collect(),
            };
            let mut g = Graph::training();
            let logits = g.leaf(logits_t);
            let soft =
                gumbel_softmax_with_noise(&mut g, logits, 0.7, noise.clone(), false).unwrap();
            let hard = gumbel_softmax_with_noise(&mut g, logits, 0.7, noise, true).unwrap();
            let sv = g.value(soft).clone();
            let hv = g.value(hard).clone();
            for r in 0..4 {
                let srow = sv.row(r);
                let hrow = hv.row(r);
                let s_arg = srow
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                assert_eq!(hrow[s_arg], 1.0);
                assert_eq!(hrow.iter().filter(|&&x| x != 0.0).count(), 1);
            }
        }
    }
}
