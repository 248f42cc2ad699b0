use rand::Rng;
use soh_core::autodiff::{Graph, Mode};
use soh_core::metrics::{mape, rmspe, sde};
use soh_core::model::{attention, multi_head_attention, patchify, ViTConfig, ViTFc, LN_EPS};
use soh_core::rng::{stream, Purpose, Stream};
use soh_core::Tensor;

type Mat = Vec<Vec<f64>>;

fn rng(seed: u64) -> Stream {
    stream(seed, Purpose::Init, 900, 0)
}

fn rand_mat(r: usize, c: usize, g: &mut Stream) -> Mat {
    (0..r).map(|_| (0..c).map(|_| g.random_range(-1.0..1.0)).collect()).collect()
}

fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Neumaier-compensated sum.
fn nsum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn metrics_match_brute_force_on_random_vectors() {
    let mut g = rng(1);
    for case in 0..1000 {
        let m = 1 + case % 50;
        let y: Vec<f64> = (0..m).map(|_| g.random_range(0.2..1.05)).collect();
        let yhat: Vec<f64> = y.iter().map(|v| v + g.random_range(-0.1..0.1)).collect();
        let n = m as f64;
        let r = (nsum(y.iter().zip(&yhat).map(|(a, b)| (1.0 - b / a).powi(2))) / n).sqrt() * 100.0;
        let a = nsum(y.iter().zip(&yhat).map(|(a, b)| ((a - b) / a).abs())) / n * 100.0;
        let errs: Vec<f64> = y.iter().zip(&yhat).map(|(a, b)| 100.0 * a - 100.0 * b).collect();
        let mean = nsum(errs.iter().copied()) / n;
        let s = (nsum(errs.iter().map(|e| (e - mean) * (e - mean))) / n).sqrt();
        assert!(rel(rmspe(&y, &yhat).unwrap(), r) < 1e-12, "rmspe case {case}");
        assert!(rel(mape(&y, &yhat).unwrap(), a) < 1e-12, "mape case {case}");
        // sde of a single sample is exactly zero
        if m > 1 {
            assert!(rel(sde(&y, &yhat).unwrap(), s) < 1e-12, "sde case {case}");
        } else {
            assert_eq!(sde(&y, &yhat).unwrap(), 0.0);
        }
        // Cauchy–Schwarz
        assert!(a <= r * n.sqrt() + 1e-9);
    }
}

fn softmax_row(s: &[f64]) -> Vec<f64> {
    let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// `softmax(QKᵀ/√d)V` by explicit loops; also returns the weight matrix.
fn brute_attention(q: &Mat, k: &Mat, v: &Mat) -> (Mat, Mat) {
    let d = q[0].len() as f64;
    let mut weights = Vec::new();
    let mut out = Vec::new();
    for qi in q {
        let scores: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
            .collect();
        let w = softmax_row(&scores);
        let mut o = vec![0.0; v[0].len()];
        for (wj, vj) in w.iter().zip(v) {
            for (oc, vc) in o.iter_mut().zip(vj) {
                *oc += wj * vc;
            }
        }
        weights.push(w);
        out.push(o);
    }
    (out, weights)
}

fn eval_rng() -> Stream {
    stream(0, Purpose::Dropout, 0, 0)
}

pub fn attention_matches_brute_force_and_is_convex() {
    let mut g = rng(2);
    for case in 0..200 {
        let l = 1 + case % 4;
        let d = 1 + (case / 4) % 8;
        let (q, k, v) = (rand_mat(l, d, &mut g), rand_mat(l, d, &mut g), rand_mat(l, d, &mut g));
        let mut gr = Graph::new();
        let (qv, kv, vv) = (gr.constant(to_tensor(&q)), gr.constant(to_tensor(&k)), gr.constant(to_tensor(&v)));
        let o = attention(&mut gr, qv, kv, vv, 0.0, &mut eval_rng(), Mode::Eval).unwrap();
        let (expect, weights) = brute_attention(&q, &k, &v);
        assert!(max_abs_diff(&to_mat(gr.value(o)), &expect) < 1e-12, "case {case}");
        for w in &weights {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|&x| x >= 0.0));
        }
        // every output lies inside the per-column hull of V's rows
        for row in to_mat(gr.value(o)) {
            for (c, val) in row.iter().enumerate() {
                let lo = v.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
                let hi = v.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
                assert!(*val >= lo - 1e-12 && *val <= hi + 1e-12);
            }
        }
    }
}

pub fn softmax_rows_sum_to_one() {
    let mut g = rng(3);
    for _ in 0..100 {
        let m = rand_mat(4, 6, &mut g);
        let scaled: Mat = m.iter().map(|r| r.iter().map(|x| 50.0 * x).collect()).collect();
        let s = to_tensor(&scaled).softmax_rows();
        for i in 0..4 {
            assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

pub fn single_head_identity_mha_is_attention() {
    let mut g = rng(4);
    let (l, d) = (3, 5);
    let x = rand_mat(l, d, &mut g);
    let mut gr = Graph::new();
    let xv = gr.constant(to_tensor(&x));
    let id = gr.constant(Tensor::identity(d));
    let zero = gr.constant(Tensor::zeros(&[d]));
    let mha = multi_head_attention(&mut gr, xv, &[id], &[id], &[id], id, zero, l, 0.0, &mut eval_rng(), Mode::Eval)
        .unwrap();
    let plain = attention(&mut gr, xv, xv, xv, 0.0, &mut eval_rng(), Mode::Eval).unwrap();
    assert!(max_abs_diff(&to_mat(gr.value(mha)), &to_mat(gr.value(plain))) < 1e-10);

    let zx = gr.constant(Tensor::zeros(&[l, d]));
    let w = gr.constant(to_tensor(&rand_mat(d, d, &mut g)));
    let z = multi_head_attention(&mut gr, zx, &[w], &[w], &[w], w, zero, l, 0.0, &mut eval_rng(), Mode::Eval)
        .unwrap();
    assert!(gr.value(z).data().iter().all(|&v| v == 0.0));
}

/// Per-head projection, attention, concatenation, output projection.
fn brute_mha(x: &Mat, wq: &[Mat], wk: &[Mat], wv: &[Mat], wo: &Mat, bo: &[f64]) -> Mat {
    let mut cat: Mat = vec![Vec::new(); x.len()];
    for h in 0..wq.len() {
        let (o, _) = brute_attention(&mm(x, &wq[h]), &mm(x, &wk[h]), &mm(x, &wv[h]));
        for (row, part) in cat.iter_mut().zip(o) {
            row.extend(part);
        }
    }
    mm(&cat, wo)
        .into_iter()
        .map(|r| r.iter().zip(bo).map(|(a, b)| a + b).collect())
        .collect()
}

pub fn mha_matches_brute_force() {
    let mut g = rng(5);
    for case in 0..50 {
        let l = 1 + case % 4;
        let heads = [1, 2, 4][case % 3];
        let d_head = 1 + case % 2;
        let d = heads * d_head;
        let batch = 1 + case % 3;
        let xs: Vec<Mat> = (0..batch).map(|_| rand_mat(l, d, &mut g)).collect();
        let wq: Vec<Mat> = (0..heads).map(|_| rand_mat(d, d_head, &mut g)).collect();
        let wk: Vec<Mat> = (0..heads).map(|_| rand_mat(d, d_head, &mut g)).collect();
        let wv: Vec<Mat> = (0..heads).map(|_| rand_mat(d, d_head, &mut g)).collect();
        let wo = rand_mat(d, d, &mut g);
        let bo = rand_mat(1, d, &mut g).remove(0);

        let mut gr = Graph::new();
        let stacked: Mat = xs.iter().flatten().cloned().collect();
        let xv = gr.constant(to_tensor(&stacked));
        let q: Vec<_> = wq.iter().map(|w| gr.constant(to_tensor(w))).collect();
        let k: Vec<_> = wk.iter().map(|w| gr.constant(to_tensor(w))).collect();
        let v: Vec<_> = wv.iter().map(|w| gr.constant(to_tensor(w))).collect();
        let o = gr.constant(to_tensor(&wo));
        let b = gr.constant(Tensor::vector(bo.clone()));
        let out = multi_head_attention(&mut gr, xv, &q, &k, &v, o, b, l, 0.0, &mut eval_rng(), Mode::Eval).unwrap();
        let got = to_mat(gr.value(out));
        for (s, x) in xs.iter().enumerate() {
            let expect = brute_mha(x, &wq, &wk, &wv, &wo, &bo);
            assert!(max_abs_diff(&got[s * l..(s + 1) * l].to_vec(), &expect) < 1e-12, "case {case}");
        }
    }
}

fn layer_norm_rows(x: &Mat, gamma: &[f64], beta: &[f64]) -> Mat {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(j, v)| gamma[j] * (v - mean) / (var + LN_EPS).sqrt() + beta[j])
                .collect()
        })
        .collect()
}

fn add_bias(x: Mat, b: &[f64]) -> Mat {
    x.into_iter().map(|r| r.iter().zip(b).map(|(a, c)| a + c).collect()).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn p(m: &ViTFc, name: &str) -> Mat {
    let t = &m.param(name).unwrap().value;
    if t.shape().len() == 1 {
        vec![t.data().to_vec()]
    } else {
        to_mat(t)
    }
}

fn v(m: &ViTFc, name: &str) -> Vec<f64> {
    m.param(name).unwrap().value.data().to_vec()
}

/// Eval-mode forward written out step by step from the parameter table.
fn brute_forward(m: &ViTFc, x: &[f64]) -> f64 {
    let cfg = m.config();
    // tiles by hand: time-major, then channel group, each tile channel-major
    let groups = cfg.f.div_ceil(cfg.f_patch);
    let mut tokens: Mat = Vec::new();
    for s in 0..cfg.l_v / cfg.s_patch {
        for fg in 0..groups {
            let mut t = Vec::new();
            for ch in fg * cfg.f_patch..(fg + 1) * cfg.f_patch {
                for step in s * cfg.s_patch..(s + 1) * cfg.s_patch {
                    t.push(if ch < cfg.f { x[ch * cfg.l_v + step] } else { 0.0 });
                }
            }
            tokens.push(t);
        }
    }
    let mut h = add_bias(mm(&tokens, &p(m, "embed.weight")), &v(m, "embed.bias"));
    let pos = p(m, "pos_embed");
    for (r, pr) in h.iter_mut().zip(&pos) {
        for (a, b) in r.iter_mut().zip(pr) {
            *a += b;
        }
    }
    for i in 0..cfg.depth {
        let n = |s: &str| format!("blocks.{i}.{s}");
        let ln = layer_norm_rows(&h, &v(m, &n("ln1.gamma")), &v(m, &n("ln1.beta")));
        let proj = |kind: &str| -> Vec<Mat> { (0..cfg.heads).map(|k| p(m, &n(&format!("attn.{kind}.{k}")))).collect() };
        let a = brute_mha(
            &ln,
            &proj("wq"),
            &proj("wk"),
            &proj("wv"),
            &p(m, &n("attn.out.weight")),
            &v(m, &n("attn.out.bias")),
        );
        for (r, ar) in h.iter_mut().zip(&a) {
            for (x, y) in r.iter_mut().zip(ar) {
                *x += y;
            }
        }
        let ln = layer_norm_rows(&h, &v(m, &n("ln2.gamma")), &v(m, &n("ln2.beta")));
        let f1: Mat = add_bias(mm(&ln, &p(m, &n("mlp.fc1.weight"))), &v(m, &n("mlp.fc1.bias")))
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        let f2 = add_bias(mm(&f1, &p(m, &n("mlp.fc2.weight"))), &v(m, &n("mlp.fc2.bias")));
        for (r, fr) in h.iter_mut().zip(&f2) {
            for (x, y) in r.iter_mut().zip(fr) {
                *x += y;
            }
        }
    }
    let l = h.len() as f64;
    let pooled: Vec<f64> = (0..cfg.d_embed).map(|j| h.iter().map(|r| r[j]).sum::<f64>() / l).collect();
    let z = add_bias(mm(&vec![pooled], &p(m, "head.fc1.weight")), &v(m, "head.fc1.bias")).remove(0);
    let (g, b) = (v(m, "head.bn.gamma"), v(m, "head.bn.beta"));
    let bn = &m.bn;
    let a: Vec<f64> = z
        .iter()
        .enumerate()
        .map(|(j, zj)| (g[j] * (zj - bn.running_mean[j]) / (bn.running_var[j] + bn.eps).sqrt() + b[j]).max(0.0))
        .collect();
    let out = mm(&vec![a], &p(m, "head.fc2.weight"));
    out[0][0] + v(m, "head.fc2.bias")[0]
}

fn toy_config() -> ViTConfig {
    ViTConfig {
        l_v: 8,
        f: 3,
        s_patch: 2,
        f_patch: 2,
        d_embed: 8,
        heads: 2,
        d_head: 4,
        mlp_hidden: 8,
        depth: 1,
        fc_hidden: 4,
        dropout: 0.1,
    }
}

fn perturbed_model(cfg: ViTConfig, seed: u64) -> ViTFc {
    let mut m = ViTFc::new(cfg, seed).unwrap();
    let mut g = rng(seed + 1000);
    for p in m.params_mut() {
        for x in p.value.data_mut() {
            *x += 0.2 * g.random_range(-1.0..1.0);
        }
    }
    m.bn.running_mean = (0..m.bn.running_mean.len()).map(|_| g.random_range(-0.3..0.3)).collect();
    m.bn.running_var = (0..m.bn.running_var.len()).map(|_| g.random_range(0.5..2.0)).collect();
    m
}

pub fn forward_matches_step_by_step_reimplementation() {
    for (seed, depth) in [(1, 1), (2, 1), (3, 2)] {
        let m = perturbed_model(ViTConfig { depth, ..toy_config() }, seed);
        assert_eq!(m.config().tokens(), 8);
        let mut g = rng(seed + 50);
        let x: Vec<f64> = (0..24).map(|_| g.random_range(0.0..1.0)).collect();
        let got = m.predict(&[&x]).unwrap()[0];
        let want = brute_forward(&m, &x);
        assert!((got - want).abs() < 1e-10, "seed {seed}: {got} vs {want}");
    }
}

pub fn zero_position_embedding_makes_patch_order_irrelevant() {
    let mut m = perturbed_model(toy_config(), 9);
    let mut g = rng(77);
    let x: Vec<f64> = (0..24).map(|_| g.random_range(0.0..1.0)).collect();
    let tokens = patchify(&x, m.config()).unwrap();
    let l = tokens.rows();
    let perm: Vec<usize> = (0..l).rev().collect();
    let shuffled = Tensor::from_rows(&perm.iter().map(|&i| tokens.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let run = |m: &ViTFc, t: &Tensor| {
        let mut gr = Graph::new();
        let bound = m.bind(&mut gr);
        let xv = gr.constant(t.clone());
        let mut bn = m.bn.clone();
        let y = m.forward(&mut gr, &bound, xv, Mode::Eval, &mut eval_rng(), &mut bn).unwrap();
        gr.value(y).data()[0]
    };
    // generic position embeddings make the order visible
    assert!((run(&m, &tokens) - run(&m, &shuffled)).abs() > 1e-9);
    for x in m.param_mut("pos_embed").unwrap().value.data_mut() {
        *x = 0.0;
    }
    assert!((run(&m, &tokens) - run(&m, &shuffled)).abs() < 1e-12);
}
