use rand::Rng;
use soh_core::autodiff::{BatchNormState, Graph, Mode, Var};
use soh_core::model::{ViTConfig, ViTFc};
use soh_core::rng::{stream, Purpose};
use soh_core::{Result, Tensor};

const H: f64 = 1e-5;
const RTOL: f64 = 1e-4;
const ATOL: f64 = 1e-6;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream(seed, Purpose::Init, 500, 0);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for kinked ops.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    random(shape, seed).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// Builds `Σ out ⊙ W` for a fixed random `W` so every output element matters.
fn weighted_loss<F>(g: &mut Graph, vars: &[Var], f: &F) -> Result<Var>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let out = f(g, vars)?;
    let w = g.constant(random(g.value(out).shape(), 77));
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn loss_at<F>(inputs: &[Tensor], f: &F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let l = weighted_loss(&mut g, &vars, f).unwrap();
    g.value(l).data()[0]
}

fn assert_close(analytic: f64, numeric: f64, what: &str) {
    assert!(
        (analytic - numeric).abs() <= ATOL + RTOL * numeric.abs(),
        "{what}: analytic {analytic} vs numeric {numeric}"
    );
}

fn check<F>(name: &str, inputs: Vec<Tensor>, f: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let l = weighted_loss(&mut g, &vars, &f).unwrap();
    let grads = g.backward(l).unwrap();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= H;
            let numeric = (loss_at(&plus, &f) - loss_at(&minus, &f)) / (2.0 * H);
            assert_close(analytic.data()[i], numeric, &format!("{name} input {k} element {i}"));
        }
    }
}

pub fn matmul_family() {
    check("matmul", vec![random(&[3, 4], 1), random(&[4, 2], 2)], |g, v| g.matmul(v[0], v[1]));
    check("matmul_nt", vec![random(&[3, 4], 3), random(&[5, 4], 4)], |g, v| g.matmul_nt(v[0], v[1]));
    check("transpose", vec![random(&[3, 4], 5)], |g, v| g.transpose(v[0]));
}

pub fn elementwise() {
    check("add", vec![random(&[2, 3], 1), random(&[2, 3], 2)], |g, v| g.add(v[0], v[1]));
    check("mul", vec![random(&[2, 3], 3), random(&[2, 3], 4)], |g, v| g.mul(v[0], v[1]));
    check("scale", vec![random(&[2, 3], 5)], |g, v| g.scale(v[0], -1.7));
    check("relu", vec![away_from_zero(&[3, 3], 6)], |g, v| g.relu(v[0]));
    check("gelu", vec![random(&[3, 3], 7).map(|x| 3.0 * x)], |g, v| g.gelu(v[0]));
}

pub fn broadcasting() {
    check("add_row_vec", vec![random(&[4, 3], 1), random(&[3], 2)], |g, v| g.add_row_vec(v[0], v[1]));
    check("add_tiled", vec![random(&[6, 3], 3), random(&[2, 3], 4)], |g, v| g.add_tiled(v[0], v[1]));
}

pub fn normalizations() {
    check("softmax_rows", vec![random(&[3, 4], 1)], |g, v| g.softmax_rows(v[0]));
    check(
        "layer_norm",
        vec![random(&[3, 5], 2), random(&[5], 3), random(&[5], 4)],
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
    );
    check(
        "batch_norm train",
        vec![random(&[4, 3], 5), random(&[3], 6), random(&[3], 7)],
        |g, v| g.batch_norm(v[0], v[1], v[2], &mut BatchNormState::new(3), Mode::Train),
    );
    check(
        "batch_norm eval",
        vec![random(&[4, 3], 8), random(&[3], 9), random(&[3], 10)],
        |g, v| {
            let mut s = BatchNormState::new(3);
            s.running_mean = vec![0.1, -0.2, 0.3];
            s.running_var = vec![0.5, 1.5, 2.0];
            g.batch_norm(v[0], v[1], v[2], &mut s, Mode::Eval)
        },
    );
}

pub fn dropout_with_fixed_mask() {
    check("dropout", vec![random(&[4, 4], 1)], |g, v| {
        g.dropout(v[0], 0.3, &mut stream(5, Purpose::Dropout, 0, 0), Mode::Train)
    });
}

pub fn structural() {
    check("slice_block", vec![random(&[5, 4], 1)], |g, v| g.slice_block(v[0], 1, 3, 1, 2));
    check("concat_rows", vec![random(&[2, 3], 2), random(&[1, 3], 3)], |g, v| g.concat_rows(&[v[0], v[1]]));
    check("concat_cols", vec![random(&[2, 3], 4), random(&[2, 1], 5)], |g, v| g.concat_cols(&[v[0], v[1]]));
    check("mean_row_groups", vec![random(&[6, 2], 6)], |g, v| g.mean_row_groups(v[0], 3));
    check("sum", vec![random(&[3, 2], 7)], |g, v| g.sum(v[0]));
    check("mse", vec![random(&[4, 1], 8), random(&[4, 1], 9)], |g, v| g.mse(v[0], v[1]));
}

fn toy_model() -> ViTFc {
    let cfg = ViTConfig {
        l_v: 8,
        f: 3,
        s_patch: 4,
        f_patch: 2,
        d_embed: 8,
        heads: 2,
        d_head: 4,
        mlp_hidden: 8,
        depth: 1,
        fc_hidden: 4,
        dropout: 0.1,
    };
    let mut m = ViTFc::new(cfg, 11).unwrap();
    // non-trivial norms and biases so that no gradient path is degenerate
    for (k, p) in m.params_mut().iter_mut().enumerate() {
        if p.name.contains("bias") || p.name.contains("beta") || p.name.contains("gamma") {
            let r = random(p.value.shape(), 100 + k as u64);
            for (v, d) in p.value.data_mut().iter_mut().zip(r.data()) {
                *v += 0.3 * d;
            }
        }
    }
    m
}

fn model_loss(m: &ViTFc, x: &Tensor, y: &Tensor) -> (f64, Vec<Option<Tensor>>) {
    let mut g = Graph::new();
    let bound = m.bind(&mut g);
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let mut bn = m.bn.clone();
    let mut rng = stream(3, Purpose::Dropout, 0, 0);
    let pred = m.forward(&mut g, &bound, xv, Mode::Train, &mut rng, &mut bn).unwrap();
    let l = g.mse(pred, yv).unwrap();
    let mut grads = g.backward(l).unwrap();
    let per: Vec<Option<Tensor>> = bound.vars.iter().map(|&v| grads.take(v)).collect();
    (g.value(l).data()[0], per)
}

pub fn toy_vit_fc_end_to_end() {
    let m = toy_model();
    let batch = 3;
    let inputs: Vec<Tensor> = (0..batch).map(|b| random(&[3 * 8], 40 + b)).collect();
    let refs: Vec<&[f64]> = inputs.iter().map(|t| t.data()).collect();
    let x = m.patch_batch(&refs).unwrap();
    let y = Tensor::matrix(batch as usize, 1, vec![0.9, 0.8, 0.95]).unwrap();
    let (_, grads) = model_loss(&m, &x, &y);
    for (k, p) in m.params().iter().enumerate() {
        let analytic = grads[k].as_ref().unwrap_or_else(|| panic!("no gradient for {}", p.name));
        for i in 0..p.value.len() {
            let mut plus = m.clone();
            plus.params_mut()[k].value.data_mut()[i] += H;
            let mut minus = m.clone();
            minus.params_mut()[k].value.data_mut()[i] -= H;
            let numeric = (model_loss(&plus, &x, &y).0 - model_loss(&minus, &x, &y).0) / (2.0 * H);
            assert_close(analytic.data()[i], numeric, &format!("{} element {i}", p.name));
        }
    }
}
