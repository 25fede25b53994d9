//! Test bodies shared by the `gradients` target and the acceptance suite.

use crate::common::*;
use nflat_core::attention::{attention_scores, masked_softmax};
use nflat_core::autodiff::{Tape, Var};
use nflat_core::batch::Batch;
use nflat_core::config::Ablation;
use nflat_core::context::{SelfAttention, SelfAttnConfig};
use nflat_core::crf::{nll_with_grads, CrfWeights};
use nflat_core::gradcheck::{check_inputs, check_params, GradCheckReport, TOLERANCE};
use nflat_core::interformer::{InterFormer, InterFormerConfig};
use nflat_core::nn::Ctx;
use nflat_core::params::ParamStore;
use nflat_core::tensor::Tensor;
use rand::Rng;

fn random_tensor(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Weighted sum of the op output with fixed random weights, so every
/// output element contributes a distinct coefficient.
fn probe_loss(tape: &mut Tape<'_, f64>, out: Var) -> Var {
    let w = tape.constant(random_tensor(999, tape.shape(out)));
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

fn check_op(shapes: &[&[usize]], build: impl Fn(&mut Tape<'_, f64>, &[Var]) -> Var) -> GradCheckReport {
    let store = ParamStore::<f64>::new();
    let inputs: Vec<Tensor<f64>> = shapes.iter().enumerate().map(|(k, s)| random_tensor(k as u64 + 1, s)).collect();
    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new(&store);
        let vars: Vec<Var> = xs.iter().map(|x| tape.input(x.clone())).collect();
        let out = build(&mut tape, &vars);
        let loss = probe_loss(&mut tape, out);
        (tape.value(loss).item(), tape.backward(loss).map(|g| vars.iter().map(|&v| g.wrt(v).unwrap().clone()).collect::<Vec<_>>()))
    };
    let analytic = eval(&inputs).1.unwrap();
    check_inputs(&inputs, &analytic, |xs| Ok(eval(xs).0)).unwrap()
}

fn assert_passes(name: &str, r: GradCheckReport) {
    assert!(r.checked > 0, "{name}: nothing checked");
    assert!(r.passed(TOLERANCE), "{name}: {r:?}");
}

pub fn elementwise_and_shape_ops() {
    assert_passes("add", check_op(&[&[2, 3], &[3]], |t, v| t.add(v[0], v[1]).unwrap()));
    assert_passes("mul", check_op(&[&[2, 3], &[2, 1]], |t, v| t.mul(v[0], v[1]).unwrap()));
    assert_passes("scale", check_op(&[&[4]], |t, v| t.scale(v[0], -1.7)));
    assert_passes("relu", check_op(&[&[3, 4]], |t, v| t.relu(v[0])));
    assert_passes("reshape", check_op(&[&[2, 6]], |t, v| t.reshape(v[0], vec![3, 4]).unwrap()));
    assert_passes("permute", check_op(&[&[2, 3, 4]], |t, v| t.permute(v[0], &[2, 0, 1]).unwrap()));
    assert_passes("concat", check_op(&[&[2, 3], &[2, 2]], |t, v| t.concat_last(v[0], v[1]).unwrap()));
    assert_passes("sum", check_op(&[&[5]], |t, v| t.sum(v[0])));
}

pub fn matrix_products() {
    assert_passes("matmul", check_op(&[&[3, 4], &[4, 2]], |t, v| t.matmul(v[0], v[1]).unwrap()));
    assert_passes("matmul_bt", check_op(&[&[3, 4], &[5, 4]], |t, v| t.matmul_bt(v[0], v[1]).unwrap()));
    assert_passes(
        "batched matmul",
        check_op(&[&[2, 3, 1, 4], &[2, 1, 4, 2]], |t, v| t.matmul(v[0], v[1]).unwrap()),
    );
}

pub fn normalisation_and_lookup() {
    assert_passes("softmax", check_op(&[&[5]], |t, v| t.softmax(v[0]).unwrap()));
    assert_passes("softmax rows", check_op(&[&[3, 4]], |t, v| t.softmax(v[0]).unwrap()));
    assert_passes(
        "layer_norm",
        check_op(&[&[2, 4], &[4], &[4]], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-12).unwrap()),
    );
    assert_passes("gather", check_op(&[&[4, 3]], |t, v| t.gather_rows(v[0], &[2, 0, 2, 3]).unwrap()));
    let keep = [true, false, true, true, false, true];
    assert_passes("dropout", check_op(&[&[2, 3]], |t, v| t.dropout_with_mask(v[0], &keep, 0.4).unwrap()));
}

pub fn attention_pieces() {
    // q [1, N=3, h=2, 1, hd=2], k [1, 1, 2, M=2, 2], rel [1, 3, 2, 2, 2], u, v [2, 1, 2]
    let shapes: [&[usize]; 5] = [&[1, 3, 2, 1, 2], &[1, 1, 2, 2, 2], &[1, 3, 2, 2, 2], &[2, 1, 2], &[2, 1, 2]];
    assert_passes(
        "scores",
        check_op(&shapes, |t, v| attention_scores(t, v[0], v[1], Some(v[2]), v[3], v[4]).unwrap()),
    );
    let bias = [0.0, -1e15, 0.0, 0.0, 0.0, -1e15];
    assert_passes(
        "masked softmax",
        check_op(&[&[1, 3, 1, 1, 2]], |t, v| {
            let b = t.constant(Tensor::new(vec![1, 3, 1, 1, 2], bias.to_vec()).unwrap());
            masked_softmax(t, v[0], b).unwrap()
        }),
    );
}

pub fn crf_nll_against_emissions_and_transitions() {
    let mut r = rng(40);
    for _ in 0..10 {
        let (n, l) = (r.random_range(1..=5), r.random_range(2..=4));
        let (em, tr, st, en) = crf_instance(&mut r, n, l);
        let gold: Vec<usize> = (0..n).map(|_| r.random_range(0..l)).collect();
        let nll = |xs: &[Tensor<f64>]| {
            let w = CrfWeights {
                labels: l,
                trans: xs[1].data(),
                start: xs[2].data(),
                end: xs[3].data(),
            };
            nll_with_grads(xs[0].data(), w, &gold)
        };
        let inputs = vec![
            Tensor::new(vec![n * l], em).unwrap(),
            Tensor::new(vec![l * l], tr).unwrap(),
            Tensor::new(vec![l], st).unwrap(),
            Tensor::new(vec![l], en).unwrap(),
        ];
        let g = nll(&inputs).unwrap().1;
        let analytic = vec![
            Tensor::new(vec![n * l], g.emissions).unwrap(),
            Tensor::new(vec![l * l], g.trans).unwrap(),
            Tensor::new(vec![l], g.start).unwrap(),
            Tensor::new(vec![l], g.end).unwrap(),
        ];
        assert_passes("crf", check_inputs(&inputs, &analytic, |xs| Ok(nll(xs)?.0)).unwrap());
    }
}

/// Sum of the layer output over real character rows, weighted by fixed
/// random coefficients. Padded rows are excluded as they are by the model
/// loss: their fully masked scores sit at a magnitude where a
/// finite-difference step is below the float spacing.
fn layer_loss(
    store: &ParamStore<f64>,
    batch: &Batch,
    run: &dyn Fn(&mut Tape<'_, f64>) -> Var,
) -> (f64, Vec<Option<Tensor<f64>>>) {
    let mut tape = Tape::new(store);
    let out = run(&mut tape);
    let mut w = random_tensor(999, tape.shape(out));
    let d = w.shape()[2];
    for (k, valid) in batch.char_valid().into_iter().enumerate() {
        if !valid {
            w.data_mut()[k * d..(k + 1) * d].fill(0.0);
        }
    }
    let w = tape.constant(w);
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod);
    let value = tape.value(loss).item();
    (value, tape.backward(loss).unwrap().into_param_grads())
}

pub fn interformer_parameters() {
    for (seed, rel) in [(0, true), (1, false)] {
        let mut store = ParamStore::new();
        let cfg = InterFormerConfig {
            d_model: 8,
            heads: 2,
            d_ff: 16,
            attn_dropout: 0.0,
            fc_dropout: 0.0,
            relative_positions: rel,
            empty_row_fallback: false,
        };
        let layer = InterFormer::new(&mut store, "inter", cfg, &mut rng(seed)).unwrap();
        let mut r = rng(seed + 10);
        let sents = [(rand_mat(&mut r, 4, 8), rand_mat(&mut r, 3, 8), vec![(1, 2), (2, 4), (1, 4)]),
            (rand_mat(&mut r, 2, 8), rand_mat(&mut r, 2, 8), vec![(1, 2), (1, 2)])];
        let inputs: Vec<_> = sents.iter().map(|(x, _, s)| input_for(x.len(), s)).collect();
        let batch = Batch::new(&inputs.iter().collect::<Vec<_>>(), 0, 0).unwrap();
        let xs: Vec<&Mat> = sents.iter().map(|s| &s.0).collect();
        let ws: Vec<&Mat> = sents.iter().map(|s| &s.1).collect();
        let (cx, wx) = (padded(&xs, batch.n, 8, 0.0), padded(&ws, batch.m, 8, 0.0));
        let run = |tape: &mut Tape<'_, f64>| {
            let c = tape.input(cx.clone());
            let w = tape.input(wx.clone());
            layer.forward(tape, c, w, &batch, &mut Ctx::eval()).unwrap()
        };
        let grads = layer_loss(&store, &batch, &run).1;
        let ids: Vec<_> = store.ids().collect();
        let report = check_params(&store, &ids, &grads, |p| Ok(layer_loss(p, &batch, &run).0)).unwrap();
        assert_passes("interformer", report);
    }
}

pub fn self_attention_parameters() {
    let mut store = ParamStore::new();
    let cfg = SelfAttnConfig {
        d_model: 8,
        heads: 2,
        d_ff: 16,
        attn_dropout: 0.0,
        fc_dropout: 0.0,
    };
    let layer = SelfAttention::new(&mut store, "context", cfg, &mut rng(3)).unwrap();
    let mut r = rng(4);
    let (a, b) = (rand_mat(&mut r, 4, 8), rand_mat(&mut r, 3, 8));
    let inputs = [input_for(4, &[]), input_for(3, &[])];
    let batch = Batch::new(&[&inputs[0], &inputs[1]], 0, 0).unwrap();
    let x = padded(&[&a, &b], 4, 8, 0.0);
    let run = |tape: &mut Tape<'_, f64>| {
        let v = tape.input(x.clone());
        layer.forward(tape, v, &batch, &mut Ctx::eval()).unwrap()
    };
    let grads = layer_loss(&store, &batch, &run).1;
    let ids: Vec<_> = store.ids().collect();
    assert_passes("self-attention", check_params(&store, &ids, &grads, |p| Ok(layer_loss(p, &batch, &run).0)).unwrap());
}

pub fn full_model_every_parameter() {
    for (seed, ablation) in [(0, Ablation::None), (1, Ablation::NoRpe), (2, Ablation::NoTag)] {
        let (model, corpus) = tiny_model(tiny_config(8, 2, ablation), seed);
        assert!(corpus.iter().all(|s| s.len() <= 4));
        let inputs: Vec<_> = corpus.iter().map(|s| model.encode(s).unwrap()).collect();
        let batch = model.batch(&inputs.iter().collect::<Vec<_>>()).unwrap();
        let loss = |store: &ParamStore<f64>| {
            let mut tape = Tape::new(store);
            let l = model.loss(&mut tape, &batch, &mut Ctx::eval()).unwrap();
            (tape.value(l).item(), tape.backward(l).unwrap().into_param_grads())
        };
        let grads = loss(&model.store).1;
        let ids: Vec<_> = model.store.ids().collect();
        let report = check_params(&model.store, &ids, &grads, |p| Ok(loss(p).0)).unwrap();
        assert_eq!(report.checked, model.store.num_scalars());
        assert_passes("model", report);
    }
}
