//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Criteria run one after another so the
//! timed ones see a single busy core.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use gtae::autodiff::nn::{rng_from, SeededRng};
use gtae::autodiff::{gumbel_softmax, ParamStore, Tape, Tensor, Var, ZeroNoise};
use gtae::cli::{run_variant, transfer_examples, Variant};
use gtae::graph::{
    attach_parses, augment_with_style_node, build_adjacency, prepare_dataset, Adjacency, Dataset, EdgeFlags, Example,
    LinguisticGraph, PrepareOptions, Style,
};
use gtae::metrics::{
    build_style_lexicon, corpus_bleu, evaluate_run, masked_wmd, per_sentence_emd, transfer_emd, EvalArtifacts,
    EvalClassifierConfig, StyleLexicon, WordEmbeddings,
};
use gtae::synth::SyntheticCorpus;
use gtae::trainer::{
    classifier_step, fit, load_checkpoint, reconstruction_accuracy, save_checkpoint, transfer_step, Gtae, ModelState,
    RunConfig, TrainConfig,
};
use gtae::transformer::{cgt_decode_nodes, sgt_encode, CgtParams, ModelConfig, SgtParams};

type Outcome = Result<String, String>;

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_tensor(rng: &mut SeededRng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Random dependency tree over `k` tokens as 1-based heads with one root.
fn random_heads(rng: &mut SeededRng, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    let mut heads = vec![0; k];
    for j in 1..k {
        heads[order[j]] = order[rng.random_range(0..j)] + 1;
    }
    heads
}

fn norm_relative(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

/// Worst norm-relative error of tape gradients against central differences.
fn gradcheck(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> gtae::Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let eval = |xs: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs).unwrap();
        t.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(&tape, *v);
        let numeric: Vec<f64> = (0..inputs[i].len())
            .map(|j| {
                let (mut plus, mut minus) = (inputs.to_vec(), inputs.to_vec());
                plus[i].data_mut()[j] += H;
                minus[i].data_mut()[j] -= H;
                (eval(&plus) - eval(&minus)) / (2.0 * H)
            })
            .collect();
        worst = worst.max(norm_relative(analytic.data(), &numeric));
    }
    worst
}

/// Weighted sum against fixed random coefficients, so every output entry
/// contributes a distinct gradient.
fn project(t: &mut Tape, y: Var, seed: u64) -> gtae::Result<Var> {
    let shape = t.shape(y).to_vec();
    let mut rng = rng_from(seed);
    let w = Tensor::new(shape.clone(), (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    t.sum(p)
}

type OpCase = (&'static str, Vec<(usize, usize)>, Box<dyn Fn(&mut Tape, &[Var]) -> gtae::Result<Var>>);

fn op_cases(k: usize, d: usize) -> Vec<OpCase> {
    let mask: Vec<bool> = (0..k * k).map(|i| i % (k + 1) == 0 || i % 3 == 1).collect();
    let targets: Vec<usize> = (0..k).map(|i| i % d).collect();
    vec![
        ("matmul", vec![(k, d), (d, 3)], Box::new(|t, v| { let y = t.matmul(v[0], v[1])?; project(t, y, 1) })),
        ("add", vec![(k, d), (k, d)], Box::new(|t, v| { let y = t.add(v[0], v[1])?; project(t, y, 2) })),
        ("sub", vec![(k, d), (k, d)], Box::new(|t, v| { let y = t.sub(v[0], v[1])?; project(t, y, 3) })),
        ("mul", vec![(k, d), (k, d)], Box::new(|t, v| { let y = t.mul(v[0], v[1])?; project(t, y, 4) })),
        ("add_row", vec![(k, d), (1, d)], Box::new(|t, v| { let y = t.add_row(v[0], v[1])?; project(t, y, 5) })),
        ("affine", vec![(k, d), (d, 4), (1, 4)], Box::new(|t, v| { let y = t.affine(v[0], v[1], v[2])?; project(t, y, 6) })),
        ("scale", vec![(k, d)], Box::new(|t, v| { let y = t.scale(v[0], -1.7)?; project(t, y, 7) })),
        ("relu", vec![(k, d)], Box::new(|t, v| { let y = t.relu(v[0])?; project(t, y, 8) })),
        ("sigmoid", vec![(k, d)], Box::new(|t, v| { let y = t.sigmoid(v[0])?; project(t, y, 9) })),
        ("tanh", vec![(k, d)], Box::new(|t, v| { let y = t.tanh(v[0])?; project(t, y, 10) })),
        ("softmax_rows", vec![(k, d)], Box::new(|t, v| { let y = t.softmax_rows(v[0])?; project(t, y, 11) })),
        ("softmax", vec![(k, d)], Box::new(|t, v| { let y = t.softmax(v[0], 0)?; project(t, y, 12) })),
        ("layer_norm", vec![(k, d), (1, d), (1, d)], Box::new(|t, v| { let y = t.layer_norm(v[0], v[1], v[2])?; project(t, y, 13) })),
        (
            "attention",
            vec![(k, d), (k, d), (k, d)],
            Box::new(move |t, v| { let y = t.attention(v[0], v[1], v[2], &mask, 2)?; project(t, y, 14) }),
        ),
        ("gather_rows", vec![(5, d)], Box::new(|t, v| { let y = t.gather_rows(v[0], &[4, 0, 4, 2])?; project(t, y, 15) })),
        ("concat_rows", vec![(k, d), (2, d)], Box::new(|t, v| { let y = t.concat_rows(&[v[0], v[1]])?; project(t, y, 16) })),
        ("concat_cols", vec![(k, d), (k, 3)], Box::new(|t, v| { let y = t.concat_cols(&[v[0], v[1]])?; project(t, y, 17) })),
        ("slice_rows", vec![(k, d)], Box::new(|t, v| { let y = t.slice_rows(v[0], 1, 2)?; project(t, y, 18) })),
        ("slice_cols", vec![(k, d)], Box::new(|t, v| { let y = t.slice_cols(v[0], 2, 3)?; project(t, y, 19) })),
        ("windows", vec![(k, d)], Box::new(|t, v| { let y = t.windows(v[0], 3, 2)?; project(t, y, 20) })),
        ("max_rows", vec![(k, d)], Box::new(|t, v| { let y = t.max_rows(v[0])?; project(t, y, 21) })),
        ("cross_entropy", vec![(k, d)], Box::new(move |t, v| t.cross_entropy(v[0], &targets))),
        ("mean", vec![(k, d)], Box::new(|t, v| { let y = t.mul(v[0], v[0])?; t.mean(y) })),
        (
            "gumbel_softmax",
            vec![(k, d)],
            Box::new(|t, v| { let y = gumbel_softmax(t, v[0], 0.6, &mut ZeroNoise)?; project(t, y, 22) }),
        ),
    ]
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig { d_model: 8, heads: 2, layers: 2, classifier_maps: 2, ..ModelConfig::toy() }
}

/// Central differences over every scalar of every parameter in `ids`,
/// compared with `grads` parameter by parameter.
fn param_gradcheck(
    store: &ParamStore,
    ids: &[gtae::autodiff::ParamId],
    grads: &gtae::autodiff::ParamGrads,
    loss: &dyn Fn(&ParamStore) -> f64,
) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut scalars = 0;
    let mut probe = store.clone();
    for &id in ids {
        let analytic = grads.get_or_zero(store, id);
        let n = store.value(id).len();
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let x = store.value(id).data()[j];
            probe.value_mut(id).data_mut()[j] = x + H;
            let up = loss(&probe);
            probe.value_mut(id).data_mut()[j] = x - H;
            let down = loss(&probe);
            probe.value_mut(id).data_mut()[j] = x;
            *slot = (up - down) / (2.0 * H);
        }
        scalars += n;
        worst = worst.max(norm_relative(analytic.data(), &numeric));
    }
    (worst, scalars)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(101);
    let mut worst_op = ("", 0.0f64);
    for trial in 0..3 {
        let k = 2 + trial + 1;
        for (name, shapes, f) in op_cases(k, 8) {
            let inputs: Vec<Tensor> = shapes.iter().map(|&(r, c)| random_tensor(&mut rng, r, c)).collect();
            let err = gradcheck(&inputs, f.as_ref());
            if err > worst_op.1 || err.is_nan() {
                worst_op = (name, err);
            }
        }
    }

    let cfg = tiny_model_config();
    let vocab_size = 12;
    let train = TrainConfig { transfer_s: false, lambda_g: 0.5, ..TrainConfig::toy() };
    let mut worst_path: f64 = 0.0;
    let mut scalars = 0;
    for seed in 0..2u64 {
        let (model, store) = Gtae::build(&cfg, vocab_size, seed).unwrap();
        let k = 4 + seed as usize;
        let heads = random_heads(&mut rng, k);
        let ids: Vec<usize> = (0..k).map(|_| rng.random_range(4..vocab_size)).collect();
        let graph = LinguisticGraph { ids, heads: heads.clone(), adjacency: build_adjacency(&heads, EdgeFlags::default()) };
        let ex = Example { tokens: vec![String::new(); k], graph, style: Style::new(seed as usize % 2).unwrap() };

        // SGT -> CGT -> rephraser -> reconstruction NLL, plus the graph-level transfer term
        let (grads, _) = transfer_step(&model, &store, &ex, &train, 1.0, &mut ZeroNoise).unwrap();
        let generator = model.generator_ids(&store);
        let (err, n) = param_gradcheck(&store, &generator, &grads, &|s| {
            let (_, b) = transfer_step(&model, s, &ex, &train, 1.0, &mut ZeroNoise).unwrap();
            b.rec + train.lambda_g * b.lt_g
        });
        worst_path = worst_path.max(err);
        scalars += n;

        let (grads, _) = classifier_step(&model, &store, &ex, &train).unwrap();
        let classifiers = model.classifier_ids(&store);
        let (err, n) = param_gradcheck(&store, &classifiers, &grads, &|s| {
            let (_, b) = classifier_step(&model, s, &ex, &train).unwrap();
            b.lc_g + b.lc_s
        });
        worst_path = worst_path.max(err);
        scalars += n;
    }
    let elapsed = start.elapsed();
    check(
        worst_op.1 <= GRAD_TOL && worst_path <= GRAD_TOL && elapsed < Duration::from_secs(60),
        format!(
            "worst op {} rel err {:.2e}; composed path rel err {:.2e} over {scalars} scalars; {:.1}s (tol {GRAD_TOL:e}, < 60s)",
            worst_op.0,
            worst_op.1,
            worst_path,
            elapsed.as_secs_f64()
        ),
    )
}

fn run_sgt(store: &ParamStore, p: &SgtParams, cfg: &ModelConfig, adj: &Adjacency, x: &Tensor) -> Tensor {
    let mut tape = Tape::with_params(store);
    let x = tape.constant(x.clone());
    let aug = augment_with_style_node(adj).unwrap();
    let out = sgt_encode(&mut tape, &aug, x, Style::ONE, p, cfg).unwrap();
    tape.value(out).clone()
}

fn run_cgt(store: &ParamStore, p: &CgtParams, cfg: &ModelConfig, adj: &Adjacency, t: &Tensor, s: &Tensor) -> Tensor {
    let mut tape = Tape::with_params(store);
    let t = tape.constant(t.clone());
    let s = tape.constant(s.clone());
    let out = cgt_decode_nodes(&mut tape, t, s, adj, p, cfg).unwrap();
    tape.value(out).clone()
}

/// Copy of `x` with every row outside `keep` replaced by fresh noise.
fn perturb_outside(rng: &mut SeededRng, x: &Tensor, keep: &[bool]) -> Tensor {
    let mut y = x.clone();
    let d = x.shape()[1];
    for (r, _) in keep.iter().enumerate().filter(|(_, k)| !**k) {
        for c in 0..d {
            y.data_mut()[r * d + c] = rng.random_range(-5.0..5.0);
        }
    }
    y
}

fn mask_locality() -> Outcome {
    let mut rng = rng_from(202);
    let mut checks = 0;
    let mut moved = 0;
    for layers in [1usize, 2, 3] {
        let cfg = ModelConfig { layers, ..tiny_model_config() };
        let mut store = ParamStore::new();
        let sgt = SgtParams::new(&mut store, &mut rng, &cfg);
        let cgt = CgtParams::new(&mut store, &mut rng, &cfg);
        for _ in 0..20 {
            let k = rng.random_range(2..=7);
            let adj = build_adjacency(&random_heads(&mut rng, k), EdgeFlags::default());
            let x = random_tensor(&mut rng, k, 8);
            let s = random_tensor(&mut rng, k, 8);
            let base_sgt = run_sgt(&store, &sgt, &cfg, &adj, &x);
            let base_cgt = run_cgt(&store, &cgt, &cfg, &adj, &x, &s);
            for i in 0..k {
                let ball = adj.ball(i, layers);
                let sgt_out = run_sgt(&store, &sgt, &cfg, &adj, &perturb_outside(&mut rng, &x, &ball));
                let (pt, ps) = (perturb_outside(&mut rng, &x, &ball), perturb_outside(&mut rng, &s, &ball));
                let cgt_out = run_cgt(&store, &cgt, &cfg, &adj, &pt, &ps);
                if sgt_out.row_slice(i) != base_sgt.row_slice(i) || cgt_out.row_slice(i) != base_cgt.row_slice(i) {
                    return Err(format!("node {i} of a {k}-node graph moved under a perturbation outside its {layers}-hop ball"));
                }
                checks += 2;
            }
            // a perturbation inside the ball must be visible, or the check is vacuous
            let mut y = x.clone();
            y.data_mut()[0] += 1.0;
            if run_sgt(&store, &sgt, &cfg, &adj, &y).row_slice(0) != base_sgt.row_slice(0) {
                moved += 1;
            }
        }
    }
    check(moved == 60, format!("{checks} node outputs bit-identical under out-of-ball perturbations; in-ball perturbation visible in {moved}/60 graphs"))
}

fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| x.row_slice(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn permutation_equivariance() -> Outcome {
    let mut rng = rng_from(303);
    let cfg = tiny_model_config();
    let mut store = ParamStore::new();
    let sgt = SgtParams::new(&mut store, &mut rng, &cfg);
    let cgt = CgtParams::new(&mut store, &mut rng, &cfg);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.random_range(2..=5);
        let adj = build_adjacency(&random_heads(&mut rng, k), EdgeFlags::default());
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        let (x, t) = (random_tensor(&mut rng, k, 8), random_tensor(&mut rng, k, 8));
        let padj = adj.permuted(&perm);
        let (px, pt) = (permute_rows(&x, &perm), permute_rows(&t, &perm));
        let a = permute_rows(&run_sgt(&store, &sgt, &cfg, &adj, &x), &perm);
        worst = worst.max(a.max_abs_diff(&run_sgt(&store, &sgt, &cfg, &padj, &px)));
        let a = permute_rows(&run_cgt(&store, &cgt, &cfg, &adj, &t, &x), &perm);
        worst = worst.max(a.max_abs_diff(&run_cgt(&store, &cgt, &cfg, &padj, &pt, &px)));
    }
    check(worst <= 1e-9, format!("max abs deviation {worst:.2e} over 50 random graphs (tol 1e-9)"))
}

/// Exact transport cost by enumerating every spanning tree of the
/// bipartite supply/demand graph: each basic feasible solution of the
/// transportation LP is the unique flow on one such tree.
fn brute_force_transport(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (n, m) = (supply.len(), demand.len());
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let need = n + m - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(need);
    fn subsets(
        start: usize,
        need: usize,
        edges: &[(usize, usize)],
        chosen: &mut Vec<(usize, usize)>,
        visit: &mut dyn FnMut(&[(usize, usize)]),
    ) {
        if chosen.len() == need {
            visit(chosen);
            return;
        }
        for e in start..edges.len() {
            if edges.len() - e < need - chosen.len() {
                break;
            }
            chosen.push(edges[e]);
            subsets(e + 1, need, edges, chosen, visit);
            chosen.pop();
        }
    }
    subsets(0, need, &edges, &mut chosen, &mut |tree| {
        // peel leaves: a node with one remaining edge fixes that edge's flow
        let mut rest_s = supply.to_vec();
        let mut rest_d = demand.to_vec();
        let mut open: Vec<bool> = vec![true; tree.len()];
        let mut flow = vec![0.0; tree.len()];
        for _ in 0..tree.len() {
            let degree = |node: usize, open: &[bool]| -> Vec<usize> {
                (0..tree.len())
                    .filter(|&e| open[e] && if node < n { tree[e].0 == node } else { tree[e].1 == node - n })
                    .collect()
            };
            let leaf = (0..n + m).find_map(|node| {
                let es = degree(node, &open);
                (es.len() == 1).then(|| (node, es[0]))
            });
            let Some((node, e)) = leaf else { return };
            let f = if node < n { rest_s[node] } else { rest_d[node - n] };
            flow[e] = f;
            rest_s[tree[e].0] -= f;
            rest_d[tree[e].1] -= f;
            open[e] = false;
        }
        let balanced = rest_s.iter().chain(&rest_d).all(|r| r.abs() < 1e-12);
        if balanced && flow.iter().all(|&f| f >= -1e-12) {
            let total: f64 = tree.iter().zip(&flow).map(|(&(i, j), f)| f * cost[i][j]).sum();
            best = best.min(total);
        }
    });
    best
}

fn wmd_oracle(source: &[&str], output: &[&str], lexicon: &StyleLexicon, emb: &WordEmbeddings) -> Option<f64> {
    let hist = |side: &[&str]| {
        let mut h: BTreeMap<String, f64> = BTreeMap::new();
        let kept: Vec<&&str> = side.iter().filter(|w| !lexicon.contains(w)).collect();
        for w in &kept {
            *h.entry(w.to_string()).or_insert(0.0) += 1.0 / kept.len() as f64;
        }
        h
    };
    let (a, b) = (hist(source), hist(output));
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let cost: Vec<Vec<f64>> = a.keys().map(|x| b.keys().map(|y| emb.distance(x, y)).collect()).collect();
    Some(brute_force_transport(&a.values().copied().collect::<Vec<_>>(), &b.values().copied().collect::<Vec<_>>(), &cost))
}

fn metric_oracles() -> Outcome {
    let mut rng = rng_from(404);
    let words = ["good", "bad", "cat", "dog", "sat", "mat", "ran", "unseen"];
    let lexicon = StyleLexicon::from_words(&["good", "bad"]);
    let vectors: BTreeMap<String, Vec<f64>> =
        words[..7].iter().map(|w| (w.to_string(), (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
    let emb = WordEmbeddings::new(5, vectors).unwrap();
    let mut wmd_worst: f64 = 0.0;
    let mut instances = 0;
    for _ in 0..400 {
        let draw = |rng: &mut SeededRng| -> Vec<&str> { (0..rng.random_range(0..=4)).map(|_| words[rng.random_range(0..words.len())]).collect() };
        let (src, out) = (draw(&mut rng), draw(&mut rng));
        let got = masked_wmd(&src, &out, &lexicon, &emb).unwrap();
        let want = wmd_oracle(&src, &out, &lexicon, &emb);
        match (got, want) {
            (Some(g), Some(w)) => wmd_worst = wmd_worst.max((g - w).abs()),
            (None, None) => {}
            _ => return Err(format!("masked_wmd skip mismatch on {src:?} -> {out:?}")),
        }
        instances += 1;
    }

    let mut emd_ok = true;
    for _ in 0..200 {
        let (p, q) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let target = Style::new(rng.random_range(0..2)).unwrap();
        let (input, output) = ([1.0 - p, p], [1.0 - q, q]);
        let delta = output[target.index()] - input[target.index()];
        let want: f64 = if delta > 0.0 { delta } else { 0.0 };
        emd_ok &= per_sentence_emd(&input, &output, target) == want;
        emd_ok &= transfer_emd(&[input], &[output], &[target]).unwrap() == want;
    }

    let toks = |s: &str| -> Vec<String> { s.split_whitespace().map(String::from).collect() };
    let bleu = |h: &[&str], r: &[&str]| {
        corpus_bleu(&h.iter().map(|s| toks(s)).collect::<Vec<_>>(), &r.iter().map(|s| toks(s)).collect::<Vec<_>>()).unwrap()
    };
    let cases = [
        (bleu(&["the cat sat on the mat", "a dog ran"], &["the cat sat on the mat", "a dog ran"]), 100.0),
        (bleu(&["the the the the"], &["the cat"]), 100.0 * (1.0f64 / 96.0).powf(0.25)),
        (bleu(&["a b c"], &["a b d e"]), 100.0 * (-1.0f64 / 3.0).exp() * (2.0f64 / 9.0).powf(0.25)),
        (bleu(&["a b", "c d"], &["a b", "x y"]), 100.0 * (1.0f64 / 3.0).powf(0.25)),
        (bleu(&["x y z"], &["a b c"]), 0.0),
    ];
    let bleu_worst = cases.iter().map(|(got, want)| (got - want).abs()).fold(0.0, f64::max);

    let mut tape = Tape::new();
    let logits = tape.constant(Tensor::new(vec![1, 2], vec![0.3, 0.3]).unwrap());
    let ce = tape.cross_entropy(logits, &[1]).unwrap();
    let ce_err = (tape.value(ce).item() - std::f64::consts::LN_2).abs();

    check(
        wmd_worst <= 1e-9 && emd_ok && bleu_worst <= 1e-9 && ce_err <= 1e-9,
        format!(
            "masked_wmd vs tree enumeration max err {wmd_worst:.1e} on {instances} instances; emd closed form {}; {} BLEU cases max err {bleu_worst:.1e}; uniform CE - ln2 = {ce_err:.1e}",
            if emd_ok { "exact" } else { "mismatch" },
            cases.len()
        ),
    )
}

fn synthetic_dataset(per_style: usize) -> (SyntheticCorpus, Dataset) {
    let corpus = SyntheticCorpus::generate(per_style, 1);
    let parses = attach_parses(&corpus.records, None).unwrap();
    let (data, _) = prepare_dataset(&corpus.records, &parses, &PrepareOptions::default()).unwrap();
    (corpus, data)
}

fn lexicon_recovery(corpus: &SyntheticCorpus) -> Outcome {
    let found = build_style_lexicon(corpus.records.iter().map(|r| (r.tokens.as_slice(), r.style)), gtae::metrics::LEXICON_FRACTION)
        .unwrap();
    let planted = corpus.lexicon.words();
    let found: Vec<String> = found.words().map(String::from).collect();
    let hits = found.iter().filter(|w| planted.contains(*w)).count();
    let precision = hits as f64 / found.len() as f64;
    let recall = hits as f64 / planted.len() as f64;
    check(precision == 1.0 && recall == 1.0, format!("precision {precision:.3} recall {recall:.3} ({} planted, {} found)", planted.len(), found.len()))
}

fn determinism_and_persistence() -> Outcome {
    let corpus = SyntheticCorpus::generate(24, 5);
    let parses = attach_parses(&corpus.records, None).unwrap();
    let options = PrepareOptions { min_count: 1, split: (0.75, 0.125), ..Default::default() };
    let data = prepare_dataset(&corpus.records, &parses, &options).unwrap().0;
    let model = ModelConfig { d_model: 16, heads: 2, layers: 1, classifier_maps: 4, ..ModelConfig::toy() };
    let train = TrainConfig { warmup_epochs: 2, train_epochs: 2, batch_size: 8, patience: 0, decode_max_len: 8, seed: 9, ..TrainConfig::toy() };
    let run = || {
        let mut state = ModelState::new(&model, &train, data.vocab.len(), data.vocab.hash()).unwrap();
        let log = fit(&mut state, &data, &train, &mut ()).unwrap();
        let bits: Vec<u64> = log.iter().flat_map(|e| [e.l_rec, e.lc_g, e.lc_s, e.lt_g, e.lt_s]).map(f64::to_bits).collect();
        (state, bits)
    };
    let (a, log_a) = run();
    let (_, log_b) = run();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    save_checkpoint(&a, &train, &path).unwrap();
    let (back, back_train) = load_checkpoint(&path, Some(&data.vocab.hash())).unwrap();
    let same = a.store.len() == back.store.len()
        && a.store.iter().zip(back.store.iter()).all(|((_, p), (_, q))| {
            p.name == q.name && p.value.data().iter().zip(q.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    check(
        log_a == log_b && same && back_train == train && back.optimizer == a.optimizer,
        format!(
            "{} logged losses {}; checkpoint params {}",
            log_a.len(),
            if log_a == log_b { "bit-identical" } else { "differ" },
            if same { "bit-exact" } else { "differ" }
        ),
    )
}

fn content_preservation(transfers: &[gtae::metrics::Transfer], corpus: &SyntheticCorpus) -> f64 {
    let planted = corpus.lexicon.words();
    let (mut kept, mut total) = (0usize, 0usize);
    for t in transfers {
        for w in t.source.iter().filter(|w| !planted.contains(*w)) {
            total += 1;
            kept += t.output.contains(w) as usize;
        }
    }
    kept as f64 / total.max(1) as f64
}

fn toy_end_to_end(data: &Dataset, corpus: &SyntheticCorpus, artifacts: &EvalArtifacts, prep: Duration) -> Outcome {
    let start = Instant::now();
    let config = RunConfig::toy();
    let mut state = ModelState::new(&config.model, &config.train, data.vocab.len(), data.vocab.hash()).unwrap();
    fit(&mut state, data, &TrainConfig { train_epochs: 0, ..config.train.clone() }, &mut ()).unwrap();
    let rec = reconstruction_accuracy(&state, &data.dev, config.train.decode_max_len).unwrap();
    fit(&mut state, data, &config.train, &mut ()).unwrap();
    let transfers = transfer_examples(&state, &data.test, &data.vocab, config.train.decode_max_len).unwrap();
    let report = evaluate_run(&transfers, artifacts).unwrap();
    let keep = content_preservation(&transfers, corpus);
    let total = prep + start.elapsed();
    let accu = report.summary.accu;
    check(
        rec >= 0.95 && accu >= 0.9 && keep >= 0.9 && total <= Duration::from_secs(15 * 60),
        format!(
            "d_n {} warm-up reconstruction {rec:.3} (>= 0.95); ACCU {accu:.3} (>= 0.9); content kept {keep:.3} (>= 0.9); {:.0}s (<= 900s)",
            config.model.d_model,
            total.as_secs_f64()
        ),
    )
}

fn directional_ablations(data: &Dataset, artifacts: &EvalArtifacts) -> Outcome {
    let seeds = 0..5u64;
    let mut sgt_wins = 0;
    let mut pretrain_wins = 0;
    let mut lines = Vec::new();
    for seed in seeds.clone() {
        let mut base = RunConfig::toy();
        base.train.seed = seed;
        let summary = |v: Variant| run_variant(data, &base, v, artifacts).unwrap().1.report.summary;
        let full = summary(Variant::Full);
        let sgt_i = summary(Variant::SgtIdentity);
        let pre0 = summary(Variant::Pretrain(0));
        let wmd = |s: &gtae::metrics::MetricSummary| s.masked_wmd.unwrap_or(f64::NAN);
        sgt_wins += (wmd(&sgt_i) >= wmd(&full)) as usize;
        pretrain_wins += (pre0.accu <= full.accu) as usize;
        lines.push(format!(
            "seed {seed}: full wmd {:.4} accu {:.3} | sgt-i wmd {:.4} | pretrain-0 accu {:.3}",
            wmd(&full),
            full.accu,
            wmd(&sgt_i),
            pre0.accu
        ));
    }
    let mut base = RunConfig::toy();
    base.train.seed = 0;
    let g_only = run_variant(data, &base, Variant::TransferGraphOnly, artifacts).unwrap().1.report.summary;
    for l in &lines {
        println!("    {l}");
    }
    check(
        sgt_wins >= 4 && pretrain_wins >= 4 && g_only.accu <= 0.2 && g_only.bleu >= 90.0,
        format!(
            "(a) sgt-i wmd >= full in {sgt_wins}/5; (b) t-clas-g-only ACCU {:.3} (<= 0.2) BLEU {:.2} (>= 90); (c) pretrain-0 ACCU <= full in {pretrain_wins}/5",
            g_only.accu, g_only.bleu
        ),
    )
}

fn report(id: usize, name: &str, outcome: &Outcome) -> bool {
    match outcome {
        Ok(d) => println!("criterion {id} PASS  {name}: {d}"),
        Err(d) => println!("criterion {id} FAIL  {name}: {d}"),
    }
    outcome.is_ok()
}

fn main() {
    // `cargo test -- --list` and filtered runs expect a harness; only run on a plain invocation
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if args.iter().any(|a| !a.starts_with('-') && !"acceptance".contains(a.as_str())) {
        return;
    }
    let mut results = Vec::new();
    results.push(report(1, "gradient correctness", &gradient_correctness()));
    results.push(report(2, "mask locality", &mask_locality()));
    results.push(report(3, "permutation equivariance", &permutation_equivariance()));
    results.push(report(4, "metric oracles", &metric_oracles()));

    results.push(report(8, "determinism and persistence", &determinism_and_persistence()));

    let prep_start = Instant::now();
    let (corpus, data) = synthetic_dataset(500);
    results.push(report(7, "style lexicon recovery", &lexicon_recovery(&corpus)));
    let artifacts = EvalArtifacts::prepare(&data, EvalClassifierConfig::default()).unwrap();
    let prep = prep_start.elapsed();
    results.push(report(5, "toy end-to-end", &toy_end_to_end(&data, &corpus, &artifacts, prep)));
    results.push(report(6, "directional ablations", &directional_ablations(&data, &artifacts)));

    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
