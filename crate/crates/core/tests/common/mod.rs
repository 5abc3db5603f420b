//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use polcoord::recommender::{CorrelationSource, GraphKind, NeighborGraph};
use rand::Rng;

/// Minimal cost of moving `u` onto `r` with ground cost `|i - j|`, found by
/// successive shortest augmenting paths on the bipartite transport network.
pub fn min_cost_transport(u: &[f64], r: &[f64]) -> f64 {
    let n = u.len();
    assert_eq!(n, r.len());
    // nodes: 0 source, 1..=n supply, n+1..=2n demand, 2n+1 sink
    let sink = 2 * n + 1;
    let nodes = sink + 1;
    let mut edges: Vec<(usize, usize, f64, f64)> = Vec::new(); // from, to, cap, cost
    let add = |edges: &mut Vec<(usize, usize, f64, f64)>, a: usize, b: usize, cap: f64, cost: f64| {
        edges.push((a, b, cap, cost));
        edges.push((b, a, 0.0, -cost));
    };
    for i in 0..n {
        add(&mut edges, 0, 1 + i, u[i], 0.0);
        add(&mut edges, n + 1 + i, sink, r[i], 0.0);
        for j in 0..n {
            add(&mut edges, 1 + i, n + 1 + j, f64::INFINITY, (i as f64 - j as f64).abs());
        }
    }
    let eps = 1e-15;
    let mut total = 0.0;
    loop {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev = vec![usize::MAX; nodes];
        dist[0] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for (k, &(a, b, cap, cost)) in edges.iter().enumerate() {
                if cap > eps && dist[a] + cost < dist[b] - 1e-12 {
                    dist[b] = dist[a] + cost;
                    prev[b] = k;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != 0 {
            let k = prev[v];
            push = push.min(edges[k].2);
            v = edges[k].0;
        }
        let mut v = sink;
        while v != 0 {
            let k = prev[v];
            edges[k].2 -= push;
            edges[k ^ 1].2 += push;
            v = edges[k].0;
        }
        total += push * dist[sink];
    }
    total
}

/// Random point on the probability simplex, sometimes with exact zeros.
pub fn random_distribution(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[rng.random_range(0..n)] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    // put any rounding residue on the largest entry so the sum is 1
    let s: f64 = v.iter().sum();
    let k = (0..n).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    v[k] += 1.0 - s;
    v
}

pub fn random_graph(rng: &mut impl Rng, n: usize, kind: GraphKind, density: f64) -> NeighborGraph {
    let rows = (0..n)
        .map(|r| {
            let mut row = Vec::new();
            for c in (0..n).filter(|&c| c != r) {
                if rng.random_bool(density) {
                    row.push((c, rng.random_range(-1.0..1.0)));
                }
            }
            row
        })
        .collect();
    NeighborGraph {
        kind,
        source: CorrelationSource::Ratings,
        rows,
    }
}

/// `Σ_j h_j B^j x` with dense matrix powers.
pub fn dense_nn(h: &[f64], b: &Array2<f64>, x: &Array1<f64>) -> Array1<f64> {
    let n = b.nrows();
    let mut power = Array2::<f64>::eye(n);
    let mut acc = Array2::<f64>::zeros((n, n));
    for &hj in h {
        acc = acc + &power * hj;
        power = power.dot(b);
    }
    acc.dot(x)
}

/// `h_1 F (Σ_{j>=2} h_j N^{j-1}) x` with dense matrix powers.
pub fn dense_fnpc(h: &[f64], f: &Array2<f64>, nb: &Array2<f64>, x: &Array1<f64>) -> Array1<f64> {
    let n = f.nrows();
    let mut inner = Array2::<f64>::zeros((n, n));
    let mut power = nb.clone();
    for &hj in h.iter().skip(2) {
        inner = inner + &power * hj;
        power = power.dot(nb);
    }
    f.dot(&inner).dot(x) * h[1]
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = f(&p);
            p[i] = orig - step;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest relative error between two gradients. Pairs where both entries
/// are below `floor` in magnitude are compared absolutely against `floor`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            if scale < floor {
                (a - n).abs() / floor
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const FD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub enum LayerCase {
    LeakyRelu,
    Linear,
    Softmax,
    Residual,
    Shortcut,
    Attention,
    AttentionDropout,
}

pub const LAYER_CASES: [LayerCase; 7] = [
    LayerCase::LeakyRelu,
    LayerCase::Linear,
    LayerCase::Softmax,
    LayerCase::Residual,
    LayerCase::Shortcut,
    LayerCase::Attention,
    LayerCase::AttentionDropout,
];

fn dense_case(case: LayerCase, rng: &mut polcoord::seed::Rng) -> polcoord::DenseNet {
    use polcoord::nn::{Activation, Dense};
    let mut layer = |i: usize, o: usize, act: Activation, residual: bool| Dense {
        weight: Array2::from_shape_simple_fn((o, i), || rng.random_range(-1.0..1.0)),
        bias: Array1::from_shape_simple_fn(o, || rng.random_range(-0.5..0.5)),
        activation: act,
        residual,
    };
    let net = match case {
        LayerCase::LeakyRelu => polcoord::DenseNet::from_layers(vec![layer(4, 5, Activation::LeakyRelu, false)], None),
        LayerCase::Linear => polcoord::DenseNet::from_layers(vec![layer(4, 3, Activation::Linear, false)], None),
        LayerCase::Softmax => polcoord::DenseNet::from_layers(vec![layer(5, 3, Activation::Softmax, false)], None),
        LayerCase::Residual => polcoord::DenseNet::from_layers(vec![layer(4, 4, Activation::LeakyRelu, true)], None),
        LayerCase::Shortcut => {
            let layers = vec![layer(4, 6, Activation::LeakyRelu, false), layer(6, 3, Activation::Linear, false)];
            let sc = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-1.0..1.0));
            polcoord::DenseNet::from_layers(layers, Some(sc))
        }
        _ => unreachable!("attention handled separately"),
    };
    net.expect("valid test net")
}

/// Worst relative error over `points` random instances of one layer type,
/// covering parameter gradients and, for dense layers, input gradients.
pub fn gradcheck_case(case: LayerCase, points: usize, seed: u64) -> f64 {
    use polcoord::nn::{AttentionPool, AttentionSpec, Parametrized};
    use polcoord::seed::rng_from;
    let mut rng = rng_from(seed);
    let mut worst: f64 = 0.0;
    for point in 0..points {
        match case {
            LayerCase::Attention | LayerCase::AttentionDropout => {
                let dropout = if matches!(case, LayerCase::AttentionDropout) { 0.3 } else { 0.0 };
                let spec = AttentionSpec {
                    token_dim: 3,
                    output_dim: 4,
                    heads: 2,
                    dropout,
                };
                let pool = AttentionPool::<f64>::new(&spec, &mut rng).unwrap();
                let n_tok = rng.random_range(1..5);
                let tokens = Array2::from_shape_simple_fn((n_tok, 3), || rng.random_range(-1.0..1.0));
                let r = Array1::from_shape_simple_fn(4, || rng.random_range(-1.0..1.0));
                let mask_seed = seed ^ (point as u64) << 20;
                let run = |p: &AttentionPool<f64>| {
                    let mut mrng = rng_from(mask_seed);
                    let drop = (dropout > 0.0).then_some(&mut mrng);
                    p.forward_tape(tokens.view(), drop).unwrap()
                };
                let (_, tape) = run(&pool);
                let analytic = pool.backward_tape(&tape, &r).unwrap();
                let numeric = numeric_gradient(&pool.params(), FD_STEP, |q| {
                    let mut p = pool.clone();
                    p.set_params(q).unwrap();
                    run(&p).0.dot(&r)
                });
                worst = worst.max(max_relative_error(&analytic, &numeric, FD_FLOOR));
            }
            _ => {
                let net = dense_case(case, &mut rng);
                let x = Array1::from_shape_simple_fn(net.input_dim(), || rng.random_range(-1.0..1.0));
                let r = Array1::from_shape_simple_fn(net.output_dim(), || rng.random_range(-1.0..1.0));
                let (_, tape) = net.forward_tape(x.view()).unwrap();
                let (g_params, g_input) = net.backward_tape(&tape, r.view()).unwrap();
                let numeric = numeric_gradient(&net.params(), FD_STEP, |q| {
                    let mut n = net.clone();
                    n.set_params(q).unwrap();
                    n.infer(x.view()).unwrap().dot(&r)
                });
                worst = worst.max(max_relative_error(&g_params, &numeric, FD_FLOOR));
                let numeric_x = numeric_gradient(x.as_slice().unwrap(), FD_STEP, |q| {
                    net.infer(Array1::from(q.to_vec()).view()).unwrap().dot(&r)
                });
                worst = worst.max(max_relative_error(g_input.as_slice().unwrap(), &numeric_x, FD_FLOOR));
            }
        }
    }
    worst
}

/// Worst gap between the CDF formula and min-cost transport over `pairs`
/// random 5-point distribution pairs.
pub fn wasserstein_oracle_gap(pairs: usize, seed: u64) -> f64 {
    use polcoord::evaluation::{wasserstein, BiasDistribution};
    let mut rng = polcoord::seed::rng_from(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let u = random_distribution(&mut rng, 5);
        let r = random_distribution(&mut rng, 5);
        let du = BiasDistribution::new(u.clone().try_into().unwrap()).unwrap();
        let dr = BiasDistribution::new(r.clone().try_into().unwrap()).unwrap();
        worst = worst.max((wasserstein(&du, &dr) - min_cost_transport(&u, &r)).abs());
    }
    worst
}

/// Worst gap between sparse and dense filter evaluation over `instances`
/// random graphs of at most 10 users, alternating NN and furthest forms.
pub fn gcf_oracle_gap(instances: usize, seed: u64) -> f64 {
    use polcoord::recommender::{predict_fnpc, predict_nn};
    let mut rng = polcoord::seed::rng_from(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let n = rng.random_range(1..=10);
        let k = rng.random_range(2..=5);
        let h: Vec<f64> = (0..=k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { rng.random::<f64>() } else { 0.0 }).collect();
        let xa = Array1::from(x.clone());
        let nb = random_graph(&mut rng, n, GraphKind::Nearest, 0.5);
        let (sparse, dense) = if i % 2 == 0 {
            (predict_nn(&h, &nb, &x).unwrap(), dense_nn(&h, &nb.to_dense(), &xa))
        } else {
            let f = random_graph(&mut rng, n, GraphKind::Furthest, 0.5);
            (
                predict_fnpc(&h, &f, &nb, &x).unwrap(),
                dense_fnpc(&h, &f.to_dense(), &nb.to_dense(), &xa),
            )
        };
        for (s, d) in sparse.iter().zip(dense.iter()) {
            worst = worst.max((s - d).abs());
        }
    }
    worst
}

/// Outcome of the CPC sanity checks on one fitted pipeline state.
#[derive(Debug)]
pub struct CpcSanity {
    /// Largest own-index coordinate over all landmarks.
    pub landmark_self_max: f64,
    pub asymmetry_max: f64,
    pub diagonal_dev_max: f64,
    /// Rescaling each user's ratings by powers of two reproduced the
    /// embedding bit for bit.
    pub rescale_exact: bool,
    pub users: usize,
}

impl CpcSanity {
    pub fn passed(&self) -> bool {
        self.landmark_self_max == 0.0 && self.asymmetry_max == 0.0 && self.diagonal_dev_max <= 1e-12 && self.rescale_exact
    }
}

pub fn cpc_sanity(
    model: &polcoord::DisentanglerModel,
    corpus: &[polcoord::corpus::ArticleRecord],
    population: &polcoord::population::Population,
    landmarks: &[polcoord::population::Landmark],
) -> CpcSanity {
    use polcoord::cpc::*;
    let ls = build_landmark_set(model, landmarks, corpus).unwrap();
    let landmark_self_max = ls
        .landmarks
        .iter()
        .enumerate()
        .map(|(k, (_, e))| cpc_vector(e, &ls).unwrap().coords[k])
        .fold(0.0, f64::max);
    let table = polarized_table(model, corpus).unwrap();
    let cpcs = population_cpcs(&table, population, &ls).unwrap();
    let corr = cpc_correlation(&cpcs).unwrap();
    let n = corr.nrows();
    let mut asymmetry_max: f64 = 0.0;
    let mut diagonal_dev_max: f64 = 0.0;
    for i in 0..n {
        diagonal_dev_max = diagonal_dev_max.max((corr[(i, i)] - 1.0).abs());
        for j in 0..n {
            asymmetry_max = asymmetry_max.max((corr[(i, j)] - corr[(j, i)]).abs());
        }
    }
    let mut rescale_exact = true;
    for log in &population.logs {
        let base = polarized_embedding_from(&table, log).unwrap();
        for factor in [0.25, 2.0, 1024.0] {
            let mut scaled = log.clone();
            scaled.entries.iter_mut().for_each(|e| e.rating *= factor);
            rescale_exact &= polarized_embedding_from(&table, &scaled).unwrap().w == base.w;
        }
    }
    CpcSanity {
        landmark_self_max,
        asymmetry_max,
        diagonal_dev_max,
        rescale_exact,
        users: n,
    }
}
