//! Helpers shared by the integration and acceptance targets: independent
//! reference implementations and small fixtures.
#![allow(dead_code)]

use fedmas::client::{batch_objective, forward_all, ClientModel, ModelShape};
use fedmas::config::{ExperimentConfig, Method};
use fedmas::gradcheck::{check_gradient, relu_pattern, GradCheckReport};
use fedmas::numerics::{random_normal, Tensor};
use fedmas::rng::{client_round_seed, rng_from_seed};
use fedmas::runner::ExperimentSetup;
use rand::seq::SliceRandom;
use rand::Rng as _;

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub enum Objective {
    /// Balanced-softmax cross-entropy alone.
    Supervised,
    /// Distillation through the normalization, alone.
    Distill,
    /// Supervised plus `λ·distill`.
    Combined(f64),
}

pub struct GradFixture {
    pub model: ClientModel,
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub targets: Tensor,
    pub counts: Vec<usize>,
}

pub fn grad_fixture(seed: u64) -> GradFixture {
    let mut rng = rng_from_seed(seed);
    let shape = ModelShape {
        feature_dim: 5,
        hidden_width: 7,
        num_classes: 4,
        embed_dim: 6,
    };
    let base = ClientModel::init(shape, &mut rng).unwrap();
    // Jitter every coordinate so biases are nonzero too.
    let jittered: Vec<f64> = base
        .to_vector()
        .iter()
        .map(|v| v + 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let model = base.from_vector(&jittered).unwrap();
    let b = 6;
    let x = random_normal(b, 5, &mut rng);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..4)).collect();
    let counts: Vec<usize> = (0..4).map(|_| rng.random_range(1..200)).collect();
    let mut targets = random_normal(b, 6, &mut rng);
    for r in 0..b {
        let n = targets.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        targets.row_mut(r).iter_mut().for_each(|v| *v /= n);
    }
    GradFixture {
        model,
        x,
        labels,
        targets,
        counts,
    }
}

fn objective_value(f: &GradFixture, model: &ClientModel, objective: Objective) -> f64 {
    let lambda = match objective {
        Objective::Combined(l) => l,
        _ => 0.0,
    };
    let o = batch_objective(model, &f.x, &f.labels, &f.targets, &f.counts, lambda, false).unwrap();
    match objective {
        Objective::Supervised => o.sup,
        Objective::Distill => o.distill,
        Objective::Combined(_) => o.total,
    }
}

fn analytic_gradient(f: &GradFixture, objective: Objective) -> Vec<f64> {
    let grad = |lambda: f64| {
        batch_objective(
            &f.model, &f.x, &f.labels, &f.targets, &f.counts, lambda, true,
        )
        .unwrap()
        .grads
        .unwrap()
        .to_vector()
    };
    match objective {
        Objective::Supervised => grad(0.0),
        // The objective is affine in λ, so the λ=1 and λ=0 gradients differ by ∇distill.
        Objective::Distill => grad(1.0)
            .iter()
            .zip(grad(0.0))
            .map(|(a, b)| a - b)
            .collect(),
        Objective::Combined(l) => grad(l),
    }
}

/// Finite-difference check of every parameter coordinate for one seed.
pub fn gradcheck_seed(seed: u64, objective: Objective) -> GradCheckReport {
    let f = grad_fixture(seed);
    let params = f.model.to_vector();
    let analytic = analytic_gradient(&f, objective);
    let coords: Vec<usize> = (0..params.len()).collect();
    check_gradient(
        &params,
        &analytic,
        &coords,
        GRAD_STEP,
        |p| objective_value(&f, &f.model.from_vector(p).unwrap(), objective),
        |p| {
            let m = f.model.from_vector(p).unwrap();
            let cache = forward_all(&m, &f.x).unwrap();
            let mut pattern = relu_pattern(&m.encoder, &cache.encoder);
            pattern.extend(relu_pattern(&m.projector, &cache.projector));
            pattern
        },
    )
}

/// Dense layer stored as in the flat parameter vector: `in×out` row-major
/// weights followed by `out` biases.
#[derive(Clone)]
struct RefLayer {
    n_in: usize,
    n_out: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    relu: bool,
}

fn take_layers(flat: &[f64], dims: &[(usize, usize, bool)]) -> (Vec<RefLayer>, usize) {
    let mut at = 0;
    let mut layers = Vec::new();
    for &(n_in, n_out, relu) in dims {
        let w = flat[at..at + n_in * n_out].to_vec();
        at += n_in * n_out;
        let b = flat[at..at + n_out].to_vec();
        at += n_out;
        layers.push(RefLayer {
            n_in,
            n_out,
            w,
            b,
            relu,
        });
    }
    (layers, at)
}

fn put_layers(layers: &[RefLayer], out: &mut Vec<f64>) {
    for l in layers {
        out.extend_from_slice(&l.w);
        out.extend_from_slice(&l.b);
    }
}

/// Plain-loop forward pass of one sample; returns every layer's output.
fn ref_forward(layers: &[RefLayer], x: &[f64]) -> Vec<Vec<f64>> {
    let mut outs = vec![x.to_vec()];
    for l in layers {
        let input = outs.last().unwrap();
        let mut y = l.b.clone();
        for j in 0..l.n_out {
            for i in 0..l.n_in {
                y[j] += input[i] * l.w[i * l.n_out + j];
            }
            if l.relu && y[j] <= 0.0 {
                y[j] = 0.0;
            }
        }
        outs.push(y);
    }
    outs
}

/// Accumulates one sample's gradient into `gw`/`gb`; returns the input gradient.
fn ref_backward(
    layers: &[RefLayer],
    outs: &[Vec<f64>],
    mut g: Vec<f64>,
    gw: &mut [Vec<f64>],
    gb: &mut [Vec<f64>],
) -> Vec<f64> {
    for (li, l) in layers.iter().enumerate().rev() {
        if l.relu {
            for j in 0..l.n_out {
                if outs[li + 1][j] <= 0.0 {
                    g[j] = 0.0;
                }
            }
        }
        let input = &outs[li];
        let mut g_in = vec![0.0; l.n_in];
        for i in 0..l.n_in {
            for j in 0..l.n_out {
                gw[li][i * l.n_out + j] += input[i] * g[j];
                g_in[i] += l.w[i * l.n_out + j] * g[j];
            }
        }
        for j in 0..l.n_out {
            gb[li][j] += g[j];
        }
        g = g_in;
    }
    g
}

/// Straight-line FedAvg without the distillation term: same data, initial
/// parameters, seeds and shuffles as the simulator, everything else coded
/// from scratch. Returns the final flat parameter vector.
pub fn fedavg_reference(
    config: &ExperimentConfig,
    setup: &ExperimentSetup,
    initial: &[f64],
) -> Vec<f64> {
    assert_eq!(config.method, Method::FedAvg);
    let d = setup.train.feature_dim();
    let h = config.hidden_width;
    let k = setup.train.num_classes();
    let e = setup.prior.embed_dim();
    let trunk_dims = [(d, h, true), (h, h, true)];
    let head_dims = [(h, k, false)];
    let proj_len = h * h + h + h * e + e;

    let clients: Vec<(Vec<Vec<f64>>, Vec<usize>)> = setup
        .partition
        .assignments()
        .iter()
        .map(|idx| {
            let x = idx
                .iter()
                .map(|&i| setup.train.features().row(i).to_vec())
                .collect();
            let y = idx.iter().map(|&i| setup.train.labels()[i]).collect();
            (x, y)
        })
        .collect();
    let total: usize = clients.iter().map(|c| c.1.len()).sum();

    let mut global = initial.to_vec();
    for round in 0..config.rounds {
        let progress = round as f64 / config.rounds as f64;
        let lr = config.lr_min
            + 0.5
                * (config.lr_max - config.lr_min)
                * (1.0 + (std::f64::consts::PI * progress).cos());
        let mut next = vec![0.0; global.len()];
        for (c, (xs, ys)) in clients.iter().enumerate() {
            let (mut trunk, used) = take_layers(&global, &trunk_dims);
            let (mut head, used2) = take_layers(&global[used..], &head_dims);
            let projector = global[used + used2..].to_vec();
            assert_eq!(projector.len(), proj_len);

            let mut m = vec![0usize; k];
            ys.iter().for_each(|&y| m[y] += 1);
            let mut rng = rng_from_seed(client_round_seed(setup.seeds.train, round, c));
            let mut order: Vec<usize> = (0..ys.len()).collect();
            for _ in 0..config.local_epochs {
                order.shuffle(&mut rng);
                for batch in order.chunks(config.batch_size) {
                    let mut gw_t: Vec<Vec<f64>> =
                        trunk.iter().map(|l| vec![0.0; l.w.len()]).collect();
                    let mut gb_t: Vec<Vec<f64>> =
                        trunk.iter().map(|l| vec![0.0; l.b.len()]).collect();
                    let mut gw_h: Vec<Vec<f64>> =
                        head.iter().map(|l| vec![0.0; l.w.len()]).collect();
                    let mut gb_h: Vec<Vec<f64>> =
                        head.iter().map(|l| vec![0.0; l.b.len()]).collect();
                    let inv_b = 1.0 / batch.len() as f64;
                    for &s in batch {
                        let t_out = ref_forward(&trunk, &xs[s]);
                        let h_out = ref_forward(&head, t_out.last().unwrap());
                        let z = h_out.last().unwrap();
                        // softmax(z + log M); absent classes have zero probability
                        let shifted: Vec<f64> = (0..k)
                            .map(|j| {
                                if m[j] > 0 {
                                    z[j] + (m[j] as f64).ln()
                                } else {
                                    f64::NEG_INFINITY
                                }
                            })
                            .collect();
                        let mx = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let ex: Vec<f64> = shifted.iter().map(|v| (v - mx).exp()).collect();
                        let sum: f64 = ex.iter().sum();
                        let mut g: Vec<f64> = ex.iter().map(|v| v / sum * inv_b).collect();
                        g[ys[s]] -= inv_b;
                        let g_feat = ref_backward(&head, &h_out, g, &mut gw_h, &mut gb_h);
                        ref_backward(&trunk, &t_out, g_feat, &mut gw_t, &mut gb_t);
                    }
                    for (l, (gw, gb)) in trunk.iter_mut().zip(gw_t.iter().zip(&gb_t)) {
                        l.w.iter_mut().zip(gw).for_each(|(w, g)| *w -= lr * g);
                        l.b.iter_mut().zip(gb).for_each(|(b, g)| *b -= lr * g);
                    }
                    for (l, (gw, gb)) in head.iter_mut().zip(gw_h.iter().zip(&gb_h)) {
                        l.w.iter_mut().zip(gw).for_each(|(w, g)| *w -= lr * g);
                        l.b.iter_mut().zip(gb).for_each(|(b, g)| *b -= lr * g);
                    }
                }
            }
            let mut local = Vec::with_capacity(global.len());
            put_layers(&trunk, &mut local);
            put_layers(&head, &mut local);
            local.extend_from_slice(&projector);
            let weight = ys.len() as f64 / total as f64;
            next.iter_mut()
                .zip(&local)
                .for_each(|(n, v)| *n += weight * v);
        }
        global = next;
    }
    global
}

/// Configuration for the FedAvg equivalence checks: K=4, C=3, R=5.
pub fn oracle_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.method = Method::FedAvg;
    c.lambda_f = 0.0;
    c.classes = 4;
    c.clients = 3;
    c.rounds = 5;
    c.local_epochs = 2;
    c.batch_size = 16;
    c.n_max = 120;
    c.imbalance_ratio = 10.0;
    c.feature_dim = 6;
    c.hidden_width = 8;
    c.embed_dim = 5;
    c.seed = seed;
    c
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
