//! Central finite-difference checks of the graph's analytic gradients.
//!
//! Each op output is reduced to a scalar by a fixed random projection, so
//! every output element contributes to the checked gradient.

use rand::Rng;
use tsrda_core::model::{mv_channel_attention, AttentionVars, LayerSpec, ModelSpec, Tscnn};
use tsrda_core::rng::StreamRng;
use tsrda_core::tensor::{Graph, Tensor, Var};
use tsrda_core::training::dual_label_loss;
use tsrda_core::Result;

use super::{distinct, off_kink, rng, uniform};

pub type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 20;

/// Finite-difference step (relative to `max(|x|, 1)`) and the denominator
/// floor of the relative error, below which coordinates are effectively
/// compared on an absolute scale.
#[derive(Debug, Clone, Copy)]
pub struct Step {
    pub h: f64,
    pub floor: f64,
}

pub const OP_STEP: Step = Step { h: 1e-5, floor: 1e-6 };
/// At most this many coordinates per instance are perturbed.
const MAX_COORDS: usize = 400;

pub struct OpCase {
    pub name: &'static str,
    pub make: fn(&mut StreamRng) -> (Vec<Tensor>, Build),
}

fn eval(inputs: &[Tensor], build: &Build) -> Tensor {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars).expect("op builds");
    g.value(out).clone()
}

fn project(t: &Tensor, w: &[f64]) -> f64 {
    t.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Largest relative error between analytic and numeric gradients over the
/// checked coordinates of one instance.
pub fn max_rel_error(inputs: &[Tensor], build: &Build, r: &mut StreamRng, step: Step) -> f64 {
    let out_shape = eval(inputs, build).shape().to_vec();
    let w = uniform(r, &out_shape, -1.0, 1.0);

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars).expect("op builds");
    let wv = g.constant(w.clone());
    let prod = g.mul(out, wv).expect("same shape");
    let loss = g.sum(prod);
    g.backward(loss).expect("scalar loss");
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).expect("leaf grad").to_vec()).collect();

    let total: usize = inputs.iter().map(Tensor::numel).sum();
    let coords: Vec<(usize, usize)> = {
        let all: Vec<(usize, usize)> = inputs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
            .collect();
        if total <= MAX_COORDS {
            all
        } else {
            (0..MAX_COORDS).map(|_| all[r.gen_range(0..total)]).collect()
        }
    };

    let mut worst = 0.0_f64;
    let mut xs = inputs.to_vec();
    for (i, j) in coords {
        let x0 = xs[i].data()[j];
        let h = step.h * x0.abs().max(1.0);
        xs[i].data_mut()[j] = x0 + h;
        let up = project(&eval(&xs, build), w.data());
        xs[i].data_mut()[j] = x0 - h;
        let down = project(&eval(&xs, build), w.data());
        xs[i].data_mut()[j] = x0;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i][j];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(step.floor);
        worst = worst.max(err);
    }
    worst
}

/// Worst error over `instances` random instances of `case`.
pub fn check(case: &OpCase, instances: usize) -> f64 {
    (0..instances as u64)
        .map(|k| {
            let mut r = rng(k * 7919 + case.name.len() as u64);
            let (inputs, build) = (case.make)(&mut r);
            max_rel_error(&inputs, &build, &mut r, OP_STEP)
        })
        .fold(0.0, f64::max)
}

fn labels(r: &mut StreamRng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| r.gen_range(0..k)).collect()
}

pub fn cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "conv2d",
            make: |r| {
                let (n, c, cout) = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..4));
                let (kh, kw) = (r.gen_range(1..4), r.gen_range(1..4));
                let stride = (r.gen_range(1..3), r.gen_range(1..3));
                let padding = (r.gen_range(0..kh), r.gen_range(0..kw));
                let (h, w) = (r.gen_range(kh..kh + 4), r.gen_range(kw..kw + 5));
                let inputs = vec![
                    uniform(r, &[n, c, h, w], -1.0, 1.0),
                    uniform(r, &[cout, c, kh, kw], -1.0, 1.0),
                    uniform(r, &[cout], -1.0, 1.0),
                ];
                (inputs, Box::new(move |g, v| g.conv2d(v[0], v[1], v[2], stride, padding)))
            },
        },
        OpCase {
            name: "conv1d",
            make: |r| {
                let (n, c) = (r.gen_range(1..4), r.gen_range(1..9));
                let inputs = vec![
                    uniform(r, &[n, c], -1.0, 1.0),
                    uniform(r, &[3], -1.0, 1.0),
                    uniform(r, &[1], -1.0, 1.0),
                ];
                (inputs, Box::new(|g, v| g.conv1d(v[0], v[1], v[2])))
            },
        },
        OpCase {
            name: "linear",
            make: |r| {
                let (n, d, k) = (r.gen_range(1..4), r.gen_range(1..7), r.gen_range(1..5));
                let inputs = vec![
                    uniform(r, &[n, d], -1.0, 1.0),
                    uniform(r, &[k, d], -1.0, 1.0),
                    uniform(r, &[k], -1.0, 1.0),
                ];
                (inputs, Box::new(|g, v| g.linear(v[0], v[1], v[2])))
            },
        },
        OpCase {
            name: "maxpool2d",
            make: |r| {
                let kernel = (r.gen_range(1..3), r.gen_range(1..4));
                let stride = (r.gen_range(1..3), r.gen_range(1..4));
                let (h, w) = (r.gen_range(kernel.0..kernel.0 + 3), r.gen_range(kernel.1..kernel.1 + 5));
                let shape = [r.gen_range(1..3), r.gen_range(1..3), h, w];
                let inputs = vec![distinct(r, &shape)];
                (inputs, Box::new(move |g, v| g.maxpool2d(v[0], kernel, stride)))
            },
        },
        OpCase {
            name: "global_avg_pool",
            make: |r| {
                let shape = [2, 3, r.gen_range(1..4), r.gen_range(1..5)];
                let inputs = vec![uniform(r, &shape, -1.0, 1.0)];
                (inputs, Box::new(|g, v| g.global_avg_pool(v[0])))
            },
        },
        OpCase {
            name: "global_max_pool",
            make: |r| {
                let shape = [2, 3, r.gen_range(1..4), r.gen_range(1..5)];
                let inputs = vec![distinct(r, &shape)];
                (inputs, Box::new(|g, v| g.global_max_pool(v[0])))
            },
        },
        OpCase {
            name: "relu",
            make: |r| {
                let shape = [r.gen_range(1..4), r.gen_range(1..6)];
                let inputs = vec![off_kink(r, &shape)];
                (inputs, Box::new(|g, v| Ok(g.relu(v[0]))))
            },
        },
        OpCase {
            name: "sigmoid",
            make: |r| {
                let shape = [r.gen_range(1..4), r.gen_range(1..6)];
                let inputs = vec![uniform(r, &shape, -4.0, 4.0)];
                (inputs, Box::new(|g, v| Ok(g.sigmoid(v[0]))))
            },
        },
        OpCase {
            name: "softmax_cross_entropy",
            make: |r| {
                let (n, k) = (r.gen_range(1..5), r.gen_range(2..5));
                let y = labels(r, n, k);
                let inputs = vec![uniform(r, &[n, k], -3.0, 3.0)];
                (inputs, Box::new(move |g, v| g.softmax_cross_entropy(v[0], &y)))
            },
        },
        OpCase {
            name: "weighted_cross_entropy",
            make: |r| {
                let (n, k) = (r.gen_range(1..5), r.gen_range(2..5));
                let y = labels(r, n, k);
                let wts: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
                let inputs = vec![uniform(r, &[n, k], -3.0, 3.0)];
                (inputs, Box::new(move |g, v| g.weighted_cross_entropy(v[0], &y, &wts)))
            },
        },
        OpCase {
            name: "channel_scale",
            make: |r| {
                let (n, c) = (r.gen_range(1..3), r.gen_range(1..4));
                let inputs = vec![
                    uniform(r, &[n, c, 2, 3], -1.0, 1.0),
                    uniform(r, &[n, c], -1.0, 1.0),
                ];
                (inputs, Box::new(|g, v| g.channel_scale(v[0], v[1])))
            },
        },
        OpCase {
            name: "add_mul",
            make: |r| {
                let shape = [r.gen_range(1..4), r.gen_range(1..5)];
                let inputs = vec![uniform(r, &shape, -1.0, 1.0), uniform(r, &shape, -1.0, 1.0)];
                (
                    inputs,
                    Box::new(|g, v| {
                        let s = g.add(v[0], v[1])?;
                        g.mul(s, v[1])
                    }),
                )
            },
        },
        OpCase {
            name: "mv_channel_attention",
            make: |r| {
                let shape = [r.gen_range(1..3), r.gen_range(1..7), r.gen_range(1..3), r.gen_range(1..4)];
                let inputs = vec![
                    distinct(r, &shape),
                    uniform(r, &[3], -1.0, 1.0),
                    uniform(r, &[1], -1.0, 1.0),
                    uniform(r, &[3], -1.0, 1.0),
                    uniform(r, &[1], -1.0, 1.0),
                ];
                (
                    inputs,
                    Box::new(|g, v| {
                        let p = AttentionVars {
                            avg_weight: v[1],
                            avg_bias: v[2],
                            max_weight: v[3],
                            max_bias: v[4],
                        };
                        mv_channel_attention(g, v[0], &p)
                    }),
                )
            },
        },
        OpCase {
            name: "dual_label_loss",
            make: |r| {
                let (n, k) = (r.gen_range(1..6), 4);
                let (x, y) = (labels(r, n, k), labels(r, n, k));
                let ratios: Vec<f64> = (0..n)
                    .map(|_| match r.gen_range(0..4) {
                        0 => 0.0,
                        1 => 1.0,
                        _ => r.gen_range(0.0..1.0),
                    })
                    .collect();
                let inputs = vec![uniform(r, &[n, k], -3.0, 3.0)];
                (inputs, Box::new(move |g, v| dual_label_loss(g, v[0], &x, &y, &ratios)))
            },
        },
    ]
}

/// Gradient of the full network's logits with respect to its parameters, at
/// a narrow width. ReLUs are switched off: a bias shifts thousands of
/// activations at once and some of them always straddle the kink. The
/// max-pool selections stay, so the step is smaller than for single ops,
/// and the floor is raised to keep roundoff on the smallest gradients out
/// of the relative error.
pub fn network_case(seed: u64) -> f64 {
    let mut r = rng(10_000 + seed);
    let mut spec = ModelSpec::default().with_width(0.0625);
    for layer in &mut spec.layers {
        if let LayerSpec::Conv { relu, .. } = layer {
            *relu = false;
        }
    }
    let model = Tscnn::build(&spec, seed).unwrap();
    let batch = uniform(&mut r, &[2, 1, 21, 256], -1.0, 1.0);
    let n_params = model.params().len();
    let build: Build = Box::new(move |g, v| {
        let x = g.constant(batch.clone());
        model.forward(g, x, &v[..n_params])
    });
    let params = Tscnn::build(&spec, seed).unwrap().params().to_vec();
    max_rel_error(&params, &build, &mut r, Step { h: 1e-6, floor: 1e-4 })
}
