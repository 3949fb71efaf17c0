//! Central finite-difference gradient checking.
//!
//! The output of the function under test is projected onto a fixed random
//! direction `r`, giving the scalar `L = Σ r_i·y_i`. The analytic gradient of
//! `L` comes from [`Graph::backward`]; the numeric one from
//! `(L(x + ε) − L(x − ε)) / 2ε`, with `L` summed in `f64` from the `f32` outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f32,
    /// Lower bound on the relative-error denominator. Rounding of `f32`
    /// outputs puts the finite difference itself within a few `1e-4` of the
    /// true slope, so smaller gradients are compared absolutely.
    pub floor: f64,
    pub seed: u64,
    /// When set, coordinates whose one-sided slopes differ by more than this
    /// relative amount straddle a kink (relu, max) and are skipped.
    pub kink_tolerance: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            floor: 0.5,
            seed: 0,
            kink_tolerance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    /// `(input, flat index, analytic, numeric)` of the largest error.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn projected(build: &impl Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>, inputs: &[Tensor], r: &[f32]) -> Result<f64, TensorError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let y = build(&mut g, &vars)?;
    Ok(g.value(y).data().iter().zip(r).map(|(&y, &r)| y as f64 * r as f64).sum())
}

/// Checks every element of every input of `build`.
pub fn check(
    inputs: &[Tensor],
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, TensorError> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = build(&mut g, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let r = Tensor::from_fn(g.value(y).shape(), |_| rng.gen_range(-1.0f32..1.0));
    let rv = g.constant(r.clone());
    let weighted = g.mul(y, rv)?;
    let loss = g.sum(weighted)?;
    let grads = g.backward(loss)?;

    let eps = config.epsilon;
    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let center = match config.kink_tolerance {
        Some(_) => projected(&build, inputs, r.data())?,
        None => 0.0,
    };
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("inputs are parameters");
        for i in 0..inputs[k].len() {
            let x = inputs[k].data()[i];
            probe[k].data_mut()[i] = x + eps;
            let plus = projected(&build, &probe, r.data())?;
            probe[k].data_mut()[i] = x - eps;
            let minus = projected(&build, &probe, r.data())?;
            probe[k].data_mut()[i] = x;
            // The perturbation actually applied, after f32 rounding.
            let step = (x + eps) as f64 - (x - eps) as f64;
            let numeric = (plus - minus) / step;
            if let Some(tol) = config.kink_tolerance {
                let right = (plus - center) / ((x + eps) as f64 - x as f64);
                let left = (center - minus) / (x as f64 - (x - eps) as f64);
                if relative_error(right, left, config.floor) > tol {
                    report.skipped += 1;
                    continue;
                }
            }
            let a = analytic.data()[i] as f64;
            let err = relative_error(a, numeric, config.floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((k, i, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Random well-conditioned cases for every differentiable primitive: inputs
/// keep clear of relu's kink, pooling windows hold distinct values, and
/// probabilities stay inside the loss clamp.
pub mod suite {
    use super::*;
    use crate::autograd::Activation;

    pub const LAYERS: [&str; 15] = [
        "conv2d",
        "conv2d_asym",
        "maxpool2d",
        "global_maxpool",
        "dense",
        "relu",
        "sigmoid",
        "softmax",
        "concat_channels",
        "flatten",
        "mul",
        "sum",
        "mean",
        "binary_cross_entropy",
        "categorical_cross_entropy",
    ];

    fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    /// Shuffled values spaced 0.05 apart, so no ε-perturbation reorders them.
    fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        use rand::seq::SliceRandom;
        let n: usize = shape.iter().product();
        let mut v: Vec<f32> = (0..n).map(|i| i as f32 * 0.05 - n as f32 * 0.025).collect();
        v.shuffle(rng);
        Tensor::new(shape.to_vec(), v).expect("sized")
    }

    fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| {
            let m = rng.gen_range(0.05f32..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
    }

    /// Runs `cases` random configurations of `layer`, returning one report each.
    pub fn run(layer: &str, cases: usize, seed: u64, config: &GradCheckConfig) -> Result<Vec<GradCheckReport>, TensorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..cases)
            .map(|case| {
                let cfg = GradCheckConfig {
                    seed: seed ^ (case as u64 + 1),
                    ..*config
                };
                run_case(layer, &mut rng, &cfg)
            })
            .collect()
    }

    fn run_case(layer: &str, rng: &mut ChaCha8Rng, cfg: &GradCheckConfig) -> Result<GradCheckReport, TensorError> {
        let n = rng.gen_range(1..=2);
        match layer {
            "conv2d" | "conv2d_asym" => {
                let c = rng.gen_range(1..=3);
                let f = rng.gen_range(1..=3);
                let (h, w) = (rng.gen_range(3..=6), rng.gen_range(3..=6));
                let (kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
                let stride = rng.gen_range(1..=2);
                let (ph, pw) = if layer == "conv2d" {
                    let p = rng.gen_range(0..=1);
                    (p, p)
                } else {
                    (rng.gen_range(0..=2), rng.gen_range(0..=2))
                };
                let inputs = [
                    uniform(rng, &[n, c, h, w], -1.0, 1.0),
                    uniform(rng, &[f, c, kh, kw], -1.0, 1.0),
                    uniform(rng, &[f], -0.5, 0.5),
                ];
                check(&inputs, |g, v| g.conv2d_asym(v[0], v[1], v[2], stride, ph, pw), cfg)
            }
            "maxpool2d" => {
                let c = rng.gen_range(1..=3);
                let window = rng.gen_range(1..=3);
                let stride = rng.gen_range(1..=2);
                let padding = rng.gen_range(0..window);
                let (h, w) = (rng.gen_range(window..=6), rng.gen_range(window..=6));
                let x = distinct(rng, &[n, c, h, w]);
                check(&[x], |g, v| g.maxpool2d_padded(v[0], window, stride, padding), cfg)
            }
            "global_maxpool" => {
                let shape = [n, rng.gen_range(1..=4), rng.gen_range(1..=5), rng.gen_range(1..=5)];
                check(&[distinct(rng, &shape)], |g, v| g.global_maxpool(v[0]), cfg)
            }
            "dense" => {
                let (rows, d, k) = (rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=5));
                let inputs = [
                    uniform(rng, &[rows, d], -1.0, 1.0),
                    uniform(rng, &[d, k], -1.0, 1.0),
                    uniform(rng, &[k], -0.5, 0.5),
                ];
                check(&inputs, |g, v| g.dense(v[0], v[1], v[2]), cfg)
            }
            "relu" => {
                let shape = [n, rng.gen_range(1..=3), 3, 3];
                let x = away_from_zero(rng, &shape);
                check(&[x], |g, v| g.relu(v[0]), cfg)
            }
            "sigmoid" => {
                let shape = [n, rng.gen_range(1..=8)];
                let x = uniform(rng, &shape, -4.0, 4.0);
                check(&[x], |g, v| g.activate(v[0], Activation::Sigmoid), cfg)
            }
            "softmax" => {
                let shape = [rng.gen_range(1..=4), rng.gen_range(2..=5)];
                let x = uniform(rng, &shape, -3.0, 3.0);
                check(&[x], |g, v| g.activate(v[0], Activation::Softmax), cfg)
            }
            "concat_channels" => {
                let (h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
                let parts: Vec<Tensor> = (0..rng.gen_range(2..=3))
                    .map(|_| {
                        let shape = [n, rng.gen_range(1..=3), h, w];
                        uniform(rng, &shape, -1.0, 1.0)
                    })
                    .collect();
                check(&parts, |g, v| g.concat_channels(v), cfg)
            }
            "flatten" => {
                let shape = [n, rng.gen_range(1..=3), rng.gen_range(1..=3), 2];
                let x = uniform(rng, &shape, -1.0, 1.0);
                check(&[x], |g, v| g.flatten(v[0]), cfg)
            }
            "mul" => {
                let shape = [n, rng.gen_range(1..=6)];
                let inputs = [uniform(rng, &shape, -2.0, 2.0), uniform(rng, &shape, -2.0, 2.0)];
                check(&inputs, |g, v| g.mul(v[0], v[1]), cfg)
            }
            "sum" | "mean" => {
                let shape = [n, rng.gen_range(1..=10)];
                let x = uniform(rng, &shape, -2.0, 2.0);
                let mean = layer == "mean";
                check(&[x], |g, v| if mean { g.mean(v[0]) } else { g.sum(v[0]) }, cfg)
            }
            "binary_cross_entropy" => {
                let rows = rng.gen_range(1..=8);
                let labels: Vec<f32> = (0..rows).map(|_| rng.gen_range(0..=1) as f32).collect();
                let s = uniform(rng, &[rows], 0.05, 0.95);
                check(&[s], |g, v| g.binary_cross_entropy(v[0], &labels), cfg)
            }
            "categorical_cross_entropy" => {
                let (rows, k) = (rng.gen_range(1..=5), rng.gen_range(2..=4));
                let labels: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..k)).collect();
                let logits = uniform(rng, &[rows, k], -2.0, 2.0);
                check(
                    &[logits],
                    |g, v| {
                        let p = g.activate(v[0], Activation::Softmax)?;
                        g.categorical_cross_entropy(p, &labels)
                    },
                    cfg,
                )
            }
            other => panic!("unknown layer {other}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let square = check(&[x.clone()], |g, v| g.mul(v[0], v[0]), &GradCheckConfig::default()).unwrap();
        assert!(square.passed(1e-3), "{square:?}");
        assert_eq!(square.checked, 3);

        let c = Tensor::new(vec![3], vec![1.5, 0.25, -3.0]).unwrap();
        let both = check(&[x, c], |g, v| g.mul(v[0], v[1]), &GradCheckConfig::default()).unwrap();
        assert!(both.passed(1e-3), "{both:?}");
        assert_eq!(both.checked, 6);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-2), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-2) - 0.1 / 1.1).abs() < 1e-15);
        assert_eq!(relative_error(0.0, 1e-3, 0.5), 2e-3);
    }
}
