//! Numerical self-test: finite-difference and oracle checks over the SVD,
//! nuclear norm, OLE loss, network layers and AUROC.

use std::fmt;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::eval;
use crate::linalg::{self, Matrix};
use crate::nn::{LayerSpec, Network, Shape3, Tensor4};
use crate::ole::{self, LabeledLatentBatch, OleConfig};
use crate::rng::{self, Rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    /// Worst observed error.
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        CheckOutcome {
            name: name.into(),
            error,
            tolerance,
            passed: error <= tolerance,
        }
    }

    fn failed(name: impl Into<String>, why: &crate::Error) -> Self {
        let _ = why;
        CheckOutcome {
            name: name.into(),
            error: f64::INFINITY,
            tolerance: 0.0,
            passed: false,
        }
    }

    /// `tolerance − error`; negative when the check fails.
    pub fn margin(&self) -> f64 {
        self.tolerance - self.error
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} error {:>10.3e}  tolerance {:>8.1e}  margin {:>10.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.error,
            self.tolerance,
            self.margin()
        )
    }
}

pub type OleGradFn = fn(&LabeledLatentBatch, &OleConfig) -> Result<Matrix>;

/// Implementations under test; replaceable to exercise the harness itself.
#[derive(Clone, Copy)]
pub struct CheckHooks {
    pub ole_grad: OleGradFn,
}

impl Default for CheckHooks {
    fn default() -> Self {
        CheckHooks {
            ole_grad: ole::ole_grad,
        }
    }
}

pub fn run_checks(seed: u64) -> Vec<CheckOutcome> {
    run_checks_with(seed, CheckHooks::default())
}

pub fn run_checks_with(seed: u64, hooks: CheckHooks) -> Vec<CheckOutcome> {
    let mut rng = rng::stream(seed, Stream::Check, 0);
    let mut out = vec![
        wrap("svd_reconstruction", 1e-8, || svd_reconstruction(&mut rng)),
        wrap("nuclear_norm_invariants", 1e-8, || {
            nuclear_norm_invariants(&mut rng)
        }),
        wrap("nuclear_subgradient_fd", 1e-4, || {
            nuclear_subgradient_fd(&mut rng)
        }),
        wrap("ole_fixtures", 1e-8, ole_fixtures),
        wrap("ole_grad_fd", 1e-4, || {
            ole_grad_fd(&mut rng, hooks.ole_grad, 100)
        }),
    ];
    for (name, net) in micro_networks() {
        let mut net = net;
        out.push(wrap(format!("nn_grad_fd:{name}"), 1e-3, || {
            network_gradient_error(&mut net, &mut rng)
        }));
    }
    out.push(CheckOutcome::new(
        "auroc_oracle",
        auroc_oracle(&mut rng),
        0.0,
    ));
    out
}

fn wrap(name: impl Into<String>, tol: f64, f: impl FnOnce() -> Result<f64>) -> CheckOutcome {
    let name = name.into();
    match f() {
        Ok(err) => CheckOutcome::new(name, err, tol),
        Err(e) => CheckOutcome::failed(name, &e),
    }
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `I − 2vvᵀ/‖v‖²` for a random `v`.
pub fn random_householder(rng: &mut Rng, n: usize) -> Matrix {
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let nn: f64 = v.iter().map(|x| x * x).sum();
    Matrix::from_fn(
        n,
        n,
        |i, j| if i == j { 1.0 } else { 0.0 } - 2.0 * v[i] * v[j] / nn,
    )
}

fn svd_reconstruction(rng: &mut Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (r, c) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let a = gaussian_matrix(rng, r, c);
        let svd = linalg::svd(&a)?;
        let rel = svd.reconstruct().sub(&a)?.frobenius_norm() / a.frobenius_norm();
        let k = svd.singular_values.len();
        let ou = svd
            .u
            .transpose()
            .matmul(&svd.u)?
            .max_abs_diff(&Matrix::identity(k));
        let ov = svd
            .v
            .transpose()
            .matmul(&svd.v)?
            .max_abs_diff(&Matrix::identity(k));
        worst = worst.max(rel).max(ou).max(ov);
    }
    Ok(worst)
}

fn nuclear_norm_invariants(rng: &mut Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (r, c) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let a = gaussian_matrix(rng, r, c);
        let na = linalg::nuclear_norm(&a)?;
        let q = random_householder(rng, r);
        worst = worst.max((linalg::nuclear_norm(&q.matmul(&a)?)? - na).abs());
        let extra = rng.random_range(1..=6);
        let b = gaussian_matrix(rng, r, extra);
        let joint = linalg::nuclear_norm(&a.hstack(&b)?)?;
        worst = worst.max(joint - na - linalg::nuclear_norm(&b)?);
        let g = linalg::nuclear_norm_subgradient(&a, 1e-6)?;
        worst = worst.max(linalg::spectral_norm(&g)? - 1.0);
    }
    Ok(worst.max(0.0))
}

fn nuclear_subgradient_fd(rng: &mut Rng) -> Result<f64> {
    let a = gaussian_matrix(rng, 4, 3);
    let g = linalg::nuclear_norm_subgradient(&a, 1e-6)?;
    let fd = finite_difference(&a, 1e-6, linalg::nuclear_norm)?;
    Ok(g.max_abs_diff(&fd))
}

/// Central differences of `f` at `a`, entry by entry.
pub fn finite_difference(a: &Matrix, h: f64, f: impl Fn(&Matrix) -> Result<f64>) -> Result<Matrix> {
    let mut out = Matrix::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            let mut p = a.clone();
            p[(i, j)] += h;
            let mut m = a.clone();
            m[(i, j)] -= h;
            out[(i, j)] = (f(&p)? - f(&m)?) / (2.0 * h);
        }
    }
    Ok(out)
}

fn ole_fixtures() -> Result<f64> {
    let exact = OleConfig {
        delta_margin: 0.0,
        sv_threshold: 1e-6,
    };
    let e = |i: usize| -> Vec<f64> { (0..4).map(|k| if k == i { 1.0 } else { 0.0 }).collect() };
    let orth = LabeledLatentBatch::new(
        Matrix::from_columns(&[e(0), e(1), e(2), e(3)])?,
        vec![0, 0, 1, 1],
        2,
    )?;
    let mut worst = ole::ole_loss(&orth, &exact)?.abs();
    let u = vec![0.5, 0.5, 0.5, 0.5];
    let same = LabeledLatentBatch::new(Matrix::from_columns(&[u.clone(), u])?, vec![0, 1], 2)?;
    worst = worst.max((ole::ole_loss(&same, &exact)? - (2.0 - 2f64.sqrt())).abs());
    let zero = LabeledLatentBatch::new(Matrix::zeros(4, 6), vec![0, 1, 2, 2, 1, 0], 3)?;
    let margin = OleConfig {
        delta_margin: 1.0,
        sv_threshold: 1e-3,
    };
    worst = worst.max((ole::ole_loss(&zero, &margin)? - 3.0).abs());
    Ok(worst)
}

/// A random `d × m` batch over `classes` classes (each present) whose batch
/// and per-class singular values are all simple and at least `gap` apart and
/// above `gap`, so the loss is differentiable there.
pub fn differentiable_batch(
    rng: &mut Rng,
    d: usize,
    m: usize,
    classes: usize,
    gap: f64,
) -> Result<LabeledLatentBatch> {
    loop {
        let mut labels: Vec<usize> = (0..m).map(|j| j % classes).collect();
        for j in (1..m).rev() {
            labels.swap(j, rng.random_range(0..=j));
        }
        let y = gaussian_matrix(rng, d, m);
        let batch = LabeledLatentBatch::new(y, labels, classes)?;
        let mut ok = well_separated(&linalg::svd(batch.latents())?.singular_values, gap);
        for block in ole::partition_by_class(&batch) {
            ok &= well_separated(&linalg::svd(&block.latents)?.singular_values, gap);
        }
        if ok {
            return Ok(batch);
        }
    }
}

fn well_separated(s: &[f64], gap: f64) -> bool {
    s.iter().all(|&v| v > gap) && s.windows(2).all(|w| w[0] - w[1] > gap)
}

fn ole_grad_fd(rng: &mut Rng, grad: OleGradFn, batches: usize) -> Result<f64> {
    let cfg = OleConfig {
        delta_margin: 0.0,
        sv_threshold: 1e-6,
    };
    let mut worst = 0.0f64;
    for k in 0..batches {
        let batch = differentiable_batch(rng, 6, 8, 2 + k % 2, 1e-3)?;
        let g = grad(&batch, &cfg)?;
        let labels = batch.labels().to_vec();
        let fd = finite_difference(batch.latents(), 1e-6, |y| {
            ole::ole_loss(
                &LabeledLatentBatch::new(y.clone(), labels.clone(), 3)?,
                &cfg,
            )
        })?;
        worst = worst.max(g.max_abs_diff(&fd));
    }
    Ok(worst)
}

/// One small network per layer kind.
pub fn micro_networks() -> Vec<(&'static str, Network)> {
    let conv = |i, o, s, p| LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel: 3,
        stride: s,
        padding: p,
    };
    let fc = |i, o| LayerSpec::Linear {
        inputs: i,
        outputs: o,
    };
    let build = |name, shape, layers| {
        (
            name,
            Network::new(name, shape, layers).expect("valid micro network"),
        )
    };
    vec![
        build(
            "conv2d",
            Shape3::new(2, 5, 5),
            vec![conv(2, 3, 2, 1), LayerSpec::Flatten, fc(27, 2)],
        ),
        build(
            "conv_transpose2d",
            Shape3::new(2, 3, 3),
            vec![
                LayerSpec::ConvTranspose2d {
                    in_channels: 2,
                    out_channels: 2,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                    output_padding: 1,
                },
                LayerSpec::Flatten,
                fc(72, 2),
            ],
        ),
        build("linear", Shape3::flat(4), vec![fc(4, 3)]),
        build(
            "leaky_relu",
            Shape3::flat(4),
            vec![fc(4, 6), LayerSpec::LeakyRelu { slope: 0.2 }, fc(6, 2)],
        ),
        build(
            "sigmoid",
            Shape3::flat(4),
            vec![fc(4, 3), LayerSpec::Sigmoid, fc(3, 2)],
        ),
        build(
            "flatten_reshape",
            Shape3::new(1, 4, 4),
            vec![
                LayerSpec::Flatten,
                fc(16, 8),
                LayerSpec::Reshape {
                    shape: Shape3::new(2, 2, 2),
                },
                conv(2, 1, 1, 1),
            ],
        ),
    ]
}

/// Worst relative error between backpropagated gradients (parameters and
/// input) and central differences of `Σ rᵢ·yᵢ` for a random projection `r`.
/// Errors are relative to the largest finite-difference magnitude; entries
/// whose difference quotient changes with the step size (a kink was crossed)
/// are skipped.
pub fn network_gradient_error(net: &mut Network, rng: &mut Rng) -> Result<f64> {
    let batch = 2;
    let values: Vec<f32> = (0..net.param_count())
        .map(|_| (0.5 * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect();
    net.set_params(&values)?;
    let shape = net.input_shape();
    let x = Tensor4::new(
        batch,
        shape,
        (0..batch * shape.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect(),
    )?;
    let out_shape = net.output_shape();
    let r: Vec<f64> = (0..batch * out_shape.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let dy = Tensor4::new(batch, out_shape, r.iter().map(|&v| v as f32).collect())?;
    let cache = net.forward(&x)?;
    let (grads, dx) = net.backward(&cache, &dy)?;

    let objective = |net: &Network, x: &Tensor4| -> Result<f64> {
        let y = net.predict(x)?;
        Ok(y.data().iter().zip(&r).map(|(&a, &b)| a as f64 * b).sum())
    };
    let quotient = |v: f32, h: f32, eval: &mut dyn FnMut(f32) -> Result<f64>| -> Result<f64> {
        let (p, m) = (v + h, v - h);
        Ok((eval(p)? - eval(m)?) / (p as f64 - m as f64))
    };

    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let h = 1e-2f32;
    for k in 0..values.len() {
        let mut probe = net.clone();
        let mut eval = |v: f32| -> Result<f64> {
            probe.params_mut()[k] = v;
            objective(&probe, &x)
        };
        let coarse = quotient(values[k], h, &mut eval)?;
        let fine = quotient(values[k], h / 2.0, &mut eval)?;
        pairs.push(kink_filtered(grads[k] as f64, coarse, fine));
    }
    for k in 0..x.data().len() {
        let mut probe_x = x.clone();
        let mut eval = |v: f32| -> Result<f64> {
            probe_x.data_mut()[k] = v;
            objective(net, &probe_x)
        };
        let coarse = quotient(x.data()[k], h, &mut eval)?;
        let fine = quotient(x.data()[k], h / 2.0, &mut eval)?;
        pairs.push(kink_filtered(dx.data()[k] as f64, coarse, fine));
    }
    let scale = pairs.iter().map(|p| p.1.abs()).fold(1e-6, f64::max);
    Ok(pairs
        .iter()
        .filter(|p| p.1.is_finite())
        .map(|(a, fd)| (a - fd).abs() / scale)
        .fold(0.0, f64::max))
}

/// Keeps `(analytic, coarse)` unless the two step sizes disagree with each
/// other and with the analytic value, which marks a kink with a NaN.
fn kink_filtered(analytic: f64, coarse: f64, fine: f64) -> (f64, f64) {
    let tol = 1e-3 * coarse.abs().max(fine.abs()).max(1.0);
    if (coarse - fine).abs() > tol
        && (analytic - fine).abs() > tol
        && (analytic - coarse).abs() > tol
    {
        (analytic, f64::NAN)
    } else {
        (analytic, coarse)
    }
}

fn brute_force_auroc(scores: &[(f64, bool)]) -> f64 {
    let (mut twice_wins, mut pairs) = (0u64, 0u64);
    for &(sn, novel) in scores {
        if !novel {
            continue;
        }
        for &(so, other_novel) in scores {
            if other_novel {
                continue;
            }
            pairs += 1;
            twice_wins += if sn > so {
                2
            } else if sn == so {
                1
            } else {
                0
            };
        }
    }
    twice_wins as f64 / (2 * pairs) as f64
}

fn auroc_oracle(rng: &mut Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..=20);
        let mut scores: Vec<(f64, bool)> = (0..n)
            .map(|_| (rng.random_range(0..levels) as f64, rng.random_bool(0.4)))
            .collect();
        scores[0].1 = true;
        scores[1].1 = false;
        match eval::auroc(&scores) {
            Ok(a) => worst = worst.max((a - brute_force_auroc(&scores)).abs()),
            Err(_) => return f64::INFINITY,
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for outcome in run_checks(7) {
            assert!(outcome.passed, "{outcome}");
        }
    }

    #[test]
    fn margins_are_reproducible() {
        assert_eq!(run_checks(3), run_checks(3));
    }

    #[test]
    fn sign_flipped_ole_gradient_is_caught() {
        fn flipped(b: &LabeledLatentBatch, c: &OleConfig) -> Result<Matrix> {
            Ok(ole::ole_grad(b, c)?.scale(-1.0))
        }
        let outcomes = run_checks_with(1, CheckHooks { ole_grad: flipped });
        let failed: Vec<_> = outcomes
            .iter()
            .filter(|o| !o.passed)
            .map(|o| o.name.as_str())
            .collect();
        assert_eq!(failed, vec!["ole_grad_fd"]);
    }
}
