use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::{StftConfig, StftPlan};
use crate::error::Result;

use super::{no_grad, ops, Tensor};
use crate::ssm::SsmParams;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the gradients `backward` assigns to every input that
/// requires them against central differences of step `eps`. Returns the
/// largest relative error over all entries.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    for x in inputs {
        x.zero_grad();
    }
    f(inputs)?.backward()?;
    let analytic: Vec<Option<Vec<f64>>> = inputs.iter().map(|x| x.grad()).collect();
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> { no_grad(|| f(inputs))?.item() };
    let mut worst: f64 = 0.0;
    for (x, g) in inputs.iter().zip(&analytic) {
        if !x.requires_grad() {
            continue;
        }
        let base = x.to_vec();
        for k in 0..base.len() {
            let mut v = base.clone();
            v[k] = base[k] + eps;
            x.set_data(v.clone())?;
            let lp = eval(inputs)?;
            v[k] = base[k] - eps;
            x.set_data(v)?;
            let lm = eval(inputs)?;
            let numeric = (lp - lm) / (2.0 * eps);
            let a = g.as_ref().map_or(0.0, |g| g[k]);
            worst = worst.max(relative_error(a, numeric));
        }
        x.set_data(base)?;
        x.zero_grad();
    }
    Ok(worst)
}

/// Builds one random instance of an operation: its inputs and a function
/// evaluating the operation on them.
pub type CaseBuilder = fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn);
pub type OpFn = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], param: bool) -> Tensor<f64> {
    let data = (0..shape.iter().product()).map(|_| rng.sample(StandardNormal)).collect();
    if param {
        Tensor::param(data, shape).unwrap()
    } else {
        Tensor::new(data, shape).unwrap()
    }
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn bct(rng: &mut ChaCha8Rng) -> [usize; 3] {
    [dim(rng, 1, 2), dim(rng, 1, 4), dim(rng, 1, 8)]
}

/// Tensor shapes of each array in [`SsmParams::arrays`] order.
pub fn ssm_shapes<T>(p: &SsmParams<T>) -> [Vec<usize>; 7] {
    let (di, ds, dr) = (p.d_inner, p.d_state, p.d_rank);
    [vec![di, ds], vec![di], vec![ds, di], vec![ds, di], vec![dr, di], vec![di, dr], vec![di]]
}

fn op(f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'static) -> OpFn {
    Box::new(f)
}

/// One random-instance builder per differentiable operation.
pub fn op_cases() -> Vec<(&'static str, CaseBuilder)> {
    vec![
        ("add", |r| {
            let s = bct(r);
            (vec![randn(r, &s, true), randn(r, &s, true)], op(|x| ops::add(&x[0], &x[1])))
        }),
        ("add_scalar_broadcast", |r| {
            let s = bct(r);
            (vec![randn(r, &s, true), randn(r, &[1], true)], op(|x| ops::add(&x[0], &x[1])))
        }),
        ("sub", |r| {
            let s = bct(r);
            (vec![randn(r, &s, true), randn(r, &s, true)], op(|x| ops::sub(&x[0], &x[1])))
        }),
        ("mul", |r| {
            let s = bct(r);
            (vec![randn(r, &s, true), randn(r, &s, true)], op(|x| ops::mul(&x[0], &x[1])))
        }),
        ("mul_scalar_broadcast", |r| {
            let s = bct(r);
            (vec![randn(r, &[1], true), randn(r, &s, true)], op(|x| ops::mul(&x[0], &x[1])))
        }),
        ("scale", |r| {
            let s = bct(r);
            let k: f64 = r.sample(StandardNormal);
            (vec![randn(r, &s, true)], op(move |x| Ok(ops::scale(&x[0], k))))
        }),
        ("add_scalar", |r| {
            let s = bct(r);
            (vec![randn(r, &s, true)], op(|x| Ok(ops::add_scalar(&x[0], 0.3))))
        }),
        ("silu", |r| {
            let s = bct(r);
            (vec![randn(r, &s, true)], op(|x| Ok(ops::silu(&x[0]))))
        }),
        ("sigmoid", |r| {
            let s = bct(r);
            (vec![randn(r, &s, true)], op(|x| Ok(ops::sigmoid(&x[0]))))
        }),
        ("softplus", |r| {
            let s = bct(r);
            (vec![randn(r, &s, true)], op(|x| Ok(ops::softplus(&x[0]))))
        }),
        ("relu", |r| {
            let s = bct(r);
            (vec![randn(r, &s, true)], op(|x| Ok(ops::relu(&x[0]))))
        }),
        ("leaky_relu", |r| {
            let s = bct(r);
            (vec![randn(r, &s, true)], op(|x| Ok(ops::leaky_relu(&x[0], 0.2))))
        }),
        ("sum", |r| {
            let s = bct(r);
            (vec![randn(r, &s, true)], op(|x| Ok(ops::sum(&x[0]))))
        }),
        ("mean", |r| {
            let s = bct(r);
            (vec![randn(r, &s, true)], op(|x| ops::mean(&x[0])))
        }),
        ("l1", |r| {
            let s = bct(r);
            (vec![randn(r, &s, true), randn(r, &s, true)], op(|x| ops::l1(&x[0], &x[1])))
        }),
        ("linear", |r| {
            let (n, i, o) = (dim(r, 1, 4), dim(r, 1, 6), dim(r, 1, 6));
            (
                vec![randn(r, &[n, i], true), randn(r, &[o, i], true), randn(r, &[o], true)],
                op(|x| ops::linear(&x[0], &x[1], Some(&x[2]))),
            )
        }),
        ("conv1d", |r| {
            let groups = dim(r, 1, 2);
            let (cin, cout) = (groups * dim(r, 1, 2), groups * dim(r, 1, 2));
            let (k, stride, padding) = (dim(r, 1, 3), dim(r, 1, 2), dim(r, 0, 1));
            let (b, t) = (dim(r, 1, 2), dim(r, k, 8));
            (
                vec![
                    randn(r, &[b, cin, t], true),
                    randn(r, &[cout, cin / groups, k], true),
                    randn(r, &[cout], true),
                ],
                op(move |x| ops::conv1d(&x[0], &x[1], Some(&x[2]), stride, padding, groups)),
            )
        }),
        ("conv_transpose1d", |r| {
            let (cin, cout, k) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 4));
            let stride = dim(r, 1, 4);
            let padding = if k > 2 { dim(r, 0, 1) } else { 0 };
            let (b, t) = (dim(r, 1, 2), dim(r, 1, 5));
            (
                vec![
                    randn(r, &[b, cin, t], true),
                    randn(r, &[cin, cout, k], true),
                    randn(r, &[cout], true),
                ],
                op(move |x| ops::conv_transpose1d(&x[0], &x[1], Some(&x[2]), stride, padding)),
            )
        }),
        ("depthwise_causal_conv1d", |r| {
            let s = bct(r);
            (
                vec![randn(r, &s, true), randn(r, &[s[1], 4], true), randn(r, &[s[1]], true)],
                op(|x| ops::depthwise_causal_conv1d(&x[0], &x[1], Some(&x[2]))),
            )
        }),
        ("glu", |r| {
            let [b, c, t] = bct(r);
            (vec![randn(r, &[b, 2 * c, t], true)], op(|x| ops::glu(&x[0])))
        }),
        ("rms_norm", |r| {
            let s = bct(r);
            (
                vec![randn(r, &s, true), randn(r, &[s[1]], true)],
                op(|x| ops::rms_norm(&x[0], &x[1])),
            )
        }),
        ("concat", |r| {
            let [b, c, t] = bct(r);
            let c2 = dim(r, 1, 3);
            (
                vec![randn(r, &[b, c, t], true), randn(r, &[b, c2, t], true)],
                op(|x| ops::concat(&[&x[0], &x[1]], 1)),
            )
        }),
        ("slice", |r| {
            let s = bct(r);
            let axis = dim(r, 0, 2);
            let start = dim(r, 0, s[axis] - 1);
            let end = dim(r, start + 1, s[axis]);
            (vec![randn(r, &s, true)], op(move |x| ops::slice(&x[0], axis, start, end)))
        }),
        ("pad", |r| {
            let s = bct(r);
            let (before, after) = (dim(r, 0, 3), dim(r, 0, 3));
            (vec![randn(r, &s, true)], op(move |x| ops::pad(&x[0], 2, before, after)))
        }),
        ("reshape", |r| {
            let [b, c, t] = bct(r);
            (vec![randn(r, &[b, c, t], true)], op(move |x| ops::reshape(&x[0], &[b * c, t])))
        }),
        ("reverse", |r| {
            let s = bct(r);
            let axis = dim(r, 0, 2);
            (vec![randn(r, &s, true)], op(move |x| ops::reverse(&x[0], axis)))
        }),
        ("avg_pool1d", |r| {
            let [b, c, _] = bct(r);
            let t = dim(r, 4, 12);
            (vec![randn(r, &[b, c, t], true)], op(|x| ops::avg_pool1d(&x[0], 4, 2, 1)))
        }),
        ("selective_scan", |r| {
            let (b, di, ds, t) = (dim(r, 1, 2), dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 8));
            let mut p = SsmParams::<f64>::init(di, ds, dim(r, 1, 2), r);
            for v in p.b_dt.iter_mut().chain(&mut p.d_skip) {
                *v = r.random_range(-1.0..1.0);
            }
            let shapes = ssm_shapes(&p);
            let mut inputs = vec![randn(r, &[b, di, t], true)];
            for (v, s) in p.arrays().into_iter().zip(shapes) {
                inputs.push(Tensor::param(v.clone(), &s).unwrap());
            }
            (
                inputs,
                op(|x| ops::selective_scan(&x[0], &[&x[1], &x[2], &x[3], &x[4], &x[5], &x[6], &x[7]])),
            )
        }),
        ("stft", |r| {
            let (b, n) = (dim(r, 1, 2), dim(r, 5, 12));
            (
                vec![randn(r, &[b, n], true)],
                op(|x| ops::stft(&x[0], &StftPlan::new(StftConfig::new(8, 4)?)?)),
            )
        }),
        ("istft", |r| {
            let frames = dim(r, 3, 6);
            let len = (frames - 2) * 4 + dim(r, 0, 3);
            (
                vec![randn(r, &[1, 10, frames], true)],
                op(move |x| ops::istft(&x[0], &StftPlan::new(StftConfig::new(8, 4)?)?, len)),
            )
        }),
        ("log_magnitude", |r| {
            let [b, c, t] = bct(r);
            (vec![randn(r, &[b, 2 * c, t], true)], op(|x| ops::log_magnitude(&x[0], 1e-7)))
        }),
    ]
}

/// Runs [`gradcheck`] on `instances` random instances of a case,
/// contracting the output with fixed random weights. Returns the worst
/// relative error.
pub fn check_case(build: CaseBuilder, seed: u64, instances: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        let (inputs, f) = build(&mut rng);
        let shape = no_grad(|| f(&inputs))?.shape().to_vec();
        let weights = randn(&mut rng, &shape, false);
        let err = gradcheck(|x| ops::sum(&ops::mul(&f(x)?, &weights)?).pipe(Ok), &inputs, 1e-5)?;
        worst = worst.max(err);
    }
    Ok(worst)
}

trait Pipe: Sized {
    fn pipe<R>(self, f: impl FnOnce(Self) -> R) -> R {
        f(self)
    }
}

impl<T> Pipe for T {}
