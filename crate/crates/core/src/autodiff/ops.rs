use num_complex::Complex;

use crate::dsp::padded_source;
use crate::dsp::StftPlan;
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, ConvTGeom};
use crate::scalar::{sigmoid as sigmoid_fn, softplus as softplus_fn, Scalar};
use crate::ssm::{scan_backward, scan_sequential, scan_sequential_traced, ScanTrace, SsmParams, SsmState};

use super::Tensor;

fn mismatch(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::arg(format!("{op}: shape mismatch {a:?} vs {b:?}"))
}

fn dims3<T: Scalar>(op: &str, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c, t] => Ok((b, c, t)),
        ref s => Err(Error::arg(format!("{op}: expected [batch, channels, time], got {s:?}"))),
    }
}

fn check_axis<T: Scalar>(op: &str, x: &Tensor<T>, axis: usize) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if axis >= s.len() {
        return Err(Error::arg(format!("{op}: axis {axis} out of range for shape {s:?}")));
    }
    Ok((s[..axis].iter().product(), s[axis], s[axis + 1..].iter().product()))
}

#[inline]
fn at<T: Scalar>(d: &[T], i: usize) -> T {
    if d.len() == 1 {
        d[0]
    } else {
        d[i]
    }
}

/// Folds a full-size gradient back onto a broadcast scalar operand.
fn reduce_to<T: Scalar>(g: Vec<T>, n: usize) -> Vec<T> {
    if n == 1 && g.len() != 1 {
        vec![g.iter().copied().sum()]
    } else {
        g
    }
}

fn broadcast_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.numel() == 1 {
        Ok(a.shape().to_vec())
    } else if a.numel() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(mismatch(op, a.shape(), b.shape()))
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, n: usize, f: impl Fn(T, T) -> T) -> Vec<T> {
    let (ad, bd) = (a.data(), b.data());
    (0..n).map(|i| f(at(&ad, i), at(&bd, i))).collect()
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = broadcast_shape("add", a, b)?;
    let n = shape.iter().product();
    let data = zip_map(a, b, n, |x, y| x + y);
    Ok(Tensor::from_op("add", data, shape, &[a, b], move |g, p| {
        p.iter()
            .map(|t| t.requires_grad().then(|| reduce_to(g.to_vec(), t.numel())))
            .collect()
    }))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = broadcast_shape("sub", a, b)?;
    let n = shape.iter().product();
    let data = zip_map(a, b, n, |x, y| x - y);
    Ok(Tensor::from_op("sub", data, shape, &[a, b], move |g, p| {
        vec![
            p[0].requires_grad().then(|| reduce_to(g.to_vec(), p[0].numel())),
            p[1].requires_grad().then(|| reduce_to(g.iter().map(|&v| -v).collect(), p[1].numel())),
        ]
    }))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = broadcast_shape("mul", a, b)?;
    let n = shape.iter().product();
    let data = zip_map(a, b, n, |x, y| x * y);
    Ok(Tensor::from_op("mul", data, shape, &[a, b], move |g, p| {
        let (ad, bd) = (p[0].data(), p[1].data());
        vec![
            p[0].requires_grad()
                .then(|| reduce_to(g.iter().enumerate().map(|(i, &v)| v * at(&bd, i)).collect(), ad.len())),
            p[1].requires_grad()
                .then(|| reduce_to(g.iter().enumerate().map(|(i, &v)| v * at(&ad, i)).collect(), bd.len())),
        ]
    }))
}

pub fn scale<T: Scalar>(x: &Tensor<T>, s: T) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v * s).collect();
    Tensor::from_op("scale", data, x.shape().to_vec(), &[x], move |g, _| {
        vec![Some(g.iter().map(|&v| v * s).collect())]
    })
}

pub fn add_scalar<T: Scalar>(x: &Tensor<T>, s: T) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v + s).collect();
    Tensor::from_op("add_scalar", data, x.shape().to_vec(), &[x], |g, _| vec![Some(g.to_vec())])
}

/// Elementwise map with derivative `df` evaluated at the input.
fn unary<T: Scalar>(
    name: &'static str,
    x: &Tensor<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T) -> T + 'static,
) -> Tensor<T> {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(name, data, x.shape().to_vec(), &[x], move |g, p| {
        let xd = p[0].data();
        vec![Some(g.iter().zip(xd.iter()).map(|(&gv, &xv)| gv * df(xv)).collect())]
    })
}

pub fn silu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    unary("silu", x, kernels::silu, |v| {
        let s = sigmoid_fn(v);
        s * (T::one() + v * (T::one() - s))
    })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    unary("sigmoid", x, sigmoid_fn, |v| {
        let s = sigmoid_fn(v);
        s * (T::one() - s)
    })
}

pub fn softplus<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    unary("softplus", x, softplus_fn, sigmoid_fn)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    unary("relu", x, |v| v.max(T::zero()), |v| if v > T::zero() { T::one() } else { T::zero() })
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    unary(
        "leaky_relu",
        x,
        move |v| kernels::leaky_relu(v, slope),
        move |v| if v >= T::zero() { T::one() } else { slope },
    )
}

pub fn sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.data().iter().copied().sum();
    let n = x.numel();
    Tensor::from_op("sum", vec![s], vec![1], &[x], move |g, _| vec![Some(vec![g[0]; n])])
}

pub fn mean<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = x.numel();
    if n == 0 {
        return Err(Error::arg("mean of an empty tensor"));
    }
    let inv = T::one() / T::from_usize(n).unwrap();
    let s = x.data().iter().copied().sum::<T>() * inv;
    Ok(Tensor::from_op("mean", vec![s], vec![1], &[x], move |g, _| {
        vec![Some(vec![g[0] * inv; n])]
    }))
}

/// Sum of absolute differences. The derivative of `|0|` is taken as 0.
pub fn l1<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(mismatch("l1", a.shape(), b.shape()));
    }
    let s = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| (x - y).abs()).sum();
    Ok(Tensor::from_op("l1", vec![s], vec![1], &[a, b], |g, p| {
        let (ad, bd) = (p[0].data(), p[1].data());
        let sign: Vec<T> = ad
            .iter()
            .zip(bd.iter())
            .map(|(&x, &y)| {
                let d = x - y;
                if d > T::zero() {
                    g[0]
                } else if d < T::zero() {
                    -g[0]
                } else {
                    T::zero()
                }
            })
            .collect();
        vec![
            p[0].requires_grad().then(|| sign.clone()),
            p[1].requires_grad().then(|| sign.iter().map(|&v| -v).collect()),
        ]
    }))
}

/// `x [N, in] · Wᵀ + b` with `W [out, in]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (&[n, fin], &[fout, win]) = (x.shape(), w.shape()) else {
        return Err(mismatch("linear", x.shape(), w.shape()));
    };
    if fin != win || b.is_some_and(|b| b.shape() != [fout]) {
        return Err(mismatch("linear", x.shape(), w.shape()));
    }
    let mut out = vec![T::zero(); n * fout];
    {
        let (xd, wd) = (x.data(), w.data());
        let bd = b.map(|b| b.data());
        for r in 0..n {
            for o in 0..fout {
                let bias = bd.as_ref().map_or(T::zero(), |b| b[o]);
                out[r * fout + o] = bias + kernels::dot(&xd[r * fin..(r + 1) * fin], &wd[o * fin..(o + 1) * fin]);
            }
        }
    }
    let mut parents = vec![x, w];
    parents.extend(b);
    Ok(Tensor::from_op("linear", out, vec![n, fout], &parents, move |g, p| {
        let (xd, wd) = (p[0].data(), p[1].data());
        let gx = p[0].requires_grad().then(|| {
            let mut gx = vec![T::zero(); n * fin];
            for r in 0..n {
                for o in 0..fout {
                    kernels::axpy(&mut gx[r * fin..(r + 1) * fin], g[r * fout + o], &wd[o * fin..(o + 1) * fin]);
                }
            }
            gx
        });
        let gw = p[1].requires_grad().then(|| {
            let mut gw = vec![T::zero(); fout * fin];
            for r in 0..n {
                for o in 0..fout {
                    kernels::axpy(&mut gw[o * fin..(o + 1) * fin], g[r * fout + o], &xd[r * fin..(r + 1) * fin]);
                }
            }
            gw
        });
        let mut grads = vec![gx, gw];
        if p.len() == 3 {
            grads.push(p[2].requires_grad().then(|| {
                (0..fout).map(|o| (0..n).map(|r| g[r * fout + o]).sum()).collect()
            }));
        }
        grads
    }))
}

fn check_bias<T: Scalar>(op: &str, b: Option<&Tensor<T>>, c: usize) -> Result<()> {
    match b {
        Some(b) if b.shape() != [c] => Err(mismatch(op, b.shape(), &[c])),
        _ => Ok(()),
    }
}

/// Convolution of `x [B, C_in, T]` with `w [C_out, C_in/groups, K]`.
pub fn conv1d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let (bs, c_in, t_in) = dims3("conv1d", x)?;
    let &[c_out, cin_g, kernel] = w.shape() else {
        return Err(mismatch("conv1d", x.shape(), w.shape()));
    };
    if groups == 0 || stride == 0 || c_in % groups != 0 || c_out % groups != 0 || cin_g != c_in / groups {
        return Err(Error::arg(format!(
            "conv1d: input {:?}, weight {:?}, groups {groups}, stride {stride} are incompatible",
            x.shape(),
            w.shape()
        )));
    }
    if t_in + 2 * padding < kernel {
        return Err(Error::arg(format!(
            "conv1d: input length {t_in} with padding {padding} is shorter than kernel {kernel}"
        )));
    }
    check_bias("conv1d", b, c_out)?;
    let geom = ConvGeom { c_in, c_out, kernel, stride, padding, groups, t_in };
    let t_out = geom.t_out();
    let mut out = Vec::with_capacity(bs * c_out * t_out);
    {
        let (xd, wd) = (x.data(), w.data());
        let bd = b.map(|b| b.data());
        for i in 0..bs {
            out.extend(kernels::conv1d_forward(
                &xd[i * c_in * t_in..(i + 1) * c_in * t_in],
                &wd,
                bd.as_deref().map(|v| v.as_slice()),
                &geom,
            ));
        }
    }
    let mut parents = vec![x, w];
    parents.extend(b);
    Ok(Tensor::from_op("conv1d", out, vec![bs, c_out, t_out], &parents, move |g, p| {
        let (xd, wd) = (p[0].data(), p[1].data());
        let mut gx = p[0].requires_grad().then(|| vec![T::zero(); xd.len()]);
        let mut gw = p[1].requires_grad().then(|| vec![T::zero(); wd.len()]);
        let mut gb = (p.len() == 3 && p[2].requires_grad()).then(|| vec![T::zero(); c_out]);
        for i in 0..bs {
            kernels::conv1d_backward(
                &xd[i * c_in * t_in..(i + 1) * c_in * t_in],
                &wd,
                &g[i * c_out * t_out..(i + 1) * c_out * t_out],
                &geom,
                gx.as_mut().map(|v| &mut v[i * c_in * t_in..(i + 1) * c_in * t_in]),
                gw.as_deref_mut(),
                gb.as_deref_mut(),
            );
        }
        let mut grads = vec![gx, gw];
        if p.len() == 3 {
            grads.push(gb);
        }
        grads
    }))
}

/// Transposed convolution of `x [B, C_in, T]` with `w [C_in, C_out, K]`.
pub fn conv_transpose1d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (bs, c_in, t_in) = dims3("conv_transpose1d", x)?;
    let &[w_in, c_out, kernel] = w.shape() else {
        return Err(mismatch("conv_transpose1d", x.shape(), w.shape()));
    };
    if w_in != c_in || stride == 0 || t_in == 0 || (t_in - 1) * stride + kernel <= 2 * padding {
        return Err(Error::arg(format!(
            "conv_transpose1d: input {:?}, weight {:?}, stride {stride}, padding {padding} are incompatible",
            x.shape(),
            w.shape()
        )));
    }
    check_bias("conv_transpose1d", b, c_out)?;
    let geom = ConvTGeom { c_in, c_out, kernel, stride, padding, t_in };
    let t_out = geom.t_out();
    let mut out = Vec::with_capacity(bs * c_out * t_out);
    {
        let (xd, wd) = (x.data(), w.data());
        let bd = b.map(|b| b.data());
        for i in 0..bs {
            out.extend(kernels::conv_transpose1d_forward(
                &xd[i * c_in * t_in..(i + 1) * c_in * t_in],
                &wd,
                bd.as_deref().map(|v| v.as_slice()),
                &geom,
            ));
        }
    }
    let mut parents = vec![x, w];
    parents.extend(b);
    Ok(Tensor::from_op("conv_transpose1d", out, vec![bs, c_out, t_out], &parents, move |g, p| {
        let (xd, wd) = (p[0].data(), p[1].data());
        let mut gx = p[0].requires_grad().then(|| vec![T::zero(); xd.len()]);
        let mut gw = p[1].requires_grad().then(|| vec![T::zero(); wd.len()]);
        let mut gb = (p.len() == 3 && p[2].requires_grad()).then(|| vec![T::zero(); c_out]);
        for i in 0..bs {
            kernels::conv_transpose1d_backward(
                &xd[i * c_in * t_in..(i + 1) * c_in * t_in],
                &wd,
                &g[i * c_out * t_out..(i + 1) * c_out * t_out],
                &geom,
                gx.as_mut().map(|v| &mut v[i * c_in * t_in..(i + 1) * c_in * t_in]),
                gw.as_deref_mut(),
                gb.as_deref_mut(),
            );
        }
        let mut grads = vec![gx, gw];
        if p.len() == 3 {
            grads.push(gb);
        }
        grads
    }))
}

fn check_depthwise<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<(usize, usize, usize, usize)> {
    let (bs, c, t) = dims3("depthwise_causal_conv1d", x)?;
    let &[wc, k] = w.shape() else {
        return Err(mismatch("depthwise_causal_conv1d", x.shape(), w.shape()));
    };
    if wc != c || k == 0 {
        return Err(mismatch("depthwise_causal_conv1d", x.shape(), w.shape()));
    }
    check_bias("depthwise_causal_conv1d", b, c)?;
    Ok((bs, c, t, k))
}

/// Per-channel causal convolution: `x [B, C, T]`, `w [C, K]`, left
/// padding of `K - 1` zeros, so output `t` sees inputs `t-K+1 ..= t`.
pub fn depthwise_causal_conv1d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (bs, c, t, k) = check_depthwise(x, w, b)?;
    let mut out = Vec::with_capacity(bs * c * t);
    {
        let (xd, wd) = (x.data(), w.data());
        let bd = b.map(|b| b.data());
        for i in 0..bs {
            out.extend(kernels::depthwise_causal_forward(
                &xd[i * c * t..(i + 1) * c * t],
                &wd,
                bd.as_deref().map(|v| v.as_slice()),
                None,
                c,
                k,
            ));
        }
    }
    let mut parents = vec![x, w];
    parents.extend(b);
    Ok(Tensor::from_op("depthwise_causal_conv1d", out, vec![bs, c, t], &parents, move |g, p| {
        let (xd, wd) = (p[0].data(), p[1].data());
        let mut gx = p[0].requires_grad().then(|| vec![T::zero(); xd.len()]);
        let mut gw = p[1].requires_grad().then(|| vec![T::zero(); wd.len()]);
        for i in 0..bs {
            for ch in 0..c {
                let row = (i * c + ch) * t;
                let xs = &xd[row..row + t];
                let gs = &g[row..row + t];
                for kk in 0..k {
                    let shift = k - 1 - kk;
                    if shift >= t {
                        continue;
                    }
                    // out[j] uses x[j - shift] through tap kk
                    if let Some(gx) = gx.as_mut() {
                        kernels::axpy(&mut gx[row..row + t - shift], wd[ch * k + kk], &gs[shift..]);
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[ch * k + kk] += kernels::dot(&gs[shift..], &xs[..t - shift]);
                    }
                }
            }
        }
        let mut grads = vec![gx, gw];
        if p.len() == 3 {
            grads.push(p[2].requires_grad().then(|| {
                (0..c)
                    .map(|ch| (0..bs).map(|i| g[(i * c + ch) * t..(i * c + ch + 1) * t].iter().copied().sum::<T>()).sum())
                    .collect()
            }));
        }
        grads
    }))
}

/// Streaming form of [`depthwise_causal_conv1d`]: `history [B, C, K-1]`
/// holds the inputs preceding `x` and is advanced past it. Never records
/// gradients.
pub fn depthwise_causal_conv1d_with_history<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    history: &mut [T],
) -> Result<Tensor<T>> {
    let (bs, c, t, k) = check_depthwise(x, w, b)?;
    let hk = k - 1;
    if history.len() != bs * c * hk {
        return Err(Error::contract(format!(
            "causal conv history holds {} values, expected {}",
            history.len(),
            bs * c * hk
        )));
    }
    let (xd, wd) = (x.data(), w.data());
    let bd = b.map(|b| b.data());
    let mut out = Vec::with_capacity(bs * c * t);
    for i in 0..bs {
        let xs = &xd[i * c * t..(i + 1) * c * t];
        let hist = &mut history[i * c * hk..(i + 1) * c * hk];
        out.extend(kernels::depthwise_causal_forward(
            xs,
            &wd,
            bd.as_deref().map(|v| v.as_slice()),
            Some(hist),
            c,
            k,
        ));
        for ch in 0..c {
            let mut joined: Vec<T> = hist[ch * hk..(ch + 1) * hk].to_vec();
            joined.extend_from_slice(&xs[ch * t..(ch + 1) * t]);
            hist[ch * hk..(ch + 1) * hk].copy_from_slice(&joined[joined.len() - hk..]);
        }
    }
    Tensor::new(out, &[bs, c, t])
}

/// Gated linear unit over the channel axis of `x [B, 2C, T]`.
pub fn glu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (bs, c, t) = dims3("glu", x)?;
    if c % 2 != 0 {
        return Err(Error::arg(format!("glu: odd channel count {c}")));
    }
    let h = c / 2;
    let mut out = Vec::with_capacity(bs * h * t);
    {
        let xd = x.data();
        for i in 0..bs {
            out.extend(kernels::glu_forward(&xd[i * c * t..(i + 1) * c * t], c));
        }
    }
    Ok(Tensor::from_op("glu", out, vec![bs, h, t], &[x], move |g, p| {
        let xd = p[0].data();
        let mut gx = vec![T::zero(); xd.len()];
        for i in 0..bs {
            for ch in 0..h {
                for j in 0..t {
                    let ia = (i * c + ch) * t + j;
                    let ib = (i * c + ch + h) * t + j;
                    let go = g[(i * h + ch) * t + j];
                    let s = sigmoid_fn(xd[ib]);
                    gx[ia] = go * s;
                    gx[ib] = go * xd[ia] * s * (T::one() - s);
                }
            }
        }
        vec![Some(gx)]
    }))
}

/// RMS normalisation over the channel axis of `x [B, C, T]` with gain `gamma [C]`.
pub fn rms_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>) -> Result<Tensor<T>> {
    let (bs, c, t) = dims3("rms_norm", x)?;
    if gamma.shape() != [c] {
        return Err(mismatch("rms_norm", x.shape(), gamma.shape()));
    }
    let eps = kernels::rms_eps::<T>();
    let mut out = Vec::with_capacity(bs * c * t);
    let mut inv_all = Vec::with_capacity(bs * t);
    {
        let (xd, gd) = (x.data(), gamma.data());
        for i in 0..bs {
            let (o, inv) = kernels::rms_norm_forward(&xd[i * c * t..(i + 1) * c * t], &gd, c, eps);
            out.extend(o);
            inv_all.extend(inv);
        }
    }
    Ok(Tensor::from_op("rms_norm", out, vec![bs, c, t], &[x, gamma], move |g, p| {
        let (xd, gd) = (p[0].data(), p[1].data());
        let n = T::from_usize(c).unwrap();
        let mut gx = p[0].requires_grad().then(|| vec![T::zero(); xd.len()]);
        let mut gg = p[1].requires_grad().then(|| vec![T::zero(); c]);
        for i in 0..bs {
            let base = i * c * t;
            for j in 0..t {
                let r = inv_all[i * t + j];
                let mut dotv = T::zero();
                for ch in 0..c {
                    let e = base + ch * t + j;
                    dotv += g[e] * gd[ch] * xd[e];
                    if let Some(gg) = gg.as_mut() {
                        gg[ch] += g[e] * xd[e] * r;
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    let k = r * r * r * dotv / n;
                    for ch in 0..c {
                        let e = base + ch * t + j;
                        gx[e] = r * gd[ch] * g[e] - k * xd[e];
                    }
                }
            }
        }
        vec![gx, gg]
    }))
}

/// Joins tensors along `axis`; all other dimensions must agree.
pub fn concat<T: Scalar>(tensors: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = tensors.first().ok_or_else(|| Error::arg("concat of no tensors"))?;
    let (outer, _, inner) = check_axis("concat", first, axis)?;
    let mut sizes = Vec::with_capacity(tensors.len());
    for t in tensors {
        let s = t.shape();
        if s.len() != first.shape().len()
            || s[..axis] != first.shape()[..axis]
            || s[axis + 1..] != first.shape()[axis + 1..]
        {
            return Err(mismatch("concat", first.shape(), s));
        }
        sizes.push(s[axis]);
    }
    let total: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (t, &d) in tensors.iter().zip(&sizes) {
            out.extend_from_slice(&t.data()[o * d * inner..(o + 1) * d * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_op("concat", out, shape, tensors, move |g, p| {
        let mut offset = 0;
        sizes
            .iter()
            .zip(p)
            .map(|(&d, t)| {
                let start = offset;
                offset += d;
                t.requires_grad().then(|| {
                    let mut gt = Vec::with_capacity(outer * d * inner);
                    for o in 0..outer {
                        let row = (o * total + start) * inner;
                        gt.extend_from_slice(&g[row..row + d * inner]);
                    }
                    gt
                })
            })
            .collect()
    }))
}

/// The index range `start..end` along `axis`.
pub fn slice<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, end: usize) -> Result<Tensor<T>> {
    let (outer, d, inner) = check_axis("slice", x, axis)?;
    if start >= end || end > d {
        return Err(Error::arg(format!(
            "slice: range {start}..{end} invalid for axis {axis} of shape {:?}",
            x.shape()
        )));
    }
    let len = end - start;
    let mut out = Vec::with_capacity(outer * len * inner);
    {
        let xd = x.data();
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * d + start) * inner..(o * d + end) * inner]);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Ok(Tensor::from_op("slice", out, shape, &[x], move |g, _| {
        let mut gx = vec![T::zero(); outer * d * inner];
        for o in 0..outer {
            gx[(o * d + start) * inner..(o * d + end) * inner]
                .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
        }
        vec![Some(gx)]
    }))
}

/// Zero padding of `before` and `after` entries along `axis`.
pub fn pad<T: Scalar>(x: &Tensor<T>, axis: usize, before: usize, after: usize) -> Result<Tensor<T>> {
    let (outer, d, inner) = check_axis("pad", x, axis)?;
    let nd = before + d + after;
    let mut out = vec![T::zero(); outer * nd * inner];
    {
        let xd = x.data();
        for o in 0..outer {
            out[(o * nd + before) * inner..(o * nd + before + d) * inner]
                .copy_from_slice(&xd[o * d * inner..(o + 1) * d * inner]);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = nd;
    Ok(Tensor::from_op("pad", out, shape, &[x], move |g, _| {
        let mut gx = Vec::with_capacity(outer * d * inner);
        for o in 0..outer {
            gx.extend_from_slice(&g[(o * nd + before) * inner..(o * nd + before + d) * inner]);
        }
        vec![Some(gx)]
    }))
}

pub fn reshape<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if shape.iter().product::<usize>() != x.numel() {
        return Err(mismatch("reshape", x.shape(), shape));
    }
    Ok(Tensor::from_op("reshape", x.to_vec(), shape.to_vec(), &[x], |g, _| vec![Some(g.to_vec())]))
}

/// Reverses the order of entries along `axis`.
pub fn reverse<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, d, inner) = check_axis("reverse", x, axis)?;
    let flip = move |src: &[T]| {
        let mut out = Vec::with_capacity(src.len());
        for o in 0..outer {
            for j in (0..d).rev() {
                out.extend_from_slice(&src[(o * d + j) * inner..(o * d + j + 1) * inner]);
            }
        }
        out
    };
    let out = flip(&x.data());
    Ok(Tensor::from_op("reverse", out, x.shape().to_vec(), &[x], move |g, _| vec![Some(flip(g))]))
}

/// Average pooling over time of `x [B, C, T]`. Padded positions are
/// excluded from each window's count.
pub fn avg_pool1d<T: Scalar>(x: &Tensor<T>, kernel: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let (bs, c, t) = dims3("avg_pool1d", x)?;
    if kernel == 0 || stride == 0 || t + 2 * padding < kernel || padding >= kernel {
        return Err(Error::arg(format!(
            "avg_pool1d: kernel {kernel}, stride {stride}, padding {padding} invalid for length {t}"
        )));
    }
    let t_out = (t + 2 * padding - kernel) / stride + 1;
    let window = move |j: usize| {
        let lo = (j * stride).saturating_sub(padding);
        let hi = (j * stride + kernel - padding).min(t);
        (lo, hi)
    };
    let mut out = Vec::with_capacity(bs * c * t_out);
    {
        let xd = x.data();
        for row in xd.chunks_exact(t) {
            for j in 0..t_out {
                let (lo, hi) = window(j);
                let s: T = row[lo..hi].iter().copied().sum();
                out.push(s / T::from_usize(hi - lo).unwrap());
            }
        }
    }
    Ok(Tensor::from_op("avg_pool1d", out, vec![bs, c, t_out], &[x], move |g, _| {
        let mut gx = vec![T::zero(); bs * c * t];
        for (r, grow) in g.chunks_exact(t_out).enumerate() {
            for (j, &gv) in grow.iter().enumerate() {
                let (lo, hi) = window(j);
                let share = gv / T::from_usize(hi - lo).unwrap();
                for v in &mut gx[r * t + lo..r * t + hi] {
                    *v += share;
                }
            }
        }
        vec![Some(gx)]
    }))
}

/// Tensors holding one selective scan's parameters, in
/// [`SsmParams::arrays`] order and shapes.
pub fn ssm_params_from<T: Scalar>(p: &[&Tensor<T>; 7]) -> Result<SsmParams<T>> {
    let &[di, ds] = p[0].shape() else {
        return Err(Error::arg(format!("selective_scan: a_log shape {:?}", p[0].shape())));
    };
    let &[dr, _] = p[4].shape() else {
        return Err(Error::arg(format!("selective_scan: w_dt_down shape {:?}", p[4].shape())));
    };
    let expected: [&[usize]; 7] = [&[di, ds], &[di], &[ds, di], &[ds, di], &[dr, di], &[di, dr], &[di]];
    for (t, want) in p.iter().zip(expected) {
        if t.shape() != want {
            return Err(mismatch("selective_scan", t.shape(), want));
        }
    }
    let mut sp = SsmParams::zeros(di, ds, dr);
    for (dst, t) in sp.arrays_mut().into_iter().zip(p) {
        *dst = t.to_vec();
    }
    Ok(sp)
}

fn to_time_major<T: Scalar>(x: &[T], d: usize, t: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d * t];
    for i in 0..d {
        for j in 0..t {
            out[j * d + i] = x[i * t + j];
        }
    }
    out
}

fn to_channel_major<T: Scalar>(x: &[T], d: usize, t: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d * t];
    for j in 0..t {
        for i in 0..d {
            out[i * t + j] = x[j * d + i];
        }
    }
    out
}

fn check_scan_input<T: Scalar>(u: &Tensor<T>, sp: &SsmParams<T>) -> Result<(usize, usize)> {
    let (bs, d, t) = dims3("selective_scan", u)?;
    if d != sp.d_inner {
        return Err(mismatch("selective_scan", u.shape(), &[sp.d_inner]));
    }
    Ok((bs, t))
}

/// Selective scan over time of `u [B, d_inner, T]` from a zero state.
pub fn selective_scan<T: Scalar>(u: &Tensor<T>, params: &[&Tensor<T>; 7]) -> Result<Tensor<T>> {
    let sp = ssm_params_from(params)?;
    let (bs, t) = check_scan_input(u, &sp)?;
    let d = sp.d_inner;
    let h0 = SsmState::for_params(&sp);
    let record = super::grad_enabled() && (u.requires_grad() || params.iter().any(|p| p.requires_grad()));
    let mut out = Vec::with_capacity(bs * d * t);
    let mut saved: Vec<(Vec<T>, ScanTrace<T>)> = Vec::new();
    {
        let ud = u.data();
        for i in 0..bs {
            let x = to_time_major(&ud[i * d * t..(i + 1) * d * t], d, t);
            let y = if record {
                let (o, trace) = scan_sequential_traced(&sp, &x, &h0)?;
                saved.push((x, trace));
                o.y
            } else {
                scan_sequential(&sp, &x, &h0)?.y
            };
            out.extend(to_channel_major(&y, d, t));
        }
    }
    let mut parents = vec![u];
    parents.extend(params.iter().copied());
    Ok(Tensor::from_op("selective_scan", out, vec![bs, d, t], &parents, move |g, p| {
        let mut gu = vec![T::zero(); bs * d * t];
        let mut gp = SsmParams::zeros(sp.d_inner, sp.d_state, sp.d_rank);
        for (i, (x, trace)) in saved.iter().enumerate() {
            let gy = to_time_major(&g[i * d * t..(i + 1) * d * t], d, t);
            let sg = scan_backward(&sp, x, &h0, &gy, Some(trace))
                .expect("saved activations match the recorded scan");
            gu[i * d * t..(i + 1) * d * t].copy_from_slice(&to_channel_major(&sg.x, d, t));
            for (acc, v) in gp.arrays_mut().into_iter().zip(sg.params.arrays()) {
                for (a, b) in acc.iter_mut().zip(v.iter()) {
                    *a += *b;
                }
            }
        }
        let mut grads = vec![p[0].requires_grad().then_some(gu)];
        for (t, v) in p[1..].iter().zip(gp.arrays()) {
            grads.push(t.requires_grad().then(|| v.clone()));
        }
        grads
    }))
}

/// Streaming form of [`selective_scan`]: starts from `states` (one per
/// batch item) and leaves them at the end of `u`. Never records gradients.
pub fn selective_scan_with_state<T: Scalar>(
    u: &Tensor<T>,
    params: &SsmParams<T>,
    states: &mut [SsmState<T>],
) -> Result<Tensor<T>> {
    let (bs, t) = check_scan_input(u, params)?;
    if states.len() != bs {
        return Err(Error::contract(format!("{} scan states for a batch of {bs}", states.len())));
    }
    let d = params.d_inner;
    let ud = u.data();
    let mut out = Vec::with_capacity(bs * d * t);
    for (i, st) in states.iter_mut().enumerate() {
        let x = to_time_major(&ud[i * d * t..(i + 1) * d * t], d, t);
        let o = scan_sequential(params, &x, st)?;
        *st = o.h_final;
        out.extend(to_channel_major(&o.y, d, t));
    }
    Tensor::new(out, &[bs, d, t])
}

/// Spectrogram of `x [B, N]` as `[B, 2·bins, frames]`: real parts in the
/// first `bins` channels, imaginary parts in the rest.
pub fn stft<T: Scalar>(x: &Tensor<T>, plan: &StftPlan<T>) -> Result<Tensor<T>> {
    let &[bs, n] = x.shape() else {
        return Err(Error::arg(format!("stft: expected [batch, samples], got {:?}", x.shape())));
    };
    let cfg = plan.config();
    let (w, h, bins) = (cfg.window_size, cfg.hop_length, cfg.bins());
    let frames = cfg.num_frames(n);
    let mut out = vec![T::zero(); bs * 2 * bins * frames];
    {
        let xd = x.data();
        for i in 0..bs {
            let spec = plan.stft(&xd[i * n..(i + 1) * n])?;
            let o = &mut out[i * 2 * bins * frames..(i + 1) * 2 * bins * frames];
            for t in 0..frames {
                for (k, v) in spec.frame(t).iter().enumerate() {
                    o[k * frames + t] = v.re;
                    o[(bins + k) * frames + t] = v.im;
                }
            }
        }
    }
    let plan = plan.clone();
    Ok(Tensor::from_op("stft", out, vec![bs, 2 * bins, frames], &[x], move |g, _| {
        let mut gx = vec![T::zero(); bs * n];
        let mut gpad = vec![T::zero(); cfg.padded_len(n)];
        let mut gbins = vec![Complex::new(T::zero(), T::zero()); bins];
        let mut gframe = vec![T::zero(); w];
        for i in 0..bs {
            let gi = &g[i * 2 * bins * frames..(i + 1) * 2 * bins * frames];
            gpad.fill(T::zero());
            for t in 0..frames {
                for (k, b) in gbins.iter_mut().enumerate() {
                    *b = Complex::new(gi[k * frames + t], gi[(bins + k) * frames + t]);
                }
                plan.analyze_frame_adjoint(&gbins, &mut gframe);
                for (a, &v) in gpad[t * h..t * h + w].iter_mut().zip(&gframe) {
                    *a += v;
                }
            }
            let gxi = &mut gx[i * n..(i + 1) * n];
            for (p, &v) in gpad.iter().enumerate() {
                if let Some(src) = padded_source(p, w / 2, n) {
                    gxi[src] += v;
                }
            }
        }
        vec![Some(gx)]
    }))
}

/// Inverse of [`stft`]: `[B, 2·bins, frames]` to `[B, length]`.
pub fn istft<T: Scalar>(spec: &Tensor<T>, plan: &StftPlan<T>, length: usize) -> Result<Tensor<T>> {
    let (bs, ch, frames) = dims3("istft", spec)?;
    let cfg = plan.config();
    let (w, h, bins) = (cfg.window_size, cfg.hop_length, cfg.bins());
    if ch != 2 * bins || frames == 0 {
        return Err(Error::arg(format!(
            "istft: expected [batch, {}, frames], got {:?}",
            2 * bins,
            spec.shape()
        )));
    }
    let gather = move |s: &[T]| -> Vec<Complex<T>> {
        let mut v = Vec::with_capacity(frames * bins);
        for t in 0..frames {
            for k in 0..bins {
                v.push(Complex::new(s[k * frames + t], s[(bins + k) * frames + t]));
            }
        }
        v
    };
    let mut out = Vec::with_capacity(bs * length);
    {
        let sd = spec.data();
        for i in 0..bs {
            let vals = gather(&sd[i * ch * frames..(i + 1) * ch * frames]);
            out.extend(plan.istft(&vals, frames, length));
        }
    }
    let plan = plan.clone();
    Ok(Tensor::from_op("istft", out, vec![bs, length], &[spec], move |g, _| {
        let env = plan.envelope(frames);
        let floor = T::epsilon();
        let mut gs = vec![T::zero(); bs * ch * frames];
        let mut acc = vec![T::zero(); env.len()];
        let mut gbins = vec![Complex::new(T::zero(), T::zero()); bins];
        for i in 0..bs {
            acc.fill(T::zero());
            for (nidx, &gv) in g[i * length..(i + 1) * length].iter().enumerate() {
                let p = nidx + w / 2;
                if p < acc.len() && env[p] > floor {
                    acc[p] = gv / env[p];
                }
            }
            let gi = &mut gs[i * ch * frames..(i + 1) * ch * frames];
            for t in 0..frames {
                plan.synthesize_frame_adjoint(&acc[t * h..t * h + w], &mut gbins);
                for (k, b) in gbins.iter().enumerate() {
                    gi[k * frames + t] = b.re;
                    gi[(bins + k) * frames + t] = b.im;
                }
            }
        }
        vec![Some(gs)]
    }))
}

/// `ln sqrt(re² + im² + eps²)` of a stacked spectrogram `[B, 2·bins, F]`,
/// giving `[B, bins, F]`.
pub fn log_magnitude<T: Scalar>(spec: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let (bs, ch, f) = dims3("log_magnitude", spec)?;
    if ch % 2 != 0 {
        return Err(Error::arg(format!("log_magnitude: odd channel count {ch}")));
    }
    let bins = ch / 2;
    let e2 = eps * eps;
    let half = T::one() / (T::one() + T::one());
    let mut out = Vec::with_capacity(bs * bins * f);
    {
        let sd = spec.data();
        for i in 0..bs {
            let s = &sd[i * ch * f..(i + 1) * ch * f];
            for k in 0..bins * f {
                let (re, im) = (s[k], s[bins * f + k]);
                out.push(half * (re * re + im * im + e2).ln());
            }
        }
    }
    Ok(Tensor::from_op("log_magnitude", out, vec![bs, bins, f], &[spec], move |g, p| {
        let sd = p[0].data();
        let mut gs = vec![T::zero(); sd.len()];
        for i in 0..bs {
            let s = &sd[i * ch * f..(i + 1) * ch * f];
            let gsi = &mut gs[i * ch * f..(i + 1) * ch * f];
            for k in 0..bins * f {
                let (re, im) = (s[k], s[bins * f + k]);
                let q = g[i * bins * f + k] / (re * re + im * im + e2);
                gsi[k] = q * re;
                gsi[bins * f + k] = q * im;
            }
        }
        vec![Some(gs)]
    }))
}
