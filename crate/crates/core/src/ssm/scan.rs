use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{check_finite, project_into, ProjectionScratch, SsmParams, SsmState};

#[derive(Clone, Debug, PartialEq)]
pub struct ScanOutput<T> {
    /// `L x d_inner`.
    pub y: Vec<T>,
    pub h_final: SsmState<T>,
}

/// Forward activations kept for [`scan_backward`](super::scan_backward).
#[derive(Clone, Debug, PartialEq)]
pub struct ScanTrace<T> {
    pub len: usize,
    /// `L x d_rank`.
    pub dt_low: Vec<T>,
    /// Pre-softplus step size, `L x d_inner`.
    pub dt_raw: Vec<T>,
    /// `L x d_inner`.
    pub delta: Vec<T>,
    /// `L x d_state`.
    pub b: Vec<T>,
    /// `L x d_state`.
    pub c: Vec<T>,
    /// States `h_0 ..= h_L`, each `d_inner x d_state`.
    pub h: Vec<T>,
}

fn check_sequence<T: Scalar>(params: &SsmParams<T>, x: &[T], h0: &SsmState<T>) -> Result<usize> {
    params.validate()?;
    h0.check(params)?;
    if x.is_empty() || x.len() % params.d_inner != 0 {
        return Err(Error::arg(format!(
            "scan input of {} values is not a non-empty multiple of d_inner={}",
            x.len(),
            params.d_inner
        )));
    }
    check_finite(x, "scan")?;
    Ok(x.len() / params.d_inner)
}

/// Associative combine of two affine maps `h -> a h + b`, applying
/// `first` then `second`: `(a1, b1) ∘ (a2, b2) = (a1 a2, a2 b1 + b2)`.
#[inline]
pub fn combine<T: Scalar>(first: (T, T), second: (T, T)) -> (T, T) {
    (first.0 * second.0, second.0 * first.1 + second.1)
}

/// One recurrence step. All sequential and streaming paths call this, so
/// their results agree bit for bit.
#[inline]
fn step_core<T: Scalar>(
    params: &SsmParams<T>,
    a: &[T],
    x: &[T],
    h: &mut [T],
    y: &mut [T],
    s: &mut ProjectionScratch<T>,
) {
    project_into(params, x, s);
    let ds = params.d_state;
    for i in 0..params.d_inner {
        let dt = s.delta[i];
        let xi = x[i];
        let hi = &mut h[i * ds..(i + 1) * ds];
        let ai = &a[i * ds..(i + 1) * ds];
        let mut acc = T::zero();
        for j in 0..ds {
            let a_bar = (dt * ai[j]).exp();
            let inc = (dt * s.b[j]) * xi;
            hi[j] = a_bar * hi[j] + inc;
            acc += s.c[j] * hi[j];
        }
        y[i] = acc + params.d_skip[i] * xi;
    }
}

/// Strict left-to-right evaluation.
pub fn scan_sequential<T: Scalar>(
    params: &SsmParams<T>,
    x: &[T],
    h0: &SsmState<T>,
) -> Result<ScanOutput<T>> {
    let len = check_sequence(params, x, h0)?;
    let di = params.d_inner;
    let a = params.a();
    let mut s = ProjectionScratch::new(params);
    let mut h = h0.h.clone();
    let mut y = vec![T::zero(); x.len()];
    for t in 0..len {
        step_core(params, &a, &x[t * di..(t + 1) * di], &mut h, &mut y[t * di..(t + 1) * di], &mut s);
    }
    Ok(ScanOutput {
        y,
        h_final: SsmState {
            d_inner: di,
            d_state: params.d_state,
            h,
            position: h0.position + len as u64,
        },
    })
}

/// [`scan_sequential`] that also records what the backward pass needs.
pub fn scan_sequential_traced<T: Scalar>(
    params: &SsmParams<T>,
    x: &[T],
    h0: &SsmState<T>,
) -> Result<(ScanOutput<T>, ScanTrace<T>)> {
    let len = check_sequence(params, x, h0)?;
    let (di, ds, dr) = (params.d_inner, params.d_state, params.d_rank);
    let a = params.a();
    let mut s = ProjectionScratch::new(params);
    let mut trace = ScanTrace {
        len,
        dt_low: Vec::with_capacity(len * dr),
        dt_raw: Vec::with_capacity(len * di),
        delta: Vec::with_capacity(len * di),
        b: Vec::with_capacity(len * ds),
        c: Vec::with_capacity(len * ds),
        h: Vec::with_capacity((len + 1) * di * ds),
    };
    trace.h.extend_from_slice(&h0.h);
    let mut h = h0.h.clone();
    let mut y = vec![T::zero(); x.len()];
    for t in 0..len {
        step_core(params, &a, &x[t * di..(t + 1) * di], &mut h, &mut y[t * di..(t + 1) * di], &mut s);
        trace.dt_low.extend_from_slice(&s.dt_low);
        trace.dt_raw.extend_from_slice(&s.dt_raw);
        trace.delta.extend_from_slice(&s.delta);
        trace.b.extend_from_slice(&s.b);
        trace.c.extend_from_slice(&s.c);
        trace.h.extend_from_slice(&h);
    }
    let out = ScanOutput {
        y,
        h_final: SsmState {
            d_inner: di,
            d_state: ds,
            h,
            position: h0.position + len as u64,
        },
    };
    Ok((out, trace))
}

/// Advances `state` by one input vector and returns the output.
///
/// The state is overwritten in place; its size never changes.
pub fn scan_step<T: Scalar>(params: &SsmParams<T>, x_t: &[T], state: &mut SsmState<T>) -> Result<Vec<T>> {
    params.validate()?;
    state.check(params)?;
    if x_t.len() != params.d_inner {
        return Err(Error::arg(format!(
            "scan_step input has {} channels, expected {}",
            x_t.len(),
            params.d_inner
        )));
    }
    check_finite(x_t, "scan_step")?;
    let a = params.a();
    let mut s = ProjectionScratch::new(params);
    let mut y = vec![T::zero(); params.d_inner];
    step_core(params, &a, x_t, &mut state.h, &mut y, &mut s);
    state.position += 1;
    Ok(y)
}

/// Chunked evaluation.
///
/// Inside a chunk, every step's `(Ā, B̄ x)` pair is formed independently,
/// then an in-place inclusive scan (doubling offsets) composes them with
/// [`combine`]; each state is the composed map applied to the chunk-entry
/// state. Chunk-entry states are chained sequentially. Results match
/// [`scan_sequential`] up to floating-point reassociation, and exactly
/// when `chunk_len == 1`.
pub fn scan_chunked<T: Scalar>(
    params: &SsmParams<T>,
    x: &[T],
    h0: &SsmState<T>,
    chunk_len: usize,
) -> Result<ScanOutput<T>> {
    if chunk_len == 0 {
        return Err(Error::arg("chunk length must be at least 1"));
    }
    let len = check_sequence(params, x, h0)?;
    let (di, ds) = (params.d_inner, params.d_state);
    let a = params.a();
    let cell = di * ds;
    let mut s = ProjectionScratch::new(params);
    let mut y = vec![T::zero(); x.len()];
    let mut entry = h0.h.clone();

    let cap = chunk_len.min(len);
    let mut decay = vec![T::zero(); cap * cell];
    let mut incr = vec![T::zero(); cap * cell];
    let mut cs = vec![T::zero(); cap * ds];
    let mut h = vec![T::zero(); cell];

    let mut start = 0;
    while start < len {
        let n = chunk_len.min(len - start);
        // independent per-step pairs
        for k in 0..n {
            let xt = &x[(start + k) * di..(start + k + 1) * di];
            project_into(params, xt, &mut s);
            cs[k * ds..(k + 1) * ds].copy_from_slice(&s.c);
            for i in 0..di {
                let dt = s.delta[i];
                for j in 0..ds {
                    let idx = k * cell + i * ds + j;
                    decay[idx] = (dt * a[i * ds + j]).exp();
                    incr[idx] = (dt * s.b[j]) * xt[i];
                }
            }
        }
        // inclusive prefix composition
        let mut offset = 1;
        while offset < n {
            for k in (offset..n).rev() {
                let (lo, hi) = decay.split_at_mut(k * cell);
                let (ilo, ihi) = incr.split_at_mut(k * cell);
                let prev = (k - offset) * cell;
                for e in 0..cell {
                    let (da, db) = combine((lo[prev + e], ilo[prev + e]), (hi[e], ihi[e]));
                    hi[e] = da;
                    ihi[e] = db;
                }
            }
            offset *= 2;
        }
        // apply composed maps to the entry state
        for k in 0..n {
            let t = start + k;
            for e in 0..cell {
                h[e] = decay[k * cell + e] * entry[e] + incr[k * cell + e];
            }
            let c = &cs[k * ds..(k + 1) * ds];
            for i in 0..di {
                let mut acc = T::zero();
                for j in 0..ds {
                    acc += c[j] * h[i * ds + j];
                }
                y[t * di + i] = acc + params.d_skip[i] * x[t * di + i];
            }
        }
        entry.copy_from_slice(&h);
        start += n;
    }
    Ok(ScanOutput {
        y,
        h_final: SsmState {
            d_inner: di,
            d_state: ds,
            h: entry,
            position: h0.position + len as u64,
        },
    })
}
