use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

use super::{ScanTrace, SsmParams, SsmState};

/// Gradients of a scan with respect to its inputs, parameters and initial
/// state. `params` reuses the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGrads<T> {
    pub x: Vec<T>,
    pub params: SsmParams<T>,
    pub h0: Vec<T>,
}

/// Reverse-mode gradients of [`scan_sequential`](super::scan_sequential).
///
/// Walks the recurrence right to left carrying the state adjoint. `saved`
/// must come from [`scan_sequential_traced`](super::scan_sequential_traced)
/// on the same `params`, `x` and `h0`.
pub fn scan_backward<T: Scalar>(
    params: &SsmParams<T>,
    x: &[T],
    h0: &SsmState<T>,
    grad_y: &[T],
    saved: Option<&ScanTrace<T>>,
) -> Result<ScanGrads<T>> {
    let trace = saved.ok_or_else(|| Error::contract("scan_backward needs saved forward activations"))?;
    params.validate()?;
    let (di, ds, dr) = (params.d_inner, params.d_state, params.d_rank);
    let len = trace.len;
    let cell = di * ds;
    if x.len() != len * di
        || grad_y.len() != len * di
        || trace.h.len() != (len + 1) * cell
        || trace.delta.len() != len * di
        || trace.dt_low.len() != len * dr
        || h0.h.len() != cell
    {
        return Err(Error::contract(
            "saved activations do not match the scan being differentiated",
        ));
    }

    let a = params.a();
    let mut g = ScanGrads {
        x: vec![T::zero(); x.len()],
        params: SsmParams::zeros(di, ds, dr),
        h0: vec![T::zero(); cell],
    };
    let mut gh = vec![T::zero(); cell];
    let mut g_delta = vec![T::zero(); di];
    let mut g_b = vec![T::zero(); ds];
    let mut g_c = vec![T::zero(); ds];
    let mut g_raw = vec![T::zero(); di];
    let mut g_low = vec![T::zero(); dr];

    for t in (0..len).rev() {
        let xt = &x[t * di..(t + 1) * di];
        let gy = &grad_y[t * di..(t + 1) * di];
        let h_prev = &trace.h[t * cell..(t + 1) * cell];
        let h_cur = &trace.h[(t + 1) * cell..(t + 2) * cell];
        let delta = &trace.delta[t * di..(t + 1) * di];
        let b = &trace.b[t * ds..(t + 1) * ds];
        let c = &trace.c[t * ds..(t + 1) * ds];
        let gx = &mut g.x[t * di..(t + 1) * di];

        g_delta.fill(T::zero());
        g_b.fill(T::zero());
        g_c.fill(T::zero());

        for i in 0..di {
            // y = C·h + D x
            g.params.d_skip[i] += gy[i] * xt[i];
            gx[i] += gy[i] * params.d_skip[i];
            for j in 0..ds {
                let e = i * ds + j;
                g_c[j] += gy[i] * h_cur[e];
                gh[e] += gy[i] * c[j];

                // h = Ā h_prev + Δ B x
                let a_bar = (delta[i] * a[e]).exp();
                let g_abar = gh[e] * h_prev[e];
                let g_bbar = gh[e] * xt[i];
                gx[i] += gh[e] * delta[i] * b[j];

                // Ā = exp(Δ A), A = -exp(A_log) so dA/dA_log = A
                let g_a = g_abar * a_bar * delta[i];
                g.params.a_log[e] += g_a * a[e];
                g_delta[i] += g_abar * a_bar * a[e] + g_bbar * b[j];
                g_b[j] += g_bbar * delta[i];

                gh[e] = gh[e] * a_bar;
            }
        }

        // B = W_B x, C = W_C x
        for j in 0..ds {
            let rb = &mut g.params.w_b[j * di..(j + 1) * di];
            for i in 0..di {
                rb[i] += g_b[j] * xt[i];
            }
            let rc = &mut g.params.w_c[j * di..(j + 1) * di];
            for i in 0..di {
                rc[i] += g_c[j] * xt[i];
            }
            for i in 0..di {
                gx[i] += params.w_b[j * di + i] * g_b[j] + params.w_c[j * di + i] * g_c[j];
            }
        }

        // Δ = softplus(W_up (W_down x) + b_Δ)
        let raw = &trace.dt_raw[t * di..(t + 1) * di];
        let low = &trace.dt_low[t * dr..(t + 1) * dr];
        g_low.fill(T::zero());
        for i in 0..di {
            g_raw[i] = g_delta[i] * sigmoid(raw[i]);
            g.params.b_dt[i] += g_raw[i];
            for r in 0..dr {
                g.params.w_dt_up[i * dr + r] += g_raw[i] * low[r];
                g_low[r] += params.w_dt_up[i * dr + r] * g_raw[i];
            }
        }
        for r in 0..dr {
            for i in 0..di {
                g.params.w_dt_down[r * di + i] += g_low[r] * xt[i];
                gx[i] += params.w_dt_down[r * di + i] * g_low[r];
            }
        }
    }
    g.h0 = gh;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{default_rank, scan_sequential, scan_sequential_traced};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    struct Case {
        p: SsmParams<f64>,
        x: Vec<f64>,
        h0: SsmState<f64>,
        w: Vec<f64>,
    }

    fn case(seed: u64, di: usize, ds: usize, len: usize) -> Case {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = SsmParams::init(di, ds, default_rank(di), &mut rng);
        // larger step sizes than the init so decay gradients are not tiny
        for b in &mut p.b_dt {
            *b = rng.random_range(-1.0..1.0);
        }
        for d in &mut p.d_skip {
            *d = rng.random_range(-1.0..1.0);
        }
        let x = (0..len * di).map(|_| rng.sample(StandardNormal)).collect();
        let mut h0 = SsmState::zeros(di, ds);
        for v in &mut h0.h {
            *v = rng.sample(StandardNormal);
        }
        let w = (0..len * di).map(|_| rng.sample(StandardNormal)).collect();
        Case { p, x, h0, w }
    }

    /// Loss = <w, y>.
    fn loss(p: &SsmParams<f64>, x: &[f64], h0: &SsmState<f64>, w: &[f64]) -> f64 {
        let y = scan_sequential(p, x, h0).unwrap().y;
        y.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
    }

    fn max_fd_error(seed: u64) -> f64 {
        let c = case(seed, 4, 3, 16);
        let (_, trace) = scan_sequential_traced(&c.p, &c.x, &c.h0).unwrap();
        let g = scan_backward(&c.p, &c.x, &c.h0, &c.w, Some(&trace)).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;

        for k in 0..c.x.len() {
            let mut xp = c.x.clone();
            xp[k] += eps;
            let mut xm = c.x.clone();
            xm[k] -= eps;
            let num = (loss(&c.p, &xp, &c.h0, &c.w) - loss(&c.p, &xm, &c.h0, &c.w)) / (2.0 * eps);
            worst = worst.max(rel_err(g.x[k], num));
        }
        for k in 0..c.h0.h.len() {
            let mut hp = c.h0.clone();
            hp.h[k] += eps;
            let mut hm = c.h0.clone();
            hm.h[k] -= eps;
            let num = (loss(&c.p, &c.x, &hp, &c.w) - loss(&c.p, &c.x, &hm, &c.w)) / (2.0 * eps);
            worst = worst.max(rel_err(g.h0[k], num));
        }
        for which in 0..7 {
            let n = c.p.arrays()[which].len();
            for k in 0..n {
                let mut pp = c.p.clone();
                pp.arrays_mut()[which][k] += eps;
                let mut pm = c.p.clone();
                pm.arrays_mut()[which][k] -= eps;
                let num = (loss(&pp, &c.x, &c.h0, &c.w) - loss(&pm, &c.x, &c.h0, &c.w)) / (2.0 * eps);
                worst = worst.max(rel_err(g.params.arrays()[which][k], num));
            }
        }
        worst
    }

    #[test]
    fn matches_finite_differences() {
        for seed in 0..20 {
            let e = max_fd_error(seed);
            assert!(e <= 1e-4, "seed {seed}: max relative error {e}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let c = case(1, 3, 2, 8);
        let (_, trace) = scan_sequential_traced(&c.p, &c.x, &c.h0).unwrap();
        let g = scan_backward(&c.p, &c.x, &c.h0, &vec![0.0; c.x.len()], Some(&trace)).unwrap();
        assert!(g.x.iter().chain(&g.h0).all(|&v| v == 0.0));
        assert!(g.params.arrays().iter().all(|a| a.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn skip_gradient_is_exact() {
        let c = case(2, 3, 2, 10);
        let (_, trace) = scan_sequential_traced(&c.p, &c.x, &c.h0).unwrap();
        let g = scan_backward(&c.p, &c.x, &c.h0, &c.w, Some(&trace)).unwrap();
        for i in 0..3 {
            let mut want = 0.0;
            for t in (0..10).rev() {
                want += c.w[t * 3 + i] * c.x[t * 3 + i];
            }
            assert_eq!(g.params.d_skip[i], want);
        }
    }

    #[test]
    fn missing_trace_is_contract_error() {
        let c = case(3, 2, 2, 4);
        let err = scan_backward(&c.p, &c.x, &c.h0, &c.w, None).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let (_, trace) = scan_sequential_traced(&c.p, &c.x[..4], &c.h0).unwrap();
        assert!(scan_backward(&c.p, &c.x, &c.h0, &c.w, Some(&trace)).is_err());
    }
}
