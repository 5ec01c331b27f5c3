//! Selective state-space scan.
//!
//! A diagonal linear recurrence whose step size and input/output
//! projections are functions of the current input:
//!
//! ```text
//! Δ_t = softplus(W_up · (W_down · x_t) + b_Δ)      (per channel, > 0)
//! B_t = W_B · x_t,  C_t = W_C · x_t                 (d_state each)
//! Ā[i,j] = exp(Δ_t[i] · A[i,j]),  A = -exp(A_log)   (zero-order hold)
//! B̄[i,j] = Δ_t[i] · B_t[j]                          (Euler input rule)
//! h_t[i,j] = Ā[i,j] · h_{t-1}[i,j] + B̄[i,j] · x_t[i]
//! y_t[i]   = Σ_j C_t[j] · h_t[i,j] + D[i] · x_t[i]
//! ```
//!
//! Sequences are row-major `L x d_inner`. Three evaluation strategies are
//! provided: [`scan_sequential`], one-step streaming via [`scan_step`]
//! (bit-identical to the sequential fold), and [`scan_chunked`], which
//! evaluates each chunk through the associative combine of
//! `(decay, increment)` pairs. [`scan_backward`] is the analytic adjoint.

mod backward;
mod scan;

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{inverse_softplus, lit, softplus, Scalar};

pub use backward::{scan_backward, ScanGrads};
pub use scan::{
    combine, scan_chunked, scan_sequential, scan_sequential_traced, scan_step, ScanOutput,
    ScanTrace,
};

pub const DEFAULT_D_STATE: usize = 16;

/// Rank of the Δ projection for a given channel count.
pub fn default_rank(d_inner: usize) -> usize {
    (d_inner / 16).max(1)
}

/// Parameters of one selective scan. Matrices are row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams<T> {
    pub d_inner: usize,
    pub d_state: usize,
    pub d_rank: usize,
    /// `d_inner x d_state`; the continuous-time decay is `-exp(a_log)`.
    pub a_log: Vec<T>,
    /// Skip gain, `d_inner`.
    pub d_skip: Vec<T>,
    /// `d_state x d_inner`.
    pub w_b: Vec<T>,
    /// `d_state x d_inner`.
    pub w_c: Vec<T>,
    /// `d_rank x d_inner`.
    pub w_dt_down: Vec<T>,
    /// `d_inner x d_rank`.
    pub w_dt_up: Vec<T>,
    /// `d_inner`.
    pub b_dt: Vec<T>,
}

impl<T: Scalar> SsmParams<T> {
    pub fn zeros(d_inner: usize, d_state: usize, d_rank: usize) -> Self {
        Self {
            d_inner,
            d_state,
            d_rank,
            a_log: vec![T::zero(); d_inner * d_state],
            d_skip: vec![T::zero(); d_inner],
            w_b: vec![T::zero(); d_state * d_inner],
            w_c: vec![T::zero(); d_state * d_inner],
            w_dt_down: vec![T::zero(); d_rank * d_inner],
            w_dt_up: vec![T::zero(); d_inner * d_rank],
            b_dt: vec![T::zero(); d_inner],
        }
    }

    /// Standard initialisation: `A_log[i,j] = ln(j+1)`, `D = 1`, `b_Δ`
    /// chosen so `softplus(b_Δ)` is log-uniform in `[0.001, 0.1]`, and
    /// projections uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(d_inner: usize, d_state: usize, d_rank: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(d_inner, d_state, d_rank);
        for i in 0..d_inner {
            for j in 0..d_state {
                p.a_log[i * d_state + j] = lit(((j + 1) as f64).ln());
            }
        }
        p.d_skip.fill(T::one());
        let uniform = |rng: &mut R, n: usize, fan_in: usize| -> Vec<T> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| lit(rng.random_range(-bound..bound))).collect()
        };
        p.w_b = uniform(rng, d_state * d_inner, d_inner);
        p.w_c = uniform(rng, d_state * d_inner, d_inner);
        p.w_dt_down = uniform(rng, d_rank * d_inner, d_inner);
        p.w_dt_up = uniform(rng, d_inner * d_rank, d_rank);
        let (lo, hi) = (0.001f64.ln(), 0.1f64.ln());
        p.b_dt = (0..d_inner)
            .map(|_| inverse_softplus(lit::<T>(rng.random_range(lo..hi).exp())))
            .collect();
        p
    }

    pub fn validate(&self) -> Result<()> {
        let (di, ds, dr) = (self.d_inner, self.d_state, self.d_rank);
        let checks = [
            ("a_log", self.a_log.len(), di * ds),
            ("d_skip", self.d_skip.len(), di),
            ("w_b", self.w_b.len(), ds * di),
            ("w_c", self.w_c.len(), ds * di),
            ("w_dt_down", self.w_dt_down.len(), dr * di),
            ("w_dt_up", self.w_dt_up.len(), di * dr),
            ("b_dt", self.b_dt.len(), di),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::arg(format!("ssm {name} has {got} values, expected {want}")));
            }
        }
        if di == 0 || ds == 0 || dr == 0 {
            return Err(Error::arg("ssm dimensions must be positive"));
        }
        Ok(())
    }

    /// Continuous-time decay `A = -exp(A_log)`, strictly negative.
    pub fn a(&self) -> Vec<T> {
        self.a_log.iter().map(|&v| -v.exp()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.a_log.len()
            + self.d_skip.len()
            + self.w_b.len()
            + self.w_c.len()
            + self.w_dt_down.len()
            + self.w_dt_up.len()
            + self.b_dt.len()
    }

    /// Mutable views of every parameter array, in a fixed order.
    pub fn arrays_mut(&mut self) -> [&mut Vec<T>; 7] {
        [
            &mut self.a_log,
            &mut self.d_skip,
            &mut self.w_b,
            &mut self.w_c,
            &mut self.w_dt_down,
            &mut self.w_dt_up,
            &mut self.b_dt,
        ]
    }

    pub fn arrays(&self) -> [&Vec<T>; 7] {
        [
            &self.a_log,
            &self.d_skip,
            &self.w_b,
            &self.w_c,
            &self.w_dt_down,
            &self.w_dt_up,
            &self.b_dt,
        ]
    }
}

/// Recurrent hidden state of one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmState<T> {
    pub d_inner: usize,
    pub d_state: usize,
    /// `d_inner x d_state`.
    pub h: Vec<T>,
    /// Steps consumed so far.
    pub position: u64,
}

impl<T: Scalar> SsmState<T> {
    pub fn zeros(d_inner: usize, d_state: usize) -> Self {
        Self {
            d_inner,
            d_state,
            h: vec![T::zero(); d_inner * d_state],
            position: 0,
        }
    }

    pub fn for_params(params: &SsmParams<T>) -> Self {
        Self::zeros(params.d_inner, params.d_state)
    }

    fn check(&self, params: &SsmParams<T>) -> Result<()> {
        if self.d_inner != params.d_inner
            || self.d_state != params.d_state
            || self.h.len() != params.d_inner * params.d_state
        {
            return Err(Error::arg(format!(
                "state {}x{} does not match params {}x{}",
                self.d_inner, self.d_state, params.d_inner, params.d_state
            )));
        }
        Ok(())
    }

    /// Fixed-size little-endian encoding: dims, position, then `h`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(&(self.d_inner as u32).to_le_bytes());
        out.extend_from_slice(&(self.d_state as u32).to_le_bytes());
        out.extend_from_slice(&self.position.to_le_bytes());
        for v in &self.h {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes()[..]);
        }
        out
    }

    pub fn serialized_len(&self) -> usize {
        16 + 8 * self.h.len()
    }

    /// Bytes held by the state in memory.
    pub fn memory_bytes(&self) -> usize {
        self.h.len() * T::BYTES + std::mem::size_of::<u64>()
    }

    /// Debug dump as `channel,state_index,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "channel,state_index,value")?;
        for i in 0..self.d_inner {
            for j in 0..self.d_state {
                writeln!(w, "{i},{j},{}", self.h[i * self.d_state + j])?;
            }
        }
        Ok(())
    }
}

/// Input-dependent step size and projections for one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<T> {
    /// `d_inner`, strictly positive.
    pub delta: Vec<T>,
    /// `d_state`.
    pub b: Vec<T>,
    /// `d_state`.
    pub c: Vec<T>,
}

/// Scratch for one projection, including the pre-activation values the
/// backward pass needs.
#[derive(Clone, Debug)]
pub(crate) struct ProjectionScratch<T> {
    pub dt_low: Vec<T>,
    pub dt_raw: Vec<T>,
    pub delta: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> ProjectionScratch<T> {
    pub fn new(p: &SsmParams<T>) -> Self {
        Self {
            dt_low: vec![T::zero(); p.d_rank],
            dt_raw: vec![T::zero(); p.d_inner],
            delta: vec![T::zero(); p.d_inner],
            b: vec![T::zero(); p.d_state],
            c: vec![T::zero(); p.d_state],
        }
    }
}

/// Shared projection kernel. Every scan mode goes through this function
/// so the arithmetic order is identical.
#[inline]
pub(crate) fn project_into<T: Scalar>(p: &SsmParams<T>, x: &[T], s: &mut ProjectionScratch<T>) {
    let di = p.d_inner;
    for r in 0..p.d_rank {
        let row = &p.w_dt_down[r * di..(r + 1) * di];
        let mut acc = T::zero();
        for (w, v) in row.iter().zip(x) {
            acc += *w * *v;
        }
        s.dt_low[r] = acc;
    }
    for i in 0..di {
        let row = &p.w_dt_up[i * p.d_rank..(i + 1) * p.d_rank];
        let mut acc = T::zero();
        for (w, v) in row.iter().zip(&s.dt_low) {
            acc += *w * *v;
        }
        s.dt_raw[i] = acc + p.b_dt[i];
        s.delta[i] = softplus(s.dt_raw[i]);
    }
    for j in 0..p.d_state {
        let rb = &p.w_b[j * di..(j + 1) * di];
        let rc = &p.w_c[j * di..(j + 1) * di];
        let (mut ab, mut ac) = (T::zero(), T::zero());
        for ((wb, wc), v) in rb.iter().zip(rc).zip(x) {
            ab += *wb * *v;
            ac += *wc * *v;
        }
        s.b[j] = ab;
        s.c[j] = ac;
    }
}

fn check_finite<T: Scalar>(x: &[T], what: &str) -> Result<()> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(what, format!("non-finite input at index {i}")));
    }
    Ok(())
}

/// `Δ_t`, `B_t`, `C_t` for one input vector.
pub fn selective_project<T: Scalar>(params: &SsmParams<T>, x_t: &[T]) -> Result<Projection<T>> {
    params.validate()?;
    if x_t.len() != params.d_inner {
        return Err(Error::arg(format!(
            "selective_project: input has {} channels, expected {}",
            x_t.len(),
            params.d_inner
        )));
    }
    check_finite(x_t, "selective_project")?;
    let mut s = ProjectionScratch::new(params);
    project_into(params, x_t, &mut s);
    Ok(Projection {
        delta: s.delta,
        b: s.b,
        c: s.c,
    })
}

/// Discretized transition and input matrices, each `d_inner x d_state`.
#[derive(Clone, Debug, PartialEq)]
pub struct Discretized<T> {
    pub a_bar: Vec<T>,
    pub b_bar: Vec<T>,
}

/// `Ā = exp(Δ ⊙ A)` (zero-order hold) and `B̄ = Δ ⊗ B`.
pub fn discretize<T: Scalar>(delta: &[T], a: &[T], b: &[T]) -> Result<Discretized<T>> {
    let (di, ds) = (delta.len(), b.len());
    if a.len() != di * ds {
        return Err(Error::arg(format!(
            "discretize: A has {} entries, expected {di}x{ds}",
            a.len()
        )));
    }
    if let Some(i) = delta.iter().position(|d| !(*d > T::zero()) || !d.is_finite()) {
        return Err(Error::numeric("discretize", format!("step size at channel {i} is not positive")));
    }
    let mut a_bar = vec![T::zero(); di * ds];
    let mut b_bar = vec![T::zero(); di * ds];
    for i in 0..di {
        for j in 0..ds {
            a_bar[i * ds + j] = (delta[i] * a[i * ds + j]).exp();
            b_bar[i * ds + j] = delta[i] * b[j];
        }
    }
    Ok(Discretized { a_bar, b_bar })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = SsmParams::<f64>::init(8, 4, 1, &mut rng);
        p.b_dt.fill(0.0);
        let proj = selective_project(&p, &[0.0; 8]).unwrap();
        for d in &proj.delta {
            assert!((d - std::f64::consts::LN_2).abs() < 1e-15);
        }
        assert!(proj.b.iter().chain(&proj.c).all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_rejected() {
        let p = SsmParams::<f64>::zeros(2, 2, 1);
        let err = selective_project(&p, &[f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
        assert!(selective_project(&p, &[0.0]).is_err());
    }

    #[test]
    fn discretize_half_decay() {
        let d = discretize(&[1.0f64], &[-std::f64::consts::LN_2], &[3.0]).unwrap();
        assert!((d.a_bar[0] - 0.5).abs() < 1e-15);
        assert_eq!(d.b_bar[0], 3.0);
    }

    #[test]
    fn discretize_small_step_limit() {
        let d = discretize(&[1e-300f64], &[-5.0, -1.0], &[2.0, 1.0]).unwrap();
        assert!(d.a_bar.iter().all(|&a| a == 1.0));
        assert!(d.b_bar.iter().all(|&b| b.abs() < 1e-299));
        assert!(discretize(&[0.0f64], &[-1.0], &[1.0]).is_err());
    }

    #[test]
    fn init_shapes_and_timescales() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = SsmParams::<f64>::init(32, 16, default_rank(32), &mut rng);
        p.validate().unwrap();
        assert_eq!(p.d_rank, 2);
        let a = p.a();
        assert!((a[15] + 16.0).abs() < 1e-12);
        assert!((a[0] + 1.0).abs() < 1e-12);
        for &b in &p.b_dt {
            let dt = softplus(b);
            assert!((0.001 - 1e-12..=0.1 + 1e-12).contains(&dt), "{dt}");
        }
    }

    #[test]
    fn csv_dump() {
        let mut s = SsmState::<f64>::zeros(2, 2);
        s.h[3] = 1.5;
        let mut out = Vec::new();
        s.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.ends_with("1,1,1.5\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn step_size_always_positive(seed in 0u64..1_000_000, scale in 0.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = SsmParams::<f64>::init(4, 3, 1, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-scale..=scale)).collect();
            let proj = selective_project(&p, &x).unwrap();
            prop_assert!(proj.delta.iter().all(|&d| d > 0.0));
            let d = discretize(&proj.delta, &p.a(), &proj.b).unwrap();
            prop_assert!(d.a_bar.iter().all(|&a| a > 0.0 && a <= 1.0));
        }
    }
}
