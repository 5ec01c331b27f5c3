//! Property tests for the type-level invariants.

use aeromamba::autodiff::{Adam, AdamConfig, Tensor};
use aeromamba::dsp::{design_lowpass, AudioBuffer, StftConfig, StftPlan};
use aeromamba::model::{Discriminator, DiscriminatorConfig, GeneratorConfig};
use aeromamba::ssm::{scan_step, SsmParams, SsmState};
use aeromamba::train::{loss_discriminator, loss_generator_total};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn audio_buffer_rejects_ragged_channels(a in 1usize..64, b in 1usize..64, rate in 0u32..3) {
        let ok = AudioBuffer::new(vec![vec![0.0f32; a], vec![0.0f32; b]], rate * 22050);
        prop_assert_eq!(ok.is_ok(), a == b && rate > 0);
    }

    #[test]
    fn stft_bins_and_round_trip(log_w in 2u32..10, ratio in prop::sample::select(vec![2usize, 4]), seed: u64) {
        let w = 1usize << log_w;
        prop_assume!(w / ratio >= 1);
        let config = StftConfig::new(w, w / ratio).unwrap();
        let plan = StftPlan::<f64>::new(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..4 * w);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = plan.stft(&x).unwrap();
        prop_assert_eq!(s.values.len(), s.frames * (w / 2 + 1));
        let y = plan.istft(&s.values, s.frames, n);
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn hop_must_divide_window(w in 4usize..600, h in 1usize..600) {
        let ok = StftConfig::new(w, h).is_ok();
        prop_assert_eq!(ok, w % 2 == 0 && w % h == 0 && w / h >= 2);
    }

    #[test]
    fn lowpass_taps_are_odd_and_symmetric(cutoff in 0.01f64..0.49, half in 5usize..200) {
        let f = design_lowpass::<f64>(cutoff, 2 * half + 1).unwrap();
        let t = f.taps();
        prop_assert_eq!(t.len() % 2, 1);
        prop_assert_eq!(f.group_delay(), (t.len() - 1) / 2);
        for i in 0..t.len() {
            prop_assert!((t[i] - t[t.len() - 1 - i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn ssm_state_size_is_independent_of_steps(di in 1usize..8, ds in 1usize..16, steps in 0usize..300, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SsmParams::<f64>::init(di, ds, 1, &mut rng);
        let mut st = SsmState::for_params(&p);
        for _ in 0..steps {
            let x: Vec<f64> = (0..di).map(|_| rng.random_range(-3.0..3.0)).collect();
            scan_step(&p, &x, &mut st).unwrap();
        }
        prop_assert_eq!(st.h.len(), di * ds);
        prop_assert_eq!(st.position, steps as u64);
        prop_assert!(st.h.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tensor_len_matches_shape(dims in prop::collection::vec(1usize..5, 1..4), extra in 0usize..3) {
        let n: usize = dims.iter().product();
        prop_assert!(Tensor::<f64>::new(vec![0.5; n], &dims).is_ok());
        prop_assert_eq!(Tensor::<f64>::new(vec![0.5; n + extra], &dims).is_ok(), extra == 0);
        let p = Tensor::<f64>::param(vec![0.5; n], &dims).unwrap();
        let loss = aeromamba::autodiff::sum(&aeromamba::autodiff::mul(&p, &p).unwrap());
        loss.backward().unwrap();
        prop_assert_eq!(p.grad().unwrap().len(), n);
    }

    #[test]
    fn adam_moments_match_parameters(sizes in prop::collection::vec(1usize..20, 1..5)) {
        let params: Vec<Tensor<f64>> = sizes.iter().map(|&n| Tensor::param(vec![1.0; n], &[n]).unwrap()).collect();
        let opt = Adam::new(AdamConfig::default(), &params).unwrap();
        prop_assert_eq!(opt.t, 0);
        for (p, (m, v)) in params.iter().zip(opt.m.iter().zip(&opt.v)) {
            prop_assert_eq!(m.len(), p.numel());
            prop_assert_eq!(v.len(), p.numel());
        }
    }

    #[test]
    fn channel_schedule_is_monotone(depth in 1usize..7, base in 1usize..64, cap in 1usize..512) {
        let c = GeneratorConfig { depth, base_channels: base, max_channels: cap, ..GeneratorConfig::default() };
        prop_assert_eq!(c.validate().is_ok(), cap >= base);
        if cap >= base {
            for l in 0..depth {
                prop_assert!(c.width(l) <= c.width(l + 1));
            }
        }
    }

    #[test]
    fn generator_identity_holds(adv in -10.0f64..10.0, rec in 0.0f64..10.0, fmap in 0.0f64..1.0, lambda in 0.0f64..200.0) {
        let r = loss_generator_total(adv, rec, fmap, lambda).unwrap();
        prop_assert!(r.identity_error() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn discriminator_maps_and_hinge(seed: u64, extra in 0usize..4000) {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::default(), seed).unwrap();
        let n = d.config().receptive_field() + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut wave = || Tensor::new((0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(), &[1, n]).unwrap();
        let real = d.forward(&wave()).unwrap();
        let fake = d.forward(&wave()).unwrap();
        prop_assert_eq!(real.len(), 3);
        for s in &real {
            prop_assert_eq!(s.features.len(), 6);
        }
        prop_assert!(loss_discriminator(&real, &fake).unwrap().item().unwrap() >= 0.0);
    }
}
