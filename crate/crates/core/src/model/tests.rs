use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::effort::EffortMetrics;
use crate::nn::{grad_check, layer_norm, linear, ParamStore, ProbeLoss, Tensor};

fn small(mode: ConditioningMode, regions: usize) -> DenoiserConfig {
    DenoiserConfig {
        latent_dim: 8,
        heads: 2,
        layers: 1,
        regions,
        ffn_mult: 2,
        conditioning_mode: mode,
        vocab_size: 3,
        ..DenoiserConfig::desk()
    }
}

fn metrics(regions: usize, rng: &mut impl Rng) -> EffortMetrics {
    EffortMetrics::new(
        (0..regions)
            .map(|_| [rng.random_range(0.0..0.03), rng.random_range(0.5..2.0)])
            .collect(),
    )
    .unwrap()
}

#[test]
fn fresh_denoiser_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Denoiser::new(DenoiserConfig::desk(), 4).unwrap();
    let z = random_latents(5, 7, 32, &mut rng, 2.0);
    let c = metrics(7, &mut rng);
    for t in [0.0, 500.0, 999.0] {
        for text in [None, Some(2)] {
            let y = model.forward(&z, t, Conditioning { text, metrics: &c }).unwrap();
            assert_eq!(y, z);
        }
    }
}

#[test]
fn region_permutation_is_equivariant_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = small(ConditioningMode::Region, 4);
    let model = Denoiser::randomized(cfg, 9, 0.4).unwrap();
    let z = random_latents(3, 4, 8, &mut rng, 1.0);
    let c = metrics(4, &mut rng);
    let y = model
        .forward(
            &z,
            321.0,
            Conditioning {
                text: Some(1),
                metrics: &c,
            },
        )
        .unwrap();

    let perm = [2, 0, 3, 1];
    let pz = permute_latents(&z, &perm);
    let pm = model.permute_regions(&perm).unwrap();
    let py = pm
        .forward(
            &pz,
            321.0,
            Conditioning {
                text: Some(1),
                metrics: &c.permuted(&perm),
            },
        )
        .unwrap();
    assert_eq!(py, permute_latents(&y, &perm));
}

fn permute_latents(z: &Tensor, perm: &[usize]) -> Tensor {
    let (t, g, d) = (z.shape()[0], z.shape()[1], z.shape()[2]);
    let mut out = Tensor::zeros(z.shape());
    for f in 0..t {
        for (i, &p) in perm.iter().enumerate() {
            out.row_mut(f * g + i)
                .copy_from_slice(&z.data()[(f * g + p) * d..(f * g + p + 1) * d]);
        }
    }
    out
}

#[test]
fn output_depends_on_effort_metrics_and_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = random_latents(3, 4, 8, &mut rng, 1.0);
    let c = metrics(4, &mut rng);
    let c2 = c.scaled(1.3, None).unwrap();
    let region = Denoiser::randomized(small(ConditioningMode::Region, 4), 5, 0.4).unwrap();
    let global = Denoiser::randomized(small(ConditioningMode::Global, 4), 5, 0.4).unwrap();
    let run = |m: &Denoiser, c: &EffortMetrics| {
        m.forward(
            &z,
            100.0,
            Conditioning {
                text: Some(0),
                metrics: c,
            },
        )
        .unwrap()
    };
    assert!(run(&region, &c).max_abs_diff(&run(&region, &c2)) > 1e-6);
    assert!(run(&global, &c).max_abs_diff(&run(&global, &c2)) > 1e-6);
    assert!(run(&region, &c).max_abs_diff(&run(&global, &c)) > 1e-6);
    assert!(global.is_global() && !region.is_global());
}

#[test]
fn single_region_metric_attention_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = small(ConditioningMode::Region, 1);
    let mut store = ParamStore::new();
    let ema = EmaAttention::new(&mut store, "ema", &cfg, crate::nn::Init::FanIn, &mut rng).unwrap();
    store.randomize(&mut rng, 0.5);
    let c = metrics(1, &mut rng);
    let m_in = ema.metric_input(&c).unwrap();
    let x = Tensor::from_vec(&[5, 8], (0..40).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let (y, _) = ema.forward(&store, &x, &m_in, None).unwrap();

    // With one key the softmax weight is 1 and every query receives the
    // projected value of the single metric token.
    let lin = |l: &crate::nn::Linear, x: &Tensor| linear(x, store.value(l.weight), store.value(l.bias)).unwrap();
    let mut token = lin(&ema.metric_proj, &m_in);
    token.add_assign(store.value(ema.region_id.unwrap()));
    let token = layer_norm(&token, store.value(ema.norm.gamma), store.value(ema.norm.beta)).unwrap();
    let expect = lin(&ema.attn.o, &lin(&ema.attn.v, &token));
    for i in 0..5 {
        for (a, b) in y.row(i).iter().zip(expect.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_output_projection_makes_residual_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = small(ConditioningMode::Region, 3);
    let mut store = ParamStore::new();
    let ema = EmaAttention::new(&mut store, "ema", &cfg, crate::nn::Init::FanIn, &mut rng).unwrap();
    store.randomize(&mut rng, 0.5);
    store.value_mut(ema.attn.o.weight).fill(0.0);
    store.value_mut(ema.attn.o.bias).fill(0.0);
    let z = random_latents(4, 3, 8, &mut rng, 1.0);
    let (y, _) = ema.apply_residual(&store, &z, &metrics(3, &mut rng), None).unwrap();
    assert_eq!(y, z);
}

#[test]
fn metric_attention_rows_are_stochastic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = Denoiser::randomized(small(ConditioningMode::Region, 4), 1, 0.5).unwrap();
    let z = random_latents(3, 4, 8, &mut rng, 1.0);
    let c = metrics(4, &mut rng);
    let (_, cache) = model
        .forward_cached(
            &z,
            10.0,
            Conditioning {
                text: None,
                metrics: &c,
            },
            None,
        )
        .unwrap();
    let mut rows = 0;
    for layer in 0..1 {
        for a in [
            cache.metric_attention(layer),
            cache.skeletal_attention(layer),
            cache.temporal_attention(layer),
        ] {
            for row in a.all_weight_rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                rows += 1;
            }
        }
    }
    assert!(rows > 0);
}

#[test]
fn denoiser_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for mode in [ConditioningMode::Region, ConditioningMode::Global] {
        let model = Denoiser::randomized(small(mode, 3), 2, 0.3).unwrap();
        let z = random_latents(2, 3, 8, &mut rng, 1.0);
        let c = metrics(3, &mut rng);
        let probe = ProbeLoss::new(z.shape(), &mut rng);
        let cond = Conditioning {
            text: Some(1),
            metrics: &c,
        };
        let with = |s: &ParamStore| {
            let mut m = model.clone();
            m.store = s.clone();
            m
        };
        let report = grad_check(
            &model.store,
            &z,
            1e-5,
            |s, x| probe.value(&with(s).forward(x, 250.0, cond).unwrap()),
            |s, x| {
                let m = with(s);
                let (y, cache) = m.forward_cached(x, 250.0, cond, None).unwrap();
                let mut g = m.store.zero_grads();
                let dx = m.backward(&cache, &probe.grad().reshaped(y.shape()).unwrap(), &mut g);
                (g, dx)
            },
        );
        assert!(report.max_rel_error <= 1e-4, "{mode:?}: {report:?}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let model = Denoiser::randomized(small(ConditioningMode::Region, 3), 8, 0.3).unwrap();
    let ck = model.to_checkpoint(serde_json::Value::Null);
    let back = Denoiser::from_checkpoint(&crate::nn::Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
    assert_eq!(back.store, model.store);
    assert_eq!(back.config, model.config);
}
