use ctiqa_core::dissim::MultiChannelInput;
use ctiqa_core::evaluator::*;
use ctiqa_core::image::Image;
use ctiqa_core::numerics::{gradient_check_with, GradCheck, NumericsError, ParamStore, Stencil, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> EvaluatorConfig {
    EvaluatorConfig {
        backbone: BackboneConfig {
            image_size: 16,
            patch_size: 4,
            in_channels: 3,
            embed_dim: 8,
            depth: 4,
            n_heads: 2,
            mlp_ratio: 2,
            tap_layers: vec![0, 1, 2, 3],
        },
        stage_dims: vec![8, 4],
        tab_blocks: 2,
        swin: SwinConfig { heads: 2, window: 2, mlp_ratio: 2 },
        residual_scale: 0.8,
        head_hidden: 4,
        head_mode: HeadMode::Normalized,
        attention_scale: AttentionScale::Spatial,
    }
}

fn random_input(rng: &mut impl Rng, size: usize) -> MultiChannelInput {
    let mut plane = || Image::from_fn(size, size, |_, _| rng.random::<f32>());
    MultiChannelInput { channels: [plane(), plane(), plane()] }
}

/// Replaces every parameter with random values so no gradient is structurally zero.
fn randomize(store: &mut ParamStore<f64>, rng: &mut impl Rng) {
    for p in store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
}

/// Fills only the zero-initialised tensors, leaving the regular initialisation intact.
fn randomize_zero_tensors(store: &mut ParamStore<f64>, rng: &mut impl Rng) {
    for p in store.iter_mut() {
        if p.value.data().iter().all(|&v| v == 0.0) {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    }
}

fn param(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    store.by_name(name).unwrap_or_else(|| panic!("{name}")).value.data().to_vec()
}

fn to_numerics(e: EvaluatorError) -> NumericsError {
    match e {
        EvaluatorError::Numerics(n) => n,
        other => NumericsError::InvalidArgument(other.to_string()),
    }
}

fn tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn desk_backbone_feature_shape_and_batch_independence() {
    let model = Evaluator::<f32>::new(EvaluatorConfig::default(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random_input(&mut rng, 32), random_input(&mut rng, 32));
    let ab = vit_features(&model, &[a.clone(), b.clone()]).unwrap();
    let ba = vit_features(&model, &[b, a]).unwrap();
    assert_eq!((ab[0].channels, ab[0].height, ab[0].width), (256, 4, 4));
    assert_eq!(ab[0].data.len(), 256 * 16);
    assert_eq!(ab[0], ba[1]);
    assert_eq!(ab[1], ba[0]);
    assert!(vit_features(&model, &[random_input(&mut rng, 16)]).is_err());
}

#[test]
fn taps_concatenate_in_ascending_layer_order() {
    // Same seed, one extra trailing layer: layers 0..3 get identical weights.
    let mut shallow = tiny_config();
    shallow.backbone.tap_layers = vec![0, 1, 2, 3];
    let mut deep = tiny_config();
    deep.backbone.depth = 5;
    deep.backbone.tap_layers = vec![1, 2, 3, 4];
    let (a, b) = (Evaluator::<f32>::new(shallow, 9).unwrap(), Evaluator::<f32>::new(deep, 9).unwrap());
    let input = random_input(&mut ChaCha8Rng::seed_from_u64(2), 16);
    let (fa, fb) =
        (&vit_features(&a, std::slice::from_ref(&input)).unwrap()[0], &vit_features(&b, &[input]).unwrap()[0]);
    let chunk = 8 * 16;
    for k in 0..3 {
        assert_eq!(fa.data[(k + 1) * chunk..(k + 2) * chunk], fb.data[k * chunk..(k + 1) * chunk]);
    }
    assert_ne!(fa.data[..chunk], fa.data[chunk..2 * chunk]);
}

#[test]
fn config_validation() {
    let mut c = EvaluatorConfig::default();
    c.backbone.tap_layers = vec![4, 5, 7, 6];
    assert!(matches!(Evaluator::<f32>::new(c, 0), Err(EvaluatorError::InvalidConfig(_))));
    let mut c = EvaluatorConfig::default();
    c.backbone.tap_layers = vec![5, 6, 7, 8];
    assert!(Evaluator::<f32>::new(c, 0).is_err());
    let mut c = EvaluatorConfig::default();
    c.backbone.tap_layers = vec![5, 6, 7];
    assert!(Evaluator::<f32>::new(c, 0).is_err());
    let mut c = EvaluatorConfig::default();
    c.backbone.image_size = 30;
    assert!(Evaluator::<f32>::new(c, 0).is_err());
    let mut c = EvaluatorConfig::default();
    c.swin.window = 3;
    assert!(matches!(Evaluator::<f32>::new(c, 0), Err(EvaluatorError::WindowMismatch { .. })));
    assert_eq!(EvaluatorConfig::default().residual_scale, 0.8);
}

#[test]
fn encoder_layer_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let layer = EncoderLayer::new(&mut ParamBuilder::new(&mut store, seed), "enc", 8, 2, 2);
        randomize(&mut store, &mut rng);
        let (x, probe) = (tensor(&[5, 8], &mut rng), tensor(&[5, 8], &mut rng));
        let err = gradient_check_with(
            |t, p| {
                let xv = t.constant(x.clone());
                let y = layer.forward(t, p, xv)?;
                let w = t.constant(probe.clone());
                let yw = t.mul(y, w)?;
                t.sum(yw)
            },
            &mut store,
            GradCheck::default(),
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

/// Explicit index loops for the channel-attention block.
fn tab_oracle(store: &ParamStore<f64>, x: &[f64], c: usize, n: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let (wq, wk, wv, bv, wp, bp) = (
        param(store, "t.q.weight"),
        param(store, "t.k.weight"),
        param(store, "t.v.weight"),
        param(store, "t.v.bias"),
        param(store, "t.proj.weight"),
        param(store, "t.proj.bias"),
    );
    let project = |w: &[f64], b: Option<&[f64]>| -> Vec<f64> {
        let mut out = vec![0.0; c * n];
        for i in 0..c {
            for o in 0..n {
                let mut acc = b.map_or(0.0, |b| b[o]);
                for m in 0..n {
                    acc += x[i * n + m] * w[o * n + m];
                }
                out[i * n + o] = acc;
            }
        }
        out
    };
    let (q, k, v) = (project(&wq, None), project(&wk, None), project(&wv, Some(&bv)));
    let mut a = vec![0.0; c * c];
    for i in 0..c {
        let logits: Vec<f64> =
            (0..c).map(|j| (0..n).map(|m| k[i * n + m] * q[j * n + m]).sum::<f64>() / alpha).collect();
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        for j in 0..c {
            a[i * c + j] = (logits[j] - mx).exp() / z;
        }
    }
    let mut mixed = vec![0.0; c * n];
    for i in 0..c {
        for m in 0..n {
            mixed[i * n + m] = (0..c).map(|j| a[i * c + j] * v[j * n + m]).sum();
        }
    }
    let mut out = vec![0.0; c * n];
    for i in 0..c {
        for o in 0..n {
            out[i * n + o] = bp[o] + x[i * n + o] + (0..n).map(|m| mixed[i * n + m] * wp[o * n + m]).sum::<f64>();
        }
    }
    (a, out)
}

#[test]
fn transposed_attention_identity_softmax_and_oracle() {
    let (c, n) = (4, 6);
    for scale in [AttentionScale::Spatial, AttentionScale::SqrtSpatial] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let tab = TransposedAttention::new(&mut ParamBuilder::new(&mut store, 1), "t", n, scale);
        let x = tensor(&[c, n], &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = tab.forward(&mut tape, &p, xv).unwrap();
        assert_eq!(tape.value(y), &x, "zero projection must be the identity");

        randomize(&mut store, &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let a = tab.attention(&mut tape, &p, xv).unwrap();
        let y = tab.forward(&mut tape, &p, xv).unwrap();
        for row in tape.value(a).data().chunks(c) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let alpha = if scale == AttentionScale::Spatial { n as f64 } else { (n as f64).sqrt() };
        let (a_ref, y_ref) = tab_oracle(&store, x.data(), c, n, alpha);
        let max_a = tape.value(a).data().iter().zip(&a_ref).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let max_y = tape.value(y).data().iter().zip(&y_ref).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(max_a < 1e-6 && max_y < 1e-6, "{max_a} {max_y}");
    }
}

#[test]
fn transposed_attention_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        let mut store = ParamStore::<f64>::new();
        let tab = TransposedAttention::new(&mut ParamBuilder::new(&mut store, seed), "t", 16, AttentionScale::Spatial);
        randomize(&mut store, &mut rng);
        let batch: Vec<(Tensor<f64>, Tensor<f64>)> =
            (0..2).map(|_| (tensor(&[8, 16], &mut rng), tensor(&[8, 16], &mut rng))).collect();
        let err = gradient_check_with(
            |t, p| {
                let mut total = None;
                for (x, probe) in &batch {
                    let xv = t.constant(x.clone());
                    let y = tab.forward(t, p, xv)?;
                    let w = t.constant(probe.clone());
                    let yw = t.mul(y, w)?;
                    let s = t.sum(yw)?;
                    total = Some(match total {
                        Some(acc) => t.add(acc, s)?,
                        None => s,
                    });
                }
                Ok(total.expect("non-empty batch"))
            },
            &mut store,
            GradCheck::default(),
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

fn layer_norm_rows(x: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    x.chunks(d)
        .flat_map(|row| {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            row.iter()
                .enumerate()
                .map(move |(j, v)| (v - mean) / (var + 1e-6).sqrt() * gamma[j] + beta[j])
                .collect::<Vec<_>>()
        })
        .collect()
}

fn dense(x: &[f64], rows: usize, w: &[f64], b: Option<&[f64]>, out_f: usize) -> Vec<f64> {
    let in_f = x.len() / rows;
    let mut out = vec![0.0; rows * out_f];
    for r in 0..rows {
        for o in 0..out_f {
            out[r * out_f + o] =
                b.map_or(0.0, |b| b[o]) + (0..in_f).map(|i| x[r * in_f + i] * w[o * in_f + i]).sum::<f64>();
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// One Swin layer with plain global multi-head attention over all tokens.
fn full_attention_oracle(store: &ParamStore<f64>, x: &[f64], l: usize, c: usize, heads: usize) -> Vec<f64> {
    let g = |n: &str| param(store, &format!("s.{n}"));
    let h = layer_norm_rows(x, c, &g("norm1.gamma"), &g("norm1.beta"));
    let qkv = dense(&h, l, &g("qkv.weight"), None, 3 * c);
    let d = c / heads;
    let mut attn = vec![0.0; l * c];
    for hd in 0..heads {
        for i in 0..l {
            let logits: Vec<f64> = (0..l)
                .map(|j| {
                    (0..d).map(|e| qkv[i * 3 * c + hd * d + e] * qkv[j * 3 * c + c + hd * d + e]).sum::<f64>()
                        / (d as f64).sqrt()
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|v| (v - mx).exp()).sum();
            for e in 0..d {
                attn[i * c + hd * d + e] =
                    (0..l).map(|j| (logits[j] - mx).exp() / z * qkv[j * 3 * c + 2 * c + hd * d + e]).sum();
            }
        }
    }
    let proj = dense(&attn, l, &g("proj.weight"), Some(&g("proj.bias")), c);
    let x1: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
    let h2 = layer_norm_rows(&x1, c, &g("norm2.gamma"), &g("norm2.beta"));
    let hidden = g("fc1.bias").len();
    let f1: Vec<f64> = dense(&h2, l, &g("fc1.weight"), Some(&g("fc1.bias")), hidden).into_iter().map(gelu).collect();
    let f2 = dense(&f1, l, &g("fc2.weight"), Some(&g("fc2.bias")), c);
    x1.iter().zip(&f2).map(|(a, b)| a + b).collect()
}

#[test]
fn single_window_equals_full_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = SwinConfig { heads: 4, window: 4, mlp_ratio: 2 };
    let mut store = ParamStore::<f64>::new();
    let layer = SwinLayer::new(&mut ParamBuilder::new(&mut store, 2), "s", 8, (4, 4), &cfg, 0).unwrap();
    randomize(&mut store, &mut rng);
    let x = tensor(&[16, 8], &mut rng);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let y = layer.forward(&mut tape, &p, xv).unwrap();
    let reference = full_attention_oracle(&store, x.data(), 16, 8, 4);
    let err = tape.value(y).data().iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn shifted_mask_separates_wrapped_regions() {
    // 4×4 grid, one 4×4 window, shift 2: four 2×2 regions in the rolled frame.
    let masks = attention_mask::<f64>((4, 4), 4, 2).unwrap();
    assert_eq!(masks.len(), 1);
    let m = masks[0].data();
    let quadrant = |r: usize| (r / 4 / 2) * 2 + (r % 4) / 2;
    for a in 0..16 {
        for b in 0..16 {
            let expected = if quadrant(a) == quadrant(b) { 0.0 } else { -100.0 };
            assert_eq!(m[a * 16 + b], expected);
        }
    }
    assert!(attention_mask::<f64>((4, 4), 4, 0).is_none());
    // Interior windows of a larger grid stay unmasked.
    let big = attention_mask::<f64>((6, 6), 2, 1).unwrap();
    assert!(big[0].data().iter().all(|&v| v == 0.0));
    assert!(big[8].data().iter().any(|&v| v != 0.0));
}

#[test]
fn window_grid_must_divide() {
    let mut store = ParamStore::<f64>::new();
    let cfg = SwinConfig { heads: 2, window: 3, mlp_ratio: 2 };
    let r = ScaleSwinBlock::new(&mut ParamBuilder::new(&mut store, 0), "b", 4, (4, 4), &cfg, 0.8);
    assert!(matches!(r, Err(EvaluatorError::WindowMismatch { grid: (4, 4), window: 3 })));
}

#[test]
fn scale_swin_zero_conv_is_identity_and_gradients_match() {
    let cfg = SwinConfig { heads: 2, window: 2, mlp_ratio: 2 };
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(60 + seed);
        let mut store = ParamStore::<f64>::new();
        let block = ScaleSwinBlock::new(&mut ParamBuilder::new(&mut store, seed), "b", 4, (4, 4), &cfg, 0.8).unwrap();
        let (x, probe) = (tensor(&[4, 16], &mut rng), tensor(&[4, 16], &mut rng));
        if seed == 0 {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape);
            let xv = tape.constant(x.clone());
            let y = block.forward(&mut tape, &p, xv).unwrap();
            assert_eq!(tape.value(y), &x);
        }
        randomize(&mut store, &mut rng);
        let err = gradient_check_with(
            |t, p| {
                let xv = t.constant(x.clone());
                let y = block.forward(t, p, xv)?;
                let w = t.constant(probe.clone());
                let yw = t.mul(y, w)?;
                t.sum(yw)
            },
            &mut store,
            GradCheck::default(),
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn head_aggregation_examples() {
    let s = [1.0, 2.0, 3.0];
    assert_eq!(aggregate_scores(&s, &[0.0, 0.0, 1.0], HeadMode::Normalized).unwrap(), 3.0);
    assert!((aggregate_scores(&s, &[0.4, 0.4, 0.4], HeadMode::Normalized).unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(aggregate_scores(&[2.5], &[0.3], HeadMode::Normalized).unwrap(), 2.5);
    assert!((aggregate_scores(&s, &[0.5, 0.5, 1.0], HeadMode::Literal).unwrap() - 4.5).abs() < 1e-12);
    assert!(matches!(aggregate_scores(&s, &[0.0; 3], HeadMode::Normalized), Err(EvaluatorError::AllZeroWeights(_))));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let n = rng.random_range(1..20);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let k = rng.random_range(0.01..100.0);
        let scaled: Vec<f64> = w.iter().map(|v| v * k).collect();
        let (a, b) = (
            aggregate_scores(&s, &w, HeadMode::Normalized).unwrap(),
            aggregate_scores(&s, &scaled, HeadMode::Normalized).unwrap(),
        );
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn head_gradients_and_consistency() {
    for (i, mode) in [HeadMode::Normalized, HeadMode::Literal].into_iter().cycle().take(10).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(80 + i as u64);
        let mut store = ParamStore::<f64>::new();
        let head = PredictionHead::new(&mut ParamBuilder::new(&mut store, i as u64), "h", 5, 4, mode);
        randomize(&mut store, &mut rng);
        let f = tensor(&[5, 6], &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let fv = tape.constant(f.clone());
        let out = head.forward(&mut tape, &p, fv).unwrap();
        let expected =
            aggregate_scores(tape.value(out.patch_scores).data(), tape.value(out.patch_weights).data(), mode).unwrap();
        assert!((tape.value(out.score).item() - expected).abs() < 1e-12);
        let err = gradient_check_with(
            |t, p| {
                let fv = t.constant(f.clone());
                Ok(head.forward(t, p, fv).map_err(to_numerics)?.score)
            },
            &mut store,
            GradCheck::default(),
        )
        .unwrap();
        assert!(err < 1e-4, "seed {i}: {err}");
    }
}

#[test]
fn whole_evaluator_gradients() {
    for seed in 0..2 {
        let mut rng = ChaCha8Rng::seed_from_u64(90 + seed);
        let mut model = Evaluator::<f64>::new(tiny_config(), seed).unwrap();
        randomize_zero_tensors(model.params_mut(), &mut rng);
        let input = random_input(&mut rng, 16).to_chw();
        let arch = model.clone();
        let err = gradient_check_with(
            |t, p| {
                let x = arch.image_var(t, &input).map_err(to_numerics)?;
                Ok(arch.forward(t, p, x).map_err(to_numerics)?.score)
            },
            model.params_mut(),
            // Some backbone entries sit near 1e-10 where relative error is pure roundoff.
            GradCheck { eps: 1e-4, stencil: Stencil::FivePoint, floor: 1e-8 },
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

fn toy_samples(n: usize, seed: u64) -> Vec<LabeledInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let level = rng.random_range(0.0..1.0f32);
            let chw = (0..3 * 256).map(|_| 0.5 + level * (rng.random::<f32>() - 0.5)).collect();
            LabeledInput { chw, label: 4.0 * (1.0 - level as f64) }
        })
        .collect()
}

#[test]
fn overfits_eight_samples() {
    let data = toy_samples(8, 3);
    let mut model = Evaluator::<f32>::new(tiny_config(), 4).unwrap();
    let cfg = EvalTrainConfig { lr: 2e-3, lr_min: 1e-4, epochs: 500, batch: 8, seed: 1, ..EvalTrainConfig::default() };
    let trace = train_evaluator(&mut model, &data, &[], &cfg, 0).unwrap();
    assert_eq!(trace.len(), 500);
    let inputs: Vec<&[f32]> = data.iter().map(|d| d.chw.as_slice()).collect();
    let preds = predict_all(&model, &inputs, false).unwrap();
    let mse = preds.iter().zip(&data).map(|(p, d)| (p - d.label).powi(2)).sum::<f64>() / 8.0;
    assert!(mse < 0.01, "{mse}");
}

#[test]
fn training_is_deterministic_and_resumable() {
    let (train, val) = (toy_samples(20, 5), toy_samples(6, 6));
    let cfg = EvalTrainConfig { lr: 1e-3, epochs: 4, batch: 8, seed: 2, ..EvalTrainConfig::default() };
    let run = |parallel: bool| {
        let mut m = Evaluator::<f32>::new(tiny_config(), 4).unwrap();
        let c = EvalTrainConfig { parallel, ..cfg.clone() };
        let t = train_evaluator(&mut m, &train, &val, &c, 0).unwrap();
        (t, m)
    };
    let (t1, m1) = run(true);
    let (t2, m2) = run(false);
    assert_eq!(t1, t2);
    assert_eq!(m1.params(), m2.params());
    assert!(t1.iter().all(|r| r.val_srocc.is_some()));
    assert!(t1.windows(2).all(|w| w[1].lr <= w[0].lr));
    assert!(t1.last().unwrap().lr < 0.05 * cfg.lr);

    let mut m3 = Evaluator::<f32>::new(tiny_config(), 4).unwrap();
    let mut resumed = train_evaluator_epochs(&mut m3, &train, &val, &cfg, 0..2).unwrap();
    resumed.extend(train_evaluator(&mut m3, &train, &val, &cfg, 2).unwrap());
    assert_eq!(resumed, t1);
    assert_eq!(m3.params(), m1.params());
}

#[test]
fn training_errors() {
    let mut m = Evaluator::<f32>::new(tiny_config(), 0).unwrap();
    let cfg = EvalTrainConfig::default();
    assert!(matches!(train_evaluator(&mut m, &[], &[], &cfg, 0), Err(EvaluatorError::EmptyDataset)));
    let bad = vec![LabeledInput { chw: vec![0.5; 10], label: 1.0 }];
    assert!(train_evaluator(&mut m, &bad, &[], &cfg, 0).is_err());
    let nan = vec![LabeledInput { chw: vec![f32::NAN; 768], label: 1.0 }];
    assert!(matches!(train_evaluator(&mut m, &nan, &[], &cfg, 0), Err(EvaluatorError::DivergedLoss { epoch: 0 })));
}
