//! Adversarial pair for tabular rows: a dense generator, a strided Conv1D
//! discriminator, alternating training, and synthetic-sample emission.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Model};
use crate::seeds;
use crate::tensor::tape::Tape;
use crate::tensor::{adam_step, Activation, AdamHyper, AdamState, Tensor};

/// Adversarial training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// LeakyReLU slope used in both networks.
    pub alpha: f64,
    pub adam: AdamHyper,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            noise_dim: 30,
            epochs: 200,
            batch_size: 128,
            alpha: 0.01,
            adam: AdamHyper::default(),
            seed: 0,
        }
    }
}

/// Per-epoch adversarial diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanEpochRecord {
    pub d_loss: f64,
    pub g_loss: f64,
    /// Fraction of real samples the discriminator scores >= 0.5.
    pub d_real_acc: f64,
    /// Fraction of generated samples the discriminator scores < 0.5.
    pub d_fake_acc: f64,
}

/// Generator + discriminator + training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanBundle {
    pub generator: Model,
    pub discriminator: Model,
    pub history: Vec<GanEpochRecord>,
    noise_dim: usize,
}

impl GanBundle {
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Width of the rows this bundle generates.
    pub fn feature_len(&self) -> usize {
        self.generator.output_shape()[0]
    }
}

/// Noise `[noise_dim]` -> dense(feature_len) -> LeakyReLU(alpha) ->
/// reshape `[feature_len, 1]`.
pub fn build_generator(
    noise_dim: usize,
    feature_len: usize,
    alpha: f64,
    seed: u64,
) -> Result<Model> {
    if noise_dim < 1 || feature_len < 1 {
        return Err(Error::Usage(format!(
            "generator needs noise_dim >= 1 and feature_len >= 1, got {noise_dim}/{feature_len}"
        )));
    }
    Model::build(
        vec![
            LayerSpec::Input {
                shape: vec![noise_dim],
            },
            LayerSpec::Dense {
                units: feature_len,
                activation: Some(Activation::LeakyRelu { alpha }),
            },
            LayerSpec::Reshape {
                shape: vec![feature_len, 1],
            },
        ],
        1,
        seed,
    )
}

/// `[L, 1]` -> Conv1D(64, k3, stride 2, LeakyReLU) -> Conv1D(32, k3, stride 2,
/// LeakyReLU) -> flatten -> dense(1, sigmoid).
pub fn build_discriminator(feature_len: usize, alpha: f64, seed: u64) -> Result<Model> {
    if feature_len < 4 {
        return Err(Error::Usage(format!(
            "discriminator needs feature_len >= 4, got {feature_len}"
        )));
    }
    let l1 = feature_len.div_ceil(2);
    let l2 = l1.div_ceil(2);
    let conv = |filters: usize| LayerSpec::Conv1d {
        filters,
        kernel: 3,
        stride: 2,
        activation: Some(Activation::LeakyRelu { alpha }),
    };
    Model::build(
        vec![
            LayerSpec::Input {
                shape: vec![feature_len, 1],
            },
            conv(64),
            conv(32),
            LayerSpec::Reshape {
                shape: vec![l2 * 32],
            },
            LayerSpec::Dense {
                units: 1,
                activation: Some(Activation::Sigmoid),
            },
        ],
        1,
        seed,
    )
}

/// Empirical adversarial value: `mean(log d_real) + mean(log(1 - d_fake))`.
/// Always <= 0; equals `-2 ln 2` when every probability is 0.5.
pub fn gan_value(d_real_probs: &[f64], d_fake_probs: &[f64]) -> Result<f64> {
    if d_real_probs.is_empty() || d_fake_probs.is_empty() {
        return Err(Error::Usage("gan_value needs nonempty probability lists".into()));
    }
    for &p in d_real_probs.iter().chain(d_fake_probs) {
        if !(0.0 < p && p < 1.0) {
            return Err(Error::Domain(format!(
                "probability {p} outside the open interval (0, 1)"
            )));
        }
    }
    let real: f64 =
        d_real_probs.iter().map(|p| p.ln()).sum::<f64>() / d_real_probs.len() as f64;
    let fake: f64 = d_fake_probs.iter().map(|p| (1.0 - p).ln()).sum::<f64>()
        / d_fake_probs.len() as f64;
    Ok(real + fake)
}

fn normalize_rows(real: &Tensor) -> Result<(usize, usize)> {
    let shape = real.shape();
    match shape.len() {
        2 => Ok((shape[0], shape[1])),
        3 if shape[2] == 1 => Ok((shape[0], shape[1])),
        _ => Err(Error::Shape(format!(
            "real data must be [N, L] or [N, L, 1], got {shape:?}"
        ))),
    }
}

/// Alternating adversarial training on real rows (values expected in [0, 1]).
///
/// Per epoch: one discriminator update on a real batch (label 1) plus a
/// generated batch (label 0) under binary cross-entropy, then one generator
/// update through the frozen discriminator on the non-saturating objective
/// `-log D(G(z))`.
pub fn train_gan(real: &Tensor, config: &GanConfig) -> Result<GanBundle> {
    let (n, feature_len) = normalize_rows(real)?;
    if n == 0 {
        return Err(Error::Usage("cannot train a GAN on an empty dataset".into()));
    }
    let mut generator = build_generator(
        config.noise_dim,
        feature_len,
        config.alpha,
        seeds::derive(config.seed, 1),
    )?;
    let mut discriminator =
        build_discriminator(feature_len, config.alpha, seeds::derive(config.seed, 2))?;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, 3));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, 4));

    let mut g_state = AdamState::new(&generator.params_flat());
    let mut d_state = AdamState::new(&discriminator.params_flat());
    let mut history = Vec::with_capacity(config.epochs);

    let b = config.batch_size.min(n).max(1);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut batch_rng);
        let mut real_batch = Vec::with_capacity(b * feature_len);
        for &i in order.iter().take(b) {
            real_batch.extend_from_slice(&real.data()[i * feature_len..(i + 1) * feature_len]);
        }

        // Discriminator pass: real rows labeled 1, generated rows labeled 0.
        let noise = Tensor::standard_normal(vec![b, config.noise_dim], &mut noise_rng);
        let fakes = generator.forward_raw(&noise, false, 0)?;
        let mut combined = real_batch.clone();
        combined.extend_from_slice(fakes.data());
        let combined = Tensor::new(vec![2 * b, feature_len, 1], combined)?;

        let mut tape = Tape::new();
        let input = tape.leaf(combined);
        let (d_params, raw) = discriminator.forward_on_tape(&mut tape, input, true, 0)?;
        let probs = tape.reshape(raw, vec![2 * b])?;
        let mut targets = vec![1.0; b];
        targets.extend(vec![0.0; b]);
        let d_loss_var = tape.binary_ce(probs, &targets)?;
        let d_loss = tape.scalar_value(d_loss_var)?;
        tape.backward(d_loss_var)?;

        let p = tape.value(probs).data();
        let d_real_acc = p[..b].iter().filter(|v| **v >= 0.5).count() as f64 / b as f64;
        let d_fake_acc = p[b..].iter().filter(|v| **v < 0.5).count() as f64 / b as f64;

        let grads: Vec<Vec<f64>> = d_params.iter().map(|&v| tape.grad(v).to_vec()).collect();
        let mut params = discriminator.params_flat_mut();
        for (p, g) in params.iter_mut().zip(grads) {
            p.set_grad(g)?;
        }
        adam_step(&mut params, &mut d_state, &config.adam)?;

        // Generator pass through the (frozen) updated discriminator.
        let noise = Tensor::standard_normal(vec![b, config.noise_dim], &mut noise_rng);
        let mut tape = Tape::new();
        let z = tape.leaf(noise);
        let (g_params, fake) = generator.forward_on_tape(&mut tape, z, true, 0)?;
        let (_, raw) = discriminator.forward_on_tape(&mut tape, fake, true, 0)?;
        let probs = tape.reshape(raw, vec![b])?;
        let g_loss_var = tape.binary_ce(probs, &vec![1.0; b])?;
        let g_loss = tape.scalar_value(g_loss_var)?;
        tape.backward(g_loss_var)?;

        let grads: Vec<Vec<f64>> = g_params.iter().map(|&v| tape.grad(v).to_vec()).collect();
        let mut params = generator.params_flat_mut();
        for (p, g) in params.iter_mut().zip(grads) {
            p.set_grad(g)?;
        }
        adam_step(&mut params, &mut g_state, &config.adam)?;

        if !(d_loss.is_finite() && g_loss.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite adversarial loss at epoch {epoch}"
            )));
        }
        history.push(GanEpochRecord {
            d_loss,
            g_loss,
            d_real_acc,
            d_fake_acc,
        });
    }

    Ok(GanBundle {
        generator,
        discriminator,
        history,
        noise_dim: config.noise_dim,
    })
}

/// Draw `n` synthetic rows `[n, L, 1]` from the trained generator, clipped
/// to [0, 1] to match min-max-scaled real features. Deterministic per seed.
pub fn generate_synthetic(bundle: &GanBundle, n: usize, seed: u64) -> Result<Tensor> {
    let l = bundle.feature_len();
    if n == 0 {
        return Tensor::new(vec![0, l, 1], Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Tensor::standard_normal(vec![n, bundle.noise_dim], &mut rng);
    let mut out = bundle.generator.forward_raw(&noise, false, 0)?;
    for v in out.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn generator_param_count_and_zero_case() {
        let g = build_generator(30, 30, 0.01, 0).unwrap();
        let (total, _) = crate::nn::count_params(&g);
        assert_eq!(total, 930);

        let mut g = build_generator(30, 30, 0.01, 0).unwrap();
        g.param_mut(1, "weight").unwrap().data_mut().fill(0.0);
        g.param_mut(1, "bias").unwrap().data_mut().fill(0.0);
        let zero_noise = Tensor::zeros(vec![2, 30]);
        let out = g.forward_raw(&zero_noise, false, 0).unwrap();
        assert_eq!(out.shape(), &[2, 30, 1]);
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn generator_fixed_noise_is_deterministic() {
        let g = build_generator(8, 12, 0.01, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noise = Tensor::standard_normal(vec![3, 8], &mut rng);
        let a = g.forward_raw(&noise, false, 0).unwrap();
        let b = g.forward_raw(&noise, false, 0).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn discriminator_shapes_for_30_and_78() {
        let d = build_discriminator(30, 0.01, 0).unwrap();
        let shapes = d.per_layer_output_shapes();
        assert_eq!(shapes[1], vec![15, 64]);
        assert_eq!(shapes[2], vec![8, 32]);
        assert_eq!(shapes[3], vec![256]);
        assert_eq!(shapes[4], vec![1]);

        let d = build_discriminator(78, 0.01, 0).unwrap();
        let (_, per_layer) = crate::nn::count_params(&d);
        assert_eq!(per_layer[1], 256); // 1*3*64 + 64
        assert_eq!(per_layer[2], 6176); // 64*3*32 + 32
    }

    #[test]
    fn discriminator_zero_head_outputs_half() {
        let mut d = build_discriminator(16, 0.01, 1).unwrap();
        d.param_mut(4, "weight").unwrap().data_mut().fill(0.0);
        d.param_mut(4, "bias").unwrap().data_mut().fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform(vec![5, 16, 1], 1.0, &mut rng);
        let p = d.forward_raw(&x, false, 0).unwrap();
        assert!(p.data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn noise_to_probability_shape_chain() {
        for l in [30usize, 78] {
            let g = build_generator(30, l, 0.01, 3).unwrap();
            let d = build_discriminator(l, 0.01, 4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let noise = Tensor::standard_normal(vec![4, 30], &mut rng);
            let fake = g.forward_raw(&noise, false, 0).unwrap();
            assert_eq!(fake.shape(), &[4, l, 1]);
            let p = d.forward_raw(&fake, false, 0).unwrap();
            assert_eq!(p.shape(), &[4, 1]);
            assert!(p.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn gan_value_fixed_point_and_hand_cases() {
        let v = gan_value(&[0.5, 0.5], &[0.5, 0.5, 0.5]).unwrap();
        assert!((v - (-2.0 * std::f64::consts::LN_2)).abs() < 1e-12);

        let v = gan_value(&[0.9], &[0.2]).unwrap();
        assert!((v - (0.9f64.ln() + 0.8f64.ln())).abs() < 1e-12);
        assert!((v - (-0.32850)).abs() < 1e-5);

        // discriminator-optimal limit approaches 0 from below
        let near = gan_value(&[1.0 - 1e-12], &[1e-12]).unwrap();
        assert!(near < 0.0 && near > -1e-9);
    }

    #[test]
    fn gan_value_domain_and_usage_errors() {
        assert!(matches!(
            gan_value(&[], &[0.5]),
            Err(crate::error::Error::Usage(_))
        ));
        for bad in [0.0, 1.0, -0.1, 1.1] {
            assert!(matches!(
                gan_value(&[bad], &[0.5]),
                Err(crate::error::Error::Domain(_))
            ));
        }
    }

    proptest! {
        #[test]
        fn gan_value_is_nonpositive_and_boundary_maximal(
            reals in prop::collection::vec(1e-6f64..=0.999999, 1..20),
            fakes in prop::collection::vec(1e-6f64..=0.999999, 1..20),
        ) {
            let v = gan_value(&reals, &fakes).unwrap();
            prop_assert!(v <= 0.0);
            // pushing all probabilities toward the optimum cannot decrease V
            let best = gan_value(&[0.999999], &[1e-6]).unwrap();
            prop_assert!(v <= best + 1e-12);
        }
    }

    #[test]
    fn train_gan_zero_epochs_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let real = Tensor::uniform(vec![16, 8, 1], 0.5, &mut rng)
            .reshape(vec![16, 8, 1])
            .unwrap();
        let config = GanConfig {
            epochs: 0,
            batch_size: 8,
            seed: 1,
            ..Default::default()
        };
        let bundle = train_gan(&real, &config).unwrap();
        assert!(bundle.history.is_empty());

        let config = GanConfig {
            epochs: 5,
            batch_size: 8,
            seed: 2,
            ..Default::default()
        };
        let a = train_gan(&real, &config).unwrap();
        let b = train_gan(&real, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 5);
        assert!(a
            .history
            .iter()
            .all(|r| r.d_loss.is_finite() && r.g_loss.is_finite()));
    }

    #[test]
    fn train_gan_rejects_empty() {
        let real = Tensor::zeros(vec![0, 8, 1]);
        assert!(matches!(
            train_gan(&real, &GanConfig::default()),
            Err(crate::error::Error::Usage(_))
        ));
    }

    #[test]
    fn generate_synthetic_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let real = Tensor::uniform(vec![32, 10, 1], 0.4, &mut rng);
        let mut data = real.data().to_vec();
        for v in &mut data {
            *v = (*v + 0.5).clamp(0.0, 1.0);
        }
        let real = Tensor::new(vec![32, 10, 1], data).unwrap();
        let config = GanConfig {
            epochs: 10,
            batch_size: 16,
            noise_dim: 6,
            seed: 11,
            ..Default::default()
        };
        let bundle = train_gan(&real, &config).unwrap();

        let empty = generate_synthetic(&bundle, 0, 1).unwrap();
        assert_eq!(empty.shape(), &[0, 10, 1]);

        let out = generate_synthetic(&bundle, 10_000, 2).unwrap();
        assert_eq!(out.shape(), &[10_000, 10, 1]);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));

        let again = generate_synthetic(&bundle, 10_000, 2).unwrap();
        assert_eq!(out.data(), again.data());
    }

    #[test]
    fn discriminator_probability_in_open_interval() {
        let d = build_discriminator(12, 0.01, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let scale = rng.random_range(0.1..50.0);
            let x = Tensor::uniform(vec![3, 12, 1], scale, &mut rng);
            let p = d.forward_raw(&x, false, 0).unwrap();
            assert!(p.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }
}
