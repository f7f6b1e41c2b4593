//! End-to-end checks of the auto-encoder: gradient audit at the reference
//! test shape and cross-channel structure learning on toy datasets.

use mftd_core::vae::{
    backward, generate, train, vae_loss, MultiChannelImage, TrainConfig, VaeArchitecture,
    VaeModel,
};

/// Spearman rank correlation between two equal-length samples.
fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(values: &[f64]) -> Vec<f64> {
        let n = values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        let mut ranks = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && values[order[j + 1]] == values[order[i]] {
                j += 1;
            }
            let shared = (i + j) as f64 / 2.0;
            for k in i..=j {
                ranks[order[k]] = shared;
            }
            i = j + 1;
        }
        ranks
    }
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean) * (x - mean);
        vb += (y - mean) * (y - mean);
    }
    cov / (va.sqrt() * vb.sqrt()).max(1e-300)
}

/// Builds `n` two-channel images whose first channel fills columns from the
/// left up to a varying fraction and whose uniform second channel is either
/// proportional or inversely proportional to that fraction.
fn toy_dataset(n: usize, size: usize, proportional: bool) -> Vec<MultiChannelImage> {
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            let fill = 0.2 + 0.6 * t;
            let columns = (fill * size as f64).round() as usize;
            let mut pixels = Vec::with_capacity(2 * size * size);
            for _y in 0..size {
                for x in 0..size {
                    pixels.push(if x < columns { 1.0 } else { 0.0 });
                }
            }
            let value = if proportional { fill } else { 1.0 - fill };
            pixels.extend(std::iter::repeat(value).take(size * size));
            MultiChannelImage::new(2, size, size, pixels)
        })
        .collect()
}

fn decoded_channel_stats(model: &VaeModel, size: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let decoded = generate(model, 2, size, size, 64, seed).unwrap();
    let mut volumes = Vec::new();
    let mut means = Vec::new();
    for image in &decoded {
        let solid = image.channel(0).iter().filter(|p| **p >= 0.5).count() as f64;
        volumes.push(solid / (size * size) as f64);
        let mean = image.channel(1).iter().sum::<f64>() / (size * size) as f64;
        means.push(mean);
    }
    (volumes, means)
}

fn train_toy(proportional: bool) -> f64 {
    let size = 8;
    let dataset = toy_dataset(60, size, proportional);
    let arch = VaeArchitecture { input_dim: 2 * size * size, hidden_dim: 32, latent_dim: 4 };
    let config = TrainConfig {
        max_epochs: 400,
        learning_rate: 2e-3,
        batch_size: 16,
        w_kl: 1e-3,
        patience: 400,
        seed: 11,
    };
    let trained = train(&dataset, arch, &config).unwrap();
    let (volumes, means) = decoded_channel_stats(&trained.model, size, 5);
    spearman(&volumes, &means)
}

#[test]
fn decoded_samples_couple_channels_proportionally() {
    let rho = train_toy(true);
    assert!(rho >= 0.5, "Spearman {rho}");
}

#[test]
fn decoded_samples_couple_channels_inversely() {
    let rho = train_toy(false);
    assert!(rho <= -0.5, "Spearman {rho}");
}

#[test]
fn gradient_audit_at_reference_shape() {
    // Two-channel 4x4 input with a 2-wide latent code.
    let arch = VaeArchitecture { input_dim: 32, hidden_dim: 16, latent_dim: 2 };
    let model = VaeModel::new(arch, 21);
    let x: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).fract().abs()).collect();
    let eps = vec![0.6, -1.3];
    let w_kl = 1e-3;
    let (_, grads) = backward(&model, &x, &eps, w_kl).unwrap();
    let analytic = grads.flatten();
    let base = model.flatten_parameters();
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for i in 0..base.len() {
        let mut params = base.clone();
        params[i] = base[i] + step;
        probe.assign_parameters(&params);
        let up = vae_loss(&probe, &x, &eps, w_kl).unwrap();
        params[i] = base[i] - step;
        probe.assign_parameters(&params);
        let down = vae_loss(&probe, &x, &eps, w_kl).unwrap();
        let fd = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((analytic[i] - fd).abs() / denom);
    }
    assert!(worst < 1e-4, "max relative gradient error {worst}");
}

#[test]
fn full_generation_batch_count() {
    let model = VaeModel::new(
        VaeArchitecture { input_dim: 32, hidden_dim: 8, latent_dim: 2 },
        4,
    );
    let batch = generate(&model, 2, 4, 4, 256, 123).unwrap();
    assert_eq!(batch.len(), 256);
}
