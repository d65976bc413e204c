use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use splitsense::preprocess::{ForegroundMask, RoiTensor};
use splitsense::trainer::{initial_params, load_checkpoint, save_checkpoint, train, TrainConfig};
use splitsense::vae::{forward, sample_loss, VaeParams};

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        learning_rate: 3e-3,
        beta_max: 1.0,
        latent_dim: 4,
        seed: 21,
        in_channels: 2,
        spatial: 8,
        channel_widths: vec![2, 4],
        ..TrainConfig::default()
    }
}

fn batch() -> Vec<RoiTensor> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
    (0..4)
        .map(|_| {
            let data = (0..2 * 64).map(|_| rng.gen_range(0.1f32..0.9)).collect();
            RoiTensor::new(data, 8, vec![535.0, 545.0], ForegroundMask::filled(8, 8, true)).unwrap()
        })
        .collect()
}

/// Batch loss at a fixed `beta` with fixed noise.
fn fixed_loss(params: &VaeParams<f32>, rois: &[RoiTensor], eps: &[Vec<f32>], beta: f64) -> f64 {
    rois.iter()
        .zip(eps)
        .map(|(r, e)| sample_loss(&forward(params, r.data(), e).unwrap(), r.data(), beta).total)
        .sum()
}

#[test]
fn two_hundred_steps_reduce_the_loss() {
    let rois = batch();
    let cfg = config(200);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
    let eps: Vec<Vec<f32>> = (0..4)
        .map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let start = initial_params(&cfg).unwrap();
    let ckpt = train(&cfg, &rois).unwrap();
    for beta in [0.0, 1.0] {
        let before = fixed_loss(&start, &rois, &eps, beta);
        let after = fixed_loss(&ckpt.params, &rois, &eps, beta);
        assert!(after < before, "beta {beta}: {before} -> {after}");
    }
    let h = &ckpt.history;
    assert!(h.last().unwrap().recon < h[0].recon);
}

#[test]
fn checkpoint_resumes_identical_scores() {
    let rois = batch();
    let ckpt = train(&config(5), &rois).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&ckpt, dir.path()).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    let zero = vec![vec![0.0f32; 4]; 4];
    assert_eq!(
        fixed_loss(&ckpt.params, &rois, &zero, 1.0),
        fixed_loss(&back.params, &rois, &zero, 1.0)
    );
    assert_eq!(back.history, ckpt.history);
    assert_eq!(back.train, ckpt.train);
}

#[test]
fn thread_count_does_not_change_training() {
    let rois: Vec<RoiTensor> = batch().into_iter().cycle().take(12).collect();
    let cfg = config(3);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| train(&cfg, &rois).unwrap());
    let b = three.install(|| train(&cfg, &rois).unwrap());
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
}
