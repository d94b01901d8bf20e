//! Gradient correctness of the neural operator against central differences,
//! on small random configurations.

#![allow(clippy::needless_range_loop)]

use meltwin_core::fno::grad::{fd_input_grads, fd_param_grads, max_rel_err};
use meltwin_core::fno::{
    loss_and_gradients, Activation, FnoConfig, SurrogateModel, TrainSample,
};
use meltwin_core::params::{ParamBounds, ProcessParams};
use meltwin_core::plane::{PlaneGrid, PlaneKind};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_grid(n0: usize, n1: usize) -> PlaneGrid {
    PlaneGrid {
        kind: PlaneKind::Xy,
        n0,
        n1,
        start0_um: -500.0,
        step0_um: 1000.0 / (n0 - 1) as f64,
        start1_um: -200.0,
        step1_um: 400.0 / (n1 - 1) as f64,
    }
}

fn small_config(seed: u64, width: usize, modes: usize) -> FnoConfig {
    FnoConfig {
        layers: 2,
        width,
        modes0: modes,
        modes1: modes,
        proj_width: 5,
        seed,
        ..FnoConfig::default()
    }
}

fn random_batch(model: &SurrogateModel, rng: &mut ChaCha8Rng, n: usize) -> Vec<TrainSample> {
    let nodes = model.grid.len();
    (0..n)
        .map(|_| TrainSample {
            params: ProcessParams::new(
                rng.random_range(120.0..480.0),
                rng.random_range(0.6..2.4),
                rng.random_range(310.0..530.0),
                rng.random_range(0.12..0.58),
            ),
            target_k: (0..nodes).map(|_| rng.random_range(300.0..2500.0)).collect(),
        })
        .collect()
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut worst = 0.0f64;
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let grid = small_grid(9 + seed as usize, 7);
        let config = small_config(seed, 4, 3);
        let model = SurrogateModel::new(config, grid, ParamBounds::default()).unwrap();
        let samples = random_batch(&model, &mut rng, 2);
        let batch: Vec<&TrainSample> = samples.iter().collect();
        let mut grads = vec![0.0; model.params_flat.len()];
        loss_and_gradients(&model, &batch, &mut grads).unwrap();
        let numeric = fd_param_grads(&model, &batch, 2e-5).unwrap();
        let err = max_rel_err(&grads, &numeric, 1e-6);
        worst = worst.max(err);
        assert!(err < 1e-4, "seed {seed}: param gradient rel err {err}");
    }
    println!("worst parameter-gradient rel err: {worst:.3e}");
}

#[test]
fn input_gradients_match_finite_differences() {
    for seed in 0..4u64 {
        let grid = small_grid(8, 6);
        let config = small_config(40 + seed, 4, 3);
        let model = SurrogateModel::new(config, grid, ParamBounds::default()).unwrap();
        let p = ProcessParams::new(260.0 + 10.0 * seed as f64, 1.3, 400.0, 0.3);
        // scalar functional: mean predicted temperature
        let (_, cache) = model.forward_cached(&p).unwrap();
        let nodes = model.grid.len();
        let d_temp = vec![1.0 / nodes as f64; nodes];
        let analytic = model.backward(&cache, &d_temp, None).unwrap();
        let numeric = fd_input_grads(
            |q| {
                let s = model.forward(q)?;
                Ok(s.values_k.iter().sum::<f64>() / nodes as f64)
            },
            &p,
            [1e-3, 1e-5, 1e-3, 1e-6],
        )
        .unwrap();
        let err = max_rel_err(&analytic, &numeric, 1e-8);
        assert!(err < 1e-4, "seed {seed}: input gradient rel err {err}");
    }
}

#[test]
fn zero_loss_zero_gradients_at_minimum() {
    let grid = small_grid(8, 6);
    let model = SurrogateModel::new(small_config(7, 4, 3), grid, ParamBounds::default()).unwrap();
    let mut model = model;
    // identity output norm so target == output holds bitwise after the
    // normalization round trip
    model.out_norm = meltwin_core::fno::model::OutputNorm { offset_k: 0.0, scale_k: 1.0 };
    let p = ProcessParams::new(300.0, 1.5, 400.0, 0.3);
    let target = model.forward(&p).unwrap().values_k;
    let sample = TrainSample { params: p, target_k: target };
    let mut grads = vec![0.0; model.params_flat.len()];
    let stats = loss_and_gradients(&model, &[&sample], &mut grads).unwrap();
    assert_eq!(stats.mse, 0.0);
    assert!(grads.iter().all(|&g| g == 0.0));
}

#[test]
fn duplicating_batch_members_changes_nothing() {
    let grid = small_grid(8, 6);
    let model = SurrogateModel::new(small_config(9, 4, 3), grid, ParamBounds::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples = random_batch(&model, &mut rng, 2);
    let single: Vec<&TrainSample> = samples.iter().collect();
    let doubled: Vec<&TrainSample> = samples.iter().chain(samples.iter()).collect();
    let mut g1 = vec![0.0; model.params_flat.len()];
    let mut g2 = vec![0.0; model.params_flat.len()];
    let l1 = loss_and_gradients(&model, &single, &mut g1).unwrap();
    let l2 = loss_and_gradients(&model, &doubled, &mut g2).unwrap();
    assert!((l1.mse - l2.mse).abs() < 1e-15 * l1.mse.abs().max(1.0));
    for (a, b) in g1.iter().zip(g2.iter()) {
        assert!((a - b).abs() < 1e-12 * a.abs().max(1e-9), "{a} vs {b}");
    }
}

#[test]
fn disconnected_channel_has_zero_gradient() {
    // zero every lifting weight on the speed channel: d(anything)/dV must be 0
    let grid = small_grid(8, 6);
    let mut model =
        SurrogateModel::new(small_config(11, 4, 3), grid, ParamBounds::default()).unwrap();
    let lay = model.layout;
    for ch in 0..model.config.width {
        model.params_flat[lay.lift_w + ch * meltwin_core::fno::model::INPUT_CHANNELS + 1] = 0.0;
    }
    let p = ProcessParams::new(300.0, 1.5, 400.0, 0.3);
    let (_, cache) = model.forward_cached(&p).unwrap();
    let nodes = model.grid.len();
    let d_temp = vec![1.0; nodes];
    let g = model.backward(&cache, &d_temp, None).unwrap();
    assert_eq!(g[1], 0.0);
    assert!(g[0] != 0.0);
}

#[test]
fn degenerate_architecture_reduces_to_affine() {
    // zero spectral tensors, identity local weights, zero biases, identity
    // activation: the output is an affine map of the lifted input channels
    let grid = small_grid(8, 6);
    let mut config = small_config(13, 4, 3);
    config.activation = Activation::Identity;
    let mut model = SurrogateModel::new(config, grid, ParamBounds::default()).unwrap();
    let lay = model.layout;
    let w = model.config.width;
    for l in 0..model.config.layers {
        for v in &mut model.params_flat[lay.spec_re(l)..lay.spec_im(l) + lay.slots * w * w] {
            *v = 0.0;
        }
        for v in &mut model.params_flat[lay.local_b(l)..lay.local_b(l) + w] {
            *v = 0.0;
        }
        for i in 0..w {
            for j in 0..w {
                model.params_flat[lay.local_w(l) + i * w + j] = if i == j { 1.0 } else { 0.0 };
            }
        }
    }
    let p = ProcessParams::new(300.0, 1.5, 400.0, 0.3);
    let section = model.forward(&p).unwrap();
    // reproduce by hand: y = P2 (P1 (L c + b_l)) + ... all affine per node
    let (channels, _) = meltwin_core::fno::build_input_channels(&p, &grid, &model.bounds);
    let nodes = grid.len();
    for node in 0..nodes {
        let mut h = vec![0.0; w];
        for ch in 0..w {
            let mut acc = model.params_flat[lay.lift_b + ch];
            for j in 0..meltwin_core::fno::model::INPUT_CHANNELS {
                acc += model.params_flat[lay.lift_w + ch * meltwin_core::fno::model::INPUT_CHANNELS + j]
                    * channels[j * nodes + node];
            }
            h[ch] = acc;
        }
        let pw = model.config.proj_width;
        let mut y = model.params_flat[lay.proj2_b];
        for pc in 0..pw {
            let mut acc = model.params_flat[lay.proj1_b + pc];
            for j in 0..w {
                acc += model.params_flat[lay.proj1_w + pc * w + j] * h[j];
            }
            y += model.params_flat[lay.proj2_w + pc] * acc;
        }
        let want = model.out_norm.offset_k + model.out_norm.scale_k * y;
        assert!(
            (section.values_k[node] - want).abs() < 1e-9 * want.abs().max(1.0),
            "node {node}: {} vs {want}",
            section.values_k[node]
        );
    }
}

#[test]
fn spectral_inverse_leaves_no_imaginary_part() {
    let grid = small_grid(10, 8);
    let model = SurrogateModel::new(small_config(17, 4, 3), grid, ParamBounds::default()).unwrap();
    let p = ProcessParams::new(300.0, 1.5, 400.0, 0.3);
    let residue = model.imag_residue(&p).unwrap();
    assert!(residue < 1e-10, "imaginary residue {residue}");
}

#[test]
fn extrapolation_is_flagged_not_fatal() {
    let grid = small_grid(8, 6);
    let bounds = ParamBounds::default();
    let inside = ProcessParams::new(300.0, 1.5, 400.0, 0.3);
    let outside = ProcessParams::new(600.0, 1.5, 400.0, 0.3);
    let (_, flag) = meltwin_core::fno::build_input_channels(&inside, &grid, &bounds);
    assert!(!flag);
    let (_, flag) = meltwin_core::fno::build_input_channels(&outside, &grid, &bounds);
    assert!(flag);
}

#[test]
fn input_channel_endpoints_normalize_to_unit_interval() {
    let grid = small_grid(8, 6);
    let bounds = ParamBounds::default();
    let nodes = grid.len();
    let (lo, _) = meltwin_core::fno::build_input_channels(
        &ProcessParams::new(100.0, 0.5, 300.0, 0.1),
        &grid,
        &bounds,
    );
    assert!(lo[0..nodes].iter().all(|&v| v == 0.0));
    let (hi, _) = meltwin_core::fno::build_input_channels(
        &ProcessParams::new(500.0, 2.5, 540.0, 0.6),
        &grid,
        &bounds,
    );
    assert!(hi[0..nodes].iter().all(|&v| v == 1.0));
    // first grid node carries coordinates (0, 0)
    assert_eq!(lo[4 * nodes], 0.0);
    assert_eq!(lo[5 * nodes], 0.0);
}
