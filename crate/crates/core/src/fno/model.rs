//! The 2D Fourier neural operator mapping process parameters to a plane
//! temperature field, with exact reverse-mode gradients for both parameters
//! and inputs.
//!
//! Scalar inputs enter as constant channels next to two normalized coordinate
//! channels. Each spectral block adds a local affine path to a truncated-mode
//! convolution; the activation is omitted after the final block. All model
//! parameters live in one flat vector so the optimizer and the serializer
//! never learn the architecture.

// index-heavy kernels: range loops here address several arrays at once
#![allow(clippy::needless_range_loop)]

use super::fft2::{Fft2, FftScratch};
use crate::error::{Error, Result};
use crate::params::{ParamBounds, ProcessParams};
use crate::plane::{PlaneGrid, PlaneSection};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub const INPUT_CHANNELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    /// Smooth rectifier with Gaussian-error gating (tanh form).
    Gelu,
    /// Pass-through, for degenerate-architecture tests.
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let u = 0.797_884_560_802_865_4 * (x + 0.044_715 * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let c = 0.797_884_560_802_865_4;
                let u = c * (x + 0.044_715 * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044_715 * x * x)
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FnoConfig {
    /// Number of spectral blocks.
    pub layers: usize,
    /// Latent channel width d_h.
    pub width: usize,
    /// Retained modes along the scan axis.
    pub modes0: usize,
    /// Retained modes along the cross axis.
    pub modes1: usize,
    /// Hidden width of the two-stage projection head.
    pub proj_width: usize,
    pub activation: Activation,
    /// Initial Adam learning rate.
    pub learning_rate: f64,
    /// Multiplicative decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    /// Decoupled weight-decay coefficient.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once validation relative L2 drops below this, if set.
    pub early_stop_val_rel: Option<f64>,
}

impl Default for FnoConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            width: 20,
            modes0: 12,
            modes1: 12,
            proj_width: 64,
            activation: Activation::Gelu,
            learning_rate: 0.01,
            lr_decay: 0.7,
            decay_every: 50,
            epochs: 1000,
            weight_decay: 1e-4,
            batch_size: 16,
            seed: 0,
            early_stop_val_rel: None,
        }
    }
}

impl FnoConfig {
    pub fn validate_for_grid(&self, grid: &PlaneGrid) -> Result<()> {
        if self.layers == 0 || self.width == 0 || self.proj_width == 0 {
            return Err(Error::Config("layers, width, proj_width must be >= 1".into()));
        }
        if 2 * self.modes0 > grid.n0 || 2 * self.modes1 > grid.n1 {
            return Err(Error::Shape {
                expected: format!("modes <= half the grid extent ({}, {})", grid.n0 / 2, grid.n1 / 2),
                got: format!("({}, {})", self.modes0, self.modes1),
            });
        }
        if self.modes0 == 0 || self.modes1 == 0 {
            return Err(Error::Config("need at least one mode per dimension".into()));
        }
        Ok(())
    }
}

/// Offsets of each parameter tensor inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub width: usize,
    pub proj_width: usize,
    pub layers: usize,
    /// Retained slots per layer = (2·modes0 − 1) · modes1.
    pub slots: usize,
    pub lift_w: usize,
    pub lift_b: usize,
    pub layer_stride: usize,
    pub layers_at: usize,
    pub proj1_w: usize,
    pub proj1_b: usize,
    pub proj2_w: usize,
    pub proj2_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &FnoConfig) -> Self {
        let w = cfg.width;
        let slots = (2 * cfg.modes0 - 1) * cfg.modes1;
        let lift_w = 0;
        let lift_b = lift_w + w * INPUT_CHANNELS;
        let layers_at = lift_b + w;
        // per layer: local W (w*w), bias (w), spectral re (slots*w*w), im (same)
        let layer_stride = w * w + w + 2 * slots * w * w;
        let proj1_w = layers_at + cfg.layers * layer_stride;
        let proj1_b = proj1_w + cfg.proj_width * w;
        let proj2_w = proj1_b + cfg.proj_width;
        let proj2_b = proj2_w + cfg.proj_width;
        Self {
            width: w,
            proj_width: cfg.proj_width,
            layers: cfg.layers,
            slots,
            lift_w,
            lift_b,
            layer_stride,
            layers_at,
            proj1_w,
            proj1_b,
            proj2_w,
            proj2_b,
            total: proj2_b + 1,
        }
    }

    #[inline]
    pub fn local_w(&self, l: usize) -> usize {
        self.layers_at + l * self.layer_stride
    }
    #[inline]
    pub fn local_b(&self, l: usize) -> usize {
        self.local_w(l) + self.width * self.width
    }
    #[inline]
    pub fn spec_re(&self, l: usize) -> usize {
        self.local_b(l) + self.width
    }
    #[inline]
    pub fn spec_im(&self, l: usize) -> usize {
        self.spec_re(l) + self.slots * self.width * self.width
    }
}

/// Output normalization: T = offset + scale · y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputNorm {
    pub offset_k: f64,
    pub scale_k: f64,
}

impl Default for OutputNorm {
    /// (T − 300) / (T_boil − 300) with the AlSi10Mg boiling point.
    fn default() -> Self {
        Self { offset_k: 300.0, scale_k: 2740.0 - 300.0 }
    }
}

/// A trained or initialized operator for one plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub config: FnoConfig,
    pub grid: PlaneGrid,
    pub bounds: ParamBounds,
    pub out_norm: OutputNorm,
    pub layout: Layout,
    pub params_flat: Vec<f64>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    pub grid: PlaneGrid,
    pub extrapolated: bool,
    channels: Vec<f64>,       // INPUT_CHANNELS x nodes
    h: Vec<Vec<f64>>,         // (layers+1) x (width*nodes), post-activation
    z: Vec<Vec<f64>>,         // layers x (width*nodes), pre-activation
    hc: Vec<Vec<Complex64>>,  // layers x (slots*width), slot-major spectra
    proj_pre: Vec<f64>,       // proj_width x nodes, pre-activation
    pub y_norm: Vec<f64>,     // nodes, normalized output
}

/// Constant parameter channels plus normalized coordinates; flags when the
/// parameters leave the normalization box (the optimizer probes near bounds,
/// so this warns instead of failing).
pub fn build_input_channels(
    params: &ProcessParams,
    grid: &PlaneGrid,
    bounds: &ParamBounds,
) -> (Vec<f64>, bool) {
    let nodes = grid.len();
    let norm = bounds.normalize(params);
    let extrapolated = norm.iter().any(|&v| !(-1e-12..=1.0 + 1e-12).contains(&v));
    let mut channels = vec![0.0; INPUT_CHANNELS * nodes];
    for (c, &v) in norm.iter().enumerate() {
        channels[c * nodes..(c + 1) * nodes].fill(v);
    }
    let c0 = 4 * nodes;
    let c1 = 5 * nodes;
    for i0 in 0..grid.n0 {
        let x = if grid.n0 > 1 { i0 as f64 / (grid.n0 - 1) as f64 } else { 0.0 };
        for i1 in 0..grid.n1 {
            let y = if grid.n1 > 1 { i1 as f64 / (grid.n1 - 1) as f64 } else { 0.0 };
            let node = i0 * grid.n1 + i1;
            channels[c0 + node] = x;
            channels[c1 + node] = y;
        }
    }
    (channels, extrapolated)
}

impl SurrogateModel {
    /// Fresh model with seeded uniform initialization.
    pub fn new(config: FnoConfig, grid: PlaneGrid, bounds: ParamBounds) -> Result<Self> {
        config.validate_for_grid(&grid)?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = vec![0.0; layout.total];
        let w = config.width;
        let mut fill = |range: std::ops::Range<usize>, scale: f64, rng: &mut ChaCha8Rng| {
            for v in &mut p[range] {
                *v = rng.random_range(-scale..scale);
            }
        };
        let lift_scale = (1.0 / INPUT_CHANNELS as f64).sqrt();
        fill(layout.lift_w..layout.lift_b, lift_scale, &mut rng);
        // biases stay zero
        let local_scale = (1.0 / w as f64).sqrt();
        let spec_scale = 1.0 / (w * config.modes0.max(config.modes1)) as f64;
        for l in 0..config.layers {
            fill(layout.local_w(l)..layout.local_b(l), local_scale, &mut rng);
            fill(layout.spec_re(l)..layout.spec_im(l) + layout.slots * w * w, spec_scale, &mut rng);
        }
        fill(layout.proj1_w..layout.proj1_b, local_scale, &mut rng);
        let proj2_scale = (1.0 / config.proj_width as f64).sqrt();
        fill(layout.proj2_w..layout.proj2_b, proj2_scale, &mut rng);
        Ok(Self {
            config,
            grid,
            bounds,
            out_norm: OutputNorm::default(),
            layout,
            params_flat: p,
        })
    }

    pub fn fft_for(&self, grid: &PlaneGrid) -> Result<Fft2> {
        self.config.validate_for_grid(grid)?;
        Ok(Fft2::new(grid.n0, grid.n1, self.config.modes0, self.config.modes1))
    }

    /// Predicted temperature section on the model's own grid.
    pub fn forward(&self, params: &ProcessParams) -> Result<PlaneSection> {
        let grid = self.grid;
        Ok(self.forward_cached_on(params, &grid)?.0)
    }

    /// Forward on an arbitrary grid of the same plane kind; spectral weights
    /// are resolution-independent so only the mode bound is checked.
    pub fn forward_on(&self, params: &ProcessParams, grid: &PlaneGrid) -> Result<PlaneSection> {
        if grid.kind != self.grid.kind {
            return Err(Error::Shape {
                expected: format!("{:?} plane", self.grid.kind),
                got: format!("{:?} plane", grid.kind),
            });
        }
        Ok(self.forward_cached_on(params, grid)?.0)
    }

    pub fn forward_cached(&self, params: &ProcessParams) -> Result<(PlaneSection, ForwardCache)> {
        let grid = self.grid;
        self.forward_cached_on(params, &grid)
    }

    fn forward_cached_on(
        &self,
        params: &ProcessParams,
        grid: &PlaneGrid,
    ) -> Result<(PlaneSection, ForwardCache)> {
        let fft = self.fft_for(grid)?;
        let mut scratch = fft.make_scratch();
        self.forward_with(params, grid, &fft, &mut scratch)
    }

    /// Forward pass with caller-provided FFT plans (the training loop reuses
    /// them across samples).
    pub fn forward_with(
        &self,
        params: &ProcessParams,
        grid: &PlaneGrid,
        fft: &Fft2,
        scratch: &mut FftScratch,
    ) -> Result<(PlaneSection, ForwardCache)> {
        let nodes = grid.len();
        let w = self.config.width;
        let slots = fft.n_slots();
        debug_assert_eq!(slots, self.layout.slots);
        let p = &self.params_flat;
        let lay = &self.layout;
        let act = self.config.activation;

        let (channels, extrapolated) = build_input_channels(params, grid, &self.bounds);

        // lifting: h0[ch] = lift_w[ch] · c + lift_b[ch]
        let mut h0 = vec![0.0; w * nodes];
        for ch in 0..w {
            let b = p[lay.lift_b + ch];
            let row = &mut h0[ch * nodes..(ch + 1) * nodes];
            row.fill(b);
            for j in 0..INPUT_CHANNELS {
                let wij = p[lay.lift_w + ch * INPUT_CHANNELS + j];
                let src = &channels[j * nodes..(j + 1) * nodes];
                for (r, &c) in row.iter_mut().zip(src.iter()) {
                    *r += wij * c;
                }
            }
        }

        let mut h_stack = Vec::with_capacity(self.config.layers + 1);
        let mut z_stack = Vec::with_capacity(self.config.layers);
        let mut hc_stack = Vec::with_capacity(self.config.layers);
        h_stack.push(h0);

        let mut coeff = vec![Complex64::default(); slots];
        for l in 0..self.config.layers {
            let h = h_stack.last().unwrap();
            // spectra of every channel, slot-major
            let mut hc = vec![Complex64::default(); slots * w];
            for j in 0..w {
                fft.fwd_gather(&h[j * nodes..(j + 1) * nodes], scratch, &mut coeff);
                for (slot, &c) in coeff.iter().enumerate() {
                    hc[slot * w + j] = c;
                }
            }
            // per-mode complex matrix multiply
            let re0 = lay.spec_re(l);
            let im0 = lay.spec_im(l);
            let mut gc = vec![Complex64::default(); slots * w];
            for slot in 0..slots {
                let hrow = &hc[slot * w..(slot + 1) * w];
                let grow = &mut gc[slot * w..(slot + 1) * w];
                let base = slot * w * w;
                for (i, g) in grow.iter_mut().enumerate() {
                    let mut acc = Complex64::default();
                    let rr = &p[re0 + base + i * w..re0 + base + (i + 1) * w];
                    let ri = &p[im0 + base + i * w..im0 + base + (i + 1) * w];
                    for j in 0..w {
                        let hcv = hrow[j];
                        acc.re += rr[j] * hcv.re - ri[j] * hcv.im;
                        acc.im += rr[j] * hcv.im + ri[j] * hcv.re;
                    }
                    *g = acc;
                }
            }
            // z = W h + b + ifft(gc)
            let mut z = vec![0.0; w * nodes];
            let w0 = lay.local_w(l);
            let b0 = lay.local_b(l);
            for i in 0..w {
                for (slot, c) in coeff.iter_mut().enumerate() {
                    *c = gc[slot * w + i];
                }
                let row = &mut z[i * nodes..(i + 1) * nodes];
                fft.inv_scatter(&coeff, scratch, row);
                let b = p[b0 + i];
                for r in row.iter_mut() {
                    *r += b;
                }
                for j in 0..w {
                    let wij = p[w0 + i * w + j];
                    let src = &h[j * nodes..(j + 1) * nodes];
                    for (r, &x) in row.iter_mut().zip(src.iter()) {
                        *r += wij * x;
                    }
                }
            }
            // activation after every block except the last
            let h_next = if l + 1 < self.config.layers {
                let mut out = vec![0.0; w * nodes];
                for (o, &x) in out.iter_mut().zip(z.iter()) {
                    *o = act.apply(x);
                }
                out
            } else {
                z.clone()
            };
            hc_stack.push(hc);
            z_stack.push(z);
            h_stack.push(h_next);
        }

        // projection head: gelu(P1 h + b1), then P2 · q + b2
        let h_last = h_stack.last().unwrap();
        let pw = self.config.proj_width;
        let mut proj_pre = vec![0.0; pw * nodes];
        for pc in 0..pw {
            let row = &mut proj_pre[pc * nodes..(pc + 1) * nodes];
            row.fill(p[lay.proj1_b + pc]);
            for j in 0..w {
                let wij = p[lay.proj1_w + pc * w + j];
                let src = &h_last[j * nodes..(j + 1) * nodes];
                for (r, &x) in row.iter_mut().zip(src.iter()) {
                    *r += wij * x;
                }
            }
        }
        let mut y = vec![p[lay.proj2_b]; nodes];
        for pc in 0..pw {
            let wp = p[lay.proj2_w + pc];
            let src = &proj_pre[pc * nodes..(pc + 1) * nodes];
            for (o, &x) in y.iter_mut().zip(src.iter()) {
                *o += wp * act.apply(x);
            }
        }

        let values: Vec<f64> = y
            .iter()
            .map(|&v| self.out_norm.offset_k + self.out_norm.scale_k * v)
            .collect();
        let section = PlaneSection::new(*grid, values)?;
        Ok((
            section,
            ForwardCache {
                grid: *grid,
                extrapolated,
                channels,
                h: h_stack,
                z: z_stack,
                hc: hc_stack,
                proj_pre,
                y_norm: y,
            },
        ))
    }

    /// Reverse pass seeded with dL/dT (K⁻¹ per node). Returns dL/d(P,V,T_sub,α);
    /// accumulates parameter gradients into `param_grads` when given.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_temp: &[f64],
        param_grads: Option<&mut [f64]>,
    ) -> Result<[f64; 4]> {
        let dy: Vec<f64> = d_temp.iter().map(|&g| g * self.out_norm.scale_k).collect();
        self.backward_norm(cache, &dy, param_grads)
    }

    /// Reverse pass seeded with dL/dy on the normalized output.
    pub fn backward_norm(
        &self,
        cache: &ForwardCache,
        d_y_norm: &[f64],
        param_grads: Option<&mut [f64]>,
    ) -> Result<[f64; 4]> {
        let grid = cache.grid;
        let nodes = grid.len();
        if d_y_norm.len() != nodes {
            return Err(Error::Shape {
                expected: format!("{nodes} adjoint values"),
                got: format!("{}", d_y_norm.len()),
            });
        }
        let fft = self.fft_for(&grid)?;
        let mut scratch = fft.make_scratch();
        self.backward_with(cache, d_y_norm, param_grads, &fft, &mut scratch)
    }

    pub fn backward_with(
        &self,
        cache: &ForwardCache,
        d_y_norm: &[f64],
        mut param_grads: Option<&mut [f64]>,
        fft: &Fft2,
        scratch: &mut FftScratch,
    ) -> Result<[f64; 4]> {
        let nodes = cache.grid.len();
        let w = self.config.width;
        let pw = self.config.proj_width;
        let slots = fft.n_slots();
        let p = &self.params_flat;
        let lay = &self.layout;
        let act = self.config.activation;
        if let Some(g) = param_grads.as_deref() {
            if g.len() != lay.total {
                return Err(Error::Shape {
                    expected: format!("{} parameter gradients", lay.total),
                    got: format!("{}", g.len()),
                });
            }
        }
        let m = (fft.n0 * fft.n1) as f64;

        // projection head backward
        let h_last = cache.h.last().unwrap();
        let mut d_h = vec![0.0; w * nodes];
        {
            let mut d_pre = vec![0.0; nodes];
            for pc in 0..pw {
                let pre = &cache.proj_pre[pc * nodes..(pc + 1) * nodes];
                let wp = p[lay.proj2_w + pc];
                for ((dp, &x), &dyv) in d_pre.iter_mut().zip(pre.iter()).zip(d_y_norm.iter()) {
                    *dp = dyv * wp * act.deriv(x);
                }
                if let Some(g) = param_grads.as_deref_mut() {
                    let mut acc = 0.0;
                    for (&x, &dyv) in pre.iter().zip(d_y_norm.iter()) {
                        acc += dyv * act.apply(x);
                    }
                    g[lay.proj2_w + pc] += acc;
                    g[lay.proj1_b + pc] += d_pre.iter().sum::<f64>();
                    for j in 0..w {
                        let src = &h_last[j * nodes..(j + 1) * nodes];
                        let mut a = 0.0;
                        for (&dp, &x) in d_pre.iter().zip(src.iter()) {
                            a += dp * x;
                        }
                        g[lay.proj1_w + pc * w + j] += a;
                    }
                }
                for j in 0..w {
                    let wij = p[lay.proj1_w + pc * w + j];
                    let dst = &mut d_h[j * nodes..(j + 1) * nodes];
                    for (d, &dp) in dst.iter_mut().zip(d_pre.iter()) {
                        *d += wij * dp;
                    }
                }
            }
            if let Some(g) = param_grads.as_deref_mut() {
                g[lay.proj2_b] += d_y_norm.iter().sum::<f64>();
            }
        }

        // spectral blocks in reverse
        let mut coeff = vec![Complex64::default(); slots];
        let mut field = vec![0.0; nodes];
        for l in (0..self.config.layers).rev() {
            let h_in = &cache.h[l];
            let hc = &cache.hc[l];
            // through the activation (absent after the final block)
            let mut dz = d_h;
            if l + 1 < self.config.layers {
                for (d, &x) in dz.iter_mut().zip(cache.z[l].iter()) {
                    *d *= act.deriv(x);
                }
            }
            // adjoint of the spectral path: gc_hat = (2/M) fwd_gather(dz_i)
            let mut d_gc = vec![Complex64::default(); slots * w];
            for i in 0..w {
                fft.fwd_gather(&dz[i * nodes..(i + 1) * nodes], scratch, &mut coeff);
                let s = 2.0 / m;
                for (slot, &c) in coeff.iter().enumerate() {
                    d_gc[slot * w + i] = c * s;
                }
            }
            let re0 = lay.spec_re(l);
            let im0 = lay.spec_im(l);
            // spectral weight grads and adjoint spectra of the input
            let mut d_hc = vec![Complex64::default(); slots * w];
            for slot in 0..slots {
                let base = slot * w * w;
                let hrow = &hc[slot * w..(slot + 1) * w];
                let grow = &d_gc[slot * w..(slot + 1) * w];
                let drow = &mut d_hc[slot * w..(slot + 1) * w];
                for i in 0..w {
                    let gi = grow[i];
                    let rr = &p[re0 + base + i * w..re0 + base + (i + 1) * w];
                    let ri = &p[im0 + base + i * w..im0 + base + (i + 1) * w];
                    for j in 0..w {
                        // d_hc_j += conj(R_ij) * g_i
                        let (a, b) = (rr[j], ri[j]);
                        drow[j].re += a * gi.re + b * gi.im;
                        drow[j].im += a * gi.im - b * gi.re;
                    }
                }
                if let Some(g) = param_grads.as_deref_mut() {
                    for i in 0..w {
                        let gi = grow[i];
                        for j in 0..w {
                            // dR_ij = g_i * conj(h_j)
                            let hj = hrow[j];
                            g[re0 + base + i * w + j] += gi.re * hj.re + gi.im * hj.im;
                            g[im0 + base + i * w + j] += gi.im * hj.re - gi.re * hj.im;
                        }
                    }
                }
            }
            // local path grads and input adjoint
            let w0 = lay.local_w(l);
            let b0 = lay.local_b(l);
            let mut d_h_prev = vec![0.0; w * nodes];
            for j in 0..w {
                // spectral contribution: (M/2) inv_scatter(d_hc_j)
                for (slot, c) in coeff.iter_mut().enumerate() {
                    *c = d_hc[slot * w + j];
                }
                fft.inv_scatter(&coeff, scratch, &mut field);
                let dst = &mut d_h_prev[j * nodes..(j + 1) * nodes];
                let s = m / 2.0;
                for (d, &f) in dst.iter_mut().zip(field.iter()) {
                    *d = f * s;
                }
            }
            for i in 0..w {
                let dzi = &dz[i * nodes..(i + 1) * nodes];
                if let Some(g) = param_grads.as_deref_mut() {
                    g[b0 + i] += dzi.iter().sum::<f64>();
                    for j in 0..w {
                        let hi = &h_in[j * nodes..(j + 1) * nodes];
                        let mut a = 0.0;
                        for (&d, &x) in dzi.iter().zip(hi.iter()) {
                            a += d * x;
                        }
                        g[w0 + i * w + j] += a;
                    }
                }
                for j in 0..w {
                    let wij = p[w0 + i * w + j];
                    let dst = &mut d_h_prev[j * nodes..(j + 1) * nodes];
                    for (d, &x) in dst.iter_mut().zip(dzi.iter()) {
                        *d += wij * x;
                    }
                }
            }
            d_h = d_h_prev;
        }

        // lifting backward
        let mut input_grads = [0.0; 4];
        let scale = self.bounds.scale();
        for ch in 0..w {
            let d_row = &d_h[ch * nodes..(ch + 1) * nodes];
            if let Some(g) = param_grads.as_deref_mut() {
                g[lay.lift_b + ch] += d_row.iter().sum::<f64>();
                for j in 0..INPUT_CHANNELS {
                    let src = &cache.channels[j * nodes..(j + 1) * nodes];
                    let mut a = 0.0;
                    for (&d, &c) in d_row.iter().zip(src.iter()) {
                        a += d * c;
                    }
                    g[lay.lift_w + ch * INPUT_CHANNELS + j] += a;
                }
            }
            // constant channels: d(param) = Σ_nodes d(channel) · d(channel)/d(param)
            for (jp, ig) in input_grads.iter_mut().enumerate() {
                let wij = p[lay.lift_w + ch * INPUT_CHANNELS + jp];
                let sum: f64 = d_row.iter().sum();
                *ig += wij * sum * scale[jp];
            }
        }
        Ok(input_grads)
    }

    /// Relative imaginary residue of the spectral inverse on this model's
    /// first-layer spectrum for the given input; Hermitian bookkeeping should
    /// keep it at rounding level.
    pub fn imag_residue(&self, params: &ProcessParams) -> Result<f64> {
        let fft = self.fft_for(&self.grid)?;
        let mut scratch = fft.make_scratch();
        let (_, cache) = self.forward_with(params, &self.grid.clone(), &fft, &mut scratch)?;
        let w = self.config.width;
        let slots = fft.n_slots();
        let re0 = self.layout.spec_re(0);
        let im0 = self.layout.spec_im(0);
        let p = &self.params_flat;
        let mut worst = 0.0f64;
        let mut coeff = vec![Complex64::default(); slots];
        for i in 0..w {
            for slot in 0..slots {
                let mut acc = Complex64::default();
                let base = slot * w * w;
                for j in 0..w {
                    let h = cache.hc[0][slot * w + j];
                    let (a, b) = (p[re0 + base + i * w + j], p[im0 + base + i * w + j]);
                    acc.re += a * h.re - b * h.im;
                    acc.im += a * h.im + b * h.re;
                }
                coeff[slot] = acc;
            }
            worst = worst.max(fft.imag_residue(&coeff, &mut scratch));
        }
        Ok(worst)
    }
}
