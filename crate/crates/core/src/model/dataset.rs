//! Procedurally generated shape dataset.
//!
//! Ten classes of parametric shapes rendered with signed-distance functions,
//! soft (anti-aliased) edges, and per-sample jitter in position, scale,
//! stroke width, intensity, and photometric factors. The jitter bakes the
//! variation the model must tolerate directly into the data, so a model
//! trained once handles mild resizing and photometric shifts without any
//! retraining.
//!
//! Classes: 0 disk, 1 ring, 2 filled square, 3 square outline, 4 horizontal
//! stripes, 5 vertical stripes, 6 diagonal cross, 7 triangle, 8 checkerboard,
//! 9 plus sign.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 10;

/// Images plus labels; one split of a dataset.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} images vs {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Checks the range/shape invariants against a class count.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for (i, img) in self.images.iter().enumerate() {
            if img.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Contract(format!("image {i} has values outside [0,1]")));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Contract(format!(
                "label {bad} out of range {num_classes}"
            )));
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Parameters of the bundled generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub side: usize,
    /// 1 for grayscale, 3 for color.
    pub channels: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            side: 28,
            channels: 1,
            n_train: 8000,
            n_test: 2000,
            seed: 2017,
        }
    }
}

/// Generates the train/test splits. Fully determined by the spec.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    if spec.channels != 1 && spec.channels != 3 {
        return Err(Error::Contract(format!(
            "synthetic dataset supports 1 or 3 channels, got {}",
            spec.channels
        )));
    }
    if spec.side < 12 {
        return Err(Error::Contract(format!(
            "synthetic side {} too small to render shapes",
            spec.side
        )));
    }
    let train = render_split(spec, spec.n_train, spec.seed ^ 0x7261_696e)?;
    let test = render_split(spec, spec.n_test, spec.seed ^ 0x7465_7374)?;
    Ok((train, test))
}

fn render_split(spec: &SyntheticSpec, count: usize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % NUM_CLASSES;
        images.push(render_sample(spec, class, &mut rng)?);
        labels.push(class);
    }
    LabeledDataset::new(images, labels)
}

fn gaussian(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller; u1 kept away from zero.
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn env_f64(key: &str, default: f64) -> f64 {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

/// Geometry of one shape instance.
struct ShapeParams {
    cx: f64,
    cy: f64,
    r: f64,
    stroke: f64,
    sin_r: f64,
    cos_r: f64,
    period: f64,
    cell: f64,
    phase_x: f64,
    phase_y: f64,
    /// Texture band contrast; lower values fade bands toward a filled disk.
    depth: f64,
}

impl ShapeParams {
    fn sample(side: usize, rng: &mut ChaCha12Rng) -> Self {
        let s = side as f64;
        let period = rng.gen_range(0.21..0.28) * s;
        let rot: f64 = rng.gen_range(-0.13..0.13);
        let (sin_r, cos_r) = rot.sin_cos();
        Self {
            cx: s / 2.0 + rng.gen_range(-2.5..2.5) * s / 28.0,
            cy: s / 2.0 + rng.gen_range(-2.5..2.5) * s / 28.0,
            r: rng.gen_range(0.30..0.40) * s,
            stroke: rng.gen_range(0.095..0.13) * s,
            sin_r,
            cos_r,
            period,
            cell: rng.gen_range(0.14..0.19) * s,
            phase_x: rng.gen_range(0.0..period),
            phase_y: rng.gen_range(0.0..period),
            depth: rng.gen_range(0.35..0.80),
        }
    }
}

/// Pixel coverage of a shape class at (px, py), anti-aliased over ~1 px.
fn shape_coverage(class: usize, p: &ShapeParams, px: f64, py: f64) -> f64 {
    let aa = 1.1;
    // Rotated local frame for the compact shapes.
    let dx0 = px - p.cx;
    let dy0 = py - p.cy;
    let dx = p.cos_r * dx0 + p.sin_r * dy0;
    let dy = -p.sin_r * dx0 + p.cos_r * dy0;

    // Textured classes are band patterns of limited contrast inside a disk,
    // so every class occupies a comparable compact region.
    let disk = (dx * dx + dy * dy).sqrt() - p.r;
    let textured = |band: f64| {
        let disk_cov = (0.5 - disk / aa).clamp(0.0, 1.0);
        let band_cov = (0.5 - band / aa).clamp(0.0, 1.0);
        disk_cov * (1.0 - p.depth * (1.0 - band_cov))
    };
    let d = match class {
        0 => disk + p.r * 0.1,
        1 => ((dx * dx + dy * dy).sqrt() - p.r * 0.85).abs() - p.stroke / 2.0,
        2 => dx.abs().max(dy.abs()) - p.r * 0.8,
        3 => (dx.abs().max(dy.abs()) - p.r * 0.8).abs() - p.stroke / 2.0,
        4 => return textured(band_distance(py, p.phase_y, p.period)),
        5 => return textured(band_distance(px, p.phase_x, p.period)),
        6 => {
            let inv = std::f64::consts::FRAC_1_SQRT_2;
            let a = segment_distance(dx, dy, inv, inv, p.r) - p.stroke / 2.0;
            let b = segment_distance(dx, dy, inv, -inv, p.r) - p.stroke / 2.0;
            a.min(b)
        }
        7 => triangle_distance(dx, dy, p.r),
        8 => return textured(checker_distance(px, py, p.phase_x, p.phase_y, p.cell)),
        9 => {
            let a = segment_distance(dx, dy, 1.0, 0.0, p.r) - p.stroke / 2.0;
            let b = segment_distance(dx, dy, 0.0, 1.0, p.r) - p.stroke / 2.0;
            a.min(b)
        }
        _ => unreachable!(),
    };
    (0.5 - d / aa).clamp(0.0, 1.0)
}

fn render_sample(spec: &SyntheticSpec, class: usize, rng: &mut ChaCha12Rng) -> Result<Tensor> {
    let side = spec.side;
    let shape = ShapeParams::sample(side, rng);

    // A faint second shape from another class keeps samples from drifting
    // arbitrarily far from the decision boundaries.
    let distract_lo = env_f64("ADVPROBE_DISTRACT_LO", 0.0);
    let distract_max = env_f64("ADVPROBE_DISTRACT", 0.30);
    let alpha = rng.gen_range(distract_lo..distract_max);
    let other_class = (class + rng.gen_range(1..NUM_CLASSES)) % NUM_CLASSES;
    let other_shape = ShapeParams::sample(side, rng);

    let fg_lo = env_f64("ADVPROBE_FG_LO", 0.55);
    let fg = rng.gen_range(fg_lo..1.0);
    let color = if spec.channels == 3 {
        let hue = rng.gen_range(0.0..1.0);
        let sat = rng.gen_range(0.6..1.0);
        hsv_to_rgb(hue, sat, fg)
    } else {
        [fg, fg, fg]
    };

    // Photometric jitter baked into the sample.
    let gain = rng.gen_range(0.85..1.15);
    let offset = rng.gen_range(-0.06..0.06);
    let noise_sigma = env_f64("ADVPROBE_NOISE", 0.10);

    let mut data = vec![0.0; side * side * spec.channels];
    for y in 0..side {
        for x in 0..side {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let main = shape_coverage(class, &shape, px, py);
            let distract = shape_coverage(other_class, &other_shape, px, py);
            let coverage = (1.0 - alpha) * main + alpha * distract;

            let base = (y * side + x) * spec.channels;
            for ch in 0..spec.channels {
                let shade = coverage * color[ch];
                let v = shade * gain + offset + noise_sigma * gaussian(rng);
                data[base + ch] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![side, side, spec.channels], data)
}

/// Signed distance to the nearest stripe band (bands cover half the period).
fn band_distance(coord: f64, phase: f64, period: f64) -> f64 {
    let u = (coord - phase).rem_euclid(period);
    let to_center = (u - period / 2.0).abs();
    // Band is centered at period/2 with half-width period/4.
    to_center - period / 4.0
}

/// Distance to a centered segment of half-length `len` along unit (ux, uy).
fn segment_distance(dx: f64, dy: f64, ux: f64, uy: f64, len: f64) -> f64 {
    let t = (dx * ux + dy * uy).clamp(-len, len);
    let qx = dx - t * ux;
    let qy = dy - t * uy;
    (qx * qx + qy * qy).sqrt()
}

/// Signed distance into the "on" cells of a checkerboard.
fn checker_distance(px: f64, py: f64, phase_x: f64, phase_y: f64, cell: f64) -> f64 {
    let ux = (px - phase_x) / cell;
    let uy = (py - phase_y) / cell;
    let ix = ux.floor();
    let iy = uy.floor();
    let parity = ((ix as i64) + (iy as i64)).rem_euclid(2);
    let fx = ux - ix;
    let fy = uy - iy;
    let edge = fx.min(1.0 - fx).min(fy).min(1.0 - fy) * cell;
    if parity == 0 {
        -edge
    } else {
        edge
    }
}

/// Signed distance for an upward equilateral triangle with circumradius `r`.
fn triangle_distance(dx: f64, dy: f64, r: f64) -> f64 {
    let half = r / 2.0;
    let e0 = dy - half;
    let e1 = -0.866_025_403_784_438_6 * dx - 0.5 * dy - half;
    let e2 = 0.866_025_403_784_438_6 * dx - 0.5 * dy - half;
    e0.max(e1).max(e2)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hh = (h.rem_euclid(1.0)) * 6.0;
    let x = c * (1.0 - ((hh % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match hh as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}
