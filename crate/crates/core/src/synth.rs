//! Seeded synthetic rigs and animations.
//!
//! Vertices are laid out on a single index line. Each blendshape moves a
//! contiguous block of them with a smooth bump profile, so blocks play the
//! role of facial regions. Corrective vectors live on the overlap of their
//! pair's blocks.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::FrameArray;
use crate::model::{BlendshapeModel, WeightVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub m: usize,
    pub n: usize,
    pub pair_count: usize,
    pub frames: usize,
    pub seed: u64,
    /// Standard deviation of the per-coordinate target noise, in cm.
    pub noise_std: f64,
    /// Expected fraction of active weights per frame.
    pub activation_sparsity: f64,
    /// Corrective magnitude relative to the base deltas.
    pub corrective_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            m: 40,
            n: 500,
            pair_count: 60,
            frames: 20,
            seed: 42,
            noise_std: 0.0,
            activation_sparsity: 0.2,
            corrective_scale: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.frames == 0 {
            return Err(Error::InvalidConfig("m, n and frames must be positive".into()));
        }
        let max_pairs = self.m * (self.m - 1) / 2;
        if self.pair_count > max_pairs {
            return Err(Error::InvalidConfig(format!(
                "pair_count {} exceeds m(m-1)/2 = {max_pairs}",
                self.pair_count
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_std {} must be finite and >= 0", self.noise_std)));
        }
        if !(self.activation_sparsity > 0.0 && self.activation_sparsity <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "activation_sparsity {} must lie in (0, 1]",
                self.activation_sparsity
            )));
        }
        if !(self.corrective_scale >= 0.0 && self.corrective_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("corrective_scale {} must be finite and >= 0", self.corrective_scale)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub model: BlendshapeModel,
    pub truth: Vec<WeightVector>,
    /// Delta-form targets, one frame per row.
    pub targets: FrameArray,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    start: usize,
    end: usize,
}

impl Block {
    fn overlap(&self, other: &Block) -> Option<Block> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start < end).then_some(Block { start, end })
    }

    fn len(&self) -> usize {
        self.end - self.start
    }
}

/// `sin^2` bump over a block, zero outside.
fn bump(block: &Block, v: usize) -> f64 {
    if v < block.start || v >= block.end {
        return 0.0;
    }
    let t = (v - block.start) as f64 + 0.5;
    (PI * t / block.len() as f64).sin().powi(2)
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let x: [f64; 3] = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
        let len = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if len > 1e-6 {
            return [x[0] / len, x[1] / len, x[2] / len];
        }
    }
}

/// Displacement field with a bump profile over `block` and a per-vertex
/// jittered direction around `dir`.
fn block_field(rng: &mut ChaCha8Rng, n: usize, block: &Block, dir: [f64; 3], amplitude: f64) -> Vec<f64> {
    let mut out = vec![0.0; 3 * n];
    for v in block.start..block.end {
        let jitter = unit_vector(rng);
        let mut d = [0.0; 3];
        for c in 0..3 {
            d[c] = dir[c] + 0.5 * jitter[c];
        }
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-12);
        let a = amplitude * bump(block, v) / len;
        for c in 0..3 {
            out[3 * v + c] = a * d[c];
        }
    }
    out
}

/// Piecewise-smooth activation curve: segments of 4 to 20 frames, each active
/// with probability `sparsity`, an active segment carrying one `sin^2` pulse.
fn activation_curve(rng: &mut ChaCha8Rng, frames: usize, sparsity: f64) -> Vec<f64> {
    let mut curve = vec![0.0; frames];
    let mut start = 0;
    while start < frames {
        let len = rng.random_range(4..=20).min(frames - start);
        if rng.random::<f64>() < sparsity {
            let peak = rng.random_range(0.3..=1.0);
            for (i, x) in curve[start..start + len].iter_mut().enumerate() {
                let t = (i as f64 + 0.5) / len as f64;
                *x = (peak * (PI * t).sin().powi(2)).clamp(0.0, 1.0);
            }
        }
        start += len;
    }
    curve
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticData> {
    config.validate()?;
    let (m, n) = (config.m, config.n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let neutral: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-9.0..9.0)).collect();

    let mut blocks = Vec::with_capacity(m);
    let mut amplitudes = Vec::with_capacity(m);
    let mut columns = Vec::with_capacity(m);
    for _ in 0..m {
        let width = ((n as f64 * rng.random_range(0.08..0.25)).round() as usize).clamp(2.min(n), n);
        let start = rng.random_range(0..=n - width);
        let block = Block { start, end: start + width };
        let amplitude = rng.random_range(0.5..1.5);
        let dir = unit_vector(&mut rng);
        columns.push(block_field(&mut rng, n, &block, dir, amplitude));
        blocks.push(block);
        amplitudes.push(amplitude);
    }

    // Overlapping pairs first; disjoint ones only if the overlaps run out.
    let mut overlapping = Vec::new();
    let mut disjoint = Vec::new();
    for j in 0..m {
        for k in j + 1..m {
            if blocks[j].overlap(&blocks[k]).is_some() {
                overlapping.push((j, k));
            } else {
                disjoint.push((j, k));
            }
        }
    }
    overlapping.shuffle(&mut rng);
    disjoint.shuffle(&mut rng);
    let mut pairs: Vec<(usize, usize)> = overlapping.into_iter().chain(disjoint).take(config.pair_count).collect();
    pairs.sort_unstable();

    let mut correctives = Vec::with_capacity(pairs.len());
    for &(j, k) in &pairs {
        // Disjoint pairs fall back to the smaller of the two blocks.
        let support = blocks[j].overlap(&blocks[k]).unwrap_or_else(|| {
            if blocks[j].len() <= blocks[k].len() { blocks[j] } else { blocks[k] }
        });
        let amplitude = config.corrective_scale * (amplitudes[j] * amplitudes[k]).sqrt();
        let dir = unit_vector(&mut rng);
        correctives.push(((j, k), block_field(&mut rng, n, &support, dir, amplitude)));
    }

    let names: Vec<String> = (0..m).map(|j| format!("shape_{j:03}")).collect();
    let model = BlendshapeModel::from_columns(n, names, neutral, &columns, correctives)?;

    let curves: Vec<Vec<f64>> = (0..m)
        .map(|_| activation_curve(&mut rng, config.frames, config.activation_sparsity))
        .collect();
    let truth: Vec<WeightVector> = (0..config.frames)
        .map(|f| WeightVector::new(curves.iter().map(|c| c[f]).collect()))
        .collect::<Result<_>>()?;

    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut data = Vec::with_capacity(config.frames * 3 * n);
    for w in &truth {
        let mut mesh = model.quadratic_offset(w)?;
        if config.noise_std > 0.0 {
            for x in &mut mesh {
                *x += noise.sample(&mut rng);
            }
        }
        data.extend(mesh);
    }
    let targets = FrameArray::new(config.frames, 3 * n, data)?;
    Ok(SyntheticData { model, truth, targets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mm::objective;
    use crate::model::{eval_linear, eval_quadratic};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig { m: 12, n: 80, pair_count: 15, frames: 30, seed, ..SynthConfig::default() }
    }

    #[test]
    fn noiseless_truth_has_zero_objective() {
        let data = generate_synthetic(&small(3)).unwrap();
        for (f, w) in data.truth.iter().enumerate() {
            assert!(objective(&data.model, w, data.targets.frame(f), 0.0).unwrap() <= 1e-18);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_synthetic(&small(9)).unwrap();
        let b = generate_synthetic(&small(9)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.targets.to_bytes(), b.targets.to_bytes());
        let c = generate_synthetic(&small(10)).unwrap();
        assert_ne!(a.model.fingerprint(), c.model.fingerprint());
    }

    #[test]
    fn zero_corrective_scale_is_linear() {
        let data = generate_synthetic(&SynthConfig { corrective_scale: 0.0, ..small(4) }).unwrap();
        for w in &data.truth {
            assert_eq!(eval_linear(&data.model, w).unwrap(), eval_quadratic(&data.model, w).unwrap());
        }
    }

    #[test]
    fn structure_matches_config() {
        let cfg = small(5);
        let data = generate_synthetic(&cfg).unwrap();
        assert_eq!(data.model.num_blendshapes(), cfg.m);
        assert_eq!(data.model.num_pairs(), cfg.pair_count);
        assert_eq!(data.targets.frames(), cfg.frames);
        assert!(data.truth.iter().flat_map(|w| w.as_slice()).all(|&x| (0.0..=1.0).contains(&x)));
        let active = data.truth.iter().flat_map(|w| w.as_slice()).filter(|&&x| x > 0.0).count();
        assert!(active > 0);
        // every delta column is confined to one contiguous run of vertices
        for j in 0..cfg.m {
            let col = data.model.delta_column(j);
            let moved: Vec<usize> = (0..cfg.n).filter(|&v| col[3 * v..3 * v + 3].iter().any(|&x| x != 0.0)).collect();
            assert_eq!(moved.last().unwrap() - moved[0] + 1, moved.len());
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_synthetic(&SynthConfig { pair_count: 67, ..small(1) }).is_err());
        assert!(generate_synthetic(&SynthConfig { noise_std: -1.0, ..small(1) }).is_err());
        assert!(generate_synthetic(&SynthConfig { activation_sparsity: 0.0, ..small(1) }).is_err());
    }
}
