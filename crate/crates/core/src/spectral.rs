//! Per-coordinate spectral bounds of the corrective matrices `D^(i)`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{corrective_matrix, BlendshapeModel, CorrectiveMatrixView};

pub const CACHE_MAGIC: &[u8; 8] = b"RIGSPECT";
pub const CACHE_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 8;

/// Extreme eigenvalues and largest singular value of one `D^(i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremes {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub sigma: f64,
}

/// Eigenvalue extremes of a symmetric corrective matrix.
///
/// Only the sub-block spanned by blendshapes that appear in a nonzero entry is
/// decomposed. When that support is a strict subset of all `m` blendshapes the
/// inactive complement contributes the eigenvalue 0, which is folded into the
/// extremes.
pub fn extreme_eigenvalues(d: &CorrectiveMatrixView) -> Result<Extremes> {
    if let Some(p) = d.entries.iter().position(|e| !e.2.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("corrective matrix {}", d.coordinate_index),
            offset: p,
        });
    }
    let support = d.support();
    if support.is_empty() {
        return Ok(Extremes { lambda_min: 0.0, lambda_max: 0.0, sigma: 0.0 });
    }

    let (mut lo, mut hi) = if support.len() == 2 {
        // a single off-diagonal entry: eigenvalues are +-|d|
        let a = d.entries[0].2.abs();
        (-a, a)
    } else {
        let k = support.len();
        let mut local = vec![usize::MAX; d.dim];
        for (pos, &j) in support.iter().enumerate() {
            local[j] = pos;
        }
        let mut block = DMatrix::<f64>::zeros(k, k);
        for &(j, kk, value) in &d.entries {
            block[(local[j], local[kk])] = value;
            block[(local[kk], local[j])] = value;
        }
        let eig = SymmetricEigen::try_new(block, f64::EPSILON, 10_000).ok_or_else(|| Error::Eigen {
            coordinate: d.coordinate_index,
            reason: "symmetric QR iteration did not converge".into(),
        })?;
        eig.eigenvalues
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    };
    if support.len() < d.dim {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    Ok(Extremes {
        lambda_min: lo,
        lambda_max: hi,
        sigma: lo.abs().max(hi.abs()),
    })
}

/// Precomputed spectral data for every coordinate of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCache {
    pub num_vertices: usize,
    pub num_blendshapes: usize,
    pub lambda_min: Vec<f64>,
    pub lambda_max: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `s = 2m * sum_i sigma_i^2`, the quartic coefficient shared by all blendshapes.
    pub s_coefficient: f64,
    pub model_fingerprint: u64,
}

impl SpectralCache {
    pub fn build(model: &BlendshapeModel) -> Result<Self> {
        build_cache(model)
    }

    pub fn num_coordinates(&self) -> usize {
        self.sigma.len()
    }

    /// `lambda_min` when `g < 0`, else `lambda_max`.
    #[inline]
    pub fn select(&self, coordinate: usize, g: f64) -> f64 {
        if g < 0.0 {
            self.lambda_min[coordinate]
        } else {
            self.lambda_max[coordinate]
        }
    }

    pub fn check_model(&self, model: &BlendshapeModel) -> Result<()> {
        if self.model_fingerprint != model.fingerprint() {
            return Err(Error::FingerprintMismatch {
                cache: self.model_fingerprint,
                model: model.fingerprint(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.num_coordinates();
        let mut out = Vec::with_capacity(HEADER_LEN + dim * 24 + 8);
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.num_vertices as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_blendshapes as u32).to_le_bytes());
        out.extend_from_slice(&self.model_fingerprint.to_le_bytes());
        for i in 0..dim {
            out.extend_from_slice(&self.lambda_min[i].to_le_bytes());
            out.extend_from_slice(&self.lambda_max[i].to_le_bytes());
            out.extend_from_slice(&self.sigma[i].to_le_bytes());
        }
        out.extend_from_slice(&self.s_coefficient.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != CACHE_MAGIC {
            return Err(Error::format(path, "missing RIGSPECT header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != CACHE_VERSION {
            return Err(Error::format(path, format!("unsupported cache version {version}")));
        }
        let num_vertices = u32_at(12) as usize;
        let num_blendshapes = u32_at(16) as usize;
        let model_fingerprint = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let dim = 3 * num_vertices;
        let expected = HEADER_LEN + dim * 24 + 8;
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!("expected {expected} bytes for {dim} coordinates, found {}", bytes.len()),
            ));
        }
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let mut lambda_min = Vec::with_capacity(dim);
        let mut lambda_max = Vec::with_capacity(dim);
        let mut sigma = Vec::with_capacity(dim);
        for i in 0..dim {
            let o = HEADER_LEN + 24 * i;
            lambda_min.push(f64_at(o));
            lambda_max.push(f64_at(o + 8));
            sigma.push(f64_at(o + 16));
        }
        let s_coefficient = f64_at(HEADER_LEN + 24 * dim);
        Ok(SpectralCache {
            num_vertices,
            num_blendshapes,
            lambda_min,
            lambda_max,
            sigma,
            s_coefficient,
            model_fingerprint,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Computes `(lambda_min, lambda_max, sigma)` for every coordinate in parallel.
pub fn build_cache(model: &BlendshapeModel) -> Result<SpectralCache> {
    let dim = model.num_coordinates();
    let extremes: Vec<Extremes> = (0..dim)
        .into_par_iter()
        .map(|i| {
            let d = corrective_matrix(model, i)?;
            extreme_eigenvalues(&d).map_err(|e| match e {
                Error::Eigen { .. } => e,
                other => Error::Eigen { coordinate: i, reason: other.to_string() },
            })
        })
        .collect::<Result<_>>()?;

    let m = model.num_blendshapes();
    let sum_sq = extremes.iter().fold(0.0, |acc, e| acc + e.sigma * e.sigma);
    Ok(SpectralCache {
        num_vertices: model.num_vertices(),
        num_blendshapes: m,
        lambda_min: extremes.iter().map(|e| e.lambda_min).collect(),
        lambda_max: extremes.iter().map(|e| e.lambda_max).collect(),
        sigma: extremes.iter().map(|e| e.sigma).collect(),
        s_coefficient: 2.0 * m as f64 * sum_sq,
        model_fingerprint: model.fingerprint(),
    })
}

/// Picks the eigenvalue extreme that makes `g * v^T D v <= g * lambda * |v|^2` hold.
pub fn lambda_selector(cache: &SpectralCache, coordinate: usize, g: f64) -> Result<f64> {
    if coordinate >= cache.num_coordinates() {
        return Err(Error::OutOfRange {
            what: "coordinate",
            index: coordinate,
            len: cache.num_coordinates(),
        });
    }
    Ok(cache.select(coordinate, g))
}
