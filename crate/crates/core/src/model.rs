//! Blendshape rig model and its forward evaluation.
//!
//! All mesh-sized quantities are flat `f64` vectors of length `3n`, with the
//! coordinates of vertex `v` stored at `3v, 3v + 1, 3v + 2`. The delta matrix
//! and the corrective vectors are both stored coordinate-major so that the
//! per-coordinate work done by the solvers reads contiguous memory.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};

/// A quadratic delta-blendshape model: `f(w) = b0 + B w + sum_{(j,k)} w_j w_k b^{j,k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeModel {
    num_vertices: usize,
    names: Vec<String>,
    neutral: Vec<f64>,
    /// `3n x m`, row-major.
    deltas: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    /// `3n x |P|`, row-major; column `p` is the corrective vector of `pairs[p]`.
    correctives: Vec<f64>,
    fingerprint: u64,
}

impl BlendshapeModel {
    /// Builds a model from a row-major `3n x m` delta matrix.
    ///
    /// Corrective pairs given as `(k, j)` with `k > j` are canonicalized to
    /// `(j, k)`. Self pairs and duplicates are rejected.
    pub fn new(
        num_vertices: usize,
        names: Vec<String>,
        neutral: Vec<f64>,
        deltas: Vec<f64>,
        correctives: Vec<((usize, usize), Vec<f64>)>,
    ) -> Result<Self> {
        if num_vertices == 0 {
            return Err(Error::InvalidConfig("model needs at least one vertex".into()));
        }
        let m = names.len();
        if m == 0 {
            return Err(Error::InvalidConfig("model needs at least one blendshape".into()));
        }
        let dim = 3 * num_vertices;
        check_len("neutral", dim, neutral.len())?;
        check_len("deltas", dim * m, deltas.len())?;
        check_finite("neutral", &neutral)?;
        check_finite("deltas", &deltas)?;

        let mut seen = HashSet::new();
        let mut pairs = Vec::with_capacity(correctives.len());
        for (p, ((a, b), vector)) in correctives.iter().enumerate() {
            let (j, k) = if a < b { (*a, *b) } else { (*b, *a) };
            if j == k {
                return Err(Error::InvalidPair { j, k, reason: "pair indices must differ" });
            }
            if k >= m {
                return Err(Error::InvalidPair { j, k, reason: "index exceeds blendshape count" });
            }
            if !seen.insert((j, k)) {
                return Err(Error::InvalidPair { j, k, reason: "duplicate pair" });
            }
            check_len("corrective vector", dim, vector.len())?;
            check_finite(&format!("corrective vector {p}"), vector)?;
            pairs.push((j, k));
        }

        let np = pairs.len();
        let mut packed = vec![0.0; dim * np];
        for (p, (_, vector)) in correctives.iter().enumerate() {
            for (i, &value) in vector.iter().enumerate() {
                packed[i * np + p] = value;
            }
        }

        let mut model = BlendshapeModel {
            num_vertices,
            names,
            neutral,
            deltas,
            pairs,
            correctives: packed,
            fingerprint: 0,
        };
        model.fingerprint = model.content_hash();
        Ok(model)
    }

    /// Builds a model from delta columns, one `3n` vector per blendshape.
    pub fn from_columns(
        num_vertices: usize,
        names: Vec<String>,
        neutral: Vec<f64>,
        columns: &[Vec<f64>],
        correctives: Vec<((usize, usize), Vec<f64>)>,
    ) -> Result<Self> {
        let dim = 3 * num_vertices;
        let m = columns.len();
        check_len("delta columns", names.len(), m)?;
        let mut deltas = vec![0.0; dim * m];
        for (j, column) in columns.iter().enumerate() {
            check_len("delta column", dim, column.len())?;
            for (i, &value) in column.iter().enumerate() {
                deltas[i * m + j] = value;
            }
        }
        Self::new(num_vertices, names, neutral, deltas, correctives)
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    /// Mesh dimension `3n`.
    pub fn num_coordinates(&self) -> usize {
        3 * self.num_vertices
    }

    pub fn num_blendshapes(&self) -> usize {
        self.names.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn neutral(&self) -> &[f64] {
        &self.neutral
    }

    /// Row-major `3n x m` delta matrix.
    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    /// Row `i` of the delta matrix (length `m`).
    pub fn delta_row(&self, coordinate: usize) -> &[f64] {
        let m = self.num_blendshapes();
        &self.deltas[coordinate * m..(coordinate + 1) * m]
    }

    pub fn delta_column(&self, blendshape: usize) -> Vec<f64> {
        let m = self.num_blendshapes();
        self.deltas.iter().skip(blendshape).step_by(m).copied().collect()
    }

    /// Canonical `(j, k)` pairs with `j < k`, in storage order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Entries `b^{j,k}_i` of every pair at coordinate `i`, in pair order.
    pub fn corrective_row(&self, coordinate: usize) -> &[f64] {
        let np = self.pairs.len();
        &self.correctives[coordinate * np..(coordinate + 1) * np]
    }

    pub fn corrective_vector(&self, pair: usize) -> Vec<f64> {
        let np = self.pairs.len();
        self.correctives.iter().skip(pair).step_by(np).copied().collect()
    }

    /// 64-bit content hash over every array of the model.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn content_hash(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write_u64(self.num_vertices as u64);
        h.write_u64(self.names.len() as u64);
        for name in &self.names {
            h.write_u64(name.len() as u64);
            h.write(name.as_bytes());
        }
        for &x in self.neutral.iter().chain(&self.deltas) {
            h.write_u64(x.to_bits());
        }
        h.write_u64(self.pairs.len() as u64);
        for &(j, k) in &self.pairs {
            h.write_u64(j as u64);
            h.write_u64(k as u64);
        }
        for &x in &self.correctives {
            h.write_u64(x.to_bits());
        }
        h.finish()
    }

    /// Linear offset `B w` (delta form).
    pub fn linear_offset(&self, w: &WeightVector) -> Result<Vec<f64>> {
        check_len("weight vector", self.num_blendshapes(), w.len())?;
        let w = w.as_slice();
        let m = w.len();
        Ok(self
            .deltas
            .par_chunks(m)
            .map(|row| dot(row, w))
            .collect())
    }

    /// Quadratic offset `B w + sum_{(j,k)} w_j w_k b^{j,k}` (delta form).
    pub fn quadratic_offset(&self, w: &WeightVector) -> Result<Vec<f64>> {
        check_len("weight vector", self.num_blendshapes(), w.len())?;
        let w = w.as_slice();
        Ok((0..self.num_coordinates())
            .into_par_iter()
            .map(|i| dot(self.delta_row(i), w) + self.pair_term(i, w))
            .collect())
    }

    /// `w^T D^(i) w`, streamed over the corrective pairs.
    fn pair_term(&self, coordinate: usize, w: &[f64]) -> f64 {
        self.corrective_row(coordinate)
            .iter()
            .zip(&self.pairs)
            .fold(0.0, |acc, (&c, &(j, k))| acc + c * w[j] * w[k])
    }

    /// Converts an absolute mesh into delta form.
    pub fn to_delta(&self, mesh: &[f64]) -> Result<Vec<f64>> {
        check_len("mesh", self.num_coordinates(), mesh.len())?;
        Ok(mesh.iter().zip(&self.neutral).map(|(a, b)| a - b).collect())
    }

    /// Converts a delta-form mesh back into absolute coordinates.
    pub fn to_absolute(&self, delta: &[f64]) -> Result<Vec<f64>> {
        check_len("mesh", self.num_coordinates(), delta.len())?;
        Ok(delta.iter().zip(&self.neutral).map(|(a, b)| a + b).collect())
    }
}

/// Blendshape activations, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Fails on any non-finite entry or entry outside `[0, 1]`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InfeasibleWeight { index, value });
            }
        }
        Ok(WeightVector(values))
    }

    pub fn zeros(m: usize) -> Self {
        WeightVector(vec![0.0; m])
    }

    /// Projects arbitrary values onto the box. NaN maps to 0.
    pub fn clipped(values: Vec<f64>) -> Self {
        WeightVector(
            values
                .into_iter()
                .map(|x| if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl AsRef<[f64]> for WeightVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Sparse symmetric `m x m` matrix `D^(i)` for a single mesh coordinate.
///
/// Only the upper triangle is stored; `D_jk = D_kj = b^{j,k}_i / 2` and the
/// diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectiveMatrixView {
    pub coordinate_index: usize,
    pub dim: usize,
    /// `(j, k, D_jk)` with `j < k` and nonzero value.
    pub entries: Vec<(usize, usize, f64)>,
}

impl CorrectiveMatrixView {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (j, k) = if row <= col { (row, col) } else { (col, row) };
        self.entries
            .iter()
            .find(|e| e.0 == j && e.1 == k)
            .map_or(0.0, |e| e.2)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// `x^T D x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.entries
            .iter()
            .fold(0.0, |acc, &(j, k, d)| acc + 2.0 * d * x[j] * x[k])
    }

    /// Sorted blendshape indices that touch a stored entry.
    pub fn support(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.entries.iter().flat_map(|e| [e.0, e.1]).collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let m = self.dim;
        let mut out = vec![0.0; m * m];
        for &(j, k, d) in &self.entries {
            out[j * m + k] = d;
            out[k * m + j] = d;
        }
        out
    }
}

/// Assembles `D^(i)` for one coordinate.
pub fn corrective_matrix(model: &BlendshapeModel, coordinate: usize) -> Result<CorrectiveMatrixView> {
    if coordinate >= model.num_coordinates() {
        return Err(Error::OutOfRange {
            what: "coordinate",
            index: coordinate,
            len: model.num_coordinates(),
        });
    }
    let entries = model
        .corrective_row(coordinate)
        .iter()
        .zip(model.pairs())
        .filter(|(&c, _)| c != 0.0)
        .map(|(&c, &(j, k))| (j, k, 0.5 * c))
        .collect();
    Ok(CorrectiveMatrixView {
        coordinate_index: coordinate,
        dim: model.num_blendshapes(),
        entries,
    })
}

/// Linearization of the rig residual around `w`.
///
/// For every coordinate `i` and increment `v`:
/// `f_Q(w + v)_i - t_i = g_i + h_i^T v + v^T D^(i) v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTerms {
    /// `g_i = B_i^T w + w^T D^(i) w - t_i`.
    pub g: Vec<f64>,
    /// Row-major `3n x m`, `h_i = B_i + 2 D^(i) w`.
    pub h: Vec<f64>,
    pub num_blendshapes: usize,
}

impl ResidualTerms {
    pub fn h_row(&self, coordinate: usize) -> &[f64] {
        let m = self.num_blendshapes;
        &self.h[coordinate * m..(coordinate + 1) * m]
    }

    pub fn num_coordinates(&self) -> usize {
        self.g.len()
    }
}

pub fn eval_linear(model: &BlendshapeModel, w: &WeightVector) -> Result<Vec<f64>> {
    let offset = model.linear_offset(w)?;
    Ok(offset.iter().zip(model.neutral()).map(|(d, b)| d + b).collect())
}

pub fn eval_quadratic(model: &BlendshapeModel, w: &WeightVector) -> Result<Vec<f64>> {
    let offset = model.quadratic_offset(w)?;
    Ok(offset.iter().zip(model.neutral()).map(|(d, b)| d + b).collect())
}

/// Computes `g` and `h` for a delta-form target, streaming over corrective
/// pairs instead of materializing `D^(i)`.
pub fn residual_terms(model: &BlendshapeModel, w: &WeightVector, target: &[f64]) -> Result<ResidualTerms> {
    let m = model.num_blendshapes();
    let dim = model.num_coordinates();
    check_len("weight vector", m, w.len())?;
    check_len("target", dim, target.len())?;
    let w = w.as_slice();
    let pairs = model.pairs();

    let mut g = vec![0.0; dim];
    let mut h = model.deltas().to_vec();
    g.par_iter_mut()
        .zip(h.par_chunks_mut(m))
        .enumerate()
        .for_each(|(i, (gi, hi))| {
            let mut quad = 0.0;
            for (&c, &(j, k)) in model.corrective_row(i).iter().zip(pairs) {
                if c == 0.0 {
                    continue;
                }
                quad += c * w[j] * w[k];
                hi[j] += w[k] * c;
                hi[k] += w[j] * c;
            }
            *gi = dot(model.delta_row(i), w) + quad - target[i];
        });

    if let Some(i) = g.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "residual g".into(), offset: i });
    }
    if let Some(i) = h.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "residual h".into(), offset: i });
    }
    Ok(ResidualTerms { g, h, num_blendshapes: m })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub(crate) fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(offset) => Err(Error::NonFinite { what: what.to_string(), offset }),
        None => Ok(()),
    }
}

/// FNV-1a, 64-bit.
struct Fnv64(u64);

impl Fnv64 {
    fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn write_u64(&mut self, x: u64) {
        self.write(&x.to_le_bytes());
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
