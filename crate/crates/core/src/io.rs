//! On-disk formats: model JSON with binary sidecars, frame arrays, and CSV
//! weight/timing tables.
//!
//! Binary payloads are little-endian `f64`. Sidecar references count elements,
//! not bytes, and resolve relative to the directory of the model JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlendshapeModel, WeightVector};

pub const MODEL_VERSION: u32 = 1;
pub const FRAME_MAGIC: &[u8; 8] = b"RIGFRAME";
pub const FRAME_VERSION: u32 = 1;
const FRAME_HEADER_LEN: usize = 8 + 4 + 4 + 4;

/// A slice of a sidecar array: `len` values starting at element `offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayRef {
    pub path: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub j: usize,
    pub k: usize,
    pub vector_ref: ArrayRef,
}

/// JSON header of a stored model. `deltas_ref` holds the `3n x m` delta matrix
/// row-major; each corrective vector is a contiguous run of `3n` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub n: usize,
    pub m: usize,
    pub names: Vec<String>,
    pub neutral_ref: ArrayRef,
    pub deltas_ref: ArrayRef,
    pub pairs: Vec<PairEntry>,
    pub units: String,
}

fn encode_f64(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_f64(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn sidecar_name(json_path: &Path, suffix: &str) -> String {
    let stem = json_path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    format!("{stem}.{suffix}.f64")
}

/// Writes `path` (JSON) and three sidecars next to it.
pub fn save_model(model: &BlendshapeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new(""));
    let dim = model.num_coordinates();
    let m = model.num_blendshapes();

    let neutral_name = sidecar_name(path, "neutral");
    let deltas_name = sidecar_name(path, "deltas");
    let corr_name = sidecar_name(path, "correctives");

    let mut correctives = Vec::with_capacity(dim * model.num_pairs());
    let mut pairs = Vec::with_capacity(model.num_pairs());
    for (p, &(j, k)) in model.pairs().iter().enumerate() {
        correctives.extend(model.corrective_vector(p));
        pairs.push(PairEntry { j, k, vector_ref: ArrayRef { path: corr_name.clone(), offset: p * dim, len: dim } });
    }

    let header = ModelFile {
        version: MODEL_VERSION,
        n: model.num_vertices(),
        m,
        names: model.names().to_vec(),
        neutral_ref: ArrayRef { path: neutral_name.clone(), offset: 0, len: dim },
        deltas_ref: ArrayRef { path: deltas_name.clone(), offset: 0, len: dim * m },
        pairs,
        units: "cm".into(),
    };

    write_file(&dir.join(&neutral_name), &encode_f64(model.neutral()))?;
    write_file(&dir.join(&deltas_name), &encode_f64(model.deltas()))?;
    write_file(&dir.join(&corr_name), &encode_f64(&correctives))?;
    let mut json = serde_json::to_string_pretty(&header).map_err(|e| Error::Json { path: path.into(), source: e })?;
    json.push('\n');
    write_file(path, json.as_bytes())
}

struct SidecarReader {
    dir: PathBuf,
    cached: Vec<(String, Vec<u8>)>,
}

impl SidecarReader {
    fn read(&mut self, field: &str, r: &ArrayRef, expected_len: usize) -> Result<Vec<f64>> {
        let full = self.dir.join(&r.path);
        if r.len != expected_len {
            return Err(Error::format(&full, format!("{field} declares {} values, expected {expected_len}", r.len)));
        }
        let idx = match self.cached.iter().position(|(p, _)| *p == r.path) {
            Some(i) => i,
            None => {
                self.cached.push((r.path.clone(), read_file(&full)?));
                self.cached.len() - 1
            }
        };
        let bytes = &self.cached[idx].1;
        let end = (r.offset + r.len) * 8;
        if bytes.len() < end {
            return Err(Error::format(
                &full,
                format!(
                    "{field} needs values [{}, {}) ({end} bytes) but file holds {} bytes",
                    r.offset,
                    r.offset + r.len,
                    bytes.len()
                ),
            ));
        }
        let values = decode_f64(&bytes[r.offset * 8..end]);
        if let Some(offset) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: format!("{field} ({})", full.display()), offset });
        }
        Ok(values)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BlendshapeModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })?;
    if header.version != MODEL_VERSION {
        return Err(Error::format(path, format!("unsupported model version {}", header.version)));
    }
    if header.units != "cm" {
        return Err(Error::format(path, format!("unsupported units {:?}", header.units)));
    }
    if header.names.len() != header.m {
        return Err(Error::format(path, format!("{} names for m = {}", header.names.len(), header.m)));
    }
    let dim = 3 * header.n;
    let mut reader = SidecarReader { dir: path.parent().unwrap_or(Path::new("")).to_path_buf(), cached: Vec::new() };
    let neutral = reader.read("neutral_ref", &header.neutral_ref, dim)?;
    let deltas = reader.read("deltas_ref", &header.deltas_ref, dim * header.m)?;
    let mut correctives = Vec::with_capacity(header.pairs.len());
    for (p, entry) in header.pairs.iter().enumerate() {
        let v = reader.read(&format!("pairs[{p}].vector_ref"), &entry.vector_ref, dim)?;
        correctives.push(((entry.j, entry.k), v));
    }
    BlendshapeModel::new(header.n, header.names, neutral, deltas, correctives)
}

/// A `frames x dim` row-major array: target meshes (`dim = 3n`) or weight
/// sequences (`dim = m`).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameArray {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FrameArray {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * dim {
            return Err(Error::DimensionMismatch { what: "frame array", expected: frames * dim, actual: data.len() });
        }
        Ok(FrameArray { frames, dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch { what: "frame", expected: dim, actual: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(FrameArray { frames: rows.len(), dim, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        &self.data[f * self.dim..(f + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.frames)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Keeps the listed frames, in the given order.
    pub fn select(&self, frames: &[usize]) -> Self {
        let mut data = Vec::with_capacity(frames.len() * self.dim);
        for &f in frames {
            data.extend_from_slice(self.frame(f));
        }
        FrameArray { frames: frames.len(), dim: self.dim, data }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.data.len() * 8);
        out.extend_from_slice(FRAME_MAGIC);
        out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend(encode_f64(&self.data));
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < FRAME_HEADER_LEN || &bytes[..8] != FRAME_MAGIC {
            return Err(Error::format(path, "not a frame array file"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        let version = word(8);
        if version != FRAME_VERSION as usize {
            return Err(Error::format(path, format!("unsupported frame array version {version}")));
        }
        let (frames, dim) = (word(12), word(16));
        let expected = FRAME_HEADER_LEN + frames * dim * 8;
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!("header declares {frames} x {dim} values ({expected} bytes), file holds {} bytes", bytes.len()),
            ));
        }
        let data = decode_f64(&bytes[FRAME_HEADER_LEN..]);
        if let Some(offset) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: path.display().to_string(), offset });
        }
        Ok(FrameArray { frames, dim, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&read_file(path)?, path)
    }
}

/// Converts absolute meshes to delta form by subtracting the neutral.
pub fn meshes_to_delta(meshes: &FrameArray, model: &BlendshapeModel) -> Result<FrameArray> {
    if meshes.dim() != model.num_coordinates() {
        return Err(Error::DimensionMismatch { what: "mesh frame", expected: model.num_coordinates(), actual: meshes.dim() });
    }
    let mut data = Vec::with_capacity(meshes.data().len());
    for row in meshes.rows() {
        data.extend(model.to_delta(row)?);
    }
    FrameArray::new(meshes.frames(), meshes.dim(), data)
}

pub fn import_absolute_meshes(path: impl AsRef<Path>, model: &BlendshapeModel) -> Result<FrameArray> {
    meshes_to_delta(&FrameArray::load(path)?, model)
}

/// `frame,<name_0>,...,<name_{m-1}>` followed by one row per frame. Values
/// use the shortest representation that parses back to the same `f64`.
pub fn weights_csv(names: &[String], weights: &[WeightVector]) -> String {
    let mut out = String::from("frame");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (f, w) in weights.iter().enumerate() {
        let _ = write!(out, "{f}");
        for x in w.as_slice() {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

pub fn write_weights_csv(path: impl AsRef<Path>, names: &[String], weights: &[WeightVector]) -> Result<()> {
    write_file(path.as_ref(), weights_csv(names, weights).as_bytes())
}

/// Reads a weights CSV, returning the blendshape names and one vector per row.
pub fn read_weights_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<WeightVector>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::format(path, "empty weights file"))?;
    let mut cols = header.split(',');
    if cols.next() != Some("frame") {
        return Err(Error::format(path, "header must start with `frame`"));
    }
    let names: Vec<String> = cols.map(str::to_string).collect();
    let mut weights = Vec::new();
    for (row, line) in lines.enumerate() {
        let values = line
            .split(',')
            .skip(1)
            .map(|c| c.trim().parse::<f64>().map_err(|_| Error::format(path, format!("row {}: bad value {c:?}", row + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != names.len() {
            return Err(Error::format(path, format!("row {} has {} values, expected {}", row + 1, values.len(), names.len())));
        }
        weights.push(WeightVector::new(values).map_err(|e| Error::format(path, format!("row {}: {e}", row + 1)))?);
    }
    Ok((names, weights))
}

pub fn write_timing_csv(path: impl AsRef<Path>, seconds: &[f64]) -> Result<()> {
    let mut out = String::from("frame,seconds\n");
    for (f, s) in seconds.iter().enumerate() {
        let _ = writeln!(out, "{f},{s}");
    }
    write_file(path.as_ref(), out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> BlendshapeModel {
        let n = 3;
        let dim = 3 * n;
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let neutral: Vec<f64> = (0..dim).map(|i| i as f64 * 0.5).collect();
        let deltas: Vec<f64> = (0..dim * 3).map(|i| (i as f64 * 0.37).sin()).collect();
        let corr = vec![
            ((2, 0), (0..dim).map(|i| (i as f64).cos() * 0.1).collect()),
            ((1, 2), (0..dim).map(|i| 1e-300 * i as f64).collect()),
        ];
        BlendshapeModel::new(n, names, neutral, deltas, corr).unwrap()
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rig.json");
        let model = small_model();
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.fingerprint(), model.fingerprint());
        assert_eq!(back.pairs(), &[(0, 2), (1, 2)]);
    }

    #[test]
    fn truncated_sidecar_names_file_and_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rig.json");
        save_model(&small_model(), &path).unwrap();
        let deltas = dir.path().join("rig.deltas.f64");
        let bytes = fs::read(&deltas).unwrap();
        fs::write(&deltas, &bytes[..bytes.len() - 8]).unwrap();
        let msg = load_model(&path).unwrap_err().to_string();
        assert!(msg.contains("rig.deltas.f64"), "{msg}");
        assert!(msg.contains("216 bytes"), "{msg}");
    }

    #[test]
    fn missing_sidecar_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rig.json");
        save_model(&small_model(), &path).unwrap();
        fs::remove_file(dir.path().join("rig.neutral.f64")).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Io { .. })));
    }

    #[test]
    fn reversed_pairs_are_canonicalized_and_duplicates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rig.json");
        save_model(&small_model(), &path).unwrap();
        let mut header: ModelFile = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        header.pairs[1].j = 2;
        header.pairs[1].k = 1;
        fs::write(&path, serde_json::to_string(&header).unwrap()).unwrap();
        assert_eq!(load_model(&path).unwrap().pairs(), &[(0, 2), (1, 2)]);

        header.pairs[1].j = 0;
        header.pairs[1].k = 2;
        fs::write(&path, serde_json::to_string(&header).unwrap()).unwrap();
        assert!(matches!(load_model(&path), Err(Error::InvalidPair { .. })));
    }

    #[test]
    fn non_finite_sidecar_value_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rig.json");
        save_model(&small_model(), &path).unwrap();
        let neutral = dir.path().join("rig.neutral.f64");
        let mut bytes = fs::read(&neutral).unwrap();
        bytes[16..24].copy_from_slice(&f64::NAN.to_le_bytes());
        fs::write(&neutral, bytes).unwrap();
        match load_model(&path) {
            Err(Error::NonFinite { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn writers_are_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        save_model(&small_model(), &a).unwrap();
        save_model(&small_model(), &b).unwrap();
        let ja = fs::read_to_string(&a).unwrap().replace("a.", "X.");
        let jb = fs::read_to_string(&b).unwrap().replace("b.", "X.");
        assert_eq!(ja, jb);
        assert_eq!(fs::read(dir.path().join("a.deltas.f64")).unwrap(), fs::read(dir.path().join("b.deltas.f64")).unwrap());
    }

    #[test]
    fn frame_array_round_trip_and_size_check() {
        let arr = FrameArray::new(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-12, -0.0]).unwrap();
        let bytes = arr.to_bytes();
        assert_eq!(bytes.len(), 20 + 48);
        let back = FrameArray::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), arr.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(FrameArray::from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(FrameArray::from_bytes(&bad, Path::new("x")).is_err());
    }

    #[test]
    fn absolute_import() {
        let model = small_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abs.rigframe");
        let delta: Vec<f64> = (0..9).map(|i| 0.1 * i as f64 - 0.3).collect();
        let rows = vec![model.neutral().to_vec(), model.to_absolute(&delta).unwrap()];
        FrameArray::from_rows(9, &rows).unwrap().save(&path).unwrap();
        let out = import_absolute_meshes(&path, &model).unwrap();
        assert_eq!(out.frames(), 2);
        assert!(out.frame(0).iter().all(|&x| x == 0.0));
        for (a, b) in out.frame(1).iter().zip(&delta) {
            assert!((a - b).abs() <= 1e-15);
        }
        let wrong = FrameArray::new(1, 6, vec![0.0; 6]).unwrap();
        assert!(matches!(meshes_to_delta(&wrong, &model), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn weights_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let names = vec!["jaw".to_string(), "blink".to_string()];
        let w = vec![WeightVector::new(vec![0.1, 1.0 / 3.0]).unwrap(), WeightVector::new(vec![0.0, 1.0]).unwrap()];
        write_weights_csv(&path, &names, &w).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("frame,jaw,blink\n0,0.1,"));
        let (n2, w2) = read_weights_csv(&path).unwrap();
        assert_eq!(n2, names);
        assert_eq!(w2, w);
    }
}
