//! Per-usage contextualized vectors and their reduction to one vector per usage.
//!
//! Stores keep every exported layer and every subword token of the target
//! span, so pooling and layer aggregation can be varied without re-running
//! the encoder.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "LSCDEMB1"
//! count      u32
//! record*    u16 id length, id bytes (UTF-8),
//!            u16 L, u16 T, u32 D,
//!            L*T*D f32 values, layer-major, then token, then dimension
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LSCDEMB1";

/// Vectors of one usage: `layers x tokens x dim` 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub usage_id: String,
    values: Array3<f32>,
}

impl EmbeddingRecord {
    pub fn new(usage_id: impl Into<String>, values: Array3<f32>) -> Result<Self> {
        let usage_id = usage_id.into();
        let (l, t, d) = values.dim();
        if l == 0 || t == 0 || d == 0 {
            return Err(Error::Shape(format!("record {usage_id:?} has empty shape {l}x{t}x{d}")));
        }
        if l > u16::MAX as usize || t > u16::MAX as usize || d > u32::MAX as usize {
            return Err(Error::Shape(format!("record {usage_id:?} shape {l}x{t}x{d} too large")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("record {usage_id:?} has non-finite values")));
        }
        Ok(EmbeddingRecord { usage_id, values })
    }

    pub fn from_vec(
        usage_id: impl Into<String>,
        (layers, tokens, dim): (usize, usize, usize),
        values: Vec<f32>,
    ) -> Result<Self> {
        let arr = Array3::from_shape_vec((layers, tokens, dim), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(usage_id, arr)
    }

    pub fn layers(&self) -> usize {
        self.values.dim().0
    }

    pub fn tokens(&self) -> usize {
        self.values.dim().1
    }

    pub fn dim(&self) -> usize {
        self.values.dim().2
    }

    pub fn values(&self) -> &Array3<f32> {
        &self.values
    }

    /// The `tokens x dim` matrix of one layer.
    pub fn layer(&self, index: usize) -> ArrayView2<'_, f32> {
        self.values.index_axis(Axis(0), index)
    }
}

pub type EmbeddingStore = BTreeMap<String, EmbeddingRecord>;

pub fn write_store<'a, W: Write>(
    out: W,
    records: impl IntoIterator<Item = &'a EmbeddingRecord>,
) -> Result<()> {
    let records: Vec<&EmbeddingRecord> = records.into_iter().collect();
    let mut seen = std::collections::HashSet::new();
    for r in &records {
        if !seen.insert(r.usage_id.as_str()) {
            return Err(Error::DuplicateRecord(r.usage_id.clone()));
        }
        if r.usage_id.len() > u16::MAX as usize {
            return Err(Error::Shape(format!("usage id of {} bytes too long", r.usage_id.len())));
        }
    }
    let count = u32::try_from(records.len())
        .map_err(|_| Error::Shape("too many records".into()))?;

    let io = |e| Error::io("<store>", e);
    let mut w = BufWriter::new(out);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&count.to_le_bytes()).map_err(io)?;
    for r in records {
        let (l, t, d) = r.values.dim();
        w.write_all(&(r.usage_id.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(r.usage_id.as_bytes()).map_err(io)?;
        w.write_all(&(l as u16).to_le_bytes()).map_err(io)?;
        w.write_all(&(t as u16).to_le_bytes()).map_err(io)?;
        w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        // iter() walks in logical (row-major) order regardless of memory layout
        for v in r.values.iter() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_store_file<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a EmbeddingRecord>,
) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_store(f, records)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptStore {
                offset: self.pos as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn corrupt(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::CorruptStore {
            offset: offset as u64,
            reason: reason.into(),
        }
    }
}

/// Decodes a complete store, validating magic, counts, shapes and values.
pub fn decode_store(bytes: &[u8]) -> Result<EmbeddingStore> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic = c.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        let at = magic.iter().zip(MAGIC).position(|(a, b)| a != b).unwrap_or(0);
        return Err(c.corrupt(at, "bad magic"));
    }
    let count = c.u32("record count")?;
    let mut store = EmbeddingStore::new();
    for _ in 0..count {
        let start = c.pos;
        let id_len = c.u16("id length")? as usize;
        let id_at = c.pos;
        let id = std::str::from_utf8(c.take(id_len, "usage id")?)
            .map_err(|_| c.corrupt(id_at, "usage id is not UTF-8"))?
            .to_owned();
        let shape_at = c.pos;
        let l = c.u16("layer count")? as usize;
        let t = c.u16("token count")? as usize;
        let d = c.u32("dimension")? as usize;
        if l == 0 || t == 0 || d == 0 {
            return Err(c.corrupt(shape_at, format!("record {id:?} has empty shape {l}x{t}x{d}")));
        }
        let n = l
            .checked_mul(t)
            .and_then(|x| x.checked_mul(d))
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| c.corrupt(shape_at, "shape overflows"))?;
        let values_at = c.pos;
        let raw = c.take(n, "values")?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(c.corrupt(values_at + 4 * i, format!("non-finite value in {id:?}")));
        }
        let record = EmbeddingRecord {
            usage_id: id.clone(),
            values: Array3::from_shape_vec((l, t, d), values).expect("length checked"),
        };
        if store.insert(id.clone(), record).is_some() {
            return Err(c.corrupt(start, format!("duplicate record {id:?}")));
        }
    }
    if c.pos != bytes.len() {
        return Err(c.corrupt(c.pos, format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(store)
}

pub fn read_store(mut input: impl Read) -> Result<EmbeddingStore> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<store>", e))?;
    decode_store(&bytes)
}

pub fn read_store_file(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_store(&bytes)
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    usage_id: String,
    layers: usize,
    tokens: usize,
    dim: usize,
    values: Vec<f32>,
}

/// Debugging dump: one JSON object per record and line.
pub fn write_jsonl<'a>(
    out: impl Write,
    records: impl IntoIterator<Item = &'a EmbeddingRecord>,
) -> Result<()> {
    let mut w = BufWriter::new(out);
    for r in records {
        let rec = JsonRecord {
            usage_id: r.usage_id.clone(),
            layers: r.layers(),
            tokens: r.tokens(),
            dim: r.dim(),
            values: r.values.iter().copied().collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    w.flush().map_err(|e| Error::io("<jsonl>", e))
}

pub fn read_jsonl(input: impl Read) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new();
    for line in BufReader::new(input).lines() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line)?;
        let r = EmbeddingRecord::from_vec(rec.usage_id, (rec.layers, rec.tokens, rec.dim), rec.values)?;
        if store.contains_key(&r.usage_id) {
            return Err(Error::DuplicateRecord(r.usage_id));
        }
        store.insert(r.usage_id.clone(), r);
    }
    Ok(store)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubwordPooling {
    #[default]
    Mean,
    Max,
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerAggregation {
    #[default]
    Average,
    Concatenate,
}

/// Which stored layers to use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerSelection {
    /// The last `n` stored layers, in ascending order.
    Last(usize),
    /// Explicit 0-based layer indices, used in the given order.
    Indices(Vec<usize>),
}

impl Default for LayerSelection {
    fn default() -> Self {
        LayerSelection::Last(1)
    }
}

impl LayerSelection {
    /// Concrete indices for a record with `layers` layers.
    pub fn resolve(&self, layers: usize) -> Result<Vec<usize>> {
        let idx = match self {
            LayerSelection::Last(n) if *n == 0 || *n > layers => {
                return Err(Error::InvalidSpec(format!(
                    "cannot select last {n} of {layers} layers"
                )))
            }
            LayerSelection::Last(n) => (layers - n..layers).collect(),
            LayerSelection::Indices(v) => v.clone(),
        };
        if idx.is_empty() {
            return Err(Error::InvalidSpec("empty layer selection".into()));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= layers) {
            return Err(Error::InvalidSpec(format!(
                "layer {bad} out of range for {layers} layers"
            )));
        }
        Ok(idx)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PoolingSpec {
    #[serde(default)]
    pub subword_pooling: SubwordPooling,
    #[serde(default)]
    pub layers: LayerSelection,
    #[serde(default)]
    pub layer_aggregation: LayerAggregation,
}

/// Reduces a `tokens x dim` matrix to one vector.
pub fn pool_subwords(matrix: ArrayView2<'_, f32>, method: SubwordPooling) -> Result<Array1<f64>> {
    let (t, d) = matrix.dim();
    if t == 0 || d == 0 {
        return Err(Error::Shape(format!("cannot pool a {t}x{d} matrix")));
    }
    let m = matrix.mapv(f64::from);
    Ok(match method {
        SubwordPooling::Mean => m.mean_axis(Axis(0)).expect("non-empty"),
        SubwordPooling::Max => m.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b)),
        SubwordPooling::First => m.row(0).to_owned(),
    })
}

/// Combines per-layer vectors by averaging or concatenation (in input order).
pub fn aggregate_layers(vectors: &[Array1<f64>], method: LayerAggregation) -> Result<Array1<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Shape("no layers to aggregate".into()))?;
    if let Some(v) = vectors.iter().find(|v| v.len() != first.len()) {
        return Err(Error::Shape(format!(
            "layer vectors of dimension {} and {}",
            first.len(),
            v.len()
        )));
    }
    Ok(match method {
        LayerAggregation::Average => {
            let mut sum = Array1::zeros(first.len());
            for v in vectors {
                sum += v;
            }
            sum / vectors.len() as f64
        }
        LayerAggregation::Concatenate => vectors.iter().flat_map(|v| v.iter().copied()).collect(),
    })
}

/// One vector per usage: subword pooling per selected layer, then layer
/// aggregation.
pub fn usage_vector(record: &EmbeddingRecord, spec: &PoolingSpec) -> Result<Array1<f64>> {
    let layers = spec.layers.resolve(record.layers())?;
    let pooled = layers
        .iter()
        .map(|&l| pool_subwords(record.layer(l), spec.subword_pooling))
        .collect::<Result<Vec<_>>>()?;
    aggregate_layers(&pooled, spec.layer_aggregation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pooling() {
        let m = array![[1.0f32, 3.0], [3.0, 5.0]];
        assert_eq!(pool_subwords(m.view(), SubwordPooling::Mean).unwrap(), array![2.0, 4.0]);
        assert_eq!(pool_subwords(m.view(), SubwordPooling::Max).unwrap(), array![3.0, 5.0]);
        assert_eq!(pool_subwords(m.view(), SubwordPooling::First).unwrap(), array![1.0, 3.0]);
    }

    #[test]
    fn first_pooling_depends_on_row_order() {
        let m = array![[1.0f32, 3.0], [3.0, 5.0]];
        let swapped = array![[3.0f32, 5.0], [1.0, 3.0]];
        let pool = |x: &ndarray::Array2<f32>, p| pool_subwords(x.view(), p).unwrap();
        assert_eq!(pool(&m, SubwordPooling::Mean), pool(&swapped, SubwordPooling::Mean));
        assert_ne!(pool(&m, SubwordPooling::First), pool(&swapped, SubwordPooling::First));
    }

    #[test]
    fn layer_aggregation() {
        let a = array![0.0, 2.0];
        let b = array![2.0, 4.0];
        let both = [a.clone(), b];
        assert_eq!(aggregate_layers(&both, LayerAggregation::Average).unwrap(), array![1.0, 3.0]);
        assert_eq!(
            aggregate_layers(&both, LayerAggregation::Concatenate).unwrap(),
            array![0.0, 2.0, 2.0, 4.0]
        );
        for m in [LayerAggregation::Average, LayerAggregation::Concatenate] {
            assert_eq!(aggregate_layers(std::slice::from_ref(&a), m).unwrap(), a);
        }
        assert!(matches!(
            aggregate_layers(&[a, array![1.0]], LayerAggregation::Average),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn usage_vectors() {
        let raw = EmbeddingRecord::from_vec("u", (1, 1, 3), vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(usage_vector(&raw, &PoolingSpec::default()).unwrap(), array![1.0, -2.0, 0.5]);

        // layer 0 tokens (1,2),(3,4); layer 1 tokens (5,6),(7,8)
        let r = EmbeddingRecord::from_vec("u", (2, 2, 2), (1..=8).map(|x| x as f32).collect()).unwrap();
        let spec = PoolingSpec {
            subword_pooling: SubwordPooling::Mean,
            layers: LayerSelection::Indices(vec![0, 1]),
            layer_aggregation: LayerAggregation::Average,
        };
        // means (2,3) and (6,7), averaged (4,5)
        assert_eq!(usage_vector(&r, &spec).unwrap(), array![4.0, 5.0]);

        let bad = PoolingSpec {
            layers: LayerSelection::Indices(vec![2]),
            ..PoolingSpec::default()
        };
        assert!(matches!(usage_vector(&r, &bad), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn last_four_of_twelve_concatenated() {
        let r = EmbeddingRecord::new("u", Array3::from_elem((12, 2, 768), 0.25f32)).unwrap();
        let spec = PoolingSpec {
            subword_pooling: SubwordPooling::Mean,
            layers: LayerSelection::Last(4),
            layer_aggregation: LayerAggregation::Concatenate,
        };
        assert_eq!(usage_vector(&r, &spec).unwrap().len(), 3072);
    }

    #[test]
    fn store_round_trip_and_corruption() {
        let r = EmbeddingRecord::from_vec("u1", (1, 2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut buf = Vec::new();
        write_store(&mut buf, [&r]).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 2 + 2 + 2 + 2 + 4 + 24);
        let back = decode_store(&buf).unwrap();
        assert_eq!(back["u1"], r);

        let mut empty = Vec::new();
        write_store(&mut empty, []).unwrap();
        assert!(decode_store(&empty).unwrap().is_empty());

        let mut bad = buf.clone();
        bad[3] ^= 0x01;
        assert!(matches!(decode_store(&bad), Err(Error::CorruptStore { offset: 3, .. })));

        let truncated = &buf[..buf.len() - 1];
        assert!(matches!(decode_store(truncated), Err(Error::CorruptStore { .. })));

        assert!(matches!(write_store(Vec::new(), [&r, &r]), Err(Error::DuplicateRecord(_))));

        let mut nan = buf.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_store(&nan), Err(Error::CorruptStore { .. })));
    }

    #[test]
    fn jsonl_round_trip() {
        let r = EmbeddingRecord::from_vec("u1", (2, 1, 2), vec![0.1, -3.5, 1e-30, 7.0]).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, [&r]).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back["u1"], r);
    }
}
