//! The frozen auxiliary embedder shared by every client. It is built once
//! from a seed, never trained, and never sent over the wire; clients only
//! read its unit-norm target embeddings.

use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{
    forward, l2_normalize_rows, random_normal, Activation, Init, MlpParams, Tensor,
};
use crate::rng::rng_from_seed;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"FEMB";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4;
const OUTPUT_BIAS_STD: f64 = 0.1;

/// Frozen random two-layer network followed by L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorEmbedder {
    params: MlpParams,
    embed_dim: usize,
    seed: u64,
}

impl PriorEmbedder {
    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.params.in_dim()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Hidden width is twice the larger of the input and output widths; weights
/// are `N(0, 1/fan_in)`, hidden biases zero, output biases `N(0, 0.01)`.
pub fn build_prior(feature_dim: usize, embed_dim: usize, seed: u64) -> Result<PriorEmbedder> {
    if feature_dim == 0 || embed_dim == 0 {
        return Err(Error::Config("prior dimensions must be at least 1".into()));
    }
    let hidden = 2 * feature_dim.max(embed_dim);
    let mut rng = rng_from_seed(seed);
    let params = MlpParams::init(
        &[feature_dim, hidden, embed_dim],
        &[Activation::Relu, Activation::Identity],
        Init::LeCun,
        &mut rng,
    )?;
    // Keeps the output nonzero for inputs that switch off every hidden unit.
    let mut layers = params.layers().to_vec();
    layers[1].bias = random_normal(1, embed_dim, &mut rng);
    layers[1].bias.scale(OUTPUT_BIAS_STD);
    let params = MlpParams::new(layers)?;
    Ok(PriorEmbedder {
        params,
        embed_dim,
        seed,
    })
}

/// Unit-norm target embeddings, one row per input row.
pub fn embed(prior: &PriorEmbedder, x: &Tensor) -> Result<Tensor> {
    let out = forward(&prior.params, x)?.into_output();
    Ok(l2_normalize_rows(&out)?.0)
}

/// Unit-norm embeddings keyed by sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: Tensor,
}

impl EmbeddingTable {
    /// Normalizes every row on construction.
    pub fn new(rows: Tensor) -> Result<Self> {
        if rows.rows() == 0 || rows.cols() == 0 {
            return Err(Error::Contract(
                "embedding table must have rows and columns".into(),
            ));
        }
        Ok(EmbeddingTable {
            rows: l2_normalize_rows(&rows)?.0,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn get(&self, index: usize) -> Option<&[f64]> {
        (index < self.len()).then(|| self.rows.row(index))
    }

    /// Rows for the given sample indices, in order.
    pub fn select(&self, indices: &[usize]) -> Tensor {
        self.rows.select_rows(indices)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.rows
    }
}

/// Where clients get their distillation targets from.
#[derive(Debug, Clone)]
pub enum Prior {
    /// A frozen network evaluated on the training features.
    Network(PriorEmbedder),
    /// Precomputed embeddings, e.g. from a real pre-trained model.
    Table(EmbeddingTable),
}

impl Prior {
    pub fn embed_dim(&self) -> usize {
        match self {
            Prior::Network(p) => p.embed_dim(),
            Prior::Table(t) => t.dim(),
        }
    }

    /// Target embeddings for every sample of `dataset`, keyed by row index.
    pub fn targets_for(&self, dataset: &Dataset) -> Result<EmbeddingTable> {
        match self {
            Prior::Network(p) => Ok(EmbeddingTable {
                rows: embed(p, dataset.features())?,
            }),
            Prior::Table(t) => {
                if t.len() != dataset.len() {
                    return Err(Error::DataConsistency(format!(
                        "embedding table has {} rows but the dataset has {} samples",
                        t.len(),
                        dataset.len()
                    )));
                }
                Ok(t.clone())
            }
        }
    }
}

/// Writes `FEMB` | version `u32` | `N: u64` | `dim: u32` | `N×dim f64`, little-endian.
pub fn save_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(HEADER_LEN + table.rows.data().len() * 8);
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(table.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(table.dim() as u32).to_le_bytes());
    for v in table.rows.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads an embedding file and re-normalizes its rows. When `expected_rows`
/// is given the row count must match it.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    expected_rows: Option<usize>,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(malformed(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != EMBEDDING_MAGIC {
        return Err(malformed("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != EMBEDDING_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
    if n == 0 || dim == 0 {
        return Err(malformed("embedding file has no rows".into()));
    }
    let expected = n
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| malformed("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(malformed(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    if let Some(want) = expected_rows {
        if want != n {
            return Err(Error::DataConsistency(format!(
                "embedding file has {n} rows, expected {want}"
            )));
        }
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    EmbeddingTable::new(Tensor::from_vec(n, dim, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{norm2, random_normal};

    #[test]
    fn same_seed_same_parameters() {
        let a = build_prior(6, 4, 17).unwrap();
        let b = build_prior(6, 4, 17).unwrap();
        let c = build_prior(6, 4, 18).unwrap();
        assert_eq!(a.params().to_vector(), b.params().to_vector());
        assert_ne!(a.params().to_vector(), c.params().to_vector());
    }

    #[test]
    fn embeddings_are_unit_norm_and_rowwise() {
        let p = build_prior(6, 4, 1).unwrap();
        let x = random_normal(9, 6, &mut rng_from_seed(2));
        let y = embed(&p, &x).unwrap();
        for (i, row) in y.iter_rows().enumerate() {
            assert!((norm2(row) - 1.0).abs() < 1e-12);
            let single = embed(&p, &x.select_rows(&[i])).unwrap();
            assert_eq!(single.row(0), row);
        }
    }

    #[test]
    fn input_with_every_hidden_unit_off_still_embeds() {
        let p = build_prior(4, 3, 5).unwrap();
        let y = embed(&p, &Tensor::zeros(2, 4)).unwrap();
        assert!((norm2(y.row(0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_embed_identically() {
        let p = build_prior(3, 5, 1).unwrap();
        let x = Tensor::from_rows(&[[0.5, -1.0, 2.0], [0.5, -1.0, 2.0]]).unwrap();
        let y = embed(&p, &x).unwrap();
        assert_eq!(y.row(0), y.row(1));
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.femb");
        let table = EmbeddingTable::new(random_normal(7, 3, &mut rng_from_seed(4))).unwrap();
        save_embeddings(&path, &table).unwrap();
        let back = load_embeddings(&path, Some(7)).unwrap();
        for i in 0..7 {
            for (a, b) in back.get(i).unwrap().iter().zip(table.get(i).unwrap()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(back.get(7), None);
        assert!(matches!(
            load_embeddings(&path, Some(8)),
            Err(Error::DataConsistency(_))
        ));

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(
            load_embeddings(&path, None),
            Err(Error::Malformed { .. })
        ));

        let mut empty = bytes[..HEADER_LEN].to_vec();
        empty[8..16].copy_from_slice(&0u64.to_le_bytes());
        fs::write(&path, empty).unwrap();
        assert!(matches!(
            load_embeddings(&path, None),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn loaded_rows_are_renormalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.femb");
        let mut buf = Vec::new();
        buf.extend_from_slice(EMBEDDING_MAGIC);
        buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        buf.extend_from_slice(&1u64.to_le_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        for v in [3.0f64, 4.0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, buf).unwrap();
        let t = load_embeddings(&path, Some(1)).unwrap();
        assert!((t.get(0).unwrap()[0] - 0.6).abs() < 1e-15);
    }
}
