//! `DLF1` feature files: magic, `u32` count, `u32` dim, `count x dim` f64
//! values (one sample after another), then `META\n` and one
//! `volume<TAB>bscan<TAB>class` line per sample.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::binary::{expect_magic, get_f64, get_len, put_f64, put_len};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"DLF1";
const META_SENTINEL: &[u8] = b"META\n";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SampleMeta {
    pub volume_id: String,
    pub bscan: usize,
    pub class: String,
}

/// Feature columns (`dim x count`) with per-sample metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: DMatrix<f64>,
    pub meta: Vec<SampleMeta>,
}

impl FeatureSet {
    pub fn new(features: DMatrix<f64>, meta: Vec<SampleMeta>) -> Result<Self> {
        if features.ncols() != meta.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature columns, {} metadata rows",
                features.ncols(),
                meta.len()
            )));
        }
        for m in &meta {
            if [&m.volume_id, &m.class].iter().any(|s| s.contains(['\t', '\n', '\r'])) {
                return Err(Error::InvalidInput(format!("metadata field contains a tab or newline: {m:?}")));
            }
        }
        Ok(Self { features, meta })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }
}

pub fn write_features(w: &mut impl Write, set: &FeatureSet) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    put_len(w, set.len(), "sample count")?;
    put_len(w, set.dim(), "feature dimension")?;
    // column-major storage is exactly one sample after another
    for &v in set.features.as_slice() {
        put_f64(w, v)?;
    }
    w.write_all(META_SENTINEL)?;
    for m in &set.meta {
        writeln!(w, "{}\t{}\t{}", m.volume_id, m.bscan, m.class)?;
    }
    Ok(())
}

pub fn read_features(r: impl Read) -> Result<FeatureSet> {
    let mut r = BufReader::new(r);
    expect_magic(&mut r, FEATURE_MAGIC)?;
    let count = get_len(&mut r, "sample count")?;
    let dim = get_len(&mut r, "feature dimension")?;
    let total = count
        .checked_mul(dim)
        .ok_or_else(|| Error::Format("feature matrix size overflows".into()))?;
    let mut values = Vec::with_capacity(total.min(1 << 24));
    for _ in 0..total {
        values.push(get_f64(&mut r, "feature values")?);
    }
    let mut sentinel = [0u8; 5];
    r.read_exact(&mut sentinel)
        .map_err(|_| Error::Format("missing META sentinel".into()))?;
    if sentinel != META_SENTINEL {
        return Err(Error::Format("missing META sentinel".into()));
    }
    let mut meta = Vec::with_capacity(count);
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(Error::Format(format!("metadata line {} has {} fields", i + 1, f.len())));
        }
        let bscan = f[1]
            .parse()
            .map_err(|_| Error::Format(format!("metadata line {}: bad b-scan index {:?}", i + 1, f[1])))?;
        meta.push(SampleMeta { volume_id: f[0].into(), bscan, class: f[2].into() });
    }
    if meta.len() != count {
        return Err(Error::Format(format!("{count} samples but {} metadata lines", meta.len())));
    }
    FeatureSet::new(DMatrix::from_vec(dim, count, values), meta)
}

pub fn save_features(path: &Path, set: &FeatureSet) -> Result<()> {
    let mut buf = Vec::new();
    write_features(&mut buf, set)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureSet> {
    read_features(std::fs::File::open(path)?)
}
