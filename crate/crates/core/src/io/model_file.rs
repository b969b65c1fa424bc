//! `DLM1` model files. After the magic: algorithm tag, `C`, `n`, the `C`
//! class atom counts, `K_0` (all `u32`); the f64 weights `lambda1`,
//! `lambda2`, `eta`, `gamma`, `w`, `tol`; `u32` outer and inner iteration
//! counts; `u64` seed; the class names (`u32` byte length + UTF-8); the
//! dictionaries `D_1..D_C, D_0` column-major; the class means, the global
//! mean, a `u32` flag plus the shared-code mean; `u64` unsettled block count;
//! `u32` trace length and the objective trace. Everything little-endian.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::binary::{expect_magic, get_f64, get_len, get_u32, get_u64, put_f64, put_len, put_u32, put_u64};
use crate::dictlearn::{Algorithm, ClassStats, StructuredDictionary, TrainConfig, TrainedModel};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"DLM1";

fn put_values<'a>(w: &mut impl Write, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    for &v in values {
        put_f64(w, v)?;
    }
    Ok(())
}

fn get_matrix(r: &mut impl Read, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
    let values = (0..rows * cols).map(|_| get_f64(r, what)).collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_vec(rows, cols, values))
}

fn get_vector(r: &mut impl Read, len: usize, what: &str) -> Result<DVector<f64>> {
    let values = (0..len).map(|_| get_f64(r, what)).collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(values))
}

pub fn write_model(w: &mut impl Write, model: &TrainedModel) -> Result<()> {
    let dict = &model.dictionary;
    let cfg = &model.config;
    let kd: usize = dict.class_atoms().iter().sum();
    let k0 = dict.shared_atoms();
    w.write_all(MODEL_MAGIC)?;
    put_u32(w, model.algorithm.tag())?;
    put_len(w, dict.n_classes(), "class count")?;
    put_len(w, dict.dim(), "dimension")?;
    for k in dict.class_atoms() {
        put_len(w, k, "atom count")?;
    }
    put_len(w, k0, "shared atom count")?;
    for v in [cfg.lambda1, cfg.lambda2, cfg.eta, cfg.gamma, cfg.w, cfg.tol] {
        put_f64(w, v)?;
    }
    put_len(w, cfg.outer_iters, "outer iterations")?;
    put_len(w, cfg.inner_iters, "inner iterations")?;
    put_u64(w, cfg.seed)?;
    for name in &dict.labels {
        put_len(w, name.len(), "label length")?;
        w.write_all(name.as_bytes())?;
    }
    for d in dict.class_dicts.iter().chain(dict.shared.iter()) {
        put_values(w, d.as_slice())?;
    }
    let stats = &model.stats;
    if stats.class_means.len() != dict.n_classes()
        || stats.class_means.iter().chain([&stats.global_mean]).any(|m| m.len() != kd)
    {
        return Err(Error::ShapeMismatch("class statistics do not match the dictionary".into()));
    }
    for m in stats.class_means.iter().chain([&stats.global_mean]) {
        put_values(w, m.as_slice())?;
    }
    match &stats.shared_mean {
        Some(m0) if m0.len() == k0 => {
            put_u32(w, 1)?;
            put_values(w, m0.as_slice())?;
        }
        Some(_) => return Err(Error::ShapeMismatch("shared mean does not match the shared dictionary".into())),
        None => put_u32(w, 0)?,
    }
    put_u64(w, model.unsettled_blocks)?;
    put_len(w, model.objective_trace.len(), "trace length")?;
    put_values(w, &model.objective_trace)?;
    Ok(())
}

pub fn read_model(mut r: impl Read) -> Result<TrainedModel> {
    let r = &mut r;
    expect_magic(r, MODEL_MAGIC)?;
    let tag = get_u32(r, "algorithm tag")?;
    let algorithm = Algorithm::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown algorithm tag {tag}")))?;
    let c = get_len(r, "class count")?;
    let n = get_len(r, "dimension")?;
    let class_atoms = (0..c).map(|_| get_len(r, "atom count")).collect::<Result<Vec<_>>>()?;
    let k0 = get_len(r, "shared atom count")?;
    let mut weights = [0.0; 6];
    for v in &mut weights {
        *v = get_f64(r, "hyperparameters")?;
    }
    let [lambda1, lambda2, eta, gamma, w, tol] = weights;
    let outer_iters = get_len(r, "outer iterations")?;
    let inner_iters = get_len(r, "inner iterations")?;
    let seed = get_u64(r, "seed")?;
    let mut labels = Vec::with_capacity(c);
    for _ in 0..c {
        let len = get_len(r, "label length")?;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(|_| Error::Format("truncated label".into()))?;
        labels.push(String::from_utf8(buf).map_err(|_| Error::Format("label is not UTF-8".into()))?);
    }
    let class_dicts = class_atoms
        .iter()
        .map(|&k| get_matrix(r, n, k, "dictionary"))
        .collect::<Result<Vec<_>>>()?;
    let shared = if k0 > 0 { Some(get_matrix(r, n, k0, "shared dictionary")?) } else { None };
    let kd: usize = class_atoms.iter().sum();
    let class_means = (0..c).map(|_| get_vector(r, kd, "class means")).collect::<Result<Vec<_>>>()?;
    let global_mean = get_vector(r, kd, "global mean")?;
    let shared_mean = match get_u32(r, "shared mean flag")? {
        0 => None,
        1 => Some(get_vector(r, k0, "shared mean")?),
        f => return Err(Error::Format(format!("bad shared mean flag {f}"))),
    };
    let unsettled_blocks = get_u64(r, "unsettled count")?;
    let trace_len = get_len(r, "trace length")?;
    let objective_trace = (0..trace_len).map(|_| get_f64(r, "trace")).collect::<Result<Vec<_>>>()?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after model".into()));
    }
    let dictionary = StructuredDictionary::new(class_dicts, shared, labels)?;
    let config = TrainConfig {
        lambda1,
        lambda2,
        eta,
        gamma,
        w,
        class_atoms: class_atoms.first().copied().unwrap_or(0),
        shared_atoms: k0,
        outer_iters,
        inner_iters,
        tol,
        seed,
    };
    Ok(TrainedModel {
        algorithm,
        dictionary,
        stats: ClassStats { class_means, global_mean, shared_mean },
        config,
        objective_trace,
        unsettled_blocks,
    })
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, model)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}
