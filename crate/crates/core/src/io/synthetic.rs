use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Class-subspace data: each sample is `U_c a + U_0 b + e` with standard
/// normal `a`, `b` and Gaussian noise `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub class_dim: usize,
    pub shared_dim: usize,
    pub per_class: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.dim == 0 {
            return Err(Error::InvalidInput("need at least one class and dimension".into()));
        }
        if self.class_dim + self.shared_dim > self.dim {
            return Err(Error::InvalidInput(format!(
                "class_dim + shared_dim = {} exceeds dim {}",
                self.class_dim + self.shared_dim,
                self.dim
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidInput(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBases {
    pub class_bases: Vec<DMatrix<f64>>,
    pub shared: DMatrix<f64>,
}

fn gaussian(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Orthonormal bases: the shared one first, then class bases orthogonal to
/// it and to each other when the dimension allows, otherwise only to `U_0`.
pub fn synthetic_bases(spec: &SyntheticSpec) -> Result<SyntheticBases> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, 0);
    let (n, k0, kc, c) = (spec.dim, spec.shared_dim, spec.class_dim, spec.classes);
    if k0 + c * kc <= n {
        let q = gaussian(&mut r, n, k0 + c * kc).qr().q();
        return Ok(SyntheticBases {
            shared: q.columns(0, k0).into_owned(),
            class_bases: (0..c).map(|i| q.columns(k0 + i * kc, kc).into_owned()).collect(),
        });
    }
    let shared = gaussian(&mut r, n, k0).qr().q();
    let complement = DMatrix::identity(n, n) - &shared * shared.transpose();
    let class_bases = (0..c)
        .map(|_| {
            let g = &complement * gaussian(&mut r, n, kc);
            g.qr().q()
        })
        .collect();
    Ok(SyntheticBases { class_bases, shared })
}

/// Samples are grouped by class: `per_class` columns of class 0, then class 1, ...
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let bases = synthetic_bases(spec)?;
    let mut r = rng::stream(spec.seed, 1);
    let total = spec.classes * spec.per_class;
    let mut y = DMatrix::zeros(spec.dim, total);
    let mut labels = Vec::with_capacity(total);
    for (c, u) in bases.class_bases.iter().enumerate() {
        for k in 0..spec.per_class {
            let a = gaussian(&mut r, spec.class_dim, 1);
            let b = gaussian(&mut r, spec.shared_dim, 1);
            let e = gaussian(&mut r, spec.dim, 1) * spec.noise_std;
            let col = u * a + &bases.shared * b + e;
            y.set_column(c * spec.per_class + k, &col.column(0));
            labels.push(c);
        }
    }
    Ok((y, labels))
}
