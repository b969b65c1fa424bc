#![allow(dead_code)]

use nalgebra::DMatrix;
use octdl::dictlearn::{AtomLayout, CodeBlock, StructuredDictionary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn unit_columns(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut c in m.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    m
}

/// Random dictionary with `c` classes of `kc` atoms and `k0` shared atoms,
/// plus random codes for `per_class` samples of each class.
pub fn random_instance(
    seed: u64,
    n: usize,
    c: usize,
    kc: usize,
    k0: usize,
    per_class: usize,
) -> (DMatrix<f64>, StructuredDictionary, CodeBlock, Vec<usize>) {
    let mut r = rng(seed);
    let class_dicts = (0..c).map(|_| unit_columns(gaussian(&mut r, n, kc)) * 0.9).collect();
    let shared = (k0 > 0).then(|| unit_columns(gaussian(&mut r, n, k0)) * 0.8);
    let names = (0..c).map(|i| format!("c{i}")).collect();
    let dict = StructuredDictionary::new(class_dicts, shared, names).unwrap();
    let labels: Vec<usize> = (0..c).flat_map(|i| std::iter::repeat_n(i, per_class)).collect();
    let layout = AtomLayout::new(&vec![kc; c], k0);
    let x = gaussian(&mut r, layout.total(), labels.len());
    let y = gaussian(&mut r, n, labels.len());
    let codes = CodeBlock::new(x, layout, &labels).unwrap();
    (y, dict, codes, labels)
}

/// Samples `U_c a + U_0 b + noise` with mutually orthogonal bases.
pub struct Planted {
    pub class_bases: Vec<DMatrix<f64>>,
    pub shared_basis: DMatrix<f64>,
}

impl Planted {
    pub fn new(seed: u64, n: usize, c: usize, kc: usize, k0: usize) -> Self {
        let mut r = rng(seed);
        let q = gaussian(&mut r, n, c * kc + k0).qr().q();
        let class_bases = (0..c).map(|i| q.columns(i * kc, kc).into_owned()).collect();
        let shared_basis = q.columns(c * kc, k0).into_owned();
        Self { class_bases, shared_basis }
    }

    pub fn sample(&self, seed: u64, per_class: usize, shared_scale: f64, noise: f64) -> (DMatrix<f64>, Vec<usize>) {
        let mut r = rng(seed);
        let n = self.shared_basis.nrows();
        let c = self.class_bases.len();
        let mut y = DMatrix::zeros(n, c * per_class);
        let mut labels = Vec::new();
        for (i, u) in self.class_bases.iter().enumerate() {
            for k in 0..per_class {
                let a = gaussian(&mut r, u.ncols(), 1);
                let b = gaussian(&mut r, self.shared_basis.ncols(), 1) * shared_scale;
                let e = gaussian(&mut r, n, 1) * noise;
                let col = u * a + &self.shared_basis * b + e;
                y.set_column(i * per_class + k, &col.column(0));
                labels.push(i);
            }
        }
        (y, labels)
    }
}

/// Loop-by-loop objective evaluator that shares no code with the library.
pub mod oracle {
    use nalgebra::{DMatrix, SymmetricEigen};
    use octdl::dictlearn::{Algorithm, StructuredDictionary};

    struct Atoms {
        cols: Vec<Vec<f64>>,
        block: Vec<usize>,
    }

    fn atoms(dict: &StructuredDictionary) -> Atoms {
        let mut cols = Vec::new();
        let mut block = Vec::new();
        let c = dict.class_dicts.len();
        for (b, d) in dict.class_dicts.iter().enumerate().chain(dict.shared.iter().map(|d| (c, d))) {
            for k in 0..d.ncols() {
                cols.push((0..d.nrows()).map(|i| d[(i, k)]).collect());
                block.push(b);
            }
        }
        Atoms { cols, block }
    }

    fn sq_residual(y: &[f64], a: &Atoms, x: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
        let mut total = 0.0;
        for i in 0..y.len() {
            let mut r = y[i];
            for k in 0..a.cols.len() {
                if keep(a.block[k]) {
                    r -= a.cols[k][i] * x[k];
                }
            }
            total += r * r;
        }
        total
    }

    pub fn objective(
        alg: Algorithm,
        y: &DMatrix<f64>,
        dict: &StructuredDictionary,
        x: &DMatrix<f64>,
        labels: &[usize],
        l1: f64,
        l2: f64,
        eta: f64,
    ) -> f64 {
        let a = atoms(dict);
        let c = dict.class_dicts.len();
        let kd: usize = a.block.iter().filter(|&&b| b < c).count();
        let n = y.nrows();
        let mut g = 0.0;
        for j in 0..y.ncols() {
            let yj: Vec<f64> = (0..n).map(|i| y[(i, j)]).collect();
            let xj: Vec<f64> = (0..x.nrows()).map(|k| x[(k, j)]).collect();
            let cl = labels[j];
            g += sq_residual(&yj, &a, &xj, |_| true);
            g += sq_residual(&yj, &a, &xj, |b| b == cl || b == c);
            for other in 0..c {
                if other == cl {
                    continue;
                }
                if alg == Algorithm::Copar {
                    for k in 0..a.cols.len() {
                        if a.block[k] == other {
                            g += xj[k] * xj[k];
                        }
                    }
                } else {
                    let zero = vec![0.0; n];
                    g += sq_residual(&zero, &a, &xj, |b| b == other);
                }
            }
        }
        let mut f = 0.5 * g + l1 * x.iter().map(|v| v.abs()).sum::<f64>();

        if alg != Algorithm::Copar {
            let total = y.ncols() as f64;
            let mut h = 0.0;
            for r in 0..kd {
                let m: f64 = (0..x.ncols()).map(|j| x[(r, j)]).sum::<f64>() / total;
                for cl in 0..c {
                    let idx: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == cl).collect();
                    let mc = idx.iter().map(|&j| x[(r, j)]).sum::<f64>() / idx.len() as f64;
                    for &j in &idx {
                        h += (x[(r, j)] - mc).powi(2);
                    }
                    h -= idx.len() as f64 * (mc - m).powi(2);
                }
                for j in 0..x.ncols() {
                    h += x[(r, j)].powi(2);
                }
            }
            if alg == Algorithm::Lrsdl {
                for r in kd..x.nrows() {
                    let m0: f64 = (0..x.ncols()).map(|j| x[(r, j)]).sum::<f64>() / x.ncols() as f64;
                    for j in 0..x.ncols() {
                        h += (x[(r, j)] - m0).powi(2);
                    }
                }
            }
            f += 0.5 * l2 * h;
        }
        if alg == Algorithm::Copar {
            let mut h = 0.0;
            for p in 0..a.cols.len() {
                for q in 0..a.cols.len() {
                    if a.block[p] != a.block[q] {
                        let ip: f64 = (0..n).map(|i| a.cols[p][i] * a.cols[q][i]).sum();
                        h += ip * ip;
                    }
                }
            }
            f += 0.5 * l2 * h;
        }
        if alg == Algorithm::Lrsdl {
            if let Some(d0) = &dict.shared {
                let eig = SymmetricEigen::new(d0.transpose() * d0);
                f += eta * eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum::<f64>();
            }
        }
        f
    }
}

/// A B-scan-like image: dark speckled background, a bright inner layer and
/// a brighter RPE band whose top row follows a smooth bowl-shaped curve.
/// Returns the image and the planted RPE row of each column.
pub fn curved_band_image(seed: u64, rows: usize, cols: usize) -> (octdl::preprocess::GrayImage, Vec<f64>) {
    let mut r = rng(seed);
    let depth = 55.0 + 20.0 * r.random::<f64>();
    let bow = (8.0 + 14.0 * r.random::<f64>()) / ((cols as f64 / 2.0).powi(2));
    let tilt = (r.random::<f64>() - 0.5) * 10.0 / cols as f64;
    let mid = cols as f64 / 2.0;
    let curve: Vec<f64> = (0..cols)
        .map(|c| {
            let x = c as f64 - mid;
            (depth + 12.0 - bow * x * x + tilt * x).round()
        })
        .collect();
    let noise: Vec<f64> = (0..rows * cols).map(|_| r.random::<f64>()).collect();
    let img = octdl::preprocess::GrayImage::from_fn(rows, cols, |i, j| {
        let top = curve[j] as isize;
        let d = i as isize - top;
        let base = if (0..3).contains(&d) {
            200.0
        } else if (-30..-24).contains(&d) {
            120.0
        } else {
            20.0
        };
        base + 15.0 * noise[i * cols + j]
    })
    .unwrap();
    (img, curve)
}

/// `per_class` volumes per class with `bscans` feature columns each, drawn
/// from the class subspaces of one synthetic model.
pub fn synthetic_volumes(per_class: usize, bscans: usize, dim: usize, noise_std: f64, seed: u64) -> Vec<octdl::eval::VolumeFeatures> {
    use octdl::eval::{VolumeClass, VolumeFeatures, VolumeRecord};
    use octdl::io::{generate_synthetic, SyntheticSpec};
    let spec = SyntheticSpec {
        classes: 3,
        dim,
        class_dim: 4,
        shared_dim: 0,
        per_class: per_class * bscans,
        noise_std,
        seed,
    };
    let (y, _) = generate_synthetic(&spec).unwrap();
    let mut out = Vec::new();
    for class in VolumeClass::ALL {
        for v in 0..per_class {
            let start = class.index() * per_class * bscans + v * bscans;
            out.push(VolumeFeatures {
                record: VolumeRecord {
                    id: format!("{}-{v}", class.name()),
                    class,
                    bscans: (0..bscans).map(|b| format!("{b:04}.png")).collect(),
                    training_frames: None,
                },
                features: y.columns(start, bscans).into_owned(),
            });
        }
    }
    out
}
