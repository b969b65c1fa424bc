//! Alternating block-coordinate training shared by the three learners.
//!
//! One outer iteration updates the codes class by class (then the shared
//! codes), followed by the dictionaries class by class (then `D_0`). Every
//! block subproblem is convex with an affine gradient and is handled by the
//! monotone proximal solver, so the objective never goes up.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::objective::{nuclear_norm, objective, Leakage, Terms};
use super::solver::{l1, minimize_block, project_columns, shrink_singular_values};
use super::{class_columns, select_columns, Algorithm, AtomLayout, ClassStats, CodeBlock, StructuredDictionary, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::rng;
use crate::sparsecode::{largest_eigenvalue, soft};

fn n_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

fn unit_columns(y: &DMatrix<f64>, idx: &[usize], rng: &mut impl Rng) -> DMatrix<f64> {
    let mut d = select_columns(y, idx);
    for mut col in d.column_iter_mut() {
        let mut norm = col.norm();
        if norm == 0.0 {
            // all-zero sample: fall back to a random direction
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            norm = col.norm();
        }
        col /= norm;
    }
    d
}

/// Random training columns as initial atoms: `class_atoms` per class and
/// `shared_atoms` from the pooled set, all unit-normalized.
pub fn init_dictionary(
    y: &DMatrix<f64>,
    labels: &[usize],
    class_atoms: usize,
    shared_atoms: usize,
    seed: u64,
) -> Result<StructuredDictionary> {
    if labels.len() != y.ncols() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} samples", labels.len(), y.ncols())));
    }
    let c = n_classes(labels);
    if c == 0 {
        return Err(Error::InsufficientData("no training samples".into()));
    }
    let cols = class_columns(labels, c)?;
    let mut class_dicts = Vec::with_capacity(c);
    for (k, idx) in cols.iter().enumerate() {
        if idx.len() < class_atoms {
            return Err(Error::InsufficientData(format!(
                "class {k} has {} samples, {class_atoms} atoms requested",
                idx.len()
            )));
        }
        let mut r = rng::stream(seed, k as u64);
        let pick: Vec<usize> = sample(&mut r, idx.len(), class_atoms).into_iter().map(|i| idx[i]).collect();
        class_dicts.push(unit_columns(y, &pick, &mut r));
    }
    let shared = if shared_atoms > 0 {
        if y.ncols() < shared_atoms {
            return Err(Error::InsufficientData(format!(
                "{} samples, {shared_atoms} shared atoms requested",
                y.ncols()
            )));
        }
        let mut r = rng::stream(seed, c as u64);
        let pick = sample(&mut r, y.ncols(), shared_atoms).into_vec();
        Some(unit_columns(y, &pick, &mut r))
    } else {
        None
    };
    let names = (0..c).map(|k| k.to_string()).collect();
    StructuredDictionary::new(class_dicts, shared, names)
}

fn stack(dicts: &[DMatrix<f64>], d0: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let n = dicts[0].nrows();
    let k: usize = dicts.iter().chain(d0).map(|d| d.ncols()).sum();
    let mut out = DMatrix::zeros(n, k);
    let mut start = 0;
    for d in dicts.iter().chain(d0) {
        out.columns_mut(start, d.ncols()).copy_from(d);
        start += d.ncols();
    }
    out
}

fn broadcast(v: &DVector<f64>, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(v.len(), cols, |i, _| v[i])
}

fn scatter_columns(dst: &mut DMatrix<f64>, rows: usize, src: &DMatrix<f64>, cols: &[usize]) {
    for (k, &j) in cols.iter().enumerate() {
        dst.view_mut((rows, j), (src.nrows(), 1)).copy_from(&src.column(k));
    }
}

struct Trainer<'a> {
    algorithm: Algorithm,
    terms: Terms,
    y: &'a DMatrix<f64>,
    layout: AtomLayout,
    class_cols: Vec<Vec<usize>>,
    cfg: &'a TrainConfig,
    unsettled: u64,
}

impl Trainer<'_> {
    fn note(&mut self, settled: bool) {
        if !settled {
            self.unsettled += 1;
        }
    }

    fn update_codes(&mut self, dicts: &[DMatrix<f64>], d0: Option<&DMatrix<f64>>, x: &mut DMatrix<f64>) {
        let full = stack(dicts, d0);
        let g = full.tr_mul(&full);
        let kd = self.layout.class_part();
        let n_total = self.y.ncols() as f64;
        let (lambda1, lambda2) = (self.cfg.lambda1, self.cfg.lambda2);
        let shared = self.layout.shared_rows.clone();

        let mut h_base = g.view((0, 0), (kd, kd)).into_owned();
        for rj in &self.layout.class_rows {
            let mut blk = h_base.view_mut((rj.start, rj.start), (rj.len(), rj.len()));
            match self.terms.leakage {
                Leakage::Reconstruction => blk += g.view((rj.start, rj.start), (rj.len(), rj.len())),
                Leakage::Coefficient => blk += DMatrix::<f64>::identity(rj.len(), rj.len()),
            }
        }

        for c in 0..self.layout.n_classes() {
            let cols = self.class_cols[c].clone();
            if cols.is_empty() {
                continue;
            }
            let rc = self.layout.class_rows[c].clone();
            let yc = select_columns(self.y, &cols);
            let b = full.tr_mul(&yc);
            let xc = select_columns(x, &cols);

            // own-class block gets the plain Gram; other blocks keep their leakage curvature
            let mut h = h_base.clone();
            {
                let mut blk = h.view_mut((rc.start, rc.start), (rc.len(), rc.len()));
                if self.terms.leakage == Leakage::Coefficient {
                    blk -= DMatrix::<f64>::identity(rc.len(), rc.len());
                    blk += g.view((rc.start, rc.start), (rc.len(), rc.len()));
                }
            }

            let mut lin = b.rows(0, kd).into_owned();
            {
                let mut own = lin.rows_mut(rc.start, rc.len());
                own += b.rows(rc.start, rc.len());
            }
            if let Some(r0) = &shared {
                let x0c = xc.rows(r0.start, r0.len());
                lin -= g.view((0, r0.start), (kd, r0.len())) * x0c;
                let corr = g.view((rc.start, r0.start), (rc.len(), r0.len())) * x0c;
                let mut own = lin.rows_mut(rc.start, rc.len());
                own -= corr;
            }

            let z0 = xc.rows(0, kd).into_owned();
            let others = x.rows(0, kd).column_sum() - z0.column_sum();
            let nc = cols.len();
            let fisher = self.terms.fisher;
            let grad = |z: &DMatrix<f64>| {
                let mut gz = &h * z - &lin;
                if fisher {
                    let mc = z.column_sum() / nc as f64;
                    let m = (&others + z.column_sum()) / n_total;
                    gz += (z - broadcast(&mc, nc)) * (2.0 * lambda2) + broadcast(&m, nc) * lambda2;
                }
                gz
            };
            let mut lip = largest_eigenvalue(&h);
            if fisher {
                lip += 3.0 * lambda2;
            }
            let out = minimize_block(
                z0,
                grad,
                |v, s| v.map(|e| soft(e, lambda1 * s)),
                |z| lambda1 * l1(z),
                lip * 1.01,
                self.cfg.inner_iters,
            );
            self.note(out.settled);
            scatter_columns(x, 0, &out.x, &cols);
        }

        if let (Some(r0), Some(d0)) = (&shared, d0) {
            let k0 = r0.len();
            let xd = x.rows(0, kd).into_owned();
            let mut lin = d0.tr_mul(self.y) * 2.0 - g.view((r0.start, 0), (k0, kd)) * &xd;
            for (c, cols) in self.class_cols.iter().enumerate() {
                let rc = &self.layout.class_rows[c];
                let xcc = select_columns(&xd.rows(rc.start, rc.len()).into_owned(), cols);
                let corr = g.view((r0.start, rc.start), (k0, rc.len())) * xcc;
                for (k, &j) in cols.iter().enumerate() {
                    let mut col = lin.column_mut(j);
                    col -= corr.column(k);
                }
            }
            let h0 = g.view((r0.start, r0.start), (k0, k0)) * 2.0;
            let scatter = self.terms.shared_scatter;
            let n = self.y.ncols();
            let grad = |z: &DMatrix<f64>| {
                let mut gz = &h0 * z - &lin;
                if scatter {
                    let m0 = z.column_sum() / n as f64;
                    gz += (z - broadcast(&m0, n)) * lambda2;
                }
                gz
            };
            let mut lip = largest_eigenvalue(&h0);
            if scatter {
                lip += lambda2;
            }
            let out = minimize_block(
                x.rows(r0.start, k0).into_owned(),
                grad,
                |v, s| v.map(|e| soft(e, lambda1 * s)),
                |z| lambda1 * l1(z),
                lip * 1.01,
                self.cfg.inner_iters,
            );
            self.note(out.settled);
            x.rows_mut(r0.start, k0).copy_from(&out.x);
        }
    }

    fn update_dictionaries(&mut self, dicts: &mut [DMatrix<f64>], d0: &mut Option<DMatrix<f64>>, x: &DMatrix<f64>) {
        let p = x * x.transpose();
        let q = self.y * x.transpose();
        let per_class: Vec<(DMatrix<f64>, DMatrix<f64>)> = self
            .class_cols
            .iter()
            .map(|cols| {
                let xc = select_columns(x, cols);
                let yc = select_columns(self.y, cols);
                (&xc * xc.transpose(), yc * xc.transpose())
            })
            .collect();
        let lambda2 = self.cfg.lambda2;
        let incoherence = self.terms.incoherence;
        let layout = self.layout.clone();
        let n = self.y.nrows();

        for i in 0..layout.n_classes() {
            let ri = layout.class_rows[i].clone();
            let ki = ri.len();
            let (pi, qi) = &per_class[i];
            let s = match self.terms.leakage {
                Leakage::Reconstruction => p.view((ri.start, ri.start), (ki, ki)) * 2.0,
                Leakage::Coefficient => {
                    p.view((ri.start, ri.start), (ki, ki)) + pi.view((ri.start, ri.start), (ki, ki))
                }
            };
            let mut constant = -(q.columns(ri.start, ki) + qi.columns(ri.start, ki));
            for (j, rj) in layout.class_rows.iter().enumerate() {
                if j != i {
                    constant += &dicts[j] * p.view((rj.start, ri.start), (rj.len(), ki));
                }
            }
            if let (Some(d), Some(r0)) = (d0.as_ref(), &layout.shared_rows) {
                let k0 = r0.len();
                constant += d * (p.view((r0.start, ri.start), (k0, ki)) + pi.view((r0.start, ri.start), (k0, ki)));
            }
            let others: Vec<&DMatrix<f64>> = dicts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, d)| d)
                .chain(d0.as_ref())
                .collect();
            let a = if incoherence && !others.is_empty() {
                let k: usize = others.iter().map(|d| d.ncols()).sum();
                let mut a = DMatrix::zeros(n, k);
                let mut start = 0;
                for d in &others {
                    a.columns_mut(start, d.ncols()).copy_from(*d);
                    start += d.ncols();
                }
                Some(a)
            } else {
                None
            };
            let grad = |v: &DMatrix<f64>| {
                let mut gv = v * &s + &constant;
                if let Some(a) = &a {
                    gv += a * (a.tr_mul(v)) * (2.0 * lambda2);
                }
                gv
            };
            let mut lip = largest_eigenvalue(&s);
            if let Some(a) = &a {
                lip += 2.0 * lambda2 * largest_eigenvalue(&a.tr_mul(a));
            }
            let out = minimize_block(
                dicts[i].clone(),
                grad,
                |v, _| project_columns(v),
                |_| 0.0,
                lip * 1.01,
                self.cfg.inner_iters,
            );
            self.note(out.settled);
            dicts[i] = out.x;
        }

        if let (Some(start), Some(r0)) = (d0.clone(), &layout.shared_rows) {
            let k0 = r0.len();
            let kd = layout.class_part();
            let s = p.view((r0.start, r0.start), (k0, k0)) * 2.0;
            let dd = stack(dicts, None);
            let mut constant = &dd * p.view((0, r0.start), (kd, k0)) - q.columns(r0.start, k0) * 2.0;
            for (c, rc) in layout.class_rows.iter().enumerate() {
                constant += &dicts[c] * per_class[c].0.view((rc.start, r0.start), (rc.len(), k0));
            }
            let a = incoherence.then_some(dd);
            let grad = |v: &DMatrix<f64>| {
                let mut gv = v * &s + &constant;
                if let Some(a) = &a {
                    gv += a * (a.tr_mul(v)) * (2.0 * lambda2);
                }
                gv
            };
            let mut lip = largest_eigenvalue(&s);
            if let Some(a) = &a {
                lip += 2.0 * lambda2 * largest_eigenvalue(&a.tr_mul(a));
            }
            let eta = if self.terms.nuclear { self.cfg.eta } else { 0.0 };
            let out = minimize_block(
                start,
                grad,
                |v, step| {
                    if eta > 0.0 {
                        project_columns(shrink_singular_values(v, eta * step))
                    } else {
                        project_columns(v)
                    }
                },
                |v| if eta > 0.0 { eta * nuclear_norm(v) } else { 0.0 },
                lip * 1.01,
                self.cfg.inner_iters,
            );
            self.note(out.settled);
            *d0 = Some(out.x);
        }
    }
}

/// Trains `algorithm` on the columns of `y` with class indices `labels`
/// (`0..C`, every class present).
pub fn train(algorithm: Algorithm, y: &DMatrix<f64>, labels: &[usize], config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let mut cfg = config.clone();
    match algorithm {
        Algorithm::Fddl => cfg.shared_atoms = 0,
        Algorithm::Copar | Algorithm::Lrsdl if cfg.shared_atoms == 0 => {
            return Err(Error::InvalidInput(format!("{algorithm} needs at least one shared atom")));
        }
        _ => {}
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training feature".into()));
    }
    let c = n_classes(labels);
    if c < 2 {
        return Err(Error::InsufficientData(format!("training needs at least 2 classes, got {c}")));
    }

    let init = init_dictionary(y, labels, cfg.class_atoms, cfg.shared_atoms, cfg.seed)?;
    let layout = init.layout();
    let names = init.labels.clone();
    let mut dicts = init.class_dicts;
    let mut d0 = init.shared;
    let mut x = DMatrix::zeros(layout.total(), y.ncols());

    let mut trainer = Trainer {
        algorithm,
        terms: Terms::of(algorithm),
        y,
        class_cols: class_columns(labels, c)?,
        layout: layout.clone(),
        cfg: &cfg,
        unsettled: 0,
    };

    let mut trace = Vec::with_capacity(cfg.outer_iters);
    for it in 0..cfg.outer_iters {
        trainer.update_codes(&dicts, d0.as_ref(), &mut x);
        trainer.update_dictionaries(&mut dicts, &mut d0, &x);
        let dict = StructuredDictionary::new(dicts.clone(), d0.clone(), names.clone())?;
        let codes = CodeBlock::new(x.clone(), layout.clone(), labels)?;
        let f = objective(trainer.algorithm, y, &dict, &codes, cfg.lambda1, cfg.lambda2, cfg.eta)?;
        if !f.is_finite() {
            return Err(Error::NonConvergence { iterations: it + 1 });
        }
        let done = trace
            .last()
            .is_some_and(|&prev: &f64| (prev - f).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE));
        trace.push(f);
        if done {
            break;
        }
    }

    if trainer.unsettled > 0 {
        log::warn!(
            "{algorithm}: {} block updates stopped at the inner iteration limit",
            trainer.unsettled
        );
    }
    let unsettled = trainer.unsettled;
    let dictionary = StructuredDictionary::new(dicts, d0, names)?;
    let codes = CodeBlock::new(x, layout, labels)?;
    Ok(TrainedModel {
        algorithm,
        dictionary,
        stats: ClassStats::from_codes(&codes),
        config: cfg,
        objective_trace: trace,
        unsettled_blocks: unsettled,
    })
}

pub fn train_fddl(y: &DMatrix<f64>, labels: &[usize], config: &TrainConfig) -> Result<TrainedModel> {
    train(Algorithm::Fddl, y, labels, config)
}

pub fn train_copar(y: &DMatrix<f64>, labels: &[usize], config: &TrainConfig) -> Result<TrainedModel> {
    train(Algorithm::Copar, y, labels, config)
}

pub fn train_lrsdl(y: &DMatrix<f64>, labels: &[usize], config: &TrainConfig) -> Result<TrainedModel> {
    train(Algorithm::Lrsdl, y, labels, config)
}
