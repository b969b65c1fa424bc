//! Structured dictionary learning: COPAR, FDDL and LRSDL.
//!
//! All three learners share one layout. The dictionary is
//! `[D_1, ..., D_C, D_0]` where `D_c` holds the atoms of class `c` and the
//! optional `D_0` is shared by every class. Codes are stacked the same way:
//! rows of class blocks first (the "class part", `K_D` rows), then the
//! `K_0` shared rows.

mod classify;
mod objective;
mod solver;
mod train;

pub use classify::{classify_gc, classify_lc, classify_lrsdl, Classification, Classifier, Rule, RuleParams};
pub use objective::{
    copar_objective, fddl_objective, fidelity, fidelity_grad_d, fidelity_grad_x, fisher, fisher_grad,
    incoherence, incoherence_grad, lrsdl_discrimination, lrsdl_discrimination_grad, lrsdl_objective,
    nuclear_norm, objective, Leakage, Terms,
};
pub use train::{init_dictionary, train, train_copar, train_fddl, train_lrsdl};

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Copar,
    Fddl,
    Lrsdl,
}

impl Algorithm {
    pub fn tag(self) -> u32 {
        match self {
            Algorithm::Copar => 0,
            Algorithm::Fddl => 1,
            Algorithm::Lrsdl => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Algorithm::Copar),
            1 => Some(Algorithm::Fddl),
            2 => Some(Algorithm::Lrsdl),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Copar => "copar",
            Algorithm::Fddl => "fddl",
            Algorithm::Lrsdl => "lrsdl",
        }
    }

    /// Classification rule used when none is requested.
    pub fn default_rule(self) -> Rule {
        match self {
            Algorithm::Copar | Algorithm::Fddl => Rule::Gc,
            Algorithm::Lrsdl => Rule::Lrsdl,
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "copar" => Ok(Algorithm::Copar),
            "fddl" => Ok(Algorithm::Fddl),
            "lrsdl" => Ok(Algorithm::Lrsdl),
            other => Err(Error::InvalidInput(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Row ranges of each atom block inside the stacked dictionary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomLayout {
    pub class_rows: Vec<Range<usize>>,
    pub shared_rows: Option<Range<usize>>,
}

impl AtomLayout {
    pub fn new(class_atoms: &[usize], shared_atoms: usize) -> Self {
        let mut start = 0;
        let class_rows = class_atoms
            .iter()
            .map(|&k| {
                let r = start..start + k;
                start += k;
                r
            })
            .collect();
        let shared_rows = (shared_atoms > 0).then(|| start..start + shared_atoms);
        Self { class_rows, shared_rows }
    }

    pub fn n_classes(&self) -> usize {
        self.class_rows.len()
    }

    /// `K_D`: number of class-specific atoms.
    pub fn class_part(&self) -> usize {
        self.class_rows.last().map_or(0, |r| r.end)
    }

    pub fn shared_len(&self) -> usize {
        self.shared_rows.as_ref().map_or(0, |r| r.len())
    }

    pub fn total(&self) -> usize {
        self.class_part() + self.shared_len()
    }
}

/// Per-class sub-dictionaries plus an optional shared one.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredDictionary {
    pub class_dicts: Vec<DMatrix<f64>>,
    pub shared: Option<DMatrix<f64>>,
    pub labels: Vec<String>,
}

impl StructuredDictionary {
    pub fn new(class_dicts: Vec<DMatrix<f64>>, shared: Option<DMatrix<f64>>, labels: Vec<String>) -> Result<Self> {
        if class_dicts.is_empty() {
            return Err(Error::InvalidInput("dictionary needs at least one class".into()));
        }
        if labels.len() != class_dicts.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} class dictionaries",
                labels.len(),
                class_dicts.len()
            )));
        }
        let n = class_dicts[0].nrows();
        let all = class_dicts.iter().chain(shared.iter());
        for d in all {
            if d.nrows() != n {
                return Err(Error::ShapeMismatch("sub-dictionaries differ in dimension".into()));
            }
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite dictionary entry".into()));
            }
            if d.column_iter().any(|c| c.norm() > 1.0 + 1e-9) {
                return Err(Error::InvalidInput("atom norm exceeds 1".into()));
            }
        }
        let shared = shared.filter(|s| s.ncols() > 0);
        Ok(Self { class_dicts, shared, labels })
    }

    pub fn dim(&self) -> usize {
        self.class_dicts[0].nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.class_dicts.len()
    }

    pub fn class_atoms(&self) -> Vec<usize> {
        self.class_dicts.iter().map(|d| d.ncols()).collect()
    }

    pub fn shared_atoms(&self) -> usize {
        self.shared.as_ref().map_or(0, |d| d.ncols())
    }

    pub fn layout(&self) -> AtomLayout {
        AtomLayout::new(&self.class_atoms(), self.shared_atoms())
    }

    /// `[D_1, ..., D_C, D_0]`.
    pub fn full(&self) -> DMatrix<f64> {
        let layout = self.layout();
        let mut out = DMatrix::zeros(self.dim(), layout.total());
        for (d, r) in self.class_dicts.iter().zip(&layout.class_rows) {
            out.columns_mut(r.start, r.len()).copy_from(d);
        }
        if let (Some(d0), Some(r)) = (&self.shared, &layout.shared_rows) {
            out.columns_mut(r.start, r.len()).copy_from(d0);
        }
        out
    }

    /// `[D_1, ..., D_C]` without the shared block.
    pub fn class_part(&self) -> DMatrix<f64> {
        let k: usize = self.class_atoms().iter().sum();
        let mut out = DMatrix::zeros(self.dim(), k);
        let mut start = 0;
        for d in &self.class_dicts {
            out.columns_mut(start, d.ncols()).copy_from(d);
            start += d.ncols();
        }
        out
    }
}

/// Sparse codes for a labelled sample set: `x` is `K x N` in the stacked row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBlock {
    pub x: DMatrix<f64>,
    pub layout: AtomLayout,
    /// Column indices of each class, disjoint and covering `0..N`.
    pub class_cols: Vec<Vec<usize>>,
}

impl CodeBlock {
    pub fn new(x: DMatrix<f64>, layout: AtomLayout, labels: &[usize]) -> Result<Self> {
        if x.nrows() != layout.total() {
            return Err(Error::ShapeMismatch(format!(
                "code has {} rows, layout has {} atoms",
                x.nrows(),
                layout.total()
            )));
        }
        if x.ncols() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "code has {} columns for {} labels",
                x.ncols(),
                labels.len()
            )));
        }
        let class_cols = class_columns(labels, layout.n_classes())?;
        Ok(Self { x, layout, class_cols })
    }

    /// Rows `0..K_D`.
    pub fn class_part(&self) -> DMatrix<f64> {
        self.x.rows(0, self.layout.class_part()).into_owned()
    }

    pub fn shared_part(&self) -> Option<DMatrix<f64>> {
        self.layout
            .shared_rows
            .as_ref()
            .map(|r| self.x.rows(r.start, r.len()).into_owned())
    }
}

pub(crate) fn class_columns(labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut cols = vec![Vec::new(); n_classes];
    for (j, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::InvalidInput(format!("label {l} out of range for {n_classes} classes")));
        }
        cols[l].push(j);
    }
    Ok(cols)
}

pub(crate) fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

pub(crate) fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    if m.ncols() == 0 {
        return DVector::zeros(m.nrows());
    }
    m.column_sum() / m.ncols() as f64
}

/// Class means of the class-part codes and the mean of the shared codes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub class_means: Vec<DVector<f64>>,
    pub global_mean: DVector<f64>,
    pub shared_mean: Option<DVector<f64>>,
}

impl ClassStats {
    pub fn from_codes(codes: &CodeBlock) -> Self {
        let xd = codes.class_part();
        let class_means = codes
            .class_cols
            .iter()
            .map(|cols| column_mean(&select_columns(&xd, cols)))
            .collect();
        Self {
            class_means,
            global_mean: column_mean(&xd),
            shared_mean: codes.shared_part().map(|x0| column_mean(&x0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Sparsity weight.
    pub lambda1: f64,
    /// Discrimination weight.
    pub lambda2: f64,
    /// Nuclear-norm weight on `D_0` (LRSDL).
    pub eta: f64,
    /// Sparsity weight when coding test samples (GC/LC).
    pub gamma: f64,
    /// Residual vs. code-distance balance in the LRSDL rule.
    pub w: f64,
    pub class_atoms: usize,
    pub shared_atoms: usize,
    pub outer_iters: usize,
    /// Proximal-gradient steps per block update.
    pub inner_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 0.01,
            eta: 0.1,
            gamma: 0.01,
            w: 0.5,
            class_atoms: 32,
            shared_atoms: 16,
            outer_iters: 50,
            inner_iters: 20,
            tol: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda1, self.lambda2, self.eta, self.gamma];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::InvalidInput(format!("w must lie in [0,1], got {}", self.w)));
        }
        if self.class_atoms == 0 {
            return Err(Error::InvalidInput("class_atoms must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub algorithm: Algorithm,
    pub dictionary: StructuredDictionary,
    pub stats: ClassStats,
    pub config: TrainConfig,
    /// Objective after every outer iteration.
    pub objective_trace: Vec<f64>,
    /// Block updates that used their whole inner-iteration budget without settling.
    pub unsettled_blocks: u64,
}
