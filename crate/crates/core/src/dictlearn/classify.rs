//! Test-time coding and decision rules.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Algorithm, TrainedModel};
use crate::error::{Error, Result};
use crate::sparsecode::{largest_eigenvalue, solve_quadratic_l1, LassoOptions, QuadraticL1};

/// Decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    /// Code over the whole dictionary, compare class reconstructions.
    Gc,
    /// Code over each class dictionary (plus `D_0`) separately.
    Lc,
    /// Code with the shared part pulled toward its training mean; mixes
    /// residual and code distance to class means.
    Lrsdl,
}

impl std::str::FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gc" => Ok(Rule::Gc),
            "lc" => Ok(Rule::Lc),
            "lrsdl" => Ok(Rule::Lrsdl),
            other => Err(Error::InvalidInput(format!("unknown rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: usize,
    /// Per-class error or score; smaller is better.
    pub scores: Vec<f64>,
}

fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = i;
        }
    }
    best
}

/// Either an l1 problem with cached Gram matrix, or, when the weight is
/// zero, a minimum-norm least-squares solve.
struct Coder {
    dict: DMatrix<f64>,
    hessian: DMatrix<f64>,
    lipschitz: f64,
    pinv: Option<DMatrix<f64>>,
}

impl Coder {
    fn new(dict: DMatrix<f64>, extra: Option<&DMatrix<f64>>, least_squares: bool) -> Result<Self> {
        let mut hessian = dict.tr_mul(&dict);
        if let Some(e) = extra {
            hessian += e;
        }
        let pinv = if least_squares {
            let p = dict
                .clone()
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::DegenerateInput(format!("pseudo-inverse failed: {e}")))?;
            Some(p)
        } else {
            None
        };
        let lipschitz = largest_eigenvalue(&hessian);
        Ok(Self { dict, hessian, lipschitz, pinv })
    }

    fn code(&self, linear: DVector<f64>, constant: f64, lambda: f64, y: &DVector<f64>, opts: &LassoOptions) -> DVector<f64> {
        if let Some(p) = &self.pinv {
            return p * y;
        }
        let problem = QuadraticL1 {
            hessian: &self.hessian,
            linear,
            constant,
            lambda,
            lipschitz: self.lipschitz,
        };
        solve_quadratic_l1(&problem, opts).code
    }
}

/// Weights used at test time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleParams {
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub w: f64,
}

impl RuleParams {
    pub fn from_model(model: &TrainedModel) -> Self {
        let c = &model.config;
        Self { gamma: c.gamma, lambda1: c.lambda1, lambda2: c.lambda2, w: c.w }
    }
}

/// A trained model bound to a decision rule, with the per-rule matrices
/// precomputed so many samples can be classified cheaply.
pub struct Classifier<'m> {
    model: &'m TrainedModel,
    rule: Rule,
    params: RuleParams,
    opts: LassoOptions,
    coders: Vec<Coder>,
    shared_target: Option<DVector<f64>>,
}

impl<'m> Classifier<'m> {
    pub fn new(model: &'m TrainedModel, rule: Rule) -> Result<Self> {
        Self::with_params(model, rule, RuleParams::from_model(model))
    }

    pub fn with_params(model: &'m TrainedModel, rule: Rule, params: RuleParams) -> Result<Self> {
        let weights = [params.gamma, params.lambda1, params.lambda2];
        if weights.iter().any(|v| !v.is_finite() || *v < 0.0) || !(0.0..=1.0).contains(&params.w) {
            return Err(Error::InvalidInput("rule weights must be finite, nonnegative and w in [0,1]".into()));
        }
        let dict = &model.dictionary;
        let mut shared_target = None;
        let coders = match rule {
            Rule::Gc => vec![Coder::new(dict.full(), None, params.gamma == 0.0)?],
            Rule::Lc => dict
                .class_dicts
                .iter()
                .map(|dc| {
                    let local = match &dict.shared {
                        Some(d0) => {
                            let mut m = DMatrix::zeros(dict.dim(), dc.ncols() + d0.ncols());
                            m.columns_mut(0, dc.ncols()).copy_from(dc);
                            m.columns_mut(dc.ncols(), d0.ncols()).copy_from(d0);
                            m
                        }
                        None => dc.clone(),
                    };
                    Coder::new(local, None, params.gamma == 0.0)
                })
                .collect::<Result<_>>()?,
            Rule::Lrsdl => {
                if model.algorithm != Algorithm::Lrsdl {
                    return Err(Error::WrongAlgorithm {
                        expected: Algorithm::Lrsdl.name().into(),
                        found: model.algorithm.name().into(),
                    });
                }
                let layout = dict.layout();
                let extra = match (&layout.shared_rows, &model.stats.shared_mean) {
                    (Some(r0), Some(m0)) => {
                        let mut e = DMatrix::zeros(layout.total(), layout.total());
                        for i in r0.clone() {
                            e[(i, i)] = 0.5 * params.lambda2;
                        }
                        shared_target = Some(m0.clone());
                        Some(e)
                    }
                    (Some(_), None) => {
                        return Err(Error::WrongAlgorithm {
                            expected: "model with shared code statistics".into(),
                            found: model.algorithm.name().into(),
                        })
                    }
                    _ => None,
                };
                vec![Coder::new(dict.full(), extra.as_ref(), false)?]
            }
        };
        Ok(Self {
            model,
            rule,
            params,
            opts: LassoOptions { max_iters: 5000, tol: 1e-12 },
            coders,
            shared_target,
        })
    }

    pub fn with_options(mut self, opts: LassoOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    pub fn classify(&self, y: &DVector<f64>) -> Result<Classification> {
        let dict = &self.model.dictionary;
        if y.len() != dict.dim() {
            return Err(Error::ShapeMismatch(format!(
                "sample has dimension {}, dictionary {}",
                y.len(),
                dict.dim()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite sample".into()));
        }
        let layout = dict.layout();
        let energy = y.norm_squared();
        let scores: Vec<f64> = match self.rule {
            Rule::Gc => {
                let coder = &self.coders[0];
                let x = coder.code(coder.dict.tr_mul(y), energy, self.params.gamma, y, &self.opts);
                let shared_fit = match (&dict.shared, &layout.shared_rows) {
                    (Some(d0), Some(r0)) => d0 * x.rows(r0.start, r0.len()),
                    _ => DVector::zeros(y.len()),
                };
                layout
                    .class_rows
                    .iter()
                    .zip(&dict.class_dicts)
                    .map(|(r, dc)| (y - dc * x.rows(r.start, r.len()) - &shared_fit).norm_squared())
                    .collect()
            }
            Rule::Lc => self
                .coders
                .iter()
                .map(|coder| {
                    let x = coder.code(coder.dict.tr_mul(y), energy, self.params.gamma, y, &self.opts);
                    (y - &coder.dict * &x).norm_squared() + self.params.gamma * x.lp_norm(1)
                })
                .collect(),
            Rule::Lrsdl => {
                let coder = &self.coders[0];
                let mut linear = coder.dict.tr_mul(y);
                let mut constant = energy;
                if let (Some(m0), Some(r0)) = (&self.shared_target, &layout.shared_rows) {
                    let half = 0.5 * self.params.lambda2;
                    let mut part = linear.rows_mut(r0.start, r0.len());
                    part += m0 * half;
                    constant += half * m0.norm_squared();
                }
                let x = coder.code(linear, constant, self.params.lambda1, y, &self.opts);
                let y_bar = match (&dict.shared, &layout.shared_rows) {
                    (Some(d0), Some(r0)) => y - d0 * x.rows(r0.start, r0.len()),
                    _ => y.clone(),
                };
                let xd = x.rows(0, layout.class_part());
                let w = self.params.w;
                layout
                    .class_rows
                    .iter()
                    .zip(&dict.class_dicts)
                    .zip(&self.model.stats.class_means)
                    .map(|((r, dc), mc)| {
                        let fit = (&y_bar - dc * x.rows(r.start, r.len())).norm_squared();
                        w * fit + (1.0 - w) * (xd - mc).norm_squared()
                    })
                    .collect()
            }
        };
        Ok(Classification { label: argmin(&scores), scores })
    }

    /// Classifies every column; columns are independent, so the result does
    /// not depend on the thread count.
    pub fn classify_batch(&self, ys: &DMatrix<f64>) -> Result<Vec<Classification>> {
        (0..ys.ncols())
            .into_par_iter()
            .map(|j| self.classify(&ys.column(j).into_owned()))
            .collect()
    }
}

pub fn classify_gc(model: &TrainedModel, y: &DVector<f64>, gamma: f64) -> Result<Classification> {
    let params = RuleParams { gamma, ..RuleParams::from_model(model) };
    Classifier::with_params(model, Rule::Gc, params)?.classify(y)
}

pub fn classify_lc(model: &TrainedModel, y: &DVector<f64>, gamma: f64) -> Result<Classification> {
    let params = RuleParams { gamma, ..RuleParams::from_model(model) };
    Classifier::with_params(model, Rule::Lc, params)?.classify(y)
}

pub fn classify_lrsdl(model: &TrainedModel, y: &DVector<f64>, lambda1: f64, lambda2: f64, w: f64) -> Result<Classification> {
    let params = RuleParams { gamma: model.config.gamma, lambda1, lambda2, w };
    Classifier::with_params(model, Rule::Lrsdl, params)?.classify(y)
}
