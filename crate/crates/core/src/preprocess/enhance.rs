//! Contrast enhancement by Normal-Laplace mixture modelling in the log domain.
//!
//! Intensities are mapped through `ln(1 + x)`, a mixture of Normal-Laplace
//! components is fitted with (generalized) EM, each component is Gaussianized
//! to a fixed target mean/std and the components are blended with their
//! posterior probabilities before mapping back with `exp`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

use super::GrayImage;
use crate::error::{Error, Result};

const LN_2PI_HALF: f64 = 0.918_938_533_204_672_8;
const STALL_LIMIT: usize = 10;
/// Target std shared by all Gaussianized components.
pub const TARGET_STD: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub gaussian_mean: f64,
    pub gaussian_std: f64,
    pub laplace_scale: f64,
}

impl MixtureComponent {
    /// Log density of the convolution of `N(mean, std^2)` with a symmetric
    /// Laplace of scale `laplace_scale`.
    pub fn ln_pdf(&self, y: f64) -> f64 {
        normal_laplace_ln_pdf(y, self.gaussian_mean, self.gaussian_std, self.laplace_scale)
    }

    pub fn variance(&self) -> f64 {
        self.gaussian_std.powi(2) + 2.0 * self.laplace_scale.powi(2)
    }
}

/// Fitted mixture over log-intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub components: Vec<MixtureComponent>,
}

impl MixtureModel {
    pub fn ln_pdf(&self, y: f64) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.ln_pdf(y))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&y| self.ln_pdf(y)).sum()
    }

    /// Posterior component probabilities for one observation.
    pub fn posterior(&self, y: f64, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.weight.ln() + c.ln_pdf(y);
        }
        let lse = log_sum_exp(out);
        for o in out.iter_mut() {
            *o = (*o - lse).exp();
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub model: MixtureModel,
    /// Log-likelihood evaluated before every M-step and once after the last one.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct EnhanceOptions {
    pub n_components: usize,
    pub em_iters: usize,
    pub seed: u64,
    /// Upper bound on pixels used for the EM fit; the posterior blend always covers the whole image.
    pub max_samples: usize,
    /// Relative log-likelihood change below which EM stops.
    pub tol: f64,
    /// Pins every component's Laplace scale instead of estimating it.
    pub fixed_laplace_scale: Option<f64>,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        Self {
            n_components: 3,
            em_iters: 30,
            seed: 0,
            max_samples: 4000,
            tol: 1e-7,
            fixed_laplace_scale: None,
        }
    }
}

pub fn enhance_contrast(img: &GrayImage, n_components: usize, em_iters: usize, seed: u64) -> Result<GrayImage> {
    enhance_contrast_with(
        img,
        &EnhanceOptions {
            n_components,
            em_iters,
            seed,
            ..EnhanceOptions::default()
        },
    )
}

pub fn enhance_contrast_with(img: &GrayImage, opts: &EnhanceOptions) -> Result<GrayImage> {
    if opts.n_components == 0 {
        return Err(Error::InvalidInput("n_components must be at least 1".into()));
    }
    if img.pixels().iter().any(|&p| p < 0.0) {
        return Err(Error::InvalidInput("negative pixel intensity".into()));
    }
    let logs: Vec<f64> = img.pixels().iter().map(|&p| p.ln_1p()).collect();
    let (lo, hi) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 0.0 {
        return Err(Error::DegenerateInput("image has zero intensity variance".into()));
    }

    let samples: Vec<f64> = if logs.len() > opts.max_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = index::sample(&mut rng, logs.len(), opts.max_samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| logs[i]).collect()
    } else {
        logs.clone()
    };

    let fit = fit_mixture_with(&samples, opts.n_components, opts.em_iters, opts.tol, opts.fixed_laplace_scale)?;
    let model = fit.model;
    let k = model.components.len();
    let targets = target_means(k);
    let scales: Vec<f64> = model.components.iter().map(|c| c.variance().sqrt()).collect();

    let mut post = vec![0.0; k];
    let out: Vec<f64> = logs
        .iter()
        .map(|&x| {
            model.posterior(x, &mut post);
            let blended: f64 = (0..k)
                .map(|i| {
                    let c = &model.components[i];
                    post[i] * (targets[i] + TARGET_STD * (x - c.gaussian_mean) / scales[i])
                })
                .sum();
            blended.exp()
        })
        .collect();
    GrayImage::new(img.rows(), img.cols(), out)
}

/// Gaussianization targets: equally spaced in `[0, 1]`.
pub fn target_means(k: usize) -> Vec<f64> {
    if k == 1 {
        vec![0.5]
    } else {
        (0..k).map(|i| i as f64 / (k - 1) as f64).collect()
    }
}

pub fn fit_mixture(samples: &[f64], n_components: usize, em_iters: usize) -> Result<MixtureFit> {
    fit_mixture_with(samples, n_components, em_iters, 1e-9, None)
}

/// Generalized EM for a Normal-Laplace mixture. Weights get the closed-form
/// update; location, Gaussian std and Laplace scale of each component are
/// re-estimated by moment matching plus a golden-section search over the
/// variance split, and a proposal is only kept when it raises the component's
/// expected complete-data log-likelihood. Components are returned sorted by mean.
pub fn fit_mixture_with(
    samples: &[f64],
    n_components: usize,
    em_iters: usize,
    tol: f64,
    fixed_laplace_scale: Option<f64>,
) -> Result<MixtureFit> {
    if n_components == 0 {
        return Err(Error::InvalidInput("n_components must be at least 1".into()));
    }
    if samples.len() < n_components.max(2) {
        return Err(Error::InsufficientData(format!(
            "{} samples for {} components",
            samples.len(),
            n_components
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::DegenerateInput("samples have zero variance".into()));
    }
    let std = var.sqrt();
    let floor = 1e-6 * std;

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut components: Vec<MixtureComponent> = (0..n_components)
        .map(|k| {
            let q = (k as f64 + 0.5) / n_components as f64;
            let pos = ((sorted.len() - 1) as f64 * q).round() as usize;
            MixtureComponent {
                weight: 1.0 / n_components as f64,
                gaussian_mean: sorted[pos],
                gaussian_std: std,
                laplace_scale: fixed_laplace_scale.unwrap_or(std / 2.0),
            }
        })
        .collect();

    let k = n_components;
    let mut resp = vec![0.0; samples.len() * k];
    let mut trace = Vec::with_capacity(em_iters + 1);
    let mut stalled = 0;
    let mut converged = false;

    for iter in 0..em_iters {
        let ll = e_step(samples, &components, &mut resp);
        if let Some(&prev) = trace.last() {
            let delta: f64 = ll - prev;
            if !ll.is_finite() || delta < 0.0 {
                stalled += 1;
                if stalled >= STALL_LIMIT {
                    return Err(Error::NonConvergence { iterations: iter });
                }
            } else {
                stalled = 0;
                if delta <= tol * ll.abs() {
                    trace.push(ll);
                    converged = true;
                    break;
                }
            }
        }
        trace.push(ll);

        for (j, comp) in components.iter_mut().enumerate() {
            let w: Vec<f64> = (0..samples.len()).map(|i| resp[i * k + j]).collect();
            let wsum: f64 = w.iter().sum();
            if wsum <= f64::MIN_POSITIVE {
                continue;
            }
            comp.weight = wsum / n;
            *comp = m_step_component(samples, &w, wsum, *comp, floor, fixed_laplace_scale);
        }
    }
    if !converged {
        let ll = e_step(samples, &components, &mut resp);
        trace.push(ll);
    }

    components.sort_by(|a, b| a.gaussian_mean.total_cmp(&b.gaussian_mean));
    Ok(MixtureFit {
        model: MixtureModel { components },
        log_likelihood: trace,
        converged,
    })
}

fn e_step(samples: &[f64], comps: &[MixtureComponent], resp: &mut [f64]) -> f64 {
    let k = comps.len();
    let ln_w: Vec<f64> = comps.iter().map(|c| c.weight.ln()).collect();
    let mut ll = 0.0;
    for (i, &y) in samples.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        for j in 0..k {
            row[j] = ln_w[j] + comps[j].ln_pdf(y);
        }
        let lse = log_sum_exp(row);
        for r in row.iter_mut() {
            *r = (*r - lse).exp();
        }
        ll += lse;
    }
    ll
}

fn weighted_q(samples: &[f64], w: &[f64], mean: f64, sigma: f64, b: f64) -> f64 {
    samples
        .iter()
        .zip(w)
        .map(|(&y, &wi)| if wi == 0.0 { 0.0 } else { wi * normal_laplace_ln_pdf(y, mean, sigma, b) })
        .sum()
}

fn m_step_component(
    samples: &[f64],
    w: &[f64],
    wsum: f64,
    current: MixtureComponent,
    floor: f64,
    fixed_b: Option<f64>,
) -> MixtureComponent {
    let mu = samples.iter().zip(w).map(|(y, wi)| y * wi).sum::<f64>() / wsum;
    let v = (samples.iter().zip(w).map(|(y, wi)| wi * (y - mu).powi(2)).sum::<f64>() / wsum)
        .max(floor * floor);

    let (sigma, b) = match fixed_b {
        Some(b) => ((v - 2.0 * b * b).max(floor * floor).sqrt(), b),
        None => {
            // split of the total variance between the Gaussian and Laplace parts
            let split = |rho: f64| ((rho * v).sqrt().max(floor), ((1.0 - rho) * v / 2.0).sqrt().max(floor));
            let q = |rho: f64| {
                let (s, b) = split(rho);
                weighted_q(samples, w, mu, s, b)
            };
            let rho = golden_section_max(q, 0.01, 0.999, 18);
            split(rho)
        }
    };

    let proposal = MixtureComponent {
        weight: current.weight,
        gaussian_mean: mu,
        gaussian_std: sigma,
        laplace_scale: b,
    };
    let q_new = weighted_q(samples, w, mu, sigma, b);
    let q_old = weighted_q(samples, w, current.gaussian_mean, current.gaussian_std, current.laplace_scale);
    if q_new.is_finite() && q_new >= q_old {
        proposal
    } else {
        current
    }
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        c
    } else {
        d
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `exp(x^2) * erfc(x)`, stable for large `|x|`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        if x < -26.0 {
            return f64::INFINITY;
        }
        2.0 * (x * x).exp() - erfcx(-x)
    } else if x < 25.0 {
        (x * x).exp() * erfc(x)
    } else {
        let x2 = x * x;
        let series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2);
        series / (x * std::f64::consts::PI.sqrt())
    }
}

fn ln_erfcx(x: f64) -> f64 {
    if x < -26.0 {
        // 2 exp(x^2) dominates
        x * x + std::f64::consts::LN_2
    } else {
        erfcx(x).ln()
    }
}

/// Log of the Mills ratio `(1 - Phi(t)) / phi(t)`.
fn ln_mills(t: f64) -> f64 {
    0.5 * (std::f64::consts::PI / 2.0).ln() + ln_erfcx(t / std::f64::consts::SQRT_2)
}

/// Normal-Laplace log density, closed form via the scaled complementary error function.
pub fn normal_laplace_ln_pdf(y: f64, mean: f64, sigma: f64, laplace_scale: f64) -> f64 {
    let z = (y - mean) / sigma;
    let w = sigma / laplace_scale;
    let a = ln_mills(w - z);
    let b = ln_mills(w + z);
    let m = a.max(b);
    let ln_sum = m + ((a - m).exp() + (b - m).exp()).ln();
    -(2.0 * laplace_scale).ln() - 0.5 * z * z - LN_2PI_HALF + ln_sum
}
