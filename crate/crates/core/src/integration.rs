//! Randomized integration: control variates on top of the recovery operator,
//! the integral of the approximant alone, and plain Monte Carlo.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::recovery::{min_budget, AlgoConstants, RecoveryPlan, Scenario};
use crate::sampling::{derive_seed, sample_iid_uniform};
use crate::testbed::reference_grid;

/// Stream tags for the two independent point sets of one estimate.
pub(crate) const APPROX_STREAM: u64 = 1;
pub(crate) const RESIDUAL_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntegrationMethod {
    ControlVariates,
    ApproxOnly,
    PlainMc,
}

impl IntegrationMethod {
    pub fn name(self) -> &'static str {
        match self {
            IntegrationMethod::ControlVariates => "cv",
            IntegrationMethod::ApproxOnly => "approx-only",
            IntegrationMethod::PlainMc => "plain-mc",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cv" => Ok(IntegrationMethod::ControlVariates),
            "approx-only" | "approx" => Ok(IntegrationMethod::ApproxOnly),
            "plain-mc" | "mc" => Ok(IntegrationMethod::PlainMc),
            other => Err(Error::InvalidParameter(format!("unknown integration method '{other}'"))),
        }
    }
}

impl fmt::Display for IntegrationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralEstimate {
    pub value: f64,
    pub method: IntegrationMethod,
    /// Points used to build the approximant.
    pub n_approx: usize,
    /// Fresh points used for the Monte Carlo stage.
    pub n_mc: usize,
    pub seed: u64,
    pub fallback_count: u64,
    /// Scenario of the approximant, when one was built.
    pub scenario: Option<Scenario>,
}

/// Recovery constants and the quadrature resolution used for `∫ f_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationSettings {
    pub constants: AlgoConstants,
    pub quadrature_resolution: usize,
}

impl IntegrationSettings {
    pub fn for_domain(domain: &Domain, degree: usize) -> Self {
        Self {
            constants: AlgoConstants::for_domain(domain, degree),
            quadrature_resolution: crate::testbed::default_quadrature_resolution(domain.dim()),
        }
    }
}

/// Linear functional `f ↦ ∫ f_n` of a recovery plan: the quadrature of the
/// approximant is `sum_j w_j f(x_j)`.
#[derive(Debug, Clone)]
pub struct QuadratureWeights {
    pub weights: Vec<f64>,
    pub fallback_count: u64,
}

impl QuadratureWeights {
    pub fn apply(&self, samples: &[f64]) -> f64 {
        self.weights.iter().zip(samples).map(|(w, v)| w * v).sum()
    }
}

/// Integrates the cardinal functions of the plan on the reference grid.
pub fn quadrature_weights(plan: &RecoveryPlan, resolution: usize) -> Result<QuadratureWeights> {
    let n = plan.points().len();
    if plan.scenario() == Scenario::Sparse {
        return Ok(QuadratureWeights { weights: vec![0.0; n], fallback_count: 0 });
    }
    let grid = reference_grid(plan.domain(), resolution)?;
    let cell = grid.volume / grid.len() as f64;
    // Chunked accumulation keeps the sum independent of thread scheduling.
    let partials: Vec<(Vec<f64>, u64)> = (0..grid.len())
        .collect::<Vec<_>>()
        .par_chunks(2048)
        .map(|chunk| -> Result<(Vec<f64>, u64)> {
            let mut acc = vec![0.0; n];
            let mut fallbacks = 0;
            for &i in chunk {
                let w = plan.weights_at(grid.points.point(i))?;
                fallbacks += w.fallback_count();
                for (&j, &a) in w.indices.iter().zip(&w.weights) {
                    acc[j] += a;
                }
            }
            Ok((acc, fallbacks))
        })
        .collect::<Result<_>>()?;
    let mut weights = vec![0.0; n];
    let mut fallback_count = 0;
    for (acc, fb) in partials {
        fallback_count += fb;
        for (w, a) in weights.iter_mut().zip(acc) {
            *w += a;
        }
    }
    for w in &mut weights {
        *w *= cell;
    }
    Ok(QuadratureWeights { weights, fallback_count })
}

fn check_budget(domain: &Domain, constants: &AlgoConstants, n: usize, parts: usize) -> Result<()> {
    let min = parts * min_budget(constants.cone_radius, domain.dim());
    if n < min {
        return Err(Error::BudgetTooSmall { n, min });
    }
    Ok(())
}

/// `vol(Ω)` times the mean of `f - f_n` over fresh points.
pub fn residual_mean<F>(plan: &RecoveryPlan, samples: &[f64], f: &F, n: usize, seed: u64) -> Result<(f64, u64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let fresh = sample_iid_uniform(plan.domain(), n, seed)?;
    let diffs: Vec<(f64, u64)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(f64, u64)> {
            let y = fresh.point(i);
            let w = plan.weights_at(y)?;
            Ok((f(y) - w.apply(samples), w.fallback_count()))
        })
        .collect::<Result<_>>()?;
    let sum: f64 = diffs.iter().map(|d| d.0).sum();
    let fallbacks = diffs.iter().map(|d| d.1).sum();
    Ok((plan.domain().volume() * sum / n as f64, fallbacks))
}

/// `∫ f_n + vol(Ω) mean(f - f_n)` with `f_n` built from the first `n/2` points
/// and the mean taken over `n - n/2` fresh points.
pub fn integrate_cv<F>(
    f: &F,
    domain: &Domain,
    n: usize,
    seed: u64,
    settings: &IntegrationSettings,
) -> Result<IntegralEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_budget(domain, &settings.constants, n, 2)?;
    let n_approx = n / 2;
    let n_mc = n - n_approx;
    let points = sample_iid_uniform(domain, n_approx, derive_seed(seed, &[APPROX_STREAM]))?;
    let plan = RecoveryPlan::build(domain, &points.points, &settings.constants)?;
    let samples: Vec<f64> = points.points.iter().map(f).collect();
    let quad = quadrature_weights(&plan, settings.quadrature_resolution)?;
    let (residual, fb) = residual_mean(&plan, &samples, f, n_mc, derive_seed(seed, &[RESIDUAL_STREAM]))?;
    Ok(IntegralEstimate {
        value: quad.apply(&samples) + residual,
        method: IntegrationMethod::ControlVariates,
        n_approx,
        n_mc,
        seed,
        fallback_count: quad.fallback_count + fb,
        scenario: Some(plan.scenario()),
    })
}

/// `∫ f_n` with `f_n` built from all `n` points.
pub fn integrate_approx_only<F>(
    f: &F,
    domain: &Domain,
    n: usize,
    seed: u64,
    settings: &IntegrationSettings,
) -> Result<IntegralEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_budget(domain, &settings.constants, n, 1)?;
    let points = sample_iid_uniform(domain, n, derive_seed(seed, &[APPROX_STREAM]))?;
    let plan = RecoveryPlan::build(domain, &points.points, &settings.constants)?;
    let samples: Vec<f64> = points.points.iter().map(f).collect();
    let quad = quadrature_weights(&plan, settings.quadrature_resolution)?;
    Ok(IntegralEstimate {
        value: quad.apply(&samples),
        method: IntegrationMethod::ApproxOnly,
        n_approx: n,
        n_mc: 0,
        seed,
        fallback_count: quad.fallback_count,
        scenario: Some(plan.scenario()),
    })
}

/// `vol(Ω)` times the mean of `f` over `n` iid points.
pub fn integrate_plain_mc<F>(f: &F, domain: &Domain, n: usize, seed: u64) -> Result<IntegralEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n == 0 {
        return Err(Error::BudgetTooSmall { n, min: 1 });
    }
    let points = sample_iid_uniform(domain, n, derive_seed(seed, &[RESIDUAL_STREAM]))?;
    let sum: f64 = points.points.iter().map(f).sum();
    Ok(IntegralEstimate {
        value: domain.volume() * sum / n as f64,
        method: IntegrationMethod::PlainMc,
        n_approx: 0,
        n_mc: n,
        seed,
        fallback_count: 0,
        scenario: None,
    })
}

pub fn integrate<F>(
    method: IntegrationMethod,
    f: &F,
    domain: &Domain,
    n: usize,
    seed: u64,
    settings: &IntegrationSettings,
) -> Result<IntegralEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    match method {
        IntegrationMethod::ControlVariates => integrate_cv(f, domain, n, seed, settings),
        IntegrationMethod::ApproxOnly => integrate_approx_only(f, domain, n, seed, settings),
        IntegrationMethod::PlainMc => integrate_plain_mc(f, domain, n, seed),
    }
}
