//! The adaptive cone recovery operator.
//!
//! Given points `P` on a domain with cone parameters `(r, θ)`, the operator
//! first compares the global covering radius with `c0 r`. When the points
//! cover the domain too coarsely it returns 0 everywhere. Otherwise, at each
//! evaluation point `x`, it picks the smallest dyadic cone `K(x, 2^-m r)`
//! whose local covering radius is at most `c1 2^-m r` and applies moving
//! least squares to the points inside that cone.

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{
    brute_nearest, c_theta, probe_max_distance, Cone, Domain, PointCloud, PointIndex, Region,
    Resolution, MAX_HALF_ANGLE,
};
use crate::mls::{solve_mls_with_rhs, PolyBasis};

/// Upper bound on the number of probes used for the global covering radius.
pub const MAX_GLOBAL_PROBES: f64 = 4.0e6;

/// How the moving least squares support radius is chosen inside the selected cone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupportRule {
    /// The support equals the cone radius, so every point of the cone takes part.
    ConeRadius,
    /// The support is the given multiple of the local covering radius.
    CoveringMultiple(f64),
}

impl SupportRule {
    pub fn name(&self) -> String {
        match self {
            SupportRule::ConeRadius => "cone-radius".into(),
            SupportRule::CoveringMultiple(f) => format!("covering-x{f}"),
        }
    }
}

/// Constants of the recovery operator.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConstants {
    /// Cone radius `r`.
    pub cone_radius: f64,
    /// Cone half-angle `θ`.
    pub half_angle: f64,
    /// Local covering constant `c1`, at most `0.75 c_theta`.
    pub c1: f64,
    /// Polynomial degree reproduced by the local solves.
    pub degree: usize,
    /// Local probe spacing as a fraction of `c1 ρ`.
    pub local_probe_factor: f64,
    /// Global probe spacing as a fraction of `c0 r`.
    pub global_probe_factor: f64,
    pub support: SupportRule,
}

impl AlgoConstants {
    /// Defaults for a domain: its cone parameters and `c1 = 0.375 c_theta`.
    pub fn for_domain(domain: &Domain, degree: usize) -> Self {
        let half_angle = domain.cone_half_angle();
        Self {
            cone_radius: domain.cone_radius(),
            half_angle,
            c1: 0.375 * c_theta(half_angle).expect("domain half-angle is valid"),
            degree,
            local_probe_factor: 0.25,
            global_probe_factor: 0.25,
            support: SupportRule::ConeRadius,
        }
    }

    pub fn c_theta(&self) -> f64 {
        c_theta(self.half_angle).unwrap_or(f64::NAN)
    }

    /// Largest admissible `c1`.
    pub fn c1_max(&self) -> f64 {
        0.75 * self.c_theta()
    }

    /// `c0 = c_theta c1 / 2`.
    pub fn c0(&self) -> f64 {
        self.c_theta() * self.c1 / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cone_radius > 0.0 && self.cone_radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("cone radius {}", self.cone_radius)));
        }
        if !(self.half_angle > 0.0 && self.half_angle <= MAX_HALF_ANGLE + 1e-15) {
            return Err(Error::InvalidParameter(format!(
                "half-angle {} outside (0, pi/5]",
                self.half_angle
            )));
        }
        if !(self.c1 > 0.0 && self.c1 <= self.c1_max() * (1.0 + 1e-12)) {
            return Err(Error::InvalidParameter(format!(
                "c1 = {} outside (0, 0.75 c_theta = {}]",
                self.c1,
                self.c1_max()
            )));
        }
        for (name, v) in [
            ("local probe factor", self.local_probe_factor),
            ("global probe factor", self.global_probe_factor),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidParameter(format!("{name} {v} outside (0, 1]")));
            }
        }
        if let SupportRule::CoveringMultiple(f) = self.support {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidParameter(format!("support multiple {f}")));
            }
        }
        Ok(())
    }
}

/// Largest `m >= 0` with `2^m <= r n^(1/d)`; fails when `n < r^-d`.
pub fn finest_level(cone_radius: f64, n: usize, dim: usize) -> Result<usize> {
    let scaled = cone_radius.powi(dim as i32) * n as f64;
    if !(scaled >= 1.0 - 1e-12) {
        let min = (cone_radius.powi(-(dim as i32)) - 1e-9).ceil() as usize;
        return Err(Error::BudgetTooSmall { n, min });
    }
    // 2^(m d) <= r^d n, with slack for r^d n landing exactly on a power of two.
    let m = ((scaled * (1.0 + 1e-12)).log2() / dim as f64 + 1e-12).floor();
    Ok(m.max(0.0) as usize)
}

/// Smallest budget accepted for the given cone radius and dimension.
pub fn min_budget(cone_radius: f64, dim: usize) -> usize {
    (cone_radius.powi(-(dim as i32)) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// The global covering radius is at least `c0 r`; the output is 0.
    Sparse,
    /// Local moving least squares on adaptive cones.
    Local,
}

impl Scenario {
    pub fn number(self) -> u8 {
        match self {
            Scenario::Sparse => 1,
            Scenario::Local => 2,
        }
    }
}

/// Level chosen at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSelection {
    pub x: Vec<f64>,
    pub level: usize,
    pub radius: f64,
    pub cone: Cone,
    /// Indices into the point set of the points inside the cone.
    pub indices: Vec<usize>,
    /// Probe estimate of the local covering radius at the chosen level; infinite when the
    /// cone holds no points, `None` when the level was taken as the fallback without a check.
    pub local_covering: Option<f64>,
}

/// Recovery weights at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalWeights {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// Level actually used after any retries.
    pub level: usize,
    pub lebesgue_sum: f64,
    /// Solves that failed and were retried on a larger cone.
    pub retries: u32,
    /// Whether the nearest-point fallback was used.
    pub nearest_fallback: bool,
}

impl LocalWeights {
    fn zero() -> Self {
        Self {
            indices: Vec::new(),
            weights: Vec::new(),
            level: 0,
            lebesgue_sum: 0.0,
            retries: 0,
            nearest_fallback: false,
        }
    }

    pub fn apply(&self, samples: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.weights)
            .map(|(&i, a)| a * samples[i])
            .sum()
    }

    pub fn fallback_count(&self) -> u64 {
        self.retries as u64 + self.nearest_fallback as u64
    }
}

/// Everything about the operator that does not depend on the sampled function.
#[derive(Debug, Clone)]
pub struct RecoveryPlan {
    domain: Domain,
    points: PointCloud,
    constants: AlgoConstants,
    basis: PolyBasis,
    index: PointIndex,
    global_covering: f64,
    scenario: Scenario,
    finest_level: usize,
    rhs_scale: f64,
}

impl RecoveryPlan {
    pub fn build(domain: &Domain, points: &PointCloud, constants: &AlgoConstants) -> Result<Self> {
        constants.validate()?;
        check_dim(domain.dim(), points.dim())?;
        let domain = domain
            .clone()
            .with_cone(constants.cone_radius, constants.half_angle)?;
        let dim = domain.dim();
        let m0 = finest_level(constants.cone_radius, points.len(), dim)?;
        let basis = PolyBasis::new(dim, constants.degree)?;
        let index = PointIndex::new(points, domain.bounding_box());

        let threshold = constants.c0() * constants.cone_radius;
        let (lo, hi) = domain.bounding_box();
        let longest = lo.iter().zip(hi).map(|(l, h)| h - l).fold(0.0, f64::max);
        let spacing = (constants.global_probe_factor * threshold)
            .max(longest / MAX_GLOBAL_PROBES.powf(1.0 / dim as f64));
        let global_covering = probe_max_distance(
            Region::Domain(&domain),
            Resolution::Spacing(spacing),
            |probe| index.nearest(points, probe).1,
            f64::INFINITY,
        )?
        .ok_or(Error::EmptyProbeSet)?;
        let scenario = if global_covering >= threshold {
            Scenario::Sparse
        } else {
            Scenario::Local
        };
        Ok(Self {
            domain,
            points: points.clone(),
            constants: constants.clone(),
            basis,
            index,
            global_covering,
            scenario,
            finest_level: m0,
            rhs_scale: 1.0,
        })
    }

    /// Breaks the reproduction constraints by negating their right-hand side.
    /// Only meant for checking that the verification suite catches such faults.
    #[doc(hidden)]
    pub fn inject_sign_fault(&mut self) {
        self.rhs_scale = -1.0;
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn points(&self) -> &PointCloud {
        &self.points
    }

    pub fn constants(&self) -> &AlgoConstants {
        &self.constants
    }

    pub fn basis(&self) -> &PolyBasis {
        &self.basis
    }

    pub fn global_covering(&self) -> f64 {
        self.global_covering
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn finest_level(&self) -> usize {
        self.finest_level
    }

    pub fn level_radius(&self, level: usize) -> f64 {
        self.constants.cone_radius * 0.5f64.powi(level as i32)
    }

    fn cone_points(&self, cone: &Cone) -> Vec<usize> {
        self.index
            .within(&self.points, cone.apex(), cone.radius())
            .into_iter()
            .filter(|&i| cone.contains(self.points.point(i)))
            .collect()
    }

    /// Probe estimate of the covering radius of the cone by the given points,
    /// stopping as soon as it exceeds `stop_above`.
    fn local_covering(&self, cone: &Cone, indices: &[usize], stop_above: f64) -> f64 {
        if indices.is_empty() {
            return f64::INFINITY;
        }
        let pts: Vec<&[f64]> = indices.iter().map(|&i| self.points.point(i)).collect();
        let spacing = self.constants.local_probe_factor * self.constants.c1 * cone.radius();
        probe_max_distance(
            Region::Cone(cone),
            Resolution::Spacing(spacing),
            |probe| brute_nearest(&pts, probe),
            stop_above,
        )
        .ok()
        .flatten()
        .unwrap_or(0.0)
    }

    /// Whether the local covering condition holds for `x` at `level`.
    pub fn level_condition(&self, x: &[f64], level: usize) -> Result<bool> {
        let rho = self.level_radius(level);
        let cone = self.domain.cone_at(x, rho)?;
        let indices = self.cone_points(&cone);
        let bound = self.constants.c1 * rho;
        Ok(self.local_covering(&cone, &indices, bound) <= bound)
    }

    /// The largest level in `0..=m0` whose cone is covered finely enough, or 0.
    pub fn select_level(&self, x: &[f64]) -> Result<LocalSelection> {
        check_dim(self.domain.dim(), x.len())?;
        if !self.domain.is_inside(x) {
            return Err(Error::OutsideDomain(x.to_vec()));
        }
        for level in (1..=self.finest_level).rev() {
            let rho = self.level_radius(level);
            let cone = self.domain.cone_at(x, rho)?;
            let indices = self.cone_points(&cone);
            if indices.is_empty() {
                continue;
            }
            let bound = self.constants.c1 * rho;
            let h = self.local_covering(&cone, &indices, bound);
            if h <= bound {
                return Ok(LocalSelection {
                    x: x.to_vec(),
                    level,
                    radius: rho,
                    cone,
                    indices,
                    local_covering: Some(h),
                });
            }
        }
        let rho = self.level_radius(0);
        let cone = self.domain.cone_at(x, rho)?;
        let indices = self.cone_points(&cone);
        Ok(LocalSelection {
            x: x.to_vec(),
            level: 0,
            radius: rho,
            cone,
            indices,
            local_covering: None,
        })
    }

    /// Recovery weights at `x`. Failed local solves are retried on the next
    /// larger cone; at level 0 the nearest sample is used instead.
    pub fn weights_at(&self, x: &[f64]) -> Result<LocalWeights> {
        check_dim(self.domain.dim(), x.len())?;
        if !self.domain.is_inside(x) {
            return Err(Error::OutsideDomain(x.to_vec()));
        }
        if self.scenario == Scenario::Sparse {
            return Ok(LocalWeights::zero());
        }
        let selection = self.select_level(x)?;
        let mut level = selection.level;
        let mut cone = selection.cone;
        let mut indices = selection.indices;
        let mut covering = selection.local_covering;
        let mut retries = 0u32;
        loop {
            let support = match self.constants.support {
                SupportRule::ConeRadius => cone.radius(),
                SupportRule::CoveringMultiple(f) => {
                    let h = covering
                        .unwrap_or_else(|| self.local_covering(&cone, &indices, f64::INFINITY));
                    f * h
                }
            };
            if support.is_finite() && support > 0.0 {
                let local = self.points.select(&indices);
                match solve_mls_with_rhs(x, &local, &self.basis, support, self.rhs_scale) {
                    Ok(w) => {
                        return Ok(LocalWeights {
                            indices,
                            weights: w.weights,
                            level,
                            lebesgue_sum: w.lebesgue_sum,
                            retries,
                            nearest_fallback: false,
                        })
                    }
                    Err(Error::InsufficientPoints { .. }) | Err(Error::SolveFailure(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            if level == 0 {
                break;
            }
            retries += 1;
            level -= 1;
            cone = self.domain.cone_at(x, self.level_radius(level))?;
            indices = self.cone_points(&cone);
            covering = None;
        }
        let (nearest, _) = self.index.nearest(&self.points, x);
        Ok(LocalWeights {
            indices: vec![nearest],
            weights: vec![1.0],
            level: 0,
            lebesgue_sum: 1.0,
            retries,
            nearest_fallback: true,
        })
    }

    /// Weights at every probe, computed in parallel; order matches the probes.
    pub fn weights_on(&self, probes: &PointCloud) -> Result<Vec<LocalWeights>> {
        check_dim(self.domain.dim(), probes.dim())?;
        (0..probes.len())
            .into_par_iter()
            .map(|i| self.weights_at(probes.point(i)))
            .collect()
    }

    /// Attaches sample values to the plan.
    pub fn with_samples(self, samples: Vec<f64>) -> Result<RecoveryOperator> {
        RecoveryOperator::from_plan(self, samples)
    }
}

/// The recovery operator for one sampled function.
#[derive(Debug, Clone)]
pub struct RecoveryOperator {
    plan: RecoveryPlan,
    samples: Vec<f64>,
}

impl RecoveryOperator {
    pub fn build(
        domain: &Domain,
        points: &PointCloud,
        samples: Vec<f64>,
        constants: &AlgoConstants,
    ) -> Result<Self> {
        if samples.len() != points.len() {
            return Err(Error::LengthMismatch { expected: points.len(), got: samples.len() });
        }
        Self::from_plan(RecoveryPlan::build(domain, points, constants)?, samples)
    }

    pub fn from_plan(plan: RecoveryPlan, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != plan.points.len() {
            return Err(Error::LengthMismatch {
                expected: plan.points.len(),
                got: samples.len(),
            });
        }
        Ok(Self { plan, samples })
    }

    pub fn plan(&self) -> &RecoveryPlan {
        &self.plan
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn scenario(&self) -> Scenario {
        self.plan.scenario
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(self.plan.weights_at(x)?.apply(&self.samples))
    }

    /// Values at every probe, with the total fallback count.
    pub fn evaluate_with_fallbacks(&self, probes: &PointCloud) -> Result<(Vec<f64>, u64)> {
        let weights = self.plan.weights_on(probes)?;
        let fallbacks = weights.iter().map(LocalWeights::fallback_count).sum();
        Ok((weights.iter().map(|w| w.apply(&self.samples)).collect(), fallbacks))
    }

    pub fn evaluate_on_grid(&self, probes: &PointCloud) -> Result<Vec<f64>> {
        Ok(self.evaluate_with_fallbacks(probes)?.0)
    }
}
