//! Error sweeps over geometric schedules of sample sizes, rate fits, and the
//! distributional checks on covering radii, local cone radii and bump coverage.
//!
//! The sup over the Sobolev unit ball is replaced by a max over a finite
//! dictionary of test functions, each scaled to unit estimated `W_p^s` norm.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{covering_radius, Domain, DomainKind, PointCloud, Region, Resolution};
use crate::integration::{quadrature_weights, APPROX_STREAM, RESIDUAL_STREAM};
use crate::recovery::{min_budget, AlgoConstants, RecoveryPlan, Scenario};
use crate::sampling::{derive_seed, quasi_uniform_points, sample_iid_uniform};
use crate::testbed::{
    coupon_bump_count, default_error_resolution, default_quadrature_resolution, format_exponent,
    lq_norm_of_values, make_bump_family, parse_exponent, random_signs, reference_grid,
    sobolev_norm_estimate, FunctionKind, TestFunction, DEFAULT_BUMP_RADIUS_FACTOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    /// Max over the dictionary of the mean error over replications.
    MonteCarlo,
    /// Mean over replications of the max error over the dictionary.
    Uniform,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::MonteCarlo => "monte-carlo",
            Criterion::Uniform => "uniform",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "monte-carlo" | "mc" => Ok(Criterion::MonteCarlo),
            "uniform" => Ok(Criterion::Uniform),
            other => Err(Error::Config(format!("unknown criterion '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Approximation,
    IntegrationCv,
    IntegrationApprox,
    IntegrationMc,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Approximation => "approximation",
            Task::IntegrationCv => "integration-cv",
            Task::IntegrationApprox => "integration-approx",
            Task::IntegrationMc => "integration-mc",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "approximation" => Ok(Task::Approximation),
            "integration-cv" => Ok(Task::IntegrationCv),
            "integration-approx" => Ok(Task::IntegrationApprox),
            "integration-mc" => Ok(Task::IntegrationMc),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }

    fn is_integration(self) -> bool {
        self != Task::Approximation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointSource {
    Iid,
    QuasiUniform,
}

impl PointSource {
    pub fn name(self) -> &'static str {
        match self {
            PointSource::Iid => "iid",
            PointSource::QuasiUniform => "quasi-uniform",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(PointSource::Iid),
            "quasi-uniform" | "grid" => Ok(PointSource::QuasiUniform),
            other => Err(Error::Config(format!("unknown point source '{other}'"))),
        }
    }
}

/// Kinds of dictionary members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Member {
    Constant,
    /// Every monomial of degree at most `s`.
    Polynomials,
    Gaussian,
    Sine,
    /// `|x - c|^beta` with `beta = s - d/p + 0.1`.
    Singular,
    /// `floor(n / (2 ln n))` bumps with random signs.
    CouponBumps,
    /// `max(1, n / 4)` bumps, all positive.
    DenseBumps,
}

impl Member {
    pub fn name(self) -> &'static str {
        match self {
            Member::Constant => "const",
            Member::Polynomials => "poly",
            Member::Gaussian => "gauss",
            Member::Sine => "sine",
            Member::Singular => "singular",
            Member::CouponBumps => "bumps-coupon",
            Member::DenseBumps => "bumps-dense",
        }
    }

    fn from_name(s: &str) -> Result<Vec<Self>> {
        Ok(match s {
            "const" => vec![Member::Constant],
            "poly" => vec![Member::Polynomials],
            "gauss" => vec![Member::Gaussian],
            "sine" => vec![Member::Sine],
            "singular" => vec![Member::Singular],
            "bumps-coupon" => vec![Member::CouponBumps],
            "bumps-dense" => vec![Member::DenseBumps],
            "smooth" => SMOOTH_DICTIONARY.to_vec(),
            "full" => FULL_DICTIONARY.to_vec(),
            other => return Err(Error::Config(format!("unknown dictionary member '{other}'"))),
        })
    }
}

/// Infinitely differentiable members.
pub const SMOOTH_DICTIONARY: [Member; 4] =
    [Member::Gaussian, Member::Sine, Member::CouponBumps, Member::DenseBumps];

pub const FULL_DICTIONARY: [Member; 5] = [
    Member::Gaussian,
    Member::Sine,
    Member::Singular,
    Member::CouponBumps,
    Member::DenseBumps,
];

/// Which `c1` the recovery operator uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum C1Choice {
    /// `0.375 c_theta`.
    Default,
    /// `0.75 c_theta`.
    Max,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub domain: DomainKind,
    pub dim: usize,
    pub s: usize,
    pub p: f64,
    pub q: f64,
    pub ns: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub criterion: Criterion,
    pub task: Task,
    pub source: PointSource,
    pub dictionary: Vec<Member>,
    pub cone_radius: Option<f64>,
    pub half_angle: Option<f64>,
    pub c1: C1Choice,
    pub error_resolution: Option<usize>,
    pub quadrature_resolution: Option<usize>,
}

pub fn domain_kind(name: &str) -> Result<DomainKind> {
    match name {
        "cube" => Ok(DomainKind::Cube),
        "ball" => Ok(DomainKind::Ball),
        "lshape" | "l-shape" => Ok(DomainKind::LShape),
        other => Err(Error::Config(format!("unknown domain '{other}'"))),
    }
}

/// Parses `64, 128, 256` or the inclusive power-of-two range `2^6..2^12`.
pub fn parse_schedule(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let exp = |t: &str| -> Result<u32> {
            t.trim()
                .strip_prefix("2^")
                .and_then(|e| e.parse().ok())
                .filter(|&e: &u32| e < 63)
                .ok_or_else(|| Error::Config(format!("bad schedule bound '{t}'")))
        };
        let (lo, hi) = (exp(a)?, exp(b)?);
        if lo > hi {
            return Err(Error::Config(format!("empty schedule '{s}'")));
        }
        return Ok((lo..=hi).map(|e| 1usize << e).collect());
    }
    s.split(',')
        .map(|t| {
            let t = t.trim();
            match t.strip_prefix("2^") {
                Some(e) => e.parse::<u32>().ok().filter(|&e| e < 63).map(|e| 1usize << e),
                None => t.parse().ok(),
            }
            .ok_or_else(|| Error::Config(format!("bad sample size '{t}'")))
        })
        .collect()
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn short_digest(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

impl ExperimentConfig {
    /// A sweep with default constants, the full dictionary and the given schedule.
    pub fn new(domain: DomainKind, dim: usize, s: usize, p: f64, q: f64, ns: Vec<usize>) -> Self {
        Self {
            domain,
            dim,
            s,
            p,
            q,
            ns,
            replications: 10,
            seed: 1,
            criterion: Criterion::MonteCarlo,
            task: Task::Approximation,
            source: PointSource::Iid,
            dictionary: FULL_DICTIONARY.to_vec(),
            cone_radius: None,
            half_angle: None,
            c1: C1Choice::Default,
            error_resolution: None,
            quadrature_resolution: None,
        }
    }

    /// Reads the `key = value` format; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            let key = k.trim().to_string();
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
        }
        let mut take = |key: &str| map.remove(key);
        let required = |v: Option<String>, key: &str| {
            v.ok_or_else(|| Error::Config(format!("missing key '{key}'")))
        };
        let num = |v: &str, key: &str| -> Result<f64> {
            v.parse().map_err(|_| Error::Config(format!("'{key}': cannot parse '{v}'")))
        };
        let int = |v: &str, key: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::Config(format!("'{key}': cannot parse '{v}'")))
        };
        let exponent = |v: &str, key: &str| -> Result<f64> {
            parse_exponent(v).map_err(|e| Error::Config(format!("'{key}': {e}")))
        };

        let domain = domain_kind(&take("domain").unwrap_or_else(|| "cube".into()))?;
        let dim = int(&required(take("d"), "d")?, "d")?;
        let s = int(&required(take("s"), "s")?, "s")?;
        let p = exponent(&required(take("p"), "p")?, "p")?;
        let q = match take("q") {
            Some(v) => exponent(&v, "q")?,
            None => p,
        };
        let ns = parse_schedule(&required(take("n"), "n")?)?;
        let mut cfg = Self::new(domain, dim, s, p, q, ns);
        if let Some(v) = take("replications") {
            cfg.replications = int(&v, "replications")?;
        }
        if let Some(v) = take("seed") {
            cfg.seed = v.parse().map_err(|_| Error::Config(format!("'seed': cannot parse '{v}'")))?;
        }
        if let Some(v) = take("criterion") {
            cfg.criterion = Criterion::from_name(&v)?;
        }
        if let Some(v) = take("task") {
            cfg.task = Task::from_name(&v)?;
        }
        if let Some(v) = take("source") {
            cfg.source = PointSource::from_name(&v)?;
        }
        if let Some(v) = take("dictionary") {
            let mut members = Vec::new();
            for part in v.split(',') {
                for m in Member::from_name(part.trim())? {
                    if !members.contains(&m) {
                        members.push(m);
                    }
                }
            }
            cfg.dictionary = members;
        }
        if let Some(v) = take("cone_radius") {
            cfg.cone_radius = Some(num(&v, "cone_radius")?);
        }
        if let Some(v) = take("half_angle") {
            cfg.half_angle = Some(num(&v, "half_angle")?);
        }
        if let Some(v) = take("c1") {
            cfg.c1 = match v.as_str() {
                "default" => C1Choice::Default,
                "max" => C1Choice::Max,
                other => C1Choice::Value(num(other, "c1")?),
            };
        }
        if let Some(v) = take("error_resolution") {
            cfg.error_resolution = Some(int(&v, "error_resolution")?);
        }
        if let Some(v) = take("quadrature_resolution") {
            cfg.quadrature_resolution = Some(int(&v, "quadrature_resolution")?);
        }
        if let Some(k) = map.keys().next() {
            return Err(Error::Config(format!("unknown key '{k}'")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text: every key, fixed order, round-trips through `parse`.
    pub fn canonical(&self) -> String {
        let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_else(|| "default".into());
        let opt_int = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_else(|| "default".into());
        let ns: Vec<String> = self.ns.iter().map(|n| n.to_string()).collect();
        let dict: Vec<&str> = self.dictionary.iter().map(|m| m.name()).collect();
        let c1 = match self.c1 {
            C1Choice::Default => "default".into(),
            C1Choice::Max => "max".into(),
            C1Choice::Value(v) => format_f64(v),
        };
        let mut lines = vec![
            format!("domain = {}", self.domain.name()),
            format!("d = {}", self.dim),
            format!("s = {}", self.s),
            format!("p = {}", format_exponent(self.p)),
            format!("q = {}", format_exponent(self.q)),
            format!("n = {}", ns.join(", ")),
            format!("replications = {}", self.replications),
            format!("seed = {}", self.seed),
            format!("criterion = {}", self.criterion.name()),
            format!("task = {}", self.task.name()),
            format!("source = {}", self.source.name()),
            format!("dictionary = {}", dict.join(", ")),
            format!("c1 = {c1}"),
        ];
        // Unset optional values are omitted so the text parses back unchanged.
        for (key, value) in [
            ("cone_radius", opt(self.cone_radius)),
            ("half_angle", opt(self.half_angle)),
            ("error_resolution", opt_int(self.error_resolution)),
            ("quadrature_resolution", opt_int(self.quadrature_resolution)),
        ] {
            if value != "default" {
                lines.push(format!("{key} = {value}"));
            }
        }
        lines.join("\n") + "\n"
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        short_digest(&self.canonical())
    }

    pub fn base_domain(&self) -> Result<Domain> {
        Domain::from_name(self.domain.name(), self.dim)
    }

    pub fn constants(&self) -> Result<AlgoConstants> {
        let domain = self.base_domain()?;
        let mut c = AlgoConstants::for_domain(&domain, self.s);
        if let Some(r) = self.cone_radius {
            c.cone_radius = r;
        }
        if let Some(t) = self.half_angle {
            c.half_angle = t;
            c.c1 = 0.375 * c.c_theta();
        }
        match self.c1 {
            C1Choice::Default => {}
            C1Choice::Max => c.c1 = c.c1_max(),
            C1Choice::Value(v) => c.c1 = v,
        }
        c.validate()?;
        Ok(c)
    }

    /// The domain with the configured cone parameters.
    pub fn domain(&self) -> Result<Domain> {
        let c = self.constants()?;
        self.base_domain()?.with_cone(c.cone_radius, c.half_angle)
    }

    pub fn error_resolution(&self) -> usize {
        self.error_resolution.unwrap_or_else(|| default_error_resolution(self.dim))
    }

    pub fn quadrature_resolution(&self) -> usize {
        self.quadrature_resolution
            .unwrap_or_else(|| default_quadrature_resolution(self.dim))
    }

    /// Smallest admissible budget for the task.
    pub fn min_budget(&self) -> Result<usize> {
        let c = self.constants()?;
        let base = min_budget(c.cone_radius, self.dim);
        Ok(match self.task {
            Task::IntegrationCv => 2 * base,
            Task::IntegrationMc => 1,
            _ => base,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        if self.s == 0 {
            return Err(Error::Config("s must be positive".into()));
        }
        let d = self.dim as f64;
        let embeds = self.s as f64 > d / self.p || (self.p == 1.0 && self.s == self.dim);
        if !embeds {
            return Err(Error::Config(format!(
                "need s > d/p or p = 1 and s = d, got s = {}, d = {}, p = {}",
                self.s,
                self.dim,
                format_exponent(self.p)
            )));
        }
        if self.ns.is_empty() {
            return Err(Error::Config("empty n schedule".into()));
        }
        if self.ns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n schedule must be strictly increasing".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.dictionary.is_empty() {
            return Err(Error::Config("empty dictionary".into()));
        }
        if self.source == PointSource::QuasiUniform && self.task.is_integration() {
            return Err(Error::Config("quasi-uniform points are only supported for approximation".into()));
        }
        if self.task.is_integration() && self.dictionary.contains(&Member::Singular) && self.domain != DomainKind::Cube {
            return Err(Error::Config("the singular member has a known integral only on the cube".into()));
        }
        if let Some(r) = self.error_resolution {
            if r == 0 {
                return Err(Error::Config("error_resolution must be positive".into()));
            }
        }
        self.domain().map_err(|e| Error::Config(e.to_string()))?;
        let min = self.min_budget().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(&n) = self.ns.iter().find(|&&n| n < min) {
            return Err(Error::BudgetTooSmall { n, min });
        }
        Ok(())
    }
}

/// Abscissa of a rate fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Abscissa {
    N,
    NOverLogN,
}

impl Abscissa {
    pub fn name(self) -> &'static str {
        match self {
            Abscissa::N => "n",
            Abscissa::NOverLogN => "n/log(n)",
        }
    }

    pub fn value(self, n: f64) -> f64 {
        match self {
            Abscissa::N => n,
            Abscissa::NOverLogN => n / n.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoreticalRate {
    pub exponent: f64,
    pub abscissa: Abscissa,
}

fn inv(p: f64) -> f64 {
    1.0 / p
}

/// Exponent and abscissa of the asymptotic error order for a sweep.
pub fn theoretical_rate(
    task: Task,
    criterion: Criterion,
    source: PointSource,
    dim: usize,
    s: usize,
    p: f64,
    q: f64,
) -> TheoreticalRate {
    let base = -(s as f64) / dim as f64;
    let log_if = |cond: bool| {
        if cond && source == PointSource::Iid {
            Abscissa::NOverLogN
        } else {
            Abscissa::N
        }
    };
    match task {
        Task::Approximation => match criterion {
            Criterion::MonteCarlo => TheoreticalRate {
                exponent: base + (inv(p) - inv(q)).max(0.0),
                abscissa: log_if(p.is_infinite() && q.is_infinite()),
            },
            Criterion::Uniform if q >= p => TheoreticalRate {
                exponent: base + inv(p) - inv(q),
                abscissa: log_if(true),
            },
            Criterion::Uniform => TheoreticalRate { exponent: base, abscissa: Abscissa::N },
        },
        Task::IntegrationCv => TheoreticalRate {
            exponent: base + (inv(p) - 0.5).max(0.0) - 0.5,
            abscissa: Abscissa::N,
        },
        Task::IntegrationApprox => TheoreticalRate {
            exponent: base,
            abscissa: log_if(p == 1.0),
        },
        Task::IntegrationMc => TheoreticalRate { exponent: -0.5, abscissa: Abscissa::N },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub abscissa: Abscissa,
    /// Points dropped because their error was not positive.
    pub dropped: usize,
}

/// Least squares line through `(log abscissa(n), log error)`.
pub fn fit_rate(ns: &[usize], errors: &[f64], abscissa: Abscissa) -> Result<RateFit> {
    if ns.len() != errors.len() {
        return Err(Error::LengthMismatch { expected: ns.len(), got: errors.len() });
    }
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > 0.0 && e.is_finite())
        .map(|(&n, &e)| (abscissa.value(n as f64).ln(), e.ln()))
        .collect();
    let dropped = ns.len() - pts.len();
    if pts.len() < 3 {
        return Err(Error::TooFewPoints(pts.len()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(RateFit { slope, intercept, r_squared, abscissa, dropped })
}

/// One dictionary member at one sample size.
#[derive(Debug, Clone)]
pub struct DictionaryEntry {
    pub function: TestFunction,
    /// Exact integral, for integration tasks.
    pub integral: Option<f64>,
    /// Values on the error grid, for approximation.
    pub grid_values: Vec<f64>,
}

/// Members that do not depend on `n`, normalized once per sweep.
struct FixedMembers {
    functions: Vec<TestFunction>,
}

fn singular_center(domain: &Domain) -> Vec<f64> {
    const OFFSET: [f64; 3] = [-0.0858, -0.1817, 0.0718];
    domain.star_pieces()[0]
        .center
        .iter()
        .enumerate()
        .map(|(i, c)| c + OFFSET[i % 3])
        .collect()
}

fn normalize(f: TestFunction, domain: &Domain, p: f64, s: usize, resolution: usize) -> Result<TestFunction> {
    let norm = sobolev_norm_estimate(&f, domain, p, s, resolution)?.norm;
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidParameter(format!("{} has Sobolev norm {norm}", f.id)));
    }
    Ok(f.scaled(1.0 / norm))
}

impl FixedMembers {
    fn build(cfg: &ExperimentConfig, domain: &Domain) -> Result<Self> {
        let dim = cfg.dim;
        let res = cfg.error_resolution();
        let mut functions = Vec::new();
        for &m in &cfg.dictionary {
            let raw: Vec<TestFunction> = match m {
                Member::Constant => vec![TestFunction::new("const", dim, FunctionKind::Constant(1.0))],
                Member::Polynomials => {
                    let basis = crate::mls::PolyBasis::new(dim, cfg.s)?;
                    basis
                        .exponents()
                        .iter()
                        .map(|a| {
                            let tag: Vec<String> = a.iter().map(|e| e.to_string()).collect();
                            TestFunction::new(format!("mono-{}", tag.join("-")), dim, FunctionKind::Monomial(a.clone()))
                        })
                        .collect()
                }
                Member::Gaussian => vec![TestFunction::new(
                    "gauss",
                    dim,
                    FunctionKind::Gaussian { center: domain.star_pieces()[0].center.clone(), width: 0.2 },
                )],
                Member::Sine => vec![TestFunction::new(
                    "sine",
                    dim,
                    FunctionKind::SineProduct {
                        frequencies: vec![1.0; dim],
                        phases: (0..dim).map(|i| 0.3 + 0.2 * i as f64).collect(),
                    },
                )],
                Member::Singular => {
                    let exponent = cfg.s as f64 - dim as f64 / cfg.p + 0.1;
                    vec![TestFunction::new(
                        "singular",
                        dim,
                        FunctionKind::Singular { center: singular_center(domain), exponent },
                    )]
                }
                Member::CouponBumps | Member::DenseBumps => Vec::new(),
            };
            for f in raw {
                functions.push(normalize(f, domain, cfg.p, cfg.s, res)?);
            }
        }
        Ok(Self { functions })
    }
}

/// Bump counts of the `n`-dependent members.
pub fn bump_counts(member: Member, n: usize) -> Option<usize> {
    match member {
        Member::CouponBumps => Some(coupon_bump_count(n)),
        Member::DenseBumps => Some((n / 4).max(1)),
        _ => None,
    }
}

fn dictionary_at(
    cfg: &ExperimentConfig,
    domain: &Domain,
    fixed: &FixedMembers,
    n: usize,
    grid: Option<&PointCloud>,
) -> Result<Vec<DictionaryEntry>> {
    let mut functions = fixed.functions.clone();
    for &m in &cfg.dictionary {
        let Some(count) = bump_counts(m, n) else { continue };
        let signs = match m {
            Member::CouponBumps => random_signs(count, derive_seed(cfg.seed, &[0xb0, n as u64])),
            _ => vec![1.0; count],
        };
        let family = Arc::new(make_bump_family(domain, count, &signs, cfg.s, DEFAULT_BUMP_RADIUS_FACTOR)?);
        let norm = family.sobolev_norm(cfg.p);
        functions.push(family.as_function(format!("{}-{count}", m.name())).scaled(1.0 / norm));
    }
    functions
        .into_iter()
        .map(|function| {
            let integral = if cfg.task.is_integration() {
                Some(function.integral(domain).ok_or_else(|| {
                    Error::Config(format!("no exact integral of {} on {}", function.id, domain.id()))
                })?)
            } else {
                None
            };
            let grid_values = grid.map(|g| function.samples(g)).unwrap_or_default();
            Ok(DictionaryEntry { function, integral, grid_values })
        })
        .collect()
}

/// Error of one dictionary member for one point set.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub n: usize,
    pub rep: usize,
    pub function_id: String,
    pub error: f64,
    /// 1 or 2, or 0 when no approximant was built.
    pub scenario: u8,
    pub fallback_count: u64,
}

/// Seed of replication `rep` at schedule position `n_index`.
pub fn cell_seed(base: u64, n_index: usize, rep: usize) -> u64 {
    derive_seed(base, &[n_index as u64, rep as u64])
}

fn run_cell(
    cfg: &ExperimentConfig,
    domain: &Domain,
    constants: &AlgoConstants,
    dict: &[DictionaryEntry],
    n: usize,
    seed: u64,
    rep: usize,
) -> Result<Vec<CellRecord>> {
    let record = |f: &DictionaryEntry, error: f64, scenario: u8, fallback_count: u64| CellRecord {
        n,
        rep,
        function_id: f.function.id.clone(),
        error,
        scenario,
        fallback_count,
    };
    let sample = |points: &PointCloud, f: &DictionaryEntry| -> Vec<f64> { f.function.samples(points) };
    match cfg.task {
        Task::Approximation => {
            let points = match cfg.source {
                PointSource::Iid => sample_iid_uniform(domain, n, seed)?,
                PointSource::QuasiUniform => quasi_uniform_points(domain, n)?,
            };
            let plan = RecoveryPlan::build(domain, &points.points, constants)?;
            let grid = reference_grid(domain, cfg.error_resolution())?;
            let scenario = plan.scenario().number();
            let weights = if plan.scenario() == Scenario::Local {
                Some(plan.weights_on(&grid.points)?)
            } else {
                None
            };
            let fallbacks = weights
                .as_ref()
                .map(|ws| ws.iter().map(|w| w.fallback_count()).sum())
                .unwrap_or(0);
            dict.iter()
                .map(|f| {
                    let diff: Vec<f64> = match &weights {
                        None => f.grid_values.clone(),
                        Some(ws) => {
                            let samples = sample(&points.points, f);
                            ws.iter().zip(&f.grid_values).map(|(w, v)| v - w.apply(&samples)).collect()
                        }
                    };
                    let error = lq_norm_of_values(&diff, grid.volume, cfg.q)?;
                    Ok(record(f, error, scenario, fallbacks))
                })
                .collect()
        }
        Task::IntegrationApprox | Task::IntegrationCv => {
            let n_approx = if cfg.task == Task::IntegrationCv { n / 2 } else { n };
            let points = sample_iid_uniform(domain, n_approx, derive_seed(seed, &[APPROX_STREAM]))?;
            let plan = RecoveryPlan::build(domain, &points.points, constants)?;
            let quad = quadrature_weights(&plan, cfg.quadrature_resolution())?;
            let mut fallbacks = quad.fallback_count;
            let residual = if cfg.task == Task::IntegrationCv {
                let n_mc = n - n_approx;
                let fresh = sample_iid_uniform(domain, n_mc, derive_seed(seed, &[RESIDUAL_STREAM]))?;
                let ws = plan.weights_on(&fresh.points)?;
                fallbacks += ws.iter().map(|w| w.fallback_count()).sum::<u64>();
                Some((fresh, ws))
            } else {
                None
            };
            let scenario = plan.scenario().number();
            dict.iter()
                .map(|f| {
                    let samples = sample(&points.points, f);
                    let mut value = quad.apply(&samples);
                    if let Some((fresh, ws)) = &residual {
                        let sum: f64 = fresh
                            .points
                            .iter()
                            .zip(ws)
                            .map(|(y, w)| f.function.eval(y) - w.apply(&samples))
                            .sum();
                        value += domain.volume() * sum / fresh.len() as f64;
                    }
                    let exact = f.integral.expect("integration entries carry integrals");
                    Ok(record(f, (value - exact).abs(), scenario, fallbacks))
                })
                .collect()
        }
        Task::IntegrationMc => {
            let points = sample_iid_uniform(domain, n, derive_seed(seed, &[RESIDUAL_STREAM]))?;
            dict.iter()
                .map(|f| {
                    let sum: f64 = sample(&points.points, f).iter().sum();
                    let value = domain.volume() * sum / n as f64;
                    let exact = f.integral.expect("integration entries carry integrals");
                    Ok(record(f, (value - exact).abs(), 0, 0))
                })
                .collect()
        }
    }
}

/// All cell records of a sweep, ordered by `(n, rep, dictionary position)`.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub config: ExperimentConfig,
    pub records: Vec<CellRecord>,
    /// Member ids per schedule position.
    pub dictionary: Vec<Vec<String>>,
}

/// Runs every `(n, replication)` cell; cells run in parallel and each
/// derives its stream from `(seed, n index, replication)`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Sweep> {
    run_sweep_streaming(cfg, |_, _| Ok(()))
}

/// As [`run_sweep`], handing each finished sample size to `sink` before the next starts.
pub fn run_sweep_streaming<S>(cfg: &ExperimentConfig, mut sink: S) -> Result<Sweep>
where
    S: FnMut(usize, &[CellRecord]) -> Result<()>,
{
    cfg.validate()?;
    let domain = cfg.domain()?;
    let constants = cfg.constants()?;
    let fixed = FixedMembers::build(cfg, &domain)?;
    let grid = if cfg.task == Task::Approximation {
        Some(reference_grid(&domain, cfg.error_resolution())?)
    } else {
        None
    };
    let mut records = Vec::new();
    let mut dictionary = Vec::new();
    for (ni, &n) in cfg.ns.iter().enumerate() {
        let dict = dictionary_at(cfg, &domain, &fixed, n, grid.as_ref().map(|g| &g.points))?;
        dictionary.push(dict.iter().map(|e| e.function.id.clone()).collect());
        let cells: Vec<Vec<CellRecord>> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| run_cell(cfg, &domain, &constants, &dict, n, cell_seed(cfg.seed, ni, rep), rep))
            .collect::<Result<_>>()?;
        let batch: Vec<CellRecord> = cells.into_iter().flatten().collect();
        sink(n, &batch)?;
        records.extend(batch);
    }
    Ok(Sweep { config: cfg.clone(), records, dictionary })
}

pub const RECORD_CSV_HEADER: &str =
    "config_hash,task,criterion,d,s,p,q,n,rep,function_id,error,scenario,fallback_count";

/// One CSV row of a cell record.
pub fn record_csv_row(cfg: &ExperimentConfig, hash: &str, r: &CellRecord) -> String {
    format!(
        "{hash},{},{},{},{},{},{},{},{},{},{:.16e},{},{}",
        cfg.task.name(),
        cfg.criterion.name(),
        cfg.dim,
        cfg.s,
        format_exponent(cfg.p),
        format_exponent(cfg.q),
        r.n,
        r.rep,
        r.function_id,
        r.error,
        r.scenario,
        r.fallback_count
    )
}

/// Per-`n` statistics of the per-replication criterion values.
#[derive(Debug, Clone, PartialEq)]
pub struct NStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Member attaining the Monte Carlo max, or the most frequent per-replication max.
    pub worst_function: String,
    pub scenario1_count: usize,
    pub fallback_total: u64,
}

#[derive(Debug, Clone)]
pub struct RateReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub criterion: Criterion,
    pub rows: Vec<NStats>,
    pub fit_n: Option<RateFit>,
    pub fit_n_over_log_n: Option<RateFit>,
    pub theoretical: TheoreticalRate,
    pub dictionary: Vec<Vec<String>>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

impl Sweep {
    pub fn report(&self, criterion: Criterion) -> RateReport {
        let cfg = &self.config;
        let mut rows = Vec::new();
        for (ni, &n) in cfg.ns.iter().enumerate() {
            let ids = &self.dictionary[ni];
            let k = ids.len();
            let cell: Vec<&CellRecord> = self.records.iter().filter(|r| r.n == n).collect();
            // error[rep][member]
            let table: Vec<&[&CellRecord]> = cell.chunks(k).collect();
            let per_rep: Vec<f64>;
            let worst: String;
            match criterion {
                Criterion::MonteCarlo => {
                    let means: Vec<f64> = (0..k)
                        .map(|j| mean(&table.iter().map(|row| row[j].error).collect::<Vec<_>>()))
                        .collect();
                    let jmax = (0..k).fold(0, |b, j| if means[j] > means[b] { j } else { b });
                    per_rep = table.iter().map(|row| row[jmax].error).collect();
                    worst = ids[jmax].clone();
                }
                Criterion::Uniform => {
                    let mut counts = vec![0usize; k];
                    per_rep = table
                        .iter()
                        .map(|row| {
                            let jmax = (0..k).fold(0, |b, j| if row[j].error > row[b].error { j } else { b });
                            counts[jmax] += 1;
                            row[jmax].error
                        })
                        .collect();
                    let jmax = (0..k).fold(0, |b, j| if counts[j] > counts[b] { j } else { b });
                    worst = ids[jmax].clone();
                }
            }
            rows.push(NStats {
                n,
                mean: mean(&per_rep),
                std: sample_std(&per_rep),
                min: per_rep.iter().cloned().fold(f64::INFINITY, f64::min),
                max: per_rep.iter().cloned().fold(0.0, f64::max),
                worst_function: worst,
                scenario1_count: table.iter().filter(|row| row[0].scenario == 1).count(),
                fallback_total: table.iter().map(|row| row[0].fallback_count).sum(),
            });
        }
        let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
        let errors: Vec<f64> = rows.iter().map(|r| r.mean).collect();
        RateReport {
            config: cfg.clone(),
            config_hash: cfg.hash(),
            criterion,
            fit_n: fit_rate(&ns, &errors, Abscissa::N).ok(),
            fit_n_over_log_n: fit_rate(&ns, &errors, Abscissa::NOverLogN).ok(),
            theoretical: theoretical_rate(cfg.task, criterion, cfg.source, cfg.dim, cfg.s, cfg.p, cfg.q),
            rows,
            dictionary: self.dictionary.clone(),
        }
    }

    /// One row per `(n, function, replication)`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        let hash = self.config.hash();
        writeln!(out, "{RECORD_CSV_HEADER}").map_err(io)?;
        for r in &self.records {
            writeln!(out, "{}", record_csv_row(&self.config, &hash, r)).map_err(io)?;
        }
        Ok(())
    }
}

pub fn mc_error_curve(cfg: &ExperimentConfig) -> Result<RateReport> {
    if cfg.criterion != Criterion::MonteCarlo {
        return Err(Error::Config("mc_error_curve needs criterion = monte-carlo".into()));
    }
    Ok(run_sweep(cfg)?.report(Criterion::MonteCarlo))
}

pub fn uniform_error_curve(cfg: &ExperimentConfig) -> Result<RateReport> {
    if cfg.criterion != Criterion::Uniform {
        return Err(Error::Config("uniform_error_curve needs criterion = uniform".into()));
    }
    Ok(run_sweep(cfg)?.report(Criterion::Uniform))
}

impl RateReport {
    /// `mean error · (abscissa)^(-exponent)` per row, for bounded-ratio checks.
    pub fn normalized_errors(&self, exponent: f64, abscissa: Abscissa) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.mean * abscissa.value(r.n as f64).powf(-exponent))
            .collect()
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        writeln!(out, "# config_hash = {}", self.config_hash).map_err(io)?;
        for line in self.config.canonical().lines() {
            writeln!(out, "# {line}").map_err(io)?;
        }
        writeln!(out, "# error criterion: {}", self.criterion.name()).map_err(io)?;
        if self.config.task == Task::Approximation && self.config.q.is_infinite() {
            writeln!(out, "# L_inf errors are grid maxima and under-estimate the sup").map_err(io)?;
        }
        for (i, ids) in self.dictionary.iter().enumerate() {
            writeln!(out, "# dictionary at n = {}: {}", self.config.ns[i], ids.join(" ")).map_err(io)?;
        }
        writeln!(out, "n,mean,std,min,max,worst_function,scenario1,fallbacks").map_err(io)?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}",
                r.n, r.mean, r.std, r.min, r.max, r.worst_function, r.scenario1_count, r.fallback_total
            )
            .map_err(io)?;
        }
        writeln!(
            out,
            "theoretical exponent = {:.4} vs {}",
            self.theoretical.exponent,
            self.theoretical.abscissa.name()
        )
        .map_err(io)?;
        for fit in [self.fit_n, self.fit_n_over_log_n].into_iter().flatten() {
            writeln!(
                out,
                "fitted slope vs {} = {:.4} (intercept {:.4}, R^2 {:.4}, dropped {})",
                fit.abscissa.name(),
                fit.slope,
                fit.intercept,
                fit.r_squared,
                fit.dropped
            )
            .map_err(io)?;
        }
        if self.fit_n.is_none() {
            writeln!(out, "no fit: fewer than 3 positive errors").map_err(io)?;
        }
        Ok(())
    }
}

/// Local cone radius `r_n(y)` for one point set.
pub fn local_radius(plan: &RecoveryPlan, y: &[f64]) -> Result<f64> {
    Ok(plan.select_level(y)?.radius)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub n: usize,
    pub alpha: f64,
    /// Mean of `r_n(y)^alpha` over replications.
    pub moment: f64,
    /// `moment · n^(alpha/d)`.
    pub normalized: f64,
}

fn radii_table(
    domain: &Domain,
    constants: &AlgoConstants,
    y: &[f64],
    ns: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    ns.iter()
        .enumerate()
        .map(|(ni, &n)| {
            (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let pts = sample_iid_uniform(domain, n, cell_seed(seed, ni, rep))?;
                    let plan = RecoveryPlan::build(domain, &pts.points, constants)?;
                    local_radius(&plan, y)
                })
                .collect()
        })
        .collect()
}

/// Estimates `E r_n(y)^alpha` for every `n` and `alpha`.
pub fn radius_moment_check(
    domain: &Domain,
    constants: &AlgoConstants,
    y: &[f64],
    alphas: &[f64],
    ns: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<MomentRow>> {
    if alphas.iter().any(|&a| a < 0.0) {
        return Err(Error::InvalidParameter("moment exponents must be non-negative".into()));
    }
    let radii = radii_table(domain, constants, y, ns, reps, seed)?;
    let d = domain.dim() as f64;
    let mut rows = Vec::new();
    for (ni, &n) in ns.iter().enumerate() {
        for &alpha in alphas {
            let moment = mean(&radii[ni].iter().map(|r| r.powf(alpha)).collect::<Vec<_>>());
            rows.push(MomentRow { n, alpha, moment, normalized: moment * (n as f64).powf(alpha / d) });
        }
    }
    Ok(rows)
}

/// Ratio of the largest to the smallest value.
pub fn band_ratio(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailReport {
    pub n: usize,
    pub ts: Vec<f64>,
    /// Empirical `P(r_n(y) > t)`.
    pub frequencies: Vec<f64>,
    /// Envelope `exp(a - c t^d n)`.
    pub a: f64,
    pub c: f64,
    pub dominated: bool,
    pub monotone: bool,
}

impl TailReport {
    pub fn passes(&self) -> bool {
        self.c > 0.0 && self.dominated
    }

    pub fn envelope(&self, t: f64, dim: usize) -> f64 {
        (self.a - self.c * t.powi(dim as i32) * self.n as f64).exp()
    }
}

/// Empirical tail of `r_n(y)` with an exponential envelope in `t^d n`: the
/// rate `c` is the least squares slope over the positive frequencies and `a`
/// is the smallest intercept that dominates all of them.
pub fn tail_check(
    domain: &Domain,
    constants: &AlgoConstants,
    y: &[f64],
    ts: &[f64],
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<TailReport> {
    if ts.iter().any(|&t| t <= 0.0) {
        return Err(Error::InvalidParameter("tail thresholds must be positive".into()));
    }
    let radii = radii_table(domain, constants, y, &[n], reps, seed)?.remove(0);
    let frequencies: Vec<f64> = ts
        .iter()
        .map(|&t| radii.iter().filter(|&&r| r > t).count() as f64 / reps as f64)
        .collect();
    let dim = domain.dim();
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(&frequencies)
        .filter(|(_, &f)| f > 0.0)
        .map(|(&t, &f)| (t.powi(dim as i32) * n as f64, f.ln()))
        .collect();
    let (a, c) = if pts.len() >= 2 {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let c = if sxx > 0.0 { -sxy / sxx } else { f64::NAN };
        let a = pts.iter().map(|p| p.1 + c * p.0).fold(f64::NEG_INFINITY, f64::max);
        (a, c)
    } else {
        (f64::NAN, f64::NAN)
    };
    let mut report = TailReport {
        n,
        ts: ts.to_vec(),
        frequencies: frequencies.clone(),
        a,
        c,
        dominated: false,
        monotone: true,
    };
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by(|&i, &j| ts[i].total_cmp(&ts[j]));
    report.monotone = order.windows(2).all(|w| frequencies[w[0]] >= frequencies[w[1]]);
    report.dominated = c.is_finite()
        && ts
            .iter()
            .zip(&frequencies)
            .all(|(&t, &f)| f <= report.envelope(t, dim) * (1.0 + 1e-12));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// `mean / (log n / n)^(1/d)`.
    pub normalized: f64,
}

/// `E h_{P_n, Ω}` over replications, with probes spaced at a twentieth of `(log n / n)^(1/d)`.
pub fn covering_radius_law(domain: &Domain, ns: &[usize], reps: usize, seed: u64) -> Result<Vec<CoverageRow>> {
    let d = domain.dim() as f64;
    ns.iter()
        .enumerate()
        .map(|(ni, &n)| {
            let scale = ((n as f64).ln() / n as f64).powf(1.0 / d);
            let hs: Vec<f64> = (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let pts = sample_iid_uniform(domain, n, cell_seed(seed, ni, rep))?;
                    covering_radius(&pts.points, Region::Domain(domain), Resolution::Spacing(scale / 20.0))
                })
                .collect::<Result<_>>()?;
            let m = mean(&hs);
            Ok(CoverageRow { n, mean: m, std: sample_std(&hs), normalized: m / scale })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouponReport {
    pub n: usize,
    pub m: usize,
    pub reps: usize,
    pub scenario1_frequency: f64,
    pub missed_frequency: f64,
    /// Volume of one bump support over the domain volume.
    pub support_fraction: f64,
    pub exact_missed: f64,
    /// Binomial standard error of the missed frequency under the exact probability.
    pub sigma: f64,
}

impl CouponReport {
    pub fn within_sigmas(&self, k: f64) -> bool {
        (self.missed_frequency - self.exact_missed).abs() <= k * self.sigma
    }
}

/// `P(some of m disjoint supports of volume fraction v holds none of n iid points)`.
pub fn miss_probability(m: usize, v: f64, n: usize) -> f64 {
    let mut total = 0.0;
    let mut log_binom = 0.0f64;
    for k in 1..=m {
        log_binom += ((m - k + 1) as f64).ln() - (k as f64).ln();
        let base = 1.0 - k as f64 * v;
        if base <= 0.0 {
            break;
        }
        let term = (log_binom + n as f64 * base.ln()).exp();
        total += if k % 2 == 1 { term } else { -term };
    }
    total.clamp(0.0, 1.0)
}

/// `P(h_{P,(0,1)} >= t)` for `n` iid uniform points on the unit interval:
/// the two boundary gaps must stay below `t` and the `n - 1` inner gaps below `2t`.
pub fn sparse_probability_interval(n: usize, t: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    for b in 0..=2usize {
        let mut log_binom = 0.0f64;
        for k in 0..n {
            if k > 0 {
                log_binom += ((n - k) as f64).ln() - (k as f64).ln();
            }
            if b + k == 0 {
                continue;
            }
            let base = 1.0 - b as f64 * t - 2.0 * k as f64 * t;
            if base <= 0.0 {
                break;
            }
            let ways = [1.0, 2.0, 1.0][b];
            let term = ways * (log_binom + n as f64 * base.ln()).exp();
            total += if (b + k) % 2 == 1 { term } else { -term };
        }
    }
    total.clamp(0.0, 1.0)
}

/// Scenario frequency and missed-bump frequency with `m = floor(n / (2 ln n))` bumps.
pub fn coupon_check(domain: &Domain, constants: &AlgoConstants, n: usize, reps: usize, seed: u64) -> Result<CouponReport> {
    if n < 16 {
        return Err(Error::BudgetTooSmall { n, min: 16 });
    }
    coupon_check_with(domain, constants, n, coupon_bump_count(n), reps, seed)
}

/// As [`coupon_check`] with an explicit bump count.
pub fn coupon_check_with(
    domain: &Domain,
    constants: &AlgoConstants,
    n: usize,
    m: usize,
    reps: usize,
    seed: u64,
) -> Result<CouponReport> {
    let family = make_bump_family(domain, m, &vec![1.0; m], 1, DEFAULT_BUMP_RADIUS_FACTOR)?;
    let outcomes: Vec<(bool, bool)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let pts = sample_iid_uniform(domain, n, derive_seed(seed, &[rep as u64]))?;
            let plan = RecoveryPlan::build(domain, &pts.points, constants)?;
            Ok((plan.scenario() == Scenario::Sparse, family.misses_some_bump(&pts.points)))
        })
        .collect::<Result<_>>()?;
    let v = family.support_volume() / domain.volume();
    let exact = miss_probability(m, v, n);
    Ok(CouponReport {
        n,
        m,
        reps,
        scenario1_frequency: outcomes.iter().filter(|o| o.0).count() as f64 / reps as f64,
        missed_frequency: outcomes.iter().filter(|o| o.1).count() as f64 / reps as f64,
        support_fraction: v,
        exact_missed: exact,
        sigma: (exact * (1.0 - exact) / reps as f64).sqrt(),
    })
}

impl fmt::Display for CouponReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} m={} reps={} scenario1={:.4} missed={:.4} exact={:.4} sigma={:.4}",
            self.n, self.m, self.reps, self.scenario1_frequency, self.missed_frequency, self.exact_missed, self.sigma
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_cfg() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(DomainKind::Cube, 1, 1, 2.0, 2.0, vec![256, 512, 1024]);
        c.replications = 2;
        c.cone_radius = Some(0.5);
        c.c1 = C1Choice::Max;
        c.error_resolution = Some(1024);
        c
    }

    #[test]
    fn fit_rate_examples() {
        let ns = [64usize, 128, 256, 512];
        let errors: Vec<f64> = ns.iter().map(|&n| 5.0 / n as f64).collect();
        let fit = fit_rate(&ns, &errors, Abscissa::N).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(matches!(fit_rate(&ns[..2], &errors[..2], Abscissa::N), Err(Error::TooFewPoints(2))));
        let mut with_zero = errors.clone();
        with_zero[0] = 0.0;
        assert_eq!(fit_rate(&ns, &with_zero, Abscissa::N).unwrap().dropped, 1);
    }

    #[test]
    fn fit_rate_recovers_noisy_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ns: Vec<usize> = (6..=13).map(|e| 1usize << e).collect();
        for _ in 0..50 {
            let errors: Vec<f64> = ns
                .iter()
                .map(|&n| 2.0 * (n as f64).powf(-1.5) * (1.0 + rng.gen_range(-0.1..0.1)))
                .collect();
            let fit = fit_rate(&ns, &errors, Abscissa::N).unwrap();
            assert!((fit.slope + 1.5).abs() < 0.1);
        }
    }

    #[test]
    fn theoretical_rates() {
        let r = |t, c, p, q, s, d| theoretical_rate(t, c, PointSource::Iid, d, s, p, q);
        let inf = f64::INFINITY;
        assert_eq!(r(Task::Approximation, Criterion::MonteCarlo, 2.0, 2.0, 1, 1).exponent, -1.0);
        assert_eq!(r(Task::Approximation, Criterion::MonteCarlo, 2.0, inf, 1, 1).exponent, -0.5);
        let t = r(Task::Approximation, Criterion::MonteCarlo, inf, inf, 1, 1);
        assert_eq!((t.exponent, t.abscissa), (-1.0, Abscissa::NOverLogN));
        let t = r(Task::Approximation, Criterion::Uniform, 1.0, inf, 1, 1);
        assert_eq!((t.exponent, t.abscissa), (-1.0 + 1.0, Abscissa::NOverLogN));
        let t = r(Task::Approximation, Criterion::Uniform, inf, 1.0, 1, 1);
        assert_eq!((t.exponent, t.abscissa), (-1.0, Abscissa::N));
        assert_eq!(r(Task::IntegrationCv, Criterion::MonteCarlo, 2.0, 2.0, 1, 1).exponent, -1.5);
        assert_eq!(r(Task::IntegrationCv, Criterion::MonteCarlo, 1.0, 2.0, 1, 1).exponent, -1.0);
        assert_eq!(r(Task::IntegrationApprox, Criterion::Uniform, 2.0, 2.0, 2, 1).exponent, -2.0);
        let q = theoretical_rate(Task::Approximation, Criterion::Uniform, PointSource::QuasiUniform, 1, 1, 2.0, inf);
        assert_eq!(q.abscissa, Abscissa::N);
    }

    #[test]
    fn config_round_trip_and_hash() {
        let text = "# sweep\ndomain = cube\nd = 1\ns = 2\np = 2\nq = inf\nn = 2^6..2^8\nreplications = 3\nseed = 9\ndictionary = smooth, singular\nc1 = max\ncone_radius = 0.5\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.ns, vec![64, 128, 256]);
        assert!(cfg.q.is_infinite());
        assert_eq!(cfg.dictionary.len(), 5);
        let again = ExperimentConfig::parse(&cfg.canonical()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = 10;
        assert_ne!(other.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn config_errors() {
        let ok = "d = 1\ns = 1\np = 2\nn = 64, 128\n";
        assert!(ExperimentConfig::parse(ok).is_ok());
        for bad in [
            "d = 1\ns = 1\np = 2\nn = 128, 64\n",
            "d = 1\ns = 1\np = 2\nn = 64\nreplications = 0\n",
            "d = 1\ns = 1\np = 2\nn = 64\nbogus = 3\n",
            "d = 1\ns = 1\np = 0.5\nn = 64\n",
            "d = 1\ns = 1\nn = 64\n",
            "d = 1\ns = 1\np = 2\nn = 64\nd = 2\n",
            "d = 2\ns = 1\np = 2\nn = 64\n",
            "d = 1\ns = 1\np = 2\nn = 64\nc1 = 0.9\n",
            "just text\n",
        ] {
            assert!(ExperimentConfig::parse(bad).is_err(), "{bad}");
        }
        assert!(matches!(
            ExperimentConfig::parse("d = 1\ns = 1\np = 2\nn = 2, 64\n"),
            Err(Error::BudgetTooSmall { n: 2, min: 4 })
        ));
    }

    #[test]
    fn polynomial_dictionary_is_reproduced() {
        let mut cfg = line_cfg();
        cfg.dictionary = vec![Member::Polynomials];
        cfg.ns = vec![512, 1024, 2048];
        let report = mc_error_curve(&cfg).unwrap();
        for row in &report.rows {
            assert_eq!(row.scenario1_count, 0);
            assert!(row.mean < 1e-7, "{row:?}");
        }
    }

    #[test]
    fn criteria_are_ordered() {
        let cfg = line_cfg();
        let sweep = run_sweep(&cfg).unwrap();
        let mc = sweep.report(Criterion::MonteCarlo);
        let un = sweep.report(Criterion::Uniform);
        for (a, b) in mc.rows.iter().zip(&un.rows) {
            assert!(b.mean >= a.mean);
        }
    }

    #[test]
    fn single_function_criteria_coincide() {
        let mut cfg = line_cfg();
        cfg.dictionary = vec![Member::Gaussian];
        let sweep = run_sweep(&cfg).unwrap();
        assert_eq!(sweep.report(Criterion::MonteCarlo).rows, sweep.report(Criterion::Uniform).rows);
    }

    #[test]
    fn sweeps_are_deterministic() {
        let cfg = line_cfg();
        let mut a = Vec::new();
        let mut b = Vec::new();
        run_sweep(&cfg).unwrap().write_csv(&mut a).unwrap();
        run_sweep(&cfg).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with(&cfg.hash()));
    }

    #[test]
    fn integration_cells_match_direct_estimates() {
        let mut cfg = line_cfg();
        cfg.task = Task::IntegrationCv;
        cfg.dictionary = vec![Member::Gaussian];
        cfg.ns = vec![512, 1024, 2048];
        cfg.replications = 1;
        let sweep = run_sweep(&cfg).unwrap();
        let domain = cfg.domain().unwrap();
        let fixed = FixedMembers::build(&cfg, &domain).unwrap();
        let f = &fixed.functions[0];
        let settings = crate::integration::IntegrationSettings {
            constants: cfg.constants().unwrap(),
            quadrature_resolution: cfg.quadrature_resolution(),
        };
        let est = crate::integration::integrate_cv(&|x: &[f64]| f.eval(x), &domain, 1024, cell_seed(cfg.seed, 1, 0), &settings)
            .unwrap();
        let exact = f.integral(&domain).unwrap();
        let rec = &sweep.records[1];
        assert_eq!(rec.n, 1024);
        assert!(((est.value - exact).abs() - rec.error).abs() < 1e-14);
    }

    #[test]
    fn miss_probability_oracles() {
        // One support: (1 - v)^n.
        assert!((miss_probability(1, 0.01, 300) - 0.99f64.powi(300)).abs() < 1e-15);
        // Two halves of the interval: P(all in one half) summed.
        let p = miss_probability(2, 0.5, 5);
        assert!((p - 2.0 * 0.5f64.powi(5)).abs() < 1e-15);
        // Monte Carlo check of a small case.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (m, v, n) = (5usize, 0.1, 20usize);
        let trials = 200_000;
        let hits = (0..trials)
            .filter(|_| {
                let mut hit = [false; 5];
                for _ in 0..n {
                    let u: f64 = rng.gen();
                    let k = (u / v) as usize;
                    if k < m {
                        hit[k] = true;
                    }
                }
                hit.iter().any(|h| !h)
            })
            .count() as f64
            / trials as f64;
        let exact = miss_probability(m, v, n);
        assert!((hits - exact).abs() < 4.0 * (exact * (1.0 - exact) / trials as f64).sqrt());
    }

    #[test]
    fn sparse_probability_oracle() {
        // One point: h = max(x, 1 - x) >= t always when t <= 1/2.
        assert!((sparse_probability_interval(1, 0.3) - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, t) = (12usize, 0.06);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| {
                let mut x: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
                x.sort_by(f64::total_cmp);
                let mut h = x[0].max(1.0 - x[n - 1]);
                for w in x.windows(2) {
                    h = h.max((w[1] - w[0]) / 2.0);
                }
                h >= t
            })
            .count() as f64
            / trials as f64;
        let exact = sparse_probability_interval(n, t);
        assert!((hits - exact).abs() < 4.0 * (exact * (1.0 - exact) / trials as f64).sqrt() + 1e-12);
    }

    #[test]
    fn moment_and_tail_examples() {
        let d = Domain::unit_cube(1).unwrap();
        let c = AlgoConstants::for_domain(&d, 1);
        let rows = radius_moment_check(&d, &c, &[0.5], &[0.0, 1.0], &[64, 256], 10, 4).unwrap();
        for row in &rows {
            if row.alpha == 0.0 {
                assert_eq!(row.normalized, 1.0);
            } else {
                assert!(row.moment <= c.cone_radius);
            }
        }
        let n = 1024;
        let m0 = crate::recovery::finest_level(c.cone_radius, n, 1).unwrap();
        let floor = c.cone_radius * 0.5f64.powi(m0 as i32);
        let tail = tail_check(&d, &c, &[0.3], &[floor / 2.0, c.cone_radius, 2.0 * c.cone_radius], n, 20, 5).unwrap();
        assert_eq!(tail.frequencies, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn coupon_single_bump() {
        let d = Domain::unit_cube(1).unwrap();
        let c = AlgoConstants::for_domain(&d, 1);
        let rep = coupon_check_with(&d, &c, 64, 1, 400, 8).unwrap();
        assert!((rep.exact_missed - (1.0 - rep.support_fraction).powi(64)).abs() < 1e-12);
        assert!(rep.within_sigmas(3.0), "{rep}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn canonical_text_round_trips(
            s in 1usize..4, seed in any::<u64>(), reps in 1usize..50,
            lo in 6u32..9, span in 0u32..4,
            crit in prop_oneof![Just(Criterion::MonteCarlo), Just(Criterion::Uniform)],
            q in prop_oneof![Just(1.0), Just(2.0), Just(f64::INFINITY)],
        ) {
            let ns = (lo..=lo + span).map(|e| 1usize << e).collect();
            let mut cfg = ExperimentConfig::new(DomainKind::Cube, 1, s, f64::INFINITY, q, ns);
            cfg.seed = seed;
            cfg.replications = reps;
            cfg.criterion = crit;
            let back = ExperimentConfig::parse(&cfg.canonical()).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.hash(), cfg.hash());
        }
    }
}
