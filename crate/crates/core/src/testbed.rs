//! Test functions with exact derivatives, reference quadrature grids, L_q
//! errors, Sobolev norm estimates and the disjoint bump families used for the
//! coupon-collector lower bound.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::erf::erf;
use statrs::function::gamma::gamma;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{Domain, DomainKind, PointCloud};
use crate::jet::{JetSpace, Scalar};
use crate::sampling::midpoint_grid;

/// Highest derivative order the oracles provide.
pub const MAX_DERIVATIVE_ORDER: usize = 6;

/// Bump radius as a fraction of the packing cell side.
pub const DEFAULT_BUMP_RADIUS_FACTOR: f64 = 0.15;

/// Rejects integrability exponents below 1; `f64::INFINITY` stands for the sup norm.
pub fn check_exponent(p: f64) -> Result<()> {
    if p >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("exponent {p} is below 1")))
    }
}

pub fn format_exponent(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p}")
    }
}

pub fn parse_exponent(s: &str) -> Result<f64> {
    let p = match s.trim() {
        "inf" | "infinity" | "∞" => f64::INFINITY,
        other => other
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("cannot parse exponent '{other}'")))?,
    };
    check_exponent(p)?;
    Ok(p)
}

/// Midpoints of a `k^d` tensor grid on the bounding box that fall inside the domain.
#[derive(Debug, Clone)]
pub struct ReferenceGrid {
    pub points: PointCloud,
    pub resolution: usize,
    pub volume: f64,
}

impl ReferenceGrid {
    pub fn new(domain: &Domain, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidParameter("grid resolution must be positive".into()));
        }
        let points = midpoint_grid(domain, resolution);
        if points.is_empty() {
            return Err(Error::EmptyProbeSet);
        }
        Ok(Self { points, resolution, volume: domain.volume() })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `vol(Ω)` times the mean of the values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.volume * chunked_sum(values) / values.len() as f64
    }
}

/// Sum in fixed-size chunks so parallel and sequential callers agree bit for bit.
fn chunked_sum(values: &[f64]) -> f64 {
    values
        .chunks(4096)
        .map(|c| c.iter().sum::<f64>())
        .fold(0.0, |a, b| a + b)
}

type GridCache = Mutex<HashMap<(String, usize), Arc<ReferenceGrid>>>;

/// Shared, lazily built reference grid for a domain and resolution.
pub fn reference_grid(domain: &Domain, resolution: usize) -> Result<Arc<ReferenceGrid>> {
    static CACHE: OnceLock<GridCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (domain.id(), resolution);
    if let Some(grid) = cache.lock().expect("grid cache lock").get(&key) {
        return Ok(Arc::clone(grid));
    }
    let grid = Arc::new(ReferenceGrid::new(domain, resolution)?);
    cache
        .lock()
        .expect("grid cache lock")
        .insert(key, Arc::clone(&grid));
    Ok(grid)
}

/// Default error-measurement resolution per dimension.
pub fn default_error_resolution(dim: usize) -> usize {
    match dim {
        1 => 1 << 14,
        2 => 128,
        _ => 24,
    }
}

/// Default quadrature resolution for integrating an approximant.
pub fn default_quadrature_resolution(dim: usize) -> usize {
    match dim {
        1 => 1 << 14,
        2 => 512,
        _ => 32,
    }
}

fn min_error_resolution(dim: usize) -> usize {
    if dim <= 2 {
        64
    } else {
        16
    }
}

/// `(vol · mean |v|^q)^(1/q)`, or `max |v|` for `q = ∞`.
pub fn lq_norm_of_values(values: &[f64], volume: f64, q: f64) -> Result<f64> {
    check_exponent(q)?;
    if values.is_empty() {
        return Ok(0.0);
    }
    if q.is_infinite() {
        return Ok(values.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let powered: Vec<f64> = values.iter().map(|v| v.abs().powf(q)).collect();
    Ok((volume * chunked_sum(&powered) / values.len() as f64).powf(1.0 / q))
}

/// L_q distance between two functions measured on the reference grid.
pub fn lq_error<F, G>(f: F, g: G, domain: &Domain, q: f64, resolution: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    check_exponent(q)?;
    if resolution < min_error_resolution(domain.dim()) {
        return Err(Error::InvalidParameter(format!(
            "error grid resolution {resolution} is below {}",
            min_error_resolution(domain.dim())
        )));
    }
    let grid = reference_grid(domain, resolution)?;
    let diff: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.points.point(i);
            f(x) - g(x)
        })
        .collect();
    lq_norm_of_values(&diff, grid.volume, q)
}

/// Nominal smoothness of a test function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothness {
    Polynomial(usize),
    Analytic,
    /// Smooth with compact support.
    CompactlySmooth,
    /// Behaves like `|x - c|^beta` near a point.
    PowerSingularity(f64),
}

#[derive(Debug, Clone)]
pub enum FunctionKind {
    Constant(f64),
    Monomial(Vec<u32>),
    /// `exp(-|x - c|^2 / width^2)`.
    Gaussian { center: Vec<f64>, width: f64 },
    /// `prod_i sin(2 π k_i x_i + φ_i)`.
    SineProduct { frequencies: Vec<f64>, phases: Vec<f64> },
    /// `|x - c|^exponent`.
    Singular { center: Vec<f64>, exponent: f64 },
    Bumps(Arc<BumpFamily>),
}

/// A closed-form function with derivative oracles, times a scale factor.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub id: String,
    pub dim: usize,
    pub kind: FunctionKind,
    pub scale: f64,
}

fn squared_distance<S: Scalar>(x: &[S], c: &[f64]) -> S {
    let mut acc = x[0].constant_like(0.0);
    for (xi, ci) in x.iter().zip(c) {
        let d = xi.clone() + (-ci);
        acc = acc + d.clone() * d;
    }
    acc
}

impl TestFunction {
    pub fn new(id: impl Into<String>, dim: usize, kind: FunctionKind) -> Self {
        Self { id: id.into(), dim, kind, scale: 1.0 }
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.scale *= factor;
        self
    }

    pub fn smoothness(&self) -> Smoothness {
        match &self.kind {
            FunctionKind::Constant(_) => Smoothness::Polynomial(0),
            FunctionKind::Monomial(a) => Smoothness::Polynomial(a.iter().sum::<u32>() as usize),
            FunctionKind::Gaussian { .. } | FunctionKind::SineProduct { .. } => Smoothness::Analytic,
            FunctionKind::Singular { exponent, .. } => Smoothness::PowerSingularity(*exponent),
            FunctionKind::Bumps(_) => Smoothness::CompactlySmooth,
        }
    }

    /// Whether the function is a polynomial of degree at most `degree`.
    pub fn is_polynomial_of_degree(&self, degree: usize) -> bool {
        matches!(self.smoothness(), Smoothness::Polynomial(k) if k <= degree)
    }

    pub fn eval_generic<S: Scalar>(&self, x: &[S]) -> S {
        let value = match &self.kind {
            FunctionKind::Constant(c) => x[0].constant_like(*c),
            FunctionKind::Monomial(alpha) => {
                let mut acc = x[0].constant_like(1.0);
                for (xi, &a) in x.iter().zip(alpha) {
                    for _ in 0..a {
                        acc = acc * xi.clone();
                    }
                }
                acc
            }
            FunctionKind::Gaussian { center, width } => {
                (squared_distance(x, center) * (-1.0 / (width * width))).exp()
            }
            FunctionKind::SineProduct { frequencies, phases } => {
                let mut acc = x[0].constant_like(1.0);
                for ((xi, k), phi) in x.iter().zip(frequencies).zip(phases) {
                    acc = acc * (xi.clone() * (2.0 * PI * k) + *phi).sin();
                }
                acc
            }
            FunctionKind::Singular { center, exponent } => {
                squared_distance(x, center).powf(exponent / 2.0)
            }
            FunctionKind::Bumps(family) => family.eval_generic(x),
        };
        value * self.scale
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_generic(x)
    }

    pub fn samples(&self, points: &PointCloud) -> Vec<f64> {
        points.iter().map(|x| self.eval(x)).collect()
    }

    /// All partial derivatives of order at most `order` at `x`, graded-lexicographic.
    pub fn derivatives(&self, x: &[f64], order: usize) -> Result<Vec<(Vec<u32>, f64)>> {
        check_dim(self.dim, x.len())?;
        if order > MAX_DERIVATIVE_ORDER {
            return Err(Error::MissingOracle(order));
        }
        let space = JetSpace::new(self.dim, order);
        Ok(self.eval_generic(&space.variables(x)).derivatives())
    }

    pub fn derivative(&self, x: &[f64], alpha: &[u32]) -> Result<f64> {
        check_dim(self.dim, alpha.len())?;
        let order = alpha.iter().sum::<u32>() as usize;
        let all = self.derivatives(x, order)?;
        Ok(all
            .into_iter()
            .find(|(a, _)| a.as_slice() == alpha)
            .map(|(_, v)| v)
            .expect("multi-index of the requested order"))
    }

    /// Closed-form integral over the domain when one is known.
    pub fn integral(&self, domain: &Domain) -> Option<f64> {
        if domain.dim() != self.dim {
            return None;
        }
        let value = match &self.kind {
            FunctionKind::Constant(c) => Some(c * domain.volume()),
            FunctionKind::Monomial(alpha) => box_integral(domain, |i, a, b| {
                let k = alpha[i] as i32 + 1;
                (b.powi(k) - a.powi(k)) / k as f64
            }),
            FunctionKind::Gaussian { center, width } => box_integral(domain, |i, a, b| {
                let w = *width;
                0.5 * w * PI.sqrt() * (erf((b - center[i]) / w) - erf((a - center[i]) / w))
            }),
            FunctionKind::SineProduct { frequencies, phases } => box_integral(domain, |i, a, b| {
                let w = 2.0 * PI * frequencies[i];
                ((w * a + phases[i]).cos() - (w * b + phases[i]).cos()) / w
            }),
            FunctionKind::Singular { center, exponent } => {
                if domain.kind() == DomainKind::Cube && self.dim == 1 {
                    let c = center[0];
                    let e = exponent + 1.0;
                    Some((c.powf(e) + (1.0 - c).powf(e)) / e)
                } else {
                    None
                }
            }
            FunctionKind::Bumps(family) => Some(family.integral()),
        };
        value.map(|v| v * self.scale)
    }
}

/// Integral of a separable function over a cube or the L-shape.
fn box_integral(domain: &Domain, factor: impl Fn(usize, f64, f64) -> f64) -> Option<f64> {
    let d = domain.dim();
    let full: f64 = (0..d).map(|i| factor(i, 0.0, 1.0)).product();
    match domain.kind() {
        DomainKind::Cube => Some(full),
        DomainKind::LShape => Some(full - (0..d).map(|i| factor(i, 0.5, 1.0)).product::<f64>()),
        DomainKind::Ball => None,
    }
}

/// Full Sobolev norm and the top-order seminorm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevEstimate {
    pub norm: f64,
    pub seminorm: f64,
}

/// Quadrature estimate of `||f||_{W_p^s}` and `|f|_{W_p^s}` on the reference grid.
pub fn sobolev_norm_estimate(
    f: &TestFunction,
    domain: &Domain,
    p: f64,
    s: usize,
    resolution: usize,
) -> Result<SobolevEstimate> {
    check_exponent(p)?;
    check_dim(domain.dim(), f.dim)?;
    if s > MAX_DERIVATIVE_ORDER {
        return Err(Error::MissingOracle(s));
    }
    let grid = reference_grid(domain, resolution)?;
    let space = JetSpace::new(f.dim, s);
    let orders: Vec<usize> = space
        .exponents()
        .iter()
        .map(|a| a.iter().sum::<u32>() as usize)
        .collect();
    let n_alpha = orders.len();
    // Per-chunk accumulators: sum of |D^a f|^p, or max |D^a f| for p = ∞.
    let partials: Vec<Vec<f64>> = grid
        .points
        .as_flat()
        .par_chunks(1024 * f.dim)
        .map(|chunk| {
            let mut acc = vec![0.0; n_alpha];
            for x in chunk.chunks_exact(f.dim) {
                let jet = f.eval_generic(&space.variables(x));
                for (k, (_, v)) in jet.derivatives().into_iter().enumerate() {
                    let a = v.abs();
                    if p.is_infinite() {
                        acc[k] = f64::max(acc[k], a);
                    } else {
                        acc[k] += a.powf(p);
                    }
                }
            }
            acc
        })
        .collect();
    let mut totals = vec![0.0; n_alpha];
    for part in &partials {
        for k in 0..n_alpha {
            if p.is_infinite() {
                totals[k] = f64::max(totals[k], part[k]);
            } else {
                totals[k] += part[k];
            }
        }
    }
    let weight = grid.volume / grid.len() as f64;
    let (mut norm, mut semi) = (0.0f64, 0.0f64);
    for k in 0..n_alpha {
        if p.is_infinite() {
            norm = norm.max(totals[k]);
            if orders[k] == s {
                semi = semi.max(totals[k]);
            }
        } else {
            norm += totals[k] * weight;
            if orders[k] == s {
                semi += totals[k] * weight;
            }
        }
    }
    if p.is_finite() {
        norm = norm.powf(1.0 / p);
        semi = semi.powf(1.0 / p);
    }
    Ok(SobolevEstimate { norm, seminorm: semi })
}

/// `exp(-1 / (1 - t^2))` for `t < 1`, else 0, as a function of `t^2`.
fn profile<S: Scalar>(t2: S) -> S {
    if t2.value() >= 1.0 {
        return t2.constant_like(0.0);
    }
    (-(-t2 + 1.0).recip()).exp()
}

/// Derivative sizes of the unit bump profile on `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileCalibration {
    pub dim: usize,
    pub order: usize,
    pub p: f64,
    /// `max_{|a| = k} sup |D^a φ|` for `k = 0..=order`.
    pub sup_by_order: Vec<f64>,
    /// `sum_{|a| = k} ∫ |D^a φ|^p` for `k = 0..=order` (empty for `p = ∞`).
    pub power_integral_by_order: Vec<f64>,
    /// `∫ φ`.
    pub integral: f64,
}

fn profile_calibration_uncached(dim: usize, order: usize, p: f64) -> ProfileCalibration {
    let k = match dim {
        1 => 20_000,
        2 => 400,
        _ => 64,
    };
    let space = JetSpace::new(dim, order);
    let orders: Vec<usize> = space
        .exponents()
        .iter()
        .map(|a| a.iter().sum::<u32>() as usize)
        .collect();
    let h = 2.0 / k as f64;
    let cell = h.powi(dim as i32);
    let mut sup = vec![0.0f64; order + 1];
    let mut power = vec![0.0f64; order + 1];
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    'grid: loop {
        for i in 0..dim {
            x[i] = -1.0 + h * (idx[i] as f64 + 0.5);
        }
        let t2: f64 = x.iter().map(|v| v * v).sum();
        if t2 < 1.0 {
            let vars = space.variables(&x);
            let mut r2 = vars[0].constant_like(0.0);
            for v in &vars {
                r2 = r2 + v.clone() * v.clone();
            }
            for (j, (_, d)) in profile(r2).derivatives().into_iter().enumerate() {
                let a = d.abs();
                sup[orders[j]] = sup[orders[j]].max(a);
                if p.is_finite() {
                    power[orders[j]] += a.powf(p) * cell;
                }
            }
        }
        let mut axis = 0;
        loop {
            idx[axis] += 1;
            if idx[axis] < k {
                break;
            }
            idx[axis] = 0;
            axis += 1;
            if axis == dim {
                break 'grid;
            }
        }
    }
    ProfileCalibration {
        dim,
        order,
        p,
        sup_by_order: sup,
        power_integral_by_order: if p.is_finite() { power } else { Vec::new() },
        integral: profile_integral(dim),
    }
}

/// `∫_{B(0,1)} exp(-1/(1-|y|^2)) dy` by a radial composite Simpson rule.
pub fn profile_integral(dim: usize) -> f64 {
    let n = 200_000usize;
    let h = 1.0 / n as f64;
    let g = |t: f64| {
        if t >= 1.0 {
            0.0
        } else {
            t.powi(dim as i32 - 1) * (-1.0 / (1.0 - t * t)).exp()
        }
    };
    let mut sum = g(0.0) + g(1.0);
    for i in 1..n {
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
    }
    let radial = sum * h / 3.0;
    let d = dim as f64;
    let sphere = 2.0 * PI.powf(d / 2.0) / gamma(d / 2.0);
    sphere * radial
}

/// Cached calibration of the unit profile for `(dim, order, p)`.
pub fn profile_calibration(dim: usize, order: usize, p: f64) -> Arc<ProfileCalibration> {
    type Cache = Mutex<HashMap<(usize, usize, u64), Arc<ProfileCalibration>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (dim, order, p.to_bits());
    if let Some(c) = cache.lock().expect("calibration cache lock").get(&key) {
        return Arc::clone(c);
    }
    let c = Arc::new(profile_calibration_uncached(dim, order, p));
    cache
        .lock()
        .expect("calibration cache lock")
        .insert(key, Arc::clone(&c));
    c
}

/// Lower bound `κ` with `sup|f_i| >= κ m^{-s/d}` for families packed on the unit cube.
pub fn bump_kappa(dim: usize, s: usize, radius_factor: f64) -> f64 {
    let cal = profile_calibration(dim, s, f64::INFINITY);
    let worst = cal.sup_by_order.iter().cloned().fold(0.0, f64::max);
    (-1.0f64).exp() * (radius_factor / 2.0).powi(s as i32) / worst
}

/// `m` bumps with pairwise disjoint supports inside the domain.
#[derive(Debug, Clone)]
pub struct BumpFamily {
    pub dim: usize,
    pub s: usize,
    pub centers: Vec<Vec<f64>>,
    pub radius: f64,
    pub signs: Vec<f64>,
    /// Common amplitude; it makes each bump's W_∞^s norm equal to 1.
    pub amplitude: f64,
    lower: Vec<f64>,
    cell: f64,
    shape: Vec<usize>,
    /// Bump index per packing cell, `usize::MAX` for empty cells.
    cell_bump: Vec<usize>,
}

impl BumpFamily {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Sup norm of one bump.
    pub fn bump_sup(&self) -> f64 {
        self.amplitude * (-1.0f64).exp()
    }

    /// Volume of one support ball.
    pub fn support_volume(&self) -> f64 {
        let d = self.dim as f64;
        PI.powf(d / 2.0) / gamma(d / 2.0 + 1.0) * self.radius.powi(self.dim as i32)
    }

    /// Index of the bump whose support holds `x` (open ball), if any.
    pub fn bump_at(&self, x: &[f64]) -> Option<usize> {
        let mut flat = 0usize;
        for i in (0..self.dim).rev() {
            let c = ((x[i] - self.lower[i]) / self.cell).floor();
            if c < 0.0 || c >= self.shape[i] as f64 {
                return None;
            }
            flat = flat * self.shape[i] + c as usize;
        }
        let b = self.cell_bump[flat];
        if b == usize::MAX {
            return None;
        }
        let d2: f64 = x
            .iter()
            .zip(&self.centers[b])
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        (d2 < self.radius * self.radius).then_some(b)
    }

    fn eval_generic<S: Scalar>(&self, x: &[S]) -> S {
        let values: Vec<f64> = x.iter().map(Scalar::value).collect();
        match self.bump_at(&values) {
            None => x[0].constant_like(0.0),
            Some(b) => {
                let t2 = squared_distance(x, &self.centers[b]) * (1.0 / (self.radius * self.radius));
                profile(t2) * (self.signs[b] * self.amplitude)
            }
        }
    }

    pub fn integral(&self) -> f64 {
        let sign_sum: f64 = self.signs.iter().sum();
        sign_sum * self.amplitude * self.radius.powi(self.dim as i32) * profile_integral(self.dim)
    }

    /// `||sum_i ε_i f_i||_{W_p^s}` from the profile calibration.
    pub fn sobolev_norm(&self, p: f64) -> f64 {
        let cal = profile_calibration(self.dim, self.s, p);
        if p.is_infinite() {
            return (0..=self.s)
                .map(|k| self.amplitude * self.radius.powi(-(k as i32)) * cal.sup_by_order[k])
                .fold(0.0, f64::max);
        }
        let d = self.dim as f64;
        let per_bump: f64 = (0..=self.s)
            .map(|k| {
                self.amplitude.powf(p)
                    * self.radius.powf(d - k as f64 * p)
                    * cal.power_integral_by_order[k]
            })
            .sum();
        (self.len() as f64 * per_bump).powf(1.0 / p)
    }

    /// Whether some support ball contains none of the points.
    pub fn misses_some_bump(&self, points: &PointCloud) -> bool {
        let mut hit = vec![false; self.len()];
        for x in points.iter() {
            if let Some(b) = self.bump_at(x) {
                hit[b] = true;
            }
        }
        hit.iter().any(|h| !h)
    }

    pub fn as_function(self: &Arc<Self>, id: impl Into<String>) -> TestFunction {
        TestFunction::new(id, self.dim, FunctionKind::Bumps(Arc::clone(self)))
    }

    /// Writes one row per bump: index, sign, radius, amplitude, center coordinates.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io(e.to_string());
        let cal = profile_calibration(self.dim, self.s, f64::INFINITY);
        writeln!(
            out,
            "# bump family: m={} d={} s={} profile sup by order={:?} (grid quadrature)",
            self.len(),
            self.dim,
            self.s,
            cal.sup_by_order
        )
        .map_err(io)?;
        let coords: Vec<String> = (0..self.dim).map(|i| format!("c{i}")).collect();
        writeln!(out, "index,sign,radius,amplitude,{}", coords.join(",")).map_err(io)?;
        for (i, c) in self.centers.iter().enumerate() {
            let cs: Vec<String> = c.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(
                out,
                "{i},{},{:.16e},{:.16e},{}",
                self.signs[i],
                self.radius,
                self.amplitude,
                cs.join(",")
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

/// Random signs for a bump family.
pub fn random_signs(m: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Packs `m` bumps on a regular grid of cubic cells; each support is a ball of
/// radius `radius_factor` times the cell side around a cell center.
pub fn make_bump_family(
    domain: &Domain,
    m: usize,
    signs: &[f64],
    s: usize,
    radius_factor: f64,
) -> Result<BumpFamily> {
    if m == 0 {
        return Err(Error::InfeasiblePacking(0));
    }
    if signs.len() != m {
        return Err(Error::LengthMismatch { expected: m, got: signs.len() });
    }
    if signs.iter().any(|&e| e != 1.0 && e != -1.0) {
        return Err(Error::InvalidParameter("bump signs must be +1 or -1".into()));
    }
    if !(radius_factor > 0.0 && radius_factor < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "bump radius factor {radius_factor} outside (0, 1/2)"
        )));
    }
    if s > MAX_DERIVATIVE_ORDER {
        return Err(Error::MissingOracle(s));
    }
    let dim = domain.dim();
    let (lo, hi) = domain.bounding_box();
    let longest = lo.iter().zip(hi).map(|(l, h)| h - l).fold(0.0, f64::max);
    let ratio = domain.bounding_box_volume() / domain.volume();
    let start = ((m as f64 * ratio).powf(1.0 / dim as f64).ceil() as usize).max(1);
    for k in start..=(4 * start + 8) {
        let cell = longest / k as f64;
        let radius = radius_factor * cell;
        let shape: Vec<usize> = lo
            .iter()
            .zip(hi)
            .map(|(l, h)| (((h - l) / cell) - 1e-9).ceil().max(1.0) as usize)
            .collect();
        let total: usize = shape.iter().product();
        let mut centers = Vec::new();
        let mut cell_bump = vec![usize::MAX; total];
        let mut idx = vec![0usize; dim];
        for flat in 0..total {
            let mut rem = flat;
            for i in 0..dim {
                idx[i] = rem % shape[i];
                rem /= shape[i];
            }
            let c: Vec<f64> = (0..dim).map(|i| lo[i] + cell * (idx[i] as f64 + 0.5)).collect();
            if domain.is_inside(&c) && domain.boundary_distance(&c) > radius {
                cell_bump[flat] = centers.len();
                centers.push(c);
                if centers.len() == m {
                    break;
                }
            }
        }
        if centers.len() == m {
            let cal = profile_calibration(dim, s, f64::INFINITY);
            let worst = (0..=s)
                .map(|j| radius.powi(-(j as i32)) * cal.sup_by_order[j])
                .fold(0.0, f64::max);
            return Ok(BumpFamily {
                dim,
                s,
                centers,
                radius,
                signs: signs.to_vec(),
                amplitude: 1.0 / worst,
                lower: lo.to_vec(),
                cell,
                shape,
                cell_bump,
            });
        }
    }
    Err(Error::InfeasiblePacking(m))
}

/// Bump count of the coupon-collector regime: `floor(n / (2 ln n))`.
pub fn coupon_bump_count(n: usize) -> usize {
    ((n as f64) / (2.0 * (n as f64).ln())).floor().max(1.0) as usize
}

/// The fixed dictionary: the constant 1, monomials up to `s_max`, a Gaussian,
/// a sine product and one bump family (degree `s_max`) per entry of `bump_counts`.
pub fn builtin_suite(domain: &Domain, s_max: usize, bump_counts: &[usize]) -> Result<Vec<TestFunction>> {
    let dim = domain.dim();
    let center = domain.star_pieces()[0].center.clone();
    let mut suite = vec![TestFunction::new("const1", dim, FunctionKind::Constant(1.0))];
    let basis = crate::mls::PolyBasis::new(dim, s_max)?;
    for alpha in basis.exponents().iter().skip(1) {
        let name: Vec<String> = alpha.iter().map(|a| a.to_string()).collect();
        suite.push(TestFunction::new(
            format!("mono-{}", name.join("-")),
            dim,
            FunctionKind::Monomial(alpha.clone()),
        ));
    }
    suite.push(TestFunction::new(
        "gauss",
        dim,
        FunctionKind::Gaussian { center, width: 0.2 },
    ));
    suite.push(TestFunction::new(
        "sine",
        dim,
        FunctionKind::SineProduct { frequencies: vec![1.0; dim], phases: vec![0.0; dim] },
    ));
    for &m in bump_counts {
        let signs = random_signs(m, m as u64);
        let family = Arc::new(make_bump_family(domain, m, &signs, s_max, DEFAULT_BUMP_RADIUS_FACTOR)?);
        suite.push(family.as_function(format!("bumps-{m}")));
    }
    Ok(suite)
}

pub fn find_function<'a>(suite: &'a [TestFunction], id: &str) -> Option<&'a TestFunction> {
    suite.iter().find(|f| f.id == id)
}

/// Shuffled copy of the indices, for permutation tests.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}
