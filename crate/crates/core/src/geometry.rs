//! Domains with an interior cone condition, cones, covering radii and the
//! sub-cube grids used to bound local radii.
//!
//! Every built-in domain carries a list of star pieces. The direction field
//! of the cone condition points from `x` toward the center of the first
//! piece that contains `x`, which gives a direction field that is continuous
//! away from piece boundaries and the centers themselves.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

use crate::error::{check_dim, Error, Result};

/// Largest admissible cone half-angle.
pub const MAX_HALF_ANGLE: f64 = PI / 5.0;

/// Default cone radius for all built-in domains.
pub const DEFAULT_CONE_RADIUS: f64 = 0.25;

/// `sin θ / (1 + sin θ)`: the interior cone constant of a cone with half-angle `θ`.
pub fn c_theta(theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta <= PI) {
        return Err(Error::InvalidParameter(format!(
            "cone angle {theta} outside (0, pi]"
        )));
    }
    let s = theta.sin();
    Ok(s / (1.0 + s))
}

/// Sub-cube count per axis for the local radius grid: `ceil(8 sqrt(d) / (c_theta c1))`.
pub fn default_subdivisions(dim: usize, theta: f64, c1: f64) -> Result<usize> {
    let ct = c_theta(theta)?;
    if !(c1 > 0.0) {
        return Err(Error::InvalidParameter(format!("c1 must be positive, got {c1}")));
    }
    Ok((8.0 * (dim as f64).sqrt() / (ct * c1)).ceil() as usize)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A flat, dimension-tagged list of points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize) -> Self {
        Self { dim, coords: Vec::new() }
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points<P: AsRef<[f64]>>(dim: usize, points: &[P]) -> Result<Self> {
        let mut cloud = Self::new(dim);
        for p in points {
            cloud.push(p.as_ref())?;
        }
        Ok(cloud)
    }

    pub fn push(&mut self, p: &[f64]) -> Result<()> {
        check_dim(self.dim, p.len())?;
        self.coords.extend_from_slice(p);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    /// The points with the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        PointCloud { dim: self.dim, coords }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainKind {
    /// The open unit cube `(0,1)^d`.
    Cube,
    /// An open Euclidean ball.
    Ball,
    /// The unit square minus the closed upper-right quadrant `[1/2,1]^2`.
    LShape,
}

impl DomainKind {
    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Cube => "cube",
            DomainKind::Ball => "ball",
            DomainKind::LShape => "lshape",
        }
    }
}

/// A piece of the domain that is star-shaped with respect to a ball around `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct StarPiece {
    pub center: Vec<f64>,
    pub ball_radius: f64,
    /// Closed axis-aligned box describing the piece; `None` means the whole domain.
    bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl StarPiece {
    fn contains(&self, x: &[f64]) -> bool {
        match &self.bounds {
            None => true,
            Some((lo, hi)) => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h),
        }
    }
}

/// A bounded open domain satisfying an interior cone condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    kind: DomainKind,
    dim: usize,
    cone_radius: f64,
    cone_half_angle: f64,
    volume: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    star_pieces: Vec<StarPiece>,
    ball_center: Vec<f64>,
    ball_radius: f64,
}

impl Domain {
    pub fn unit_cube(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let center = vec![0.5; dim];
        let mut domain = Self {
            kind: DomainKind::Cube,
            dim,
            cone_radius: DEFAULT_CONE_RADIUS,
            cone_half_angle: MAX_HALF_ANGLE,
            volume: 1.0,
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
            star_pieces: vec![StarPiece { center, ball_radius: 0.0, bounds: None }],
            ball_center: Vec::new(),
            ball_radius: 0.0,
        };
        domain.refresh_star_radii();
        Ok(domain)
    }

    /// The unit ball centered at the origin.
    pub fn ball(dim: usize) -> Result<Self> {
        Self::ball_with(vec![0.0; dim], 1.0)
    }

    pub fn ball_with(center: Vec<f64>, radius: f64) -> Result<Self> {
        let dim = center.len();
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("ball radius {radius}")));
        }
        let d = dim as f64;
        let unit = PI.powf(d / 2.0) / gamma(d / 2.0 + 1.0);
        let mut domain = Self {
            kind: DomainKind::Ball,
            dim,
            cone_radius: DEFAULT_CONE_RADIUS * radius,
            cone_half_angle: MAX_HALF_ANGLE,
            volume: unit * radius.powi(dim as i32),
            lower: center.iter().map(|c| c - radius).collect(),
            upper: center.iter().map(|c| c + radius).collect(),
            star_pieces: vec![StarPiece {
                center: center.clone(),
                ball_radius: 0.0,
                bounds: None,
            }],
            ball_center: center,
            ball_radius: radius,
        };
        domain.refresh_star_radii();
        Ok(domain)
    }

    /// `(0,1)^2` minus `[1/2,1]^2`, split into three closed squares of side 1/2.
    pub fn l_shape() -> Result<Self> {
        let square = |x: f64, y: f64| StarPiece {
            center: vec![x + 0.25, y + 0.25],
            ball_radius: 0.0,
            bounds: Some((vec![x, y], vec![x + 0.5, y + 0.5])),
        };
        let mut domain = Self {
            kind: DomainKind::LShape,
            dim: 2,
            cone_radius: DEFAULT_CONE_RADIUS,
            cone_half_angle: MAX_HALF_ANGLE,
            volume: 0.75,
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
            star_pieces: vec![square(0.0, 0.0), square(0.5, 0.0), square(0.0, 0.5)],
            ball_center: Vec::new(),
            ball_radius: 0.0,
        };
        domain.refresh_star_radii();
        Ok(domain)
    }

    /// Looks up a built-in domain by its config name (`cube`, `ball`, `lshape`).
    pub fn from_name(name: &str, dim: usize) -> Result<Self> {
        match name {
            "cube" => Self::unit_cube(dim),
            "ball" => Self::ball(dim),
            "lshape" | "l-shape" => {
                if dim != 2 {
                    return Err(Error::InvalidParameter(format!(
                        "the L-shape is two-dimensional, got d = {dim}"
                    )));
                }
                Self::l_shape()
            }
            other => Err(Error::InvalidParameter(format!("unknown domain kind '{other}'"))),
        }
    }

    /// Overrides the cone parameters.
    pub fn with_cone(mut self, radius: f64, half_angle: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("cone radius {radius}")));
        }
        if !(half_angle > 0.0 && half_angle <= MAX_HALF_ANGLE + 1e-15) {
            return Err(Error::InvalidParameter(format!(
                "cone half-angle {half_angle} outside (0, pi/5]"
            )));
        }
        self.cone_radius = radius;
        self.cone_half_angle = half_angle.min(MAX_HALF_ANGLE);
        self.refresh_star_radii();
        Ok(self)
    }

    fn refresh_star_radii(&mut self) {
        let ct = c_theta(self.cone_half_angle).unwrap_or(0.0);
        let radius = 0.5 * ct * self.cone_radius;
        for piece in &mut self.star_pieces {
            piece.ball_radius = radius;
        }
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cone_radius(&self) -> f64 {
        self.cone_radius
    }

    pub fn cone_half_angle(&self) -> f64 {
        self.cone_half_angle
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn bounding_box(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    pub fn bounding_box_volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn star_pieces(&self) -> &[StarPiece] {
        &self.star_pieces
    }

    /// Short identifier such as `cube-2`, used in provenance fields.
    pub fn id(&self) -> String {
        match self.kind {
            DomainKind::Ball
                if self.ball_radius != 1.0 || self.ball_center.iter().any(|&c| c != 0.0) =>
            {
                format!("ball-{}-r{}", self.dim, self.ball_radius)
            }
            _ => format!("{}-{}", self.kind.name(), self.dim),
        }
    }

    /// Membership in the open domain.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        check_dim(self.dim, x.len())?;
        Ok(self.is_inside(x))
    }

    pub(crate) fn is_inside(&self, x: &[f64]) -> bool {
        match self.kind {
            DomainKind::Cube => x.iter().all(|&v| v > 0.0 && v < 1.0),
            DomainKind::Ball => dist2(x, &self.ball_center) < self.ball_radius * self.ball_radius,
            DomainKind::LShape => {
                x.iter().all(|&v| v > 0.0 && v < 1.0) && !(x[0] >= 0.5 && x[1] >= 0.5)
            }
        }
    }

    /// Membership in the closure of the domain.
    pub fn in_closure(&self, x: &[f64]) -> bool {
        match self.kind {
            DomainKind::Cube => x.iter().all(|&v| (0.0..=1.0).contains(&v)),
            DomainKind::Ball => {
                dist2(x, &self.ball_center) <= self.ball_radius * self.ball_radius
            }
            DomainKind::LShape => {
                x.iter().all(|&v| (0.0..=1.0).contains(&v)) && !(x[0] > 0.5 && x[1] > 0.5)
            }
        }
    }

    /// Euclidean distance from an interior point to the complement; 0 outside.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        if !self.is_inside(x) {
            return 0.0;
        }
        let cube = || {
            x.iter()
                .map(|&v| v.min(1.0 - v))
                .fold(f64::INFINITY, f64::min)
        };
        match self.kind {
            DomainKind::Cube => cube(),
            DomainKind::Ball => self.ball_radius - dist2(x, &self.ball_center).sqrt(),
            DomainKind::LShape => {
                let dx = (0.5 - x[0]).max(0.0);
                let dy = (0.5 - x[1]).max(0.0);
                cube().min((dx * dx + dy * dy).sqrt())
            }
        }
    }

    /// Unit direction of the cone condition at `x`.
    pub fn direction(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let piece = self
            .star_pieces
            .iter()
            .find(|p| p.contains(x))
            .ok_or_else(|| Error::OutsideDomain(x.to_vec()))?;
        let diff: Vec<f64> = piece.center.iter().zip(x).map(|(z, v)| z - v).collect();
        let norm = dot(&diff, &diff).sqrt();
        if norm == 0.0 {
            let mut e1 = vec![0.0; self.dim];
            e1[0] = 1.0;
            return Ok(e1);
        }
        Ok(diff.into_iter().map(|v| v / norm).collect())
    }

    /// The cone `K(x, radius)` of the cone condition.
    pub fn cone_at(&self, x: &[f64], radius: f64) -> Result<Cone> {
        check_dim(self.dim, x.len())?;
        if !self.is_inside(x) {
            return Err(Error::OutsideDomain(x.to_vec()));
        }
        if !(radius > 0.0 && radius <= self.cone_radius) {
            return Err(Error::InvalidParameter(format!(
                "cone radius {radius} outside (0, {}]",
                self.cone_radius
            )));
        }
        let direction = self.direction(x)?;
        Ok(Cone {
            apex: x.to_vec(),
            direction,
            half_angle: self.cone_half_angle,
            cos_half_angle: self.cone_half_angle.cos(),
            radius,
        })
    }
}

/// `{x + λ y : |y| = 1, <y, ξ> >= cos θ, 0 <= λ <= ρ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cone {
    apex: Vec<f64>,
    direction: Vec<f64>,
    half_angle: f64,
    cos_half_angle: f64,
    radius: f64,
}

impl Cone {
    pub fn new(apex: Vec<f64>, direction: Vec<f64>, half_angle: f64, radius: f64) -> Result<Self> {
        check_dim(apex.len(), direction.len())?;
        let norm = dot(&direction, &direction).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "cone direction must be a unit vector, norm is {norm}"
            )));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("cone radius {radius}")));
        }
        if !(half_angle > 0.0 && half_angle <= PI) {
            return Err(Error::InvalidParameter(format!("cone half-angle {half_angle}")));
        }
        Ok(Self {
            apex,
            direction,
            half_angle,
            cos_half_angle: half_angle.cos(),
            radius,
        })
    }

    pub fn apex(&self) -> &[f64] {
        &self.apex
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn half_angle(&self) -> f64 {
        self.half_angle
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.apex.len()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        let mut d2 = 0.0;
        let mut along = 0.0;
        for ((a, v), xi) in self.apex.iter().zip(y).zip(&self.direction) {
            let diff = v - a;
            d2 += diff * diff;
            along += diff * xi;
        }
        if d2 > self.radius * self.radius {
            return false;
        }
        d2 == 0.0 || along >= self.cos_half_angle * d2.sqrt()
    }

    /// Tight axis-aligned bounding box.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let extent = |component: f64| {
            // Largest projection of a cap direction onto an axis with angle acos(component) to ξ.
            let angle = component.clamp(-1.0, 1.0).acos();
            let gap = (angle - self.half_angle).max(0.0);
            if gap >= PI / 2.0 {
                0.0
            } else {
                gap.cos()
            }
        };
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for (a, xi) in self.apex.iter().zip(&self.direction) {
            hi.push(a + self.radius * extent(*xi));
            lo.push(a - self.radius * extent(-*xi));
        }
        (lo, hi)
    }
}

/// Region over which a covering radius is measured.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    Domain(&'a Domain),
    Cone(&'a Cone),
}

impl Region<'_> {
    fn dim(&self) -> usize {
        match self {
            Region::Domain(d) => d.dim(),
            Region::Cone(c) => c.dim(),
        }
    }

    fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Region::Domain(d) => {
                let (lo, hi) = d.bounding_box();
                (lo.to_vec(), hi.to_vec())
            }
            Region::Cone(c) => c.bounding_box(),
        }
    }

    fn in_closure(&self, x: &[f64]) -> bool {
        match self {
            Region::Domain(d) => d.in_closure(x),
            Region::Cone(c) => c.contains(x),
        }
    }
}

/// Probe density of a covering-radius estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resolution {
    /// Number of probes along every axis of the bounding box (at least 8).
    PerDimension(usize),
    /// Target distance between neighbouring probes.
    Spacing(f64),
}

impl Resolution {
    fn counts(&self, lo: &[f64], hi: &[f64]) -> Result<Vec<usize>> {
        match *self {
            Resolution::PerDimension(k) => {
                if k < 8 {
                    return Err(Error::InvalidParameter(format!(
                        "probe resolution {k} is below 8"
                    )));
                }
                Ok(lo.iter().zip(hi).map(|(l, h)| if h > l { k } else { 1 }).collect())
            }
            Resolution::Spacing(s) => {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::InvalidParameter(format!("probe spacing {s}")));
                }
                Ok(lo
                    .iter()
                    .zip(hi)
                    .map(|(l, h)| {
                        if h > l {
                            ((h - l) / s).ceil().max(1.0) as usize + 1
                        } else {
                            1
                        }
                    })
                    .collect())
            }
        }
    }
}

/// Upper bound on how far the probe estimate can undershoot the true covering radius:
/// `sqrt(d) * side / resolution` with the longest box side.
pub fn probe_error_bound(region: Region<'_>, resolution: Resolution) -> f64 {
    let (lo, hi) = region.bounding_box();
    let side = lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max);
    let per_dim = match resolution {
        Resolution::PerDimension(k) => k as f64,
        Resolution::Spacing(s) => side / s,
    };
    (region.dim() as f64).sqrt() * side / per_dim
}

/// Tensor probe grid over a box, endpoints included.
pub(crate) struct ProbeGrid {
    lo: Vec<f64>,
    step: Vec<f64>,
    counts: Vec<usize>,
}

impl ProbeGrid {
    pub(crate) fn new(lo: Vec<f64>, hi: &[f64], counts: Vec<usize>) -> Self {
        let step = lo
            .iter()
            .zip(hi)
            .zip(&counts)
            .map(|((l, h), &k)| if k > 1 { (h - l) / (k - 1) as f64 } else { 0.0 })
            .collect();
        Self { lo, step, counts }
    }

    /// Visits every probe until `visit` returns `false`.
    pub(crate) fn for_each(&self, mut visit: impl FnMut(&[f64]) -> bool) {
        let dim = self.lo.len();
        let mut idx = vec![0usize; dim];
        let mut probe = self.lo.clone();
        if self.counts.iter().any(|&k| k == 0) {
            return;
        }
        loop {
            for i in 0..dim {
                probe[i] = self.lo[i] + self.step[i] * idx[i] as f64;
            }
            if !visit(&probe) {
                return;
            }
            let mut axis = 0;
            loop {
                idx[axis] += 1;
                if idx[axis] < self.counts[axis] {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
                if axis == dim {
                    return;
                }
            }
        }
    }
}

/// Largest nearest-point distance over probes inside the region.
///
/// Returns `None` for an empty probe set. Stops early, returning the first
/// distance above `stop_above`, when that is finite.
pub(crate) fn probe_max_distance(
    region: Region<'_>,
    resolution: Resolution,
    mut nearest: impl FnMut(&[f64]) -> f64,
    stop_above: f64,
) -> Result<Option<f64>> {
    let (lo, hi) = region.bounding_box();
    let counts = resolution.counts(&lo, &hi)?;
    let grid = ProbeGrid::new(lo, &hi, counts);
    let mut worst: Option<f64> = None;
    grid.for_each(|probe| {
        if !region.in_closure(probe) {
            return true;
        }
        let d = nearest(probe);
        let w = worst.get_or_insert(d);
        if d > *w {
            *w = d;
        }
        !(d > stop_above)
    });
    Ok(worst)
}

/// Probe estimate of `sup_{x in region} dist(x, P)`.
///
/// For a cone only the points of `P` inside the cone count. The estimate is
/// taken over a tensor grid on the region's bounding box (endpoints included,
/// restricted to the region's closure); it never exceeds the true value and
/// undershoots it by at most [`probe_error_bound`]. Returns `f64::INFINITY`
/// when no point of `P` lies in the region.
pub fn covering_radius(
    points: &PointCloud,
    region: Region<'_>,
    resolution: Resolution,
) -> Result<f64> {
    check_dim(region.dim(), points.dim())?;
    let radius = match region {
        Region::Cone(cone) => {
            let inside: Vec<&[f64]> = points.iter().filter(|p| cone.contains(p)).collect();
            if inside.is_empty() {
                probe_max_distance(region, resolution, |_| 0.0, f64::INFINITY)?
                    .map(|_| f64::INFINITY)
            } else {
                probe_max_distance(
                    region,
                    resolution,
                    |probe| brute_nearest(&inside, probe),
                    f64::INFINITY,
                )?
            }
        }
        Region::Domain(domain) => {
            if points.is_empty() {
                probe_max_distance(region, resolution, |_| 0.0, f64::INFINITY)?
                    .map(|_| f64::INFINITY)
            } else {
                let index = PointIndex::new(points, domain.bounding_box());
                probe_max_distance(
                    region,
                    resolution,
                    |probe| index.nearest(points, probe).1,
                    f64::INFINITY,
                )?
            }
        }
    };
    radius.ok_or(Error::EmptyProbeSet)
}

pub(crate) fn brute_nearest(points: &[&[f64]], probe: &[f64]) -> f64 {
    points
        .iter()
        .map(|p| dist2(p, probe))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Uniform bucket grid over a bounding box for nearest-point and ball queries.
#[derive(Debug, Clone)]
pub(crate) struct PointIndex {
    dim: usize,
    lo: Vec<f64>,
    cell: f64,
    shape: Vec<usize>,
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl PointIndex {
    pub(crate) fn new(points: &PointCloud, bbox: (&[f64], &[f64])) -> Self {
        let dim = points.dim();
        let (lo, hi) = bbox;
        let n = points.len().max(1);
        let sides: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| (h - l).max(1e-12)).collect();
        let box_volume: f64 = sides.iter().product();
        // About two points per cell.
        let mut cell = (2.0 * box_volume / n as f64).powf(1.0 / dim as f64);
        let max_side = sides.iter().cloned().fold(0.0, f64::max);
        cell = cell.max(max_side / 2048.0);
        let shape: Vec<usize> = sides.iter().map(|s| ((s / cell).ceil() as usize).max(1)).collect();
        let total: usize = shape.iter().product();
        let mut index = Self {
            dim,
            lo: lo.to_vec(),
            cell,
            shape,
            starts: vec![0; total + 1],
            items: vec![0; points.len()],
        };
        let cells: Vec<usize> = points.iter().map(|p| index.flat(&index.cell_of(p))).collect();
        for &c in &cells {
            index.starts[c + 1] += 1;
        }
        for c in 0..total {
            index.starts[c + 1] += index.starts[c];
        }
        let mut fill = index.starts.clone();
        for (i, &c) in cells.iter().enumerate() {
            index.items[fill[c]] = i;
            fill[c] += 1;
        }
        index
    }

    fn cell_of(&self, x: &[f64]) -> Vec<isize> {
        x.iter()
            .zip(&self.lo)
            .zip(&self.shape)
            .map(|((v, l), &k)| (((v - l) / self.cell).floor() as isize).clamp(0, k as isize - 1))
            .collect()
    }

    fn flat(&self, c: &[isize]) -> usize {
        let mut f = 0usize;
        for (i, &v) in c.iter().enumerate().rev() {
            f = f * self.shape[i] + v as usize;
        }
        f
    }

    fn bucket(&self, c: &[isize]) -> &[usize] {
        let f = self.flat(c);
        &self.items[self.starts[f]..self.starts[f + 1]]
    }

    /// Visits all cells in the clipped box `[from, to]`.
    fn visit_box(&self, from: &[isize], to: &[isize], mut visit: impl FnMut(&[isize])) {
        let mut c = from.to_vec();
        if from.iter().zip(to).any(|(a, b)| a > b) {
            return;
        }
        loop {
            visit(&c);
            let mut axis = 0;
            loop {
                c[axis] += 1;
                if c[axis] <= to[axis] {
                    break;
                }
                c[axis] = from[axis];
                axis += 1;
                if axis == self.dim {
                    return;
                }
            }
        }
    }

    /// Index and distance of the nearest point; `(usize::MAX, inf)` for an empty cloud.
    pub(crate) fn nearest(&self, points: &PointCloud, x: &[f64]) -> (usize, f64) {
        let center = self.cell_of(x);
        let max_ring = self.shape.iter().cloned().max().unwrap_or(1) as isize;
        let mut best = (usize::MAX, f64::INFINITY);
        for ring in 0..=max_ring {
            let from: Vec<isize> = center.iter().map(|c| (c - ring).max(0)).collect();
            let to: Vec<isize> = center
                .iter()
                .zip(&self.shape)
                .map(|(c, &k)| (c + ring).min(k as isize - 1))
                .collect();
            self.visit_box(&from, &to, |c| {
                let on_ring = c
                    .iter()
                    .zip(&center)
                    .map(|(a, b)| (a - b).abs())
                    .max()
                    .unwrap_or(0)
                    == ring;
                if !on_ring {
                    return;
                }
                for &i in self.bucket(c) {
                    let d = dist2(points.point(i), x);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        best = (i, d);
                    }
                }
            });
            let reach = ring as f64 * self.cell;
            if best.1.is_finite() && best.1 <= reach * reach {
                break;
            }
        }
        (best.0, best.1.sqrt())
    }

    /// Indices of all points with `|p - x| <= radius`, in increasing index order.
    pub(crate) fn within(&self, points: &PointCloud, x: &[f64], radius: f64) -> Vec<usize> {
        let lo: Vec<f64> = x.iter().map(|v| v - radius).collect();
        let hi: Vec<f64> = x.iter().map(|v| v + radius).collect();
        let from = self.cell_of(&lo);
        let to = self.cell_of(&hi);
        let r2 = radius * radius;
        let mut out = Vec::new();
        self.visit_box(&from, &to, |c| {
            for &i in self.bucket(c) {
                if dist2(points.point(i), x) <= r2 {
                    out.push(i);
                }
            }
        });
        out.sort_unstable();
        out
    }
}

/// Closed sub-cubes of `Q(y, ρ)` that lie inside the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCells {
    pub center: Vec<f64>,
    pub half_width: f64,
    pub subdivisions: usize,
    /// Lower corners of the retained cells.
    pub cells: Vec<Vec<f64>>,
}

impl GridCells {
    pub fn cell_side(&self) -> f64 {
        2.0 * self.half_width / self.subdivisions as f64
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Whether the closed cell `i` contains `x`.
    pub fn cell_contains(&self, i: usize, x: &[f64]) -> bool {
        let side = self.cell_side();
        self.cells[i]
            .iter()
            .zip(x)
            .all(|(l, v)| *v >= *l && *v <= l + side)
    }
}

/// Partitions `Q(y, ρ)` into `ℓ^d` closed cells and keeps the ones inside the domain:
/// all corners in the closure and the center in the open domain.
pub fn grid_cells(domain: &Domain, y: &[f64], rho: f64, subdivisions: usize) -> Result<GridCells> {
    check_dim(domain.dim(), y.len())?;
    if subdivisions == 0 {
        return Err(Error::InvalidParameter("subdivision count must be positive".into()));
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("cube half-width {rho}")));
    }
    let dim = domain.dim();
    let side = 2.0 * rho / subdivisions as f64;
    let mut cells = Vec::new();
    let mut idx = vec![0usize; dim];
    let mut corner = vec![0.0; dim];
    'cells: loop {
        let lower: Vec<f64> = (0..dim).map(|i| y[i] - rho + side * idx[i] as f64).collect();
        let center: Vec<f64> = lower.iter().map(|l| l + 0.5 * side).collect();
        let mut keep = domain.is_inside(&center);
        if keep {
            for mask in 0..(1usize << dim) {
                for i in 0..dim {
                    corner[i] = lower[i] + if mask >> i & 1 == 1 { side } else { 0.0 };
                }
                if !domain.in_closure(&corner) {
                    keep = false;
                    break;
                }
            }
        }
        if keep {
            cells.push(lower);
        }
        let mut axis = 0;
        loop {
            idx[axis] += 1;
            if idx[axis] < subdivisions {
                break;
            }
            idx[axis] = 0;
            axis += 1;
            if axis == dim {
                break 'cells;
            }
        }
    }
    Ok(GridCells {
        center: y.to_vec(),
        half_width: rho,
        subdivisions,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contains_examples() {
        let cube = Domain::unit_cube(2).unwrap();
        assert!(cube.contains(&[0.5, 0.5]).unwrap());
        assert!(!cube.contains(&[1.0, 0.5]).unwrap());
        let l = Domain::l_shape().unwrap();
        assert!(!l.contains(&[0.75, 0.75]).unwrap());
        assert!(l.contains(&[0.75, 0.25]).unwrap());
        assert!(matches!(
            cube.contains(&[0.5]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn volumes() {
        assert_eq!(Domain::unit_cube(3).unwrap().volume(), 1.0);
        assert!((Domain::ball(2).unwrap().volume() - PI).abs() < 1e-12);
        assert!((Domain::ball(3).unwrap().volume() - 4.0 * PI / 3.0).abs() < 1e-12);
        let b = Domain::ball_with(vec![0.0, 0.0], 0.5).unwrap();
        assert!((b.volume() - PI * 0.25).abs() < 1e-12);
        assert_eq!(Domain::l_shape().unwrap().volume(), 0.75);
    }

    #[test]
    fn cone_directions() {
        let cube = Domain::unit_cube(2).unwrap();
        let c = cube.cone_at(&[0.1, 0.5], 0.2).unwrap();
        assert!((c.direction()[0] - 1.0).abs() < 1e-15 && c.direction()[1].abs() < 1e-15);
        let ball = Domain::ball(2).unwrap();
        let c = ball.cone_at(&[0.5, 0.0], 0.25).unwrap();
        assert_eq!(c.direction(), &[-1.0, 0.0]);
        let c = cube.cone_at(&[0.5, 0.5], 0.25).unwrap();
        assert_eq!(c.direction(), &[1.0, 0.0]);
        let c3 = Domain::unit_cube(3).unwrap().cone_at(&[0.5; 3], 0.1).unwrap();
        assert_eq!(c3.direction(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn cone_at_errors() {
        let cube = Domain::unit_cube(2).unwrap();
        assert!(matches!(cube.cone_at(&[1.5, 0.5], 0.1), Err(Error::OutsideDomain(_))));
        assert!(matches!(cube.cone_at(&[0.5, 0.5], 0.3), Err(Error::InvalidParameter(_))));
        assert!(matches!(cube.cone_at(&[0.5, 0.5], 0.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn cone_contains_examples() {
        let c = Cone::new(vec![0.0, 0.0], vec![1.0, 0.0], PI / 5.0, 1.0).unwrap();
        assert!(c.contains(&[0.5, 0.0]));
        assert!(!c.contains(&[0.0, 0.5]));
        assert!(!c.contains(&[1.1, 0.0]));
        assert!(c.contains(&[0.0, 0.0]));
        assert!(Cone::new(vec![0.0, 0.0], vec![1.0, 0.1], 0.5, 1.0).is_err());
    }

    #[test]
    fn one_dimensional_cone_is_an_interval() {
        let c = Cone::new(vec![0.3], vec![-1.0], PI / 5.0, 0.2).unwrap();
        assert!(c.contains(&[0.1]));
        assert!(c.contains(&[0.25]));
        assert!(!c.contains(&[0.31]));
        assert!(!c.contains(&[0.09]));
        let (lo, hi) = c.bounding_box();
        assert!((lo[0] - 0.1).abs() < 1e-15 && (hi[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn cone_box_is_tight_and_covering() {
        let c = Cone::new(vec![0.0, 0.0], vec![1.0, 0.0], PI / 5.0, 1.0).unwrap();
        let (lo, hi) = c.bounding_box();
        assert!(lo[0].abs() < 1e-15 && (hi[0] - 1.0).abs() < 1e-15);
        let s = (PI / 5.0).sin();
        assert!((hi[1] - s).abs() < 1e-12 && (lo[1] + s).abs() < 1e-12);
    }

    #[test]
    fn c_theta_values() {
        assert!((c_theta(PI / 6.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        // sin(36°) = 0.587785..., divided by 1.587785...
        let expected = 0.587_785_252_292_473_1 / 1.587_785_252_292_473_1;
        assert!((c_theta(PI / 5.0).unwrap() - expected).abs() < 1e-15);
        assert!((c_theta(PI / 5.0).unwrap() - 0.370_191).abs() < 1e-6);
        assert!(c_theta(0.0).is_err());
        assert!(c_theta(4.0).is_err());
        let mut last = f64::INFINITY;
        for k in 1..50 {
            let v = c_theta(PI / 5.0 / k as f64).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn covering_radius_examples() {
        let line = Domain::unit_cube(1).unwrap();
        let p = PointCloud::from_points(1, &[[0.25], [0.75]]).unwrap();
        let h = covering_radius(&p, Region::Domain(&line), Resolution::PerDimension(9)).unwrap();
        assert!((h - 0.25).abs() < 1e-15);
        let sq = Domain::unit_cube(2).unwrap();
        let p = PointCloud::from_points(2, &[[0.5, 0.5]]).unwrap();
        let h = covering_radius(&p, Region::Domain(&sq), Resolution::PerDimension(64)).unwrap();
        assert!((h - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn covering_radius_empty_cases() {
        let sq = Domain::unit_cube(2).unwrap();
        let empty = PointCloud::new(2);
        let h = covering_radius(&empty, Region::Domain(&sq), Resolution::PerDimension(8)).unwrap();
        assert!(h.is_infinite());
        assert!(covering_radius(&empty, Region::Domain(&sq), Resolution::PerDimension(4)).is_err());
        let cone = sq.cone_at(&[0.5, 0.5], 0.25).unwrap();
        let far = PointCloud::from_points(2, &[[0.1, 0.1]]).unwrap();
        let h = covering_radius(&far, Region::Cone(&cone), Resolution::PerDimension(16)).unwrap();
        assert!(h.is_infinite());
    }

    #[test]
    fn point_index_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for dim in 1..=3 {
            let pts: Vec<Vec<f64>> = (0..200)
                .map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect())
                .collect();
            let cloud = PointCloud::from_points(dim, &pts).unwrap();
            let lo = vec![0.0; dim];
            let hi = vec![1.0; dim];
            let index = PointIndex::new(&cloud, (&lo, &hi));
            let refs: Vec<&[f64]> = cloud.iter().collect();
            for _ in 0..200 {
                let x: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 1.4 - 0.2).collect();
                let (_, d) = index.nearest(&cloud, &x);
                assert_eq!(d, brute_nearest(&refs, &x));
                let r = rng.gen::<f64>() * 0.3;
                let got = index.within(&cloud, &x, r);
                let want: Vec<usize> =
                    (0..cloud.len()).filter(|&i| dist2(cloud.point(i), &x) <= r * r).collect();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn grid_cells_examples() {
        let sq = Domain::unit_cube(2).unwrap();
        assert_eq!(grid_cells(&sq, &[0.5, 0.5], 0.5, 2).unwrap().len(), 4);
        let g = grid_cells(&sq, &[0.0, 0.0], 0.5, 2).unwrap();
        assert_eq!(g.cells, vec![vec![0.0, 0.0]]);
        let l = Domain::l_shape().unwrap();
        assert_eq!(grid_cells(&l, &[0.5, 0.5], 0.5, 2).unwrap().len(), 3);
        assert!(grid_cells(&sq, &[0.5, 0.5], 0.5, 0).is_err());
    }

    #[test]
    fn default_subdivision_count() {
        let ct = c_theta(PI / 5.0).unwrap();
        let l = default_subdivisions(2, PI / 5.0, 0.1).unwrap();
        assert_eq!(l, (8.0 * 2f64.sqrt() / (ct * 0.1)).ceil() as usize);
    }
}
