//! Reproducible iid uniform samples and deterministic grid point sets.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Domain, PointCloud};

/// Generator id of [`sample_iid_uniform`].
pub const IID_GENERATOR: &str = "iid-uniform-chacha8";
/// Generator id of [`quasi_uniform_points`].
pub const GRID_GENERATOR: &str = "midpoint-grid";

/// Rejection attempts allowed per accepted point.
pub const MAX_ATTEMPTS_PER_POINT: u64 = 1 << 24;

/// Smallest domain-to-box volume ratio accepted by the rejection sampler.
pub const MIN_VOLUME_FRACTION: f64 = 1e-6;

/// A point set with the data needed to regenerate it.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub points: PointCloud,
    pub seed: u64,
    pub generator_id: String,
    pub domain_id: String,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.point(i)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# seed={} generator={} domain={} n={}",
            self.seed,
            self.generator_id,
            self.domain_id,
            self.len()
        )
        .map_err(io_error)?;
        let mut line = String::new();
        for p in self.points.iter() {
            line.clear();
            for (i, v) in p.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                write!(line, "{v:.16e}").expect("writing to a String");
            }
            writeln!(out, "{line}").map_err(io_error)?;
        }
        Ok(())
    }

    /// Reads points written by [`PointSet::write_csv`]; provenance comes from the header if present.
    pub fn read_csv<R: BufRead>(input: R, dim: usize) -> Result<Self> {
        let mut set = PointSet {
            points: PointCloud::new(dim),
            seed: 0,
            generator_id: "csv".into(),
            domain_id: String::new(),
        };
        let mut row = Vec::with_capacity(dim);
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(io_error)?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                for field in header.split_whitespace() {
                    match field.split_once('=') {
                        Some(("seed", v)) => set.seed = v.parse().unwrap_or(0),
                        Some(("generator", v)) => set.generator_id = v.to_string(),
                        Some(("domain", v)) => set.domain_id = v.to_string(),
                        _ => {}
                    }
                }
                continue;
            }
            row.clear();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidParameter(format!(
                        "line {}: cannot parse '{field}' as a number",
                        lineno + 1
                    ))
                })?;
                row.push(v);
            }
            set.points.push(&row)?;
        }
        Ok(set)
    }
}

fn io_error(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed from a base seed and a path of tags
/// (replication index, budget index, purpose, ...).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(base), |acc, &t| mix64(acc ^ mix64(t)))
}

/// `n` iid uniform points on the domain by rejection from its bounding box.
///
/// Point `i` is drawn from its own ChaCha8 stream `i` under key `seed`, so any
/// prefix or subset of the points can be regenerated independently.
pub fn sample_iid_uniform(domain: &Domain, n: usize, seed: u64) -> Result<PointSet> {
    let fraction = domain.volume() / domain.bounding_box_volume();
    if !(fraction >= MIN_VOLUME_FRACTION) {
        return Err(Error::RejectionLimit(MAX_ATTEMPTS_PER_POINT));
    }
    let dim = domain.dim();
    let (lo, hi) = domain.bounding_box();
    let base = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = PointCloud::new(dim);
    let mut x = vec![0.0; dim];
    for i in 0..n {
        let mut rng = base.clone();
        rng.set_stream(i as u64);
        let mut attempts = 0u64;
        loop {
            if attempts == MAX_ATTEMPTS_PER_POINT {
                return Err(Error::RejectionLimit(MAX_ATTEMPTS_PER_POINT));
            }
            attempts += 1;
            for k in 0..dim {
                x[k] = lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>();
            }
            if domain.is_inside(&x) {
                break;
            }
        }
        cloud.push(&x)?;
    }
    Ok(PointSet {
        points: cloud,
        seed,
        generator_id: IID_GENERATOR.into(),
        domain_id: domain.id(),
    })
}

pub(crate) fn midpoint_grid(domain: &Domain, k: usize) -> PointCloud {
    let dim = domain.dim();
    let (lo, hi) = domain.bounding_box();
    let mut cloud = PointCloud::new(dim);
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    loop {
        for i in 0..dim {
            x[i] = lo[i] + (hi[i] - lo[i]) * (idx[i] as f64 + 0.5) / k as f64;
        }
        if domain.is_inside(&x) {
            cloud.push(&x).expect("grid point has the domain dimension");
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
                return cloud;
            }
        }
    }
}

/// The first `n` points of the coarsest midpoint grid on the bounding box
/// that leaves at least `n` points inside the domain.
pub fn quasi_uniform_points(domain: &Domain, n: usize) -> Result<PointSet> {
    if n == 0 {
        return Err(Error::InvalidParameter("grid point count must be positive".into()));
    }
    let dim = domain.dim() as f64;
    let ratio = domain.bounding_box_volume() / domain.volume();
    let mut k = ((n as f64 * ratio).powf(1.0 / dim).floor() as usize).saturating_sub(2).max(1);
    let cloud = loop {
        let grid = midpoint_grid(domain, k);
        if grid.len() >= n {
            break grid;
        }
        k += 1;
    };
    let indices: Vec<usize> = (0..n).collect();
    Ok(PointSet {
        points: cloud.select(&indices),
        seed: 0,
        generator_id: format!("{GRID_GENERATOR}-{k}"),
        domain_id: domain.id(),
    })
}
