//! Self-checks run by `sobrec verify`: polynomial reproduction, geometry
//! oracles, radius moments, tails and the output-zero frequency.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::experiments::{radius_moment_check, sparse_probability_interval, tail_check};
use crate::geometry::{brute_nearest, c_theta, covering_radius, Domain, PointCloud, Region, Resolution};
use crate::recovery::{finest_level, AlgoConstants, RecoveryPlan, Scenario};
use crate::sampling::{derive_seed, sample_iid_uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Fast,
    Full,
}

impl Suite {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "fast" => Ok(Suite::Fast),
            "full" => Ok(Suite::Full),
            other => Err(Error::InvalidParameter(format!("unknown suite '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

/// Widest admissible constants on the unit cube: `r = 0.5`, `c1 = 0.75 c_theta`.
pub fn wide_constants(domain: &Domain, degree: usize) -> AlgoConstants {
    let mut c = AlgoConstants::for_domain(domain, degree);
    c.cone_radius = 0.5;
    c.c1 = c.c1_max();
    c
}

/// Smallest budget that puts iid points in the local scenario almost surely
/// under [`wide_constants`].
pub fn local_budget(dim: usize) -> usize {
    if dim == 1 {
        1024
    } else {
        16384
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproductionOutcome {
    pub dim: usize,
    pub degree: usize,
    /// Point sets that reached the local scenario and were checked.
    pub sets_checked: usize,
    pub sets_sparse: usize,
    /// Largest `|A π - π| / (1 + sum |a|)` over sets, probes and monomials.
    pub worst_ratio: f64,
    /// Probes whose weights came from the fallback ladder.
    pub fallbacks: u64,
}

impl ReproductionOutcome {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.sets_checked > 0 && self.sets_sparse == 0 && self.worst_ratio <= tolerance
    }
}

/// Applies the operator to every monomial of degree at most `degree` on
/// `sets` iid point sets of size `n` and `probes` random probes per set.
pub fn reproduction_check(
    domain: &Domain,
    constants: &AlgoConstants,
    n: usize,
    sets: usize,
    probes: usize,
    seed: u64,
    inject_fault: bool,
) -> Result<ReproductionOutcome> {
    let dim = domain.dim();
    let mut out = ReproductionOutcome {
        dim,
        degree: constants.degree,
        sets_checked: 0,
        sets_sparse: 0,
        worst_ratio: 0.0,
        fallbacks: 0,
    };
    for set in 0..sets {
        let pts = sample_iid_uniform(domain, n, derive_seed(seed, &[set as u64]))?;
        let mut plan = RecoveryPlan::build(domain, &pts.points, constants)?;
        if inject_fault {
            plan.inject_sign_fault();
        }
        if plan.scenario() == Scenario::Sparse {
            out.sets_sparse += 1;
            continue;
        }
        out.sets_checked += 1;
        let basis = plan.basis().clone();
        let values: Vec<Vec<f64>> = pts.points.iter().map(|x| basis.eval(x)).collect::<Result<_>>()?;
        let probe_set = sample_iid_uniform(domain, probes, derive_seed(seed, &[set as u64, 0x9e]))?;
        for x in probe_set.points.iter() {
            let w = plan.weights_at(x)?;
            out.fallbacks += w.fallback_count();
            let at_x = basis.eval(x)?;
            let abs_sum: f64 = w.weights.iter().map(|a| a.abs()).sum();
            for k in 0..basis.len() {
                let approx: f64 = w.indices.iter().zip(&w.weights).map(|(&j, a)| a * values[j][k]).sum();
                let ratio = (approx - at_x[k]).abs() / (1.0 + abs_sum);
                out.worst_ratio = out.worst_ratio.max(ratio);
            }
        }
    }
    Ok(out)
}

/// Samples random apexes, builds `cone_at(x, r)` and checks sampled cone points lie in the closure.
pub fn cone_audit(domain: &Domain, apexes: usize, per_cone: usize, seed: u64) -> Result<usize> {
    let pts = sample_iid_uniform(domain, apexes, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let dim = domain.dim();
    let mut failures = 0;
    for x in pts.points.iter() {
        let cone = domain.cone_at(x, domain.cone_radius())?;
        let (lo, hi) = cone.bounding_box();
        let mut accepted = 0;
        let mut tries = 0;
        while accepted < per_cone && tries < 1000 * per_cone {
            tries += 1;
            let y: Vec<f64> = (0..dim).map(|i| rng.gen_range(lo[i]..=hi[i])).collect();
            if !cone.contains(&y) {
                continue;
            }
            accepted += 1;
            if !domain.in_closure(&y) {
                failures += 1;
                break;
            }
        }
    }
    Ok(failures)
}

fn check<F: FnOnce() -> Result<(bool, String)>>(name: &str, f: F) -> CheckOutcome {
    match f() {
        Ok((passed, detail)) => CheckOutcome::new(name, passed, detail),
        Err(e) => CheckOutcome::new(name, false, format!("error: {e}")),
    }
}

/// Runs a suite. `inject_fault` negates the reproduction constraints so the
/// reproduction checks must fail.
pub fn run_suite(suite: Suite, inject_fault: bool) -> Vec<CheckOutcome> {
    let full = suite == Suite::Full;
    let mut out = Vec::new();
    let sets = if full { 20 } else { 3 };
    let probes = if full { 100 } else { 25 };
    let degrees: &[usize] = if full { &[1, 2, 3] } else { &[1, 2] };
    for dim in [1usize, 2] {
        for &s in degrees {
            let name = format!("reproduction d={dim} s={s}");
            out.push(check(&name, || {
                let domain = Domain::unit_cube(dim)?;
                let c = wide_constants(&domain, s);
                let r = reproduction_check(&domain, &c, local_budget(dim), sets, probes, 11, inject_fault)?;
                Ok((
                    r.passed(1e-8),
                    format!(
                        "{} sets, worst |A p - p|/(1+sum|a|) = {:.2e}, sparse sets {}, fallbacks {}",
                        r.sets_checked, r.worst_ratio, r.sets_sparse, r.fallbacks
                    ),
                ))
            }));
        }
    }
    out.push(check("c_theta at pi/5", || {
        let v = c_theta(std::f64::consts::PI / 5.0)?;
        Ok(((v - 0.370_191_9).abs() < 1e-6, format!("{v:.7}")))
    }));
    let apexes = if full { 1000 } else { 200 };
    for (name, domain) in [
        ("cube-1", Domain::unit_cube(1)),
        ("cube-2", Domain::unit_cube(2)),
        ("cube-2 r=0.5", Domain::unit_cube(2).and_then(|d| d.with_cone(0.5, std::f64::consts::PI / 5.0))),
        ("ball-2", Domain::ball(2)),
        ("ball-3", Domain::ball(3)),
        ("lshape", Domain::l_shape()),
    ] {
        out.push(check(&format!("cone audit {name}"), || {
            let failures = cone_audit(&domain?, apexes, 100, 3)?;
            Ok((failures == 0, format!("{failures} cones leave the domain out of {apexes}")))
        }));
    }
    out.push(check("covering radius vs brute force", || {
        let domain = Domain::unit_cube(2)?;
        let pts = sample_iid_uniform(&domain, 200, 5)?;
        let k = 64;
        let est = covering_radius(&pts.points, Region::Domain(&domain), Resolution::PerDimension(k))?;
        let refs: Vec<&[f64]> = pts.points.iter().collect();
        let mut brute = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let p = [i as f64 / (k - 1) as f64, j as f64 / (k - 1) as f64];
                brute = brute.max(brute_nearest(&refs, &p));
            }
        }
        Ok(((est - brute).abs() < 1e-12, format!("probe {est:.6} brute {brute:.6}")))
    }));
    out.push(check("radius moments", || {
        let domain = Domain::unit_cube(1)?;
        let c = AlgoConstants::for_domain(&domain, 1);
        let ns: Vec<usize> = (6..=if full { 12 } else { 9 }).map(|e| 1usize << e).collect();
        let rows = radius_moment_check(&domain, &c, &[0.37], &[0.0, 1.0], &ns, if full { 50 } else { 10 }, 7)?;
        let zero_ok = rows.iter().filter(|r| r.alpha == 0.0).all(|r| r.normalized == 1.0);
        let bound_ok = rows.iter().all(|r| r.moment <= c.cone_radius.powf(r.alpha) + 1e-15);
        let norm: Vec<f64> = rows.iter().filter(|r| r.alpha == 1.0).map(|r| r.normalized).collect();
        let band = crate::experiments::band_ratio(&norm);
        Ok((zero_ok && bound_ok && band <= 10.0, format!("alpha=1 band ratio {band:.2}")))
    }));
    out.push(check("radius tails", || {
        let domain = Domain::unit_cube(1)?;
        let c = AlgoConstants::for_domain(&domain, 1);
        let n = 1024;
        let floor = c.cone_radius * 0.5f64.powi(finest_level(c.cone_radius, n, 1)? as i32);
        let reps = if full { 200 } else { 40 };
        let t = tail_check(&domain, &c, &[0.61], &[floor / 2.0, c.cone_radius], n, reps, 8)?;
        let ok = t.frequencies == [1.0, 0.0] && t.monotone;
        Ok((ok, format!("frequencies {:?}", t.frequencies)))
    }));
    out.push(check("output-zero frequency at n = 16", || {
        let domain = Domain::unit_cube(1)?;
        let c = AlgoConstants::for_domain(&domain, 1);
        let reps = if full { 200 } else { 50 };
        let mut sparse = 0;
        for rep in 0..reps {
            let pts = sample_iid_uniform(&domain, 16, derive_seed(12, &[rep]))?;
            if RecoveryPlan::build(&domain, &pts.points, &c)?.scenario() == Scenario::Sparse {
                sparse += 1;
            }
        }
        let exact = sparse_probability_interval(16, c.c0() * c.cone_radius);
        let freq = sparse as f64 / reps as f64;
        let sigma = (exact * (1.0 - exact) / reps as f64).sqrt();
        Ok(((freq - exact).abs() <= 3.0 * sigma + 1.0 / reps as f64, format!("{freq:.3} vs exact {exact:.4}")))
    }));
    out.push(check("point cloud sanity", || {
        let cloud = PointCloud::from_flat(2, vec![0.1, 0.2, 0.3, 0.4])?;
        Ok((cloud.len() == 2 && cloud.point(1) == [0.3, 0.4], "flat storage".into()))
    }));
    out
}
