//! Shared fixtures for the benchmarks in `benches/`.

use sobrec_core::recovery::{AlgoConstants, RecoveryPlan};
use sobrec_core::{sample_iid_uniform, Domain, PointCloud, Result};

/// A recovery plan on the unit cube with the widest constants, plus probes.
pub struct Fixture {
    pub domain: Domain,
    pub plan: RecoveryPlan,
    pub probes: PointCloud,
}

pub fn fixture(dim: usize, degree: usize, n: usize, probes: usize) -> Result<Fixture> {
    let domain = Domain::unit_cube(dim)?.with_cone(0.5, std::f64::consts::PI / 5.0)?;
    let mut constants = AlgoConstants::for_domain(&domain, degree);
    constants.c1 = constants.c1_max();
    let points = sample_iid_uniform(&domain, n, 1)?;
    let plan = RecoveryPlan::build(&domain, &points.points, &constants)?;
    let probes = sample_iid_uniform(&domain, probes, 2)?.points;
    Ok(Fixture { domain, plan, probes })
}
