//! Deterministic comparison-control families for the coercivity fit: every
//! constant control, single-switch bang controls at grid quantiles, and
//! seeded random controls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::problem::{ControlDomain, PiecewiseControl};

/// Which family blocks to generate and how large the seeded ones are.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilySpec {
    /// One constant control per domain point.
    pub constants: bool,
    /// Number of single-switch bang controls.
    pub switches: usize,
    /// Number of seeded random controls.
    pub random: usize,
    pub seed: u64,
}

impl Default for FamilySpec {
    fn default() -> Self {
        FamilySpec {
            constants: true,
            switches: 20,
            random: 50,
            seed: 0,
        }
    }
}

/// One constant control per domain point, in index order.
pub fn constant_controls(
    domain: &ControlDomain,
    intervals: usize,
) -> Result<Vec<PiecewiseControl>> {
    (0..domain.len())
        .map(|i| PiecewiseControl::constant(i, intervals))
        .collect()
}

/// Bang controls switching once between the first and last domain point.
/// The j-th member switches at interval `j * intervals / (count + 1)`, with
/// the travel direction alternating member to member.
pub fn switch_controls(
    domain: &ControlDomain,
    intervals: usize,
    count: usize,
) -> Result<Vec<PiecewiseControl>> {
    let lo = 0;
    let hi = domain.len() - 1;
    (1..=count)
        .map(|j| {
            let cut = j * intervals / (count + 1);
            let (start, end) = if j % 2 == 1 { (lo, hi) } else { (hi, lo) };
            let values = (0..intervals)
                .map(|k| if k < cut { start } else { end })
                .collect();
            PiecewiseControl::from_values(values)
        })
        .collect()
}

/// Seeded random controls: member `i` draws every interval value uniformly
/// from the domain with its own stream seeded by `seed + i`.
pub fn random_controls(
    domain: &ControlDomain,
    intervals: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<PiecewiseControl>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let values = (0..intervals)
                .map(|_| rng.gen_range(0..domain.len()))
                .collect();
            PiecewiseControl::from_values(values)
        })
        .collect()
}

/// Assemble the full family in block order: constants, switches, randoms.
pub fn generate_family(
    domain: &ControlDomain,
    intervals: usize,
    spec: &FamilySpec,
) -> Result<Vec<PiecewiseControl>> {
    let mut family = Vec::new();
    if spec.constants {
        family.extend(constant_controls(domain, intervals)?);
    }
    family.extend(switch_controls(domain, intervals, spec.switches)?);
    family.extend(random_controls(domain, intervals, spec.random, spec.seed)?);
    Ok(family)
}
