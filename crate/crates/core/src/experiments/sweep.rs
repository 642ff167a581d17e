use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::simulate::{
    certified_step_bound, simulate_with, BranchPolicy, SimOptions, Trace, Verdict,
};
use crate::error::{Error, Result};
use crate::geometry::{ProblemConfig, Vec2};
use crate::lyapunov::{angle_condition_margin, certify, LyapunovCertificate};

/// Half-width of the square `[-SWEEP_BOX, SWEEP_BOX]^2` that sweep starts are drawn from.
pub const SWEEP_BOX: f64 = 2.0;

/// Extra steps granted on top of the certified bound.
const CERTIFIED_MARGIN: u64 = 16;

/// Angle pairs to evaluate, admissible ones only.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaGrid {
    pairs: Vec<(f64, f64)>,
}

impl ThetaGrid {
    /// `theta1 = (i+1) (pi/2) / n1` and `theta2 = (j+1/2) pi / n2`, keeping
    /// pairs with `theta1 < theta2`.
    pub fn uniform(n1: usize, n2: usize) -> Self {
        let mut pairs = Vec::new();
        for i in 0..n1 {
            let t1 = (i + 1) as f64 * FRAC_PI_2 / n1 as f64;
            for j in 0..n2 {
                let t2 = (j as f64 + 0.5) * PI / n2 as f64;
                if ProblemConfig::new(t1, t2).is_ok() {
                    pairs.push((t1, t2));
                }
            }
        }
        Self { pairs }
    }

    pub fn from_pairs(pairs: Vec<(f64, f64)>) -> Result<Self> {
        for &(t1, t2) in &pairs {
            ProblemConfig::new(t1, t2)?;
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub theta1: f64,
    pub theta2: f64,
    pub angle_condition_margin: f64,
    /// A certificate exists for this pair.
    pub certified: bool,
    pub nonconvergent_found: bool,
    /// Sample seed of the first non-converging start, see [`sweep_sample`].
    pub worst_seed: Option<u64>,
    pub worst_verdict: Option<Verdict>,
}

/// One CSV row of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub theta1: f64,
    pub theta2: f64,
    pub angle_condition_margin: f64,
    pub nonconvergent_found: bool,
    pub worst_seed: Option<u64>,
}

impl SweepCell {
    pub fn record(&self) -> SweepRecord {
        SweepRecord {
            theta1: self.theta1,
            theta2: self.theta2,
            angle_condition_margin: self.angle_condition_margin,
            nonconvergent_found: self.nonconvergent_found,
            worst_seed: self.worst_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub cells: Vec<SweepCell>,
    pub samples_per_pair: usize,
    pub max_steps: u64,
    pub seed: u64,
}

impl SweepGrid {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = crate::csv_writer(out);
        w.write_record([
            "theta1",
            "theta2",
            "angle_condition_margin",
            "nonconvergent_found",
            "worst_seed",
        ])?;
        for c in &self.cells {
            w.write_record([
                format!("{:.16e}", c.theta1),
                format!("{:.16e}", c.theta2),
                format!("{:.16e}", c.angle_condition_margin),
                c.nonconvergent_found.to_string(),
                c.worst_seed.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepRecord>> {
        let mut r = csv::Reader::from_reader(input);
        r.deserialize()
            .map(|rec| rec.map_err(Error::from))
            .collect()
    }

    /// Pairs that carry a certificate yet produced a non-converging start.
    pub fn contradictions(&self) -> impl Iterator<Item = &SweepCell> {
        self.cells
            .iter()
            .filter(|c| c.certified && c.nonconvergent_found)
    }
}

/// Replays one sweep sample: the start point and tie seed are drawn from
/// `sample_seed`. Certified pairs get at least the certified step bound.
pub fn sweep_sample(
    cfg: &ProblemConfig,
    cert: Option<&LyapunovCertificate>,
    sample_seed: u64,
    policy: BranchPolicy,
    max_steps: u64,
) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let x0 = Vec2::new(
        rng.random_range(-SWEEP_BOX..=SWEEP_BOX),
        rng.random_range(-SWEEP_BOX..=SWEEP_BOX),
    );
    let policy = policy.reseeded(rng.next_u64());
    let budget = match cert {
        Some(c) => max_steps.max(certified_step_bound(c, cfg, x0).saturating_add(CERTIFIED_MARGIN)),
        None => max_steps,
    };
    let opts = SimOptions {
        max_steps: budget,
        record: false,
        ..SimOptions::default()
    };
    simulate_with(cfg, x0, policy, &opts)
}

/// Certifies every pair and simulates `samples_per_pair` random starts in
/// `[-2, 2]^2`. Sample `s` of pair `k` uses seed `derive_seed(seed, k * samples_per_pair + s)`.
pub fn sweep(
    grid: &ThetaGrid,
    samples_per_pair: usize,
    policy: BranchPolicy,
    max_steps: u64,
    seed: u64,
) -> Result<SweepGrid> {
    policy.validate()?;
    if max_steps == 0 {
        return Err(Error::Precondition("max_steps must be at least 1".into()));
    }
    let configs = grid
        .pairs()
        .iter()
        .map(|&(t1, t2)| ProblemConfig::new(t1, t2))
        .collect::<Result<Vec<_>>>()?;
    let cells = configs
        .par_iter()
        .enumerate()
        .map(|(k, cfg)| {
            let certification = certify(cfg);
            let cert = certification.certificate();
            let mut cell = SweepCell {
                theta1: cfg.theta1,
                theta2: cfg.theta2,
                angle_condition_margin: angle_condition_margin(cfg),
                certified: certification.is_feasible(),
                nonconvergent_found: false,
                worst_seed: None,
                worst_verdict: None,
            };
            for s in 0..samples_per_pair {
                let sample_seed = derive_seed(seed, (k * samples_per_pair + s) as u64);
                let t = sweep_sample(cfg, cert, sample_seed, policy, max_steps);
                if !t.verdict.is_converged() {
                    cell.nonconvergent_found = true;
                    cell.worst_seed = Some(sample_seed);
                    cell.worst_verdict = Some(t.verdict);
                    break;
                }
            }
            cell
        })
        .collect();
    Ok(SweepGrid {
        cells,
        samples_per_pair,
        max_steps,
        seed,
    })
}
