use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cycle::{detect_cycle, DEFAULT_MATCH_TOL, DEFAULT_WINDOW};
use crate::dr::{dr_multivalued, DrStep};
use crate::error::{Error, Result};
use crate::geometry::{ProblemConfig, Side, Vec2, DEFAULT_TIE_TOL};
use crate::lyapunov::{log_v_global, LyapunovCertificate};

/// Fraction of `d(p_i, D3)` used as the convergence-ball radius.
pub const CONVERGENCE_SAFETY: f64 = 0.99;

/// How a trace resolves the two-valued steps on `D3`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BranchPolicy {
    /// Always the `A1` branch.
    #[default]
    FirstBranch,
    /// A fair coin per tie, from a generator seeded with `seed`.
    SeededRandom { seed: u64 },
    /// Breadth-first over tie choices, keeping at most `max_leaves` traces.
    EnumerateTree { max_leaves: usize },
}

impl BranchPolicy {
    /// The same policy with a different seed (no-op for deterministic policies).
    pub fn reseeded(self, seed: u64) -> Self {
        match self {
            BranchPolicy::SeededRandom { .. } => BranchPolicy::SeededRandom { seed },
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BranchPolicy::EnumerateTree { max_leaves: 0 } => Err(Error::Precondition(
                "tree enumeration needs a leaf cap of at least 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

impl FromStr for BranchPolicy {
    type Err = Error;

    /// `first`, `random[:SEED]` or `tree[:LEAVES]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let bad = || Error::Parse(format!("invalid branch policy '{s}'"));
        match (name, arg) {
            ("first", None) => Ok(BranchPolicy::FirstBranch),
            ("random", None) => Ok(BranchPolicy::SeededRandom { seed: 0 }),
            ("random", Some(a)) => Ok(BranchPolicy::SeededRandom {
                seed: a.parse().map_err(|_| bad())?,
            }),
            ("tree", None) => Ok(BranchPolicy::EnumerateTree { max_leaves: 64 }),
            ("tree", Some(a)) => {
                let p = BranchPolicy::EnumerateTree {
                    max_leaves: a.parse().map_err(|_| bad())?,
                };
                p.validate()?;
                Ok(p)
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    /// Entered the convergence ball around `p_i`.
    ConvergedTo(Side),
    Cycle {
        period: usize,
    },
    /// Step budget exhausted.
    Budget,
}

impl Verdict {
    /// 0 = p1, 1 = p2, 2 = cycle, 3 = budget.
    pub fn code(&self) -> u8 {
        match self {
            Verdict::ConvergedTo(Side::One) => 0,
            Verdict::ConvergedTo(Side::Two) => 1,
            Verdict::Cycle { .. } => 2,
            Verdict::Budget => 3,
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, Verdict::ConvergedTo(_))
    }

    pub fn target(&self) -> Option<Side> {
        match self {
            Verdict::ConvergedTo(s) => Some(*s),
            _ => None,
        }
    }

    /// Rebuilds a verdict from its `Display` form and target label.
    pub fn parse(verdict: &str, target: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("invalid verdict '{verdict}' / target '{target}'"));
        match verdict {
            "converged" => match target {
                "p1" => Ok(Verdict::ConvergedTo(Side::One)),
                "p2" => Ok(Verdict::ConvergedTo(Side::Two)),
                _ => Err(bad()),
            },
            "budget" => Ok(Verdict::Budget),
            v => {
                let period = v
                    .strip_prefix("cycle(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(bad)?;
                Ok(Verdict::Cycle { period })
            }
        }
    }

    pub fn target_label(&self) -> &'static str {
        match self.target() {
            Some(Side::One) => "p1",
            Some(Side::Two) => "p2",
            None => "",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::ConvergedTo(_) => write!(f, "converged"),
            Verdict::Cycle { period } => write!(f, "cycle({period})"),
            Verdict::Budget => write!(f, "budget"),
        }
    }
}

/// One solution of the difference inclusion.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub start: Vec2,
    /// Visited points including the start; empty when recording is off.
    pub points: Vec<Vec2>,
    /// Line used at each step; empty when recording is off.
    pub branches: Vec<Side>,
    pub verdict: Verdict,
    pub steps_used: u64,
    /// Last point reached.
    pub end: Vec2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    pub max_steps: u64,
    /// `D3` tie band.
    pub tol: f64,
    /// Trailing points kept for period matching.
    pub window: usize,
    pub match_tol: f64,
    /// Steps between period checks.
    pub check_every: u64,
    /// Keep every visited point in the trace.
    pub record: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            max_steps: 100_000,
            tol: DEFAULT_TIE_TOL,
            window: DEFAULT_WINDOW,
            match_tol: DEFAULT_MATCH_TOL,
            check_every: 64,
            record: true,
        }
    }
}

pub fn convergence_radius(cfg: &ProblemConfig, side: Side) -> f64 {
    CONVERGENCE_SAFETY * cfg.distance_to_d3(cfg.anchor(side))
}

/// Steps after which a certified iteration is guaranteed to be inside one of
/// the convergence balls: the smallest `n` with
/// `gamma^n V(x0) < r^(2 alpha + 2)`, `r` the smaller ball radius.
pub fn certified_step_bound(cert: &LyapunovCertificate, cfg: &ProblemConfig, x0: Vec2) -> u64 {
    let r = convergence_radius(cfg, Side::One).min(convergence_radius(cfg, Side::Two));
    let target = (2.0 * cert.alpha + 2.0) * r.ln();
    let start = log_v_global(cert, cfg, x0);
    if start < target {
        return 0;
    }
    let n = ((target - start) / cert.gamma.ln()).floor() + 1.0;
    if n.is_finite() {
        n as u64
    } else {
        u64::MAX
    }
}

struct Runner<'a> {
    cfg: &'a ProblemConfig,
    opts: &'a SimOptions,
    radii: [f64; 2],
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ProblemConfig, opts: &'a SimOptions) -> Self {
        Self {
            cfg,
            opts,
            radii: [
                convergence_radius(cfg, Side::One),
                convergence_radius(cfg, Side::Two),
            ],
        }
    }

    fn converged(&self, x: Vec2) -> Option<Side> {
        Side::BOTH
            .into_iter()
            .zip(self.radii)
            .find(|&(side, r)| x.dist(self.cfg.anchor(side)) < r)
            .map(|(side, _)| side)
    }

    /// `choose` picks the output index for every multivalued step.
    fn run(&self, x0: Vec2, mut choose: impl FnMut(&DrStep) -> usize) -> Trace {
        let opts = self.opts;
        let mut x = x0;
        let mut points = Vec::new();
        let mut branches = Vec::new();
        if opts.record {
            points.push(x0);
        }
        let mut window = VecDeque::with_capacity(opts.window + 1);
        window.push_back(x0);
        let mut step = 0u64;
        let verdict = loop {
            if let Some(side) = self.converged(x) {
                break Verdict::ConvergedTo(side);
            }
            if step >= opts.max_steps {
                break Verdict::Budget;
            }
            let s = dr_multivalued(self.cfg, x, opts.tol);
            let idx = if s.is_multivalued() { choose(&s) } else { 0 };
            let (side, next) = s.branches().nth(idx).expect("branch index in range");
            x = next;
            step += 1;
            if opts.record {
                points.push(x);
                branches.push(side);
            }
            window.push_back(x);
            if window.len() > opts.window {
                window.pop_front();
            }
            if step.is_multiple_of(opts.check_every) && window.len() >= 4 {
                if let Some(period) = detect_cycle(window.make_contiguous(), opts.match_tol) {
                    break Verdict::Cycle { period };
                }
            }
        };
        Trace {
            start: x0,
            points,
            branches,
            verdict,
            steps_used: step,
            end: x,
        }
    }
}

/// Iterates `T_{A,B}` from `x0` under `policy` until the trace enters a
/// convergence ball, settles on a periodic orbit, or uses `max_steps`.
pub fn simulate(
    cfg: &ProblemConfig,
    x0: Vec2,
    policy: BranchPolicy,
    max_steps: u64,
    tol: f64,
) -> Trace {
    let opts = SimOptions {
        max_steps,
        tol,
        ..SimOptions::default()
    };
    simulate_with(cfg, x0, policy, &opts)
}

/// [`simulate`] with every knob exposed. Under tree enumeration the least
/// favourable leaf is returned: the first one that did not converge, otherwise
/// the longest.
pub fn simulate_with(
    cfg: &ProblemConfig,
    x0: Vec2,
    policy: BranchPolicy,
    opts: &SimOptions,
) -> Trace {
    let runner = Runner::new(cfg, opts);
    match policy {
        BranchPolicy::FirstBranch => runner.run(x0, |_| 0),
        BranchPolicy::SeededRandom { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            runner.run(x0, |_| usize::from(rng.random::<bool>()))
        }
        BranchPolicy::EnumerateTree { max_leaves } => {
            let leaves = enumerate_traces(cfg, x0, max_leaves, opts);
            let worst = leaves
                .iter()
                .position(|t| !t.verdict.is_converged())
                .or_else(|| {
                    leaves
                        .iter()
                        .enumerate()
                        .max_by_key(|(_, t)| t.steps_used)
                        .map(|(i, _)| i)
                })
                .unwrap_or(0);
            leaves.into_iter().nth(worst).expect("at least one leaf")
        }
    }
}

/// Breadth-first enumeration of branch choices at ties, capped at
/// `max_leaves` traces. Ties beyond the cap follow the `A1` branch.
pub fn enumerate_traces(
    cfg: &ProblemConfig,
    x0: Vec2,
    max_leaves: usize,
    opts: &SimOptions,
) -> Vec<Trace> {
    let runner = Runner::new(cfg, opts);
    let cap = max_leaves.max(1);
    // a leaf is identified by its choices at the successive ties
    let mut queue: VecDeque<Vec<usize>> = VecDeque::from([Vec::new()]);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut planned = 1usize;
    let mut leaves = Vec::new();
    while let Some(prefix) = queue.pop_front() {
        let mut choices = Vec::new();
        let trace = runner.run(x0, |_| {
            let c = prefix.get(choices.len()).copied().unwrap_or(0);
            choices.push(c);
            c
        });
        for j in prefix.len()..choices.len() {
            if planned >= cap {
                break;
            }
            let mut sibling = choices[..j].to_vec();
            sibling.push(1);
            if seen.insert(sibling.clone()) {
                queue.push_back(sibling);
                planned += 1;
            }
        }
        leaves.push(trace);
    }
    leaves
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::certify;
    use std::f64::consts::{FRAC_PI_3, PI};

    fn reference() -> ProblemConfig {
        ProblemConfig::new(FRAC_PI_3, 2.0 * PI / 5.0).unwrap()
    }

    #[test]
    fn start_at_fixed_point() {
        let cfg = reference();
        let t = simulate(&cfg, cfg.p1, BranchPolicy::FirstBranch, 10, DEFAULT_TIE_TOL);
        assert_eq!(t.verdict, Verdict::ConvergedTo(Side::One));
        assert_eq!(t.steps_used, 0);
        assert_eq!(t.points, vec![cfg.p1]);
    }

    #[test]
    fn certified_config_converges() {
        let cfg = reference();
        let t = simulate(
            &cfg,
            Vec2::new(0.1, 0.2),
            BranchPolicy::FirstBranch,
            10_000,
            DEFAULT_TIE_TOL,
        );
        let side = t.verdict.target().expect("converged");
        assert!(t.end.dist(cfg.anchor(side)) < cfg.distance_to_d3(cfg.anchor(side)));
        assert_eq!(t.points.len() as u64, t.steps_used + 1);
        assert_eq!(t.branches.len() as u64, t.steps_used);
    }

    #[test]
    fn period_two_orbit() {
        let cfg = ProblemConfig::new(0.748491, 0.772301).unwrap();
        let t = simulate(
            &cfg,
            Vec2::new(0.101912, 0.189275),
            BranchPolicy::FirstBranch,
            100_000,
            DEFAULT_TIE_TOL,
        );
        assert_eq!(t.verdict, Verdict::Cycle { period: 2 });
        let n = t.points.len();
        assert!(t.points[n - 1].dist(t.points[n - 3]) < 1e-7);
    }

    #[test]
    fn budget_verdict() {
        let cfg = ProblemConfig::new(0.748491, 0.772301).unwrap();
        let t = simulate(
            &cfg,
            Vec2::new(0.101912, 0.189275),
            BranchPolicy::FirstBranch,
            3,
            DEFAULT_TIE_TOL,
        );
        assert_eq!(t.verdict, Verdict::Budget);
        assert_eq!(t.steps_used, 3);
    }

    #[test]
    fn certified_budget_is_respected() {
        let cfg = reference();
        let cert = *certify(&cfg).certificate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..2000 {
            let x0 = Vec2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let bound = certified_step_bound(&cert, &cfg, x0);
            let t = simulate(
                &cfg,
                x0,
                BranchPolicy::FirstBranch,
                bound + 1,
                DEFAULT_TIE_TOL,
            );
            assert!(t.verdict.is_converged(), "{x0:?} {:?}", t.verdict);
            assert!(t.steps_used <= bound);
        }
    }

    #[test]
    fn convergence_ball_is_invariant() {
        let cfg = reference();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for side in Side::BOTH {
            let p = cfg.anchor(side);
            let r = convergence_radius(&cfg, side);
            let c2 = cfg.theta(side).cos().powi(2);
            for _ in 0..10_000 {
                let x = p
                    + (r * rng.random::<f64>().sqrt())
                        * Vec2::from_angle(rng.random_range(0.0..2.0 * PI));
                let s = dr_multivalued(&cfg, x, DEFAULT_TIE_TOL);
                assert_eq!(s.outputs().len(), 1);
                let y = s.first();
                assert!(y.dist(p) < r);
                let (v0, v1) = ((x - p).norm_sq(), (y - p).norm_sq());
                assert!((v1 - c2 * v0).abs() <= 1e-12 * (1.0 + v0));
            }
        }
    }

    #[test]
    fn random_policy_is_reproducible() {
        let cfg = reference();
        let c = cfg.bisector_data().c;
        let a = simulate(
            &cfg,
            c,
            BranchPolicy::SeededRandom { seed: 4 },
            1000,
            DEFAULT_TIE_TOL,
        );
        let b = simulate(
            &cfg,
            c,
            BranchPolicy::SeededRandom { seed: 4 },
            1000,
            DEFAULT_TIE_TOL,
        );
        assert_eq!(a, b);
    }

    #[test]
    fn tree_enumeration_splits_at_ties() {
        let cfg = reference();
        let c = cfg.bisector_data().c;
        let opts = SimOptions::default();
        let leaves = enumerate_traces(&cfg, c, 8, &opts);
        assert!(leaves.len() >= 2 && leaves.len() <= 8);
        assert_ne!(leaves[0].branches[0], leaves[1].branches[0]);
        assert!(leaves.iter().all(|t| t.verdict.is_converged()));
        let one = enumerate_traces(&cfg, c, 1, &opts);
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn policy_parsing() {
        assert_eq!(
            "first".parse::<BranchPolicy>().unwrap(),
            BranchPolicy::FirstBranch
        );
        assert_eq!(
            "random:9".parse::<BranchPolicy>().unwrap(),
            BranchPolicy::SeededRandom { seed: 9 }
        );
        assert_eq!(
            "tree:5".parse::<BranchPolicy>().unwrap(),
            BranchPolicy::EnumerateTree { max_leaves: 5 }
        );
        assert!("tree:0".parse::<BranchPolicy>().is_err());
        assert!("sideways".parse::<BranchPolicy>().is_err());
    }

    #[test]
    fn verdict_text_roundtrip() {
        for v in [
            Verdict::ConvergedTo(Side::One),
            Verdict::ConvergedTo(Side::Two),
            Verdict::Cycle { period: 58 },
            Verdict::Budget,
        ] {
            assert_eq!(Verdict::parse(&v.to_string(), v.target_label()).unwrap(), v);
        }
    }
}
