//! Local Lyapunov functions `V_i(x) = |x - p_i|^2`, the global candidate
//! `V = V1^alpha V2`, certificate construction and the increase-ball
//! machinery used to glue the local functions together.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dr::{dr_branch, dr_multivalued, DrStep};
use crate::error::{Error, Result};
use crate::geometry::{cos_sin, ProblemConfig, Side, Vec2};

/// `V1` below this is treated as an exact zero.
pub const V_ZERO_THRESHOLD: f64 = 1e-300;

/// Rounding allowance for [`verify_containment`] at the boundary case
/// `rho = (1 + sin theta1)(1 + sin theta2)`, where the exact margin is zero.
pub const CONTAINMENT_ROUNDING: f64 = 1e-12;

/// `(1 + sin theta1)(1 + sin theta2)`.
pub fn growth_factor(cfg: &ProblemConfig) -> f64 {
    let (_, s1) = cos_sin(cfg.theta1);
    let (_, s2) = cos_sin(cfg.theta2);
    (1.0 + s1) * (1.0 + s2)
}

fn cos_sq(theta: f64) -> f64 {
    let (c, _) = cos_sin(theta);
    c * c
}

/// `log(cos^2 theta1) log(cos^2 theta2) - (log P)^2`; positive iff the
/// angle condition for the certificate holds. `+inf` when either angle is
/// `pi/2`.
pub fn angle_condition_margin(cfg: &ProblemConfig) -> f64 {
    let lp = growth_factor(cfg).ln();
    cos_sq(cfg.theta1).ln() * cos_sq(cfg.theta2).ln() - lp * lp
}

pub fn v_local(cfg: &ProblemConfig, side: Side, x: Vec2) -> f64 {
    (x - cfg.anchor(side)).norm_sq()
}

/// Exponent `alpha` and rate `gamma` for which `V = V1^alpha V2` decays by
/// `gamma` along every branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    pub theta1: f64,
    pub theta2: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub alpha_min: f64,
    /// `+inf` when `theta2 = pi/2`; serialized as `null`.
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub alpha_max: f64,
    /// Same quantity as [`angle_condition_margin`]; `+inf` (`null`) in the right-angle cases.
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub condition_margin: f64,
    pub special_case: bool,
}

fn ser_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_extended<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl LyapunovCertificate {
    /// The two inequalities `(cos^2 t1)^a P <= gamma` and
    /// `cos^2 t2 P^a <= gamma`, as their left-hand sides.
    pub fn condition_values(&self) -> (f64, f64) {
        condition_values(self.theta1, self.theta2, self.alpha)
    }

    /// `gamma - max(condition values)`; non-negative for a sound certificate.
    pub fn condition_slack(&self) -> f64 {
        let (a, b) = self.condition_values();
        self.gamma - a.max(b)
    }

    /// Certificate JSON with every number printed to 17 significant digits.
    pub fn to_json(&self) -> String {
        let num = |v: f64| {
            if v.is_finite() {
                format!("{v:.16e}")
            } else {
                "null".to_string()
            }
        };
        format!(
            "{{\"theta1\":{},\"theta2\":{},\"alpha\":{},\"gamma\":{},\"alpha_min\":{},\"alpha_max\":{},\"condition_margin\":{},\"special_case\":{}}}",
            num(self.theta1),
            num(self.theta2),
            num(self.alpha),
            num(self.gamma),
            num(self.alpha_min),
            num(self.alpha_max),
            num(self.condition_margin),
            self.special_case
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn condition_values(theta1: f64, theta2: f64, alpha: f64) -> (f64, f64) {
    let p = {
        let (_, s1) = cos_sin(theta1);
        let (_, s2) = cos_sin(theta2);
        (1.0 + s1) * (1.0 + s2)
    };
    (
        cos_sq(theta1).powf(alpha) * p,
        cos_sq(theta2) * p.powf(alpha),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Certification {
    Feasible(LyapunovCertificate),
    /// The angle condition fails; `condition_margin <= 0`.
    Infeasible {
        condition_margin: f64,
    },
}

impl Certification {
    pub fn certificate(&self) -> Option<&LyapunovCertificate> {
        match self {
            Certification::Feasible(c) => Some(c),
            Certification::Infeasible { .. } => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Certification::Feasible(_))
    }

    pub fn condition_margin(&self) -> f64 {
        match self {
            Certification::Feasible(c) => c.condition_margin,
            Certification::Infeasible { condition_margin } => *condition_margin,
        }
    }
}

/// Builds `(alpha, gamma)` for `cfg`.
///
/// In the general case `alpha` is the midpoint of
/// `[ln P / ln(1/cos^2 t1), ln(1/cos^2 t2) / ln P]` and `gamma` the larger of
/// the two condition values at that `alpha`. When `theta1 = pi/2` the lower
/// end is 0 and `alpha` is half the upper end; when `theta2 = pi/2` the upper
/// end is unbounded and `alpha` is twice the lower end.
pub fn certify(cfg: &ProblemConfig) -> Certification {
    let p = growth_factor(cfg);
    let lp = p.ln();
    let margin = angle_condition_margin(cfg);
    let finish = |alpha: f64, alpha_min: f64, alpha_max: f64, special_case: bool| {
        let (a, b) = condition_values(cfg.theta1, cfg.theta2, alpha);
        Certification::Feasible(LyapunovCertificate {
            theta1: cfg.theta1,
            theta2: cfg.theta2,
            alpha,
            gamma: a.max(b),
            alpha_min,
            alpha_max,
            condition_margin: margin,
            special_case,
        })
    };
    if cfg.theta1 == FRAC_PI_2 {
        // theta2 > theta1, so theta2 != pi/2
        let alpha_max = (1.0 / cos_sq(cfg.theta2)).ln() / lp;
        return finish(0.5 * alpha_max, 0.0, alpha_max, true);
    }
    if cfg.theta2 == FRAC_PI_2 {
        let alpha_min = lp / (1.0 / cos_sq(cfg.theta1)).ln();
        return finish(2.0 * alpha_min, alpha_min, f64::INFINITY, true);
    }
    if margin.is_nan() || margin <= 0.0 {
        return Certification::Infeasible {
            condition_margin: margin,
        };
    }
    let alpha_min = lp / (1.0 / cos_sq(cfg.theta1)).ln();
    let alpha_max = (1.0 / cos_sq(cfg.theta2)).ln() / lp;
    let cert = finish(0.5 * (alpha_min + alpha_max), alpha_min, alpha_max, false);
    match cert {
        Certification::Feasible(c) if c.gamma < 1.0 => cert,
        // margin so small that rounding closes the interval
        _ => Certification::Infeasible {
            condition_margin: margin,
        },
    }
}

/// `ln V(x)`; `-inf` at `p1` and `p2`.
pub fn log_v_global(cert: &LyapunovCertificate, cfg: &ProblemConfig, x: Vec2) -> f64 {
    let v1 = v_local(cfg, Side::One, x);
    let v2 = v_local(cfg, Side::Two, x);
    if v1 < V_ZERO_THRESHOLD || v2 == 0.0 {
        return f64::NEG_INFINITY;
    }
    cert.alpha * v1.ln() + v2.ln()
}

/// `V(x) = V1(x)^alpha V2(x)`.
pub fn v_global(cert: &LyapunovCertificate, cfg: &ProblemConfig, x: Vec2) -> f64 {
    let v1 = v_local(cfg, Side::One, x);
    let v2 = v_local(cfg, Side::Two, x);
    if v1 < V_ZERO_THRESHOLD || v2 == 0.0 {
        return 0.0;
    }
    let direct = v1.powf(cert.alpha) * v2;
    if direct.is_normal() {
        direct
    } else {
        log_v_global(cert, cfg, x).exp()
    }
}

/// The measures `omega1 = min |x - p_i|`, `omega2 = max |x - p_i|` and the
/// comparison function `phi(r) = r^(2 alpha + 2)` evaluated at both.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sandwich {
    pub omega1: f64,
    pub omega2: f64,
    pub phi_of_omega1: f64,
    pub phi_of_omega2: f64,
}

impl Sandwich {
    pub fn contains(&self, v: f64, rel_tol: f64) -> bool {
        self.phi_of_omega1 <= v * (1.0 + rel_tol) && v <= self.phi_of_omega2 * (1.0 + rel_tol)
    }
}

pub fn sandwich_bounds(cert: &LyapunovCertificate, cfg: &ProblemConfig, x: Vec2) -> Sandwich {
    let d1 = x.dist(cfg.p1);
    let d2 = x.dist(cfg.p2);
    let omega1 = d1.min(d2);
    let omega2 = d1.max(d2);
    let exponent = 2.0 * cert.alpha + 2.0;
    Sandwich {
        omega1,
        omega2,
        phi_of_omega1: omega1.powf(exponent),
        phi_of_omega2: omega2.powf(exponent),
    }
}

/// The open ball where `V_i` grows by more than `rho` under the other line's
/// operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IncreaseBall {
    pub center: Vec2,
    pub radius: f64,
    pub side: Side,
    pub rho: f64,
}

impl IncreaseBall {
    pub fn contains(&self, x: Vec2) -> bool {
        x.dist(self.center) < self.radius
    }
}

/// The defining inequality `V_i(T_{A_j,B} x) > rho V_i(x)`, `j` the other side.
pub fn in_increase_set(cfg: &ProblemConfig, side: Side, rho: f64, x: Vec2) -> bool {
    let y = dr_branch(cfg, side.other(), x);
    v_local(cfg, side, y) > rho * v_local(cfg, side, x)
}

pub fn increase_ball(cfg: &ProblemConfig, side: Side, rho: f64) -> Result<IncreaseBall> {
    let other = cfg.theta(side.other());
    let (c, s) = cos_sin(other);
    let denom = rho - c * c;
    if denom.is_nan() || denom <= 0.0 || !rho.is_finite() {
        return Err(Error::Precondition(format!(
            "rho = {rho} must exceed cos^2(theta{}) = {}",
            side.other().number(),
            c * c
        )));
    }
    let offset = c * s / denom;
    let center = match side {
        Side::One => cfg.p1 + offset * Vec2::E2,
        Side::Two => cfg.p2 - offset * Vec2::E2,
    };
    Ok(IncreaseBall {
        center,
        radius: rho.sqrt() * s / denom,
        side,
        rho,
    })
}

/// Outcome of comparing analytic ball membership against the defining
/// inequality on random samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallReport {
    pub samples: usize,
    pub skipped: usize,
    pub disagreements: usize,
    /// Largest `| |x - center| - radius |` over disagreeing samples.
    pub max_disagreement_distance: f64,
}

const BALL_PARTITIONS: u64 = 16;

/// Samples `n_samples` points uniformly in a box of half-width `1.5 radius`
/// around the ball center and compares both membership tests.
pub fn verify_ball_bruteforce(
    cfg: &ProblemConfig,
    side: Side,
    rho: f64,
    n_samples: usize,
    seed: u64,
) -> Result<BallReport> {
    let ball = increase_ball(cfg, side, rho)?;
    let half = 1.5 * ball.radius;
    let anchor = cfg.anchor(side);
    let per = n_samples.div_ceil(BALL_PARTITIONS as usize);
    let reports: Vec<BallReport> = (0..BALL_PARTITIONS)
        .into_par_iter()
        .map(|part| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(part);
            let start = part as usize * per;
            let count = per.min(n_samples.saturating_sub(start));
            let mut rep = BallReport {
                samples: 0,
                skipped: 0,
                disagreements: 0,
                max_disagreement_distance: 0.0,
            };
            for _ in 0..count {
                let x = ball.center
                    + Vec2::new(rng.random_range(-half..half), rng.random_range(-half..half));
                if x == anchor {
                    rep.skipped += 1;
                    continue;
                }
                rep.samples += 1;
                if ball.contains(x) != in_increase_set(cfg, side, rho, x) {
                    rep.disagreements += 1;
                    let gap = (x.dist(ball.center) - ball.radius).abs();
                    rep.max_disagreement_distance = rep.max_disagreement_distance.max(gap);
                }
            }
            rep
        })
        .collect();
    Ok(reports.into_iter().fold(
        BallReport {
            samples: 0,
            skipped: 0,
            disagreements: 0,
            max_disagreement_distance: 0.0,
        },
        |a, b| BallReport {
            samples: a.samples + b.samples,
            skipped: a.skipped + b.skipped,
            disagreements: a.disagreements + b.disagreements,
            max_disagreement_distance: a.max_disagreement_distance.max(b.max_disagreement_distance),
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Containment {
    pub ball: IncreaseBall,
    /// Distance from the ball center to its own line `A_i`.
    pub center_to_own_line: f64,
    /// Distance from the ball center to the other line.
    pub center_to_other_line: f64,
    pub center_in_region: bool,
    /// `d(center, D3) - radius`.
    pub margin: f64,
    pub contained: bool,
}

/// Checks that the increase ball lies inside `D_i`: its center is strictly
/// closer to `A_i`, and its radius does not exceed the center's distance to
/// `D3` (up to [`CONTAINMENT_ROUNDING`]).
pub fn verify_containment(cfg: &ProblemConfig, side: Side, rho: f64) -> Result<Containment> {
    let p = growth_factor(cfg);
    if rho.is_nan() || rho < p {
        return Err(Error::Precondition(format!(
            "rho = {rho} must be at least (1 + sin theta1)(1 + sin theta2) = {p}"
        )));
    }
    let ball = increase_ball(cfg, side, rho)?;
    let (c1, s1) = cos_sin(cfg.theta1);
    let (c2, s2) = cos_sin(cfg.theta2);
    let (own, other) = match side {
        Side::One => {
            let denom = rho - c2 * c2;
            (
                (c1 * c2 * s2 / denom).abs(),
                (c2 * c2 * s2 / denom + s2).abs(),
            )
        }
        Side::Two => {
            let denom = rho - c1 * c1;
            (
                (c1 * s1 * c2 / denom).abs(),
                (s1 + c1 * c1 * s1 / denom).abs(),
            )
        }
    };
    let margin = cfg.distance_to_d3(ball.center) - ball.radius;
    let center_in_region = own < other;
    Ok(Containment {
        ball,
        center_to_own_line: own,
        center_to_other_line: other,
        center_in_region,
        margin,
        contained: center_in_region && margin >= -CONTAINMENT_ROUNDING,
    })
}

/// `max_{y in step} V(y) <= gamma V(x) (1 + tol)`, compared in log space.
pub fn decrease_holds(
    cert: &LyapunovCertificate,
    cfg: &ProblemConfig,
    step: &DrStep,
    tol: f64,
) -> bool {
    let lhs = step
        .outputs()
        .iter()
        .map(|&y| log_v_global(cert, cfg, y))
        .fold(f64::NEG_INFINITY, f64::max);
    if lhs == f64::NEG_INFINITY {
        return true;
    }
    let rhs = cert.gamma.ln() + log_v_global(cert, cfg, step.input) + tol.ln_1p();
    lhs <= rhs
}

pub fn decrease_check(cert: &LyapunovCertificate, cfg: &ProblemConfig, x: Vec2, tol: f64) -> bool {
    decrease_holds(cert, cfg, &dr_multivalued(cfg, x, tol), tol)
}

/// `min(V1, V2)`. Diagnostic only.
pub fn v_min_diagnostic(cfg: &ProblemConfig, x: Vec2) -> f64 {
    v_local(cfg, Side::One, x).min(v_local(cfg, Side::Two, x))
}
