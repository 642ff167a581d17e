//! Planar primitives for the two-lines-and-a-line geometry.
//!
//! The non-convex set is `A = A1 ∪ A2`, two lines through `p1 = (-1/2, 0)` and
//! `p2 = (1/2, 0)` at angles `theta1 < theta2` from the positive x-axis; the
//! convex set `B` is the x-axis. Everything here is a pure function of
//! immutable values.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative half-width of the `D3` tie band.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

/// Angles closer than this to `pi/2` are snapped to exactly `pi/2`.
pub const RIGHT_ANGLE_SNAP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };
    pub const E1: Vec2 = Vec2 { x: 1.0, y: 0.0 };
    pub const E2: Vec2 = Vec2 { x: 0.0, y: 1.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Unit vector at `angle` radians from the positive x-axis.
    pub fn from_angle(angle: f64) -> Self {
        let (c, s) = cos_sin(angle);
        Self::new(c, s)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, rhs: Vec2) -> Vec2 {
        rhs * self
    }
}

/// `(cos, sin)` of an angle, exact at `0` and `pi/2`.
pub fn cos_sin(angle: f64) -> (f64, f64) {
    if angle == FRAC_PI_2 {
        (0.0, 1.0)
    } else if angle == 0.0 {
        (1.0, 0.0)
    } else {
        (angle.cos(), angle.sin())
    }
}

/// Which of the two lines (and, equally, which intersection point, local
/// Lyapunov function or operator branch) is meant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    One,
    Two,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::One, Side::Two];

    pub fn other(self) -> Side {
        match self {
            Side::One => Side::Two,
            Side::Two => Side::One,
        }
    }

    /// 1 or 2.
    pub fn number(self) -> u8 {
        match self {
            Side::One => 1,
            Side::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Side> {
        match n {
            1 => Some(Side::One),
            2 => Some(Side::Two),
            _ => None,
        }
    }
}

/// A line stored as anchor point plus angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line {
    pub anchor: Vec2,
    pub angle: f64,
    /// `(cos angle, sin angle)`
    pub direction: Vec2,
    /// `(sin angle, -cos angle)`
    pub normal: Vec2,
}

impl Line {
    pub fn new(anchor: Vec2, angle: f64) -> Self {
        let (c, s) = cos_sin(angle);
        Self {
            anchor,
            angle,
            direction: Vec2::new(c, s),
            normal: Vec2::new(s, -c),
        }
    }

    pub fn x_axis() -> Self {
        Self::new(Vec2::ZERO, 0.0)
    }

    /// Signed offset of `x` along the normal.
    pub fn signed_distance(&self, x: Vec2) -> f64 {
        (x - self.anchor).dot(self.normal)
    }

    pub fn distance(&self, x: Vec2) -> f64 {
        self.signed_distance(x).abs()
    }

    pub fn project(&self, x: Vec2) -> Vec2 {
        x - self.signed_distance(x) * self.normal
    }

    pub fn reflect(&self, x: Vec2) -> Vec2 {
        x - 2.0 * self.signed_distance(x) * self.normal
    }
}

pub fn project(line: &Line, x: Vec2) -> Vec2 {
    line.project(x)
}

pub fn reflect(line: &Line, x: Vec2) -> Vec2 {
    line.reflect(x)
}

pub fn distance_to_line(line: &Line, x: Vec2) -> f64 {
    line.distance(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    /// `A1` strictly closer.
    D1,
    /// `A2` strictly closer.
    D2,
    /// Equidistant, up to the tie band.
    D3,
}

impl RegionLabel {
    pub fn of_side(side: Side) -> RegionLabel {
        match side {
            Side::One => RegionLabel::D1,
            Side::Two => RegionLabel::D2,
        }
    }
}

/// Intersection `c` of `A1` and `A2` and the unit normals of the two angle
/// bisectors through `c`. Their union is `D3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BisectorData {
    pub c: Vec2,
    pub n1: Vec2,
    pub n2: Vec2,
}

impl BisectorData {
    pub fn distance(&self, x: Vec2) -> f64 {
        let d = self.c - x;
        d.dot(self.n1).abs().min(d.dot(self.n2).abs())
    }
}

/// Angles `(theta1, theta2)` with the derived anchors and lines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemConfig {
    pub theta1: f64,
    pub theta2: f64,
    pub p1: Vec2,
    pub p2: Vec2,
    pub a1: Line,
    pub a2: Line,
    pub b: Line,
    bisector: BisectorData,
}

impl ProblemConfig {
    /// Requires `0 < theta1 <= pi/2` and `theta1 < theta2 < pi`. Angles within
    /// [`RIGHT_ANGLE_SNAP`] of `pi/2` are replaced by `pi/2`.
    pub fn new(theta1: f64, theta2: f64) -> Result<Self> {
        if !theta1.is_finite() || !theta2.is_finite() {
            return Err(Error::InvalidAngles(format!(
                "angles must be finite (theta1 = {theta1}, theta2 = {theta2})"
            )));
        }
        let theta1 = snap_right_angle(theta1);
        let theta2 = snap_right_angle(theta2);
        if !(theta1 > 0.0 && theta1 <= FRAC_PI_2) {
            return Err(Error::InvalidAngles(format!(
                "theta1 must satisfy 0 < theta1 <= pi/2 (got {theta1})"
            )));
        }
        if theta2 <= theta1 {
            return Err(Error::InvalidAngles(format!(
                "theta2 must exceed theta1 (got theta1 = {theta1}, theta2 = {theta2})"
            )));
        }
        if theta2 >= PI {
            return Err(Error::InvalidAngles(format!(
                "theta2 must be below pi (got {theta2})"
            )));
        }
        let p1 = Vec2::new(-0.5, 0.0);
        let p2 = Vec2::new(0.5, 0.0);
        Ok(Self {
            theta1,
            theta2,
            p1,
            p2,
            a1: Line::new(p1, theta1),
            a2: Line::new(p2, theta2),
            b: Line::x_axis(),
            bisector: closed_form_bisector(theta1, theta2),
        })
    }

    pub fn anchor(&self, side: Side) -> Vec2 {
        match side {
            Side::One => self.p1,
            Side::Two => self.p2,
        }
    }

    pub fn line(&self, side: Side) -> &Line {
        match side {
            Side::One => &self.a1,
            Side::Two => &self.a2,
        }
    }

    pub fn theta(&self, side: Side) -> f64 {
        match side {
            Side::One => self.theta1,
            Side::Two => self.theta2,
        }
    }

    /// `D3` iff `|d(x,A1) - d(x,A2)| <= tol (1 + |x|)`, otherwise the strictly
    /// closer line decides.
    pub fn classify_region(&self, x: Vec2, tol: f64) -> RegionLabel {
        let d1 = self.a1.distance(x);
        let d2 = self.a2.distance(x);
        if (d1 - d2).abs() <= tol * (1.0 + x.norm()) {
            RegionLabel::D3
        } else if d1 < d2 {
            RegionLabel::D1
        } else {
            RegionLabel::D2
        }
    }

    pub fn bisector_data(&self) -> BisectorData {
        self.bisector
    }

    pub fn distance_to_d3(&self, x: Vec2) -> f64 {
        self.bisector.distance(x)
    }

    /// Distance to the attractor `{p1, p2}`.
    pub fn distance_to_solutions(&self, x: Vec2) -> f64 {
        x.dist(self.p1).min(x.dist(self.p2))
    }

    /// The nearer intersection point.
    pub fn nearest_solution(&self, x: Vec2) -> Side {
        if x.dist(self.p1) <= x.dist(self.p2) {
            Side::One
        } else {
            Side::Two
        }
    }
}

fn snap_right_angle(theta: f64) -> f64 {
    if (theta - FRAC_PI_2).abs() <= RIGHT_ANGLE_SNAP {
        FRAC_PI_2
    } else {
        theta
    }
}

fn closed_form_bisector(theta1: f64, theta2: f64) -> BisectorData {
    let gap = (theta2 - theta1).sin();
    let c = Vec2::new(
        (theta1 + theta2).sin() / (2.0 * gap),
        theta1.sin() * theta2.sin() / gap,
    );
    let half = 0.5 * (theta1 + theta2);
    let (hc, hs) = (half.cos(), half.sin());
    BisectorData {
        c,
        n1: Vec2::new(hc, hs),
        n2: Vec2::new(hs, -hc),
    }
}

pub fn classify_region(cfg: &ProblemConfig, x: Vec2, tol: f64) -> RegionLabel {
    cfg.classify_region(x, tol)
}

pub fn bisector_data(cfg: &ProblemConfig) -> BisectorData {
    cfg.bisector_data()
}

pub fn distance_to_d3(cfg: &ProblemConfig, x: Vec2) -> f64 {
    cfg.distance_to_d3(x)
}
