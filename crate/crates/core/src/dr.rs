//! Douglas-Rachford operators.
//!
//! For a single line `A` through `p` at angle `theta` and `B` the x-axis the
//! operator `T_{A,B} = (I + R_B R_A) / 2` is the affine map
//! `x -> p + cos(theta) M_theta (x - p)`. For `A = A1 ∪ A2` the projection onto
//! `A` is two-valued on `D3`, so the operator is too.

use crate::geometry::{cos_sin, Line, ProblemConfig, RegionLabel, Side, Vec2};

/// `[[cos t, sin t], [-sin t, cos t]]`; note `M_t e1 = (cos t, -sin t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix {
    pub m: [[f64; 2]; 2],
}

impl RotationMatrix {
    pub fn new(theta: f64) -> Self {
        let (c, s) = cos_sin(theta);
        Self {
            m: [[c, s], [-s, c]],
        }
    }

    pub fn apply(&self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn transpose(&self) -> Self {
        Self {
            m: [[self.m[0][0], self.m[1][0]], [self.m[0][1], self.m[1][1]]],
        }
    }

    pub fn mul(&self, rhs: &RotationMatrix) -> RotationMatrix {
        let a = &self.m;
        let b = &rhs.m;
        let mut m = [[0.0; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        RotationMatrix { m }
    }
}

/// `p + cos(theta) M_theta (x - p)`.
pub fn dr_two_lines_closed_form(p: Vec2, theta: f64, x: Vec2) -> Vec2 {
    let (c, _) = cos_sin(theta);
    p + c * RotationMatrix::new(theta).apply(x - p)
}

/// `(x + R_B R_A x) / 2`, built from the two reflections.
pub fn dr_two_lines_compositional(line_a: &Line, line_b: &Line, x: Vec2) -> Vec2 {
    0.5 * (x + line_b.reflect(line_a.reflect(x)))
}

/// One application of the (possibly two-valued) operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrStep {
    pub input: Vec2,
    pub region: RegionLabel,
    outputs: [Vec2; 2],
    sides: [Side; 2],
    len: usize,
}

impl DrStep {
    fn single(input: Vec2, region: RegionLabel, side: Side, y: Vec2) -> Self {
        Self {
            input,
            region,
            outputs: [y, y],
            sides: [side, side],
            len: 1,
        }
    }

    fn double(input: Vec2, first: Vec2, second: Vec2) -> Self {
        Self {
            input,
            region: RegionLabel::D3,
            outputs: [first, second],
            sides: [Side::One, Side::Two],
            len: 2,
        }
    }

    /// Branch values; the `A1` branch comes first on `D3`.
    pub fn outputs(&self) -> &[Vec2] {
        &self.outputs[..self.len]
    }

    /// Branch values tagged with the line that produced them.
    pub fn branches(&self) -> impl Iterator<Item = (Side, Vec2)> + '_ {
        self.sides[..self.len]
            .iter()
            .copied()
            .zip(self.outputs[..self.len].iter().copied())
    }

    pub fn is_multivalued(&self) -> bool {
        self.len == 2
    }

    pub fn first(&self) -> Vec2 {
        self.outputs[0]
    }
}

/// `T_{A_i,B} x` for one of the two lines of `cfg`.
pub fn dr_branch(cfg: &ProblemConfig, side: Side, x: Vec2) -> Vec2 {
    dr_two_lines_closed_form(cfg.anchor(side), cfg.theta(side), x)
}

/// `T_{A,B} x` with `A = A1 ∪ A2`.
pub fn dr_multivalued(cfg: &ProblemConfig, x: Vec2, tol: f64) -> DrStep {
    match cfg.classify_region(x, tol) {
        RegionLabel::D1 => {
            DrStep::single(x, RegionLabel::D1, Side::One, dr_branch(cfg, Side::One, x))
        }
        RegionLabel::D2 => {
            DrStep::single(x, RegionLabel::D2, Side::Two, dr_branch(cfg, Side::Two, x))
        }
        RegionLabel::D3 => DrStep::double(
            x,
            dr_branch(cfg, Side::One, x),
            dr_branch(cfg, Side::Two, x),
        ),
    }
}

/// `T_{B,A} x = (x + R_A R_B x) / 2`. `R_A` is resolved by the nearest-line
/// rule at `R_B x`, and the reported region is that of `R_B x`.
pub fn dr_reversed(cfg: &ProblemConfig, x: Vec2, tol: f64) -> DrStep {
    let z = cfg.b.reflect(x);
    let via = |side: Side| 0.5 * (x + cfg.line(side).reflect(z));
    match cfg.classify_region(z, tol) {
        RegionLabel::D1 => DrStep::single(x, RegionLabel::D1, Side::One, via(Side::One)),
        RegionLabel::D2 => DrStep::single(x, RegionLabel::D2, Side::Two, via(Side::Two)),
        RegionLabel::D3 => DrStep::double(x, via(Side::One), via(Side::Two)),
    }
}
