//! Perturbed iteration: state-dependent disturbances of size `sigma(x)`
//! before and after every step, and the resulting decay bound.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dr::dr_multivalued;
use crate::error::{Error, Result};
use crate::experiments::BranchPolicy;
use crate::geometry::{ProblemConfig, Vec2, DEFAULT_TIE_TOL};
use crate::lyapunov::{log_v_global, v_global, LyapunovCertificate};

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_BOUNDARY_SAMPLES: usize = 64;

/// Relative slack for floating-point comparisons of `V`.
const V_SLACK: f64 = 1e-9;

/// Distance to `{p1, p2}` below which coordinates are dominated by rounding
/// (a few ulps of the anchors) and `V` ratios carry no information.
pub const RESOLUTION_FLOOR: f64 = 64.0 * f64::EPSILON;

/// Disturbance level `epsilon` together with the certificate it is used with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationSpec {
    epsilon: f64,
    cert: LyapunovCertificate,
}

impl PerturbationSpec {
    /// Requires `0 < epsilon < 1` and `(1 + epsilon)^2 gamma < 1`.
    pub fn new(epsilon: f64, cert: &LyapunovCertificate) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) || epsilon == 0.0 {
            return Err(Error::Precondition(format!(
                "epsilon = {epsilon} is outside (0, 1)"
            )));
        }
        let spec = Self {
            epsilon,
            cert: *cert,
        };
        if spec.rate().is_nan() || spec.rate() >= 1.0 {
            return Err(Error::Precondition(format!(
                "(1 + epsilon)^2 gamma = {} is not below 1",
                spec.rate()
            )));
        }
        Ok(spec)
    }

    /// `epsilon = 0`: no disturbance at all. Meant for tests.
    pub fn unperturbed(cert: &LyapunovCertificate) -> Self {
        Self {
            epsilon: 0.0,
            cert: *cert,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn alpha(&self) -> f64 {
        self.cert.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.cert.gamma
    }

    pub fn certificate(&self) -> &LyapunovCertificate {
        &self.cert
    }

    /// Per-step contraction of `V` under disturbance, `(1 + epsilon)^2 gamma`.
    pub fn rate(&self) -> f64 {
        (1.0 + self.epsilon).powi(2) * self.cert.gamma
    }

    /// `(1 + epsilon)^(1 / (2 (1 + alpha))) - 1`.
    pub fn sigma_coefficient(&self) -> f64 {
        ((1.0 + self.epsilon).ln() / (2.0 * (1.0 + self.cert.alpha))).exp_m1()
    }

    pub fn kl_bound(&self) -> KLBound {
        KLBound {
            rate: self.rate(),
            exponent: 2.0 * self.cert.alpha + 2.0,
        }
    }
}

/// Disturbance radius at `x`, proportional to the distance to `{p1, p2}`.
pub fn sigma(spec: &PerturbationSpec, cfg: &ProblemConfig, x: Vec2) -> f64 {
    spec.sigma_coefficient() * cfg.distance_to_solutions(x)
}

/// `beta(s, t) = s rate^(t / exponent)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KLBound {
    pub rate: f64,
    pub exponent: f64,
}

impl KLBound {
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        s * (self.rate.ln() * t / self.exponent).exp()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DisturbanceMode {
    /// Uniform samples from the disturbance balls.
    #[default]
    Random,
    /// The `V`-largest of `boundary_samples` points on each ball boundary,
    /// and the `V`-largest branch.
    Adversarial { boundary_samples: usize },
}

/// Uniform offset in the closed disc of radius `radius`.
pub fn sample_offset<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vec2 {
    let r = radius * rng.random::<f64>().sqrt();
    r * Vec2::from_angle(rng.random_range(0.0..TAU))
}

/// Uniform point in the closed disc `B[center, radius]`.
pub fn sample_in_ball<R: Rng + ?Sized>(rng: &mut R, center: Vec2, radius: f64) -> Vec2 {
    center + sample_offset(rng, radius)
}

/// Offset to the point of largest `V` among `k` evenly spaced boundary
/// points (random phase) and the center.
fn worst_offset<R: Rng + ?Sized>(
    rng: &mut R,
    cert: &LyapunovCertificate,
    cfg: &ProblemConfig,
    center: Vec2,
    radius: f64,
    k: usize,
) -> Vec2 {
    if radius == 0.0 {
        return Vec2::ZERO;
    }
    let phase = rng.random_range(0.0..TAU);
    (0..k)
        .map(|j| radius * Vec2::from_angle(phase + TAU * j as f64 / k as f64))
        .fold((Vec2::ZERO, log_v_global(cert, cfg, center)), |best, d| {
            let v = log_v_global(cert, cfg, center + d);
            if v > best.1 {
                (d, v)
            } else {
                best
            }
        })
        .0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbedStep {
    /// `z`: the disturbed input.
    pub disturbed: Vec2,
    /// `y`: the operator image of `z`.
    pub image: Vec2,
    /// `w`: the disturbed image, the next state.
    pub next: Vec2,
    pub pre: Vec2,
    pub post: Vec2,
}

/// One step of the perturbed inclusion: `z in B[x, sigma(x)]`, `y in T z`,
/// `w in B[y, sigma(y)]`. In random mode ties follow `policy`, drawing coins
/// from `rng`.
pub fn perturbed_step<R: Rng + ?Sized>(
    spec: &PerturbationSpec,
    cfg: &ProblemConfig,
    x: Vec2,
    mode: DisturbanceMode,
    policy: BranchPolicy,
    rng: &mut R,
) -> PerturbedStep {
    let cert = spec.certificate();
    let sx = sigma(spec, cfg, x);
    let pre = match mode {
        DisturbanceMode::Random => sample_offset(rng, sx),
        DisturbanceMode::Adversarial { boundary_samples } => {
            worst_offset(rng, cert, cfg, x, sx, boundary_samples)
        }
    };
    let z = x + pre;
    let step = dr_multivalued(cfg, z, DEFAULT_TIE_TOL);
    let outs = step.outputs();
    let y = if !step.is_multivalued() {
        outs[0]
    } else {
        match (mode, policy) {
            (DisturbanceMode::Adversarial { .. }, _) | (_, BranchPolicy::EnumerateTree { .. }) => {
                let (a, b) = (outs[0], outs[1]);
                if log_v_global(cert, cfg, b) > log_v_global(cert, cfg, a) {
                    b
                } else {
                    a
                }
            }
            (_, BranchPolicy::SeededRandom { .. }) => outs[usize::from(rng.random::<bool>())],
            (_, BranchPolicy::FirstBranch) => outs[0],
        }
    };
    let sy = sigma(spec, cfg, y);
    let post = match mode {
        DisturbanceMode::Random => sample_offset(rng, sy),
        DisturbanceMode::Adversarial { boundary_samples } => {
            worst_offset(rng, cert, cfg, y, sy, boundary_samples)
        }
    };
    PerturbedStep {
        disturbed: z,
        image: y,
        next: y + post,
        pre,
        post,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedTrace {
    /// `x_0, ..., x_n`.
    pub points: Vec<Vec2>,
    /// Operator images `y_0, ..., y_{n-1}`.
    pub images: Vec<Vec2>,
    /// `(pre, post)` offsets of each step.
    pub disturbances: Vec<(Vec2, Vec2)>,
    pub seed: u64,
}

/// A trace of `steps` perturbed steps driven by a generator seeded with `seed`.
pub fn perturbed_trace(
    spec: &PerturbationSpec,
    cfg: &ProblemConfig,
    x0: Vec2,
    steps: usize,
    mode: DisturbanceMode,
    policy: BranchPolicy,
    seed: u64,
) -> PerturbedTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = PerturbedTrace {
        points: Vec::with_capacity(steps + 1),
        images: Vec::with_capacity(steps),
        disturbances: Vec::with_capacity(steps),
        seed,
    };
    trace.points.push(x0);
    let mut x = x0;
    for _ in 0..steps {
        let s = perturbed_step(spec, cfg, x, mode, policy, &mut rng);
        trace.images.push(s.image);
        trace.disturbances.push((s.pre, s.post));
        trace.points.push(s.next);
        x = s.next;
    }
    trace
}

/// `V(z) <= (1 + epsilon) V(x)` for `z` at the center and on `n_boundary`
/// evenly spaced points of both the boundary and the half-radius circle of
/// `B[x, sigma(x)]`.
pub fn check_sigma_inflation(
    spec: &PerturbationSpec,
    cfg: &ProblemConfig,
    x: Vec2,
    n_boundary: usize,
) -> bool {
    let cert = spec.certificate();
    let r = sigma(spec, cfg, x);
    let limit = log_v_global(cert, cfg, x) + spec.epsilon().ln_1p() + V_SLACK.ln_1p();
    if limit == f64::NEG_INFINITY {
        return r == 0.0;
    }
    let n = n_boundary.max(1);
    std::iter::once(x)
        .chain((0..n).flat_map(|j| {
            let u = Vec2::from_angle(TAU * j as f64 / n as f64);
            [x + r * u, x + (0.5 * r) * u]
        }))
        .all(|z| log_v_global(cert, cfg, z) <= limit)
}

/// Checks `min_i |x_n - p_i| <= beta(max_i |x_0 - p_i|, n)` along the trace.
/// Returns the verdict and the smallest `bound - actual`.
pub fn check_kl_bound(
    spec: &PerturbationSpec,
    cfg: &ProblemConfig,
    trace: &PerturbedTrace,
) -> (bool, f64) {
    let beta = spec.kl_bound();
    let Some(&x0) = trace.points.first() else {
        return (true, f64::INFINITY);
    };
    let s = x0.dist(cfg.p1).max(x0.dist(cfg.p2));
    let mut ok = true;
    let mut worst = f64::INFINITY;
    for (n, &x) in trace.points.iter().enumerate() {
        let bound = beta.eval(s, n as f64);
        let actual = cfg.distance_to_solutions(x);
        ok &= actual <= bound * (1.0 + V_SLACK);
        worst = worst.min(bound - actual);
    }
    (ok, worst)
}

/// `V(x_{n+1}) <= rate V(x_n)` for every step of the trace. Steps that land
/// within [`RESOLUTION_FLOOR`] of `{p1, p2}` are not compared.
pub fn check_step_decay(
    spec: &PerturbationSpec,
    cfg: &ProblemConfig,
    trace: &PerturbedTrace,
) -> bool {
    let cert = spec.certificate();
    let slack = spec.rate().ln() + V_SLACK.ln_1p();
    trace.points.windows(2).all(|w| {
        cfg.distance_to_solutions(w[1]) <= RESOLUTION_FLOOR
            || log_v_global(cert, cfg, w[1]) <= log_v_global(cert, cfg, w[0]) + slack
    })
}

/// One CSV row of a perturbed trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub pre_offset_norm: f64,
    pub post_offset_norm: f64,
    #[serde(rename = "V")]
    pub v: f64,
    pub bound: f64,
}

impl PerturbedTrace {
    /// Row `n` holds `x_n`, the offsets that produced it (zero for the
    /// start), `V(x_n)` and the decay bound at `n`.
    pub fn rows(&self, spec: &PerturbationSpec, cfg: &ProblemConfig) -> Vec<TraceRow> {
        let beta = spec.kl_bound();
        let s = self
            .points
            .first()
            .map(|x0| x0.dist(cfg.p1).max(x0.dist(cfg.p2)))
            .unwrap_or(0.0);
        self.points
            .iter()
            .enumerate()
            .map(|(n, &x)| {
                let (pre, post) = if n == 0 {
                    (Vec2::ZERO, Vec2::ZERO)
                } else {
                    self.disturbances[n - 1]
                };
                TraceRow {
                    step: n,
                    x: x.x,
                    y: x.y,
                    pre_offset_norm: pre.norm(),
                    post_offset_norm: post.norm(),
                    v: v_global(spec.certificate(), cfg, x),
                    bound: beta.eval(s, n as f64),
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(
        &self,
        spec: &PerturbationSpec,
        cfg: &ProblemConfig,
        out: W,
    ) -> Result<()> {
        let mut w = crate::csv_writer(out);
        w.write_record([
            "step",
            "x",
            "y",
            "pre_offset_norm",
            "post_offset_norm",
            "V",
            "bound",
        ])?;
        for r in self.rows(spec, cfg) {
            let mut rec = vec![r.step.to_string()];
            rec.extend(
                [
                    r.x,
                    r.y,
                    r.pre_offset_norm,
                    r.post_offset_norm,
                    r.v,
                    r.bound,
                ]
                .iter()
                .map(|v| format!("{v:.16e}")),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
        let mut r = csv::Reader::from_reader(input);
        r.deserialize()
            .map(|rec| rec.map_err(Error::from))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::certify;
    use std::f64::consts::{FRAC_PI_3, PI};

    fn reference() -> (ProblemConfig, LyapunovCertificate) {
        let cfg = ProblemConfig::new(FRAC_PI_3, 2.0 * PI / 5.0).unwrap();
        let cert = *certify(&cfg).certificate().unwrap();
        (cfg, cert)
    }

    fn random_point(rng: &mut ChaCha8Rng, half: f64) -> Vec2 {
        Vec2::new(rng.random_range(-half..half), rng.random_range(-half..half))
    }

    #[test]
    fn spec_validation() {
        let (_, cert) = reference();
        assert!(PerturbationSpec::new(0.05, &cert).is_ok());
        assert!(PerturbationSpec::new(0.0, &cert).is_err());
        assert!(PerturbationSpec::new(1.0, &cert).is_err());
        // (1 + eps)^2 gamma >= 1 for gamma ~ 0.564 once eps >= 0.332
        assert!(PerturbationSpec::new(0.4, &cert).is_err());
    }

    #[test]
    fn sigma_values() {
        let (cfg, cert) = reference();
        let spec = PerturbationSpec::new(0.05, &cert).unwrap();
        assert_eq!(sigma(&spec, &cfg, cfg.p1), 0.0);
        assert_eq!(sigma(&spec, &cfg, cfg.p2), 0.0);
        let expected = (1.05f64.powf(1.0 / (2.0 * (1.0 + cert.alpha))) - 1.0) * 1.25f64.sqrt();
        let got = sigma(&spec, &cfg, Vec2::new(0.0, 1.0));
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.011_543_806_802_932_044).abs() < 1e-12);
        assert_eq!(
            sigma(
                &PerturbationSpec::unperturbed(&cert),
                &cfg,
                Vec2::new(3.0, 1.0)
            ),
            0.0
        );
    }

    #[test]
    fn unperturbed_step_is_nominal() {
        let (cfg, cert) = reference();
        let spec = PerturbationSpec::unperturbed(&cert);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = random_point(&mut rng, 5.0);
            let s = perturbed_step(
                &spec,
                &cfg,
                x,
                DisturbanceMode::Random,
                BranchPolicy::FirstBranch,
                &mut rng,
            );
            assert_eq!(s.next, dr_multivalued(&cfg, x, DEFAULT_TIE_TOL).first());
        }
    }

    #[test]
    fn fixed_point_stays() {
        let (cfg, cert) = reference();
        let spec = PerturbationSpec::new(0.05, &cert).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mode in [
            DisturbanceMode::Random,
            DisturbanceMode::Adversarial {
                boundary_samples: 64,
            },
        ] {
            let s = perturbed_step(
                &spec,
                &cfg,
                cfg.p1,
                mode,
                BranchPolicy::FirstBranch,
                &mut rng,
            );
            assert_eq!(s.next, cfg.p1);
        }
    }

    #[test]
    fn ball_sampler_reaches_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = Vec2::new(0.3, -0.7);
        let r = 0.25;
        let max = (0..10_000)
            .map(|_| sample_in_ball(&mut rng, c, r).dist(c) / r)
            .fold(0.0, f64::max);
        assert!((0.99..=1.0).contains(&max), "{max}");
    }

    #[test]
    fn offsets_respect_sigma() {
        let (cfg, cert) = reference();
        let spec = PerturbationSpec::new(0.05, &cert).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for mode in [
            DisturbanceMode::Random,
            DisturbanceMode::Adversarial {
                boundary_samples: 16,
            },
        ] {
            let t = perturbed_trace(
                &spec,
                &cfg,
                random_point(&mut rng, 4.0),
                100,
                mode,
                BranchPolicy::FirstBranch,
                9,
            );
            for (n, &(pre, post)) in t.disturbances.iter().enumerate() {
                assert!(pre.norm() <= sigma(&spec, &cfg, t.points[n]) * (1.0 + 1e-12));
                assert!(post.norm() <= sigma(&spec, &cfg, t.images[n]) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn lemma_sigma_holds_and_scales() {
        let (cfg, cert) = reference();
        let spec = PerturbationSpec::new(0.05, &cert).unwrap();
        let wider = PerturbationSpec::new(0.2, &cert).unwrap();
        assert!(check_sigma_inflation(&spec, &cfg, cfg.p1, 64));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let x = random_point(&mut rng, 10.0);
            assert!(check_sigma_inflation(&spec, &cfg, x, 64));
            assert!(check_sigma_inflation(&wider, &cfg, x, 64));
        }
    }

    #[test]
    fn one_step_and_n_step_decay() {
        let (cfg, cert) = reference();
        let spec = PerturbationSpec::new(0.05, &cert).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for k in 0..100 {
            let x0 = random_point(&mut rng, 10.0);
            for mode in [
                DisturbanceMode::Random,
                DisturbanceMode::Adversarial {
                    boundary_samples: 32,
                },
            ] {
                let t = perturbed_trace(
                    &spec,
                    &cfg,
                    x0,
                    60,
                    mode,
                    BranchPolicy::SeededRandom { seed: 0 },
                    k,
                );
                assert!(check_step_decay(&spec, &cfg, &t));
                let (ok, _) = check_kl_bound(&spec, &cfg, &t);
                assert!(ok);
            }
        }
    }

    #[test]
    fn kl_bound_from_anchor() {
        let (cfg, cert) = reference();
        let spec = PerturbationSpec::new(0.05, &cert).unwrap();
        let t = perturbed_trace(
            &spec,
            &cfg,
            cfg.p2,
            10,
            DisturbanceMode::Random,
            BranchPolicy::FirstBranch,
            0,
        );
        let (ok, worst) = check_kl_bound(&spec, &cfg, &t);
        assert!(ok);
        assert!((worst - spec.kl_bound().eval(1.0, 10.0)).abs() < 1e-15);
    }

    #[test]
    fn kl_bound_shape() {
        let (_, cert) = reference();
        let beta = PerturbationSpec::new(0.05, &cert).unwrap().kl_bound();
        for t in 0..50 {
            let t = t as f64;
            for s in 1..20 {
                let s = s as f64 * 0.5;
                assert!(beta.eval(s + 0.5, t) > beta.eval(s, t));
                assert!(beta.eval(s, t + 1.0) <= beta.eval(s, t));
            }
        }
        assert_eq!(beta.eval(0.0, 3.0), 0.0);
        assert!(beta.eval(5.0, 1e5) < 1e-100);
    }

    #[test]
    fn csv_roundtrip() {
        let (cfg, cert) = reference();
        let spec = PerturbationSpec::new(0.05, &cert).unwrap();
        let t = perturbed_trace(
            &spec,
            &cfg,
            Vec2::new(1.5, 2.5),
            20,
            DisturbanceMode::Random,
            BranchPolicy::FirstBranch,
            8,
        );
        let mut buf = Vec::new();
        t.write_csv(&spec, &cfg, &mut buf).unwrap();
        assert!(buf.starts_with(b"step,x,y,pre_offset_norm,post_offset_norm,V,bound\r\n"));
        let rows = PerturbedTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(rows, t.rows(&spec, &cfg));
        assert_eq!(rows[0].pre_offset_norm, 0.0);
    }
}
