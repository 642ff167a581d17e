use std::io::Write;
use std::path::Path;

use drlines::dr::dr_multivalued;
use drlines::experiments::{
    brent_period, derive_seed, random_point, rasterize, simulate_with, Bounds, BranchPolicy,
    SimOptions, ThetaGrid, Verdict,
};
use drlines::geometry::DEFAULT_TIE_TOL;
use drlines::lyapunov::{certify as build_certificate, Certification};
use drlines::robust::{
    check_kl_bound, check_sigma_inflation, perturbed_trace, DisturbanceMode, PerturbationSpec,
};
use drlines::{ProblemConfig, Vec2};

use crate::config::{Params, Point, Resolution, Window};
use crate::CliError;

/// Half-width of the box robust runs draw their starts from.
const ROBUST_BOX: f64 = 10.0;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed run leaves no partial file behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.flush().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn problem(p: &Params) -> Result<ProblemConfig, CliError> {
    let (t1, t2) = p.angles()?;
    Ok(ProblemConfig::new(t1, t2)?)
}

/// `random` without an explicit seed takes `--seed`.
fn policy(p: &Params, default: &str) -> Result<BranchPolicy, CliError> {
    let text = p.policy.as_deref().unwrap_or(default);
    let parsed: BranchPolicy = text.parse()?;
    Ok(match parsed {
        BranchPolicy::SeededRandom { .. } if !text.contains(':') => {
            parsed.reseeded(p.seed.unwrap_or(0))
        }
        other => other,
    })
}

fn required_x0(p: &Params) -> Result<Vec2, CliError> {
    let Point(x, y) = p
        .x0()?
        .ok_or_else(|| CliError::Usage("--x0 is required".into()))?;
    Ok(Vec2::new(x, y))
}

fn required_out<'a>(p: &'a Params, what: &str) -> Result<&'a Path, CliError> {
    p.out
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("--out is required ({what})")))
}

fn at_least_one(value: u64, flag: &str) -> Result<u64, CliError> {
    if value == 0 {
        Err(CliError::Usage(format!("{flag} must be at least 1")))
    } else {
        Ok(value)
    }
}

fn csv_bytes(
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<Vec<u8>, CliError> {
    let mut w = drlines::csv_writer(Vec::new());
    let err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

pub fn certify(p: &Params) -> Result<(), CliError> {
    let cfg = problem(p)?;
    match build_certificate(&cfg) {
        Certification::Feasible(cert) => {
            let json = cert.to_json();
            if let Some(out) = &p.out {
                write_atomic(out, format!("{json}\n").as_bytes())?;
            }
            println!("{json}");
            Ok(())
        }
        Certification::Infeasible { condition_margin } => {
            let json = format!(
                "{{\"feasible\":false,\"theta1\":{},\"theta2\":{},\"condition_margin\":{}}}",
                num(cfg.theta1),
                num(cfg.theta2),
                num(condition_margin)
            );
            if let Some(out) = &p.out {
                write_atomic(out, format!("{json}\n").as_bytes())?;
            }
            println!("{json}");
            Err(CliError::Infeasible(format!(
                "no certificate: angle condition margin {} is not positive",
                num(condition_margin)
            )))
        }
    }
}

pub fn iterate(p: &Params) -> Result<(), CliError> {
    let cfg = problem(p)?;
    let mut x = required_x0(p)?;
    let steps = at_least_one(p.steps.unwrap_or(1), "--steps")?;
    let coin_seed = match policy(p, "first")? {
        BranchPolicy::FirstBranch => None,
        BranchPolicy::SeededRandom { seed } => Some(seed),
        BranchPolicy::EnumerateTree { .. } => {
            return Err(CliError::Usage(
                "iterate follows a single branch; use first or random".into(),
            ))
        }
    };
    let mut rows = vec![vec!["0".to_string(), num(x.x), num(x.y), String::new()]];
    println!("0 {} {}", num(x.x), num(x.y));
    for n in 1..=steps {
        let s = dr_multivalued(&cfg, x, DEFAULT_TIE_TOL);
        let idx = match coin_seed {
            Some(seed) if s.is_multivalued() => (derive_seed(seed, n) & 1) as usize,
            _ => 0,
        };
        let (side, y) = s.branches().nth(idx).expect("branch index in range");
        x = y;
        println!("{n} {} {} A{}", num(x.x), num(x.y), side.number());
        rows.push(vec![
            n.to_string(),
            num(x.x),
            num(x.y),
            format!("A{}", side.number()),
        ]);
    }
    if let Some(path) = &p.csv {
        write_atomic(path, &csv_bytes(&["step", "x", "y", "branch"], rows)?)?;
    }
    Ok(())
}

pub fn raster(p: &Params) -> Result<(), CliError> {
    let cfg = problem(p)?;
    let Resolution(nx, ny) = p.res()?.unwrap_or(Resolution(200, 200));
    let Window([xmin, xmax, ymin, ymax]) = p.bounds()?.unwrap_or(Window([-3.0, 3.0, -3.0, 3.0]));
    let bounds = Bounds::new(xmin, xmax, ymin, ymax)?;
    let policy = policy(p, "first")?;
    let max_steps = at_least_one(p.max_steps.unwrap_or(100_000), "--max-steps")?;
    let out = required_out(p, "PGM path")?;
    let grid = rasterize(&cfg, bounds, nx, ny, policy, max_steps)?;
    write_atomic(out, &grid.to_pgm())?;
    if let Some(path) = &p.csv {
        let mut buf = Vec::new();
        grid.write_csv(&mut buf)?;
        write_atomic(path, &buf)?;
    }
    let h = grid.histogram();
    println!(
        "raster {nx}x{ny}: p1 {} p2 {} cycle {} budget {}",
        h[0], h[1], h[2], h[3]
    );
    Ok(())
}

pub fn sweep(p: &Params) -> Result<(), CliError> {
    let Resolution(n1, n2) = p.grid()?.unwrap_or(Resolution(40, 40));
    let samples = at_least_one(p.samples.unwrap_or(20) as u64, "--samples")? as usize;
    let max_steps = at_least_one(p.max_steps.unwrap_or(50_000), "--max-steps")?;
    let policy = policy(p, "random")?;
    let seed = p.seed.unwrap_or(0);
    let out = required_out(p, "CSV path")?;
    let grid = match (p.theta1, p.theta2) {
        (Some(_), Some(_)) => ThetaGrid::from_pairs(vec![p.angles()?])?,
        (None, None) => ThetaGrid::uniform(n1, n2),
        _ => {
            return Err(CliError::Usage(
                "give both --theta1 and --theta2 or neither".into(),
            ))
        }
    };
    let result = drlines::experiments::sweep(&grid, samples, policy, max_steps, seed)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    write_atomic(out, &buf)?;
    let certified = result.cells.iter().filter(|c| c.certified).count();
    let flagged = result
        .cells
        .iter()
        .filter(|c| c.nonconvergent_found)
        .count();
    println!(
        "sweep: pairs {} certified {certified} nonconvergent {flagged} certified-and-nonconvergent {}",
        result.cells.len(),
        result.contradictions().count()
    );
    Ok(())
}

pub fn orbit(p: &Params) -> Result<(), CliError> {
    let cfg = problem(p)?;
    let x0 = required_x0(p)?;
    let max_steps = at_least_one(p.max_steps.unwrap_or(1_000_000), "--max-steps")?;
    if p.brent {
        let step = |x| dr_multivalued(&cfg, x, DEFAULT_TIE_TOL).first();
        match brent_period(x0, step, drlines::experiments::DEFAULT_MATCH_TOL, max_steps) {
            Some(1) => println!("period 1 (fixed point)"),
            Some(k) => println!("period {k}"),
            None => println!("no period found within {max_steps} steps"),
        }
        return Ok(());
    }
    let opts = SimOptions {
        max_steps,
        record: p.csv.is_some(),
        ..SimOptions::default()
    };
    let trace = simulate_with(&cfg, x0, policy(p, "first")?, &opts);
    if let (Some(path), Verdict::Cycle { period }) = (&p.csv, trace.verdict) {
        let tail = &trace.points[trace.points.len() - period..];
        let rows = tail
            .iter()
            .enumerate()
            .map(|(i, q)| vec![i.to_string(), num(q.x), num(q.y)]);
        write_atomic(path, &csv_bytes(&["index", "x", "y"], rows)?)?;
    }
    let end = trace.end;
    match trace.verdict {
        Verdict::Cycle { period } => println!(
            "period {period} after {} steps, last point {} {}",
            trace.steps_used,
            num(end.x),
            num(end.y)
        ),
        v => println!(
            "{v}{} after {} steps, last point {} {}",
            v.target()
                .map(|s| format!(" to p{}", s.number()))
                .unwrap_or_default(),
            trace.steps_used,
            num(end.x),
            num(end.y)
        ),
    }
    Ok(())
}

pub fn robust(p: &Params) -> Result<(), CliError> {
    let cfg = problem(p)?;
    let cert = match build_certificate(&cfg) {
        Certification::Feasible(c) => c,
        Certification::Infeasible { condition_margin } => {
            return Err(CliError::Infeasible(format!(
                "no certificate (angle condition margin {}), nothing to perturb",
                num(condition_margin)
            )))
        }
    };
    let spec = PerturbationSpec::new(p.epsilon.unwrap_or(drlines::robust::DEFAULT_EPSILON), &cert)?;
    let mode = match p.mode.as_deref().unwrap_or("random") {
        "random" => DisturbanceMode::Random,
        "adversarial" => DisturbanceMode::Adversarial {
            boundary_samples: drlines::robust::DEFAULT_BOUNDARY_SAMPLES,
        },
        other => {
            return Err(CliError::Usage(format!(
                "unknown mode '{other}', expected random or adversarial"
            )))
        }
    };
    let x0 = p.x0()?.map(|Point(x, y)| Vec2::new(x, y));
    let traces = at_least_one(
        p.traces.unwrap_or(if x0.is_some() { 1 } else { 100 }) as u64,
        "--traces",
    )?;
    let steps = at_least_one(p.steps.unwrap_or(200), "--steps")? as usize;
    let seed = p.seed.unwrap_or(0);
    let policy = policy(p, "random")?;
    let mut inflation_ok = 0;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut first_csv = None;
    for k in 0..traces {
        let start = x0.unwrap_or_else(|| random_point(derive_seed(seed, 2 * k), ROBUST_BOX));
        inflation_ok += usize::from(check_sigma_inflation(
            &spec,
            &cfg,
            start,
            drlines::robust::DEFAULT_BOUNDARY_SAMPLES,
        ));
        let t = perturbed_trace(
            &spec,
            &cfg,
            start,
            steps,
            mode,
            policy,
            derive_seed(seed, 2 * k + 1),
        );
        let (ok, margin) = check_kl_bound(&spec, &cfg, &t);
        violations += usize::from(!ok);
        worst = worst.min(margin);
        if k == 0 && p.csv.is_some() {
            let mut buf = Vec::new();
            t.write_csv(&spec, &cfg, &mut buf)?;
            first_csv = Some(buf);
        }
    }
    if let (Some(path), Some(buf)) = (&p.csv, first_csv) {
        write_atomic(path, &buf)?;
    }
    println!(
        "robust epsilon {}: traces {traces} inflation-ok {inflation_ok} bound-violations {violations} worst-margin {}",
        num(spec.epsilon()),
        num(worst)
    );
    Ok(())
}
