use crate::geometry::Vec2;

/// Default number of trailing points kept for period matching.
pub const DEFAULT_WINDOW: usize = 4096;

/// Default relative match tolerance for orbit points.
pub const DEFAULT_MATCH_TOL: f64 = 1e-8;

fn matches(a: Vec2, b: Vec2, match_tol: f64) -> bool {
    a.dist(b) <= match_tol * (1.0 + a.norm())
}

/// True iff the last `2k` points repeat with shift `k`.
fn repeats_with(window: &[Vec2], k: usize, match_tol: f64) -> bool {
    let len = window.len();
    if 2 * k > len {
        return false;
    }
    // newest pairs first: they are the closest to the limit orbit
    (len - 2 * k..len - k)
        .rev()
        .all(|n| matches(window[n], window[n + k], match_tol))
}

/// Smallest period `K > 1` such that the last `2K` points of `window` satisfy
/// `|x_{n+K} - x_n| <= match_tol (1 + |x_n|)`. A tail that already repeats
/// with shift 1 is a fixed point and yields `None`.
pub fn detect_cycle(window: &[Vec2], match_tol: f64) -> Option<usize> {
    if repeats_with(window, 1, match_tol) {
        return None;
    }
    // The first match is minimal: any proper divisor K' > 1 would have
    // matched earlier.
    (2..=window.len() / 2).find(|&k| repeats_with(window, k, match_tol))
}

/// Brent's cycle search with approximate matching, for long periods where a
/// full window is wasteful. Returns the period once the hare comes back within
/// `match_tol` of the tortoise, or `None` after `max_steps` map evaluations.
/// A reported period of 1 means the iteration settled on a fixed point.
pub fn brent_period(
    start: Vec2,
    mut step: impl FnMut(Vec2) -> Vec2,
    match_tol: f64,
    max_steps: u64,
) -> Option<usize> {
    let mut power = 1usize;
    let mut lam = 1usize;
    let mut tortoise = start;
    let mut hare = step(start);
    let mut evaluations = 1u64;
    while !matches(tortoise, hare, match_tol) {
        if power == lam {
            tortoise = hare;
            power *= 2;
            lam = 0;
        }
        hare = step(hare);
        lam += 1;
        evaluations += 1;
        if evaluations >= max_steps {
            return None;
        }
    }
    Some(lam)
}
