use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::simulate::{simulate_with, BranchPolicy, SimOptions, Verdict};
use crate::error::{Error, Result};
use crate::geometry::{ProblemConfig, Side, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Bounds {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let b = Self {
            xmin,
            xmax,
            ymin,
            ymax,
        };
        let ok =
            [xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite()) && xmin < xmax && ymin < ymax;
        if ok {
            Ok(b)
        } else {
            Err(Error::Precondition(format!(
                "empty or non-finite window {b:?}"
            )))
        }
    }

    pub fn square(half: f64) -> Result<Self> {
        Self::new(-half, half, -half, half)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellResult {
    pub verdict: Verdict,
    pub steps: u64,
}

impl CellResult {
    pub fn gray(&self) -> u8 {
        match self.verdict {
            Verdict::ConvergedTo(Side::One) => 85,
            Verdict::ConvergedTo(Side::Two) => 170,
            Verdict::Cycle { .. } => 255,
            Verdict::Budget => 0,
        }
    }
}

/// Verdicts on a grid of start points, row-major with row 0 at `ymax`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterGrid {
    pub bounds: Bounds,
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<CellResult>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    x: String,
    y: String,
    verdict: String,
    steps: u64,
    target: String,
}

impl RasterGrid {
    /// Start point of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        cell_center(&self.bounds, self.nx, self.ny, row, col)
    }

    pub fn get(&self, row: usize, col: usize) -> &CellResult {
        &self.cells[row * self.nx + col]
    }

    /// Binary PGM (P5), one byte per cell.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.nx, self.ny).into_bytes();
        out.extend(self.cells.iter().map(CellResult::gray));
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = crate::csv_writer(out);
        for row in 0..self.ny {
            for col in 0..self.nx {
                let p = self.cell_center(row, col);
                let c = self.get(row, col);
                w.serialize(CsvRow {
                    x: format!("{:.16e}", p.x),
                    y: format!("{:.16e}", p.y),
                    verdict: c.verdict.to_string(),
                    steps: c.steps,
                    target: c.verdict.target_label().to_string(),
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Reads back the rows of [`RasterGrid::write_csv`] as start points and cells.
    pub fn read_csv<R: Read>(input: R) -> Result<Vec<(Vec2, CellResult)>> {
        let mut r = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for rec in r.deserialize() {
            let row: CsvRow = rec?;
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number '{s}'")))
            };
            rows.push((
                Vec2::new(num(&row.x)?, num(&row.y)?),
                CellResult {
                    verdict: Verdict::parse(&row.verdict, &row.target)?,
                    steps: row.steps,
                },
            ));
        }
        Ok(rows)
    }

    /// Counts of cells per verdict code (p1, p2, cycle, budget).
    pub fn histogram(&self) -> [usize; 4] {
        let mut h = [0; 4];
        for c in &self.cells {
            h[c.verdict.code() as usize] += 1;
        }
        h
    }
}

fn cell_center(b: &Bounds, nx: usize, ny: usize, row: usize, col: usize) -> Vec2 {
    let dx = (b.xmax - b.xmin) / nx as f64;
    let dy = (b.ymax - b.ymin) / ny as f64;
    Vec2::new(
        b.xmin + (col as f64 + 0.5) * dx,
        b.ymax - (row as f64 + 0.5) * dy,
    )
}

/// Runs one trace per cell. Under a seeded policy each cell gets its own
/// seed derived from the policy seed and the cell index, so the result does
/// not depend on the thread count.
pub fn rasterize(
    cfg: &ProblemConfig,
    bounds: Bounds,
    nx: usize,
    ny: usize,
    policy: BranchPolicy,
    max_steps: u64,
) -> Result<RasterGrid> {
    if nx == 0 || ny == 0 {
        return Err(Error::Precondition(format!(
            "raster resolution {nx}x{ny} is empty"
        )));
    }
    policy.validate()?;
    let opts = SimOptions {
        max_steps,
        record: false,
        ..SimOptions::default()
    };
    let cells = (0..nx * ny)
        .into_par_iter()
        .map(|i| {
            let x0 = cell_center(&bounds, nx, ny, i / nx, i % nx);
            let p = match policy {
                BranchPolicy::SeededRandom { seed } => policy.reseeded(derive_seed(seed, i as u64)),
                other => other,
            };
            let t = simulate_with(cfg, x0, p, &opts);
            CellResult {
                verdict: t.verdict,
                steps: t.steps_used,
            }
        })
        .collect();
    Ok(RasterGrid {
        bounds,
        nx,
        ny,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_3, PI};

    fn reference() -> ProblemConfig {
        ProblemConfig::new(FRAC_PI_3, 2.0 * PI / 5.0).unwrap()
    }

    #[test]
    fn layout_and_centers() {
        let b = Bounds::square(1.0).unwrap();
        let g = rasterize(&reference(), b, 4, 2, BranchPolicy::FirstBranch, 1000).unwrap();
        assert_eq!(g.cells.len(), 8);
        assert_eq!(g.cell_center(0, 0), Vec2::new(-0.75, 0.5));
        assert_eq!(g.cell_center(1, 3), Vec2::new(0.75, -0.5));
    }

    #[test]
    fn pgm_header_and_levels() {
        let g = rasterize(
            &reference(),
            Bounds::square(2.0).unwrap(),
            10,
            6,
            BranchPolicy::FirstBranch,
            5000,
        )
        .unwrap();
        let pgm = g.to_pgm();
        let header = b"P5\n10 6\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 60);
        assert!(pgm[header.len()..].iter().all(|v| [85, 170].contains(v)));
        let h = g.histogram();
        assert_eq!(h[0] + h[1], 60);
    }

    #[test]
    fn cells_near_anchors_converge_there() {
        let cfg = reference();
        // 3x1 grid on [-0.75, 0.75] x [-0.1, 0.1] puts outer centers at the anchors
        let g = rasterize(
            &cfg,
            Bounds::new(-0.75, 0.75, -0.1, 0.1).unwrap(),
            3,
            1,
            BranchPolicy::FirstBranch,
            1000,
        )
        .unwrap();
        assert_eq!(g.get(0, 0).verdict, Verdict::ConvergedTo(Side::One));
        assert_eq!(g.get(0, 0).steps, 0);
        assert_eq!(g.get(0, 2).verdict, Verdict::ConvergedTo(Side::Two));
    }

    #[test]
    fn csv_roundtrip() {
        let g = rasterize(
            &reference(),
            Bounds::square(3.0).unwrap(),
            7,
            5,
            BranchPolicy::SeededRandom { seed: 3 },
            2000,
        )
        .unwrap();
        let text = g.to_csv().unwrap();
        assert!(text.starts_with("x,y,verdict,steps,target\r\n"));
        let rows = RasterGrid::read_csv(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 35);
        for (k, (p, c)) in rows.iter().enumerate() {
            assert_eq!(*p, g.cell_center(k / 7, k % 7));
            assert_eq!(c, &g.cells[k]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Bounds::new(1.0, -1.0, 0.0, 1.0).is_err());
        assert!(rasterize(
            &reference(),
            Bounds::square(1.0).unwrap(),
            0,
            3,
            BranchPolicy::FirstBranch,
            10
        )
        .is_err());
    }
}
