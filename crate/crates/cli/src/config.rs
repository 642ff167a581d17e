use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use serde::Deserialize;

use crate::CliError;

/// A point given as `x,y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point(pub f64, pub f64);

impl FromStr for Point {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (x, y) = s
            .split_once(',')
            .ok_or_else(|| format!("expected x,y but got '{s}'"))?;
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("invalid number '{v}' in '{s}'"))
        };
        let p = Point(num(x)?, num(y)?);
        if p.0.is_finite() && p.1.is_finite() {
            Ok(p)
        } else {
            Err(format!("non-finite point '{s}'"))
        }
    }
}

/// A grid size given as `NXxNY`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolution(pub usize, pub usize);

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected NXxNY but got '{s}'"))?;
        let num = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("invalid size '{v}' in '{s}'"))
        };
        let r = Resolution(num(a)?, num(b)?);
        if r.0 == 0 || r.1 == 0 {
            return Err(format!("resolution '{s}' must be at least 1x1"));
        }
        Ok(r)
    }
}

/// Window given as `xmin,xmax,ymin,ymax`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window(pub [f64; 4]);

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("invalid number '{v}' in '{s}'"))
            })
            .collect::<Result<_, _>>()?;
        let arr: [f64; 4] = parts
            .try_into()
            .map_err(|_| format!("expected xmin,xmax,ymin,ymax but got '{s}'"))?;
        Ok(Window(arr))
    }
}

/// Every option a command may read. Values come from the command line first,
/// then from the `--config` file.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Angle of the line through (-1/2, 0), radians unless --deg
    #[arg(long, allow_hyphen_values = true)]
    pub theta1: Option<f64>,
    /// Angle of the line through (1/2, 0), radians unless --deg
    #[arg(long, allow_hyphen_values = true)]
    pub theta2: Option<f64>,
    /// Read angles in degrees
    #[arg(long)]
    #[serde(skip)]
    pub deg: bool,
    /// Start point as x,y
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// Steps to take (iterate, robust)
    #[arg(long)]
    pub steps: Option<u64>,
    /// Step budget per trace
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Branch policy on ties: first, random[:SEED] or tree[:LEAVES]
    #[arg(long)]
    pub policy: Option<String>,
    /// Seed for random starts and tie coins (DR_SEED overrides)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Raster resolution as NXxNY
    #[arg(long)]
    pub res: Option<String>,
    /// Raster window as xmin,xmax,ymin,ymax
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
    /// Angle grid for sweeps as N1xN2
    #[arg(long)]
    pub grid: Option<String>,
    /// Random starts per angle pair
    #[arg(long)]
    pub samples: Option<usize>,
    /// Disturbance level for robust runs
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Disturbance mode: random or adversarial
    #[arg(long)]
    pub mode: Option<String>,
    /// Number of perturbed traces
    #[arg(long)]
    pub traces: Option<usize>,
    /// Use Brent's low-memory period search (orbit)
    #[arg(long)]
    #[serde(skip)]
    pub brent: bool,
    /// Main output file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Additional CSV output
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Config-file only switches that are plain flags on the command line.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct Switches {
    deg: bool,
    brent: bool,
}

impl Params {
    /// Fills options missing on the command line from the JSON file at `path`.
    pub fn merge_file(self, path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let switches: Switches = serde_json::from_value(value.clone()).unwrap_or_default();
        let mut file_value = value;
        if let Some(obj) = file_value.as_object_mut() {
            obj.remove("deg");
            obj.remove("brent");
        }
        let file: Params = serde_json::from_value(file_value)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok(self.merge(file, switches))
    }

    fn merge(self, file: Params, switches: Switches) -> Self {
        Params {
            theta1: self.theta1.or(file.theta1),
            theta2: self.theta2.or(file.theta2),
            deg: self.deg || switches.deg,
            x0: self.x0.or(file.x0),
            steps: self.steps.or(file.steps),
            max_steps: self.max_steps.or(file.max_steps),
            policy: self.policy.or(file.policy),
            seed: self.seed.or(file.seed),
            res: self.res.or(file.res),
            bounds: self.bounds.or(file.bounds),
            grid: self.grid.or(file.grid),
            samples: self.samples.or(file.samples),
            epsilon: self.epsilon.or(file.epsilon),
            mode: self.mode.or(file.mode),
            traces: self.traces.or(file.traces),
            brent: self.brent || switches.brent,
            out: self.out.or(file.out),
            csv: self.csv.or(file.csv),
        }
    }

    /// `DR_SEED` wins over `--seed` and the config file.
    pub fn apply_env(mut self) -> Result<Self, CliError> {
        if let Ok(v) = std::env::var("DR_SEED") {
            let seed = v.trim().parse().map_err(|_| {
                CliError::Usage(format!("DR_SEED='{v}' is not an unsigned integer"))
            })?;
            self.seed = Some(seed);
        }
        Ok(self)
    }

    pub fn angles(&self) -> Result<(f64, f64), CliError> {
        let (Some(t1), Some(t2)) = (self.theta1, self.theta2) else {
            return Err(CliError::Usage("--theta1 and --theta2 are required".into()));
        };
        if self.deg {
            Ok((t1.to_radians(), t2.to_radians()))
        } else {
            Ok((t1, t2))
        }
    }

    pub fn x0(&self) -> Result<Option<Point>, CliError> {
        self.x0.as_deref().map(parse_opt).transpose()
    }

    pub fn res(&self) -> Result<Option<Resolution>, CliError> {
        self.res.as_deref().map(parse_opt).transpose()
    }

    pub fn grid(&self) -> Result<Option<Resolution>, CliError> {
        self.grid.as_deref().map(parse_opt).transpose()
    }

    pub fn bounds(&self) -> Result<Option<Window>, CliError> {
        self.bounds.as_deref().map(parse_opt).transpose()
    }
}

fn parse_opt<T: FromStr<Err = String>>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(CliError::Usage)
}
