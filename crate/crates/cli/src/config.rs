//! Flat JSON run configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use dicke_hfb::analysis::CollapseWindow;
use dicke_hfb::{Init, Mode, ModelParams, SolverConfig};
use serde::Deserialize;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Bogoliubov,
    Deterministic,
    Random,
}

/// Every key is optional; model and solver keys default to the reference
/// parameter set and the solver defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub atom_number: Option<f64>,
    pub recoil_frequency: Option<f64>,
    pub cavity_detuning: Option<f64>,
    pub loss_rate: Option<f64>,
    pub light_shift: Option<f64>,
    pub mode_cutoff: Option<usize>,
    /// Nominal coupling y for `solve`; excludes `pump_amplitude`.
    pub coupling: Option<f64>,
    pub pump_amplitude: Option<f64>,

    pub mode: Option<Mode>,
    pub max_iterations: Option<usize>,
    pub alpha_tolerance: Option<f64>,
    pub correlation_tolerance: Option<f64>,
    pub mixing: Option<f64>,
    pub anderson_depth: Option<usize>,
    pub guard: Option<f64>,
    pub init: Option<InitKind>,
    pub seed: Option<u64>,

    pub y_grid: Option<Vec<f64>>,
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
    pub y_points: Option<usize>,

    pub atom_numbers: Option<Vec<f64>>,
    /// Leading entries of `atom_numbers` left out of the fits; defaults to
    /// those below 1000.
    pub discard: Option<usize>,
    /// Directory for one sweep CSV per atom number (`scaling`).
    pub sweep_dir: Option<PathBuf>,

    pub window_lo: Option<f64>,
    pub window_hi: Option<f64>,
    pub collapse_points: Option<usize>,
    pub epsilon: Option<f64>,
    /// Score generated data with a known collapse instead of solving.
    pub synthetic: Option<bool>,
    /// Rescaled-curve CSV (`collapse`).
    pub curves_csv: Option<PathBuf>,
}

pub const DEFAULT_Y_RANGE: (f64, f64) = (1.8, 2.2);
pub const DEFAULT_Y_POINTS: usize = 161;
pub const DEFAULT_WINDOW: (f64, f64) = (1e-3, 0.2);
pub const DEFAULT_COLLAPSE_POINTS: usize = 40;

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(m) = o.mode {
            self.mode = Some(m);
        }
        if let Some(s) = o.seed {
            self.seed = Some(s);
            self.init.get_or_insert(InitKind::Random);
        }
    }

    /// Model parameters; the coupling is applied when given.
    pub fn params(&self) -> Result<ModelParams, ConfigError> {
        let d = ModelParams::default();
        let mut p = ModelParams {
            atom_number: self.atom_number.unwrap_or(d.atom_number),
            recoil_frequency: self.recoil_frequency.unwrap_or(d.recoil_frequency),
            cavity_detuning: self.cavity_detuning.unwrap_or(d.cavity_detuning),
            loss_rate: self.loss_rate.unwrap_or(d.loss_rate),
            light_shift: self.light_shift.unwrap_or(d.light_shift),
            pump_amplitude: self.pump_amplitude.unwrap_or(0.0),
            mode_cutoff: self.mode_cutoff.unwrap_or(d.mode_cutoff),
        };
        match (self.coupling, self.pump_amplitude) {
            (Some(_), Some(_)) => {
                return Err(bad("give either `coupling` or `pump_amplitude`, not both"))
            }
            (Some(y), None) => p = p.with_coupling(y),
            _ => {}
        }
        p.validate().map_err(|e| bad(e.to_string()))?;
        Ok(p)
    }

    pub fn solver(&self) -> Result<SolverConfig, ConfigError> {
        let d = SolverConfig::default();
        let init = match (self.init, self.seed) {
            (Some(InitKind::Random), Some(seed)) => Init::Random { seed },
            (Some(InitKind::Random), None) => {
                return Err(bad("`init: random` needs an explicit `seed`"))
            }
            (Some(_), Some(_)) => return Err(bad("`seed` is only meaningful with `init: random`")),
            (Some(InitKind::Bogoliubov), None) => Init::Bogoliubov,
            (Some(InitKind::Deterministic), None) => Init::Deterministic,
            (None, Some(seed)) => Init::Random { seed },
            (None, None) => d.init,
        };
        let cfg = SolverConfig {
            mode: self.mode.unwrap_or(d.mode),
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            alpha_tolerance: self.alpha_tolerance.unwrap_or(d.alpha_tolerance),
            correlation_tolerance: self
                .correlation_tolerance
                .unwrap_or(d.correlation_tolerance),
            mixing: self.mixing.unwrap_or(d.mixing),
            anderson_depth: self.anderson_depth.unwrap_or(d.anderson_depth),
            init,
            guard: self.guard.unwrap_or(d.guard),
        };
        cfg.validate().map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    pub fn coupling(&self) -> Result<f64, ConfigError> {
        match (self.coupling, self.pump_amplitude) {
            (None, None) => Err(bad("`solve` needs `coupling` (or `pump_amplitude`)")),
            _ => Ok(self.params()?.nominal_coupling()),
        }
    }

    /// The explicit `y_grid`, or `y_points` evenly spaced couplings on
    /// `[y_min, y_max]`.
    pub fn y_grid(&self) -> Result<Vec<f64>, ConfigError> {
        if let Some(g) = &self.y_grid {
            if self.y_min.is_some() || self.y_max.is_some() || self.y_points.is_some() {
                return Err(bad("`y_grid` excludes `y_min`, `y_max` and `y_points`"));
            }
            return Ok(g.clone());
        }
        let lo = self.y_min.unwrap_or(DEFAULT_Y_RANGE.0);
        let hi = self.y_max.unwrap_or(DEFAULT_Y_RANGE.1);
        let n = self.y_points.unwrap_or(DEFAULT_Y_POINTS);
        if n == 0 {
            return Err(bad("`y_points` must be positive"));
        }
        if n == 1 {
            return Ok(vec![lo]);
        }
        if !(lo < hi) {
            return Err(bad("`y_min` must be below `y_max`"));
        }
        Ok((0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect())
    }

    pub fn atom_numbers(&self) -> Result<Vec<f64>, ConfigError> {
        let ns = self
            .atom_numbers
            .clone()
            .ok_or_else(|| bad("`atom_numbers` is required"))?;
        if ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("`atom_numbers` must be strictly ascending"));
        }
        Ok(ns)
    }

    pub fn discard(&self, atom_numbers: &[f64]) -> usize {
        self.discard
            .unwrap_or_else(|| atom_numbers.iter().take_while(|&&n| n < 1e3).count())
    }

    pub fn window(&self) -> Result<CollapseWindow, ConfigError> {
        let w = CollapseWindow {
            lo: self.window_lo.unwrap_or(DEFAULT_WINDOW.0),
            hi: self.window_hi.unwrap_or(DEFAULT_WINDOW.1),
        };
        w.validate().map_err(|e| bad(e.to_string()))?;
        Ok(w)
    }
}
