//! Run configuration: TOML parsing, defaults and validation.
//!
//! Every section is optional. Unknown keys are rejected with the key name
//! and its position in the document.
//!
//! ```toml
//! seed = 7
//!
//! [grid]
//! preset = "desk"          # "vdsl" | "desk" | "wideband"
//!
//! [bands]
//! preset = "full"          # "vdsl_downstream" | "wideband" | "full" | "none"
//!
//! [channel.scenario]
//! mode = "DM"
//! loop_lengths_m = [400.0, 800.0]
//!
//! [budget]
//! kind = "per_modem"
//! per_modem_dbm = [14.5, 14.5]
//!
//! [weights]
//! w1 = [0.0, 0.5, 1.0]
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelTensor, NoiseSpec, ScenarioSpec};
use crate::error::{Error, Result};
use crate::rates::WeightVector;
use crate::solver::{self, SolverParams};
use crate::units::{dbm_to_mw, BandPlan, PowerBudget, ToneGrid, VDSL_SPACING_HZ, VDSL_SYMBOL_RATE_HZ};

/// Default per-line budget, dBm.
pub const DEFAULT_PER_LINE_DBM: f64 = 14.5;
/// Default total budget, dBm. Kept as quoted for the two-modem total-power
/// runs even though it is not the sum of two 14.5 dBm lines.
pub const DEFAULT_TOTAL_DBM: f64 = 29.0;
/// Tones in the default VDSL grid (up to about 8.8 MHz).
pub const VDSL_TONES: usize = 2048;
/// Upper edge of the wideband preset.
pub const WIDEBAND_HZ: f64 = 30e6;

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    seed: Option<u64>,
    grid: RawGrid,
    bands: RawBands,
    channel: RawChannel,
    noise: RawNoise,
    budget: RawBudget,
    weights: RawWeights,
    solver: RawSolver,
    output: RawOutput,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawGrid {
    preset: Option<String>,
    n_tones: Option<usize>,
    spacing_hz: Option<f64>,
    symbol_rate_hz: Option<f64>,
    start_hz: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawBands {
    preset: Option<String>,
    label: Option<String>,
    intervals: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawChannel {
    csv: Option<PathBuf>,
    scenario: Option<ScenarioSpec>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawNoise {
    psd_dbm_hz: Option<f64>,
    csv: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawBudget {
    kind: Option<String>,
    total_dbm: Option<f64>,
    total_mw: Option<f64>,
    per_modem_dbm: Option<Vec<f64>>,
    per_modem_mw: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawWeights {
    w1: Option<Vec<f64>>,
    vectors: Option<Vec<Vec<f64>>>,
    point: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSolver {
    psd_grid: Option<Vec<f64>>,
    psd_levels: Option<usize>,
    psd_lo_dbm_hz: Option<f64>,
    psd_hi_dbm_hz: Option<f64>,
    refine: Option<bool>,
    eps_power_rel: Option<f64>,
    lambda_init: Option<f64>,
    step_init: Option<f64>,
    step_floor: Option<f64>,
    max_outer_iters: Option<usize>,
    lambda_bounds: Option<(f64, f64)>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawOutput {
    dir: Option<PathBuf>,
    warm_start: Option<bool>,
    table: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSource {
    Scenario(ScenarioSpec),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    Flat { psd_dbm_hz: f64 },
    Csv(PathBuf),
}

/// Budget as configured. Per-modem budgets without an explicit vector
/// default to [`DEFAULT_PER_LINE_DBM`] on every line.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BudgetConfig {
    Total { total_mw: f64 },
    PerModem { per_modem_mw: Option<Vec<f64>> },
}

impl BudgetConfig {
    pub fn resolve(&self, n_tx: usize) -> Result<PowerBudget> {
        match self {
            Self::Total { total_mw } => PowerBudget::total(*total_mw),
            Self::PerModem { per_modem_mw: None } => {
                PowerBudget::per_modem(vec![dbm_to_mw(DEFAULT_PER_LINE_DBM); n_tx])
            }
            Self::PerModem { per_modem_mw: Some(p) } => {
                if p.len() != n_tx {
                    return Err(cfg(format!("budget: {} per-modem entries for {n_tx} transmit lines", p.len())));
                }
                PowerBudget::per_modem(p.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Start each sweep point from the previous point's multipliers.
    pub warm_start: bool,
    /// Print the two-order rate table after a sweep.
    pub table: bool,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: ToneGrid,
    pub bands: BandPlan,
    pub channel: ChannelSource,
    pub noise: NoiseSource,
    pub budget: BudgetConfig,
    /// Weight vectors of the rate-region sweep.
    pub sweep: Vec<WeightVector>,
    /// Weights of single-point solves and of the covariance spectrum.
    pub point: WeightVector,
    pub solver: SolverParams,
    pub output: OutputConfig,
}

/// Channel, noise and budget materialized from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub channel: ChannelTensor,
    pub noise: NoiseSpec,
    pub budget: PowerBudget,
}

fn grid_from(raw: &RawGrid) -> Result<ToneGrid> {
    let base = match raw.preset.as_deref().unwrap_or("vdsl") {
        "vdsl" => ToneGrid::vdsl(VDSL_TONES),
        "desk" => desk_grid(),
        "wideband" => ToneGrid::vdsl((WIDEBAND_HZ / VDSL_SPACING_HZ).ceil() as usize),
        other => return Err(cfg(format!("grid.preset: unknown preset '{other}'"))),
    };
    ToneGrid::new(
        raw.n_tones.unwrap_or(base.n_tones),
        raw.spacing_hz.unwrap_or(base.spacing_hz),
        raw.symbol_rate_hz.unwrap_or(base.symbol_rate_hz),
        raw.start_hz.unwrap_or(base.start_hz),
    )
    .map_err(|e| cfg(format!("grid: {e}")))
}

/// 128 tones at 16x the VDSL spacing starting at 138 kHz, a small grid
/// spanning the same band.
pub fn desk_grid() -> ToneGrid {
    ToneGrid { n_tones: 128, spacing_hz: 16.0 * VDSL_SPACING_HZ, symbol_rate_hz: VDSL_SYMBOL_RATE_HZ, start_hz: 138e3 }
}

fn bands_from(raw: &RawBands, grid: &ToneGrid) -> Result<BandPlan> {
    if let Some(iv) = &raw.intervals {
        if raw.preset.is_some() {
            return Err(cfg("bands: give either preset or intervals, not both"));
        }
        let label = raw.label.clone().unwrap_or_else(|| "custom".into());
        return BandPlan::new(label, iv.clone()).map_err(|e| cfg(format!("bands.intervals: {e}")));
    }
    let mut plan = match raw.preset.as_deref().unwrap_or("vdsl_downstream") {
        "vdsl_downstream" => BandPlan::vdsl_downstream(),
        "wideband" => BandPlan::new("wideband", vec![(0.0, WIDEBAND_HZ)])?,
        "full" => BandPlan::full(grid),
        "none" => BandPlan::empty(),
        other => return Err(cfg(format!("bands.preset: unknown preset '{other}'"))),
    };
    if let Some(l) = &raw.label {
        plan.label = l.clone();
    }
    Ok(plan)
}

fn budget_from(raw: &RawBudget) -> Result<BudgetConfig> {
    let kind = raw.kind.as_deref().unwrap_or("per_modem");
    match kind {
        "total" => {
            if raw.per_modem_dbm.is_some() || raw.per_modem_mw.is_some() {
                return Err(cfg("budget: per-modem keys given with kind = \"total\""));
            }
            let total_mw = match (raw.total_dbm, raw.total_mw) {
                (Some(_), Some(_)) => return Err(cfg("budget: give total_dbm or total_mw, not both")),
                (Some(d), None) => dbm_to_mw(d),
                (None, Some(m)) => m,
                (None, None) => dbm_to_mw(DEFAULT_TOTAL_DBM),
            };
            PowerBudget::total(total_mw).map_err(|e| cfg(format!("budget.total: {e}")))?;
            Ok(BudgetConfig::Total { total_mw })
        }
        "per_modem" => {
            if raw.total_dbm.is_some() || raw.total_mw.is_some() {
                return Err(cfg("budget: total keys given with kind = \"per_modem\""));
            }
            let per_modem_mw = match (&raw.per_modem_dbm, &raw.per_modem_mw) {
                (Some(_), Some(_)) => return Err(cfg("budget: give per_modem_dbm or per_modem_mw, not both")),
                (Some(d), None) => Some(d.iter().map(|&x| dbm_to_mw(x)).collect::<Vec<_>>()),
                (None, Some(m)) => Some(m.clone()),
                (None, None) => None,
            };
            if let Some(p) = &per_modem_mw {
                PowerBudget::per_modem(p.clone()).map_err(|e| cfg(format!("budget.per_modem: {e}")))?;
            }
            Ok(BudgetConfig::PerModem { per_modem_mw })
        }
        other => Err(cfg(format!("budget.kind: expected \"total\" or \"per_modem\", got '{other}'"))),
    }
}

/// `w1 = 0.0, 0.1, ..., 1.0`.
pub fn default_w1() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

fn weights_from(raw: &RawWeights, n_users: Option<usize>) -> Result<(Vec<WeightVector>, WeightVector)> {
    let weight = |v: Vec<f64>, key: &str| WeightVector::new(v).map_err(|e| cfg(format!("weights.{key}: {e}")));
    let sweep = match (&raw.w1, &raw.vectors) {
        (Some(_), Some(_)) => return Err(cfg("weights: give w1 or vectors, not both")),
        (Some(w1), None) => w1
            .iter()
            .map(|&x| {
                if !(0.0..=1.0).contains(&x) {
                    return Err(cfg(format!("weights.w1: {x} outside [0, 1]")));
                }
                weight(vec![x, 1.0 - x], "w1")
            })
            .collect::<Result<Vec<_>>>()?,
        (None, Some(v)) => v.iter().map(|w| weight(w.clone(), "vectors")).collect::<Result<Vec<_>>>()?,
        (None, None) => match n_users {
            Some(2) | None => default_w1().into_iter().map(|x| weight(vec![x, 1.0 - x], "w1")).collect::<Result<_>>()?,
            Some(u) => vec![weight(vec![1.0 / u as f64; u], "vectors")?],
        },
    };
    if sweep.is_empty() {
        return Err(cfg("weights: sweep is empty"));
    }
    let point = match &raw.point {
        Some(p) => weight(p.clone(), "point")?,
        None => {
            let u = n_users.unwrap_or(sweep[0].len());
            weight(vec![1.0 / u as f64; u], "point")?
        }
    };
    if sweep.iter().any(|w| w.len() != point.len()) {
        return Err(cfg("weights: all weight vectors must have the same length"));
    }
    if let Some(u) = n_users {
        if point.len() != u {
            return Err(cfg(format!("weights: {} entries for {u} users", point.len())));
        }
    }
    Ok((sweep, point))
}

fn solver_from(raw: &RawSolver, grid: &ToneGrid) -> Result<SolverParams> {
    let d = SolverParams::default();
    let psd_grid = match &raw.psd_grid {
        Some(g) => {
            if raw.psd_levels.is_some() || raw.psd_lo_dbm_hz.is_some() || raw.psd_hi_dbm_hz.is_some() {
                return Err(cfg("solver: psd_grid excludes psd_levels/psd_lo_dbm_hz/psd_hi_dbm_hz"));
            }
            g.clone()
        }
        None => solver::log_psd_grid(
            grid.spacing_hz,
            raw.psd_lo_dbm_hz.unwrap_or(-120.0),
            raw.psd_hi_dbm_hz.unwrap_or(-40.0),
            raw.psd_levels.unwrap_or(solver::DEFAULT_GRID_LEVELS),
        ),
    };
    let params = SolverParams {
        psd_grid,
        refine: raw.refine.unwrap_or(d.refine),
        eps_power_rel: raw.eps_power_rel.unwrap_or(d.eps_power_rel),
        lambda_init: raw.lambda_init.unwrap_or(d.lambda_init),
        step_init: raw.step_init.unwrap_or(d.step_init),
        step_floor: raw.step_floor.unwrap_or(d.step_floor),
        max_outer_iters: raw.max_outer_iters.unwrap_or(d.max_outer_iters),
        lambda_bounds: raw.lambda_bounds.unwrap_or(d.lambda_bounds),
    };
    params.validate().map_err(|e| cfg(format!("solver: {e}")))?;
    Ok(params)
}

/// Parses and validates a TOML run configuration. Relative CSV paths are
/// kept as written; see [`load_config`] for file-relative resolution.
pub fn parse_config(source: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(source).map_err(|e| cfg(e.to_string().trim_end().to_string()))?;
    let grid = grid_from(&raw.grid)?;
    let bands = bands_from(&raw.bands, &grid)?;

    let channel = match (&raw.channel.csv, &raw.channel.scenario) {
        (Some(_), Some(_)) => return Err(cfg("channel: give either csv or scenario, not both")),
        (Some(p), None) => ChannelSource::Csv(p.clone()),
        (None, s) => {
            let mut spec = s.clone().unwrap_or_default();
            if let Some(seed) = raw.seed {
                spec.seed = seed;
            }
            spec.validate().map_err(|e| cfg(format!("channel.scenario: {e}")))?;
            ChannelSource::Scenario(spec)
        }
    };
    let seed = match &channel {
        ChannelSource::Scenario(s) => s.seed,
        ChannelSource::Csv(_) => raw.seed.unwrap_or(0),
    };
    let noise = match (raw.noise.psd_dbm_hz, &raw.noise.csv) {
        (Some(_), Some(_)) => return Err(cfg("noise: give either psd_dbm_hz or csv, not both")),
        (_, Some(p)) => NoiseSource::Csv(p.clone()),
        (p, None) => {
            let psd_dbm_hz = p.unwrap_or(-140.0);
            NoiseSpec::Flat(psd_dbm_hz).validate(1, 1).map_err(|e| cfg(format!("noise.psd_dbm_hz: {e}")))?;
            NoiseSource::Flat { psd_dbm_hz }
        }
    };

    let budget = budget_from(&raw.budget)?;
    let n_users = match &channel {
        ChannelSource::Scenario(s) => {
            budget.resolve(s.n_tx())?;
            Some(s.loop_lengths_m.len())
        }
        ChannelSource::Csv(_) => None,
    };
    let (sweep, point) = weights_from(&raw.weights, n_users)?;
    let solver = solver_from(&raw.solver, &grid)?;
    let output = OutputConfig {
        dir: raw.output.dir.clone().unwrap_or_else(|| PathBuf::from("out")),
        warm_start: raw.output.warm_start.unwrap_or(true),
        table: raw.output.table.unwrap_or(true),
    };
    Ok(RunConfig { seed, grid, bands, channel, noise, budget, sweep, point, solver, output })
}

/// Reads a config file and resolves relative CSV paths against its
/// directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut config = parse_config(&text).map_err(|e| match e {
        Error::Config(m) => cfg(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let rebase = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if let ChannelSource::Csv(p) = &mut config.channel {
        rebase(p);
    }
    if let NoiseSource::Csv(p) = &mut config.noise {
        rebase(p);
    }
    Ok(config)
}

impl RunConfig {
    /// Overrides the scenario seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let ChannelSource::Scenario(s) = &mut self.channel {
            s.seed = seed;
        }
        self
    }

    /// Synthesizes or loads the channel and noise and checks them against
    /// the budget and weights.
    pub fn inputs(&self) -> Result<RunInputs> {
        let channel = match &self.channel {
            ChannelSource::Scenario(s) => channel::synth_channel(s, &self.grid)?,
            ChannelSource::Csv(p) => channel::load_channel_csv(std::fs::File::open(p)?)?,
        };
        if channel.n_tones() != self.grid.n_tones {
            return Err(cfg(format!(
                "channel: {} tones but grid.n_tones = {}",
                channel.n_tones(),
                self.grid.n_tones
            )));
        }
        let noise = match &self.noise {
            NoiseSource::Flat { psd_dbm_hz } => NoiseSpec::Flat(*psd_dbm_hz),
            NoiseSource::Csv(p) => channel::load_noise_csv(std::fs::File::open(p)?, channel.n_tones(), channel.n_rx())?,
        };
        let budget = self.budget.resolve(channel.n_tx())?;
        if self.point.len() != channel.n_users() {
            return Err(cfg(format!("weights: {} entries for {} users", self.point.len(), channel.n_users())));
        }
        Ok(RunInputs { channel, noise, budget })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.grid.spacing_hz, 4312.5);
        assert_eq!(c.grid.symbol_rate_hz, 4000.0);
        assert_eq!(c.noise, NoiseSource::Flat { psd_dbm_hz: -140.0 });
        assert_eq!(c.sweep.len(), 11);
        assert_eq!(c.point.as_slice(), &[0.5, 0.5]);
        let PowerBudget::PerModem { per_modem_mw } = c.budget.resolve(2).unwrap() else { panic!() };
        for p in per_modem_mw {
            assert!((crate::units::mw_to_dbm(p).unwrap() - 14.5).abs() < 1e-12);
        }
        assert_eq!(c.bands, BandPlan::vdsl_downstream());
    }

    #[test]
    fn total_budget_default_is_29_dbm() {
        let c = parse_config("[budget]\nkind = \"total\"\n").unwrap();
        let BudgetConfig::Total { total_mw } = c.budget else { panic!() };
        assert!((crate::units::mw_to_dbm(total_mw).unwrap() - 29.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = parse_config("[grid]\nn_tones = 4\nspacing = 3.0\n").unwrap_err().to_string();
        assert!(err.contains("spacing"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn budget_length_must_match_lines() {
        let err = parse_config("[budget]\nper_modem_dbm = [14.5, 14.5, 14.5]\n").unwrap_err().to_string();
        assert!(err.contains("budget"), "{err}");
        let c = parse_config("[channel.scenario]\nmode = \"DM_PM\"\n[budget]\nper_modem_dbm = [14.5, 14.5, 14.5]\n");
        assert!(c.is_ok());
    }

    #[test]
    fn two_channel_sources_rejected() {
        let err = parse_config("[channel]\ncsv = \"h.csv\"\n[channel.scenario]\nmode = \"DM\"\n").unwrap_err();
        assert!(err.to_string().contains("channel"));
    }

    #[test]
    fn psd_grid_follows_grid_spacing() {
        let c = parse_config("[grid]\npreset = \"desk\"\n").unwrap();
        assert_eq!(c.solver.psd_grid, solver::default_psd_grid(16.0 * VDSL_SPACING_HZ));
        assert_eq!(c.solver.psd_grid.len(), solver::DEFAULT_GRID_LEVELS + 1);
    }

    #[test]
    fn seed_overrides_scenario() {
        let c = parse_config("seed = 9\n[channel.scenario]\nseed = 3\n").unwrap();
        assert_eq!(c.seed, 9);
        let ChannelSource::Scenario(s) = &c.channel else { panic!() };
        assert_eq!(s.seed, 9);
        assert_eq!(c.with_seed(4).seed, 4);
    }

    #[test]
    fn bad_weights_rejected() {
        assert!(parse_config("[weights]\nw1 = [1.5]\n").is_err());
        assert!(parse_config("[weights]\nvectors = [[0.2, 0.3, 0.5]]\n").is_err());
        assert!(parse_config("[weights]\nw1 = []\n").is_err());
    }

    #[test]
    fn csv_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[channel]\ncsv = \"h.csv\"\n").unwrap();
        let c = load_config(&path).unwrap();
        assert_eq!(c.channel, ChannelSource::Csv(dir.path().join("h.csv")));
    }
}
