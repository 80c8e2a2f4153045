//! Run orchestration and output files.
//!
//! A run writes three files into the output directory:
//!
//! * `rate_region.csv`: one row per weight vector,
//!   `w1,w2,R1_mbps,R2_mbps,lambda_1,...,lambda_T,converged`
//! * `covariance_spectrum.csv`: every entry of every BC covariance at the
//!   spectrum weights, `tone,freq_mhz,user,m,n,value_dbm_hz,sign`
//! * `summary.json`: per-point diagnostics plus a config echo
//!
//! CSV bodies depend only on the config and seed. Timestamps and wall time
//! live in the summary header.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::{RunConfig, RunInputs};
use crate::error::Result;
use crate::rates::WeightVector;
use crate::solver::{self, SolveOptions, SolveResult};
use crate::units::{mw_to_dbm, PowerBudget, ToneGrid};

pub const RATE_REGION_FILE: &str = "rate_region.csv";
pub const SPECTRUM_FILE: &str = "covariance_spectrum.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TABLE_FILE: &str = "rate_table.txt";

/// Process-level outcome of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Every point converged and passed the duality check.
    Clean,
    /// Some points did not converge or failed the duality check.
    Partial,
    /// No point converged.
    Failed,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Clean => 0,
            Self::Failed => 1,
            Self::Partial => 2,
        }
    }

    fn of(points: &[PointSummary]) -> Self {
        let ok = points.iter().filter(|p| p.converged && p.duality_passed).count();
        if ok == points.len() {
            Self::Clean
        } else if points.iter().any(|p| p.converged) {
            Self::Partial
        } else {
            Self::Failed
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    pub weights: Vec<f64>,
    pub rates_mbps: Vec<f64>,
    pub rates_bits: Vec<f64>,
    pub modem_power_mw: Vec<f64>,
    /// `None` for a line carrying no power.
    pub modem_power_dbm: Vec<Option<f64>>,
    pub multipliers: Vec<f64>,
    pub decode_order: Vec<usize>,
    pub residuals_mw: Vec<f64>,
    pub cs_residual: f64,
    pub objective: f64,
    pub dual_value: f64,
    pub relative_gap: f64,
    pub max_rel_rate_delta: f64,
    pub max_rel_power_delta: f64,
    pub duality_passed: bool,
    pub iterations: usize,
    pub converged: bool,
    pub warm_started: bool,
}

impl PointSummary {
    pub fn new(r: &SolveResult, warm_started: bool) -> Self {
        Self {
            weights: r.weights.as_slice().to_vec(),
            rates_mbps: r.rates_mbps.clone(),
            rates_bits: r.rates_bits.clone(),
            modem_power_mw: r.modem_power_mw.clone(),
            modem_power_dbm: r.modem_power_mw.iter().map(|&p| mw_to_dbm(p).ok()).collect(),
            multipliers: r.multipliers.as_slice().to_vec(),
            decode_order: r.order.clone(),
            residuals_mw: r.residuals.clone(),
            cs_residual: r.cs_residual,
            objective: r.objective,
            dual_value: r.dual_value,
            relative_gap: r.relative_gap(),
            max_rel_rate_delta: r.duality.max_rel_rate_delta,
            max_rel_power_delta: r.duality.max_rel_power_delta,
            duality_passed: r.duality.passed,
            iterations: r.iterations,
            converged: r.converged,
            warm_started,
        }
    }
}

/// Rates of a two-user sweep under both encoding orders.
#[derive(Debug, Clone, Serialize)]
pub struct OrderTable {
    pub w1: Vec<f64>,
    /// `(R1, R2)` in Mbps with user 1 encoded first.
    pub user1_first: Vec<(f64, f64)>,
    /// `(R1, R2)` in Mbps with user 2 encoded first.
    pub user2_first: Vec<(f64, f64)>,
}

impl OrderTable {
    /// Two-row text layout, one column per weight.
    pub fn render(&self) -> String {
        let mut out = String::from("R1/R2 (Mbps)");
        for w in &self.w1 {
            let _ = write!(out, "\tw1={w:.1}");
        }
        out.push('\n');
        for (label, row) in [("User 1 first", &self.user1_first), ("User 2 first", &self.user2_first)] {
            out.push_str(label);
            for (a, b) in row {
                let _ = write!(out, "\t{a:.2}/{b:.2}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryHeader {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub timestamp_unix_s: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub header: SummaryHeader,
    pub status: RunStatus,
    pub budget: PowerBudget,
    pub n_active_tones: usize,
    pub points: Vec<PointSummary>,
    /// Weights of the covariance spectrum.
    pub spectrum_weights: Vec<f64>,
    pub table: Option<OrderTable>,
    pub config: RunConfig,
    #[serde(skip)]
    pub files: Vec<PathBuf>,
}

/// Sweeps the configured weights and writes all outputs.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    execute(config, &config.sweep, config.output.table)
}

/// Solves a single weight vector and writes all outputs.
pub fn run_point(config: &RunConfig, w: &WeightVector) -> Result<RunSummary> {
    execute(config, std::slice::from_ref(w), false)
}

fn solve_one(config: &RunConfig, inputs: &RunInputs, w: &WeightVector, opts: &SolveOptions) -> Result<SolveResult> {
    let RunInputs { channel, noise, budget } = inputs;
    match budget {
        PowerBudget::Total { .. } => {
            solver::solve_total_power_with(channel, noise, &config.grid, &config.bands, w, budget, &config.solver, opts)
        }
        PowerBudget::PerModem { .. } => {
            solver::solve_per_modem_with(channel, noise, &config.grid, &config.bands, w, budget, &config.solver, opts)
        }
    }
}

fn execute(config: &RunConfig, weights: &[WeightVector], table: bool) -> Result<RunSummary> {
    let started = Instant::now();
    let inputs = config.inputs()?;
    let results = solver::sweep_rate_region_full(
        &inputs.channel,
        &inputs.noise,
        &config.grid,
        &config.bands,
        weights,
        &inputs.budget,
        &config.solver,
        config.output.warm_start,
        None,
    )?;
    for (r, _) in &results {
        if !r.converged {
            log::warn!("weights {:?} did not converge (residuals {:?} mW)", r.weights.as_slice(), r.residuals);
        }
    }

    let spectrum_weights = if weights.len() == 1 { weights[0].clone() } else { config.point.clone() };
    let extra;
    let spectrum = match results.iter().find(|(r, _)| r.weights == spectrum_weights) {
        Some((r, _)) => r,
        None => {
            extra = solve_one(config, &inputs, &spectrum_weights, &SolveOptions::default())?;
            &extra
        }
    };

    let table = if table && inputs.channel.n_users() == 2 {
        Some(order_table(config, &inputs, &results)?)
    } else {
        None
    };

    let dir = &config.output.dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let results_only: Vec<&SolveResult> = results.iter().map(|(r, _)| r).collect();
    files.push(write_file(dir, RATE_REGION_FILE, &rate_region_csv(&results_only, inputs.channel.n_tx()))?);
    files.push(write_file(dir, SPECTRUM_FILE, &covariance_spectrum_csv(spectrum, &config.grid)?)?);
    if let Some(t) = &table {
        files.push(write_file(dir, TABLE_FILE, &t.render())?);
    }

    let points: Vec<PointSummary> = results.iter().map(|(r, warm)| PointSummary::new(r, *warm)).collect();
    let summary = RunSummary {
        header: SummaryHeader {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            timestamp_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_time_s: started.elapsed().as_secs_f64(),
        },
        status: RunStatus::of(&points),
        budget: inputs.budget.clone(),
        n_active_tones: spectrum.active_tones.len(),
        points,
        spectrum_weights: spectrum_weights.as_slice().to_vec(),
        table,
        config: config.clone(),
        files: Vec::new(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| crate::Error::Config(e.to_string()))?;
    files.push(write_file(dir, SUMMARY_FILE, &(json + "\n"))?);
    Ok(RunSummary { files, ..summary })
}

fn order_table(config: &RunConfig, inputs: &RunInputs, results: &[(SolveResult, bool)]) -> Result<OrderTable> {
    // user 1 encoded first means user 1 is decoded last on the MAC
    let user1_first = [1usize, 0];
    let user2_first = [0usize, 1];
    let mut t = OrderTable { w1: Vec::new(), user1_first: Vec::new(), user2_first: Vec::new() };
    for (r, _) in results {
        let pair = |x: &SolveResult| (x.rates_mbps[0], x.rates_mbps[1]);
        let other_order = if r.order == user1_first { user2_first } else { user1_first };
        let opts = SolveOptions { init: Some(r.multipliers.clone()), decode_order: Some(other_order.to_vec()) };
        let other = solve_one(config, inputs, &r.weights, &opts)?;
        let (a, b) = if r.order == user1_first { (pair(r), pair(&other)) } else { (pair(&other), pair(r)) };
        t.w1.push(r.weights.as_slice()[0]);
        t.user1_first.push(a);
        t.user2_first.push(b);
    }
    Ok(t)
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path)?;
    f.write_all(body.as_bytes())?;
    Ok(path)
}

/// `w1..wU,R1_mbps..RU_mbps,lambda_1..lambda_T,converged`.
pub fn rate_region_csv(results: &[&SolveResult], n_tx: usize) -> String {
    let n_users = results.first().map_or(0, |r| r.weights.len());
    let mut cols: Vec<String> = (1..=n_users).map(|u| format!("w{u}")).collect();
    cols.extend((1..=n_users).map(|u| format!("R{u}_mbps")));
    cols.extend((1..=n_tx).map(|t| format!("lambda_{t}")));
    cols.push("converged".into());
    let mut out = cols.join(",");
    out.push('\n');
    for r in results {
        let fields = r
            .weights
            .as_slice()
            .iter()
            .chain(&r.rates_mbps)
            .chain(r.multipliers.as_slice())
            .map(|x| x.to_string())
            .chain(std::iter::once(r.converged.to_string()));
        out.push_str(&fields.collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Level in dBm/Hz and sign of one covariance entry. Diagonal entries are
/// real; off-diagonal entries report their magnitude with the sign of the
/// real part. Zero entries give `-inf` with sign 0.
pub fn spectrum_entry(z: num_complex::Complex64, spacing_hz: f64) -> (f64, i8) {
    let mag = z.norm();
    if mag == 0.0 {
        return (f64::NEG_INFINITY, 0);
    }
    let level = 10.0 * (mag / spacing_hz).log10();
    (level, if z.re < 0.0 { -1 } else { 1 })
}

/// `tone,freq_mhz,user,m,n,value_dbm_hz,sign` for every active tone, user
/// and matrix entry (all indices 1-based).
pub fn covariance_spectrum_csv(r: &SolveResult, grid: &ToneGrid) -> Result<String> {
    let mut out = String::from("tone,freq_mhz,user,m,n,value_dbm_hz,sign\n");
    for &i in &r.active_tones {
        let f = grid.tone_frequency(i)? / 1e6;
        for (j, q) in r.bc.0[i - 1].iter().enumerate() {
            for m in 0..q.nrows() {
                for n in 0..q.ncols() {
                    let (v, s) = spectrum_entry(q[(m, n)], grid.spacing_hz);
                    let _ = writeln!(out, "{i},{f},{},{},{},{v},{s}", j + 1, m + 1, n + 1);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn spectrum_entry_conventions() {
        let (v, s) = spectrum_entry(Complex64::new(1.0, 0.0), 1.0);
        assert_eq!((v, s), (0.0, 1));
        let (v, s) = spectrum_entry(Complex64::new(-3.0, 4.0), 5.0);
        assert_eq!((v, s), (0.0, -1));
        assert_eq!(spectrum_entry(Complex64::new(0.0, 0.0), 4312.5), (f64::NEG_INFINITY, 0));
        let a = spectrum_entry(Complex64::new(0.3, 0.7), 4312.5);
        let b = spectrum_entry(Complex64::new(0.3, -0.7), 4312.5);
        assert_eq!(a, b);
    }

    #[test]
    fn status_from_points() {
        let p = |converged, duality_passed| PointSummary {
            weights: vec![],
            rates_mbps: vec![],
            rates_bits: vec![],
            modem_power_mw: vec![],
            modem_power_dbm: vec![],
            multipliers: vec![],
            decode_order: vec![],
            residuals_mw: vec![],
            cs_residual: 0.0,
            objective: 0.0,
            dual_value: 0.0,
            relative_gap: 0.0,
            max_rel_rate_delta: 0.0,
            max_rel_power_delta: 0.0,
            duality_passed,
            iterations: 0,
            converged,
            warm_started: false,
        };
        assert_eq!(RunStatus::of(&[p(true, true), p(true, true)]), RunStatus::Clean);
        assert_eq!(RunStatus::of(&[p(true, true), p(false, true)]), RunStatus::Partial);
        assert_eq!(RunStatus::of(&[p(true, false)]), RunStatus::Partial);
        assert_eq!(RunStatus::of(&[p(false, true)]), RunStatus::Failed);
        assert_eq!(RunStatus::Partial.exit_code(), 2);
    }

    #[test]
    fn table_layout() {
        let t = OrderTable { w1: vec![0.0, 1.0], user1_first: vec![(0.0, 95.93), (142.4, 0.0)], user2_first: vec![(0.0, 95.93), (142.4, 0.0)] };
        let text = t.render();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "R1/R2 (Mbps)\tw1=0.0\tw1=1.0");
        assert_eq!(lines[1], "User 1 first\t0.00/95.93\t142.40/0.00");
        assert!(lines[2].starts_with("User 2 first"));
    }
}
