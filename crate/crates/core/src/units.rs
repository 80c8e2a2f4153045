//! Tone grid, band plans and power/PSD unit conversions.
//!
//! Tone indices are 1-based throughout the crate. Band intervals are closed
//! on the lower edge and open on the upper edge so that adjacent bands
//! partition the frequency axis without overlap.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Uniform DMT tone grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneGrid {
    pub n_tones: usize,
    pub spacing_hz: f64,
    pub symbol_rate_hz: f64,
    /// Frequency of tone 1.
    pub start_hz: f64,
}

/// VDSL2 subcarrier spacing.
pub const VDSL_SPACING_HZ: f64 = 4312.5;
/// VDSL2 DMT symbol rate.
pub const VDSL_SYMBOL_RATE_HZ: f64 = 4000.0;

impl ToneGrid {
    pub fn new(n_tones: usize, spacing_hz: f64, symbol_rate_hz: f64, start_hz: f64) -> Result<Self> {
        if n_tones == 0 {
            return Err(invalid("tone grid needs at least one tone"));
        }
        if !(spacing_hz.is_finite() && spacing_hz > 0.0) {
            return Err(invalid(format!("tone spacing must be positive, got {spacing_hz}")));
        }
        if !(symbol_rate_hz.is_finite() && symbol_rate_hz > 0.0) {
            return Err(invalid(format!("symbol rate must be positive, got {symbol_rate_hz}")));
        }
        if !(start_hz.is_finite() && start_hz >= 0.0) {
            return Err(invalid(format!("start frequency must be >= 0, got {start_hz}")));
        }
        Ok(Self { n_tones, spacing_hz, symbol_rate_hz, start_hz })
    }

    /// VDSL2 grid starting at DC.
    pub fn vdsl(n_tones: usize) -> Self {
        Self {
            n_tones,
            spacing_hz: VDSL_SPACING_HZ,
            symbol_rate_hz: VDSL_SYMBOL_RATE_HZ,
            start_hz: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.n_tones, self.spacing_hz, self.symbol_rate_hz, self.start_hz).map(|_| ())
    }

    /// Center frequency of tone `i` (1-based).
    pub fn tone_frequency(&self, i: usize) -> Result<f64> {
        if i == 0 || i > self.n_tones {
            return Err(invalid(format!("tone index {i} outside 1..={}", self.n_tones)));
        }
        Ok(self.start_hz + (i - 1) as f64 * self.spacing_hz)
    }

    /// Highest tone frequency on the grid.
    pub fn last_frequency(&self) -> f64 {
        self.start_hz + (self.n_tones - 1) as f64 * self.spacing_hz
    }
}

/// Sorted, disjoint list of `[f_lo, f_hi)` frequency intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPlan {
    pub label: String,
    intervals: Vec<(f64, f64)>,
}

impl BandPlan {
    pub fn new(label: impl Into<String>, mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        for &(lo, hi) in &intervals {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid(format!("band interval ({lo}, {hi}) must have f_lo < f_hi")));
            }
        }
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in intervals.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(invalid(format!(
                    "band intervals ({}, {}) and ({}, {}) overlap",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }
        Ok(Self { label: label.into(), intervals })
    }

    pub fn empty() -> Self {
        Self { label: "empty".into(), intervals: Vec::new() }
    }

    /// VDSL2 downstream FDD bands below 12 MHz.
    pub fn vdsl_downstream() -> Self {
        Self {
            label: "vdsl2-ds".into(),
            intervals: vec![(138e3, 3.75e6), (5.2e6, 8.5e6)],
        }
    }

    /// A single band covering every tone of `grid`.
    pub fn full(grid: &ToneGrid) -> Self {
        Self {
            label: "full".into(),
            intervals: vec![(grid.start_hz, grid.last_frequency() + grid.spacing_hz)],
        }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn contains(&self, f: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| f >= lo && f < hi)
    }
}

/// Ordered tone indices (1-based) whose frequency lies inside the plan.
pub fn active_tones(grid: &ToneGrid, plan: &BandPlan) -> Vec<usize> {
    (1..=grid.n_tones)
        .filter(|&i| plan.contains(grid.start_hz + (i - 1) as f64 * grid.spacing_hz))
        .collect()
}

/// Converts a PSD level to the power carried by one tone.
pub fn psd_to_tone_power(psd_dbm_hz: f64, spacing_hz: f64) -> Result<f64> {
    if !psd_dbm_hz.is_finite() || !spacing_hz.is_finite() {
        return Err(invalid("non-finite PSD or spacing"));
    }
    if spacing_hz <= 0.0 {
        return Err(invalid(format!("tone spacing must be positive, got {spacing_hz}")));
    }
    Ok(dbm_to_mw(psd_dbm_hz) * spacing_hz)
}

/// Inverse of [`psd_to_tone_power`].
pub fn tone_power_to_psd(p_mw: f64, spacing_hz: f64) -> Result<f64> {
    Ok(mw_to_dbm(p_mw)? - 10.0 * spacing_hz.log10())
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(p_mw: f64) -> Result<f64> {
    if !(p_mw > 0.0) || !p_mw.is_finite() {
        return Err(Error::Domain(format!("cannot express {p_mw} mW in dBm")));
    }
    Ok(10.0 * p_mw.log10())
}

/// Transmit power budget, stored in mW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PowerBudget {
    Total { total_mw: f64 },
    PerModem { per_modem_mw: Vec<f64> },
}

impl PowerBudget {
    pub fn total(total_mw: f64) -> Result<Self> {
        check_power(total_mw)?;
        Ok(Self::Total { total_mw })
    }

    pub fn per_modem(per_modem_mw: Vec<f64>) -> Result<Self> {
        if per_modem_mw.is_empty() {
            return Err(invalid("per-modem budget needs at least one modem"));
        }
        for &p in &per_modem_mw {
            check_power(p)?;
        }
        Ok(Self::PerModem { per_modem_mw })
    }

    pub fn total_dbm(dbm: f64) -> Result<Self> {
        Self::total(dbm_to_mw(dbm))
    }

    pub fn per_modem_dbm(levels: &[f64]) -> Result<Self> {
        Self::per_modem(levels.iter().map(|&d| dbm_to_mw(d)).collect())
    }

    /// Sum of all budgets in mW.
    pub fn sum_mw(&self) -> f64 {
        match self {
            Self::Total { total_mw } => *total_mw,
            Self::PerModem { per_modem_mw } => per_modem_mw.iter().sum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Total { total_mw } => check_power(*total_mw),
            Self::PerModem { per_modem_mw } => {
                if per_modem_mw.is_empty() {
                    return Err(invalid("per-modem budget needs at least one modem"));
                }
                per_modem_mw.iter().try_for_each(|&p| check_power(p))
            }
        }
    }
}

fn check_power(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("power budget must be positive and finite, got {p}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psd_examples() {
        assert_relative_eq!(psd_to_tone_power(-140.0, 4312.5).unwrap(), 4.3125e-11, max_relative = 1e-12);
        assert_relative_eq!(psd_to_tone_power(0.0, 1.0).unwrap(), 1.0);
        assert_relative_eq!(psd_to_tone_power(14.5, 1.0).unwrap(), 28.1838, max_relative = 1e-4);
        assert!(psd_to_tone_power(f64::NAN, 1.0).is_err());
        assert!(psd_to_tone_power(0.0, f64::INFINITY).is_err());
        assert!(psd_to_tone_power(0.0, 0.0).is_err());
    }

    #[test]
    fn dbm_examples() {
        assert_eq!(mw_to_dbm(1.0).unwrap(), 0.0);
        assert!((mw_to_dbm(28.1838).unwrap() - 14.5).abs() < 1e-3);
        assert!(matches!(mw_to_dbm(0.0), Err(Error::Domain(_))));
        assert!(mw_to_dbm(-1.0).is_err());
    }

    #[test]
    fn tone_frequency_examples() {
        let g = ToneGrid::new(2000, 4312.5, 4000.0, 0.0).unwrap();
        assert_eq!(g.tone_frequency(1).unwrap(), 0.0);
        assert_eq!(g.tone_frequency(2).unwrap(), 4312.5);
        assert_eq!(g.tone_frequency(1001).unwrap(), 4.3125e6);
        assert!(g.tone_frequency(0).is_err());
        assert!(g.tone_frequency(2001).is_err());
    }

    #[test]
    fn grid_rejects_bad_fields() {
        assert!(ToneGrid::new(0, 1.0, 1.0, 0.0).is_err());
        assert!(ToneGrid::new(1, 0.0, 1.0, 0.0).is_err());
        assert!(ToneGrid::new(1, 1.0, -1.0, 0.0).is_err());
        assert!(ToneGrid::new(1, 1.0, 1.0, -5.0).is_err());
    }

    #[test]
    fn active_tone_examples() {
        let g = ToneGrid::vdsl(2000);
        assert!(active_tones(&g, &BandPlan::empty()).is_empty());
        assert_eq!(active_tones(&g, &BandPlan::full(&g)), (1..=2000).collect::<Vec<_>>());
        let plan = BandPlan::new("ds1", vec![(138e3, 3.75e6)]).unwrap();
        let tones = active_tones(&g, &plan);
        assert_eq!(tones[0], 33);
        assert_eq!(g.tone_frequency(33).unwrap(), 138.0e3);
        // upper edge is open
        assert!(tones.iter().all(|&i| g.tone_frequency(i).unwrap() < 3.75e6));
    }

    #[test]
    fn band_plan_validation() {
        assert!(BandPlan::new("x", vec![(2.0, 1.0)]).is_err());
        assert!(BandPlan::new("x", vec![(0.0, 2.0), (1.0, 3.0)]).is_err());
        let p = BandPlan::new("x", vec![(5.0, 6.0), (0.0, 2.0)]).unwrap();
        assert_eq!(p.intervals(), &[(0.0, 2.0), (5.0, 6.0)]);
        // touching intervals are allowed
        assert!(BandPlan::new("x", vec![(0.0, 2.0), (2.0, 3.0)]).is_ok());
    }

    #[test]
    fn budget_validation() {
        assert!(PowerBudget::total(0.0).is_err());
        assert!(PowerBudget::total(f64::NAN).is_err());
        assert!(PowerBudget::per_modem(vec![1.0, -1.0]).is_err());
        assert!(PowerBudget::per_modem(vec![]).is_err());
        let b = PowerBudget::per_modem_dbm(&[14.5, 14.5]).unwrap();
        assert_relative_eq!(b.sum_mw(), 2.0 * 28.183829312644537, max_relative = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dbm_round_trip(p in 1e-12f64..1e3) {
                let back = dbm_to_mw(mw_to_dbm(p).unwrap());
                prop_assert!(((back - p) / p).abs() <= 1e-12);
            }

            #[test]
            fn psd_monotone_and_linear(a in -200f64..50.0, d in 1e-3f64..10.0, s in 1.0f64..1e5) {
                prop_assert!(psd_to_tone_power(a + d, s).unwrap() > psd_to_tone_power(a, s).unwrap());
                let one = psd_to_tone_power(a, s).unwrap();
                let two = psd_to_tone_power(a, 2.0 * s).unwrap();
                prop_assert!(((two - 2.0 * one) / two).abs() < 1e-14);
            }

            #[test]
            fn disjoint_plan_union(split in 1usize..199, n in 200usize..400) {
                let g = ToneGrid::new(n, 1000.0, 1000.0, 0.0).unwrap();
                let cut = split as f64 * 1000.0 + 500.0;
                let a = BandPlan::new("a", vec![(0.0, cut)]).unwrap();
                let b = BandPlan::new("b", vec![(cut, 1e9)]).unwrap();
                let ab = BandPlan::new("ab", vec![(0.0, cut), (cut, 1e9)]).unwrap();
                let mut union = active_tones(&g, &a);
                union.extend(active_tones(&g, &b));
                prop_assert_eq!(union, active_tones(&g, &ab));
            }
        }
    }
}
