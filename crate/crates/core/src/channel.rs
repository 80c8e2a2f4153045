//! Per-tone channel tensors: parametric VDSL-like synthesis, CSV ingestion
//! and noise whitening.
//!
//! The synthesizer is a stand-in for measured binder data. Direct paths use
//! a loss of `(k1 + k2 * sqrt(f / 1 MHz)) * L / 1 km` dB. FEXT follows
//! `|H_fext|^2 = kappa * (f / 1 MHz)^2 * (L_c / 1 km) * |H_dd|^2`, where
//! `L_c` is the shared length of the two loops and `H_dd` is the victim's
//! direct path. The phantom line couples into every user with the FEXT law
//! raised by a fixed excess (3 dB by default).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::CMat;
use crate::units::{psd_to_tone_power, ToneGrid};

/// Per-tone complex channel matrices with a partition of receive rows
/// into users.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    n_tx: usize,
    /// `users[j]` lists the (0-based) receive rows owned by user `j`.
    users: Vec<Vec<usize>>,
    tones: Vec<CMat>,
}

impl ChannelTensor {
    pub fn new(tones: Vec<CMat>, users: Vec<Vec<usize>>) -> Result<Self> {
        let first = tones.first().ok_or_else(|| invalid("channel tensor needs at least one tone"))?;
        let (n_rx, n_tx) = first.shape();
        if n_tx == 0 || n_rx == 0 {
            return Err(invalid("channel matrices must be non-empty"));
        }
        for (i, h) in tones.iter().enumerate() {
            if h.shape() != (n_rx, n_tx) {
                return Err(invalid(format!(
                    "tone {} has shape {:?}, expected {:?}",
                    i + 1,
                    h.shape(),
                    (n_rx, n_tx)
                )));
            }
            if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(invalid(format!("tone {} has non-finite entries", i + 1)));
            }
        }
        let mut seen = vec![false; n_rx];
        for rows in &users {
            if rows.is_empty() {
                return Err(invalid("every user needs at least one receive row"));
            }
            for &r in rows {
                if r >= n_rx || seen[r] {
                    return Err(invalid(format!("user rows do not partition 0..{n_rx}")));
                }
                seen[r] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid(format!("user rows do not partition 0..{n_rx}")));
        }
        Ok(Self { n_tx, users, tones })
    }

    /// One single-row user per receive row.
    pub fn with_row_users(tones: Vec<CMat>) -> Result<Self> {
        let n_rx = tones.first().map(|h| h.nrows()).unwrap_or(0);
        Self::new(tones, (0..n_rx).map(|r| vec![r]).collect())
    }

    pub fn n_tones(&self) -> usize {
        self.tones.len()
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_rx(&self) -> usize {
        self.tones[0].nrows()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> &[Vec<usize>] {
        &self.users
    }

    pub fn user_rows(&self, j: usize) -> usize {
        self.users[j].len()
    }

    /// Channel matrix of tone `i` (0-based storage index).
    pub fn tone(&self, i: usize) -> &CMat {
        &self.tones[i]
    }

    pub fn tones(&self) -> &[CMat] {
        &self.tones
    }

    /// Rows of `h` owned by user `j`.
    pub fn user_block(&self, h: &CMat, j: usize) -> CMat {
        let rows = &self.users[j];
        CMat::from_fn(rows.len(), h.ncols(), |r, c| h[(rows[r], c)])
    }

    /// Per-user row blocks of tone `i`.
    pub fn user_blocks(&self, i: usize) -> Vec<CMat> {
        (0..self.users.len()).map(|j| self.user_block(&self.tones[i], j)).collect()
    }

    /// Same partition, new per-tone matrices.
    pub fn map_tones(&self, f: impl Fn(usize, &CMat) -> CMat) -> Self {
        Self {
            n_tx: self.n_tx,
            users: self.users.clone(),
            tones: self.tones.iter().enumerate().map(|(i, h)| f(i, h)).collect(),
        }
    }

    /// Tensor restricted to a single user's rows.
    pub fn restrict_to_user(&self, j: usize) -> Self {
        let r = self.users[j].len();
        Self {
            n_tx: self.n_tx,
            users: vec![(0..r).collect()],
            tones: self.tones.iter().map(|h| self.user_block(h, j)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "DM")]
    Dm,
    #[serde(rename = "DM_PM")]
    DmPm,
}

/// Parameters of the synthetic binder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub mode: Mode,
    pub loop_lengths_m: Vec<f64>,
    /// Frequency-flat loss, dB/km.
    pub k1_db_per_km: f64,
    /// Skin-effect loss, dB/km per sqrt(MHz).
    pub k2_db_per_km: f64,
    /// FEXT coupling constant.
    pub fext_kappa: f64,
    /// Phantom coupling above DM FEXT, dB.
    pub pm_excess_db: f64,
    /// Propagation velocity used for the linear phase, m/s.
    pub velocity_m_s: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            mode: Mode::Dm,
            loop_lengths_m: vec![400.0, 800.0],
            k1_db_per_km: 3.0,
            k2_db_per_km: 15.0,
            fext_kappa: 1e-4,
            pm_excess_db: 3.0,
            velocity_m_s: 2.0e8,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn dm(lengths: &[f64]) -> Self {
        Self { loop_lengths_m: lengths.to_vec(), ..Self::default() }
    }

    pub fn dm_pm(lengths: &[f64]) -> Self {
        Self { mode: Mode::DmPm, loop_lengths_m: lengths.to_vec(), ..Self::default() }
    }

    pub fn n_tx(&self) -> usize {
        match self.mode {
            Mode::Dm => self.loop_lengths_m.len(),
            Mode::DmPm => self.loop_lengths_m.len() + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.loop_lengths_m.is_empty() {
            return Err(Error::Config("scenario needs at least one loop".into()));
        }
        if self.mode == Mode::DmPm && self.loop_lengths_m.len() < 2 {
            return Err(Error::Config("phantom mode needs at least two DM loops".into()));
        }
        if self.loop_lengths_m.iter().any(|&l| !(l.is_finite() && l >= 0.0)) {
            return Err(Error::Config("loop lengths must be finite and non-negative".into()));
        }
        let params = [self.k1_db_per_km, self.k2_db_per_km, self.fext_kappa];
        if params.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::Config("attenuation and coupling parameters must be non-negative".into()));
        }
        if !self.pm_excess_db.is_finite() || !(self.velocity_m_s > 0.0) {
            return Err(Error::Config("invalid phantom excess or propagation velocity".into()));
        }
        Ok(())
    }

    /// Direct-path magnitude at frequency `f_hz` over `len_m` meters.
    pub fn direct_gain(&self, f_hz: f64, len_m: f64) -> f64 {
        let loss_db = (self.k1_db_per_km + self.k2_db_per_km * (f_hz / 1e6).sqrt()) * len_m / 1000.0;
        10f64.powf(-loss_db / 20.0)
    }

    /// FEXT magnitude into a victim of length `victim_m` over `coupling_m`
    /// shared meters.
    pub fn fext_gain(&self, f_hz: f64, victim_m: f64, coupling_m: f64) -> f64 {
        let f = f_hz / 1e6;
        (self.fext_kappa * f * f * coupling_m / 1000.0).sqrt() * self.direct_gain(f_hz, victim_m)
    }
}

/// Synthesizes a channel tensor for `spec` on `grid`. Each user owns one
/// receive row; the phantom line (if any) is the last transmit column.
pub fn synth_channel(spec: &ScenarioSpec, grid: &ToneGrid) -> Result<ChannelTensor> {
    spec.validate()?;
    grid.validate()?;
    let n_users = spec.loop_lengths_m.len();
    let n_tx = spec.n_tx();
    let lens = &spec.loop_lengths_m;
    let pm_scale = 10f64.powf(spec.pm_excess_db / 20.0);

    // constant phase offsets for crosstalk paths, drawn once per (rx, tx)
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offsets: Vec<Vec<f64>> = (0..n_users)
        .map(|_| (0..n_tx).map(|_| rng.gen_range(0.0..2.0 * PI)).collect())
        .collect();

    let tones = (1..=grid.n_tones)
        .map(|i| {
            let f = grid.start_hz + (i - 1) as f64 * grid.spacing_hz;
            CMat::from_fn(n_users, n_tx, |r, t| {
                let victim = lens[r];
                let delay_phase = -2.0 * PI * f * victim / spec.velocity_m_s;
                let (mag, phase) = if t == r {
                    (spec.direct_gain(f, victim), delay_phase)
                } else if t < n_users {
                    (spec.fext_gain(f, victim, victim.min(lens[t])), delay_phase + offsets[r][t])
                } else {
                    (pm_scale * spec.fext_gain(f, victim, victim), delay_phase + offsets[r][t])
                };
                if mag == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::from_polar(mag, phase)
                }
            })
        })
        .collect();
    ChannelTensor::with_row_users(tones)
}

/// Noise PSD per tone and receive row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    Flat(f64),
    /// `table[tone][row]`, dBm/Hz.
    Table(Vec<Vec<f64>>),
}

/// Lowest accepted noise PSD.
pub const NOISE_FLOOR_DBM_HZ: f64 = -400.0;

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::Flat(-140.0)
    }
}

impl NoiseSpec {
    pub fn psd(&self, tone: usize, row: usize) -> f64 {
        match self {
            Self::Flat(p) => *p,
            Self::Table(t) => t[tone][row],
        }
    }

    pub fn validate(&self, n_tones: usize, n_rx: usize) -> Result<()> {
        let ok = |p: f64| p.is_finite() && p > NOISE_FLOOR_DBM_HZ;
        match self {
            Self::Flat(p) if ok(*p) => Ok(()),
            Self::Flat(p) => Err(invalid(format!("noise PSD {p} dBm/Hz out of range"))),
            Self::Table(t) => {
                if t.len() != n_tones || t.iter().any(|row| row.len() != n_rx) {
                    return Err(invalid(format!("noise table must be {n_tones} tones x {n_rx} rows")));
                }
                if t.iter().flatten().all(|&p| ok(p)) {
                    Ok(())
                } else {
                    Err(invalid("noise table has out-of-range PSD values"))
                }
            }
        }
    }
}

/// Scales row `r` of every tone by `1/sqrt(noise tone power)` so that the
/// remaining noise is white with unit power.
pub fn whiten(channel: &ChannelTensor, noise: &NoiseSpec, grid: &ToneGrid) -> Result<ChannelTensor> {
    noise.validate(channel.n_tones(), channel.n_rx())?;
    let mut tones = Vec::with_capacity(channel.n_tones());
    for (i, h) in channel.tones.iter().enumerate() {
        let mut w = h.clone();
        for r in 0..h.nrows() {
            let p = psd_to_tone_power(noise.psd(i, r), grid.spacing_hz)?;
            w.row_mut(r).scale_mut(1.0 / p.sqrt());
        }
        tones.push(w);
    }
    Ok(channel.map_tones(|i, _| tones[i].clone()))
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| parse_err(line, format!("missing column {name}")))?;
    raw.trim()
        .parse()
        .map_err(|_| parse_err(line, format!("cannot parse {name} value '{raw}'")))
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(parse_err(1, format!("expected header '{}', got '{}'", expected.join(","), got.join(","))));
    }
    Ok(())
}

/// Reads a channel tensor from `tone,rx,tx,re,im` records. Every receive
/// row becomes its own user.
pub fn load_channel_csv(source: impl Read) -> Result<ChannelTensor> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    check_header(&mut rdr, &["tone", "rx", "tx", "re", "im"])?;
    let mut entries: HashMap<(usize, usize, usize), Complex64> = HashMap::new();
    let (mut n_tones, mut n_rx, mut n_tx) = (0, 0, 0);
    let mut last_line = 1;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map(|p| p.line() as usize).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        last_line = line;
        let tone: usize = field(&rec, 0, "tone", line)?;
        let rx: usize = field(&rec, 1, "rx", line)?;
        let tx: usize = field(&rec, 2, "tx", line)?;
        let re: f64 = field(&rec, 3, "re", line)?;
        let im: f64 = field(&rec, 4, "im", line)?;
        if tone == 0 || rx == 0 || tx == 0 {
            return Err(parse_err(line, "tone, rx and tx indices are 1-based"));
        }
        if !re.is_finite() || !im.is_finite() {
            return Err(parse_err(line, format!("non-finite value for tone {tone}")));
        }
        if entries.insert((tone, rx, tx), Complex64::new(re, im)).is_some() {
            return Err(parse_err(line, format!("duplicate record (tone {tone}, rx {rx}, tx {tx})")));
        }
        n_tones = n_tones.max(tone);
        n_rx = n_rx.max(rx);
        n_tx = n_tx.max(tx);
    }
    if entries.is_empty() {
        return Err(parse_err(last_line, "no channel records"));
    }
    let mut tones = Vec::with_capacity(n_tones);
    for i in 1..=n_tones {
        let mut h = CMat::zeros(n_rx, n_tx);
        for r in 1..=n_rx {
            for t in 1..=n_tx {
                let z = entries.get(&(i, r, t)).ok_or_else(|| {
                    parse_err(last_line, format!("missing record for tone {i}, rx {r}, tx {t}"))
                })?;
                h[(r - 1, t - 1)] = *z;
            }
        }
        tones.push(h);
    }
    ChannelTensor::with_row_users(tones)
}

/// Writes `channel` as `tone,rx,tx,re,im` records with 17 significant digits.
pub fn save_channel_csv(channel: &ChannelTensor, mut sink: impl Write) -> Result<()> {
    writeln!(sink, "tone,rx,tx,re,im")?;
    for (i, h) in channel.tones.iter().enumerate() {
        for r in 0..h.nrows() {
            for t in 0..h.ncols() {
                let z = h[(r, t)];
                writeln!(sink, "{},{},{},{:.16e},{:.16e}", i + 1, r + 1, t + 1, z.re, z.im)?;
            }
        }
    }
    Ok(())
}

/// Reads a `tone,rx,psd_dbm_hz` noise table.
pub fn load_noise_csv(source: impl Read, n_tones: usize, n_rx: usize) -> Result<NoiseSpec> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    check_header(&mut rdr, &["tone", "rx", "psd_dbm_hz"])?;
    let mut table = vec![vec![f64::NAN; n_rx]; n_tones];
    let mut last_line = 1;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map(|p| p.line() as usize).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        last_line = line;
        let tone: usize = field(&rec, 0, "tone", line)?;
        let rx: usize = field(&rec, 1, "rx", line)?;
        let psd: f64 = field(&rec, 2, "psd_dbm_hz", line)?;
        if tone == 0 || tone > n_tones || rx == 0 || rx > n_rx {
            return Err(parse_err(line, format!("noise record (tone {tone}, rx {rx}) outside channel shape")));
        }
        if !(psd.is_finite() && psd > NOISE_FLOOR_DBM_HZ) {
            return Err(parse_err(line, format!("noise PSD {psd} out of range")));
        }
        let slot = &mut table[tone - 1][rx - 1];
        if !slot.is_nan() {
            return Err(parse_err(line, format!("duplicate noise record (tone {tone}, rx {rx})")));
        }
        *slot = psd;
    }
    for (i, row) in table.iter().enumerate() {
        if let Some(r) = row.iter().position(|p| p.is_nan()) {
            return Err(parse_err(last_line, format!("missing noise record for tone {}, rx {}", i + 1, r + 1)));
        }
    }
    Ok(NoiseSpec::Table(table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> ToneGrid {
        ToneGrid::new(n, 4312.5 * 16.0, 4000.0, 138e3).unwrap()
    }

    #[test]
    fn zero_length_loops_give_identity() {
        let spec = ScenarioSpec::dm_pm(&[0.0, 0.0]);
        let ch = synth_channel(&spec, &grid(8)).unwrap();
        for h in ch.tones() {
            assert_eq!(h.shape(), (2, 3));
            for r in 0..2 {
                for t in 0..3 {
                    let want = if r == t { 1.0 } else { 0.0 };
                    assert_eq!(h[(r, t)], Complex64::new(want, 0.0));
                }
            }
        }
    }

    #[test]
    fn dm_shorter_loop_is_stronger() {
        let ch = synth_channel(&ScenarioSpec::dm(&[400.0, 800.0]), &grid(128)).unwrap();
        for h in ch.tones() {
            assert_eq!(h.shape(), (2, 2));
            assert!(h[(0, 0)].norm() > h[(1, 1)].norm());
        }
    }

    #[test]
    fn dm_pm_has_three_columns() {
        let ch = synth_channel(&ScenarioSpec::dm_pm(&[400.0, 400.0]), &grid(16)).unwrap();
        assert_eq!(ch.n_tx(), 3);
        assert_eq!(ch.n_rx(), 2);
        assert!(ch.tone(5)[(0, 2)].norm() > 0.0);
    }

    #[test]
    fn direct_strictly_decreasing_and_fext_small() {
        let spec = ScenarioSpec::dm_pm(&[400.0, 800.0]);
        let g = ToneGrid::new(174, 4312.5 * 16.0, 4000.0, 0.0).unwrap();
        let ch = synth_channel(&spec, &g).unwrap();
        for w in ch.tones().windows(2) {
            for r in 0..2 {
                assert!(w[1][(r, r)].norm() < w[0][(r, r)].norm());
            }
        }
        for h in ch.tones() {
            for r in 0..2 {
                for t in 0..3 {
                    if t != r {
                        assert!(h[(r, t)].norm() < 0.2 * h[(r, r)].norm());
                    }
                }
            }
        }
        // longer loop attenuates more
        assert!(spec.direct_gain(1e6, 800.0) < spec.direct_gain(1e6, 400.0));
    }

    #[test]
    fn synth_is_deterministic_per_seed() {
        let spec = ScenarioSpec::dm(&[400.0, 800.0]);
        let a = synth_channel(&spec, &grid(8)).unwrap();
        let b = synth_channel(&spec, &grid(8)).unwrap();
        assert_eq!(a, b);
        let c = synth_channel(&ScenarioSpec { seed: 9, ..spec }, &grid(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unsupported_scenarios_rejected() {
        assert!(synth_channel(&ScenarioSpec::dm_pm(&[400.0]), &grid(4)).is_err());
        assert!(synth_channel(&ScenarioSpec::dm(&[]), &grid(4)).is_err());
        assert!(synth_channel(&ScenarioSpec::dm(&[-1.0]), &grid(4)).is_err());
    }

    #[test]
    fn csv_identity_1x1() {
        let src = "tone,rx,tx,re,im\n1,1,1,1.0,0.0\n";
        let ch = load_channel_csv(src.as_bytes()).unwrap();
        assert_eq!(ch.n_tones(), 1);
        assert_eq!(ch.tone(0)[(0, 0)], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let ch = synth_channel(&ScenarioSpec::dm_pm(&[400.0, 800.0]), &grid(16)).unwrap();
        let mut buf = Vec::new();
        save_channel_csv(&ch, &mut buf).unwrap();
        let back = load_channel_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ch);
        let mut again = Vec::new();
        save_channel_csv(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn csv_missing_record_names_tone() {
        let src = "tone,rx,tx,re,im\n\
                   1,1,1,1,0\n1,1,2,0,0\n1,2,1,0,0\n1,2,2,1,0\n\
                   2,1,1,1,0\n2,2,1,0,0\n2,2,2,1,0\n";
        let err = load_channel_csv(src.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tone 2"), "{msg}");
        assert!(msg.contains("rx 1") && msg.contains("tx 2"), "{msg}");
    }

    #[test]
    fn csv_rejects_duplicates_and_non_finite() {
        let dup = "tone,rx,tx,re,im\n1,1,1,1,0\n1,1,1,2,0\n";
        match load_channel_csv(dup.as_bytes()).unwrap_err() {
            Error::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("duplicate"));
            }
            e => panic!("unexpected {e}"),
        }
        let nan = "tone,rx,tx,re,im\n1,1,1,NaN,0\n";
        assert!(matches!(load_channel_csv(nan.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let bad_header = "tone,row,tx,re,im\n1,1,1,1,0\n";
        assert!(load_channel_csv(bad_header.as_bytes()).is_err());
    }

    #[test]
    fn noise_csv_round() {
        let src = "tone,rx,psd_dbm_hz\n1,1,-140\n1,2,-130\n";
        let n = load_noise_csv(src.as_bytes(), 1, 2).unwrap();
        assert_eq!(n.psd(0, 1), -130.0);
        assert!(load_noise_csv("tone,rx,psd_dbm_hz\n1,1,-140\n".as_bytes(), 1, 2).is_err());
        assert!(load_noise_csv("tone,rx,psd_dbm_hz\n1,1,-500\n1,2,0\n".as_bytes(), 1, 2).is_err());
    }

    #[test]
    fn whitening_examples() {
        let ch = synth_channel(&ScenarioSpec::dm(&[400.0, 800.0]), &grid(4)).unwrap();
        let g = grid(4);
        // unit noise tone power
        let unit_psd = -10.0 * g.spacing_hz.log10();
        let same = whiten(&ch, &NoiseSpec::Flat(unit_psd), &g).unwrap();
        for (a, b) in same.tones().iter().zip(ch.tones()) {
            assert!((a - b).norm() <= 1e-12 * b.norm());
        }

        let vdsl = ToneGrid::vdsl(4);
        let w = whiten(&ch, &NoiseSpec::Flat(-140.0), &vdsl).unwrap();
        let s = 1.0 / 4.3125e-11f64.sqrt();
        assert!(((w.tone(2)[(1, 0)] / ch.tone(2)[(1, 0)]).re - s).abs() < 1e-9 * s);

        // doubling noise on row 1 halves |row 1|^2
        let base = NoiseSpec::Table(vec![vec![-140.0, -140.0]; 4]);
        let doubled = NoiseSpec::Table(vec![vec![-140.0 + 10.0 * 2f64.log10(), -140.0]; 4]);
        let a = whiten(&ch, &base, &vdsl).unwrap();
        let b = whiten(&ch, &doubled, &vdsl).unwrap();
        for i in 0..4 {
            for t in 0..2 {
                let ratio = b.tone(i)[(0, t)].norm_sqr() / a.tone(i)[(0, t)].norm_sqr();
                assert!((ratio - 0.5).abs() < 1e-12);
                assert_eq!(b.tone(i)[(1, t)], a.tone(i)[(1, t)]);
            }
        }

        // re-whitening with unit noise is the identity
        let again = whiten(&w, &NoiseSpec::Flat(-10.0 * vdsl.spacing_hz.log10()), &vdsl).unwrap();
        for (x, y) in again.tones().iter().zip(w.tones()) {
            assert!((x - y).norm() <= 1e-12 * y.norm());
        }
    }

    #[test]
    fn tensor_partition_checked() {
        let h = CMat::identity(2, 2);
        assert!(ChannelTensor::new(vec![h.clone()], vec![vec![0]]).is_err());
        assert!(ChannelTensor::new(vec![h.clone()], vec![vec![0], vec![0, 1]]).is_err());
        assert!(ChannelTensor::new(vec![h.clone(), CMat::identity(3, 2)], vec![vec![0], vec![1]]).is_err());
        let ok = ChannelTensor::new(vec![h], vec![vec![0, 1]]).unwrap();
        assert_eq!(ok.user_rows(0), 2);
    }
}
