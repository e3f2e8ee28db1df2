//! Drive-strength sweeps and experiment variants: N-sweeps, coherent vs
//! incoherent pumping, and spectral-density surgery (peak removal or shift),
//! with steady-state detection per row and CSV/JSON result tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfit::{fit_exponentials, ExponentialBathModel};
use crate::manybody::{
    evolve_ensemble_from, ClusterConfig, ClusterState, DriveMode, EnsembleSpec,
    StationarityCriterion,
};
use crate::spectral::{
    bath_correlation, default_grid, default_tau_grid, effective_density, BathCorrelationSamples,
    CavityBathModel, SpectralDensity,
};
use crate::units::cm_to_hartree;
use crate::vibdata::{load_molecule, MoleculeSpec, OhmicEnvironment, VibrationalMode};

/// Surgery on the effective spectral density before fitting the bath.
/// Frequencies are in units of `E_max`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralEdit {
    RemovePeak { lo: f64, hi: f64 },
    ShiftPeak { lo: f64, hi: f64, delta: f64 },
}

fn default_emax_factor() -> f64 {
    0.1
}
fn default_gcav_factor() -> f64 {
    0.2
}
fn default_kappa_factor() -> f64 {
    3.3
}
fn default_gamma_down_factor() -> f64 {
    1e-3
}
fn default_n_values() -> Vec<usize> {
    vec![10]
}
fn default_mode() -> DriveMode {
    DriveMode::Coherent
}
fn default_k() -> usize {
    5
}
fn default_cutoff() -> usize {
    6
}
fn default_depth() -> usize {
    3
}
fn default_pair_depth() -> usize {
    1
}
fn default_rtol() -> f64 {
    1e-8
}
fn default_window_factor() -> f64 {
    40.0
}
fn default_ss_tol() -> f64 {
    1e-6
}
fn default_max_time_factor() -> f64 {
    2e5
}
fn default_env_coupling() -> f64 {
    0.05
}
fn default_env_cutoff_cm() -> f64 {
    800.0
}
fn default_grid_points() -> usize {
    6000
}

/// Everything a sweep needs, loadable from one JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanConfig {
    /// path to a `frequency_cm,huang_rhys` CSV
    #[serde(default)]
    pub molecule_path: Option<String>,
    /// alternative to a file: explicit `(frequency_cm, huang_rhys)` rows
    #[serde(default)]
    pub inline_modes: Option<Vec<[f64; 2]>>,
    pub adiabatic_gap_cm: f64,
    #[serde(default = "default_env_coupling")]
    pub env_coupling: f64,
    #[serde(default = "default_env_cutoff_cm")]
    pub env_cutoff_cm: f64,
    /// E_max as a fraction of the vertical gap
    #[serde(default = "default_emax_factor")]
    pub e_max_factor: f64,
    #[serde(default = "default_gcav_factor")]
    pub g_cav_factor: f64,
    #[serde(default = "default_kappa_factor")]
    pub kappa_factor: f64,
    /// cavity detuning in units of E_max
    #[serde(default)]
    pub detuning_factor: f64,
    #[serde(default = "default_gamma_down_factor")]
    pub gamma_down_factor: f64,
    /// drive values in units of E_max; defaults to 60 log-spaced points
    #[serde(default = "default_drive_grid")]
    pub drive_grid: Vec<f64>,
    #[serde(default = "default_n_values")]
    pub n_values: Vec<usize>,
    #[serde(default = "default_mode")]
    pub mode: DriveMode,
    #[serde(default = "default_k")]
    pub k_exponentials: usize,
    #[serde(default = "default_cutoff")]
    pub cavity_cutoff: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_pair_depth")]
    pub pair_depth: usize,
    #[serde(default)]
    pub mean_field: bool,
    #[serde(default)]
    pub spectral_edit: Option<SpectralEdit>,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    /// stationarity window in units of 1/E_max
    #[serde(default = "default_window_factor")]
    pub window_factor: f64,
    #[serde(default = "default_ss_tol")]
    pub ss_tol: f64,
    /// integration horizon in units of 1/E_max
    #[serde(default = "default_max_time_factor")]
    pub max_time_factor: f64,
    #[serde(default = "default_grid_points")]
    pub density_grid_points: usize,
}

/// 60 points, log-spaced over `[0.02, 1.2]` so the weak-drive side is dense.
pub fn default_drive_grid() -> Vec<f64> {
    let (lo, hi, n) = (0.02f64, 1.2f64, 60usize);
    let ratio = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (ratio * i as f64).exp()).collect()
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.molecule_path, &self.inline_modes) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::Validation(
                    "give exactly one of molecule_path or inline_modes".into(),
                ))
            }
            _ => {}
        }
        if self.drive_grid.is_empty() {
            return Err(Error::Validation("empty drive grid".into()));
        }
        for &x in &self.drive_grid {
            if !(x > 0.0 && x <= 1.2) {
                return Err(Error::Validation(format!(
                    "drive value {x} outside (0, 1.2] in units of E_max"
                )));
            }
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(Error::Validation("n_values must be nonempty, all >= 1".into()));
        }
        if self.e_max_factor <= 0.0 || self.k_exponentials == 0 {
            return Err(Error::Validation("bad e_max_factor or k_exponentials".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn molecule(&self) -> Result<MoleculeSpec> {
        match (&self.molecule_path, &self.inline_modes) {
            (Some(p), None) => load_molecule(p, self.adiabatic_gap_cm),
            (None, Some(rows)) => {
                let modes = rows
                    .iter()
                    .map(|r| VibrationalMode::new(r[0], r[1]))
                    .collect::<Result<Vec<_>>>()?;
                MoleculeSpec::new(self.adiabatic_gap_cm, modes)
            }
            _ => Err(Error::Validation(
                "give exactly one of molecule_path or inline_modes".into(),
            )),
        }
    }
}

/// Fixed physical parameters derived from a config (atomic units).
#[derive(Debug, Clone)]
pub struct ScanScales {
    pub omega0: f64,
    pub e_max: f64,
    pub cavity: CavityBathModel,
    pub gamma_down: f64,
}

/// One `(N, E_d)` row of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanRow {
    pub n: usize,
    /// E_d in units of E_max
    pub drive: f64,
    pub p_e: f64,
    pub n_cav: f64,
    pub pair_re: f64,
    pub converged: bool,
    pub t_converged: f64,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
    pub scales: ScanScales,
    pub density: SpectralDensity,
    pub bath: ExponentialBathModel,
    /// Final cluster state per row (same order as `rows`); `None` for failed
    /// rows. Kept for conservation checks, not serialized anywhere.
    pub final_states: Vec<Option<ClusterState>>,
}

/// Interpolated baseline of `j.values` across `[lo, hi]`: the straight line
/// between the last grid point at or below `lo` and the first at or above
/// `hi`.
fn baseline(j: &SpectralDensity, lo: f64, hi: f64) -> Result<(usize, usize)> {
    if !(lo < hi) {
        return Err(Error::Validation("empty edit interval".into()));
    }
    let grid = &j.grid;
    if lo < grid[0] || hi > *grid.last().unwrap() {
        return Err(Error::Validation("edit interval outside grid".into()));
    }
    let left = grid.partition_point(|&w| w <= lo).saturating_sub(1);
    let right = grid.partition_point(|&w| w < hi);
    if right <= left + 1 {
        return Err(Error::Validation("edit interval contains no grid points".into()));
    }
    Ok((left, right))
}

/// Replace the density inside `[lo, hi]` with the interpolated baseline
/// (`RemovePeak`), or translate the above-baseline excess by `delta`
/// (`ShiftPeak`). Points outside the touched intervals are bit-identical.
pub fn edit_spectrum(j: &SpectralDensity, edit: &SpectralEdit) -> Result<SpectralDensity> {
    let mut values = j.values.clone();
    let grid = &j.grid;
    match *edit {
        SpectralEdit::RemovePeak { lo, hi } => {
            let (left, right) = baseline(j, lo, hi)?;
            let (w0, w1) = (grid[left], grid[right]);
            let (v0, v1) = (j.values[left], j.values[right]);
            for i in left + 1..right {
                values[i] = v0 + (v1 - v0) * (grid[i] - w0) / (w1 - w0);
            }
        }
        SpectralEdit::ShiftPeak { lo, hi, delta } => {
            let (left, right) = baseline(j, lo, hi)?;
            let (w0, w1) = (grid[left], grid[right]);
            let (v0, v1) = (j.values[left], j.values[right]);
            let base =
                |w: f64| -> f64 { v0 + (v1 - v0) * (w - w0) / (w1 - w0) };
            // excess above the baseline, as a function on [w0, w1]
            let excess: Vec<f64> = (left..=right)
                .map(|i| j.values[i] - base(grid[i]))
                .collect();
            if lo + delta < grid[0] || hi + delta > *grid.last().unwrap() {
                return Err(Error::Validation("shifted peak leaves the grid".into()));
            }
            for i in left + 1..right {
                values[i] = base(grid[i]);
            }
            // deposit the excess at grid points inside the shifted interval
            // by linear interpolation on the source grid
            let t_left = grid.partition_point(|&w| w <= w0 + delta);
            let t_right = grid.partition_point(|&w| w < w1 + delta);
            for i in t_left..t_right {
                let src = grid[i] - delta;
                let k = grid[left..=right].partition_point(|&w| w <= src) + left;
                if k <= left || k > right {
                    continue;
                }
                let (a, b) = (grid[k - 1], grid[k]);
                let f = (src - a) / (b - a);
                values[i] += excess[k - 1 - left] * (1.0 - f) + excess[k - left] * f;
            }
        }
    }
    SpectralDensity::new(grid.clone(), values, j.tag.clone())
}

/// Indices of local maxima of `ys` whose prominence is at least
/// `frac * max(ys)`. Prominence is measured down to the higher of the two
/// valley floors separating the peak from higher terrain.
pub fn find_peaks(ys: &[f64], frac: f64) -> Vec<usize> {
    let n = ys.len();
    if n < 3 {
        return vec![];
    }
    let global = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut peaks = Vec::new();
    for i in 1..n - 1 {
        if !(ys[i] > ys[i - 1] && ys[i] >= ys[i + 1]) {
            continue;
        }
        let mut left_floor = ys[i];
        for j in (0..i).rev() {
            left_floor = left_floor.min(ys[j]);
            if ys[j] > ys[i] {
                break;
            }
        }
        let mut right_floor = ys[i];
        for y in &ys[i + 1..] {
            right_floor = right_floor.min(*y);
            if *y > ys[i] {
                break;
            }
        }
        let prominence = ys[i] - left_floor.max(right_floor);
        if prominence >= frac * global {
            peaks.push(i);
        }
    }
    peaks
}

/// One spectral-density peak paired against the drive sweep by the
/// two-photon rule `omega = 2 E_d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonanceEntry {
    /// peak position, units of E_max
    pub omega: f64,
    /// nearest n_cav maximum (units of E_max), if any fell within one grid
    /// spacing of `omega / 2`
    pub matched_drive: Option<f64>,
    pub matched: bool,
}

/// Pair peaks of the spectral density with maxima of `n_cav(E_d)` for the
/// largest N in the sweep.
pub fn resonance_report(result: &ScanResult, j: &SpectralDensity) -> Vec<ResonanceEntry> {
    resonance_report_rows(&result.rows, result.scales.e_max, j)
}

/// [`resonance_report`] on bare rows (e.g. re-read from `scan.csv`).
pub fn resonance_report_rows(
    rows: &[ScanRow],
    e_max: f64,
    j: &SpectralDensity,
) -> Vec<ResonanceEntry> {
    let n_top = rows.iter().map(|r| r.n).max().unwrap_or(0);
    let mut sweep: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.n == n_top && r.error.is_none())
        .map(|r| (r.drive, r.n_cav))
        .collect();
    sweep.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ys: Vec<f64> = sweep.iter().map(|p| p.1).collect();
    let drive_peaks: Vec<f64> = find_peaks(&ys, 0.10).iter().map(|&i| sweep[i].0).collect();

    let jpeaks: Vec<f64> = find_peaks(&j.values, 0.10)
        .iter()
        .map(|&i| j.grid[i] / e_max)
        .collect();

    jpeaks
        .into_iter()
        .map(|omega| {
            let target = omega / 2.0;
            let hit = drive_peaks
                .iter()
                .cloned()
                .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
                .filter(|&d| {
                    let spacing = grid_spacing_at(&sweep, d);
                    (d - target).abs() <= spacing
                })
                .filter(|_| target <= 1.2 && target >= sweep.first().map_or(0.0, |p| p.0));
            ResonanceEntry {
                omega,
                matched_drive: hit,
                matched: hit.is_some(),
            }
        })
        .collect()
}

fn grid_spacing_at(sweep: &[(f64, f64)], x: f64) -> f64 {
    let mut best = f64::INFINITY;
    let mut spacing = 0.0;
    for w in sweep.windows(2) {
        let mid = 0.5 * (w[0].0 + w[1].0);
        if (mid - x).abs() < best {
            best = (mid - x).abs();
            spacing = w[1].0 - w[0].0;
        }
    }
    spacing
}

/// Everything the bath-fitting stage produces.
#[derive(Debug, Clone)]
pub struct BathArtifacts {
    pub scales: ScanScales,
    pub density: SpectralDensity,
    pub samples: BathCorrelationSamples,
    pub bath: ExponentialBathModel,
}

/// Effective spectral density (with any surgery applied) plus the derived
/// physical scales, without the exponential fit.
pub fn prepare_density(config: &ScanConfig) -> Result<(ScanScales, SpectralDensity)> {
    config.validate()?;
    let mol = config.molecule()?;
    let env = OhmicEnvironment::new(config.env_coupling, config.env_cutoff_cm)?;
    let omega0 = cm_to_hartree(mol.vertical_gap_cm);
    let e_max = config.e_max_factor * omega0;
    let grid = default_grid(&mol, &env, config.density_grid_points);
    let mut j = effective_density(&mol, &env, &grid)?;
    if let Some(edit) = &config.spectral_edit {
        let scaled = match *edit {
            SpectralEdit::RemovePeak { lo, hi } => SpectralEdit::RemovePeak {
                lo: lo * e_max,
                hi: hi * e_max,
            },
            SpectralEdit::ShiftPeak { lo, hi, delta } => SpectralEdit::ShiftPeak {
                lo: lo * e_max,
                hi: hi * e_max,
                delta: delta * e_max,
            },
        };
        j = edit_spectrum(&j, &scaled)?;
    }
    let scales = ScanScales {
        omega0,
        e_max,
        cavity: CavityBathModel::new(
            config.g_cav_factor * e_max,
            config.detuning_factor * e_max,
            config.kappa_factor * e_max,
        )?,
        gamma_down: config.gamma_down_factor * e_max,
    };
    Ok((scales, j))
}

/// Build the effective spectral density (with any surgery applied) and fit
/// the exponential bath model.
pub fn prepare_bath(config: &ScanConfig) -> Result<BathArtifacts> {
    let (scales, j) = prepare_density(config)?;
    let taus = default_tau_grid(&j, 4000)?;
    let samples = bath_correlation(&j, &taus)?;
    let bath = fit_exponentials(&samples, config.k_exponentials)?;
    Ok(BathArtifacts {
        scales,
        density: j,
        samples,
        bath,
    })
}

/// Run the full sweep. Row failures are recorded in place; only a sweep
/// where every row failed is an error.
pub fn run_scan(config: &ScanConfig) -> Result<ScanResult> {
    let artifacts = prepare_bath(config)?;
    run_scan_with(config, &artifacts)
}

/// As [`run_scan`] with the bath stage already done (lets several sweeps
/// share one fit).
pub fn run_scan_with(config: &ScanConfig, artifacts: &BathArtifacts) -> Result<ScanResult> {
    config.validate()?;
    let scales = artifacts.scales.clone();
    let density = artifacts.density.clone();
    let bath = artifacts.bath.clone();
    let cluster = ClusterConfig {
        depth: config.depth,
        pair_depth: config.pair_depth,
        mean_field: config.mean_field,
        rtol: config.rtol,
        atol: config.rtol * 1e-4,
        h_init: 1e-2 / scales.e_max,
        max_time: config.max_time_factor / scales.e_max,
    };
    let criterion = StationarityCriterion {
        window: config.window_factor / scales.e_max,
        tol: config.ss_tol,
    };

    let mut drives = config.drive_grid.clone();
    drives.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(config.n_values.len() * drives.len());
    let mut final_states = Vec::with_capacity(rows.capacity());
    for &n in &config.n_values {
        let mut warm: Option<ClusterState> = None;
        for &x in &drives {
            let spec = EnsembleSpec {
                n_emitters: n,
                drive: x * scales.e_max,
                mode: config.mode,
                gamma_down: scales.gamma_down,
                cavity: scales.cavity,
                cavity_cutoff: config.cavity_cutoff,
                vib_bath: bath.clone(),
            };
            match evolve_ensemble_from(&spec, &cluster, &criterion, warm.as_ref()) {
                Ok((state, diag)) => {
                    let obs = state.observables();
                    rows.push(ScanRow {
                        n,
                        drive: x,
                        p_e: obs.p_e,
                        n_cav: obs.cavity_occupation,
                        pair_re: obs.pair_re,
                        converged: true,
                        t_converged: diag.converged_time,
                        error: None,
                    });
                    final_states.push(Some(state.clone()));
                    warm = Some(state);
                }
                Err(e) => {
                    rows.push(ScanRow {
                        n,
                        drive: x,
                        p_e: f64::NAN,
                        n_cav: f64::NAN,
                        pair_re: f64::NAN,
                        converged: false,
                        t_converged: f64::NAN,
                        error: Some(e.to_string()),
                    });
                    final_states.push(None);
                    warm = None;
                }
            }
        }
    }
    if rows.iter().all(|r| r.error.is_some()) {
        let first = rows.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::NonConvergence(format!(
            "every scan row failed; first error: {first}"
        )));
    }
    Ok(ScanResult {
        rows,
        scales,
        density,
        bath,
        final_states,
    })
}

/// Columns: `n, drive (units of E_max), p_e, n_cav, pair_re, converged,
/// t_converged, error`.
pub fn write_scan_csv<W: std::io::Write>(result: &ScanResult, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in &result.rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_scan_rows<R: std::io::Read>(r: R) -> Result<Vec<ScanRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<ScanRow>, _>>()?;
    Ok(rows)
}
