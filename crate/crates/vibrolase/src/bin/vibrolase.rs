//! Command-line front end: drive sweeps and the artifacts around them.
//!
//! Exit codes: 0 on success, 2 when a sweep finished but some rows failed,
//! 1 on configuration or other errors.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vibrolase::error::Result;
use vibrolase::manybody::DriveMode;
use vibrolase::oracle::{
    build_lasing_liouvillian, embed, expectation_of, pseudomodes_from_bath,
    steady_state_propagated, LasingOracleSpec,
};
use vibrolase::scan::{
    prepare_bath, prepare_density, read_scan_rows, resonance_report_rows, run_scan_with,
    write_scan_csv, BathArtifacts, ScanConfig,
};
use vibrolase::spectral::SpectralDensity;
use vibrolase::{qops, CMatrix, Complex64};

#[derive(Parser)]
#[command(name = "vibrolase", version, about = "few-emitter lasing sweeps")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full sweep and write all result tables.
    Scan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the exponential bath model and write it with its inputs.
    FitBath {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the effective spectral density (after any surgery).
    Spectrum {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact-Liouvillian steady states over the drive grid (N <= 3).
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// per-ancilla Fock cutoff
        #[arg(long, default_value_t = 4)]
        pseudomode_cutoff: usize,
    },
    /// Pair spectral-density peaks with sweep maxima from an existing
    /// `scan.csv` + `spectrum.csv` in the output directory.
    Resonances {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_file<P: AsRef<Path>>(path: P, body: impl FnOnce(&mut File) -> Result<()>) -> Result<()> {
    let mut f = File::create(path)?;
    body(&mut f)
}

fn write_bath_artifacts(out: &Path, artifacts: &BathArtifacts) -> Result<()> {
    write_file(out.join("spectrum.csv"), |f| artifacts.density.write_csv(f))?;
    write_file(out.join("bcf.csv"), |f| artifacts.samples.write_csv(f))?;
    write_file(out.join("bathmodel.json"), |f| {
        f.write_all(artifacts.bath.to_json()?.as_bytes())?;
        Ok(())
    })
}

fn cmd_scan(config: &Path, out: &Path) -> Result<bool> {
    let cfg = ScanConfig::load(config)?;
    std::fs::create_dir_all(out)?;
    let artifacts = prepare_bath(&cfg)?;
    write_bath_artifacts(out, &artifacts)?;
    let result = run_scan_with(&cfg, &artifacts)?;
    write_file(out.join("scan.csv"), |f| write_scan_csv(&result, f))?;
    let report = vibrolase::scan::resonance_report(&result, &result.density);
    write_file(out.join("report.json"), |f| {
        f.write_all(serde_json::to_string_pretty(&report)?.as_bytes())?;
        Ok(())
    })?;
    let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} rows failed", result.rows.len());
    }
    Ok(failed > 0)
}

fn cmd_fit_bath(config: &Path, out: &Path) -> Result<()> {
    let cfg = ScanConfig::load(config)?;
    std::fs::create_dir_all(out)?;
    let artifacts = prepare_bath(&cfg)?;
    write_bath_artifacts(out, &artifacts)?;
    if let Some(r) = artifacts.bath.residual {
        println!("fit residual {r:.4e} with K = {}", artifacts.bath.count());
    }
    Ok(())
}

fn cmd_spectrum(config: &Path, out: &Path) -> Result<()> {
    let cfg = ScanConfig::load(config)?;
    std::fs::create_dir_all(out)?;
    let (_, density) = prepare_density(&cfg)?;
    write_file(out.join("spectrum.csv"), |f| density.write_csv(f))
}

fn cmd_oracle(config: &Path, out: &Path, cutoff: usize) -> Result<()> {
    let cfg = ScanConfig::load(config)?;
    std::fs::create_dir_all(out)?;
    let artifacts = prepare_bath(&cfg)?;
    let n = *cfg.n_values.first().unwrap();
    let cutoffs = vec![cutoff; artifacts.bath.count()];
    let window = cfg.window_factor / artifacts.scales.e_max;
    let max_time = cfg.max_time_factor / artifacts.scales.e_max;

    #[derive(serde::Serialize)]
    struct OracleRow {
        drive: f64,
        p_e: f64,
        n_cav: f64,
    }
    let mut rows = Vec::new();
    for &x in &cfg.drive_grid {
        let drive = x * artifacts.scales.e_max;
        let spec = LasingOracleSpec {
            n_emitters: n,
            drive: if cfg.mode == DriveMode::Coherent { drive } else { 0.0 },
            pump: if cfg.mode == DriveMode::Coherent { 0.0 } else { drive },
            g_cav: artifacts.scales.cavity.g_cav,
            kappa: artifacts.scales.cavity.kappa,
            detuning: artifacts.scales.cavity.omega_cav,
            gamma_down: artifacts.scales.gamma_down,
            cavity_cutoff: cfg.cavity_cutoff,
            pseudomodes: if cfg.mode == DriveMode::Coherent {
                pseudomodes_from_bath(&artifacts.bath, &cutoffs)?
            } else {
                vec![]
            },
        };
        let lv = build_lasing_liouvillian(&spec)?;
        let d = spec.dim();
        let mut dims = vec![2usize; n];
        dims.push(cfg.cavity_cutoff);
        for _ in 0..n {
            for pm in &spec.pseudomodes {
                dims.push(pm.cutoff);
            }
        }
        let mut rho0 = CMatrix::zeros(d, d);
        rho0[(0, 0)] = Complex64::new(1.0, 0.0);
        let mut pe_total = CMatrix::zeros(d, d);
        for slot in 0..n {
            pe_total += embed(&qops::sigma_pm(), &dims, slot);
        }
        let rho = steady_state_propagated(&lv, &rho0, &pe_total, window, cfg.ss_tol, max_time)?;
        let p_e = expectation_of(&rho, &embed(&qops::sigma_pm(), &dims, 0)).re;
        let n_cav =
            expectation_of(&rho, &embed(&qops::number(cfg.cavity_cutoff), &dims, n)).re;
        rows.push(OracleRow { drive: x, p_e, n_cav });
    }
    write_file(out.join("oracle.json"), |f| {
        f.write_all(serde_json::to_string_pretty(&rows)?.as_bytes())?;
        Ok(())
    })
}

fn cmd_resonances(config: &Path, out: &Path) -> Result<()> {
    let cfg = ScanConfig::load(config)?;
    let (scales, _) = prepare_density(&cfg)?;
    let rows = read_scan_rows(File::open(out.join("scan.csv"))?)?;
    let density = SpectralDensity::read_csv(File::open(out.join("spectrum.csv"))?)?;
    let report = resonance_report_rows(&rows, scales.e_max, &density);
    write_file(out.join("report.json"), |f| {
        f.write_all(serde_json::to_string_pretty(&report)?.as_bytes())?;
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Scan { config, out } => cmd_scan(config, out).map(|partial| partial as u8 * 2),
        Cmd::FitBath { config, out } => cmd_fit_bath(config, out).map(|_| 0),
        Cmd::Spectrum { config, out } => cmd_spectrum(config, out).map(|_| 0),
        Cmd::Oracle {
            config,
            out,
            pseudomode_cutoff,
        } => cmd_oracle(config, out, *pseudomode_cutoff).map(|_| 0),
        Cmd::Resonances { config, out } => cmd_resonances(config, out).map(|_| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
