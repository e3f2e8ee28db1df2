//! Cross-validation of the N-independent cluster closure against the
//! brute-force Liouvillian at N = 2, where the pair sector makes the
//! closure exact up to vibrational truncation.

use vibrolase::expfit::{ExpTerm, ExponentialBathModel};
use vibrolase::manybody::{
    evolve_ensemble, ClusterConfig, DriveMode, EnsembleSpec, StationarityCriterion,
};
use vibrolase::oracle::{
    build_lasing_liouvillian, embed, expectation_of, pseudomodes_from_bath,
    steady_state_propagated, LasingOracleSpec,
};
use vibrolase::spectral::CavityBathModel;
use vibrolase::{qops, CMatrix, Complex64};

fn oracle_steady(spec: &LasingOracleSpec, window: f64) -> (f64, f64) {
    let lv = build_lasing_liouvillian(spec).unwrap();
    let d = spec.dim();
    let mut dims = vec![2usize; spec.n_emitters];
    dims.push(spec.cavity_cutoff);
    for _ in 0..spec.n_emitters {
        for pm in &spec.pseudomodes {
            dims.push(pm.cutoff);
        }
    }
    let mut rho0 = CMatrix::zeros(d, d);
    rho0[(0, 0)] = Complex64::new(1.0, 0.0);
    let pe_total = embed(&qops::sigma_pm(), &dims, 0) + embed(&qops::sigma_pm(), &dims, 1);
    let rho = steady_state_propagated(&lv, &rho0, &pe_total, window, 1e-7, 2e4).unwrap();
    let pe = expectation_of(&rho, &embed(&qops::sigma_pm(), &dims, 0)).re;
    let nc = expectation_of(
        &rho,
        &embed(&qops::number(spec.cavity_cutoff), &dims, spec.n_emitters),
    )
    .re;
    (pe, nc)
}

#[test]
fn two_emitters_incoherent_pump_matches_oracle() {
    let spec = EnsembleSpec {
        n_emitters: 2,
        drive: 0.15,
        mode: DriveMode::Incoherent,
        gamma_down: 0.02,
        cavity: CavityBathModel::new(0.2, 0.0, 1.0).unwrap(),
        cavity_cutoff: 5,
        vib_bath: ExponentialBathModel {
            terms: vec![],
            residual: None,
        },
    };
    let config = ClusterConfig {
        rtol: 1e-9,
        ..Default::default()
    };
    let crit = StationarityCriterion {
        window: 40.0,
        tol: 1e-8,
    };
    let (state, _) = evolve_ensemble(&spec, &config, &crit).unwrap();
    let obs = state.observables();
    obs.validate().unwrap();

    let oracle = LasingOracleSpec {
        n_emitters: 2,
        drive: 0.0,
        pump: spec.drive,
        g_cav: spec.cavity.g_cav,
        kappa: spec.cavity.kappa,
        detuning: spec.cavity.omega_cav,
        gamma_down: spec.gamma_down,
        cavity_cutoff: spec.cavity_cutoff,
        pseudomodes: vec![],
    };
    let (pe_ref, nc_ref) = oracle_steady(&oracle, 40.0);

    // without a vibrational hierarchy the closure is exact at N = 2; only
    // integrator and stationarity tolerances separate the two routes
    assert!(
        (obs.p_e - pe_ref).abs() < 1e-4 * pe_ref.max(1e-3),
        "p_e {} vs oracle {pe_ref}",
        obs.p_e
    );
    assert!(
        (obs.cavity_occupation - nc_ref).abs() < 1e-4 * nc_ref.max(1e-3),
        "n_cav {} vs oracle {nc_ref}",
        obs.cavity_occupation
    );
}

#[test]
fn two_emitters_coherent_drive_with_bath_matches_oracle() {
    let bath = ExponentialBathModel::new(vec![ExpTerm {
        g: Complex64::new(0.04, 0.0),
        w: Complex64::new(0.25, 1.1),
    }])
    .unwrap();
    let spec = EnsembleSpec {
        n_emitters: 2,
        drive: 0.3,
        mode: DriveMode::Coherent,
        gamma_down: 0.02,
        cavity: CavityBathModel::new(0.2, 0.0, 1.0).unwrap(),
        cavity_cutoff: 4,
        vib_bath: bath.clone(),
    };
    let config = ClusterConfig {
        depth: 4,
        pair_depth: 2,
        rtol: 1e-9,
        ..Default::default()
    };
    let crit = StationarityCriterion {
        window: 40.0,
        tol: 1e-7,
    };
    let (state, _) = evolve_ensemble(&spec, &config, &crit).unwrap();
    let obs = state.observables();
    obs.validate().unwrap();

    let oracle = LasingOracleSpec {
        n_emitters: 2,
        drive: spec.drive,
        pump: 0.0,
        g_cav: spec.cavity.g_cav,
        kappa: spec.cavity.kappa,
        detuning: spec.cavity.omega_cav,
        gamma_down: spec.gamma_down,
        cavity_cutoff: spec.cavity_cutoff,
        pseudomodes: pseudomodes_from_bath(&bath, &[5]).unwrap(),
    };
    let (pe_ref, nc_ref) = oracle_steady(&oracle, 40.0);

    let rel_pe = (obs.p_e - pe_ref).abs() / pe_ref;
    let rel_nc = (obs.cavity_occupation - nc_ref).abs() / nc_ref;
    assert!(rel_pe < 0.10, "p_e off by {rel_pe:.3}: {} vs {pe_ref}", obs.p_e);
    assert!(
        rel_nc < 0.10,
        "n_cav off by {rel_nc:.3}: {} vs {nc_ref}",
        obs.cavity_occupation
    );
}
