//! Pinned reference output for the brute-force Liouvillian on a small
//! driven emitter-cavity-ancilla system. Guards against silent changes in
//! operator conventions (dissipator factors, coupling signs, embedding
//! order). Regenerate with `GOLDEN_REGEN=1 cargo test -p vibrolase --test
//! golden_oracle` after an intentional change.

use vibrolase::expfit::{ExpTerm, ExponentialBathModel};
use vibrolase::oracle::{
    build_lasing_liouvillian, embed, expectation_of, liouvillian_eigenvalues,
    pseudomodes_from_bath, steady_state_exact, LasingOracleSpec,
};
use vibrolase::{qops, Complex64};

fn golden_path() -> String {
    format!(
        "{}/tests/golden/oracle_small.json",
        env!("CARGO_MANIFEST_DIR")
    )
}

fn spec() -> LasingOracleSpec {
    let bath = ExponentialBathModel::new(vec![ExpTerm {
        g: Complex64::new(0.05, 0.0),
        w: Complex64::new(0.4, 1.3),
    }])
    .unwrap();
    LasingOracleSpec {
        n_emitters: 1,
        drive: 0.3,
        pump: 0.0,
        g_cav: 0.25,
        kappa: 0.8,
        detuning: 0.1,
        gamma_down: 0.02,
        cavity_cutoff: 4,
        pseudomodes: pseudomodes_from_bath(&bath, &[2]).unwrap(),
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Golden {
    eigenvalues: Vec<[f64; 2]>,
    p_e: f64,
    n_cav: f64,
}

fn compute() -> Golden {
    let lv = build_lasing_liouvillian(&spec()).unwrap();
    let mut eigs: Vec<[f64; 2]> = liouvillian_eigenvalues(&lv)
        .unwrap()
        .iter()
        .map(|z| [z.re, z.im])
        .collect();
    eigs.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));

    let rho = steady_state_exact(&lv).unwrap();
    let dims = [2usize, 4, 2];
    Golden {
        eigenvalues: eigs,
        p_e: expectation_of(&rho, &embed(&qops::sigma_pm(), &dims, 0)).re,
        n_cav: expectation_of(&rho, &embed(&qops::number(4), &dims, 1)).re,
    }
}

#[test]
fn small_liouvillian_matches_pinned_reference() {
    let now = compute();
    if std::env::var("GOLDEN_REGEN").is_ok() {
        std::fs::create_dir_all(format!("{}/tests/golden", env!("CARGO_MANIFEST_DIR"))).unwrap();
        std::fs::write(golden_path(), serde_json::to_string_pretty(&now).unwrap()).unwrap();
        return;
    }
    let stored: Golden =
        serde_json::from_str(&std::fs::read_to_string(golden_path()).unwrap()).unwrap();
    assert_eq!(now.eigenvalues.len(), stored.eigenvalues.len());
    let mut worst = 0f64;
    for (a, b) in now.eigenvalues.iter().zip(&stored.eigenvalues) {
        worst = worst.max((a[0] - b[0]).abs().max((a[1] - b[1]).abs()));
    }
    assert!(worst < 1e-9, "eigenvalue drift {worst:.3e}");
    assert!((now.p_e - stored.p_e).abs() < 1e-10, "p_e drift");
    assert!((now.n_cav - stored.n_cav).abs() < 1e-10, "n_cav drift");
}
