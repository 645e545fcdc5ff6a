use super::*;
use crate::copula::{loadings_to_correlation, simulate_copula_data, FactorLoadings};
use crate::priors::{default_priors, BetaPrior};
use rand::Rng;
use rand_distr::StandardNormal;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn bivariate_normal_recovery() {
    let cfg = McmcConfig {
        n_iter: 50_000,
        n_burn: 5_000,
        ..Default::default()
    };
    let target = |x: &[f64]| -0.5 * (x[0] * x[0] + x[1] * x[1]);
    let chain = mh_sample(target, &[3.0, -3.0], &cfg, &mut rng(1)).unwrap();
    let (mean, cov) = crate::linalg::mean_and_covariance(&chain.draws);
    assert!(mean[0].abs() < 0.05 && mean[1].abs() < 0.05, "{mean:?}");
    assert!((cov[(0, 0)] - 1.0).abs() < 0.1 && (cov[(1, 1)] - 1.0).abs() < 0.1, "{cov:?}");
    assert!(cov[(0, 1)].abs() < 0.1);
    assert!(chain.acceptance_rate > 0.1 && chain.acceptance_rate < 0.5);
}

#[test]
fn beta_target_moment() {
    let b = BetaPrior { a: 11.34, b: 85.12 };
    let cfg = McmcConfig {
        n_iter: 50_000,
        n_burn: 5_000,
        init_scale: 0.02,
        ..Default::default()
    };
    let chain = mh_sample(|x| b.ln_pdf(x[0]), &[0.2], &cfg, &mut rng(2)).unwrap();
    assert!((chain.mean()[0] - 0.1176).abs() < 0.005, "{}", chain.mean()[0]);
}

#[test]
fn stuck_chain_errors() {
    let target = |x: &[f64]| if x[0] == 0.5 { 0.0 } else { f64::NEG_INFINITY };
    let err = mh_sample(target, &[0.5], &McmcConfig::default(), &mut rng(3)).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)));
    let err = mh_sample(|_| f64::NEG_INFINITY, &[0.0], &McmcConfig::default(), &mut rng(3)).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)));
}

#[test]
fn three_state_detailed_balance() {
    let pi: [f64; 3] = [0.2, 0.3, 0.5];
    let mut r = rng(4);
    let mut state = 0usize;
    let mut counts = [0usize; 3];
    let n = 1_000_000;
    for _ in 0..n {
        let step = if r.random_bool(0.5) { 1 } else { 2 };
        let prop = (state + step) % 3;
        if accept(pi[prop].ln() - pi[state].ln(), r.random()) {
            state = prop;
        }
        counts[state] += 1;
    }
    for s in 0..3 {
        let f = counts[s] as f64 / n as f64;
        assert!((f - pi[s]).abs() < 1e-2, "state {s}: {f}");
    }
}

fn chain_of(cols: Vec<Vec<f64>>) -> McmcChain {
    let n = cols[0].len();
    let m = cols.len();
    let mut draws = Matrix::zeros(n, m);
    for (j, c) in cols.iter().enumerate() {
        for (t, v) in c.iter().enumerate() {
            draws[(t, j)] = *v;
        }
    }
    McmcChain {
        names: (0..m).map(|j| format!("p{j}")).collect(),
        draws,
        acceptance_rate: 0.5,
        proposal_history: Vec::new(),
        final_scale: 1.0,
        seed: None,
    }
}

#[test]
fn ess_white_noise() {
    let mut r = rng(5);
    let n = 4000;
    let x: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
    let d = diagnostics(&[chain_of(vec![x])]).unwrap();
    assert!((d[0].ess / n as f64 - 1.0).abs() < 0.2, "{}", d[0].ess);
}

#[test]
fn ess_ar1() {
    let mut r = rng(6);
    let n = 40_000;
    let phi = 0.9;
    let mut x = vec![0.0; n];
    for t in 1..n {
        x[t] = phi * x[t - 1] + r.sample::<f64, _>(StandardNormal);
    }
    let want = n as f64 * (1.0 - phi) / (1.0 + phi);
    let d = diagnostics(&[chain_of(vec![x])]).unwrap();
    assert!((d[0].ess / want - 1.0).abs() < 0.3, "{} vs {want}", d[0].ess);
}

#[test]
fn rhat_identical_chains() {
    let mut r = rng(7);
    let x: Vec<f64> = (0..2000).map(|_| r.sample(StandardNormal)).collect();
    let c = chain_of(vec![x]);
    let d = diagnostics(&[c.clone(), c]).unwrap();
    assert!((d[0].rhat - 1.0).abs() < 0.01, "{}", d[0].rhat);
}

#[test]
fn rhat_detects_disagreement() {
    let mut r = rng(8);
    let a: Vec<f64> = (0..1000).map(|_| r.sample(StandardNormal)).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 3.0).collect();
    let d = diagnostics(&[chain_of(vec![a]), chain_of(vec![b])]).unwrap();
    assert!(d[0].rhat > 1.5);
}

#[test]
fn short_chain_rejected() {
    let c = chain_of(vec![vec![0.0; 50]]);
    assert!(matches!(diagnostics(&[c]), Err(Error::Degenerate(_))));
}

#[test]
fn garch_prior_only_reproduces_interval() {
    let prior = default_priors(InnovationKind::Gaussian, 3, 1);
    let cfg = McmcConfig {
        n_iter: 60_000,
        n_burn: 5_000,
        ..Default::default()
    };
    let chain = garch_posterior(None, &prior, &cfg, 9).unwrap();
    let mut a1: Vec<f64> = (0..chain.n_draws())
        .map(|t| {
            TransformedGarchParams::from_slice(chain.draws.row(t), InnovationKind::Gaussian)
                .unwrap()
                .to_constrained()
                .alpha1
        })
        .collect();
    a1.sort_by(f64::total_cmp);
    let n = a1.len();
    let (lo, hi) = (a1[n / 20], a1[n - n / 20]);
    assert!(((lo - 0.069) / 0.069).abs() < 0.1 && ((hi - 0.175) / 0.175).abs() < 0.1, "({lo}, {hi})");
}

fn rho_loadings(rho: f64) -> FactorLoadings {
    // D=2, k=1 with G₁₁ = 1: ρ = b / sqrt(2 (1 + b²)).
    let b = (2.0 * rho * rho / (1.0 - 2.0 * rho * rho)).sqrt();
    FactorLoadings::new(2, 1, vec![0.0, b]).unwrap()
}

#[test]
fn copula_recovers_correlation() {
    let g = rho_loadings(0.6);
    assert!((loadings_to_correlation(&g).matrix()[(0, 1)] - 0.6).abs() < 1e-12);
    let u = simulate_copula_data(&CopulaParams::gaussian(g), 2000, &mut rng(10)).unwrap();
    let prior = default_priors(InnovationKind::Gaussian, 2, 1);
    let cfg = McmcConfig {
        n_iter: 80_000,
        n_burn: 10_000,
        ..Default::default()
    };
    let chain = copula_posterior(&u, &prior, CopulaFamily::Gaussian, &cfg, 11).unwrap();
    let mut s = 0.0;
    for t in 0..chain.n_draws() {
        let p = CopulaParams::from_target(2, 1, CopulaFamily::Gaussian, chain.draws.row(t)).unwrap();
        s += p.correlation().matrix()[(0, 1)];
    }
    let mean_rho = s / chain.n_draws() as f64;
    assert!((mean_rho - 0.6).abs() < 0.05, "{mean_rho}");
    let d = diagnostics(&[chain]).unwrap();
    assert!(d.iter().all(|p| p.ess > 200.0), "{d:?}");
}

#[test]
fn copula_independence_loadings_near_zero() {
    let params = CopulaParams::gaussian(FactorLoadings::zeros(3, 0).unwrap());
    let u = simulate_copula_data(&params, 500, &mut rng(12)).unwrap();
    let prior = default_priors(InnovationKind::Gaussian, 3, 1);
    let cfg = McmcConfig {
        n_iter: 20_000,
        n_burn: 4_000,
        ..Default::default()
    };
    let chain = copula_posterior(&u, &prior, CopulaFamily::Gaussian, &cfg, 13).unwrap();
    let (mean, sd) = (chain.mean(), chain.sd());
    // Entries 1 and 2 are the off-diagonal loadings of the single factor.
    for j in 1..3 {
        assert!(mean[j].abs() < 2.0 * sd[j], "{}: {} ± {}", chain.names[j], mean[j], sd[j]);
    }
}

#[test]
fn chain_csv_round_trip() {
    let c = chain_of(vec![vec![1.5, 2.5, 3.5], vec![-1.0, 0.0, 1.0]]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.csv");
    c.write_csv(&path).unwrap();
    let mut rdr = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), vec!["iter", "p0", "p1"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows[2][1].parse::<f64>().unwrap(), 3.5);
}

#[test]
fn two_stage_run_names_and_plugins() {
    let spec = default_priors(InnovationKind::Gaussian, 3, 1);
    let sim = crate::simgen::simulate_joint_from_prior(&spec, CopulaFamily::Gaussian, 200, &mut rng(21)).unwrap();
    let cfg = McmcConfig {
        n_iter: 2_000,
        n_burn: 1_000,
        ..Default::default()
    };
    let run = mcmc_ifm(&sim.data, &spec, CopulaFamily::Gaussian, &cfg, 2, 5).unwrap();
    assert_eq!(run.marginal_chains.len(), 3);
    assert!(run.marginal_plugins.iter().all(|p| p.validate().is_ok()));
    let diag = run.diagnostics().unwrap();
    let names: Vec<&str> = diag.iter().map(|d| d.name.as_str()).collect();
    assert_eq!(
        names,
        ["y1.phi1", "y1.phi2", "y1.phi3", "y2.phi1", "y2.phi2", "y2.phi3", "y3.phi1", "y3.phi2", "y3.phi3", "gtilde_1_1", "gtilde_2_1", "gtilde_3_1"]
    );
    let (pn, draws) = run.pooled_draws();
    assert_eq!(pn.len(), 12);
    assert_eq!(draws.rows(), 4_000);
    assert!(draws.as_slice().iter().all(|v| v.is_finite()));
    let again = mcmc_ifm(&sim.data, &spec, CopulaFamily::Gaussian, &cfg, 2, 5).unwrap();
    assert_eq!(again.copula_chains, run.copula_chains);
}
