use crate::{Cli, Command, Common, Shape};
use anyhow::{Context, Result};
use nifm::config::ExperimentConfig;
use nifm::copula::CopulaParams;
use nifm::io;
use nifm::linalg::Matrix;
use nifm::nets::{train, Checkpoint, CopulaNet, MarginalNet, Network, TrainReport};
use nifm::nifm::{infer_with, joint_posterior_sample, NifmResult, PluginMode, SummaryRow};
use nifm::oracle::{mcmc_ifm, write_diagnostics_csv};
use nifm::predict::{compare_models, predictive_log_density, ranking, rolling_validate, roll_seed, Candidate, CopulaStage};
use nifm::priors::{calibrate_priors, CalibrationMethod};
use nifm::simgen::{simulate_joint_from_prior, GroundTruth, Simulator};
use nifm::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Maps an error chain to the documented exit codes.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Config(_) | Error::Shape(_) => 2,
                Error::Numerical(_) | Error::Domain(_) | Error::Degenerate(_) | Error::Autodiff(_) => 3,
                Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Checkpoint(_) => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

/// Preset, then config file, then `--set`, then explicit flags.
fn build_config(common: &Common, shape: Option<&Shape>) -> Result<ExperimentConfig> {
    let mut cfg = match &common.preset {
        Some(p) => ExperimentConfig::preset(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(path) = &common.config {
        cfg.apply_file(path).with_context(|| format!("reading {}", path.display()))?;
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| config_err(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(s) = shape {
        let mut put = |k: &str, v: Option<String>| -> Result<()> {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
            Ok(())
        };
        put("dim", s.dim.map(|v| v.to_string()))?;
        put("factors", s.factors.map(|v| v.to_string()))?;
        put("n_obs", s.n_obs.map(|v| v.to_string()))?;
        put("family", s.family.clone())?;
        put("marginal_kind", s.marginal_kind.clone())?;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| config_err(format!("{name}: no path given (flag or config key)")))
}

fn load_marginal(path: &Path) -> Result<MarginalNet> {
    Ok(Checkpoint::load(path)
        .with_context(|| format!("loading {}", path.display()))?
        .to_marginal()?)
}

fn load_copula(path: &Path) -> Result<CopulaNet> {
    Ok(Checkpoint::load(path)
        .with_context(|| format!("loading {}", path.display()))?
        .to_copula()?)
}

fn load_data(path: &Path) -> Result<Matrix> {
    io::read_dataset(path).with_context(|| format!("reading {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let common = cli.common;
    match cli.command {
        Command::Simulate { shape } => simulate(&build_config(&common, Some(&shape))?),
        Command::TrainMarginal { shape, dry_run, resume } => {
            let cfg = build_config(&common, Some(&shape))?;
            train_marginal(&cfg, dry_run, resume.as_deref())
        }
        Command::TrainCopula { shape, dry_run, resume } => {
            let cfg = build_config(&common, Some(&shape))?;
            train_copula(&cfg, dry_run, resume.as_deref())
        }
        Command::Infer {
            data,
            marginal,
            copula,
            samples,
            truth,
            plugin,
            level,
        } => {
            let cfg = build_config(&common, None)?;
            let data = required(data, &cfg.data, "data")?;
            let marginal = required(marginal, &cfg.marginal_checkpoint, "marginal_checkpoint")?;
            let copula = required(copula, &cfg.copula_checkpoint, "copula_checkpoint")?;
            let truth = truth.or_else(|| cfg.truth.clone());
            let mode = match plugin.as_str() {
                "transformed" => PluginMode::TransformedMean,
                "constrained" => PluginMode::ConstrainedMean {
                    n_draws: cfg.draws,
                    seed: cfg.seed,
                },
                other => return Err(config_err(format!("plugin: expected transformed or constrained, got {other:?}"))),
            };
            run_infer(&cfg, &data, &marginal, &copula, samples, truth.as_deref(), mode, level)
        }
        Command::Validate {
            data,
            marginal,
            copula,
            label,
            draws,
        } => {
            let cfg = build_config(&common, None)?;
            let data = load_data(&required(data, &cfg.data, "data")?)?;
            let m = load_marginal(&required(marginal, &cfg.marginal_checkpoint, "marginal_checkpoint")?)?;
            let copula = copula
                .or_else(|| cfg.copula_checkpoint.as_ref().map(|p| p.display().to_string()))
                .ok_or_else(|| config_err("copula: give a checkpoint or `independence`"))?;
            let net = (copula != "independence").then(|| load_copula(Path::new(&copula))).transpose()?;
            let stage = net.as_ref().map_or(CopulaStage::Independence, CopulaStage::Net);
            let cand = Candidate::new(label, &m, stage);
            validate(&cfg, &cand, &data, draws)
        }
        Command::Compare {
            data,
            marginal,
            candidates,
        } => {
            let cfg = build_config(&common, None)?;
            let data = load_data(&required(data, &cfg.data, "data")?)?;
            let m = load_marginal(&required(marginal, &cfg.marginal_checkpoint, "marginal_checkpoint")?)?;
            let mut specs = Vec::new();
            for c in &candidates {
                let (label, path) = c
                    .split_once('=')
                    .ok_or_else(|| config_err(format!("candidate: expected label=path, got {c:?}")))?;
                let net = (path != "independence").then(|| load_copula(Path::new(path))).transpose()?;
                specs.push((label.to_string(), net));
            }
            let cands: Vec<Candidate> = specs
                .iter()
                .map(|(l, n)| Candidate::new(l.clone(), &m, n.as_ref().map_or(CopulaStage::Independence, CopulaStage::Net)))
                .collect();
            compare(&cfg, &cands, &data)
        }
        Command::Oracle { data, level } => {
            let cfg = build_config(&common, None)?;
            let data = load_data(&required(data, &cfg.data, "data")?)?;
            oracle(&cfg, &data, level)
        }
        Command::CalibratePriors { data, method, shape } => {
            let cfg = build_config(&common, Some(&shape))?;
            let data = load_data(&required(data, &cfg.data, "data")?)?;
            let method = match method.as_str() {
                "ml" => CalibrationMethod::MaximumLikelihood,
                "mcmc" => CalibrationMethod::Mcmc {
                    n_iter: cfg.mcmc_iter,
                    n_burn: cfg.mcmc_burn,
                    seed: cfg.seed,
                },
                other => return Err(config_err(format!("method: expected ml or mcmc, got {other:?}"))),
            };
            calibrate(&cfg, &data, method)
        }
    }
}

fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    let spec = cfg.prior_spec()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sim = simulate_joint_from_prior(&spec, cfg.family, cfg.n_obs, &mut rng)?;
    let data_path = cfg.out_dir.join("data.csv");
    let truth_path = cfg.out_dir.join("truth.json");
    io::write_dataset(&data_path, &sim.data)?;
    io::write_json(&truth_path, &sim.truth)?;
    println!("wrote {} ({} x {}) and {}", data_path.display(), sim.data.rows(), sim.data.cols(), truth_path.display());
    Ok(())
}

fn metadata(cfg: &ExperimentConfig, report: &TrainReport) -> Vec<(String, String)> {
    vec![
        ("seed".into(), cfg.seed.to_string()),
        ("lr".into(), format!("{:e}", cfg.lr)),
        ("batch_size".into(), cfg.batch_size.to_string()),
        ("n_per_epoch".into(), cfg.n_per_epoch.to_string()),
        ("epochs_run".into(), report.epochs_run.to_string()),
        ("best_epoch".into(), report.best_epoch.to_string()),
        ("best_val_loss".into(), format!("{:?}", report.best_val_loss)),
    ]
}

fn fit_and_save<N: Network>(cfg: &ExperimentConfig, net: &mut N, sim: &Simulator, name: &str) -> Result<()> {
    let mut tc = cfg.train_config();
    tc.progress = true;
    let report = train(net, sim, &tc)?;
    let ckpt = cfg.out_dir.join(format!("{name}.ckpt"));
    let curve = cfg.out_dir.join(format!("{name}_loss.csv"));
    Checkpoint::from_network(net, &metadata(cfg, &report)).save(&ckpt)?;
    report.write_csv(&curve)?;
    println!(
        "best validation loss {:.6} at epoch {} of {} ({:.1} s); wrote {} and {}",
        report.best_val_loss,
        report.best_epoch,
        report.epochs_run,
        report.seconds,
        ckpt.display(),
        curve.display()
    );
    Ok(())
}

fn train_marginal(cfg: &ExperimentConfig, dry_run: bool, resume: Option<&Path>) -> Result<()> {
    let mut net = match resume {
        Some(p) => load_marginal(p)?,
        None => MarginalNet::new(cfg.marginal_arch(), cfg.seed)?,
    };
    let arch = net.arch().clone();
    if arch.n_obs != cfg.n_obs || arch.kind != cfg.marginal_kind {
        return Err(Error::Shape(format!(
            "checkpoint expects T={} and {} innovations, config has T={} and {}",
            arch.n_obs,
            arch.kind.as_str(),
            cfg.n_obs,
            cfg.marginal_kind.as_str()
        ))
        .into());
    }
    println!("marginal network: {} trainable parameters", net.n_params());
    if dry_run {
        return Ok(());
    }
    let sim = Simulator::Marginal {
        spec: cfg.prior_spec()?,
        n_obs: cfg.n_obs,
    };
    fit_and_save(cfg, &mut net, &sim, "marginal")
}

fn train_copula(cfg: &ExperimentConfig, dry_run: bool, resume: Option<&Path>) -> Result<()> {
    if cfg.n_factors == 0 {
        return Err(config_err("factors: the zero-factor model has no network to train"));
    }
    let mut net = match resume {
        Some(p) => load_copula(p)?,
        None => CopulaNet::new(cfg.copula_arch(), cfg.seed)?,
    };
    let a = net.arch().clone();
    if (a.n_obs, a.dim, a.n_factors, a.family) != (cfg.n_obs, cfg.dim, cfg.n_factors, cfg.family) {
        return Err(Error::Shape(format!(
            "checkpoint expects T={} D={} k={} {}, config has T={} D={} k={} {}",
            a.n_obs,
            a.dim,
            a.n_factors,
            a.family.as_str(),
            cfg.n_obs,
            cfg.dim,
            cfg.n_factors,
            cfg.family.as_str()
        ))
        .into());
    }
    println!("copula network: {} trainable parameters", net.n_params());
    if dry_run {
        return Ok(());
    }
    let sim = Simulator::Copula {
        spec: cfg.prior_spec()?,
        family: cfg.family,
        n_obs: cfg.n_obs,
    };
    fit_and_save(cfg, &mut net, &sim, "copula")
}

#[derive(Serialize)]
struct PosteriorRow {
    parameter: String,
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    truth: Option<f64>,
    z: Option<f64>,
}

/// Truth in the report's transformed coordinates, where the shapes agree.
fn truth_vector(result: &NifmResult, truth: &GroundTruth) -> Result<Vec<Option<f64>>> {
    if truth.marginals.len() != result.dim() {
        return Err(Error::Shape(format!("truth has {} series, data have {}", truth.marginals.len(), result.dim())).into());
    }
    let mut out = Vec::new();
    for p in &truth.marginals {
        if p.kind() == result.marginal_kind {
            out.extend(p.to_unconstrained()?.to_vec().into_iter().map(Some));
        } else {
            out.extend(std::iter::repeat_n(None, result.marginal_kind.n_params()));
        }
    }
    let width = CopulaParams::target_width(result.dim(), result.n_factors, result.family);
    let c = &truth.copula;
    if c.loadings.n_factors() == result.n_factors && c.family == result.family {
        out.extend(c.to_target().into_iter().map(Some));
    } else {
        out.extend(std::iter::repeat_n(None, width));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn run_infer(
    cfg: &ExperimentConfig,
    data: &Path,
    marginal: &Path,
    copula: &Path,
    samples: Option<usize>,
    truth: Option<&Path>,
    mode: PluginMode,
    level: f64,
) -> Result<()> {
    let y = load_data(data)?;
    let m = load_marginal(marginal)?;
    let c = load_copula(copula)?;
    let result = infer_with(&m, &c, &y, mode)?;
    let rows: Vec<SummaryRow> = result.summary(level)?;
    let truth = truth
        .map(|p| io::read_json::<GroundTruth>(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let tv = match &truth {
        Some(t) => truth_vector(&result, t)?,
        None => vec![None; rows.len()],
    };
    let out: Vec<PosteriorRow> = rows
        .iter()
        .zip(&tv)
        .map(|(r, t)| PosteriorRow {
            parameter: r.parameter.clone(),
            mean: r.mean,
            sd: r.sd,
            lower: r.lower,
            upper: r.upper,
            truth: *t,
            z: t.map(|t| (r.mean - t) / r.sd),
        })
        .collect();
    let post_path = cfg.out_dir.join("posterior.csv");
    io::write_rows_csv(&post_path, &out)?;
    let report_path = cfg.out_dir.join("report.json");
    io::write_json(&report_path, &result.report(level)?)?;
    println!("inference took {:.4} s; wrote {} and {}", result.seconds, post_path.display(), report_path.display());
    if let Some(j) = samples {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let draws = joint_posterior_sample(&result, j, &mut rng)?;
        let p = cfg.out_dir.join("draws.csv");
        draws.write_csv(&result.parameter_names(), &p)?;
        println!("wrote {j} posterior draws to {}", p.display());
    }
    Ok(())
}

fn validate(cfg: &ExperimentConfig, cand: &Candidate, data: &Matrix, keep_draws: bool) -> Result<()> {
    let report = rolling_validate(cand, data, cfg.horizon, cfg.draws, cfg.seed)?;
    let path = cfg.out_dir.join(format!("validation_{}.csv", cand.label));
    report.write_csv(&path)?;
    println!("label,lpds,seconds");
    println!("{},{:.6},{:.3}", report.label, report.lpds, report.seconds);
    if keep_draws {
        // Re-run the last roll with its own seed to emit predictive draws.
        let t = cand.window();
        let last = report.log_densities.len() - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(roll_seed(cfg.seed, last));
        let window = data.row_range(last, last + t);
        let params = cand.posterior_draws(&window, cfg.draws, &mut rng)?;
        let est = predictive_log_density(&params, &window, data.row(last + t + cfg.horizon - 1), cfg.horizon, true, &mut rng)?;
        let p = cfg.out_dir.join(format!("predictive_draws_{}.csv", cand.label));
        io::write_matrix_csv(&p, &io::series_names(data.cols()), est.draws.as_ref().expect("draws requested"))?;
        println!("wrote predictive draws to {}", p.display());
    }
    Ok(())
}

fn compare(cfg: &ExperimentConfig, cands: &[Candidate], data: &Matrix) -> Result<()> {
    let reports = compare_models(cands, data, cfg.horizon, cfg.draws, cfg.seed)?;
    for r in &reports {
        r.write_csv(&cfg.out_dir.join(format!("validation_{}.csv", r.label)))?;
    }
    let table = ranking(&reports);
    io::write_rows_csv(&cfg.out_dir.join("ranking.csv"), &table)?;
    println!("{:<6}{:<20}{:>16}{:>12}", "rank", "label", "LPDS", "seconds");
    for row in &table {
        println!("{:<6}{:<20}{:>16.4}{:>12.3}", row.rank, row.label, row.lpds, row.seconds);
    }
    Ok(())
}

fn oracle(cfg: &ExperimentConfig, data: &Matrix, level: f64) -> Result<()> {
    let mut prior = cfg.prior_spec()?;
    if prior.dim != data.cols() {
        prior = prior.with_copula_shape(data.cols(), cfg.n_factors.min(data.cols()));
    }
    let run = mcmc_ifm(data, &prior, cfg.family, &cfg.mcmc_config(), cfg.mcmc_chains, cfg.seed)?;
    for (d, chains) in run.marginal_chains.iter().enumerate() {
        for (c, ch) in chains.iter().enumerate() {
            ch.write_csv(&cfg.out_dir.join(format!("chain_y{}_{c}.csv", d + 1)))?;
        }
    }
    for (c, ch) in run.copula_chains.iter().enumerate() {
        ch.write_csv(&cfg.out_dir.join(format!("chain_copula_{c}.csv")))?;
    }
    let diag = run.diagnostics()?;
    write_diagnostics_csv(&diag, &cfg.out_dir.join("diagnostics.csv"))?;
    let (names, draws) = run.pooled_draws();
    io::write_matrix_csv(&cfg.out_dir.join("draws.csv"), &names, &draws)?;
    let tail = 0.5 * (1.0 - level);
    let rows: Vec<SummaryRow> = names
        .iter()
        .enumerate()
        .map(|(j, n)| {
            let mut col = draws.column(j);
            let (mean, sd) = nifm::stats::mean_sd(&col);
            col.sort_by(f64::total_cmp);
            let q = |p: f64| col[((p * (col.len() - 1) as f64).round() as usize).min(col.len() - 1)];
            SummaryRow {
                parameter: n.clone(),
                mean,
                sd,
                lower: q(tail),
                upper: q(1.0 - tail),
            }
        })
        .collect();
    io::write_rows_csv(&cfg.out_dir.join("posterior.csv"), &rows)?;
    println!("{:<14}{:>10}{:>8}", "parameter", "n_eff", "R-hat");
    for d in &diag {
        println!("{:<14}{:>10.0}{:>8.3}", d.name, d.ess, d.rhat);
    }
    println!("oracle run took {:.2} s; outputs in {}", run.seconds, cfg.out_dir.display());
    Ok(())
}

fn calibrate(cfg: &ExperimentConfig, data: &Matrix, method: CalibrationMethod) -> Result<()> {
    let spec = calibrate_priors(data, cfg.n_factors, cfg.marginal_kind, method)?;
    let mut out = ExperimentConfig::default();
    out.set_prior(&spec);
    let full = out.to_config_string();
    let text: Vec<&str> = full
        .lines()
        .filter(|l| ["prior.", "marginal_kind ", "dim ", "factors "].iter().any(|p| l.starts_with(p)))
        .collect();
    let path = cfg.out_dir.join("priors.cfg");
    std::fs::write(&path, text.join("\n") + "\n")?;
    println!("wrote calibrated priors to {}", path.display());
    Ok(())
}
