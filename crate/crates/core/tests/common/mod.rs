//! Shared fixtures: desk-preset networks trained once and cached on disk
//! under the cargo target directory.

#![allow(dead_code)]

use nifm::copula::CopulaFamily;
use nifm::garch::InnovationKind;
use nifm::nets::{train, Checkpoint, CopulaArch, CopulaNet, MarginalArch, MarginalNet, Network, TrainConfig};
use nifm::priors::{default_priors, PriorSpec};
use nifm::simgen::Simulator;
use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;

pub const DIM: usize = 3;
pub const N_OBS: usize = 200;
pub const MARGINAL_SEED: u64 = 11;
pub const COPULA_SEED: u64 = 21;

/// Bump to invalidate cached checkpoints after a change to training.
const FIXTURE_TAG: &str = "v1";

/// Bypasses the test harness capture so progress shows in plain runs.
pub fn say(line: &str) {
    let mut e = std::io::stderr().lock();
    let _ = writeln!(e, "{line}");
}

pub fn prior(k: usize) -> PriorSpec {
    default_priors(InnovationKind::Gaussian, DIM, k)
}

fn cache_path(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("nifm-fixtures");
    std::fs::create_dir_all(&dir).expect("fixture directory");
    dir.join(format!("{name}-{FIXTURE_TAG}.ckpt"))
}

fn train_or_load<N: Network>(name: &str, mut net: N, sim: &Simulator, seed: u64, load: impl Fn(&Checkpoint) -> N) -> N {
    let path = cache_path(name);
    if let Ok(ck) = Checkpoint::load(&path) {
        return load(&ck);
    }
    say(&format!("training {name} ({} parameters), cached at {}", net.n_params(), path.display()));
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::desk()
    };
    let report = train(&mut net, sim, &cfg).expect("training");
    say(&format!(
        "{name}: {} epochs, best validation loss {:.4} at epoch {}, {:.0} s",
        report.epochs_run, report.best_val_loss, report.best_epoch, report.seconds
    ));
    let meta = [
        ("epochs_run".to_string(), report.epochs_run.to_string()),
        ("seconds".to_string(), format!("{:.1}", report.seconds)),
    ];
    let tmp = path.with_extension("partial");
    Checkpoint::from_network(&net, &meta).save(&tmp).expect("save checkpoint");
    std::fs::rename(&tmp, &path).expect("publish checkpoint");
    net
}

/// Desk marginal network for Gaussian innovations and `T = 200`.
pub fn marginal() -> &'static MarginalNet {
    static NET: OnceLock<MarginalNet> = OnceLock::new();
    NET.get_or_init(|| {
        let net = MarginalNet::new(MarginalArch::desk(InnovationKind::Gaussian, N_OBS), MARGINAL_SEED).unwrap();
        let sim = Simulator::Marginal {
            spec: prior(1),
            n_obs: N_OBS,
        };
        train_or_load("marginal-desk-gaussian-t200", net, &sim, MARGINAL_SEED, |c| c.to_marginal().unwrap())
    })
}

/// Desk Gaussian-copula network for `D = 3`, `T = 200` and `k` factors.
pub fn copula(k: usize) -> &'static CopulaNet {
    static NETS: [OnceLock<CopulaNet>; 4] = [OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new()];
    assert!((1..=DIM).contains(&k));
    NETS[k].get_or_init(|| {
        let seed = COPULA_SEED + k as u64;
        let net = CopulaNet::new(CopulaArch::desk(DIM, k, CopulaFamily::Gaussian, N_OBS), seed).unwrap();
        let sim = Simulator::Copula {
            spec: prior(k),
            family: CopulaFamily::Gaussian,
            n_obs: N_OBS,
        };
        train_or_load(&format!("copula-desk-gaussian-d3-k{k}-t200"), net, &sim, seed, |c| c.to_copula().unwrap())
    })
}
