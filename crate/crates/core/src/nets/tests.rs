use super::*;
use crate::copula::{CopulaData, CopulaFamily};
use crate::garch::InnovationKind;
use crate::linalg::{Cholesky, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn mini_marginal() -> MarginalNet {
    let arch = MarginalArch {
        head_widths: vec![6],
        channels: vec![2, 3, 4],
        ..MarginalArch::full(InnovationKind::Gaussian, 64)
    };
    MarginalNet::new(arch, 3).unwrap()
}

fn mini_copula(family: CopulaFamily, k: usize, shared: bool) -> CopulaNet {
    let arch = CopulaArch {
        encoder: vec![5, 6],
        head_widths: vec![7, 5],
        shared_heads: shared,
        ..CopulaArch::desk(3, k, family, 12)
    };
    CopulaNet::new(arch, 4).unwrap()
}

#[test]
fn full_size_parameter_counts() {
    let m = MarginalNet::new(MarginalArch::full(InnovationKind::Gaussian, 1000), 0).unwrap();
    assert_eq!(m.n_params(), 6_641_369);
    assert_eq!(m.arch().conv_lengths(), vec![500, 250, 125]);
    assert_eq!(m.arch().flat_len(), 4000);
    let c = CopulaNet::new(CopulaArch::full(20, 1, CopulaFamily::Gaussian, 1000), 0).unwrap();
    assert_eq!(c.n_params(), 2_615_784);
}

#[test]
fn table_layer_sizes() {
    let m = MarginalNet::new(MarginalArch::full(InnovationKind::Gaussian, 1000), 0).unwrap();
    let sizes: Vec<(String, usize)> = m
        .store()
        .names()
        .iter()
        .zip(m.store().tensors())
        .map(|(n, t)| (n.clone(), t.numel()))
        .collect();
    let layer = |prefix: &str| -> usize { sizes.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, s)| s).sum() };
    assert_eq!(layer("conv0."), 32);
    assert_eq!(layer("conv1."), 400);
    assert_eq!(layer("conv2."), 1568);
    assert_eq!(layer("mean.0."), 2_048_512);
    assert_eq!(layer("mean.1."), 131_328);
    assert_eq!(layer("mean.2."), 32_896);
    assert_eq!(layer("mean.out."), 387);

    let c = CopulaNet::new(CopulaArch::full(20, 1, CopulaFamily::Gaussian, 1000), 0).unwrap();
    let names = c.store().names();
    let count = |prefix: &str| -> usize {
        names
            .iter()
            .zip(c.store().tensors())
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    };
    assert_eq!(count("psi.0."), 1344);
    assert_eq!(count("psi.3."), 131_584);
    assert_eq!(count("phi0.mean.0.weight") + count("phi0.mean.0.bias"), 525_312);
    assert_eq!(count("phi0.mean.0.bn."), 2048);
    assert_eq!(count("phi0.var.out."), 2580);

    // Four factors: per-factor output layers of 20/19/18/17 units.
    let c4 = CopulaNet::new(CopulaArch::full(20, 4, CopulaFamily::Gaussian, 1000), 0).unwrap();
    let outs: Vec<usize> = (0..4)
        .map(|l| {
            c4.store()
                .names()
                .iter()
                .zip(c4.store().tensors())
                .filter(|(n, _)| n.starts_with(&format!("phi.mean.f{l}.")))
                .map(|(_, t)| t.numel())
                .sum()
        })
        .collect();
    assert_eq!(outs, vec![5140, 4883, 4626, 4369]);
    assert_eq!(c4.target_width(), 74);
}

#[test]
fn copula_output_widths() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (family, k, want) in [
        (CopulaFamily::Gaussian, 1, 3),
        (CopulaFamily::Gaussian, 2, 5),
        (CopulaFamily::StudentT, 2, 6),
        (CopulaFamily::StudentT, 3, 7),
    ] {
        for shared in [false, true] {
            let net = mini_copula(family, k, shared);
            let x = random_tensor(&mut rng, &[4, 12, 3], 0.01, 0.99);
            let post = net.posteriors(&x).unwrap();
            assert_eq!(post.len(), 4);
            assert!(post.iter().all(|p| p.dim() == want && p.sd().iter().all(|s| *s > 0.0)));
        }
    }
}

#[test]
fn marginal_posterior_is_valid_and_deterministic() {
    let net = mini_marginal();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
    let a = net.posterior(&y).unwrap();
    let b = net.posterior(&y).unwrap();
    assert_eq!(a, b);
    match a.scale() {
        PosteriorScale::Cholesky(c) => assert!((0..3).all(|i| c.get(i, i) > 0.0)),
        PosteriorScale::Diagonal(_) => panic!("marginal posterior must be full covariance"),
    }
    let err = net.posterior(&y[..63]).unwrap_err();
    assert!(matches!(err, crate::Error::Shape(_)));
}

#[test]
fn cholesky_head_always_spd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for seed in 0..40 {
        let net = MarginalNet::new(
            MarginalArch {
                head_widths: vec![8],
                ..MarginalArch::full(InnovationKind::StudentT, 64)
            },
            seed,
        )
        .unwrap();
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let x = random_tensor(&mut rng, &[250, 1, 64], -scale, scale);
        for p in net.posteriors(&x).unwrap() {
            Cholesky::new(&p.covariance()).unwrap();
            checked += 1;
        }
    }
    assert_eq!(checked, 10_000);
}

#[test]
fn deep_sets_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let family = if trial % 2 == 0 { CopulaFamily::Gaussian } else { CopulaFamily::StudentT };
        let net = CopulaNet::new(CopulaArch::desk(3, 1 + trial % 3, family, 40), trial as u64).unwrap();
        let u = Matrix::from_vec(40, 3, (0..120).map(|_| rng.random_range(0.001..0.999)).collect()).unwrap();
        let mut perm: Vec<usize> = (0..40).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let mut v = Matrix::zeros(40, 3);
        for (i, &p) in perm.iter().enumerate() {
            v.row_mut(i).copy_from_slice(u.row(p));
        }
        let a = net.posterior(&CopulaData::new(u).unwrap()).unwrap();
        let b = net.posterior(&CopulaData::new(v).unwrap()).unwrap();
        for (x, y) in a.mean().iter().zip(b.mean()).chain(a.sd().iter().zip(&b.sd())) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst < 1e-6, "{worst}");
}

fn mvn_oracle(mean: &[f64], cov: &Matrix, x: &[f64]) -> f64 {
    // Gauss–Jordan inverse and determinant, independent of the Cholesky path.
    let m = mean.len();
    let mut a = cov.clone();
    let mut inv = Matrix::identity(m);
    let mut det = 1.0;
    for c in 0..m {
        let p = (c..m).max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs())).unwrap();
        if p != c {
            for k in 0..m {
                let (t1, t2) = (a[(c, k)], inv[(c, k)]);
                a[(c, k)] = a[(p, k)];
                inv[(c, k)] = inv[(p, k)];
                a[(p, k)] = t1;
                inv[(p, k)] = t2;
            }
            det = -det;
        }
        let piv = a[(c, c)];
        det *= piv;
        for k in 0..m {
            a[(c, k)] /= piv;
            inv[(c, k)] /= piv;
        }
        for r in 0..m {
            if r != c {
                let f = a[(r, c)];
                for k in 0..m {
                    a[(r, k)] -= f * a[(c, k)];
                    inv[(r, k)] -= f * inv[(c, k)];
                }
            }
        }
    }
    let r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let mut q = 0.0;
    for i in 0..m {
        for j in 0..m {
            q += r[i] * inv[(i, j)] * r[j];
        }
    }
    -(m as f64) * HALF_LN_2PI - 0.5 * det.ln() - 0.5 * q
}

#[test]
fn nll_closed_forms_and_oracle() {
    let p = GaussianPosterior::from_cholesky_parts(vec![0.3], &[1.0], &[]).unwrap();
    assert!((p.nll(&[0.3]) - 0.918_938_533_204_672_7).abs() < 1e-12);
    let p = GaussianPosterior::from_cholesky_parts(vec![1.0, 2.0, 3.0], &[1.0; 3], &[0.0; 3]).unwrap();
    assert!((p.nll(&[1.0, 2.0, 3.0]) - 3.0 * HALF_LN_2PI).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let m = rng.random_range(1..6);
        let mean: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let diag: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..2.0)).collect();
        let lower: Vec<f64> = (0..m * (m - 1) / 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = GaussianPosterior::from_cholesky_parts(mean.clone(), &diag, &lower).unwrap();
        let want = mvn_oracle(&mean, &p.covariance(), &x);
        assert!(((p.log_pdf(&x) - want) / want).abs() < 1e-10);
    }
    let p = GaussianPosterior::diagonal(vec![0.0, 1.0], &[4.0, 0.25]).unwrap();
    let want = mvn_oracle(&[0.0, 1.0], &p.covariance(), &[1.0, 0.5]);
    assert!((p.log_pdf(&[1.0, 0.5]) - want).abs() < 1e-12);
}

#[test]
fn sampling_moments() {
    let p = GaussianPosterior::from_cholesky_parts(vec![1.0, -1.0], &[0.8, 0.5], &[0.6]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let draws = p.sample(100_000, &mut rng);
    let (mean, cov) = crate::linalg::mean_and_covariance(&draws);
    let want = p.covariance();
    for i in 0..2 {
        assert!((mean[i] - p.mean()[i]).abs() < 0.01);
        for j in 0..2 {
            assert!((cov[(i, j)] - want[(i, j)]).abs() < 0.05 * want[(i, i)].max(want[(j, j)]), "{cov:?} vs {want:?}");
        }
    }
    assert_eq!(p.mean(), &[1.0, -1.0]);
}

/// Loss of `net` on a fixed batch as a function of the flat parameters.
fn loss_at<N: Network + Clone>(net: &N, flat: &[f64], x: &Tensor, t: &Tensor, mode: Mode) -> (f64, Vec<f64>) {
    let mut n = net.clone();
    let n_train = n.store().n_trainable();
    let mut full = n.store().flat();
    full[..n_train].copy_from_slice(flat);
    n.store_mut().set_flat(&full).unwrap();
    let mut g = Graph::new();
    let params = n.store().bind(&mut g);
    let xv = g.constant(x.clone());
    let heads = {
        let mut cx = Ctx::new(&mut g, &params, n.store(), mode);
        n.forward(&mut cx, xv).unwrap()
    };
    let loss = heads.nll(&mut g, t).unwrap();
    let value = g.value(loss).item();
    g.backward(loss).unwrap();
    let grad = params
        .iter()
        .zip(n.store().tensors())
        .flat_map(|(&p, tensor)| g.grad(p).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; tensor.numel()]))
        .collect();
    (value, grad)
}

fn network_gradcheck<N: Network + Clone>(net: &N, x: &Tensor, t: &Tensor, mode: Mode) -> f64 {
    let n_train = net.store().n_trainable();
    let p0: Vec<f64> = net.store().flat()[..n_train].to_vec();
    let (_, grad) = loss_at(net, &p0, x, t, mode);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..n_train {
        let mut plus = p0.clone();
        let mut minus = p0.clone();
        plus[i] += h;
        minus[i] -= h;
        let num = (loss_at(net, &plus, x, t, mode).0 - loss_at(net, &minus, x, t, mode).0) / (2.0 * h);
        worst = worst.max((num - grad[i]).abs());
        scale = scale.max(num.abs());
    }
    worst / scale
}

#[test]
fn full_network_gradcheck_marginal() {
    let net = mini_marginal();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, &[3, 1, 64], -1.5, 1.5);
    let t = random_tensor(&mut rng, &[3, 3], -1.0, 1.0);
    let err = network_gradcheck(&net, &x, &t, Mode::Train);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn full_network_gradcheck_copula() {
    for (family, k, shared) in [(CopulaFamily::Gaussian, 2, false), (CopulaFamily::StudentT, 2, true)] {
        let net = mini_copula(family, k, shared);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_tensor(&mut rng, &[4, 12, 3], 0.01, 0.99);
        let w = net.target_width();
        let t = random_tensor(&mut rng, &[4, w], -1.0, 1.0);
        for mode in [Mode::Train, Mode::Eval] {
            let err = network_gradcheck(&net, &x, &t, mode);
            assert!(err < 1e-5, "{family:?} {mode:?}: {err}");
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    let m = mini_marginal();
    let path = dir.path().join("m.ckpt");
    Checkpoint::from_network(&m, &[("seed".into(), "3".into())]).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.metadata("seed"), Some("3"));
    let m2 = loaded.to_marginal().unwrap();
    let x = random_tensor(&mut rng, &[2, 1, 64], -1.0, 1.0);
    assert_eq!(m.posteriors(&x).unwrap(), m2.posteriors(&x).unwrap());

    let mut c = mini_copula(CopulaFamily::StudentT, 2, false);
    // Non-default running statistics must survive the round trip.
    let n = c.store().flat_len();
    let mut flat = c.store().flat();
    flat[n - 1] = 2.5;
    c.store_mut().set_flat(&flat).unwrap();
    let path = dir.path().join("c.ckpt");
    Checkpoint::from_network(&c, &[]).save(&path).unwrap();
    let c2 = Checkpoint::load(&path).unwrap().to_copula().unwrap();
    let x = random_tensor(&mut rng, &[2, 12, 3], 0.01, 0.99);
    assert_eq!(c.posteriors(&x).unwrap(), c2.posteriors(&x).unwrap());
    assert!(Checkpoint::load(&path).unwrap().to_marginal().is_err());
}

#[test]
fn checkpoint_errors() {
    let m = mini_marginal();
    let ck = Checkpoint::from_network(&m, &[]);
    let mut bytes = ck.to_bytes().unwrap();
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);

    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
    assert!(err.contains("checksum"), "{err}");

    let mut other = ck.clone();
    other.version = 99;
    let err = Checkpoint::from_bytes(&other.to_bytes().unwrap()).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");

    assert!(ck.expect("T", "64").is_ok());
    assert!(matches!(ck.expect("T", "200"), Err(crate::Error::Shape(_))));

    let mut wrong = ck.clone();
    wrong.descriptor.insert("T".into(), "128".into());
    assert!(wrong.to_marginal().is_err());
}

/// Random inputs with one fixed target.
struct ConstantTask {
    target: Vec<f64>,
}

impl BatchSource for ConstantTask {
    fn target_width(&self) -> usize {
        self.target.len()
    }

    fn generate(&self, n: usize, base_seed: u64, start: u64) -> crate::Result<(Tensor, Matrix)> {
        let mut x = Vec::with_capacity(n * 64);
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(start + i as u64));
            x.extend((0..64).map(|_| rng.random_range(-1.0..1.0)));
        }
        let t = (0..n).flat_map(|_| self.target.iter().copied()).collect();
        Ok((Tensor::new(vec![n, 1, 64], x)?, Matrix::from_vec(n, self.target.len(), t)?))
    }
}

#[test]
fn constant_target_is_learned() {
    let mut net = mini_marginal();
    let task = ConstantTask {
        target: vec![0.5, -1.0, 2.0],
    };
    let cfg = TrainConfig {
        lr: 1e-2,
        max_epochs: 60,
        patience: 60,
        n_per_epoch: 320,
        ..TrainConfig::default()
    };
    let report = train(&mut net, &task, &cfg).unwrap();
    assert!(report.best_val_loss < report.initial_val_loss);
    let (x, _) = task.generate(5, 777, 0).unwrap();
    for p in net.posteriors(&x).unwrap() {
        for (m, t) in p.mean().iter().zip(&task.target) {
            assert!((m - t).abs() < 1e-2, "{m} vs {t}");
        }
    }
}

#[test]
fn training_is_reproducible() {
    let task = ConstantTask { target: vec![0.1, 0.2, 0.3] };
    let cfg = TrainConfig {
        lr: 1e-3,
        max_epochs: 3,
        n_per_epoch: 200,
        seed: 42,
        ..TrainConfig::default()
    };
    let mut a = mini_marginal();
    let mut b = mini_marginal();
    let ra = train(&mut a, &task, &cfg).unwrap();
    let rb = train(&mut b, &task, &cfg).unwrap();
    assert_eq!(ra.history, rb.history);
    assert_eq!(a.store().flat(), b.store().flat());
    for mode in [crate::simgen::DataMode::Fixed, crate::simgen::DataMode::Fresh] {
        let mut c = mini_marginal();
        train(&mut c, &task, &TrainConfig { data_mode: mode, ..cfg.clone() }).unwrap();
    }
}

#[test]
fn restores_best_parameters() {
    let task = ConstantTask { target: vec![0.0, 0.0, 0.0] };
    let mut net = mini_marginal();
    let cfg = TrainConfig {
        lr: 0.05,
        max_epochs: 8,
        patience: 8,
        n_per_epoch: 200,
        ..TrainConfig::default()
    };
    let report = train(&mut net, &task, &cfg).unwrap();
    let (vx, vt) = task.generate(cfg.n_val(), cfg.seed ^ 0x5bd1_e995_0000_0000, 0).unwrap();
    let now = evaluate(&net, &vx, &vt).unwrap();
    assert_eq!(now, report.best_val_loss);
    let min = report
        .history
        .iter()
        .map(|r| r.val_loss)
        .fold(report.initial_val_loss, f64::min);
    assert_eq!(report.best_val_loss, min);
}

struct NanTask;

impl BatchSource for NanTask {
    fn target_width(&self) -> usize {
        3
    }

    fn generate(&self, n: usize, base_seed: u64, start: u64) -> crate::Result<(Tensor, Matrix)> {
        let (x, _) = ConstantTask { target: vec![0.0; 3] }.generate(n, base_seed, start)?;
        Ok((x, Matrix::from_vec(n, 3, vec![f64::NAN; n * 3])?))
    }
}

#[test]
fn non_finite_losses_abort() {
    let mut net = mini_marginal();
    let cfg = TrainConfig {
        n_per_epoch: 400,
        ..TrainConfig::default()
    };
    let err = train(&mut net, &NanTask, &cfg).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, crate::Error::Numerical(_)) && msg.contains("batch 5"), "{msg}");
}

#[test]
fn mismatched_source_is_rejected() {
    let mut net = mini_marginal();
    let task = ConstantTask { target: vec![0.0; 4] };
    assert!(matches!(train(&mut net, &task, &TrainConfig::default()), Err(crate::Error::Shape(_))));
}
