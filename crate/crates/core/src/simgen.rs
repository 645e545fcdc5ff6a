//! Training-set generation: batched `(θ, data)` pairs for the marginal and
//! copula networks, and full joint simulation of copula models with GARCH
//! marginals.
//!
//! Sample `i` of a batch is generated from its own generator seeded with
//! `base_seed + i`, so parallel and serial generation agree bit-for-bit.

use crate::autodiff::Tensor;
use crate::copula::{simulate_copula_data, CopulaData, CopulaFamily, CopulaParams};
use crate::error::{Error, Result};
use crate::garch::{self, GarchParams, Innovation, InnovationKind};
use crate::linalg::Matrix;
use crate::par;
use crate::priors::PriorSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

/// Generator for sample `index` under `base_seed`.
pub fn sample_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(index))
}

/// Simulated series with their transformed generating parameters.
#[derive(Debug, Clone)]
pub struct MarginalTrainingBatch {
    /// `B × m` transformed parameters.
    pub targets: Matrix,
    /// `[B, 1, T]` series.
    pub inputs: Tensor,
}

/// Simulated copula data with their generating parameters.
#[derive(Debug, Clone)]
pub struct CopulaTrainingBatch {
    /// `B × m_cop` targets in factor-major order (df last for the t family).
    pub targets: Matrix,
    /// `[B, T, D]` copula observations.
    pub inputs: Tensor,
}

/// Draws `n` i.i.d. innovations from the law implied by `p`.
pub fn draw_innovations<R: Rng + ?Sized>(p: &GarchParams, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    match p.nu_tilde {
        None => Ok((0..n).map(|_| rng.sample(StandardNormal)).collect()),
        Some(nu) => {
            let t = StudentT::new(nu).map_err(|e| Error::domain(format!("student-t({nu}): {e}")))?;
            Ok((0..n).map(|_| rng.sample(t)).collect())
        }
    }
}

fn marginal_sample(spec: &PriorSpec, n_obs: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.sample_marginal(&mut rng)?;
    let e = draw_innovations(&p, n_obs, &mut rng)?;
    let y = garch::simulate(&p, &e);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!("non-finite simulated series for {p:?}")));
    }
    Ok((p.to_unconstrained()?.to_vec(), y))
}

fn copula_sample(spec: &PriorSpec, family: CopulaFamily, n_obs: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.sample_copula(family, &mut rng)?;
    let u = simulate_copula_data(&p, n_obs, &mut rng)?;
    Ok((p.to_target(), u.into_matrix().into_vec()))
}

fn assemble(rows: Vec<Result<(Vec<f64>, Vec<f64>)>>, width: usize, input_shape: Vec<usize>) -> Result<(Matrix, Tensor)> {
    let b = rows.len();
    let mut targets = Vec::with_capacity(b * width);
    let mut inputs = Vec::with_capacity(input_shape.iter().product());
    for r in rows {
        let (t, x) = r?;
        targets.extend(t);
        inputs.extend(x);
    }
    Ok((Matrix::from_vec(b, width, targets)?, Tensor::new(input_shape, inputs)?))
}

/// `n` marginal samples with indices `start..start + n` under `base_seed`.
pub fn gen_marginal_batch_seeded(
    spec: &PriorSpec,
    n: usize,
    n_obs: usize,
    base_seed: u64,
    start: u64,
) -> Result<MarginalTrainingBatch> {
    let rows = par::map_indexed(n, |i| marginal_sample(spec, n_obs, base_seed.wrapping_add(start + i as u64)));
    let (targets, inputs) = assemble(rows, spec.marginal_kind.n_params(), vec![n, 1, n_obs])?;
    Ok(MarginalTrainingBatch { targets, inputs })
}

/// `B` marginal samples, seeded from one draw of `rng`.
pub fn gen_marginal_batch<R: Rng + ?Sized>(spec: &PriorSpec, b: usize, n_obs: usize, rng: &mut R) -> Result<MarginalTrainingBatch> {
    gen_marginal_batch_seeded(spec, b, n_obs, rng.random(), 0)
}

/// `n` copula samples with indices `start..start + n` under `base_seed`.
pub fn gen_copula_batch_seeded(
    spec: &PriorSpec,
    family: CopulaFamily,
    n: usize,
    n_obs: usize,
    base_seed: u64,
    start: u64,
) -> Result<CopulaTrainingBatch> {
    if spec.n_factors == 0 || spec.n_factors > spec.dim {
        return Err(Error::Config(format!("copula training needs 1 <= k <= D, got k = {}, D = {}", spec.n_factors, spec.dim)));
    }
    let width = CopulaParams::target_width(spec.dim, spec.n_factors, family);
    let rows = par::map_indexed(n, |i| copula_sample(spec, family, n_obs, base_seed.wrapping_add(start + i as u64)));
    let (targets, inputs) = assemble(rows, width, vec![n, n_obs, spec.dim])?;
    Ok(CopulaTrainingBatch { targets, inputs })
}

/// `B` copula samples for the spec's `D` and `k`, seeded from one draw of `rng`.
pub fn gen_copula_batch<R: Rng + ?Sized>(
    spec: &PriorSpec,
    b: usize,
    n_obs: usize,
    family: CopulaFamily,
    rng: &mut R,
) -> Result<CopulaTrainingBatch> {
    gen_copula_batch_seeded(spec, family, b, n_obs, rng.random(), 0)
}

/// A simulated multivariate dataset with its ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub marginals: Vec<GarchParams>,
    pub copula: CopulaParams,
}

#[derive(Debug, Clone)]
pub struct JointSimulation {
    /// `T × D` returns.
    pub data: Matrix,
    /// The copula draw that generated the returns.
    pub u: CopulaData,
    pub truth: GroundTruth,
}

/// Simulates `T` rows from the copula model with GARCH marginals: copula
/// draw, innovation quantile transform, then the variance recursion.
pub fn simulate_joint<R: Rng + ?Sized>(truth: &GroundTruth, n_obs: usize, rng: &mut R) -> Result<JointSimulation> {
    let dim = truth.copula.loadings.dim();
    if truth.marginals.len() != dim {
        return Err(Error::shape(format!("{} marginals for a {dim}-dimensional copula", truth.marginals.len())));
    }
    for p in &truth.marginals {
        p.validate()?;
    }
    let u = simulate_copula_data(&truth.copula, n_obs, rng)?;
    let mut data = Matrix::zeros(n_obs, dim);
    for (d, p) in truth.marginals.iter().enumerate() {
        let innov = Innovation::for_params(p)?;
        let e = u.matrix().column(d).into_iter().map(|v| innov.quantile(v)).collect::<Result<Vec<_>>>()?;
        for (t, y) in garch::simulate(p, &e).into_iter().enumerate() {
            data[(t, d)] = y;
        }
    }
    Ok(JointSimulation {
        data,
        u,
        truth: truth.clone(),
    })
}

/// Draws the ground truth from `spec` and simulates from it. `spec.n_factors
/// = 0` gives independent marginals.
pub fn simulate_joint_from_prior<R: Rng + ?Sized>(
    spec: &PriorSpec,
    family: CopulaFamily,
    n_obs: usize,
    rng: &mut R,
) -> Result<JointSimulation> {
    let marginals = (0..spec.dim).map(|_| spec.sample_marginal(rng)).collect::<Result<Vec<_>>>()?;
    let copula = spec.sample_copula(family, rng)?;
    simulate_joint(&GroundTruth { marginals, copula }, n_obs, rng)
}

/// Whether training data are regenerated every epoch or fixed up front.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataMode {
    Fresh,
    Fixed,
}

/// Which network a [`Simulator`] feeds.
#[derive(Debug, Clone)]
pub enum Simulator {
    Marginal { spec: PriorSpec, n_obs: usize },
    Copula { spec: PriorSpec, family: CopulaFamily, n_obs: usize },
}

impl Simulator {
    pub fn target_width(&self) -> usize {
        match self {
            Simulator::Marginal { spec, .. } => spec.marginal_kind.n_params(),
            Simulator::Copula { spec, family, .. } => CopulaParams::target_width(spec.dim, spec.n_factors, *family),
        }
    }

    /// Samples `start..start + n` as `(inputs, targets)`.
    pub fn generate(&self, n: usize, base_seed: u64, start: u64) -> Result<(Tensor, Matrix)> {
        match self {
            Simulator::Marginal { spec, n_obs } => {
                let b = gen_marginal_batch_seeded(spec, n, *n_obs, base_seed, start)?;
                Ok((b.inputs, b.targets))
            }
            Simulator::Copula { spec, family, n_obs } => {
                let b = gen_copula_batch_seeded(spec, *family, n, *n_obs, base_seed, start)?;
                Ok((b.inputs, b.targets))
            }
        }
    }

    pub fn innovation_kind(&self) -> Option<InnovationKind> {
        match self {
            Simulator::Marginal { spec, .. } => Some(spec.marginal_kind),
            Simulator::Copula { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::{loadings_to_correlation, FactorLoadings};
    use crate::priors::default_priors;
    use crate::special::norm_quantile;
    use crate::stats::{ks_critical_1pct, ks_uniform, pearson};

    #[test]
    fn marginal_batch_shapes() {
        let spec = default_priors(InnovationKind::Gaussian, 3, 1);
        let b = gen_marginal_batch_seeded(&spec, 32, 1000, 1, 0).unwrap();
        assert_eq!((b.targets.rows(), b.targets.cols()), (32, 3));
        assert_eq!(b.inputs.shape(), &[32, 1, 1000]);
        let spec = default_priors(InnovationKind::StudentT, 3, 1);
        let b = gen_marginal_batch_seeded(&spec, 4, 50, 1, 0).unwrap();
        assert_eq!(b.targets.cols(), 4);
    }

    #[test]
    fn copula_batch_widths() {
        for (k, family, want) in [
            (1, CopulaFamily::Gaussian, 20),
            (4, CopulaFamily::Gaussian, 74),
            (4, CopulaFamily::StudentT, 75),
        ] {
            let spec = default_priors(InnovationKind::Gaussian, 20, k);
            let b = gen_copula_batch_seeded(&spec, family, 2, 30, 5, 0).unwrap();
            assert_eq!(b.targets.cols(), want);
            assert_eq!(b.inputs.shape(), &[2, 30, 20]);
        }
    }

    #[test]
    fn batches_are_reproducible_and_index_seeded() {
        let spec = default_priors(InnovationKind::Gaussian, 3, 2);
        let a = gen_copula_batch_seeded(&spec, CopulaFamily::Gaussian, 8, 40, 11, 0).unwrap();
        let b = gen_copula_batch_seeded(&spec, CopulaFamily::Gaussian, 8, 40, 11, 0).unwrap();
        assert_eq!(a.inputs.data(), b.inputs.data());
        // Samples 4..8 generated on their own match the tail of the full batch.
        let tail = gen_copula_batch_seeded(&spec, CopulaFamily::Gaussian, 4, 40, 11, 4).unwrap();
        assert_eq!(&a.inputs.data()[4 * 120..], tail.inputs.data());
        assert_eq!(a.targets.row(5), tail.targets.row(1));
        let m1 = gen_marginal_batch_seeded(&spec, 6, 30, 3, 0).unwrap();
        let m2 = gen_marginal_batch_seeded(&spec, 6, 30, 3, 0).unwrap();
        assert_eq!(m1.inputs.data(), m2.inputs.data());
        assert_eq!(m1.targets, m2.targets);
    }

    #[test]
    fn serial_and_parallel_agree() {
        let spec = default_priors(InnovationKind::StudentT, 3, 1);
        let serial = par::with_threads(1, || gen_marginal_batch_seeded(&spec, 16, 64, 9, 0).unwrap());
        let parallel = par::with_threads(4, || gen_marginal_batch_seeded(&spec, 16, 64, 9, 0).unwrap());
        assert_eq!(serial.inputs.data(), parallel.inputs.data());
    }

    #[test]
    fn copula_training_rejects_zero_factors() {
        let spec = default_priors(InnovationKind::Gaussian, 3, 0);
        assert!(gen_copula_batch_seeded(&spec, CopulaFamily::Gaussian, 2, 10, 0, 0).is_err());
    }

    #[test]
    fn pit_round_trip() {
        let spec = default_priors(InnovationKind::StudentT, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sim = simulate_joint_from_prior(&spec, CopulaFamily::StudentT, 300, &mut rng).unwrap();
        for (d, p) in sim.truth.marginals.iter().enumerate() {
            let u = garch::marginal_cdf(p, &sim.data.column(d)).unwrap();
            for (a, b) in u.iter().zip(sim.u.matrix().column(d)) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn independence_gives_uncorrelated_columns() {
        let mut spec = default_priors(InnovationKind::Gaussian, 3, 0);
        spec.n_factors = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 2000;
        let sim = simulate_joint_from_prior(&spec, CopulaFamily::Gaussian, n, &mut rng).unwrap();
        let u = sim.u.matrix();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let r = pearson(&u.column(i), &u.column(j));
            assert!(r.abs() < 3.0 / (n as f64).sqrt(), "{i},{j}: {r}");
        }
        for d in 0..3 {
            let pit = garch::marginal_cdf(&sim.truth.marginals[d], &sim.data.column(d)).unwrap();
            assert!(ks_uniform(&pit) < ks_critical_1pct(n));
        }
    }

    #[test]
    fn strong_dependence_latent_correlation() {
        // G = (3, 3)ᵀ gives ρ = 9 / 10 = 0.9.
        let g = FactorLoadings::new(2, 1, vec![3f64.ln(), 3.0]).unwrap();
        let r = loadings_to_correlation(&g).matrix()[(0, 1)];
        let p = GarchParams::gaussian(0.1, 0.8, 0.05).unwrap();
        let truth = GroundTruth {
            marginals: vec![p; 2],
            copula: CopulaParams::gaussian(g),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sim = simulate_joint(&truth, 4000, &mut rng).unwrap();
        let z: Vec<Vec<f64>> = (0..2)
            .map(|d| sim.u.matrix().column(d).iter().map(|&u| norm_quantile(u).unwrap()).collect())
            .collect();
        let emp = pearson(&z[0], &z[1]);
        assert!((r - 0.9).abs() < 1e-12, "{r}");
        assert!((emp - 0.9).abs() < 0.02, "{emp}");
    }
}
