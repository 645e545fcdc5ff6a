use super::{check_input_shape, Ctx, HeadOutputs, Linear, Mlp, Network, ParamStore, SCALE_FLOOR};
use crate::autodiff::{Tensor, Var};
use crate::copula::{CopulaData, CopulaFamily, CopulaParams};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Shape of the copula network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CopulaArch {
    pub n_obs: usize,
    pub dim: usize,
    pub n_factors: usize,
    pub family: CopulaFamily,
    /// Per-row encoder widths.
    pub encoder: Vec<usize>,
    /// Optional linear layer after pooling.
    pub post_pool: Option<usize>,
    /// Hidden widths of every head.
    pub head_widths: Vec<usize>,
    pub batch_norm: bool,
    /// Share hidden head layers across factors; only the output layers differ.
    pub shared_heads: bool,
}

impl CopulaArch {
    /// Full-size network. Four or more factors add a pooled 1024-wide layer
    /// and wider heads shared across factors.
    pub fn full(dim: usize, n_factors: usize, family: CopulaFamily, n_obs: usize) -> Self {
        let wide = n_factors >= 4;
        Self {
            n_obs,
            dim,
            n_factors,
            family,
            encoder: vec![64, 128, 256, 512],
            post_pool: wide.then_some(1024),
            head_widths: if wide { vec![1536, 768, 512, 256] } else { vec![1024, 512, 256, 128] },
            batch_norm: true,
            shared_heads: wide,
        }
    }

    /// Reduced network for CPU-only experiments.
    pub fn desk(dim: usize, n_factors: usize, family: CopulaFamily, n_obs: usize) -> Self {
        Self {
            n_obs,
            dim,
            n_factors,
            family,
            encoder: vec![32, 64, 64],
            post_pool: None,
            head_widths: vec![64, 32],
            batch_norm: true,
            shared_heads: false,
        }
    }

    /// Output width of factor `l` (zero-based): `D - l`, plus the df unit on
    /// the first factor for the t family.
    pub fn factor_width(&self, l: usize) -> usize {
        self.dim - l + usize::from(l == 0 && self.family == CopulaFamily::StudentT)
    }

    pub fn n_targets(&self) -> usize {
        CopulaParams::target_width(self.dim, self.n_factors, self.family)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.n_factors == 0 || self.n_factors > self.dim || self.n_obs == 0 || self.encoder.is_empty() {
            return Err(Error::Config(format!(
                "invalid copula architecture: D = {}, k = {}, T = {}",
                self.dim, self.n_factors, self.n_obs
            )));
        }
        if self.shared_heads && self.head_widths.is_empty() {
            return Err(Error::Config("shared heads need at least one hidden layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Heads {
    /// One `(mean, variance)` MLP pair per factor.
    PerFactor(Vec<(Mlp, Mlp)>),
    /// Shared hidden trunk per head type with per-factor output layers.
    Shared {
        mean_trunk: Mlp,
        var_trunk: Mlp,
        outputs: Vec<(Linear, Linear)>,
    },
}

/// Deep Sets network mapping copula data to a mean-field Gaussian over the
/// loadings (and the t-copula degrees of freedom).
#[derive(Debug, Clone)]
pub struct CopulaNet {
    arch: CopulaArch,
    store: ParamStore,
    encoder: Vec<Linear>,
    post_pool: Option<Linear>,
    heads: Heads,
}

impl CopulaNet {
    pub fn new(arch: CopulaArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut encoder = Vec::new();
        let mut width = arch.dim;
        for (i, &w) in arch.encoder.iter().enumerate() {
            encoder.push(Linear::new(&mut store, &format!("psi.{i}"), width, w, &mut rng));
            width = w;
        }
        let post_pool = arch.post_pool.map(|w| {
            let l = Linear::new(&mut store, "pool", width, w, &mut rng);
            width = w;
            l
        });
        let heads = if arch.shared_heads {
            let last = *arch.head_widths.last().expect("validated non-empty");
            let mean_trunk = Mlp::trunk(&mut store, "phi.mean", width, &arch.head_widths, arch.batch_norm, &mut rng);
            let var_trunk = Mlp::trunk(&mut store, "phi.var", width, &arch.head_widths, arch.batch_norm, &mut rng);
            let outputs = (0..arch.n_factors)
                .map(|l| {
                    (
                        Linear::new(&mut store, &format!("phi.mean.f{l}"), last, arch.factor_width(l), &mut rng),
                        Linear::new(&mut store, &format!("phi.var.f{l}"), last, arch.factor_width(l), &mut rng),
                    )
                })
                .collect();
            Heads::Shared {
                mean_trunk,
                var_trunk,
                outputs,
            }
        } else {
            Heads::PerFactor(
                (0..arch.n_factors)
                    .map(|l| {
                        let w = arch.factor_width(l);
                        (
                            Mlp::new(&mut store, &format!("phi{l}.mean"), width, &arch.head_widths, w, arch.batch_norm, &mut rng),
                            Mlp::new(&mut store, &format!("phi{l}.var"), width, &arch.head_widths, w, arch.batch_norm, &mut rng),
                        )
                    })
                    .collect(),
            )
        };
        Ok(Self {
            arch,
            store,
            encoder,
            post_pool,
            heads,
        })
    }

    pub fn arch(&self) -> &CopulaArch {
        &self.arch
    }

    /// Posterior for one copula dataset.
    pub fn posterior(&self, u: &CopulaData) -> Result<super::GaussianPosterior> {
        if u.n_obs() != self.arch.n_obs || u.dim() != self.arch.dim {
            return Err(Error::shape(format!(
                "copula network expects {}x{} data, got {}x{}",
                self.arch.n_obs,
                self.arch.dim,
                u.n_obs(),
                u.dim()
            )));
        }
        let x = Tensor::new(vec![1, u.n_obs(), u.dim()], u.matrix().as_slice().to_vec())?;
        Ok(self.posteriors(&x)?.remove(0))
    }

    /// Pooled summary `[B, width]` of the per-row encoder.
    fn summary(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = x;
        for l in &self.encoder {
            h = l.forward(cx, h)?;
            h = cx.g.relu(h)?;
        }
        let mut s = cx.g.mean_axis(h, 1)?;
        if let Some(p) = &self.post_pool {
            s = p.forward(cx, s)?;
            s = cx.g.relu(s)?;
        }
        Ok(s)
    }

    pub fn from_descriptor(d: &std::collections::BTreeMap<String, String>) -> Result<Self> {
        use super::checkpoint::{get, get_list};
        let post_pool: usize = get(d, "post_pool")?;
        let arch = CopulaArch {
            n_obs: get(d, "T")?,
            dim: get(d, "D")?,
            n_factors: get(d, "k")?,
            family: get(d, "family")?,
            encoder: get_list(d, "encoder")?,
            post_pool: (post_pool > 0).then_some(post_pool),
            head_widths: get_list(d, "head_widths")?,
            batch_norm: get(d, "batch_norm")?,
            shared_heads: get(d, "shared_heads")?,
        };
        Self::new(arch, 0)
    }
}

impl Network for CopulaNet {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn sample_shape(&self) -> Vec<usize> {
        vec![self.arch.n_obs, self.arch.dim]
    }

    fn target_width(&self) -> usize {
        self.arch.n_targets()
    }

    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<HeadOutputs> {
        check_input_shape(&self.sample_shape(), cx.g.shape(x))?;
        let s = self.summary(cx, x)?;
        let mut means = Vec::with_capacity(self.arch.n_factors);
        let mut vars = Vec::with_capacity(self.arch.n_factors);
        match &self.heads {
            Heads::PerFactor(pairs) => {
                for (m, v) in pairs {
                    means.push(m.forward(cx, s)?);
                    vars.push(v.forward(cx, s)?);
                }
            }
            Heads::Shared {
                mean_trunk,
                var_trunk,
                outputs,
            } => {
                let hm = mean_trunk.forward(cx, s)?;
                let hv = var_trunk.forward(cx, s)?;
                for (m, v) in outputs {
                    means.push(m.forward(cx, hm)?);
                    vars.push(v.forward(cx, hv)?);
                }
            }
        }
        for v in &mut vars {
            let sp = cx.g.softplus(*v)?;
            *v = cx.g.add_scalar(sp, SCALE_FLOOR)?;
        }
        let mean = self.assemble(cx, &means)?;
        let var = self.assemble(cx, &vars)?;
        Ok(HeadOutputs::Diagonal { mean, var })
    }

    fn descriptor(&self) -> Vec<(String, String)> {
        let a = &self.arch;
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("net".into(), "copula".into()),
            ("T".into(), a.n_obs.to_string()),
            ("D".into(), a.dim.to_string()),
            ("k".into(), a.n_factors.to_string()),
            ("family".into(), a.family.as_str().into()),
            ("encoder".into(), list(&a.encoder)),
            ("post_pool".into(), a.post_pool.unwrap_or(0).to_string()),
            ("head_widths".into(), list(&a.head_widths)),
            ("batch_norm".into(), a.batch_norm.to_string()),
            ("shared_heads".into(), a.shared_heads.to_string()),
        ]
    }
}

impl CopulaNet {
    /// Concatenates per-factor outputs into target order: loading blocks
    /// first, the df unit (carried by the first factor) last.
    fn assemble(&self, cx: &mut Ctx, parts: &[Var]) -> Result<Var> {
        if self.arch.family == CopulaFamily::Gaussian {
            return if parts.len() == 1 { Ok(parts[0]) } else { cx.g.concat_last(parts) };
        }
        let d = self.arch.dim;
        let first = cx.g.slice_last(parts[0], 0, d)?;
        let df = cx.g.slice_last(parts[0], d, d + 1)?;
        let mut all = vec![first];
        all.extend_from_slice(&parts[1..]);
        all.push(df);
        cx.g.concat_last(&all)
    }
}
