use super::{check_input_shape, Conv1d, Ctx, HeadOutputs, Mlp, Network, ParamStore, SCALE_FLOOR};
use crate::autodiff::{kernels::conv1d_out_len, Tensor, Var};
use crate::error::{Error, Result};
use crate::garch::InnovationKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Shape of the marginal network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarginalArch {
    pub n_obs: usize,
    pub kind: InnovationKind,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Hidden widths of each of the three heads.
    pub head_widths: Vec<usize>,
}

impl MarginalArch {
    /// Full-size network: conv 1→8→16→32, heads 512/256/128.
    pub fn full(kind: InnovationKind, n_obs: usize) -> Self {
        Self {
            n_obs,
            kind,
            channels: vec![8, 16, 32],
            kernel: 3,
            stride: 2,
            padding: 1,
            head_widths: vec![512, 256, 128],
        }
    }

    /// Reduced network for CPU-only experiments.
    pub fn desk(kind: InnovationKind, n_obs: usize) -> Self {
        Self {
            head_widths: vec![64, 32],
            ..Self::full(kind, n_obs)
        }
    }

    pub fn n_targets(&self) -> usize {
        self.kind.n_params()
    }

    /// Sequence lengths after each convolution.
    pub fn conv_lengths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut l = self.n_obs;
        for _ in &self.channels {
            l = conv1d_out_len(l, self.kernel, self.stride, self.padding).unwrap_or(0);
            out.push(l);
        }
        out
    }

    /// Width of the flattened backbone output.
    pub fn flat_len(&self) -> usize {
        self.channels.last().copied().unwrap_or(1) * self.conv_lengths().last().copied().unwrap_or(self.n_obs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs < 2 || self.channels.is_empty() || self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config(format!("invalid marginal architecture {self:?}")));
        }
        if self.conv_lengths().contains(&0) {
            return Err(Error::Config(format!("series length {} too short for the convolution stack", self.n_obs)));
        }
        Ok(())
    }
}

/// CNN mapping a series to a full-covariance Gaussian over the transformed
/// GARCH parameters.
#[derive(Debug, Clone)]
pub struct MarginalNet {
    arch: MarginalArch,
    store: ParamStore,
    convs: Vec<Conv1d>,
    mean_head: Mlp,
    diag_head: Mlp,
    lower_head: Mlp,
}

impl MarginalNet {
    pub fn new(arch: MarginalArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, &c) in arch.channels.iter().enumerate() {
            convs.push(Conv1d::new(&mut store, &format!("conv{i}"), c_in, c, arch.kernel, arch.stride, arch.padding, &mut rng));
            c_in = c;
        }
        let m = arch.n_targets();
        let flat = arch.flat_len();
        let mean_head = Mlp::new(&mut store, "mean", flat, &arch.head_widths, m, false, &mut rng);
        let diag_head = Mlp::new(&mut store, "diag", flat, &arch.head_widths, m, false, &mut rng);
        let lower_head = Mlp::new(&mut store, "lower", flat, &arch.head_widths, m * (m - 1) / 2, false, &mut rng);
        Ok(Self {
            arch,
            store,
            convs,
            mean_head,
            diag_head,
            lower_head,
        })
    }

    pub fn arch(&self) -> &MarginalArch {
        &self.arch
    }

    /// Posterior for a single series.
    pub fn posterior(&self, y: &[f64]) -> Result<super::GaussianPosterior> {
        if y.len() != self.arch.n_obs {
            return Err(Error::shape(format!("marginal network expects T = {}, got {}", self.arch.n_obs, y.len())));
        }
        let x = Tensor::new(vec![1, 1, y.len()], y.to_vec())?;
        Ok(self.posteriors(&x)?.remove(0))
    }

    pub fn from_descriptor(d: &std::collections::BTreeMap<String, String>) -> Result<Self> {
        use super::checkpoint::{get, get_list};
        let arch = MarginalArch {
            n_obs: get(d, "T")?,
            kind: get(d, "marginal_kind")?,
            channels: get_list(d, "channels")?,
            kernel: get(d, "kernel")?,
            stride: get(d, "stride")?,
            padding: get(d, "padding")?,
            head_widths: get_list(d, "head_widths")?,
        };
        Self::new(arch, 0)
    }
}

impl Network for MarginalNet {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn sample_shape(&self) -> Vec<usize> {
        vec![1, self.arch.n_obs]
    }

    fn target_width(&self) -> usize {
        self.arch.n_targets()
    }

    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<HeadOutputs> {
        check_input_shape(&self.sample_shape(), cx.g.shape(x))?;
        let b = cx.g.shape(x)[0];
        let mut h = x;
        for c in &self.convs {
            h = c.forward(cx, h)?;
            h = cx.g.relu(h)?;
        }
        let flat = cx.g.reshape(h, &[b, self.arch.flat_len()])?;
        let mean = self.mean_head.forward(cx, flat)?;
        let d = self.diag_head.forward(cx, flat)?;
        let d = cx.g.softplus(d)?;
        let diag = cx.g.add_scalar(d, SCALE_FLOOR)?;
        let lower = self.lower_head.forward(cx, flat)?;
        Ok(HeadOutputs::Cholesky { mean, diag, lower })
    }

    fn descriptor(&self) -> Vec<(String, String)> {
        let a = &self.arch;
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("net".into(), "marginal".into()),
            ("T".into(), a.n_obs.to_string()),
            ("marginal_kind".into(), a.kind.as_str().into()),
            ("channels".into(), list(&a.channels)),
            ("kernel".into(), a.kernel.to_string()),
            ("stride".into(), a.stride.to_string()),
            ("padding".into(), a.padding.to_string()),
            ("head_widths".into(), list(&a.head_widths)),
        ]
    }
}
