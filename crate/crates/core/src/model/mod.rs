//! TFNet and its baselines.
//!
//! All four predictors share one parameter container and one output layer:
//!
//! ```text
//! logit = Σ_fields wide[id_f] + w_out · features + b_out
//! ```
//!
//! * `Lr`: no dense features.
//! * `Fm`: adds `Σ_{i<j} <v_i, v_j>` over the field embeddings.
//! * `TfnetMinus`: `features = s_h`, the control-gated tensor interactions.
//! * `Tfnet`: `features = concat(H_xv(x_v), H_sh(s_h))`, where `x_v` is the
//!   concatenated embeddings and both towers are ReLU MLPs.

mod forward;
mod snapshot;

pub use forward::{
    batch_loss, fm_pairwise, forward, loss_and_grad, predict_batch, ForwardTape, Gradients, MlpTape,
};
pub use snapshot::{load_snapshot, load_snapshot_expecting, save_snapshot, snapshot_bytes, SNAPSHOT_MAGIC};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::FieldSchema;
use crate::error::{Error, Result};
use crate::interaction::InteractionParams;
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Tfnet,
    TfnetMinus,
    Fm,
    Lr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Tfnet, ModelKind::TfnetMinus, ModelKind::Fm, ModelKind::Lr];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tfnet => "tfnet",
            ModelKind::TfnetMinus => "tfnet-minus",
            ModelKind::Fm => "fm",
            ModelKind::Lr => "lr",
        }
    }

    fn has_embeddings(self) -> bool {
        self != ModelKind::Lr
    }

    fn has_interaction(self) -> bool {
        matches!(self, ModelKind::Tfnet | ModelKind::TfnetMinus)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "tfnet" => Ok(ModelKind::Tfnet),
            "tfnet-minus" | "tfnet--" => Ok(ModelKind::TfnetMinus),
            "fm" => Ok(ModelKind::Fm),
            "lr" => Ok(ModelKind::Lr),
            other => Err(Error::InvalidArgument(format!("unknown model `{other}`"))),
        }
    }
}

fn default_d() -> usize {
    8
}

fn default_m() -> usize {
    2
}

fn default_tower() -> Vec<usize> {
    vec![32, 32]
}

/// Predictor kind plus its shape hyperparameters. `d` doubles as the FM
/// rank; `m` and the towers only matter for the TFNet variants, and
/// `TfnetMinus` ignores the towers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub kind: ModelKind,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_tower")]
    pub tower_sh: Vec<usize>,
    #[serde(default = "default_tower")]
    pub tower_xv: Vec<usize>,
}

impl Arch {
    pub fn new(kind: ModelKind, d: usize, m: usize, tower_sh: Vec<usize>, tower_xv: Vec<usize>) -> Self {
        Arch {
            kind,
            d,
            m,
            tower_sh,
            tower_xv,
        }
    }

    /// Strips fields the kind does not use so equal models compare equal.
    pub fn normalized(&self) -> Arch {
        let mut a = self.clone();
        if !a.kind.has_embeddings() {
            a.d = 0;
        }
        if !a.kind.has_interaction() {
            a.m = 0;
        }
        if a.kind != ModelKind::Tfnet {
            a.tower_sh.clear();
            a.tower_xv.clear();
        }
        a
    }

    pub fn validate(&self, n_fields: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.kind.has_embeddings() && self.d == 0 {
            return bad(format!("{}: embedding dimension d must be positive", self.kind));
        }
        if self.kind.has_interaction() {
            if self.m == 0 {
                return bad(format!("{}: slice count m must be positive", self.kind));
            }
            if n_fields < 2 {
                return Err(Error::TooFewFields(n_fields));
            }
        }
        if self.kind == ModelKind::Tfnet && self.tower_sh.iter().chain(&self.tower_xv).any(|&w| w == 0) {
            return bad("tower widths must be positive".into());
        }
        Ok(())
    }

    /// Length of the dense feature vector fed to `w_out`.
    pub fn feature_len(&self, n_fields: usize) -> usize {
        match self.kind {
            ModelKind::Tfnet => {
                self.tower_xv.last().copied().unwrap_or(n_fields * self.d)
                    + self.tower_sh.last().copied().unwrap_or(self.m)
            }
            ModelKind::TfnetMinus => self.m,
            ModelKind::Fm | ModelKind::Lr => 0,
        }
    }
}

/// Fully connected layer `y = W x + b`, `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Mat,
    pub b: Vec<f64>,
}

/// Stack of ReLU layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn zeros(input: usize, widths: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for &w in widths {
            layers.push(Dense {
                w: Mat::zeros(w, fan_in),
                b: vec![0.0; w],
            });
            fan_in = w;
        }
        Mlp { layers }
    }

    pub fn output_len(&self, input: usize) -> usize {
        self.layers.last().map_or(input, |l| l.b.len())
    }
}

/// Dense (non-table) parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub interaction: InteractionParams,
    pub tower_sh: Mlp,
    pub tower_xv: Mlp,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl DenseParams {
    fn zeros(arch: &Arch, n_fields: usize) -> Self {
        let interaction = if arch.kind.has_interaction() {
            InteractionParams::zeros(n_fields, arch.d, arch.m)
        } else {
            InteractionParams::zeros(0, 0, 0)
        };
        let (tower_sh, tower_xv) = if arch.kind == ModelKind::Tfnet {
            (Mlp::zeros(arch.m, &arch.tower_sh), Mlp::zeros(n_fields * arch.d, &arch.tower_xv))
        } else {
            (Mlp::default(), Mlp::default())
        };
        DenseParams {
            interaction,
            tower_sh,
            tower_xv,
            w_out: vec![0.0; arch.feature_len(n_fields)],
            b_out: 0.0,
        }
    }

    /// Named parameter groups in declared (snapshot) order.
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("t2".into(), self.interaction.t2.as_slice()),
            ("t3".into(), self.interaction.t3.as_slice()),
            ("gate".into(), &self.interaction.gate),
        ];
        for (tower, mlp) in [("tower_sh", &self.tower_sh), ("tower_xv", &self.tower_xv)] {
            for (i, l) in mlp.layers.iter().enumerate() {
                out.push((format!("{tower}.{i}.w"), l.w.as_slice()));
                out.push((format!("{tower}.{i}.b"), &l.b));
            }
        }
        out.push(("w_out".into(), &self.w_out));
        out.push(("b_out".into(), std::slice::from_ref(&self.b_out)));
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("t2".into(), self.interaction.t2.as_mut_slice()),
            ("t3".into(), self.interaction.t3.as_mut_slice()),
            ("gate".into(), &mut self.interaction.gate),
        ];
        for (tower, mlp) in [("tower_sh", &mut self.tower_sh), ("tower_xv", &mut self.tower_xv)] {
            for (i, l) in mlp.layers.iter_mut().enumerate() {
                out.push((format!("{tower}.{i}.w"), l.w.as_mut_slice()));
                out.push((format!("{tower}.{i}.b"), &mut l.b));
            }
        }
        out.push(("w_out".into(), &mut self.w_out));
        out.push(("b_out".into(), std::slice::from_mut(&mut self.b_out)));
        out
    }

    pub(crate) fn add_assign(&mut self, other: &DenseParams) {
        for ((_, a), (_, b)) in self.groups_mut().into_iter().zip(other.groups()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Every learnable of one predictor, together with the schema it encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub schema: FieldSchema,
    pub arch: Arch,
    /// One `d`-vector per hashed feature id (`vocab x d`; empty for LR).
    pub embed: Mat,
    /// Per-feature wide weights realizing `w^T c` over the one-hot input.
    pub wide: Vec<f64>,
    pub dense: DenseParams,
}

impl ModelParams {
    pub fn zeros(schema: &FieldSchema, arch: &Arch) -> Result<Self> {
        let arch = arch.normalized();
        arch.validate(schema.n_fields())?;
        Ok(ModelParams {
            schema: schema.clone(),
            embed: Mat::zeros(schema.vocab(), arch.d),
            wide: vec![0.0; schema.vocab()],
            dense: DenseParams::zeros(&arch, schema.n_fields()),
            arch,
        })
    }

    /// Embeddings `N(0, 0.01^2)`, operating tensors `N(0, (1/d)^2)`, control
    /// gate ones, tower and output weights Glorot-uniform, wide weights and
    /// biases zero.
    pub fn init<R: Rng>(schema: &FieldSchema, arch: &Arch, rng: &mut R) -> Result<Self> {
        let mut p = ModelParams::zeros(schema, arch)?;
        let n = schema.n_fields();
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        for x in p.embed.as_mut_slice() {
            *x = normal.sample(rng);
        }
        if p.arch.kind.has_interaction() {
            p.dense.interaction = InteractionParams::init(n, p.arch.d, p.arch.m, rng);
        }
        for mlp in [&mut p.dense.tower_sh, &mut p.dense.tower_xv] {
            for layer in &mut mlp.layers {
                let (fan_in, fan_out) = (layer.w.cols(), layer.w.rows());
                glorot(layer.w.as_mut_slice(), fan_in, fan_out, rng);
            }
        }
        let fan_in = p.dense.w_out.len();
        glorot(&mut p.dense.w_out, fan_in, 1, rng);
        Ok(p)
    }

    pub fn kind(&self) -> ModelKind {
        self.arch.kind
    }

    pub fn n_fields(&self) -> usize {
        self.schema.n_fields()
    }

    /// Named parameter groups in declared (snapshot) order.
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> =
            vec![("embed".into(), self.embed.as_slice()), ("wide".into(), &self.wide)];
        out.extend(self.dense.groups());
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("embed".into(), self.embed.as_mut_slice()),
            ("wide".into(), &mut self.wide),
        ];
        out.extend(self.dense.groups_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    /// Fraction of control-gate weights below `1e-6` (0 when there is no gate).
    pub fn gate_sparsity(&self) -> f64 {
        let gate = &self.dense.interaction.gate;
        if gate.is_empty() {
            return 0.0;
        }
        gate.iter().filter(|&&g| g < 1e-6).count() as f64 / gate.len() as f64
    }
}

fn glorot<R: Rng>(w: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut R) {
    if w.is_empty() {
        return;
    }
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
    for x in w {
        *x = dist.sample(rng);
    }
}
