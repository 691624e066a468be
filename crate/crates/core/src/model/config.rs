use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the historical enhanced paths enter the prediction head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolPe {
    /// All `t` blocks side by side (`t·k1·d` inputs).
    Concat,
    /// Blocks summed into one (`k1·d` inputs).
    Sum,
}

/// Embedding table sizes, each including the padding row 0. Ids beyond a
/// table are folded back into it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Vocab {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub positions: usize,
}

impl Default for Vocab {
    fn default() -> Self {
        Self {
            users: 10_001,
            items: 10_001,
            categories: 1_001,
            positions: 257,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    /// Behavior path length.
    pub l: usize,
    /// Historical paths per example.
    pub t: usize,
    /// Behaviors kept per path by the second-level activation.
    pub k1: usize,
    /// Historical paths kept by path matching.
    pub k2: usize,
    /// Contrastive temperature.
    pub tau: f64,
    /// Weight of the contrastive loss.
    pub lambda: f64,
    /// Fraction of path positions masked per augmented view.
    pub mask_ratio: f64,
    pub use_pem: bool,
    pub use_pmm: bool,
    pub use_pam: bool,
    pub pool_pe: PoolPe,
    pub act_hidden: Vec<usize>,
    pub pem_hidden: Vec<usize>,
    pub gate_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    /// Cap on augmented paths per batch (the in-batch negatives).
    pub pam_max_paths: usize,
    pub init_std: f64,
    pub vocab: Vocab,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 18,
            l: 8,
            t: 20,
            k1: 4,
            k2: 5,
            tau: 0.1,
            lambda: 0.1,
            mask_ratio: 0.25,
            use_pem: true,
            use_pmm: true,
            use_pam: true,
            pool_pe: PoolPe::Concat,
            act_hidden: vec![36],
            pem_hidden: vec![],
            gate_hidden: vec![36],
            head_hidden: vec![200, 80],
            pam_max_paths: 256,
            init_std: crate::ndiff::INIT_STD,
            vocab: Vocab::default(),
        }
    }
}

impl ModelConfig {
    /// The small model used for gradient checking.
    pub fn miniature() -> Self {
        Self {
            d: 4,
            l: 3,
            t: 4,
            k1: 2,
            k2: 2,
            act_hidden: vec![8],
            gate_hidden: vec![8],
            head_hidden: vec![16, 8],
            vocab: Vocab {
                users: 6,
                items: 12,
                categories: 5,
                positions: 16,
            },
            ..Self::default()
        }
    }

    /// `ceil(l / 2)`, the default number of behaviors kept per path.
    pub fn default_k1(l: usize) -> usize {
        l.div_ceil(2)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("d", self.d), ("l", self.l), ("t", self.t), ("k1", self.k1), ("k2", self.k2)];
        for (name, v) in positive {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.k1 > self.l {
            return Err(Error::Config(format!("k1 = {} exceeds l = {}", self.k1, self.l)));
        }
        if self.k2 > self.t {
            return Err(Error::Config(format!("k2 = {} exceeds t = {}", self.k2, self.t)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Config("mask_ratio must be in [0, 1)".into()));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be non-negative".into()));
        }
        let hidden = [&self.act_hidden, &self.pem_hidden, &self.gate_hidden, &self.head_hidden];
        if hidden.iter().any(|h| h.contains(&0)) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        let v = &self.vocab;
        if [v.users, v.items, v.categories, v.positions].iter().any(|&n| n < 2) {
            return Err(Error::Config("every vocabulary needs a pad row and one real row".into()));
        }
        Ok(())
    }

    /// Width of the enhanced path embedding.
    pub fn path_dim(&self) -> usize {
        self.k1 * self.d
    }

    pub fn head_input_dim(&self) -> usize {
        let pe = match self.pool_pe {
            PoolPe::Concat => self.t * self.path_dim(),
            PoolPe::Sum => self.path_dim(),
        };
        pe + self.k2 * self.path_dim() + self.k2 * self.d + 2 * self.d
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        let (pem, pmm, pam) = variant.flags();
        self.use_pem = pem;
        self.use_pmm = pmm;
        self.use_pam = pam;
        self
    }

    pub fn variant(&self) -> Option<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.flags() == (self.use_pem, self.use_pmm, self.use_pam))
    }
}

/// The full model and its three single-module ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoPem,
    NoPmm,
    NoPam,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoPem, Variant::NoPmm, Variant::NoPam];

    /// `(use_pem, use_pmm, use_pam)`.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Variant::Full => (true, true, true),
            Variant::NoPem => (false, true, true),
            Variant::NoPmm => (true, false, true),
            Variant::NoPam => (true, true, false),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPem => "no_pem",
            Variant::NoPmm => "no_pmm",
            Variant::NoPam => "no_pam",
        }
    }
}
