//! Beta-embedding reference model: embeddings, KL scoring, seeded
//! parameters and the operator templates the compiler expands.

mod io;
mod score;
mod special;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{Dim, FolKind, PrimKind};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::pattern::{Arg, PatternTemplate, TemplateLibrary, TemplateStep, WeightSpec};

pub use io::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use score::{mrr, score_and_rank, Scorer};
pub use special::{digamma, ln_gamma};

/// Lower bound on every Beta parameter.
pub const EPS_MIN: f64 = 1e-6;

/// Largest arity for which `and`/`or` templates are registered.
pub const MAX_JOIN_ARITY: usize = 4;

/// Independent Beta distributions, one `(α, β)` pair per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEmbedding {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BetaEmbedding {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.len() != beta.len() || alpha.is_empty() {
            return Err(Error::Shape {
                op: "beta_embedding".into(),
                detail: format!("{} alphas vs {} betas", alpha.len(), beta.len()),
            });
        }
        if let Some(v) = alpha.iter().chain(&beta).find(|v| !(v.is_finite() && **v >= EPS_MIN)) {
            return Err(Error::Domain(format!("beta parameter {v} outside [{EPS_MIN}, inf)")));
        }
        Ok(BetaEmbedding { alpha, beta })
    }

    /// Splits a flat `[α..., β...]` row without range checks.
    pub fn from_flat(row: &[f64]) -> Self {
        let d = row.len() / 2;
        BetaEmbedding {
            alpha: row[..d].to_vec(),
            beta: row[d..2 * d].to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.alpha.clone();
        v.extend_from_slice(&self.beta);
        v
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }
}

/// `ln B(α, β)`.
pub fn log_beta(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!("log_beta needs positive finite arguments, got ({a}, {b})")));
    }
    Ok(ln_beta(a, b))
}

#[inline]
pub(crate) fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Per-dimension closed-form `KL(Beta(ap, bp) || Beta(aq, bq))` from
/// precomputed `ln B` and digamma terms of `p`.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn kl_terms(ap: f64, bp: f64, lnb_p: f64, psi_a: f64, psi_b: f64, psi_ab: f64, aq: f64, bq: f64, lnb_q: f64) -> f64 {
    let kl = lnb_q - lnb_p + (ap - aq) * psi_a + (bp - bq) * psi_b + (aq - ap + bq - bp) * psi_ab;
    kl.max(0.0)
}

/// `KL(p || q)` summed over dimensions.
pub fn kl_beta(p: &BetaEmbedding, q: &BetaEmbedding) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Shape {
            op: "kl_beta".into(),
            detail: format!("dimension {} vs {}", p.dim(), q.dim()),
        });
    }
    let mut total = 0.0;
    for i in 0..p.dim() {
        let (ap, bp, aq, bq) = (p.alpha[i], p.beta[i], q.alpha[i], q.beta[i]);
        let lnb_p = log_beta(ap, bp)?;
        let lnb_q = log_beta(aq, bq)?;
        total += kl_terms(ap, bp, lnb_p, digamma(ap), digamma(bp), digamma(ap + bp), aq, bq, lnb_q);
    }
    Ok(total)
}

/// Per-relation projection MLP weights, each table relation-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

/// Shared intersection attention MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub d: usize,
    pub h: usize,
    pub seed: u64,
    pub num_entities: usize,
    pub num_relations: usize,
    /// `num_entities × 2d`, rows laid out `[α..., β...]`.
    pub entities: Vec<f64>,
    pub proj: ProjectionWeights,
    pub att: AttentionWeights,
}

/// Named weight tensor view.
pub struct WeightView<'a> {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
}

/// Seeded parameters: entity parameters uniform in `[0.05, 1]`, weights
/// and biases uniform in `±1/sqrt(fan_in)`.
pub fn init_model(g: &KnowledgeGraph, d: usize, h: usize, seed: u64) -> ModelParams {
    assert!(d >= 1 && h >= 1, "d and h must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, r, e) = (g.num_entities(), g.num_relations(), 2 * d);
    let entities = uniform(&mut rng, n * e, 0.05, 1.0);
    let mut layer = |rows: usize, cols: usize, tables: usize| {
        let bound = 1.0 / (rows as f64).sqrt();
        let w = uniform(&mut rng, tables * rows * cols, -bound, bound);
        let b = uniform(&mut rng, tables * cols, -bound, bound);
        (w, b)
    };
    let (w1, b1) = layer(e, h, r);
    let (w2, b2) = layer(h, h, r);
    let (w3, b3) = layer(h, e, r);
    let (aw1, ab1) = layer(e, h, 1);
    let (aw2, ab2) = layer(h, e, 1);
    ModelParams {
        d,
        h,
        seed,
        num_entities: n,
        num_relations: r,
        entities,
        proj: ProjectionWeights { w1, b1, w2, b2, w3, b3 },
        att: AttentionWeights {
            w1: aw1,
            b1: ab1,
            w2: aw2,
            b2: ab2,
        },
    }
}

impl ModelParams {
    pub fn entity_row(&self, e: EntityId) -> &[f64] {
        let w = 2 * self.d;
        &self.entities[e as usize * w..(e as usize + 1) * w]
    }

    pub fn entity(&self, e: EntityId) -> BetaEmbedding {
        BetaEmbedding::from_flat(self.entity_row(e))
    }

    /// All weight tensors in serialization order.
    pub fn weights(&self) -> Vec<WeightView<'_>> {
        let (r, e, h) = (self.num_relations, 2 * self.d, self.h);
        fn v<'a>(name: &'static str, shape: Vec<usize>, data: &'a [f64]) -> WeightView<'a> {
            WeightView { name, shape, data }
        }
        vec![
            v("proj.w1", vec![r, e, h], &self.proj.w1),
            v("proj.b1", vec![r, h], &self.proj.b1),
            v("proj.w2", vec![r, h, h], &self.proj.w2),
            v("proj.b2", vec![r, h], &self.proj.b2),
            v("proj.w3", vec![r, h, e], &self.proj.w3),
            v("proj.b3", vec![r, e], &self.proj.b3),
            v("att.w1", vec![e, h], &self.att.w1),
            v("att.b1", vec![h], &self.att.b1),
            v("att.w2", vec![h, e], &self.att.w2),
            v("att.b2", vec![e], &self.att.b2),
        ]
    }

    pub fn weight(&self, name: &str) -> Option<WeightView<'_>> {
        self.weights().into_iter().find(|w| w.name == name)
    }
}

/// Operator templates for the model: a ten-step projection MLP ending in
/// softmax and a positivity clamp, attention-weighted intersection,
/// reciprocal negation and a clause-stacking union.
pub fn templates(p: &ModelParams) -> TemplateLibrary {
    let h = p.h;
    let hidden = || vec![Dim::Batch, Dim::Fixed(h)];
    let emb = || vec![Dim::Batch, Dim::Embed];
    let mut lib = TemplateLibrary::new();

    let weights = p
        .weights()
        .iter()
        .filter(|w| w.name.starts_with("proj."))
        .map(|w| WeightSpec {
            name: w.name.to_string(),
            shape: w.shape.clone(),
            per_relation: true,
        })
        .collect();
    let mut steps = Vec::new();
    let mut prev = Arg::Input(0);
    for layer in 0..3 {
        let out = if layer == 2 { emb() } else { hidden() };
        steps.push(TemplateStep::new(PrimKind::MatMul, vec![prev, Arg::Weight(2 * layer)], out.clone()));
        steps.push(TemplateStep::new(PrimKind::Add, vec![Arg::Step(steps.len() - 1), Arg::Weight(2 * layer + 1)], out.clone()));
        let kind = if layer == 2 { PrimKind::Softmax } else { PrimKind::Relu };
        steps.push(TemplateStep::new(kind, vec![Arg::Step(steps.len() - 1)], out));
        prev = Arg::Step(steps.len() - 1);
    }
    steps.push(TemplateStep {
        eps: Some(EPS_MIN),
        ..TemplateStep::new(PrimKind::ClampMin, vec![prev], emb())
    });
    lib.register(PatternTemplate {
        fol_kind: FolKind::Project,
        arity: 1,
        steps,
        weights,
    })
    .expect("projection template is well formed");

    let att: Vec<WeightSpec> = p
        .weights()
        .iter()
        .filter(|w| w.name.starts_with("att."))
        .map(|w| WeightSpec {
            name: w.name.to_string(),
            shape: w.shape.clone(),
            per_relation: false,
        })
        .collect();
    for n in 2..=MAX_JOIN_ARITY {
        let mut steps = Vec::new();
        let mut logits = Vec::new();
        for i in 0..n {
            let s = steps.len();
            steps.push(TemplateStep::new(PrimKind::MatMul, vec![Arg::Input(i), Arg::Weight(0)], hidden()));
            steps.push(TemplateStep::new(PrimKind::Add, vec![Arg::Step(s), Arg::Weight(1)], hidden()));
            steps.push(TemplateStep::new(PrimKind::Relu, vec![Arg::Step(s + 1)], hidden()));
            steps.push(TemplateStep::new(PrimKind::MatMul, vec![Arg::Step(s + 2), Arg::Weight(2)], emb()));
            steps.push(TemplateStep::new(PrimKind::Add, vec![Arg::Step(s + 3), Arg::Weight(3)], emb()));
            logits.push(Arg::Step(s + 4));
        }
        let attn = steps.len();
        steps.push(TemplateStep::new(PrimKind::Softmax, logits, vec![Dim::Batch, Dim::Fixed(n), Dim::Embed]));
        let mut ws = vec![Arg::Step(attn)];
        ws.extend((0..n).map(Arg::Input));
        steps.push(TemplateStep::new(PrimKind::WeightedSum, ws, emb()));
        lib.register(PatternTemplate {
            fol_kind: FolKind::And,
            arity: n,
            steps,
            weights: att.clone(),
        })
        .expect("intersection template is well formed");

        lib.register(PatternTemplate {
            fol_kind: FolKind::Or,
            arity: n,
            steps: vec![TemplateStep::new(
                PrimKind::Stack,
                (0..n).map(Arg::Input).collect(),
                vec![Dim::Batch, Dim::Fixed(n), Dim::Embed],
            )],
            weights: vec![],
        })
        .expect("union template is well formed");
    }

    lib.register(PatternTemplate {
        fol_kind: FolKind::Not,
        arity: 1,
        steps: vec![
            TemplateStep::new(PrimKind::Reciprocal, vec![Arg::Input(0)], emb()),
            TemplateStep {
                eps: Some(EPS_MIN),
                ..TemplateStep::new(PrimKind::ClampMin, vec![Arg::Step(0)], emb())
            },
        ],
        weights: vec![],
    })
    .expect("negation template is well formed");
    lib
}
