use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{Dim, FolKind, PrimKind};

/// Operand of a template step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arg {
    /// Embedding input of the FOL operator.
    Input(usize),
    /// Declared weight.
    Weight(usize),
    /// Result of an earlier step.
    Step(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    /// Name of the shared weight value, e.g. `proj.w1`.
    pub name: String,
    pub shape: Vec<usize>,
    /// Leading axis indexes relations; the row is picked by the operator's
    /// relation binding.
    pub per_relation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateStep {
    pub kind: PrimKind,
    pub inputs: Vec<Arg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Output shape.
    pub out: Vec<Dim>,
}

impl TemplateStep {
    pub fn new(kind: PrimKind, inputs: Vec<Arg>, out: Vec<Dim>) -> Self {
        TemplateStep {
            kind,
            inputs,
            eps: None,
            out,
        }
    }
}

/// Primitive-op DAG implementing one FOL operator of a fixed arity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTemplate {
    pub fol_kind: FolKind,
    pub arity: usize,
    pub steps: Vec<TemplateStep>,
    pub weights: Vec<WeightSpec>,
}

impl PatternTemplate {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Kind of the step producing the operator's output.
    pub fn terminal(&self) -> Option<PrimKind> {
        self.steps.last().map(|s| s.kind)
    }

    /// Whether `step` reads a per-relation weight.
    pub fn gathered(&self, step: usize) -> bool {
        self.steps[step]
            .inputs
            .iter()
            .any(|a| matches!(a, Arg::Weight(w) if self.weights.get(*w).is_some_and(|w| w.per_relation)))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Template(format!("{} template: {msg}", self.fol_kind.name())));
        if self.arity == 0 {
            return bad("arity must be at least 1".into());
        }
        if self.steps.is_empty() {
            return bad("no steps".into());
        }
        for (i, w) in self.weights.iter().enumerate() {
            if w.shape.is_empty() || w.shape.contains(&0) {
                return bad(format!("weight {i} ({}) has no usable shape", w.name));
            }
        }
        let mut inputs_used = vec![false; self.arity];
        let mut consumed = vec![false; self.steps.len()];
        for (i, step) in self.steps.iter().enumerate() {
            if step.inputs.is_empty() {
                return bad(format!("step {i} has no operands"));
            }
            for arg in &step.inputs {
                match *arg {
                    Arg::Input(k) if k < self.arity => inputs_used[k] = true,
                    Arg::Input(k) => return bad(format!("step {i} reads input {k} beyond arity {}", self.arity)),
                    Arg::Weight(w) if w < self.weights.len() => {}
                    Arg::Weight(w) => return bad(format!("step {i} references undeclared weight {w}")),
                    Arg::Step(j) if j < i => consumed[j] = true,
                    Arg::Step(j) => return bad(format!("step {i} reads step {j} out of order")),
                }
            }
            if step.out.is_empty() {
                return bad(format!("step {i} has no output shape"));
            }
        }
        if let Some(k) = inputs_used.iter().position(|u| !u) {
            return bad(format!("input {k} is never read"));
        }
        let last = self.steps.len() - 1;
        if let Some(j) = consumed[..last].iter().position(|c| !c) {
            return bad(format!("step {j} output is never consumed"));
        }
        Ok(())
    }
}

/// Templates keyed by FOL kind and arity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplateLibrary {
    templates: Vec<PatternTemplate>,
}

impl TemplateLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `t`, replacing any template with the same kind and arity.
    pub fn register(&mut self, t: PatternTemplate) -> Result<()> {
        t.validate()?;
        match self.templates.iter_mut().find(|x| x.fol_kind == t.fol_kind && x.arity == t.arity) {
            Some(slot) => *slot = t,
            None => self.templates.push(t),
        }
        Ok(())
    }

    pub fn get(&self, kind: FolKind, arity: usize) -> Option<&PatternTemplate> {
        self.templates.iter().find(|t| t.fol_kind == kind && t.arity == arity)
    }

    pub fn require(&self, kind: FolKind, arity: usize) -> Result<&PatternTemplate> {
        self.get(kind, arity).ok_or_else(|| Error::MissingTemplate {
            kind: kind.name().to_string(),
            arity,
        })
    }

    /// Step count of the `kind` template; with several arities, the
    /// smallest.
    pub fn steps(&self, kind: FolKind) -> Option<usize> {
        self.templates
            .iter()
            .filter(|t| t.fol_kind == kind)
            .min_by_key(|t| t.arity)
            .map(PatternTemplate::num_steps)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Templates in matching priority: more steps first, then kind name,
    /// then arity.
    pub fn by_priority(&self) -> Vec<&PatternTemplate> {
        let mut v: Vec<&PatternTemplate> = self.templates.iter().collect();
        v.sort_by(|a, b| {
            b.num_steps()
                .cmp(&a.num_steps())
                .then_with(|| a.fol_kind.name().cmp(b.fol_kind.name()))
                .then_with(|| a.arity.cmp(&b.arity))
        });
        v
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: TemplateLibrary = serde_json::from_str(s)?;
        let mut lib = TemplateLibrary::new();
        for t in raw.templates {
            lib.register(t)?;
        }
        Ok(lib)
    }

    /// Number of templates per kind, for reporting.
    pub fn summary(&self) -> BTreeMap<String, Vec<(usize, usize)>> {
        let mut out: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
        for t in &self.templates {
            out.entry(t.fol_kind.name().to_string()).or_default().push((t.arity, t.num_steps()));
        }
        out
    }
}

/// Registers `t` under the kind named `kind`.
pub fn register_template(lib: &mut TemplateLibrary, kind: &str, t: PatternTemplate) -> Result<()> {
    let parsed = FolKind::parse(kind).ok_or_else(|| Error::UnknownTag {
        tag: kind.to_string(),
        valid: FolKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", "),
    })?;
    if parsed != t.fol_kind {
        return Err(Error::Template(format!(
            "template declares kind {} but was registered as {kind}",
            t.fol_kind.name()
        )));
    }
    lib.register(t)
}
