use std::collections::BTreeSet;

use super::{digamma, kl_terms, ln_beta, BetaEmbedding, ModelParams};
use crate::error::{Error, Result};
use crate::kg::EntityId;

/// Entity-side KL terms, computed once per model.
#[derive(Debug, Clone)]
pub struct Scorer {
    d: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    lnb: Vec<f64>,
    psi_a: Vec<f64>,
    psi_b: Vec<f64>,
    psi_ab: Vec<f64>,
}

impl Scorer {
    pub fn new(p: &ModelParams) -> Self {
        let d = p.d;
        let n = p.num_entities * d;
        let mut s = Scorer {
            d,
            alpha: Vec::with_capacity(n),
            beta: Vec::with_capacity(n),
            lnb: Vec::with_capacity(n),
            psi_a: Vec::with_capacity(n),
            psi_b: Vec::with_capacity(n),
            psi_ab: Vec::with_capacity(n),
        };
        for e in 0..p.num_entities {
            let row = p.entity_row(e as EntityId);
            for i in 0..d {
                let (a, b) = (row[i], row[d + i]);
                s.alpha.push(a);
                s.beta.push(b);
                s.lnb.push(ln_beta(a, b));
                s.psi_a.push(digamma(a));
                s.psi_b.push(digamma(b));
                s.psi_ab.push(digamma(a + b));
            }
        }
        s
    }

    pub fn num_entities(&self) -> usize {
        self.alpha.len() / self.d
    }

    /// `min_c KL(entity || clause_c)` for every entity.
    pub fn scores(&self, clauses: &[BetaEmbedding]) -> Result<Vec<f64>> {
        if clauses.is_empty() {
            return Err(Error::Usage("scoring needs at least one clause embedding".into()));
        }
        if let Some(c) = clauses.iter().find(|c| c.dim() != self.d) {
            return Err(Error::Shape {
                op: "score".into(),
                detail: format!("clause dimension {} vs model {}", c.dim(), self.d),
            });
        }
        let lnb_q: Vec<Vec<f64>> = clauses
            .iter()
            .map(|c| c.alpha.iter().zip(&c.beta).map(|(&a, &b)| ln_beta(a, b)).collect())
            .collect();
        let d = self.d;
        Ok((0..self.num_entities())
            .map(|e| {
                clauses
                    .iter()
                    .zip(&lnb_q)
                    .map(|(c, lq)| {
                        (0..d)
                            .map(|i| {
                                let k = e * d + i;
                                kl_terms(
                                    self.alpha[k],
                                    self.beta[k],
                                    self.lnb[k],
                                    self.psi_a[k],
                                    self.psi_b[k],
                                    self.psi_ab[k],
                                    c.alpha[i],
                                    c.beta[i],
                                    lq[i],
                                )
                            })
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect())
    }

    /// Entities by ascending score, ties by index.
    pub fn rank(&self, clauses: &[BetaEmbedding]) -> Result<Vec<EntityId>> {
        let scores = self.scores(clauses)?;
        let mut order: Vec<EntityId> = (0..scores.len() as EntityId).collect();
        order.sort_by(|&a, &b| scores[a as usize].total_cmp(&scores[b as usize]).then(a.cmp(&b)));
        Ok(order)
    }
}

/// Ranks all entities against the clause embeddings of one query.
pub fn score_and_rank(query_embs: &[BetaEmbedding], p: &ModelParams) -> Result<Vec<EntityId>> {
    Scorer::new(p).rank(query_embs)
}

/// Mean reciprocal rank of the best-ranked answer, unfiltered.
pub fn mrr(rankings: &[Vec<EntityId>], answers: &[BTreeSet<EntityId>]) -> Result<f64> {
    if rankings.len() != answers.len() {
        return Err(Error::Usage(format!("{} rankings for {} answer sets", rankings.len(), answers.len())));
    }
    if rankings.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, (rank, ans)) in rankings.iter().zip(answers).enumerate() {
        if ans.is_empty() {
            return Err(Error::EmptyAnswers(i));
        }
        let pos = rank
            .iter()
            .position(|e| ans.contains(e))
            .ok_or_else(|| Error::Usage(format!("query {i}: no answer appears in its ranking")))?;
        total += 1.0 / (pos + 1) as f64;
    }
    Ok(total / rankings.len() as f64)
}
