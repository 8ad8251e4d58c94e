//! Asymptotic cost of an optimization run in LM-primitive units, and its
//! reconciliation against a measured token ledger.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::{ModuleRole, UsageLedger};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub m_fp: f64,
    pub m_e: f64,
    pub m_s: f64,
    pub l_phi: f64,
    pub l_t: f64,
    pub l_f: f64,
    pub n_a: f64,
    pub n_d: f64,
    pub n_iter: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("cost parameter `{0}` must be strictly positive")]
pub struct NonPositiveParam(pub &'static str);

impl CostParams {
    pub fn validate(&self) -> Result<(), NonPositiveParam> {
        let fields = [
            ("m_fp", self.m_fp),
            ("m_e", self.m_e),
            ("m_s", self.m_s),
            ("l_phi", self.l_phi),
            ("l_t", self.l_t),
            ("l_f", self.l_f),
            ("n_a", self.n_a),
            ("n_d", self.n_d),
            ("n_iter", self.n_iter),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NonPositiveParam(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostTerm {
    Propose,
    Extract,
    Score,
}

impl CostTerm {
    pub fn role(self) -> ModuleRole {
        match self {
            CostTerm::Propose => ModuleRole::Proposer,
            CostTerm::Extract => ModuleRole::Extractor,
            CostTerm::Score => ModuleRole::InterpretabilityScorer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub propose_term: f64,
    pub extract_term: f64,
    pub score_term: f64,
    pub eval_total: f64,
    pub run_total: f64,
    pub dominant: CostTerm,
}

/// Per-evaluation terms `m_fp*L_phi`, `N_A*m_e*(L_t+L_f)` and `m_s*L_f`, and
/// the run total `(N_d+N_iter)*eval_total`. Ties for the dominant term go to
/// extraction, then proposal.
pub fn estimate_cost(p: &CostParams) -> Result<CostBreakdown, NonPositiveParam> {
    p.validate()?;
    let propose_term = p.m_fp * p.l_phi;
    let extract_term = p.n_a * p.m_e * (p.l_t + p.l_f);
    let score_term = p.m_s * p.l_f;
    let eval_total = propose_term + extract_term + score_term;
    let mut dominant = CostTerm::Extract;
    let mut top = extract_term;
    for (term, v) in [(CostTerm::Propose, propose_term), (CostTerm::Score, score_term)] {
        if v > top {
            top = v;
            dominant = term;
        }
    }
    Ok(CostBreakdown {
        propose_term,
        extract_term,
        score_term,
        eval_total,
        run_total: (p.n_d + p.n_iter) * eval_total,
        dominant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Reconciliation {
    NoData,
    Measured {
        total_tokens: u64,
        extractor_tokens: u64,
        extractor_share: f64,
        measured_dominant: ModuleRole,
        predicted_dominant: ModuleRole,
        disagreement: bool,
    },
}

impl Reconciliation {
    pub fn render(&self) -> String {
        match self {
            Reconciliation::NoData => "no data".into(),
            Reconciliation::Measured {
                total_tokens,
                extractor_tokens,
                extractor_share,
                measured_dominant,
                predicted_dominant,
                disagreement,
            } => format!(
                "extractor tokens {extractor_tokens} of {total_tokens} ({:.1}%); measured dominant role {}, predicted {}{}",
                extractor_share * 100.0,
                measured_dominant.as_str(),
                predicted_dominant.as_str(),
                if *disagreement { " (DISAGREEMENT)" } else { "" }
            ),
        }
    }
}

/// Compares the measured token split per module with the predicted dominant
/// term.
pub fn reconcile(ledger: &UsageLedger, breakdown: &CostBreakdown) -> Reconciliation {
    let total = ledger.total().total();
    if total == 0 {
        return Reconciliation::NoData;
    }
    let extractor_tokens = ledger.role_total(ModuleRole::Extractor).total();
    let (measured_dominant, _) = ledger
        .entries
        .keys()
        .map(|&r| (r, ledger.role_total(r).total()))
        .fold((ModuleRole::Extractor, 0u64), |best, (r, t)| if t > best.1 { (r, t) } else { best });
    let predicted_dominant = breakdown.dominant.role();
    Reconciliation::Measured {
        total_tokens: total,
        extractor_tokens,
        extractor_share: extractor_tokens as f64 / total as f64,
        measured_dominant,
        predicted_dominant,
        disagreement: measured_dominant != predicted_dominant,
    }
}
