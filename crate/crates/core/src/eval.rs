//! Full-vocabulary ranking metrics: HR@K, NDCG@K and MRR, globally and per
//! history-length group.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{normalize_length, EvalCase};
use crate::error::{Error, Result};
use crate::model::{ModelInput, Recommender, PAD};
use crate::positional::SparseMask;
use crate::temporal::build_relative_matrix;

/// Default history-length boundaries: `<10`, `10..20`, `20..30`, `30..40`, `≥40`.
pub const DEFAULT_LENGTH_BOUNDARIES: [usize; 4] = [10, 20, 30, 40];

/// Cutoffs written to metric CSVs.
pub const REPORT_CUTOFFS: [usize; 3] = [1, 5, 10];

/// 1-based rank of `target` among every non-padding item, ties counted
/// against the target.
pub fn rank_of_target(scores: &[f64], target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(v, &s)| v != PAD && v != target && s >= t)
        .count()
}

/// Hit ratio, NDCG and MRR at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub mrr: f64,
    pub count: usize,
}

pub fn metrics(ranks: &[usize], k: usize) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::Data("cannot compute metrics over zero ranks".into()));
    }
    if let Some(&bad) = ranks.iter().find(|&&r| r == 0) {
        return Err(Error::Data(format!("ranks are 1-based, got {bad}")));
    }
    let (mut hr, mut ndcg, mut mrr) = (0.0, 0.0, 0.0);
    for &r in ranks {
        if r <= k {
            hr += 1.0;
            ndcg += 1.0 / ((r + 1) as f64).log2();
        }
        mrr += 1.0 / r as f64;
    }
    let n = ranks.len() as f64;
    Ok(Metrics {
        k,
        hr: hr / n,
        ndcg: ndcg / n,
        mrr: mrr / n,
        count: ranks.len(),
    })
}

/// Metrics for one history-length bucket `[lo, hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics {
    pub lo: usize,
    pub hi: Option<usize>,
    pub metrics: Option<Metrics>,
}

/// Splits `(rank, history_length)` pairs at `boundaries` (strictly
/// increasing) into `boundaries.len() + 1` groups. Empty groups carry `None`.
pub fn metrics_by_length_group(ranked: &[(usize, usize)], boundaries: &[usize], k: usize) -> Result<Vec<GroupMetrics>> {
    if boundaries.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("group boundaries must strictly increase: {boundaries:?}")));
    }
    let mut edges = vec![0];
    edges.extend_from_slice(boundaries);
    let mut out = Vec::with_capacity(edges.len());
    for (g, &lo) in edges.iter().enumerate() {
        let hi = boundaries.get(g).copied();
        let ranks: Vec<usize> = ranked
            .iter()
            .filter(|&&(_, len)| len >= lo && hi.is_none_or(|h| len < h))
            .map(|&(r, _)| r)
            .collect();
        let metrics = if ranks.is_empty() { None } else { Some(metrics(&ranks, k)?) };
        out.push(GroupMetrics { lo, hi, metrics });
    }
    Ok(out)
}

/// Ranks of one evaluation pass, aligned with the input cases.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub ranks: Vec<usize>,
    pub history_lengths: Vec<usize>,
}

impl Evaluation {
    pub fn metrics(&self, k: usize) -> Result<Metrics> {
        metrics(&self.ranks, k)
    }

    pub fn by_length(&self, boundaries: &[usize], k: usize) -> Result<Vec<GroupMetrics>> {
        let pairs: Vec<(usize, usize)> = self.ranks.iter().copied().zip(self.history_lengths.iter().copied()).collect();
        metrics_by_length_group(&pairs, boundaries, k)
    }

    /// `metric,K,value` rows for HR, NDCG at each cutoff and MRR.
    pub fn to_csv(&self, cutoffs: &[usize]) -> Result<String> {
        let mut out = String::from("metric,K,value\n");
        for &k in cutoffs {
            let m = self.metrics(k)?;
            let _ = writeln!(out, "hr,{k},{}", m.hr);
            let _ = writeln!(out, "ndcg,{k},{}", m.ndcg);
        }
        let _ = writeln!(out, "mrr,all,{}", self.metrics(1)?.mrr);
        Ok(out)
    }

    /// `group_lo,group_hi,users,hr,ndcg,mrr` rows at cutoff `k`.
    pub fn groups_to_csv(&self, boundaries: &[usize], k: usize) -> Result<String> {
        let mut out = format!("group_lo,group_hi,users,hr{k},ndcg{k},mrr\n");
        for g in self.by_length(boundaries, k)? {
            let hi = g.hi.map_or_else(|| "inf".to_string(), |h| h.to_string());
            match g.metrics {
                Some(m) => {
                    let _ = writeln!(out, "{},{hi},{},{},{},{}", g.lo, m.count, m.hr, m.ndcg, m.mrr);
                }
                None => {
                    let _ = writeln!(out, "{},{hi},0,,,", g.lo);
                }
            }
        }
        Ok(out)
    }
}

/// Evaluation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    /// Drop items already in the history from the candidate set.
    pub exclude_history: bool,
    /// Score cases on the rayon pool instead of sequentially.
    pub parallel: bool,
}

/// Ranks each case's target with the model's next-item scores.
pub fn evaluate(
    model: &Recommender,
    cases: &[EvalCase],
    masks: Option<&[SparseMask]>,
    options: EvalOptions,
) -> Result<Evaluation> {
    let n = model.config.max_len;
    let rank_one = |case: &EvalCase| -> Result<usize> {
        if case.target == PAD || case.target >= model.config.vocab {
            return Err(Error::Data(format!("user {}: invalid target {}", case.user, case.target)));
        }
        let input = normalize_length(&case.history, n);
        let t = build_relative_matrix(&input.timestamps)?;
        let mut scores = model.score_next(
            ModelInput {
                items: &input.items,
                temporal: &t,
            },
            masks,
        )?;
        if options.exclude_history {
            for &v in &case.history.items {
                if v != case.target {
                    scores[v] = f64::NEG_INFINITY;
                }
            }
        }
        Ok(rank_of_target(&scores, case.target))
    };
    let ranks: Vec<usize> = if options.parallel {
        cases.par_iter().map(rank_one).collect::<Result<_>>()?
    } else {
        cases.iter().map(rank_one).collect::<Result<_>>()?
    };
    Ok(Evaluation {
        ranks,
        history_lengths: cases.iter().map(|c| c.history.len()).collect(),
    })
}
