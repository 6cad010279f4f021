//! Accuracy aggregation and template-transfer metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Component, ComponentSet, Template};

/// Fraction of positions where prediction and gold agree.
pub fn accuracy(predictions: &[usize], golds: &[usize]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::invalid(format!("{} predictions vs {} golds", predictions.len(), golds.len())));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("accuracy of an empty list"));
    }
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdEstimator {
    /// n − 1 denominator.
    #[default]
    Sample,
    /// n denominator.
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Aggregate {
    /// True when the std is the n = 1 convention rather than an estimate.
    pub fn std_undefined(&self) -> bool {
        self.n < 2
    }
}

/// Mean and sample standard deviation; a single value has std 0.
pub fn aggregate(scores: &[f64]) -> Result<Aggregate> {
    aggregate_with(scores, StdEstimator::Sample)
}

pub fn aggregate_with(scores: &[f64], estimator: StdEstimator) -> Result<Aggregate> {
    if scores.is_empty() {
        return Err(Error::invalid("aggregate of an empty list"));
    }
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;
    let ss: f64 = scores.iter().map(|s| (s - mean).powi(2)).sum();
    let denom = match estimator {
        StdEstimator::Sample => n.saturating_sub(1),
        StdEstimator::Population => n,
    };
    let std = if denom == 0 { 0.0 } else { (ss / denom as f64).sqrt() };
    Ok(Aggregate { mean, std, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateScore {
    pub template_id: u64,
    pub score: f64,
}

impl TemplateScore {
    pub fn new(template_id: u64, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(format!("template score {score} outside [0, 1]")));
        }
        Ok(Self { template_id, score })
    }
}

/// The `k` best template ids. Ties at the cut go to the smaller id.
pub fn top_k(scores: &[TemplateScore], k: usize) -> Result<BTreeSet<u64>> {
    if k > scores.len() {
        return Err(Error::invalid(format!("top-{k} of {} templates", scores.len())));
    }
    let mut seen = BTreeSet::new();
    for s in scores {
        if !s.score.is_finite() {
            return Err(Error::invalid(format!("non-finite score for template {}", s.template_id)));
        }
        if !seen.insert(s.template_id) {
            return Err(Error::invalid(format!("duplicate template id {}", s.template_id)));
        }
    }
    let mut sorted: Vec<&TemplateScore> = scores.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.template_id.cmp(&b.template_id)));
    Ok(sorted.into_iter().take(k).map(|s| s.template_id).collect())
}

/// Jaccard coefficient `|a ∩ b| / |a ∪ b|`.
pub fn iou(a: &BTreeSet<u64>, b: &BTreeSet<u64>) -> Result<f64> {
    let union = a.union(b).count();
    if union == 0 {
        return Err(Error::invalid("IoU of two empty sets is undefined"));
    }
    Ok(a.intersection(b).count() as f64 / union as f64)
}

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ as the Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("spearman over {} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::invalid("spearman needs at least two pairs"));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::invalid("spearman undefined: constant ranks"));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Scores sorted descending and divided by the best one.
pub fn rank_curve(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::invalid("rank curve of an empty list"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let best = sorted[0];
    if best.is_nan() || best <= 0.0 {
        return Err(Error::invalid("rank curve undefined: best score is zero"));
    }
    Ok(sorted.into_iter().map(|s| s / best).collect())
}

/// Positions where the few-shot score strictly beats the zero-shot score.
pub fn count_wins(zero_shot: &[f64], few_shot: &[f64]) -> Result<(usize, usize)> {
    if zero_shot.len() != few_shot.len() {
        return Err(Error::invalid(format!("{} zero-shot vs {} few-shot scores", zero_shot.len(), few_shot.len())));
    }
    let wins = zero_shot.iter().zip(few_shot).filter(|(z, f)| f > z).count();
    Ok((wins, zero_shot.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentGroup {
    pub component: Component,
    pub position: usize,
    pub variant: String,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Groups template scores by the variant chosen for each component slot.
/// Returns, for each of the four slots in id-digit order, one group per
/// variant that occurs in `results` (ordered by position).
pub fn component_breakdown(results: &[(Template, f64)], grammar: &ComponentSet) -> Result<Vec<Vec<ComponentGroup>>> {
    for (t, _) in results {
        if !grammar.contains(t) {
            return Err(Error::invalid(format!(
                "template {} does not belong to grammar {:?}",
                t.id,
                grammar.task_name()
            )));
        }
    }
    Component::ALL
        .iter()
        .map(|&component| {
            let mut by_pos: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (t, s) in results {
                by_pos.entry(t.position(component)).or_default().push(*s);
            }
            by_pos
                .into_iter()
                .map(|(position, scores)| {
                    let agg = aggregate(&scores)?;
                    Ok(ComponentGroup {
                        component,
                        position,
                        variant: grammar.options(component)[position].clone(),
                        scores,
                        mean: agg.mean,
                        std: agg.std,
                    })
                })
                .collect()
        })
        .collect()
}
