use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{cell_accuracies, RunRecord};
use crate::error::{Error, Result};
use crate::grammar::ComponentSet;
use crate::metrics::{
    component_breakdown, count_wins, iou, rank_curve, spearman, top_k, ComponentGroup, TemplateScore,
};

/// Accuracy of every template under `method`, averaged over demonstration
/// seeds, ordered by template id.
pub fn template_scores(records: &[RunRecord], method: &str) -> Result<Vec<TemplateScore>> {
    let selected: Vec<RunRecord> =
        records.iter().filter(|r| r.template_id.is_some() && r.method_label() == method).cloned().collect();
    let mut by_template: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (r, acc) in cell_accuracies(&selected)? {
        by_template.entry(r.template_id.expect("single-template record")).or_default().push(acc);
    }
    if by_template.is_empty() {
        return Err(Error::invalid(format!("no successful `{method}` records")));
    }
    by_template
        .into_iter()
        .map(|(id, accs)| TemplateScore::new(id, accs.iter().sum::<f64>() / accs.len() as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPair {
    /// Templates scored in both settings.
    pub common: usize,
    pub k: usize,
    pub iou: f64,
    /// `None` when either side has constant scores.
    pub spearman: Option<f64>,
}

/// Top-k overlap and rank correlation over the templates both settings share.
pub fn transfer(a: &[TemplateScore], b: &[TemplateScore], k: usize) -> Result<TransferPair> {
    let ids_b: BTreeSet<u64> = b.iter().map(|s| s.template_id).collect();
    let ids: BTreeSet<u64> = a.iter().map(|s| s.template_id).filter(|id| ids_b.contains(id)).collect();
    let pick = |xs: &[TemplateScore]| -> Vec<TemplateScore> {
        let mut v: Vec<TemplateScore> = xs.iter().filter(|s| ids.contains(&s.template_id)).copied().collect();
        v.sort_by_key(|s| s.template_id);
        v
    };
    let (a, b) = (pick(a), pick(b));
    if k == 0 || k > a.len() {
        return Err(Error::invalid(format!("top-{k} over {} shared templates", a.len())));
    }
    let overlap = iou(&top_k(&a, k)?, &top_k(&b, k)?)?;
    let xs: Vec<f64> = a.iter().map(|s| s.score).collect();
    let ys: Vec<f64> = b.iter().map(|s| s.score).collect();
    Ok(TransferPair { common: a.len(), k, iou: overlap, spearman: spearman(&xs, &ys).ok() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub labels: Vec<String>,
    pub k: usize,
    pub iou: Vec<Vec<f64>>,
    pub spearman: Vec<Vec<Option<f64>>>,
}

/// Pairwise [`transfer`] over several settings (models, methods, shot counts).
pub fn transfer_matrix(labels: Vec<String>, settings: &[Vec<TemplateScore>], k: usize) -> Result<TransferMatrix> {
    if labels.len() != settings.len() {
        return Err(Error::invalid("one label per setting"));
    }
    let n = settings.len();
    let mut iou_m = vec![vec![0.0; n]; n];
    let mut rho_m = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            let p = transfer(&settings[i], &settings[j], k)?;
            iou_m[i][j] = p.iou;
            rho_m[i][j] = p.spearman;
        }
    }
    Ok(TransferMatrix { labels, k, iou: iou_m, spearman: rho_m })
}

/// Template scores under `method` grouped by component variant.
pub fn component_analysis(
    records: &[RunRecord],
    grammar: &ComponentSet,
    method: &str,
) -> Result<Vec<Vec<ComponentGroup>>> {
    let results = template_scores(records, method)?
        .into_iter()
        .map(|s| Ok((grammar.template(s.template_id)?, s.score)))
        .collect::<Result<Vec<_>>>()?;
    component_breakdown(&results, grammar)
}

/// Normalized sorted template accuracies under `method`.
pub fn rank_curve_for(records: &[RunRecord], method: &str) -> Result<Vec<f64>> {
    let scores: Vec<f64> = template_scores(records, method)?.into_iter().map(|s| s.score).collect();
    rank_curve(&scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinsReport {
    /// `(position label, zero-shot mean, few-shot mean)`.
    pub positions: Vec<(String, f64, f64)>,
    pub wins: usize,
    pub total: usize,
}

/// Compares mean single-template accuracy of zero-shot and few-shot runs for
/// every method present in both runs of each pair.
pub fn wins_between(pairs: &[(Vec<RunRecord>, Vec<RunRecord>)]) -> Result<WinsReport> {
    let mut positions = Vec::new();
    for (i, (zero, few)) in pairs.iter().enumerate() {
        let methods = |rs: &[RunRecord]| -> BTreeSet<String> {
            rs.iter().filter(|r| r.template_id.is_some()).map(|r| r.method_label()).collect()
        };
        let shared: Vec<String> = methods(zero).intersection(&methods(few)).cloned().collect();
        if shared.is_empty() {
            return Err(Error::invalid(format!("pair {i}: no method in common")));
        }
        for m in shared {
            let mean = |rs: &[RunRecord]| -> Result<f64> {
                let s = template_scores(rs, &m)?;
                Ok(s.iter().map(|t| t.score).sum::<f64>() / s.len() as f64)
            };
            positions.push((format!("{i}:{m}"), mean(zero)?, mean(few)?));
        }
    }
    let z: Vec<f64> = positions.iter().map(|p| p.1).collect();
    let f: Vec<f64> = positions.iter().map(|p| p.2).collect();
    let (wins, total) = count_wins(&z, &f)?;
    Ok(WinsReport { positions, wins, total })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    run_id: &'a str,
    backend: &'a str,
    method: String,
    demo_seed: u64,
    template_id: Option<u64>,
    ensemble_seed: Option<u64>,
    template_ids: String,
    example_id: u64,
    gold: usize,
    predicted: Option<usize>,
    correct: Option<bool>,
    probs: String,
    score_calls: usize,
    boundary_adjusted: bool,
    error: Option<&'a str>,
}

/// Writes one CSV row per record; list fields are `;`-joined.
pub fn export_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let join = |xs: Vec<String>| xs.join(";");
    for r in records {
        w.serialize(CsvRow {
            run_id: &r.run_id,
            backend: &r.backend,
            method: r.method_label(),
            demo_seed: r.demo_seed,
            template_id: r.template_id,
            ensemble_seed: r.ensemble_seed,
            template_ids: join(r.template_ids.iter().flatten().map(u64::to_string).collect()),
            example_id: r.example_id,
            gold: r.gold,
            predicted: r.predicted,
            correct: r.is_correct(),
            probs: join(r.probs.iter().flatten().map(f64::to_string).collect()),
            score_calls: r.score_calls,
            boundary_adjusted: r.boundary_adjusted,
            error: r.error.as_deref(),
        })
        .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(())
}
