//! Template ensembles: run a base method under several templates and predict
//! the class with the highest mean probability.

use rayon::prelude::*;

use crate::backend::Scorer;
use crate::error::{Error, Result};
use crate::grammar::{ComponentSet, Template};
use crate::predict::{classify, predict, LabelDistribution, Method, Prediction};
use crate::render::{Demonstration, PromptContext};

/// Ensemble size used when none is given.
pub const DEFAULT_ENSEMBLE_SIZE: usize = 5;

/// Element-wise arithmetic mean of the member distributions.
pub fn ensemble_average(dists: &[LabelDistribution]) -> Result<LabelDistribution> {
    let first = dists.first().ok_or_else(|| Error::invalid("ensemble of zero distributions"))?;
    let c = first.num_classes();
    if let Some(d) = dists.iter().find(|d| d.num_classes() != c) {
        return Err(Error::invalid(format!("ensemble members disagree on class count ({c} vs {})", d.num_classes())));
    }
    let n = dists.len() as f64;
    let mut mean = vec![0.0; c];
    for d in dists {
        for (m, p) in mean.iter_mut().zip(d.probs()) {
            *m += p;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    LabelDistribution::new(mean, Method::Ensemble)
}

/// Majority vote over member argmaxes; ties go to the lowest class index.
pub fn ensemble_vote(dists: &[LabelDistribution]) -> Result<usize> {
    let first = dists.first().ok_or_else(|| Error::invalid("ensemble of zero distributions"))?;
    let mut counts = vec![0usize; first.num_classes()];
    for d in dists {
        let c = classify(d);
        if c >= counts.len() {
            counts.resize(c + 1, 0);
        }
        counts[c] += 1;
    }
    let mut best = 0;
    for (i, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub dist: LabelDistribution,
    /// Member predictions ordered by template id.
    pub members: Vec<(u64, Prediction)>,
}

impl EnsemblePrediction {
    pub fn score_calls(&self) -> usize {
        self.members.iter().map(|(_, p)| p.score_calls).sum()
    }

    pub fn boundary_adjusted(&self) -> bool {
        self.members.iter().any(|(_, p)| p.boundary_adjusted)
    }

    pub fn template_ids(&self) -> Vec<u64> {
        self.members.iter().map(|(id, _)| *id).collect()
    }
}

/// Inputs shared by every member of an ensemble.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleInput<'a> {
    pub grammar: &'a ComponentSet,
    pub demos: &'a [Demonstration],
    pub test_text: &'a str,
    pub example_id: Option<u64>,
    pub seed: Option<u64>,
}

/// Runs `method` once per template (possibly in parallel) and averages.
/// Members are joined in template-id order so the result does not depend on
/// scheduling.
pub fn ensemble_predict<S: Scorer + ?Sized>(
    scorer: &S,
    templates: &[Template],
    input: &EnsembleInput<'_>,
    method: Method,
    cf_tokens: &[String],
) -> Result<EnsemblePrediction> {
    if templates.is_empty() {
        return Err(Error::invalid("ensemble needs at least one template"));
    }
    let mut members = templates
        .par_iter()
        .map(|t| {
            let mut ctx = PromptContext::new(input.grammar, t, input.demos);
            ctx.example_id = input.example_id;
            ctx.seed = input.seed;
            predict(method, scorer, &ctx, input.test_text, cf_tokens)
                .map(|p| (t.id, p))
                .map_err(|e| Error::InTemplate { template_id: t.id, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    members.sort_by_key(|(id, _)| *id);
    let dists: Vec<LabelDistribution> = members.iter().map(|(_, p)| p.dist.clone()).collect();
    let dist = ensemble_average(&dists)?;
    Ok(EnsemblePrediction { dist, members })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{HashMockScorer, PlantedParams, PlantedScorer};
    use crate::presets;
    use proptest::prelude::*;

    fn d(p: &[f64]) -> LabelDistribution {
        LabelDistribution::new(p.to_vec(), Method::Direct).unwrap()
    }

    #[test]
    fn average_examples() {
        let m = ensemble_average(&[d(&[0.6, 0.4]), d(&[0.2, 0.8])]).unwrap();
        assert!((m.probs()[0] - 0.4).abs() < 1e-15 && (m.probs()[1] - 0.6).abs() < 1e-15);
        assert_eq!(classify(&m), 1);
        assert_eq!(m.method(), Method::Ensemble);

        let single = ensemble_average(&[d(&[0.3, 0.7])]).unwrap();
        assert_eq!(single.probs(), &[0.3, 0.7]);

        let m = ensemble_average(&[d(&[0.5, 0.3, 0.2]), d(&[0.1, 0.6, 0.3]), d(&[0.3, 0.3, 0.4])]).unwrap();
        let oracle = [0.9 / 3.0, 1.2 / 3.0, 0.9 / 3.0];
        for (a, b) in m.probs().iter().zip(oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(classify(&m), 1);
    }

    #[test]
    fn average_errors() {
        assert!(ensemble_average(&[]).is_err());
        assert!(ensemble_average(&[d(&[1.0]), d(&[0.5, 0.5])]).is_err());
        assert!(ensemble_vote(&[]).is_err());
    }

    #[test]
    fn vote_examples() {
        let zero = d(&[0.9, 0.1]);
        let one = d(&[0.2, 0.8]);
        assert_eq!(ensemble_vote(&[zero.clone(), one.clone(), one.clone()]).unwrap(), 1);
        assert_eq!(ensemble_vote(&[zero, one]).unwrap(), 0);
    }

    #[test]
    fn vote_and_average_disagree_on_many_classes() {
        // 14 classes: every template is biased toward a different wrong class
        // while the gold class is everyone's runner-up.
        let g = presets::load("dbpedia").unwrap();
        let templates = g.sample_templates(5, 11).unwrap();
        let world = PlantedScorer::new(PlantedParams { signal: 1.2, bias: 3.0, noise: 0.5, bias_seed: 3 }, vec![0; 64]);
        let mut found = false;
        for example_id in 0..64u64 {
            let input =
                EnsembleInput { grammar: &g, demos: &[], test_text: "x", example_id: Some(example_id), seed: None };
            let e = ensemble_predict(&world, &templates, &input, Method::Direct, &[]).unwrap();
            let dists: Vec<_> = e.members.iter().map(|(_, p)| p.dist.clone()).collect();
            if ensemble_vote(&dists).unwrap() != classify(&e.dist) {
                found = true;
                break;
            }
        }
        assert!(found, "no instance where voting and averaging disagree");
    }

    #[test]
    fn predict_identity_and_cost() {
        let g = presets::load("sst2").unwrap();
        let templates = g.sample_templates(5, 1).unwrap();
        let demos = [Demonstration::new("fine film", 1)];
        let input = EnsembleInput { grammar: &g, demos: &demos, test_text: "bad", example_id: Some(0), seed: None };
        let one = ensemble_predict(&HashMockScorer, &templates[..1], &input, Method::Direct, &[]).unwrap();
        let ctx = PromptContext::new(&g, &templates[0], &demos).with_example(0);
        let base = predict(Method::Direct, &HashMockScorer, &ctx, "bad", &[]).unwrap();
        assert_eq!(one.dist.probs(), base.dist.probs());

        let cf = vec!["N/A".to_string()];
        let five = ensemble_predict(&HashMockScorer, &templates, &input, Method::Calibration, &cf).unwrap();
        assert_eq!(five.score_calls(), 5 * 4);
        let ids = five.template_ids();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert!(ensemble_predict(&HashMockScorer, &[], &input, Method::Direct, &[]).is_err());
    }

    proptest! {
        #[test]
        fn average_is_permutation_invariant(raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..8), rot in 0usize..8) {
            let dists: Vec<_> = raw.iter().map(|r| {
                let z: f64 = r.iter().sum();
                d(&r.iter().map(|x| x / z).collect::<Vec<_>>())
            }).collect();
            let mut rotated = dists.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            let a = ensemble_average(&dists).unwrap();
            let b = ensemble_average(&rotated).unwrap();
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
