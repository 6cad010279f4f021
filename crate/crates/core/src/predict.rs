//! Direct, Channel and Calibration prediction.
//!
//! Each method scores one rendered prompt per class and converts the raw
//! log-probabilities to a [`LabelDistribution`] with a softmax over classes.

use serde::{Deserialize, Serialize};

use crate::backend::{score_with_boundary_fix, ScoreRequest, Scorer};
use crate::error::{Error, Result};
use crate::render::{render_channel, render_content_free, render_direct, PromptContext, RenderedPrompt};

/// Tolerance of the sum-to-one check.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// The content-free input used when none is configured.
pub const DEFAULT_CONTENT_FREE: &str = "N/A";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    Channel,
    Calibration,
    Ensemble,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Channel => "channel",
            Method::Calibration => "calibration",
            Method::Ensemble => "ensemble",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Method::Direct),
            "channel" => Ok(Method::Channel),
            "calibration" | "calibrate" => Ok(Method::Calibration),
            "ensemble" => Ok(Method::Ensemble),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

/// A normalized probability vector over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    probs: Vec<f64>,
    method: Method,
}

impl LabelDistribution {
    pub fn new(probs: Vec<f64>, method: Method) -> Result<Self> {
        validate_probs(&probs)?;
        Ok(Self { probs, method })
    }

    /// Softmax of raw scores; subtracts the maximum first for stability.
    pub fn from_scores(scores: &[f64], method: Method) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Distribution("no class scores".into()));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Distribution(format!("non-finite score {bad}")));
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        Self::new(exps.into_iter().map(|e| e / z).collect(), method)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

pub fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Distribution("empty probability vector".into()));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::Distribution(format!("invalid probability {p}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Distribution(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// Index of the largest probability; ties go to the lowest index.
pub fn classify(dist: &LabelDistribution) -> usize {
    argmax(dist.probs())
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// A prediction together with bookkeeping about how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub dist: LabelDistribution,
    /// Number of backend score requests issued.
    pub score_calls: usize,
    /// Whether any request needed the boundary-space shift.
    pub boundary_adjusted: bool,
}

#[derive(Default)]
struct Tally {
    calls: usize,
    adjusted: bool,
}

impl Tally {
    fn score<S: Scorer + ?Sized>(&mut self, scorer: &S, prompt: RenderedPrompt) -> Result<f64> {
        let req = ScoreRequest::from(prompt);
        self.calls += 1;
        let (v, adjusted) = score_with_boundary_fix(scorer, &req)?;
        self.adjusted |= adjusted;
        Ok(v)
    }
}

fn class_scores<S, F>(scorer: &S, ctx: &PromptContext<'_>, tally: &mut Tally, render: F) -> Result<Vec<f64>>
where
    S: Scorer + ?Sized,
    F: Fn(&PromptContext<'_>, usize) -> Result<RenderedPrompt>,
{
    (0..ctx.grammar.num_classes()).map(|c| tally.score(scorer, render(ctx, c)?)).collect()
}

/// Runs one prediction method. `cf_tokens` is only used by calibration.
pub fn predict<S: Scorer + ?Sized>(
    method: Method,
    scorer: &S,
    ctx: &PromptContext<'_>,
    test_text: &str,
    cf_tokens: &[String],
) -> Result<Prediction> {
    let mut tally = Tally::default();
    let dist = match method {
        Method::Direct => {
            let scores = class_scores(scorer, ctx, &mut tally, |c, k| render_direct(c, test_text, k))?;
            LabelDistribution::from_scores(&scores, Method::Direct)?
        }
        Method::Channel => {
            let scores = class_scores(scorer, ctx, &mut tally, |c, k| render_channel(c, test_text, k))?;
            LabelDistribution::from_scores(&scores, Method::Channel)?
        }
        Method::Calibration => {
            if cf_tokens.is_empty() {
                return Err(Error::invalid("calibration needs at least one content-free token"));
            }
            let scores = class_scores(scorer, ctx, &mut tally, |c, k| render_direct(c, test_text, k))?;
            let p = LabelDistribution::from_scores(&scores, Method::Direct)?;
            let mut p_cf = vec![0.0; p.num_classes()];
            for token in cf_tokens {
                let cf_scores = class_scores(scorer, ctx, &mut tally, |c, k| render_content_free(c, token, k))?;
                let d = LabelDistribution::from_scores(&cf_scores, Method::Direct)?;
                for (acc, q) in p_cf.iter_mut().zip(d.probs()) {
                    *acc += q;
                }
            }
            for acc in p_cf.iter_mut() {
                *acc /= cf_tokens.len() as f64;
            }
            calibrate(p.probs(), &p_cf)?
        }
        Method::Ensemble => return Err(Error::invalid("ensemble is not a base prediction method")),
    };
    Ok(Prediction { dist, score_calls: tally.calls, boundary_adjusted: tally.adjusted })
}

/// `q_c = p_c / p_cf_c`, renormalized.
pub fn calibrate(p: &[f64], p_cf: &[f64]) -> Result<LabelDistribution> {
    if p.len() != p_cf.len() {
        return Err(Error::Distribution(format!("length mismatch {} vs {}", p.len(), p_cf.len())));
    }
    if let Some(class) = p_cf.iter().position(|&q| q <= 0.0) {
        return Err(Error::ZeroContentFree { class });
    }
    let ratios: Vec<f64> = p.iter().zip(p_cf).map(|(a, b)| a / b).collect();
    let z: f64 = ratios.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::Distribution(format!("calibrated mass {z} cannot be normalized")));
    }
    LabelDistribution::new(ratios.into_iter().map(|r| r / z).collect(), Method::Calibration)
}

pub fn predict_direct<S: Scorer + ?Sized>(
    scorer: &S,
    ctx: &PromptContext<'_>,
    test_text: &str,
) -> Result<LabelDistribution> {
    predict(Method::Direct, scorer, ctx, test_text, &[]).map(|p| p.dist)
}

pub fn predict_channel<S: Scorer + ?Sized>(
    scorer: &S,
    ctx: &PromptContext<'_>,
    test_text: &str,
) -> Result<LabelDistribution> {
    predict(Method::Channel, scorer, ctx, test_text, &[]).map(|p| p.dist)
}

pub fn predict_calibrated<S: Scorer + ?Sized>(
    scorer: &S,
    ctx: &PromptContext<'_>,
    test_text: &str,
    cf_tokens: &[String],
) -> Result<LabelDistribution> {
    predict(Method::Calibration, scorer, ctx, test_text, cf_tokens).map(|p| p.dist)
}
