use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::meta::EffectEstimate;
use crate::dataset::Dataset;
use crate::error::{check_len, Error, Result};
use crate::metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Pehe,
    Ate,
    Att,
    Policy,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [MetricKind::Pehe, MetricKind::Ate, MetricKind::Att, MetricKind::Policy];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Pehe => "pehe",
            MetricKind::Ate => "ate",
            MetricKind::Att => "att",
            MetricKind::Policy => "policy",
        }
    }

    /// Table header label.
    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Pehe => "ε_PEHE",
            MetricKind::Ate => "ε_ATE",
            MetricKind::Att => "ε_ATT",
            MetricKind::Policy => "R_pol",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown metric `{s}`")))
    }
}

/// An estimate lined up with the evaluation rows' ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInputs {
    pub ite_hat: Vec<f64>,
    pub y1: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    pub treatment: Vec<bool>,
    pub outcome: Vec<f64>,
    pub experimental: Option<Vec<bool>>,
}

pub fn evaluate(estimate: &EffectEstimate, truth: &Dataset) -> Result<EvalInputs> {
    check_len(truth.n(), estimate.ite_hat.len())?;
    let po = truth.potential_outcomes();
    Ok(EvalInputs {
        ite_hat: estimate.ite_hat.clone(),
        y1: po.map(|p| p.y1.clone()),
        y0: po.map(|p| p.y0.clone()),
        treatment: truth.treatment().to_vec(),
        outcome: truth.outcome().to_vec(),
        experimental: truth.experimental().map(<[bool]>::to_vec),
    })
}

impl EvalInputs {
    fn potential(&self, metric: &'static str) -> Result<(&[f64], &[f64])> {
        match (&self.y1, &self.y0) {
            (Some(y1), Some(y0)) => Ok((y1, y0)),
            _ => Err(Error::MissingGroundTruth(metric)),
        }
    }

    pub fn metric(&self, kind: MetricKind) -> Result<f64> {
        let zeros = vec![0.0; self.ite_hat.len()];
        match kind {
            MetricKind::Pehe => {
                let (y1, y0) = self.potential("pehe")?;
                metrics::pehe(&self.ite_hat, &zeros, y1, y0)
            }
            MetricKind::Ate => {
                let (y1, y0) = self.potential("ate")?;
                metrics::ate_error(&self.ite_hat, &zeros, y1, y0)
            }
            MetricKind::Att => {
                let e = self.experimental.as_ref().ok_or(Error::MissingGroundTruth("att"))?;
                let treated: Vec<usize> = (0..self.treatment.len()).filter(|&i| self.treatment[i]).collect();
                let controls: Vec<usize> = (0..self.treatment.len())
                    .filter(|&i| !self.treatment[i] && e[i])
                    .collect();
                let ite_t: Vec<f64> = treated.iter().map(|&i| self.ite_hat[i]).collect();
                metrics::att_error(&ite_t, &self.outcome, &treated, &controls)
            }
            MetricKind::Policy => {
                if let Ok((y1, y0)) = self.potential("policy") {
                    return metrics::policy_risk(&self.ite_hat, y1, y0);
                }
                let e = self.experimental.as_ref().ok_or(Error::MissingGroundTruth("policy"))?;
                let rows: Vec<usize> = (0..e.len()).filter(|&i| e[i]).collect();
                let ite: Vec<f64> = rows.iter().map(|&i| self.ite_hat[i]).collect();
                let t: Vec<bool> = rows.iter().map(|&i| self.treatment[i]).collect();
                let y: Vec<f64> = rows.iter().map(|&i| self.outcome[i]).collect();
                metrics::policy_risk_experimental(&ite, &t, &y)
            }
        }
    }
}
