//! The numeric core: Pass@1, token efficiency, reasoning efficiency,
//! scaling references, exponent fitting, win rates, and aggregate deltas.
//!
//! Internal computation runs at full precision; display rounding (Pass@1 to
//! 1 d.p., tokens to integers, efficiencies to 2 d.p.) happens only at the
//! rendering boundary — and in win-rate tie detection, which deliberately
//! compares at display precision because published tables are the
//! comparison substrate.

use std::collections::BTreeMap;

use crate::domain::{DatasetTag, EfficiencyRow, ScalingParams, Strategy, Verdict};
use crate::error::{Error, Result};

/// The four reported metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    PassAt1,
    Tokens,
    Tau,
    Eta,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] =
        [MetricKind::PassAt1, MetricKind::Tokens, MetricKind::Tau, MetricKind::Eta];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Better {
    Higher,
    Lower,
}

/// Which direction wins for a metric. Tokens are a cost: lower wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricDirection {
    pub metric: MetricKind,
    pub better: Better,
}

impl MetricDirection {
    pub fn canonical() -> [MetricDirection; 4] {
        [
            MetricDirection { metric: MetricKind::PassAt1, better: Better::Higher },
            MetricDirection { metric: MetricKind::Tokens, better: Better::Lower },
            MetricDirection { metric: MetricKind::Tau, better: Better::Higher },
            MetricDirection { metric: MetricKind::Eta, better: Better::Higher },
        ]
    }
}

/// Pass@1 in percent over a verdict list. Unverifiable counts as not correct.
pub fn pass_at_1(verdicts: &[Verdict]) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(Error::MetricInput("pass_at_1 over an empty verdict list".into()));
    }
    let correct = verdicts.iter().filter(|v| **v == Verdict::Correct).count();
    Ok(100.0 * correct as f64 / verdicts.len() as f64)
}

/// Token efficiency: accuracy percentage points per 100 generated tokens.
pub fn token_efficiency(pass_pct: f64, mean_tokens: f64) -> Result<f64> {
    if mean_tokens <= 0.0 {
        return Err(Error::MetricInput(format!(
            "token_efficiency needs mean_tokens > 0, got {mean_tokens}"
        )));
    }
    Ok(100.0 * pass_pct / mean_tokens)
}

/// Reasoning efficiency in percent: the model's token efficiency relative to
/// the instruct baseline's. 100 means parity.
pub fn reasoning_efficiency(tau_reasoning: f64, tau_instruct: f64) -> Result<f64> {
    if tau_instruct <= 0.0 {
        return Err(Error::MetricInput(format!(
            "reasoning_efficiency needs a positive baseline, got {tau_instruct}"
        )));
    }
    Ok(100.0 * tau_reasoning / tau_instruct)
}

/// Predicted reasoning efficiency (percent) at a given cost ratio under the
/// sub-linear scaling hypothesis, for either exponent convention.
pub fn scaling_reference(cost_ratio: f64, params: ScalingParams) -> Result<f64> {
    if cost_ratio <= 0.0 {
        return Err(Error::MetricInput(format!(
            "scaling_reference needs cost_ratio > 0, got {cost_ratio}"
        )));
    }
    let e = match params.exponent_convention {
        crate::domain::ExponentConvention::Beta => params.exponent_beta,
        crate::domain::ExponentConvention::BetaMinusOne => params.exponent_beta - 1.0,
    };
    Ok(100.0 * cost_ratio.powf(e))
}

/// Fitted power-law exponent and the sum of squared log-residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentFit {
    pub exponent: f64,
    pub residual: f64,
}

/// Least-squares slope of log(eta/100) against log(cost_ratio), through the
/// origin (a ratio of 1 must map to parity).
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<ExponentFit> {
    let mut distinct: Vec<f64> = Vec::new();
    for &(ratio, eta_pct) in points {
        if ratio <= 0.0 || eta_pct <= 0.0 {
            return Err(Error::MetricInput(format!(
                "fit_exponent needs positive (ratio, eta) pairs, got ({ratio}, {eta_pct})"
            )));
        }
        if !distinct.iter().any(|r| r == &ratio) {
            distinct.push(ratio);
        }
    }
    if distinct.len() < 2 {
        return Err(Error::MetricInput(
            "fit_exponent needs at least 2 points with distinct ratios".into(),
        ));
    }
    let mut sum_xy = 0.0;
    let mut sum_xx = 0.0;
    for &(ratio, eta_pct) in points {
        let x = ratio.ln();
        let y = (eta_pct / 100.0).ln();
        sum_xy += x * y;
        sum_xx += x * x;
    }
    if sum_xx == 0.0 {
        return Err(Error::MetricInput(
            "fit_exponent needs at least one ratio different from 1".into(),
        ));
    }
    let exponent = sum_xy / sum_xx;
    let residual: f64 = points
        .iter()
        .map(|&(ratio, eta_pct)| {
            let r = (eta_pct / 100.0).ln() - exponent * ratio.ln();
            r * r
        })
        .sum();
    Ok(ExponentFit { exponent, residual })
}

/// Win-rate points for one target strategy over a comparison set.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WinRateResult {
    /// Strict wins count 1.0, ties for best 0.5.
    pub points_won: f64,
    pub points_total: usize,
    pub rate_pct: f64,
}

/// Round a metric value to its display precision, as a scaled integer so tie
/// detection is exact.
fn rendered_units(metric: MetricKind, value: f64) -> i64 {
    let scale = match metric {
        MetricKind::PassAt1 => 10.0,
        MetricKind::Tokens => 1.0,
        MetricKind::Tau | MetricKind::Eta => 100.0,
    };
    (value * scale).round() as i64
}

/// Render a metric value the way reports display it.
pub fn render_metric(metric: MetricKind, value: f64) -> String {
    match metric {
        MetricKind::PassAt1 => format!("{value:.1}"),
        MetricKind::Tokens => format!("{:.0}", value),
        MetricKind::Tau | MetricKind::Eta => format!("{value:.2}"),
    }
}

fn metric_value(row: &EfficiencyRow, metric: MetricKind) -> Option<f64> {
    match metric {
        MetricKind::PassAt1 => Some(row.pass_at_1_pct),
        MetricKind::Tokens => Some(row.mean_tokens),
        MetricKind::Tau => Some(row.token_efficiency),
        MetricKind::Eta => row.reasoning_efficiency_pct,
    }
}

/// Score `target` against `comparison` over one dataset's rows.
///
/// One evaluation point per (model block, metric), where a block is a model
/// label that carries the target strategy. The target earns 1.0 when
/// strictly best in the metric's direction among the comparison strategies,
/// 0.5 when tied for best at display precision, else 0. Every comparison
/// cell must be present in every block.
pub fn win_rate(
    rows: &[EfficiencyRow],
    target: Strategy,
    comparison: &[Strategy],
    directions: &[MetricDirection; 4],
) -> Result<WinRateResult> {
    if !comparison.contains(&target) {
        return Err(Error::MetricInput(
            "win_rate comparison set must include the target strategy".into(),
        ));
    }
    // block label -> strategy -> row
    let mut blocks: BTreeMap<&str, BTreeMap<Strategy, &EfficiencyRow>> = BTreeMap::new();
    for row in rows {
        blocks.entry(row.model_label.as_str()).or_default().insert(row.strategy, row);
    }
    blocks.retain(|_, cells| cells.contains_key(&target));
    if blocks.is_empty() {
        return Err(Error::MetricInput(format!(
            "win_rate found no block containing the target strategy `{target}`"
        )));
    }

    let mut points_won = 0.0;
    let mut points_total = 0usize;
    for (label, cells) in &blocks {
        for strategy in comparison {
            if !cells.contains_key(strategy) {
                return Err(Error::MissingCell {
                    block: label.to_string(),
                    strategy: strategy.to_string(),
                });
            }
        }
        for direction in directions {
            let values: Vec<(Strategy, i64)> = comparison
                .iter()
                .map(|s| {
                    let row = cells[s];
                    let value = metric_value(row, direction.metric).ok_or(Error::MissingCell {
                        block: label.to_string(),
                        strategy: s.to_string(),
                    })?;
                    Ok((*s, rendered_units(direction.metric, value)))
                })
                .collect::<Result<_>>()?;
            let best = match direction.better {
                Better::Higher => values.iter().map(|(_, v)| *v).max().unwrap(),
                Better::Lower => values.iter().map(|(_, v)| *v).min().unwrap(),
            };
            let target_value = values.iter().find(|(s, _)| *s == target).unwrap().1;
            let at_best = values.iter().filter(|(_, v)| *v == best).count();
            points_total += 1;
            if target_value == best {
                points_won += if at_best == 1 { 1.0 } else { 0.5 };
            }
        }
    }

    Ok(WinRateResult {
        points_won,
        points_total,
        rate_pct: 100.0 * points_won / points_total as f64,
    })
}

/// Field over which an aggregate delta is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaField {
    Tokens,
    Pass,
}

/// Mean percent change from `solo` to `cothink`, paired by
/// (model label, dataset).
pub fn aggregate_delta(
    cothink_rows: &[EfficiencyRow],
    solo_rows: &[EfficiencyRow],
    field: DeltaField,
) -> Result<f64> {
    if cothink_rows.is_empty() {
        return Err(Error::MetricInput("aggregate_delta over no rows".into()));
    }
    let solo_by_key: BTreeMap<(&str, &DatasetTag), &EfficiencyRow> = solo_rows
        .iter()
        .map(|r| ((r.model_label.as_str(), &r.dataset), r))
        .collect();
    let mut sum = 0.0;
    for row in cothink_rows {
        let solo = solo_by_key
            .get(&(row.model_label.as_str(), &row.dataset))
            .ok_or_else(|| Error::UnpairedRow {
                model: row.model_label.clone(),
                dataset: row.dataset.to_string(),
            })?;
        let (new, old) = match field {
            DeltaField::Tokens => (row.mean_tokens, solo.mean_tokens),
            DeltaField::Pass => (row.pass_at_1_pct, solo.pass_at_1_pct),
        };
        if old <= 0.0 {
            return Err(Error::MetricInput(format!(
                "aggregate_delta baseline value must be positive, got {old}"
            )));
        }
        sum += 100.0 * (new - old) / old;
    }
    Ok(sum / cothink_rows.len() as f64)
}
