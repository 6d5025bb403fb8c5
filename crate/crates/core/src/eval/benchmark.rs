//! Method comparison on the held-out campaigns and the pctr-disturbance sweep.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::overlap;
use super::metrics::{pearson_matrix, ratio_p, weighted_mape, Metric};
use crate::calibrate::{CalibrationSample, Calibrator, Indicator};
use crate::error::{Error, Result};
use crate::replay::{replay_with, BiddingType, Disturbed, LogIndex, ReplayResult};

pub const RATIO_P: f64 = 0.5;

/// Disturbance levels swept by default: −20% to +20% in 5% steps.
pub const DEFAULT_DISTURBANCES: [f64; 9] = [-0.2, -0.15, -0.1, -0.05, 0.0, 0.05, 0.1, 0.15, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "REPLAY")]
    Replay,
    #[serde(rename = "MTL_1")]
    Mtl1,
    #[serde(rename = "MTL_N")]
    MtlN,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Replay => "REPLAY",
            Method::Mtl1 => "MTL_1",
            Method::MtlN => "MTL_N",
        }
    }
}

/// Campaign group a report row aggregates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Manual,
    Automatic,
    All,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Manual, Group::Automatic, Group::All];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Manual => "manual",
            Group::Automatic => "automatic",
            Group::All => "all",
        }
    }

    pub fn contains(self, b: BiddingType) -> bool {
        match self {
            Group::Manual => b.is_manual(),
            Group::Automatic => !b.is_manual(),
            Group::All => true,
        }
    }
}

/// Per-campaign forecasts of every method, in `Indicator::ALL` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignForecasts {
    pub campaign_id: u64,
    pub bidding_type: BiddingType,
    pub budget: f64,
    pub truth: [f64; 3],
    pub forecasts: Vec<(Method, [f64; 3])>,
}

impl CampaignForecasts {
    pub fn of(&self, m: Method) -> Option<[f64; 3]> {
        self.forecasts.iter().find(|(k, _)| *k == m).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub group: Group,
    pub indicator: Indicator,
    /// `None` when every campaign in the group has zero truth.
    pub mape: Option<Metric>,
    pub ratio: Option<Metric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub campaigns: Vec<CampaignForecasts>,
}

fn replay_array(r: &ReplayResult<f64>) -> [f64; 3] {
    Indicator::ALL.map(|i| i.of_replay(r))
}

fn forecasts_for(
    samples: &[CalibrationSample<f64>],
    replays: &[ReplayResult<f64>],
    calibrators: &[(Method, &Calibrator<f64>)],
) -> Result<Vec<CampaignForecasts>> {
    let items: Vec<_> = samples.iter().zip(replays).map(|(s, r)| (&s.criteria, r)).collect();
    let mut per_method = Vec::with_capacity(calibrators.len());
    for (m, cal) in calibrators {
        let f = cal.forecast_batch(&items)?;
        per_method.push((*m, f));
    }
    Ok(samples
        .iter()
        .zip(replays)
        .enumerate()
        .map(|(i, (s, r))| {
            let mut forecasts = vec![(Method::Replay, replay_array(r))];
            for (m, f) in &per_method {
                forecasts.push((*m, Indicator::ALL.map(|ind| f[i].get(ind))));
            }
            CampaignForecasts {
                campaign_id: s.campaign_id,
                bidding_type: s.criteria.bidding_type,
                budget: s.criteria.budget,
                truth: s.truth.as_array(),
                forecasts,
            }
        })
        .collect())
}

fn metric_or_none(r: Result<Metric>) -> Result<Option<Metric>> {
    match r {
        Ok(m) => Ok(Some(m)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// mape and ratio for one method, indicator and campaign subset.
pub fn score(
    campaigns: &[&CampaignForecasts],
    method: Method,
    indicator: Indicator,
) -> Result<(Option<Metric>, Option<Metric>)> {
    let k = Indicator::ALL.iter().position(|i| *i == indicator).unwrap_or(0);
    let mut pred = Vec::with_capacity(campaigns.len());
    for c in campaigns {
        let f = c
            .of(method)
            .ok_or_else(|| Error::Contract(format!("no {} forecast", method.as_str())))?;
        pred.push(f[k]);
    }
    let truth: Vec<f64> = campaigns.iter().map(|c| c.truth[k]).collect();
    let cost: Vec<f64> = campaigns.iter().map(|c| c.truth[2]).collect();
    Ok((
        metric_or_none(weighted_mape(&pred, &truth, &cost))?,
        metric_or_none(ratio_p(&pred, &truth, RATIO_P))?,
    ))
}

fn rows_for(campaigns: &[CampaignForecasts], methods: &[Method], groups: &[Group]) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for &method in methods {
        for &group in groups {
            let subset: Vec<&CampaignForecasts> =
                campaigns.iter().filter(|c| group.contains(c.bidding_type)).collect();
            for indicator in Indicator::ALL {
                let (mape, ratio) = if subset.is_empty() { (None, None) } else { score(&subset, method, indicator)? };
                rows.push(ReportRow { method, group, indicator, mape, ratio });
            }
        }
    }
    Ok(rows)
}

/// Scores raw replay and each calibrator on the evaluation campaigns.
///
/// `train` lists every campaign the calibrators saw (training and
/// validation); sharing any campaign with `eval` is an error.
pub fn benchmark(
    eval: &[CalibrationSample<f64>],
    train: &[CalibrationSample<f64>],
    calibrators: &[(Method, &Calibrator<f64>)],
) -> Result<EvalReport> {
    let shared = overlap(train, eval);
    if shared > 0 {
        return Err(Error::OverlappingSplits(shared));
    }
    if eval.is_empty() {
        return Err(Error::InsufficientData("empty evaluation split".into()));
    }
    let replays: Vec<ReplayResult<f64>> = eval.iter().map(|s| s.replay).collect();
    let campaigns = forecasts_for(eval, &replays, calibrators)?;
    let mut methods = vec![Method::Replay];
    methods.extend(calibrators.iter().map(|(m, _)| *m));
    let rows = rows_for(&campaigns, &methods, &Group::ALL)?;
    Ok(EvalReport { rows, campaigns })
}

/// Pearson correlations between the three labels, in `Indicator::ALL` order.
pub fn label_correlations(samples: &[CalibrationSample<f64>]) -> Result<Vec<Vec<f64>>> {
    let cols: Vec<Vec<f64>> = Indicator::ALL
        .iter()
        .map(|i| samples.iter().map(|s| i.of(&s.truth)).collect())
        .collect();
    pearson_matrix(&cols)
}

fn fmt_opt(m: &Option<Metric>) -> String {
    m.map_or_else(|| "".to_string(), |m| format!("{:.6}", m.value))
}

impl EvalReport {
    pub fn row(&self, method: Method, group: Group, indicator: Indicator) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.group == group && r.indicator == indicator)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,option,indicator,mape,ratio_05,used,excluded\n");
        for r in &self.rows {
            let (used, excluded) = r.mape.map_or((0, 0), |m| (m.used, m.excluded));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.method.as_str(),
                r.group.as_str(),
                r.indicator.as_str(),
                fmt_opt(&r.mape),
                fmt_opt(&r.ratio),
                used,
                excluded
            );
        }
        s
    }

    /// Table with one line per method and bidding group. Automatic cost is
    /// shown as "/" because budget-constrained campaigns spend their budget
    /// and their cost is passed through uncalibrated.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| method | option | #impression mape | #impression ratio_0.5 | #click mape | #click ratio_0.5 | #cost mape | #cost ratio_0.5 |\n");
        s.push_str("|---|---|---|---|---|---|---|---|\n");
        let mut methods: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        methods.dedup();
        for group in [Group::Manual, Group::Automatic] {
            for &m in &methods {
                let _ = write!(s, "| {} | {} |", m.as_str(), group.as_str());
                for ind in Indicator::ALL {
                    let row = self.row(m, group, ind);
                    if group == Group::Automatic && ind == Indicator::Cost {
                        s.push_str(" / | / |");
                        continue;
                    }
                    let cell = |x: Option<Metric>| x.map_or("n/a".to_string(), |v| format!("{:.4}", v.value));
                    let _ = write!(
                        s,
                        " {} | {} |",
                        cell(row.and_then(|r| r.mape)),
                        cell(row.and_then(|r| r.ratio))
                    );
                }
                s.push('\n');
            }
        }
        if let Some(m) = self.bcb_cost_mape() {
            let _ = writeln!(s, "\nBudget-bound cost of BCB campaigns (replay cost capped at budget): mape {:.4}.", m.value);
        }
        let counts = |g: Group| self.campaigns.iter().filter(|c| g.contains(c.bidding_type)).count();
        let _ = writeln!(
            s,
            "\nEvaluation campaigns: {} manual, {} automatic. CPA and MCB campaigns are synthetic additions absent from the production collection.",
            counts(Group::Manual),
            counts(Group::Automatic)
        );
        s
    }

    /// Cost mape of BCB campaigns, where every method forecasts the
    /// budget-capped replay cost.
    pub fn bcb_cost_mape(&self) -> Option<Metric> {
        let subset: Vec<&CampaignForecasts> =
            self.campaigns.iter().filter(|c| c.bidding_type == BiddingType::Bcb).collect();
        if subset.is_empty() {
            return None;
        }
        score(&subset, Method::Replay, Indicator::Cost).ok().and_then(|x| x.0)
    }
}

pub fn pearson_csv(m: &[Vec<f64>]) -> String {
    let mut s = String::from("indicator,impression,click,cost\n");
    for (ind, row) in Indicator::ALL.iter().zip(m) {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", ind.as_str(), row[0], row[1], row[2]);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: f64,
    pub method: Method,
    pub indicator: Indicator,
    pub mape: Option<Metric>,
    pub ratio: Option<Metric>,
}

/// Multiplies every pctr by `1 + d`, re-runs replay and the calibrator on
/// the evaluation campaigns and scores both over all campaigns.
///
/// BCB campaigns must keep impression and cost bit-identical and scale
/// click by exactly `1 + d`; any deviation is reported as an error.
pub fn disturbance_sweep(
    eval: &[CalibrationSample<f64>],
    index: &LogIndex<f64>,
    calibrator: &Calibrator<f64>,
    ds: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut out = Vec::new();
    for &d in ds {
        if !(d.is_finite() && d > -1.0) {
            return Err(Error::Config(format!("disturbance {d} must exceed -1")));
        }
        let source = Disturbed { inner: index.urf(), factor: 1.0 + d };
        let replays: Vec<ReplayResult<f64>> = eval
            .par_iter()
            .map(|s| replay_with(&s.criteria, index, &source))
            .collect::<Result<_>>()?;
        for (s, r) in eval.iter().zip(&replays) {
            if s.criteria.bidding_type != BiddingType::Bcb {
                continue;
            }
            let base = &s.replay;
            let click_ok = (r.click - base.click * (1.0 + d)).abs() <= 1e-9 * base.click.abs().max(1.0);
            if r.impression != base.impression || r.cost != base.cost || !click_ok {
                return Err(Error::Contract(format!(
                    "BCB campaign {} not invariant under pctr factor {}",
                    s.campaign_id,
                    1.0 + d
                )));
            }
        }
        let campaigns = forecasts_for(eval, &replays, &[(Method::MtlN, calibrator)])?;
        for row in rows_for(&campaigns, &[Method::Replay, Method::MtlN], &[Group::All])? {
            out.push(SweepRow { d, method: row.method, indicator: row.indicator, mape: row.mape, ratio: row.ratio });
        }
    }
    Ok(out)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("d,method,indicator,mape,ratio_05\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:.2},{},{},{},{}",
            r.d,
            r.method.as_str(),
            r.indicator.as_str(),
            fmt_opt(&r.mape),
            fmt_opt(&r.ratio)
        );
    }
    s
}
