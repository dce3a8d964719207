//! Signal selection, trade simulation, and the evaluation report.
//!
//! Metrics that are undefined on the given run (no trades, no losing
//! trades, zero volatility) stay `None` end to end and serialize as the
//! literal `undefined` — they are never silently replaced by 0.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Trading days per year used for annualization.
const TRADING_DAYS: f64 = 250.0;
const MS_PER_DAY: i64 = 86_400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Long,
    Short,
}

/// A candidate trade: enter at `record_index`, direction per `side`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeSignal {
    pub record_index: usize,
    pub side: Side,
    pub probability: f64,
}

/// An executed round trip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trade {
    pub entry_index: usize,
    pub entry_price: f64,
    pub exit_price: f64,
    /// Signed return of the round trip; short trades gain when price falls.
    pub ret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub trades: Vec<Trade>,
    /// Signals whose exit would fall past the end of the price series.
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoreMetrics {
    /// Share of trades returning strictly more than the profit threshold.
    pub precision: Option<f64>,
    /// Mean winning return over the magnitude of the mean losing return.
    pub win_loss_ratio: Option<f64>,
    pub average_return: Option<f64>,
    pub n_transactions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinancialMetrics {
    pub annual_return: f64,
    pub winning_percentage: f64,
    pub annual_volatility: f64,
    /// Zero or negative: the most severe relative peak-to-trough decline.
    pub max_drawdown: f64,
    /// `None` when volatility is zero.
    pub sharpe_ratio: Option<f64>,
}

/// Everything the report file carries, in one flat struct.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestReport {
    pub precision: Option<f64>,
    pub wlr: Option<f64>,
    pub avg_return: Option<f64>,
    pub n_transactions: usize,
    pub ar: Option<f64>,
    pub wp: Option<f64>,
    pub av: Option<f64>,
    pub mdd: Option<f64>,
    pub sr: Option<f64>,
}

/// The `n` indices with the highest probability; ties broken toward the
/// earlier index. Fewer than `n` inputs yield all of them.
pub fn top_n_signals(probabilities: &[f64], n: usize, side: Side) -> Result<Vec<TradeSignal>> {
    if n < 1 {
        return Err(Error::param("top_n", "must be at least 1"));
    }
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        probabilities[b]
            .total_cmp(&probabilities[a])
            .then(a.cmp(&b))
    });
    order.truncate(n);
    Ok(order
        .into_iter()
        .map(|record_index| TradeSignal {
            record_index,
            side,
            probability: probabilities[record_index],
        })
        .collect())
}

/// Executes each signal as a fixed-horizon round trip against the price
/// series. Signals too close to the end of the series are dropped and
/// counted, not errored.
pub fn simulate(signals: &[TradeSignal], prices: &[f64], horizon: usize) -> Result<SimOutcome> {
    if horizon < 1 {
        return Err(Error::param("horizon", "must be at least 1"));
    }
    if let Some(&bad) = prices.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::param(
            "prices",
            format!("prices must be finite and positive, got {bad}"),
        ));
    }
    let mut trades = Vec::new();
    let mut dropped = 0;
    for signal in signals {
        let entry = signal.record_index;
        let Some(exit) = entry.checked_add(horizon).filter(|&e| e < prices.len()) else {
            dropped += 1;
            continue;
        };
        let entry_price = prices[entry];
        let exit_price = prices[exit];
        let ret = match signal.side {
            Side::Long => exit_price / entry_price - 1.0,
            Side::Short => entry_price / exit_price - 1.0,
        };
        trades.push(Trade {
            entry_index: entry,
            entry_price,
            exit_price,
            ret,
        });
    }
    Ok(SimOutcome { trades, dropped })
}

/// Per-trade quality metrics. With no trades every ratio is `None`; with
/// no losing trades the win/loss ratio is `None`; with losing trades but
/// no winners it is 0.
pub fn core_metrics(trades: &[Trade], profit_threshold: f64) -> CoreMetrics {
    let n = trades.len();
    if n == 0 {
        return CoreMetrics {
            precision: None,
            win_loss_ratio: None,
            average_return: None,
            n_transactions: 0,
        };
    }
    let profitable = trades.iter().filter(|t| t.ret > profit_threshold).count();
    let precision = profitable as f64 / n as f64;

    let wins: Vec<f64> = trades.iter().map(|t| t.ret).filter(|&r| r > 0.0).collect();
    let losses: Vec<f64> = trades.iter().map(|t| t.ret).filter(|&r| r < 0.0).collect();
    let win_loss_ratio = if losses.is_empty() {
        None
    } else {
        let mean_win = if wins.is_empty() {
            0.0
        } else {
            wins.iter().sum::<f64>() / wins.len() as f64
        };
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        Some(mean_win / mean_loss.abs())
    };
    let average_return = trades.iter().map(|t| t.ret).sum::<f64>() / n as f64;

    CoreMetrics {
        precision: Some(precision),
        win_loss_ratio,
        average_return: Some(average_return),
        n_transactions: n,
    }
}

/// Sums trade returns that share a calendar day (UTC, from epoch
/// milliseconds) and returns the per-day totals in chronological order.
pub fn group_daily_returns(timestamps_ms: &[i64], returns: &[f64]) -> Result<Vec<f64>> {
    if timestamps_ms.len() != returns.len() {
        return Err(Error::LengthMismatch {
            left: timestamps_ms.len(),
            right: returns.len(),
        });
    }
    let mut by_day: BTreeMap<i64, f64> = BTreeMap::new();
    for (&ts, &ret) in timestamps_ms.iter().zip(returns) {
        *by_day.entry(ts.div_euclid(MS_PER_DAY)).or_insert(0.0) += ret;
    }
    Ok(by_day.into_values().collect())
}

fn clean_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Annualized portfolio metrics over a series of daily returns.
/// `total_return` is the compounded return of the whole run.
pub fn financial_metrics(
    daily_returns: &[f64],
    total_return: f64,
    risk_free: f64,
) -> Result<FinancialMetrics> {
    let l = daily_returns.len();
    if l == 0 {
        return Err(Error::EmptyInput {
            context: "daily returns",
        });
    }
    if !(1.0 + total_return > 0.0) {
        return Err(Error::numeric(format!(
            "total return {total_return} wipes out the equity; annualization undefined"
        )));
    }

    let annual_return = (1.0 + total_return).powf(TRADING_DAYS / l as f64) - 1.0;
    let winning_days = daily_returns.iter().filter(|&&r| r > 0.0).count();
    let winning_percentage = winning_days as f64 / l as f64;

    let mean = daily_returns.iter().sum::<f64>() / l as f64;
    let variance = daily_returns
        .iter()
        .map(|&r| (r - mean) * (r - mean))
        .sum::<f64>()
        / l as f64;
    let annual_volatility = TRADING_DAYS.sqrt() * variance.sqrt();

    let mut equity = 1.0;
    let mut peak = 1.0;
    let mut worst = 0.0f64;
    for &r in daily_returns {
        let growth = 1.0 + r;
        if !(growth > 0.0) {
            return Err(Error::numeric(format!(
                "daily return {r} wipes out the equity; drawdown undefined"
            )));
        }
        equity *= growth;
        if equity > peak {
            peak = equity;
        }
        let drawdown = (peak - equity) / peak;
        if drawdown > worst {
            worst = drawdown;
        }
    }
    let max_drawdown = clean_zero(-worst);

    let sharpe_ratio = if annual_volatility == 0.0 {
        None
    } else {
        Some((mean * TRADING_DAYS - risk_free) / annual_volatility)
    };

    Ok(FinancialMetrics {
        annual_return,
        winning_percentage,
        annual_volatility,
        max_drawdown,
        sharpe_ratio,
    })
}

/// Assembles the flat report. `financial` is `None` when there were no
/// trading days at all.
pub fn build_report(core: &CoreMetrics, financial: Option<&FinancialMetrics>) -> BacktestReport {
    BacktestReport {
        precision: core.precision,
        wlr: core.win_loss_ratio,
        avg_return: core.average_return,
        n_transactions: core.n_transactions,
        ar: financial.map(|f| f.annual_return),
        wp: financial.map(|f| f.winning_percentage),
        av: financial.map(|f| f.annual_volatility),
        mdd: financial.map(|f| f.max_drawdown),
        sr: financial.and_then(|f| f.sharpe_ratio),
    }
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(v) => clean_zero(v).to_string(),
        None => "undefined".to_string(),
    }
}

/// Renders the report with one `key: value` line per metric, in a fixed
/// key order. Shortest round-trip float formatting keeps the output
/// byte-stable across runs.
pub fn format_report(report: &BacktestReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("precision: {}\n", fmt_value(report.precision)));
    out.push_str(&format!("wlr: {}\n", fmt_value(report.wlr)));
    out.push_str(&format!("avg_return: {}\n", fmt_value(report.avg_return)));
    out.push_str(&format!("n_transactions: {}\n", report.n_transactions));
    out.push_str(&format!("ar: {}\n", fmt_value(report.ar)));
    out.push_str(&format!("wp: {}\n", fmt_value(report.wp)));
    out.push_str(&format!("av: {}\n", fmt_value(report.av)));
    out.push_str(&format!("mdd: {}\n", fmt_value(report.mdd)));
    out.push_str(&format!("sr: {}\n", fmt_value(report.sr)));
    out
}

/// Parses a report produced by [`format_report`], accepting the same key
/// order it writes.
pub fn parse_report(text: &str) -> Result<BacktestReport> {
    const KEYS: [&str; 9] = [
        "precision",
        "wlr",
        "avg_return",
        "n_transactions",
        "ar",
        "wp",
        "av",
        "mdd",
        "sr",
    ];
    let mut values: Vec<&str> = Vec::with_capacity(KEYS.len());
    let mut lines = text.lines();
    for (row, key) in KEYS.iter().enumerate() {
        let line = lines.next().ok_or(Error::ParseCell {
            row: row + 1,
            column: (*key).into(),
            value: "<missing line>".into(),
        })?;
        let value = line
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(": "))
            .ok_or_else(|| Error::ParseCell {
                row: row + 1,
                column: (*key).into(),
                value: line.to_string(),
            })?;
        values.push(value);
    }
    fn opt(raw: &str, row: usize, key: &str) -> Result<Option<f64>> {
        if raw == "undefined" {
            return Ok(None);
        }
        raw.parse::<f64>().map(Some).map_err(|_| Error::ParseCell {
            row,
            column: key.into(),
            value: raw.to_string(),
        })
    }
    let n_transactions: usize = values[3].parse().map_err(|_| Error::ParseCell {
        row: 4,
        column: "n_transactions".into(),
        value: values[3].to_string(),
    })?;
    Ok(BacktestReport {
        precision: opt(values[0], 1, "precision")?,
        wlr: opt(values[1], 2, "wlr")?,
        avg_return: opt(values[2], 3, "avg_return")?,
        n_transactions,
        ar: opt(values[4], 5, "ar")?,
        wp: opt(values[5], 6, "wp")?,
        av: opt(values[6], 7, "av")?,
        mdd: opt(values[7], 8, "mdd")?,
        sr: opt(values[8], 9, "sr")?,
    })
}

/// Writes the formatted report to `path`. The parent directory must exist;
/// a missing directory surfaces as an IO error naming the path.
pub fn emit_report(report: &BacktestReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_report(report))
        .map_err(|e| Error::io(format!("write `{}`", path.display()), e))
}
