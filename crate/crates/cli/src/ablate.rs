//! `dap ablate`: γ or t_stop sweeps with per-(value, seed) rows, a curve
//! plot and a summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use dap_core::eval::{mean_std, EvalReport};
use dap_core::GuidanceConfig;

use crate::config::MethodChoice;
use crate::context::Workspace;
use crate::distill::{produce, Job};
use crate::evaluate::evaluate_set;
use crate::svg::{LineChart, Series};
use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Gamma,
    TStop,
}

impl Sweep {
    pub fn as_str(self) -> &'static str {
        match self {
            Sweep::Gamma => "gamma",
            Sweep::TStop => "t_stop",
        }
    }
}

impl FromStr for Sweep {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        match s {
            "gamma" => Ok(Sweep::Gamma),
            "t_stop" | "t-stop" => Ok(Sweep::TStop),
            other => Err(UsageError(format!("unknown sweep '{other}' (expected gamma or t_stop)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Row {
    pub value: f64,
    pub ipc: usize,
    pub seed: u64,
    pub guided_min: usize,
    pub guided_max: usize,
    pub seconds: f64,
    pub report: EvalReport,
}

impl Row {
    pub fn family_mean(&self) -> f64 {
        self.report.accuracy.iter().map(|a| a.mean).sum::<f64>() / self.report.accuracy.len() as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    pub value: f64,
    pub ipc: usize,
    /// Mean over seeds, per classifier.
    pub accuracy: BTreeMap<String, f64>,
    pub family_mean_accuracy: f64,
    pub representativeness: BTreeMap<usize, f64>,
    pub cov_trace: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub sweep: Sweep,
    pub seeds: Vec<u64>,
    pub points: Vec<PointSummary>,
    /// Value with the highest family-mean accuracy.
    pub best_value: BTreeMap<usize, f64>,
}

pub fn sweep_values(ws: &Workspace, sweep: Sweep) -> Vec<f64> {
    match sweep {
        Sweep::Gamma => ws.config.run.gamma_grid.clone(),
        Sweep::TStop => ws.config.t_stop_grid().into_iter().map(|t| t as f64).collect(),
    }
}

fn fmt_value(sweep: Sweep, v: f64) -> String {
    match sweep {
        Sweep::Gamma => format!("{v:?}"),
        Sweep::TStop => format!("{}", v as usize),
    }
}

pub fn run(ws: &Workspace, sweep: Sweep) -> anyhow::Result<Summary> {
    let score = ws.score()?;
    let classifiers = ws.config.classifiers()?;
    let base = ws.config.guidance_config();
    let values = sweep_values(ws, sweep);
    let mut units = Vec::new();
    for &ipc in &ws.config.run.ipc {
        for &v in &values {
            for &seed in &ws.config.run.seeds {
                units.push((v, ipc, seed));
            }
        }
    }
    // sampling runs one unit at a time so the recorded wall-clock is not
    // shared between units
    let mut sets = Vec::with_capacity(units.len());
    for &(v, ipc, seed) in &units {
        let cfg = match sweep {
            Sweep::Gamma => GuidanceConfig { gamma: v, ..base.clone() },
            Sweep::TStop => GuidanceConfig { t_stop: v as usize, ..base.clone() },
        };
        let job = Job { method: MethodChoice::Dap, ipc, seed, gamma: Some(cfg.gamma) };
        let (set, steps, seconds) = produce(ws, Some(&score), &job, &cfg)?;
        let all: Vec<usize> = steps.unwrap_or_default().into_values().flatten().collect();
        let (lo, hi) = (all.iter().copied().min().unwrap_or(0), all.iter().copied().max().unwrap_or(0));
        eprintln!("{}={} ipc={ipc} seed={seed}: {seconds:.3}s", sweep.as_str(), fmt_value(sweep, v));
        sets.push((set, lo, hi, seconds));
    }
    let reports = sets
        .par_iter()
        .map(|(set, ..)| evaluate_set(ws, set, &classifiers))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let rows: Vec<Row> = units
        .iter()
        .zip(sets)
        .zip(reports)
        .map(|((&(value, ipc, seed), (_, guided_min, guided_max, seconds)), report)| Row {
            value,
            ipc,
            seed,
            guided_min,
            guided_max,
            seconds,
            report,
        })
        .collect();

    let stem = format!("ablate_{}", sweep.as_str());
    std::fs::write(ws.path(&format!("{stem}.csv")), rows_csv(ws, sweep, &rows))?;
    std::fs::write(ws.path(&format!("{stem}_timing.csv")), timing_csv(sweep, &rows))?;
    let summary = summarize(ws, sweep, &values, &rows);
    std::fs::write(ws.path(&format!("{stem}.svg")), plot(ws, sweep, &values, &rows))?;
    std::fs::write(ws.path(&format!("{stem}_summary.json")), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

pub fn rows_csv(ws: &Workspace, sweep: Sweep, rows: &[Row]) -> String {
    let mut s = ws.csv_header();
    let Some(first) = rows.first() else { return s };
    let classes: Vec<usize> = first.report.representativeness.keys().copied().collect();
    let mut cols: Vec<String> = vec!["sweep", "value", "ipc", "seed", "guided_steps_min", "guided_steps_max"]
        .into_iter()
        .map(String::from)
        .collect();
    cols.extend(first.report.accuracy.iter().map(|a| format!("acc_{}", a.classifier)));
    cols.push("acc_family_mean".into());
    cols.push("mean_representativeness".into());
    cols.extend(classes.iter().map(|c| format!("rep_class{c}")));
    cols.extend(classes.iter().map(|c| format!("cov_trace_class{c}")));
    cols.extend(["mmd2".into(), "gauss_moment_distance".into()]);
    let _ = writeln!(s, "{}", cols.join(","));
    for r in rows {
        let mut f = vec![
            sweep.as_str().to_string(),
            fmt_value(sweep, r.value),
            r.ipc.to_string(),
            r.seed.to_string(),
            r.guided_min.to_string(),
            r.guided_max.to_string(),
        ];
        f.extend(r.report.accuracy.iter().map(|a| format!("{:?}", a.mean)));
        f.push(format!("{:?}", r.family_mean()));
        f.push(format!("{:?}", r.report.mean_representativeness()));
        f.extend(r.report.representativeness.values().map(|v| format!("{:?}", v.score)));
        let div = r.report.diversity.as_ref();
        f.extend(classes.iter().map(|c| {
            div.and_then(|d| d.per_class.get(c)).map(|d| format!("{:?}", d.cov_trace)).unwrap_or_default()
        }));
        f.push(div.map(|d| format!("{:?}", d.mmd2)).unwrap_or_default());
        f.push(div.map(|d| format!("{:?}", d.gauss_moment_distance)).unwrap_or_default());
        let _ = writeln!(s, "{}", f.join(","));
    }
    s
}

/// Wall-clock of the sampling stage; a log, so it carries no config hash.
pub fn timing_csv(sweep: Sweep, rows: &[Row]) -> String {
    let mut s = String::from("sweep,value,ipc,seed,seconds\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{:.6}", sweep.as_str(), fmt_value(sweep, r.value), r.ipc, r.seed, r.seconds);
    }
    s
}

fn avg(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn summarize(ws: &Workspace, sweep: Sweep, values: &[f64], rows: &[Row]) -> Summary {
    let mut points = Vec::new();
    let mut best_value = BTreeMap::new();
    for &ipc in &ws.config.run.ipc {
        let mut best: Option<(f64, f64)> = None;
        for &v in values {
            let sel: Vec<&Row> = rows.iter().filter(|r| r.ipc == ipc && r.value == v).collect();
            if sel.is_empty() {
                continue;
            }
            let first = &sel[0].report;
            let accuracy = first
                .accuracy
                .iter()
                .enumerate()
                .map(|(i, a)| (a.classifier.clone(), avg(sel.iter().map(|r| r.report.accuracy[i].mean))))
                .collect();
            let family = avg(sel.iter().map(|r| r.family_mean()));
            let representativeness = first
                .representativeness
                .keys()
                .map(|&c| (c, avg(sel.iter().map(|r| r.report.representativeness[&c].score))))
                .collect();
            let cov_trace = first
                .representativeness
                .keys()
                .filter_map(|&c| {
                    let traces: Option<Vec<f64>> = sel
                        .iter()
                        .map(|r| r.report.diversity.as_ref().and_then(|d| d.per_class.get(&c)).map(|d| d.cov_trace))
                        .collect();
                    traces.map(|t| (c, avg(t.into_iter())))
                })
                .collect();
            if best.is_none_or(|(_, b)| family > b) {
                best = Some((v, family));
            }
            points.push(PointSummary { value: v, ipc, accuracy, family_mean_accuracy: family, representativeness, cov_trace });
        }
        if let Some((v, _)) = best {
            best_value.insert(ipc, v);
        }
    }
    Summary { config_hash: ws.hash.clone(), sweep, seeds: ws.config.run.seeds.clone(), points, best_value }
}

pub fn plot(ws: &Workspace, sweep: Sweep, values: &[f64], rows: &[Row]) -> String {
    let ipc = ws.config.run.ipc[0];
    let rows: Vec<&Row> = rows.iter().filter(|r| r.ipc == ipc).collect();
    let Some(first) = rows.first() else { return String::new() };
    let mut series = Vec::new();
    let n = first.report.accuracy.len();
    for i in 0..=n {
        let label = if i < n { first.report.accuracy[i].classifier.clone() } else { "family mean".into() };
        let mut points = Vec::new();
        let mut errors = Vec::new();
        for (k, &v) in values.iter().enumerate() {
            let acc: Vec<f64> = rows
                .iter()
                .filter(|r| r.value == v)
                .map(|r| if i < n { r.report.accuracy[i].mean } else { r.family_mean() })
                .collect();
            if acc.is_empty() {
                continue;
            }
            let (m, sd) = mean_std(&acc);
            points.push((k as f64, m));
            errors.push(sd);
        }
        series.push(Series { label, points, errors });
    }
    let name = match sweep {
        Sweep::Gamma => "guidance scale γ",
        Sweep::TStop => "early stop t_stop",
    };
    LineChart {
        title: format!("Test accuracy vs {name} (IPC {ipc}, {} seeds)", ws.config.run.seeds.len()),
        x_label: name.into(),
        y_label: "test accuracy (mean ± sd over seeds)".into(),
        x_ticks: values.iter().enumerate().map(|(k, &v)| (k as f64, fmt_value(sweep, v))).collect(),
        series,
        comment: format!("config_hash={}", ws.hash),
    }
    .render()
}
