//! `dap eval`: downstream accuracy and set diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use rayon::prelude::*;

use dap_core::container;
use dap_core::eval::{diversity_metrics, nll_report, representativeness_score, train_and_test, ClassifierKind, EvalReport};
use dap_core::kernels::Projection;
use dap_core::{DistilledSet, FeatureMap, FeatureMapSpec, KernelSpec, LabeledDataset};

use crate::context::Workspace;
use crate::UsageError;

/// Metrics for one set against the workspace data.
pub fn evaluate_set(ws: &Workspace, set: &DistilledSet, classifiers: &[ClassifierKind]) -> anyhow::Result<EvalReport> {
    if set.dim() != ws.train().dim() {
        bail!(dap_core::Error::DimensionMismatch { expected: ws.train().dim(), got: set.dim() });
    }
    let ds = set.to_dataset()?;
    let seeds = &ws.config.eval.classifier_seeds;
    let accuracy = classifiers
        .par_iter()
        .map(|&k| train_and_test(k, &ds, ws.test(), seeds))
        .collect::<dap_core::Result<Vec<_>>>()?;
    let kernel = ws.config.kernel();
    let projection = match ws.config.feature_map() {
        FeatureMapSpec::RandomProjection { n_out, seed } => Some(Projection::gaussian(n_out, set.dim(), seed)?),
        _ => None,
    };
    let map = projection.as_ref().map(FeatureMap::Projection).unwrap_or(FeatureMap::Identity);
    let representativeness = representativeness_score(set, ws.train(), &kernel, &map)?;
    let diversity = if set.ipc() >= 2 {
        Some(diversity_metrics(set, ws.train(), &KernelSpec::Rbf { bandwidth: ws.config.eval.mmd_bandwidth })?)
    } else {
        None
    };
    let nll = Some(nll_report(ws.task.spec.as_ref(), ws.train(), ws.test())?);
    let p = &set.provenance;
    let mut metadata = BTreeMap::new();
    metadata.insert("eval_config_hash".into(), ws.hash.clone());
    metadata.insert("set_config_hash".into(), p.config_hash.clone().unwrap_or_default());
    metadata.insert("method".into(), p.method.as_str().into());
    metadata.insert("ipc".into(), set.ipc().to_string());
    metadata.insert("seed".into(), p.seed.to_string());
    metadata.insert("gamma".into(), p.guidance.as_ref().map(|g| format!("{:?}", g.gamma)).unwrap_or_default());
    metadata.insert("representativeness_kernel".into(), kernel.label());
    metadata.insert("representativeness_map".into(), map_label(&map));
    Ok(EvalReport { accuracy, representativeness, diversity, nll, metadata })
}

fn map_label(map: &FeatureMap<'_>) -> String {
    match map {
        FeatureMap::Projection(p) => format!("proj({})", p.n_out()),
        _ => "identity".into(),
    }
}

pub struct Evaluated {
    pub file: PathBuf,
    pub report: EvalReport,
}

pub fn run(ws: &Workspace, files: &[PathBuf], full_train: bool) -> anyhow::Result<Vec<Evaluated>> {
    if files.is_empty() {
        return Err(UsageError("eval needs at least one distilled set file".into()).into());
    }
    let classifiers = ws.config.classifiers()?;
    let mut out = Vec::new();
    let mut inputs = String::new();
    for f in files {
        let bytes = std::fs::read(f).with_context(|| format!("reading {}", f.display()))?;
        let sha = container::sha256_hex(&bytes);
        let _ = writeln!(inputs, "{} {sha}", file_name(f));
        let set = container::decode(&bytes).with_context(|| format!("decoding {}", f.display()))?;
        let mut report = evaluate_set(ws, &set, &classifiers)?;
        report.metadata.insert("input_sha256".into(), sha);
        let json_path = ws.path(&format!("{}.eval.json", stem(f)));
        std::fs::write(&json_path, report.to_json()?)?;
        out.push(Evaluated { file: f.clone(), report });
    }
    let header = format!("{}# inputs_hash={}\n", ws.csv_header(), container::sha256_hex(inputs.as_bytes()));
    std::fs::write(ws.path("eval.csv"), eval_csv(&header, &out))?;
    if full_train {
        std::fs::write(ws.path("control.csv"), control_csv(ws, ws.train(), &classifiers)?)?;
    }
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "set".into())
}

pub const EVAL_COLUMNS: &str = "file,set_config_hash,method,ipc,seed,gamma,classifier,acc_mean,acc_std,acc_per_seed,mean_representativeness,mean_cov_trace,mmd2,gauss_moment_distance";

/// One row per (file, classifier).
pub fn eval_csv(header: &str, evaluated: &[Evaluated]) -> String {
    let mut s = header.to_string();
    s.push_str(EVAL_COLUMNS);
    s.push('\n');
    for e in evaluated {
        let r = &e.report;
        let meta = |k: &str| r.metadata.get(k).cloned().unwrap_or_default();
        let div = |f: fn(&dap_core::eval::Diversity) -> f64| r.diversity.as_ref().map(|d| format!("{:?}", f(d))).unwrap_or_default();
        for a in &r.accuracy {
            let per_seed: Vec<String> = a.per_seed.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:?},{:?},{},{:?},{},{},{}",
                file_name(&e.file),
                meta("set_config_hash"),
                meta("method"),
                meta("ipc"),
                meta("seed"),
                meta("gamma"),
                a.classifier,
                a.mean,
                a.std,
                per_seed.join(";"),
                r.mean_representativeness(),
                div(|d| d.mean_cov_trace),
                div(|d| d.mmd2),
                div(|d| d.gauss_moment_distance),
            );
        }
    }
    s
}

/// Classifiers trained on the whole training split.
pub fn control_csv(ws: &Workspace, train: &LabeledDataset, classifiers: &[ClassifierKind]) -> anyhow::Result<String> {
    let mut s = ws.csv_header();
    s.push_str("classifier,n_train,acc_mean,acc_std\n");
    for &k in classifiers {
        let a = train_and_test(k, train, ws.test(), &ws.config.eval.classifier_seeds)?;
        let _ = writeln!(s, "{},{},{:?},{:?}", a.classifier, train.len(), a.mean, a.std);
    }
    Ok(s)
}
