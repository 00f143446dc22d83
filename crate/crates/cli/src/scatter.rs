//! `dap scatter`: real versus distilled samples in 2-D.

use std::path::{Path, PathBuf};

use anyhow::Context as _;

use dap_core::container;
use dap_core::linalg::{covariance, Pca};
use dap_core::{DistilledSet, LabeledDataset};

use crate::context::Workspace;
use crate::svg::{color, LegendItem, PointGroup, ScatterChart};

/// Identity for 2-D data, otherwise the top two principal components of
/// the training split.
pub enum Axes {
    Raw,
    Pca { pca: Pca, share: [f64; 2] },
}

impl Axes {
    pub fn fit(train: &LabeledDataset) -> anyhow::Result<Self> {
        if train.dim() <= 2 {
            return Ok(Axes::Raw);
        }
        let pca = Pca::fit(train.samples(), 2)?;
        let total = covariance(train.samples())?.trace();
        let ev = pca.explained_variance();
        let share = [ev[0] / total, ev[1] / total];
        Ok(Axes::Pca { pca, share })
    }

    pub fn project(&self, x: &[f64]) -> anyhow::Result<(f64, f64)> {
        match self {
            Axes::Raw if x.len() == 2 => Ok((x[0], x[1])),
            Axes::Raw => Ok((x[0], 0.0)),
            Axes::Pca { pca, .. } => {
                let p = pca.transform(x)?;
                Ok((p[0], p[1]))
            }
        }
    }

    pub fn labels(&self) -> (String, String) {
        match self {
            Axes::Raw => ("x1".into(), "x2".into()),
            Axes::Pca { share, .. } => (
                format!("PC1 ({:.1}% of variance)", 100.0 * share[0]),
                format!("PC2 ({:.1}% of variance)", 100.0 * share[1]),
            ),
        }
    }
}

pub fn render(ws: &Workspace, set: &DistilledSet, with_test: bool) -> anyhow::Result<String> {
    let axes = Axes::fit(ws.train())?;
    let classes = ws.train().classes().to_vec();
    let mut groups = Vec::new();
    let mut notes = Vec::new();
    let real = |ds: &LabeledDataset, c: usize| -> anyhow::Result<Vec<(f64, f64)>> {
        ds.class_samples(c).iter().map(|x| axes.project(x)).collect()
    };
    for (k, &c) in classes.iter().enumerate() {
        groups.push(PointGroup {
            label: format!("train class {c}"),
            color: color(k).into(),
            radius: 1.5,
            opacity: 0.25,
            outline: false,
            points: real(ws.train(), c)?,
        });
        if with_test {
            groups.push(PointGroup {
                label: format!("test class {c}"),
                color: color(k).into(),
                radius: 1.0,
                opacity: 0.12,
                outline: false,
                points: real(ws.test(), c)?,
            });
        }
        notes.push(LegendItem { label: format!("class {c}"), color: color(k).into(), line: false, radius: 4.0, outline: false });
    }
    for (k, &c) in classes.iter().enumerate() {
        let points = match set.class(c) {
            Ok(rows) => rows.iter().map(|x| axes.project(x)).collect::<anyhow::Result<Vec<_>>>()?,
            Err(_) => continue,
        };
        groups.push(PointGroup {
            label: format!("distilled class {c}"),
            color: color(k).into(),
            radius: 5.0,
            opacity: 1.0,
            outline: true,
            points,
        });
    }
    notes.push(LegendItem { label: "real (faint)".into(), color: "#999999".into(), line: false, radius: 2.0, outline: false });
    notes.push(LegendItem { label: "distilled".into(), color: "#999999".into(), line: false, radius: 5.0, outline: true });
    let (x_label, y_label) = axes.labels();
    let p = &set.provenance;
    Ok(ScatterChart {
        title: format!("{} IPC {} seed {}: real vs distilled", p.method.as_str(), set.ipc(), p.seed),
        x_label,
        y_label,
        groups,
        notes,
        comment: format!(
            "config_hash={} set_config_hash={}",
            ws.hash,
            p.config_hash.as_deref().unwrap_or("none")
        ),
    }
    .render())
}

pub fn run(ws: &Workspace, file: &Path, output: Option<PathBuf>, with_test: bool) -> anyhow::Result<PathBuf> {
    let set = container::read(file).with_context(|| format!("reading {}", file.display()))?;
    if set.dim() != ws.train().dim() {
        anyhow::bail!(dap_core::Error::DimensionMismatch { expected: ws.train().dim(), got: set.dim() });
    }
    let svg = render(ws, &set, with_test)?;
    let out = output.unwrap_or_else(|| {
        let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "set".into());
        ws.path(&format!("{stem}.scatter.svg"))
    });
    std::fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
    Ok(out)
}
