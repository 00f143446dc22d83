//! `dap distill`: one container per (method, ipc, seed).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context as _;

use dap_core::container;
use dap_core::distill::GuidedSteps;
use dap_core::distill::distill_dap_instrumented;
use dap_core::{distill_random, subsample_set, DistilledSet, GuidanceConfig, Method, ScoreModel};

use crate::config::MethodChoice;
use crate::context::Workspace;

#[derive(Debug, Clone)]
pub struct Job {
    pub method: MethodChoice,
    pub ipc: usize,
    pub seed: u64,
    /// Guidance scale for diffusion methods.
    pub gamma: Option<f64>,
}

impl Job {
    /// `method` is the label of the produced set, so a zero-guidance DAP
    /// job is filed as unguided.
    pub fn file_name(&self, method: Method, tagged_gamma: bool) -> String {
        let method = method.as_str();
        match (tagged_gamma, self.gamma) {
            (true, Some(g)) => format!("{method}_g{g:?}_ipc{}_seed{}.dapset", self.ipc, self.seed),
            _ => format!("{method}_ipc{}_seed{}.dapset", self.ipc, self.seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Produced {
    pub job: Job,
    pub method: Method,
    pub file: String,
    pub sha256: String,
    pub seconds: f64,
    pub guided_steps: Option<GuidedSteps>,
}

/// Jobs for a plain run, or for the configured γ grid when `gamma_grid`.
pub fn plan(ws: &Workspace, gamma_grid: bool) -> Vec<Job> {
    let run = &ws.config.run;
    let mut jobs = Vec::new();
    for &ipc in &run.ipc {
        for &seed in &run.seeds {
            if gamma_grid {
                for &g in &run.gamma_grid {
                    jobs.push(Job { method: MethodChoice::Dap, ipc, seed, gamma: Some(g) });
                }
                continue;
            }
            for &method in &run.methods {
                let gamma = match method {
                    MethodChoice::Dap => Some(ws.config.guidance.gamma),
                    MethodChoice::Unguided => Some(0.0),
                    MethodChoice::Random => None,
                };
                jobs.push(Job { method, ipc, seed, gamma });
            }
        }
    }
    jobs
}

/// Runs one job; the returned set carries the run configuration in its
/// provenance.
pub fn produce<S: ScoreModel + ?Sized>(
    ws: &Workspace,
    score: Option<&S>,
    job: &Job,
    cfg: &GuidanceConfig,
) -> anyhow::Result<(DistilledSet, Option<GuidedSteps>, f64)> {
    let start = Instant::now();
    let (mut set, steps) = match job.gamma {
        None => (distill_random(ws.train(), job.ipc, job.seed)?, None),
        Some(gamma) => {
            let score = score.context("diffusion methods need a score model")?;
            let cfg = GuidanceConfig { gamma, ..cfg.clone() };
            let (set, steps) = distill_dap_instrumented(ws.train(), &cfg, &ws.schedule, score, job.ipc, job.seed)?;
            (set, Some(steps))
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    set.provenance.config_hash = Some(ws.hash.clone());
    set.provenance.run_config = Some(ws.config.to_json_value());
    Ok((set, steps, seconds))
}

pub fn run(ws: &Workspace, gamma_grid: bool) -> anyhow::Result<Vec<Produced>> {
    let jobs = plan(ws, gamma_grid);
    let score = if jobs.iter().any(|j| j.gamma.is_some()) { Some(ws.score()?) } else { None };
    let cfg = ws.config.guidance_config();
    let mut produced = Vec::new();
    for job in jobs {
        let (set, guided_steps, seconds) = produce(ws, score.as_ref(), &job, &cfg)?;
        let bytes = container::encode(&set)?;
        let file = job.file_name(set.method(), gamma_grid);
        let path = ws.path(&file);
        std::fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {} ({:.2}s)", path.display(), seconds);
        produced.push(Produced { job, method: set.method(), file, sha256: container::sha256_hex(&bytes), seconds, guided_steps });
    }
    write_manifest(ws, &produced)?;
    Ok(produced)
}

fn fmt_gamma(g: Option<f64>) -> String {
    g.map(|g| format!("{g:?}")).unwrap_or_default()
}

fn write_manifest(ws: &Workspace, produced: &[Produced]) -> anyhow::Result<()> {
    let t_stop = ws.config.t_stop();
    let mut m = ws.csv_header();
    m.push_str("file,method,ipc,seed,gamma,t_stop,guided_steps,sha256\n");
    let mut timing = String::from("file,method,ipc,seed,gamma,seconds\n");
    for p in produced {
        let j = &p.job;
        let method = p.method.as_str();
        let guided = p
            .guided_steps
            .as_ref()
            .map(|s| s.values().flatten().copied().max().unwrap_or(0).to_string())
            .unwrap_or_default();
        let ts = if j.gamma.is_some() { t_stop.to_string() } else { String::new() };
        let _ = writeln!(m, "{},{method},{},{},{},{ts},{guided},{}", p.file, j.ipc, j.seed, fmt_gamma(j.gamma), p.sha256);
        let _ = writeln!(timing, "{},{method},{},{},{},{:.6}", p.file, j.ipc, j.seed, fmt_gamma(j.gamma), p.seconds);
    }
    std::fs::write(ws.path("manifest.csv"), m)?;
    std::fs::write(ws.path("timing.csv"), timing)?;
    Ok(())
}

/// Writes `<stem>_sub<ipc>_seed<seed>.dapset` next to the other outputs.
pub fn subsample(ws: &Workspace, file: &Path, ipc: usize, seed: u64) -> anyhow::Result<PathBuf> {
    let set = container::read(file).with_context(|| format!("reading {}", file.display()))?;
    let sub = subsample_set(&set, ipc, seed)?;
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "set".into());
    let path = ws.path(&format!("{stem}_sub{ipc}_seed{seed}.dapset"));
    container::write(&sub, &path)?;
    Ok(path)
}
