use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{average_accuracy, first_task_accuracy, mean_stderr, MetricsLog, RhoReport};
use super::run::{RunArtifacts, TaskFingerprint};
use super::svg;
use crate::checkpoint::save_model;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Partial,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub arm: String,
    pub seed: u64,
    pub status: RunStatus,
    pub config_hash: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    #[serde(default)]
    pub fingerprints: Vec<TaskFingerprint>,
    pub task_seconds: Vec<f64>,
    #[serde(default)]
    pub alerts: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
}

/// What `metrics.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub log: MetricsLog,
    #[serde(default)]
    pub joint: Option<Vec<f64>>,
    #[serde(default)]
    pub rho: Option<RhoReport>,
}

/// `<root>/<arm>/seed<seed>`.
pub fn run_dir(root: &Path, config: &ExperimentConfig, seed: u64) -> PathBuf {
    root.join(config.arm_label()).join(format!("seed{seed}"))
}

pub fn manifest_for(config: &ExperimentConfig, seed: u64, status: RunStatus, log: &MetricsLog) -> Manifest {
    Manifest {
        name: config.name.clone(),
        arm: config.arm_label(),
        seed,
        status,
        config_hash: config.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        fingerprints: Vec::new(),
        task_seconds: log.task_seconds.clone(),
        alerts: Vec::new(),
        error: None,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Saves a log after a task finished or a run failed.
pub fn write_partial(dir: &Path, config: &ExperimentConfig, seed: u64, log: &MetricsLog, error: Option<String>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let status = if error.is_some() { RunStatus::Failed } else { RunStatus::Partial };
    let mut m = manifest_for(config, seed, status, log);
    m.error = error;
    write_json(&dir.join(MANIFEST), &m)?;
    write_json(
        &dir.join(METRICS),
        &RunMetrics {
            log: log.clone(),
            joint: None,
            rho: None,
        },
    )
}

fn curve_csv(header: &str, values: &[f64]) -> String {
    let mut s = format!("{header}\n");
    for (t, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{},{v}", t + 1);
    }
    s
}

fn matrix_csv(m: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for row in m {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

/// Writes every output of a finished run into `dir`. Task and stage indices
/// in file names and CSV columns are 1-based.
pub fn write_run(dir: &Path, config: &ExperimentConfig, art: &RunArtifacts, checkpoints: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let log = &art.log;
    let mut acc = String::from("t,j,acc\n");
    for (t, row) in log.accuracy.iter().enumerate() {
        for (j, a) in row.iter().enumerate() {
            let _ = writeln!(acc, "{},{},{a}", t + 1, j + 1);
        }
    }
    fs::write(dir.join("accuracy_matrix.csv"), acc)?;
    let avg = average_accuracy(log);
    let first = first_task_accuracy(log);
    fs::write(dir.join("avg_accuracy.csv"), curve_csv("t,acc", &avg))?;
    fs::write(dir.join("first_task_accuracy.csv"), curve_csv("t,acc", &first))?;
    if let Some(rho) = &art.rho {
        fs::write(dir.join("rho.csv"), curve_csv("t,rho", &rho.rho))?;
    }
    let mut ep = String::from("task,epoch,train_loss,train_acc,val_loss,val_acc,lr\n");
    for (t, epochs) in log.epochs.iter().enumerate() {
        for e in epochs {
            let _ = writeln!(
                ep,
                "{},{},{},{},{},{},{}",
                t + 1,
                e.epoch + 1,
                e.train_loss,
                e.train_acc,
                e.val_loss,
                e.val_acc,
                e.lr
            );
        }
    }
    fs::write(dir.join("epochs.csv"), ep)?;
    if !log.first_task_epochs.is_empty() {
        let mut s = String::from("task,epoch,acc\n");
        for (t, e, a) in &log.first_task_epochs {
            let _ = writeln!(s, "{},{},{a}", t + 1, e + 1);
        }
        fs::write(dir.join("first_task_epochs.csv"), s)?;
    }
    let mut delta = String::from("t,j,delta\n");
    for (t, row) in log.delta.iter().enumerate() {
        for (j, d) in row.iter().enumerate() {
            let _ = writeln!(delta, "{},{},{d}", t + 1, j + 1);
        }
    }
    fs::write(dir.join("delta_loss.csv"), delta)?;
    for h in &art.heatmaps {
        fs::write(dir.join(format!("heatmap_task{}_after{}.csv", h.task + 1, h.after + 1)), matrix_csv(&h.matrix))?;
    }
    for (j, st) in art.logit_stats.iter().enumerate() {
        let mut s = String::from("class,logit_index,mean,std\n");
        for (c, (m, sd)) in st.mean.iter().zip(&st.std).enumerate() {
            for (k, (mv, sv)) in m.iter().zip(sd).enumerate() {
                let _ = writeln!(s, "{c},{k},{mv},{sv}");
            }
        }
        fs::write(dir.join(format!("logit_stats_task{}.csv", j + 1)), s)?;
    }
    let series = vec![
        svg::Series {
            name: "first task".into(),
            points: first.iter().enumerate().map(|(t, &a)| ((t + 1) as f64, a, 0.0)).collect(),
        },
        svg::Series {
            name: "task average".into(),
            points: avg.iter().enumerate().map(|(t, &a)| ((t + 1) as f64, a, 0.0)).collect(),
        },
    ];
    fs::write(
        dir.join("accuracy.svg"),
        svg::line_chart(&format!("{} seed {}", config.arm_label(), art.seed), "tasks trained", "test accuracy", &series, 0.0, 1.0),
    )?;
    if let Some(h) = art.heatmaps.iter().filter(|h| h.task == 0).last() {
        fs::write(
            dir.join("heatmap_task1_final.svg"),
            svg::heatmap(&format!("task 1 after task {}", h.after + 1), &h.matrix),
        )?;
    }
    if checkpoints {
        save_model(&dir.join("model.ck"), &art.model, &BTreeMap::new())?;
        art.state.save(&dir.join("state"))?;
    }
    write_json(
        &dir.join(METRICS),
        &RunMetrics {
            log: log.clone(),
            joint: art.joint.clone(),
            rho: art.rho.clone(),
        },
    )?;
    let mut m = manifest_for(config, art.seed, RunStatus::Complete, log);
    m.fingerprints = art.fingerprints.clone();
    m.alerts = art.alerts.clone();
    write_json(&dir.join(MANIFEST), &m)
}

/// Mean/stderr curves of one arm across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub seeds: Vec<u64>,
    /// `(mean, stderr)` per stage.
    pub avg_accuracy: Vec<(f64, f64)>,
    pub first_task: Vec<(f64, f64)>,
    pub rho: Option<Vec<(f64, f64)>>,
    /// Mean over seeds of the final heatmap of task 1.
    pub final_heatmap: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub arms: Vec<ArmSummary>,
    /// Run directories that were missing, partial or failed.
    pub incomplete: Vec<PathBuf>,
}

fn aggregate(curves: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|t| mean_stderr(&curves.iter().map(|c| c[t]).collect::<Vec<_>>()))
        .collect()
}

fn read_heatmap(path: &Path) -> Option<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).ok()?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse().ok()).collect())
        .collect()
}

/// Aggregates every `<arm>/seed*/` run below `root` and writes
/// `report/` with per-arm CSVs, a summary table and SVG plots.
pub fn build_report(root: &Path) -> Result<Report> {
    if !root.is_dir() {
        return Err(Error::invalid(format!("run directory {} does not exist", root.display())));
    }
    let mut report = Report::default();
    let mut arm_dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n != "report"))
        .collect();
    arm_dirs.sort();
    for arm_dir in arm_dirs {
        let mut seed_dirs: Vec<PathBuf> = fs::read_dir(&arm_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed")))
            .collect();
        if seed_dirs.is_empty() {
            continue;
        }
        seed_dirs.sort();
        let (mut seeds, mut avg, mut first, mut rho, mut heat) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut arm = None;
        for sd in seed_dirs {
            let manifest: Option<Manifest> = fs::read_to_string(sd.join(MANIFEST))
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok());
            let metrics: Option<RunMetrics> = fs::read_to_string(sd.join(METRICS))
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok());
            let (Some(m), Some(metrics)) = (manifest, metrics) else {
                report.incomplete.push(sd);
                continue;
            };
            if m.status != RunStatus::Complete {
                report.incomplete.push(sd);
                continue;
            }
            let n = metrics.log.n_tasks();
            arm.get_or_insert(m.arm.clone());
            seeds.push(m.seed);
            avg.push(average_accuracy(&metrics.log));
            first.push(first_task_accuracy(&metrics.log));
            if let Some(r) = metrics.rho {
                rho.push(r.rho);
            }
            if let Some(h) = read_heatmap(&sd.join(format!("heatmap_task1_after{n}.csv"))) {
                heat.push(h);
            }
        }
        let Some(arm) = arm else { continue };
        let final_heatmap = (!heat.is_empty() && heat.iter().all(|h| h.len() == heat[0].len())).then(|| {
            let k = heat.len() as f64;
            let mut m = vec![vec![0.0; heat[0][0].len()]; heat[0].len()];
            for h in &heat {
                for (r, row) in h.iter().enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        m[r][c] += v / k;
                    }
                }
            }
            m
        });
        report.arms.push(ArmSummary {
            arm,
            rho: (rho.len() == seeds.len() && !rho.is_empty()).then(|| aggregate(&rho)),
            seeds,
            avg_accuracy: aggregate(&avg),
            first_task: aggregate(&first),
            final_heatmap,
        });
    }
    write_report(root, &report)?;
    Ok(report)
}

fn write_report(root: &Path, report: &Report) -> Result<()> {
    let out = root.join("report");
    fs::create_dir_all(&out)?;
    let mut summary = String::from("arm,n_seeds,final_avg_mean,final_avg_stderr,final_first_mean,final_first_stderr,final_rho_mean,final_rho_stderr\n");
    for a in &report.arms {
        let last = |c: &[(f64, f64)]| c.last().copied().unwrap_or((f64::NAN, f64::NAN));
        let (am, ae) = last(&a.avg_accuracy);
        let (fm, fe) = last(&a.first_task);
        let (rm, re) = a.rho.as_deref().map(last).unwrap_or((f64::NAN, f64::NAN));
        let _ = writeln!(summary, "{},{},{am},{ae},{fm},{fe},{rm},{re}", a.arm, a.seeds.len());
        for (name, curve) in [("avg_accuracy", Some(&a.avg_accuracy)), ("first_task", Some(&a.first_task)), ("rho", a.rho.as_ref())] {
            let Some(curve) = curve else { continue };
            let mut s = String::from("t,mean,stderr,n\n");
            for (t, (m, e)) in curve.iter().enumerate() {
                let _ = writeln!(s, "{},{m},{e},{}", t + 1, a.seeds.len());
            }
            fs::write(out.join(format!("{}_{name}.csv", a.arm)), s)?;
        }
        if let Some(h) = &a.final_heatmap {
            fs::write(out.join(format!("{}_heatmap_task1.svg", a.arm)), svg::heatmap(&format!("{}: task 1 at the end", a.arm), h))?;
        }
    }
    fs::write(out.join("summary.csv"), summary)?;
    let series = |pick: fn(&ArmSummary) -> Option<&Vec<(f64, f64)>>| -> Vec<svg::Series> {
        report
            .arms
            .iter()
            .filter_map(|a| {
                pick(a).map(|c| svg::Series {
                    name: a.arm.clone(),
                    points: c.iter().enumerate().map(|(t, &(m, e))| ((t + 1) as f64, m, e)).collect(),
                })
            })
            .collect()
    };
    fs::write(
        out.join("avg_accuracy.svg"),
        svg::line_chart("task average accuracy", "tasks trained", "accuracy", &series(|a| Some(&a.avg_accuracy)), 0.0, 1.0),
    )?;
    fs::write(
        out.join("first_task.svg"),
        svg::line_chart("first task accuracy", "tasks trained", "accuracy", &series(|a| Some(&a.first_task)), 0.0, 1.0),
    )?;
    let rho = series(|a| a.rho.as_ref());
    if !rho.is_empty() {
        fs::write(out.join("rho.svg"), svg::line_chart("forgetting ratio", "tasks trained", "rho", &rho, -1.0, 0.2))?;
    }
    Ok(())
}

/// Logit-bar plots of a run's `logit_stats_task<j>.csv` files, one SVG per
/// task and true class 0.
pub fn logit_bar_svgs(run_dir: &Path) -> Result<usize> {
    let mut written = 0;
    for j in 1.. {
        let p = run_dir.join(format!("logit_stats_task{j}.csv"));
        let Ok(text) = fs::read_to_string(&p) else { break };
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() == 4 && f[0] == "0" {
                mean.push(f[2].parse().map_err(|_| Error::format(&p, "bad mean"))?);
                std.push(f[3].parse().map_err(|_| Error::format(&p, "bad std"))?);
            }
        }
        fs::write(
            run_dir.join(format!("logit_stats_task{j}.svg")),
            svg::bar_chart(&format!("task {j}: logits of class 0 examples"), &mean, &std),
        )?;
        written += 1;
    }
    Ok(written)
}
