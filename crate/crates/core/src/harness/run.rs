use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentKind, ResolvedConfig};
use super::{all_ones_sleepers, estimate_zeta_c, BisectionParams, ZetaCEstimate};
use crate::ctime::{ring_metastability, CtBudget};
use crate::error::{ArwError, Result};
use crate::sampling::{derive_seed, SleepRate};
use crate::stats::{log_mean_exp, ols};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub id: String,
    pub lambda: f64,
    pub r: Option<u64>,
    pub zeta: Option<f64>,
    pub n: Option<u32>,
    /// Seed handed to the measurement; sample `i` derives its own streams
    /// from it.
    pub seed: u64,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config: ResolvedConfig,
    pub seed: u64,
    pub tasks: Vec<TaskEntry>,
    pub complete: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub csv_path: PathBuf,
    pub summary: serde_json::Value,
    /// Tasks executed by this call (others were already done).
    pub executed: usize,
}

#[derive(Debug, Serialize)]
struct ZetaCRow {
    lambda: f64,
    r: u64,
    zeta: f64,
    samples: u64,
    mean_exit_density: f64,
    stderr: f64,
    decision: &'static str,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct ExpMomentRow {
    lambda: f64,
    alpha: f64,
    r: u64,
    samples: u64,
    log_moment: f64,
    stderr: f64,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct RingRow {
    lambda: f64,
    zeta: f64,
    n: u32,
    sample_id: u64,
    #[serde(rename = "T")]
    t: f64,
    censored: bool,
    seed: u64,
}

fn csv_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::ZetaC => "zeta_c.csv",
        ExperimentKind::ExpMoment => "exp_moment.csv",
        ExperimentKind::Ring => "ring.csv",
    }
}

fn csv_header(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::ZetaC => "lambda,r,zeta,samples,mean_exit_density,stderr,decision,seed\n",
        ExperimentKind::ExpMoment => "lambda,alpha,r,samples,log_moment,stderr,seed\n",
        ExperimentKind::Ring => "lambda,zeta,n,sample_id,T,censored,seed\n",
    }
}

fn plan(cfg: &ResolvedConfig) -> Vec<TaskEntry> {
    let mut tasks = Vec::new();
    for (li, &lambda) in cfg.lambdas.iter().enumerate() {
        let seed = derive_seed(cfg.seed, &[cfg.kind as u64, li as u64]);
        let entry = |id: String, r, zeta, n, seed| TaskEntry {
            id,
            lambda,
            r,
            zeta,
            n,
            seed,
            status: TaskStatus::Pending,
        };
        match cfg.kind {
            ExperimentKind::ZetaC => tasks.push(entry(format!("zeta_c-l{li}"), None, None, None, seed)),
            ExperimentKind::ExpMoment => {
                for r in cfg.radii(lambda) {
                    tasks.push(entry(format!("exp_moment-l{li}-r{r}"), Some(r), None, None, seed));
                }
            }
            ExperimentKind::Ring => {
                for (zi, &zeta) in cfg.zetas.iter().enumerate() {
                    let s = derive_seed(seed, &[zi as u64]);
                    for &n in &cfg.ring_sizes {
                        tasks.push(entry(format!("ring-l{li}-z{zi}-n{n}"), None, Some(zeta), Some(n), s));
                    }
                }
            }
        }
    }
    tasks
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner()
        .map_err(|e| ArwError::Io(std::io::Error::other(e.to_string())))
}

/// Write `bytes` to `path` through a temporary file, removing the
/// temporary on failure.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let res = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

fn run_task(cfg: &ResolvedConfig, task: &TaskEntry, notes: &mut Vec<String>) -> Result<(Vec<u8>, Option<Vec<u8>>)> {
    let rate = SleepRate::new(task.lambda)?;
    match cfg.kind {
        ExperimentKind::ZetaC => {
            let params = BisectionParams {
                theta: cfg.theta,
                steps: cfg.bisection_steps,
                samples: cfg.samples,
                max_samples: cfg.max_samples,
                noise_z: cfg.noise_z,
            };
            let est = estimate_zeta_c(
                rate,
                &cfg.radii(task.lambda),
                cfg.bracket,
                &params,
                task.seed,
                cfg.engine,
                cfg.budget,
            )?;
            let mut rows = Vec::new();
            for d in &est.table {
                for e in &d.densities {
                    rows.push(ZetaCRow {
                        lambda: task.lambda,
                        r: e.r,
                        zeta: d.zeta,
                        samples: e.samples,
                        mean_exit_density: e.mean,
                        stderr: e.stderr,
                        decision: d.decision.as_str(),
                        seed: task.seed,
                    });
                }
            }
            Ok((csv_bytes(&rows)?, Some(serde_json::to_vec_pretty(&est)?)))
        }
        ExperimentKind::ExpMoment => {
            let r = task.r.expect("moment tasks carry a radius");
            let s = all_ones_sleepers(rate, r, 0..cfg.samples, task.seed, cfg.engine, cfg.budget)?;
            let mut alpha = cfg.alpha;
            let (log_moment, stderr) = loop {
                let vals: Vec<f64> = s.iter().map(|&v| alpha * v as f64).collect();
                let (m, se) = log_mean_exp(&vals);
                if m.is_finite() {
                    break (m, se);
                }
                if alpha < cfg.alpha / 256.0 {
                    return Err(ArwError::MomentOverflow { alpha });
                }
                alpha /= 2.0;
                notes.push(format!("{}: moment overflow, alpha halved to {alpha}", task.id));
            };
            let row = ExpMomentRow {
                lambda: task.lambda,
                alpha,
                r,
                samples: cfg.samples,
                log_moment,
                stderr,
                seed: task.seed,
            };
            Ok((csv_bytes(&[row])?, None))
        }
        ExperimentKind::Ring => {
            let zeta = task.zeta.expect("ring tasks carry a density");
            let n = task.n.expect("ring tasks carry a size");
            let budget = CtBudget {
                max_events: cfg.budget,
                max_activity: cfg.activity_cutoff,
            };
            let summary = ring_metastability(rate, zeta, n, cfg.samples, budget, task.seed)?;
            let rows: Vec<RingRow> = summary
                .samples
                .iter()
                .map(|s| RingRow {
                    lambda: task.lambda,
                    zeta,
                    n,
                    sample_id: s.sample_id,
                    t: s.activity,
                    censored: s.censored,
                    seed: task.seed,
                })
                .collect();
            Ok((csv_bytes(&rows)?, None))
        }
    }
}

fn load_manifest(path: &Path) -> Result<Option<RunManifest>> {
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_slice(&fs::read(path)?)?))
}

pub fn run_experiment(cfg: &ResolvedConfig) -> Result<RunSummary> {
    run_experiment_limited(cfg, None)
}

/// Like [`run_experiment`] but stops after `max_tasks` newly executed
/// tasks, leaving a resumable partial run.
pub fn run_experiment_limited(cfg: &ResolvedConfig, max_tasks: Option<usize>) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = &cfg.out_dir;
    let parts = dir.join("parts");
    fs::create_dir_all(&parts)?;
    let manifest_path = dir.join("manifest.json");

    let mut manifest = match load_manifest(&manifest_path)? {
        Some(m) if m.config == *cfg && m.schema_version == SCHEMA_VERSION => m,
        Some(_) => {
            return Err(ArwError::config(
                "out_dir",
                format!("{} holds a run with a different configuration", dir.display()),
            ))
        }
        None => RunManifest {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            seed: cfg.seed,
            tasks: plan(cfg),
            complete: false,
            notes: Vec::new(),
        },
    };
    write_atomic(&manifest_path, &serde_json::to_vec_pretty(&manifest)?)?;

    let mut executed = 0;
    for t in 0..manifest.tasks.len() {
        let task = manifest.tasks[t].clone();
        let csv_part = parts.join(format!("{}.csv", task.id));
        if task.status == TaskStatus::Done && csv_part.exists() {
            continue;
        }
        if max_tasks.is_some_and(|m| executed >= m) {
            break;
        }
        let (rows, extra) = run_task(cfg, &task, &mut manifest.notes)?;
        if let Some(json) = extra {
            write_atomic(&parts.join(format!("{}.json", task.id)), &json)?;
        }
        write_atomic(&csv_part, &rows)?;
        manifest.tasks[t].status = TaskStatus::Done;
        executed += 1;
        write_atomic(&manifest_path, &serde_json::to_vec_pretty(&manifest)?)?;
    }

    let csv_path = dir.join(csv_name(cfg.kind));
    let done = manifest.tasks.iter().all(|t| t.status == TaskStatus::Done);
    let mut summary = serde_json::Value::Null;
    if done {
        let mut out = csv_header(cfg.kind).as_bytes().to_vec();
        for task in &manifest.tasks {
            out.extend(fs::read(parts.join(format!("{}.csv", task.id)))?);
        }
        write_atomic(&csv_path, &out)?;
        summary = summarize(cfg, &manifest, &parts, &out)?;
        write_atomic(&dir.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
        manifest.complete = true;
        write_atomic(&manifest_path, &serde_json::to_vec_pretty(&manifest)?)?;
    }
    Ok(RunSummary {
        manifest,
        csv_path,
        summary,
        executed,
    })
}

fn summarize(cfg: &ResolvedConfig, manifest: &RunManifest, parts: &Path, csv: &[u8]) -> Result<serde_json::Value> {
    use serde_json::json;
    let records: Vec<csv::StringRecord> = csv::Reader::from_reader(csv)
        .records()
        .collect::<std::result::Result<_, _>>()?;
    let num = |rec: &csv::StringRecord, i: usize| rec[i].parse::<f64>().unwrap_or(f64::NAN);
    Ok(match cfg.kind {
        ExperimentKind::ZetaC => {
            let mut ests = Vec::new();
            for task in &manifest.tasks {
                let est: ZetaCEstimate =
                    serde_json::from_slice(&fs::read(parts.join(format!("{}.json", task.id)))?)?;
                ests.push(est);
            }
            let x: Vec<f64> = ests.iter().map(|e| e.lambda.ln()).collect();
            let y: Vec<f64> = ests.iter().map(|e| e.zeta_c.ln()).collect();
            let fit = ols(&x, &y);
            json!({
                "kind": "zeta_c",
                "estimates": ests.iter().map(|e| json!({
                    "lambda": e.lambda,
                    "zeta_c": e.zeta_c,
                    "bracket": [e.bracket.0, e.bracket.1],
                    "stderr": e.stderr,
                    "inconclusive": e.inconclusive,
                    "radii": e.r_used,
                })).collect::<Vec<_>>(),
                "loglog_slope": fit.map(|f| json!({"slope": f.slope, "stderr": f.slope_stderr, "r_squared": f.r_squared})),
            })
        }
        ExperimentKind::ExpMoment => {
            let mut per_lambda = Vec::new();
            for &lambda in &cfg.lambdas {
                let rows: Vec<&csv::StringRecord> = records.iter().filter(|r| num(r, 0) == lambda).collect();
                let x: Vec<f64> = rows.iter().map(|r| num(r, 2)).collect();
                let y: Vec<f64> = rows.iter().map(|r| num(r, 4)).collect();
                let fit = ols(&x, &y);
                per_lambda.push(json!({
                    "lambda": lambda,
                    "slope": fit.map(|f| f.slope),
                    "slope_stderr": fit.map(|f| f.slope_stderr),
                    "rescaled_slope": fit.map(|f| f.slope / lambda.sqrt()),
                }));
            }
            json!({"kind": "exp_moment", "fits": per_lambda})
        }
        ExperimentKind::Ring => {
            let mut groups = Vec::new();
            for task in &manifest.tasks {
                let (zeta, n) = (task.zeta.unwrap_or(0.0), task.n.unwrap_or(0) as f64);
                let rows: Vec<&csv::StringRecord> = records
                    .iter()
                    .filter(|r| num(r, 0) == task.lambda && num(r, 1) == zeta && num(r, 2) == n)
                    .collect();
                let mut t: Vec<f64> = rows.iter().map(|r| num(r, 4)).collect();
                t.sort_by(f64::total_cmp);
                let censored = rows.iter().filter(|r| &r[5] == "true").count();
                groups.push(json!({
                    "lambda": task.lambda,
                    "zeta": zeta,
                    "n": task.n.unwrap_or(0),
                    "median_T": crate::stats::quantile_sorted(&t, 0.5),
                    "censored_fraction": censored as f64 / rows.len().max(1) as f64,
                }));
            }
            json!({"kind": "ring", "groups": groups})
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{Engine, ExperimentConfig};

    fn moment_config(dir: &Path) -> ResolvedConfig {
        let mut c = ExperimentConfig::new(ExperimentKind::ExpMoment, vec![0.5, 1.0]);
        c.r_list = Some(vec![5, 10]);
        c.samples = Some(40);
        c.seed = Some(3);
        c.engine = Some(Engine::Stacks);
        c.out_dir = Some(dir.to_path_buf());
        c.resolve().unwrap()
    }

    #[test]
    fn rerun_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_experiment(&moment_config(a.path())).unwrap();
        let rb = run_experiment(&moment_config(b.path())).unwrap();
        let bytes = fs::read(&ra.csv_path).unwrap();
        assert_eq!(bytes, fs::read(&rb.csv_path).unwrap());
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("lambda,alpha,r,samples,log_moment,stderr,seed\n"));
        assert_eq!(text.lines().count(), 5);
        assert!(!text.contains('\r'));
    }

    #[test]
    fn interrupted_run_resumes() {
        let full = tempfile::tempdir().unwrap();
        let part = tempfile::tempdir().unwrap();
        let whole = run_experiment(&moment_config(full.path())).unwrap();
        let first = run_experiment_limited(&moment_config(part.path()), Some(1)).unwrap();
        assert_eq!(first.executed, 1);
        assert!(!first.manifest.complete);
        let rest = run_experiment(&moment_config(part.path())).unwrap();
        assert_eq!(rest.executed, 3);
        assert!(rest.manifest.complete);
        assert_eq!(fs::read(&whole.csv_path).unwrap(), fs::read(&rest.csv_path).unwrap());
        let again = run_experiment(&moment_config(part.path())).unwrap();
        assert_eq!(again.executed, 0);
    }

    #[test]
    fn mismatched_manifest_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        run_experiment_limited(&moment_config(dir.path()), Some(1)).unwrap();
        let mut other = moment_config(dir.path());
        other.samples = 41;
        other.max_samples = 41 * 8;
        assert!(matches!(run_experiment(&other), Err(ArwError::Config { .. })));
    }

    #[test]
    fn ring_and_zeta_runs_write_their_tables() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::new(ExperimentKind::Ring, vec![1.0]);
        c.zetas = Some(vec![0.2]);
        c.ring_sizes = Some(vec![6, 8]);
        c.samples = Some(5);
        c.activity_cutoff = Some(100.0);
        c.out_dir = Some(dir.path().to_path_buf());
        let out = run_experiment(&c.resolve().unwrap()).unwrap();
        let text = fs::read_to_string(out.csv_path).unwrap();
        assert!(text.starts_with("lambda,zeta,n,sample_id,T,censored,seed\n"));
        assert_eq!(text.lines().count(), 11);

        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::new(ExperimentKind::ZetaC, vec![1.0]);
        c.r_list = Some(vec![10, 20]);
        c.samples = Some(8);
        c.bisection_steps = Some(2);
        c.out_dir = Some(dir.path().to_path_buf());
        let out = run_experiment(&c.resolve().unwrap()).unwrap();
        let text = fs::read_to_string(out.csv_path).unwrap();
        assert!(text.starts_with("lambda,r,zeta,samples,mean_exit_density,stderr,decision,seed\n"));
        assert!(out.summary["estimates"][0]["zeta_c"].as_f64().unwrap() > 0.0);
    }
}
