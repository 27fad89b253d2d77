use std::path::Path;
use std::time::Instant;

use egg_core::checks;
use egg_core::clustering::ClusterMetrics;
use egg_core::experiment::{classify_repetition, cluster_repetition, mean_std, repetition_seed, train_repetition, vgae_repetition, MeanStd};
use egg_core::graph_data::{degree_onehot, load_citation, load_tu_dataset, CitationDataset};
use egg_core::grassmann::rectify;
use egg_core::{GraphSet, RankPolicy, RectifyMode};
use serde::{Deserialize, Serialize};

use crate::config::{policy_label, ExperimentConfig, Variant};
use crate::error::CliError;
use crate::fanout::Fanout;
use crate::output::{write_json, write_matrix_rows, write_records};

pub struct Run<'a> {
    pub config: &'a ExperimentConfig,
    pub fanout: Fanout<'a>,
}

impl Run<'_> {
    fn dir(&self) -> &Path {
        self.fanout.run_dir
    }
}

fn load_graphs(cfg: &ExperimentConfig) -> Result<GraphSet, CliError> {
    let gs = load_tu_dataset(cfg.dataset_dir()?, &cfg.dataset.name, cfg.dataset.tu)?;
    Ok(match cfg.dataset.degree_features {
        Some(cap) => degree_onehot(&gs, cap)?,
        None => gs,
    })
}

fn load_network(cfg: &ExperimentConfig) -> Result<CitationDataset, CliError> {
    let dir = cfg.dataset_dir()?;
    let name = &cfg.dataset.name;
    Ok(load_citation(
        &dir.join(format!("{name}.content")),
        &dir.join(format!("{name}.cites")),
        cfg.dataset.citation,
    )?)
}

fn stats(values: impl Iterator<Item = f64>) -> MeanStd {
    let v: Vec<f64> = values.collect();
    mean_std(&v).unwrap_or(MeanStd { mean: f64::NAN, std: f64::NAN })
}

fn pm(m: MeanStd) -> String {
    format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std)
}

#[derive(Debug, Clone, Serialize)]
struct Timing {
    wall_seconds: f64,
    units: Vec<f64>,
}

// ---------------------------------------------------------------- classify

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifyUnit {
    rep: usize,
    seed: u64,
    test_acc: f64,
    test_loss: f64,
    best_epoch: usize,
    stop_epoch: usize,
    best_val_loss: f64,
    best_val_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_seconds: Option<f64>,
}

#[derive(Debug, Serialize)]
struct VariantSummary<'a> {
    label: &'a str,
    model: &'a egg_core::ModelConfig,
    train: &'a egg_core::TrainConfig,
    test_acc: MeanStd,
    val_acc: MeanStd,
    runs: Vec<ClassifyUnit>,
}

#[derive(Debug, Serialize)]
struct ClassifySummary<'a> {
    command: &'a str,
    dataset: &'a str,
    graphs: usize,
    classes: usize,
    features: usize,
    seed: u64,
    repetitions: usize,
    variants: Vec<VariantSummary<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_variant: Option<&'a str>,
    config: &'a ExperimentConfig,
}

/// Every variant × repetition, as units `variant * reps + rep`.
fn classification_units(run: &Run, gs: &GraphSet, variants: &[Variant]) -> Result<Option<Vec<ClassifyUnit>>, CliError> {
    let cfg = run.config;
    let reps = cfg.repetitions;
    run.fanout.run(variants.len() * reps, |u| {
        let (variant, rep) = (&variants[u / reps], u % reps);
        let record = classify_repetition(gs, &variant.model, &variant.train, cfg.graph_fractions, rep)?;
        let csv = if variants.len() == 1 {
            run.dir().join("runs").join(format!("rep_{rep}.csv"))
        } else {
            run.dir().join("runs").join(&variant.label).join(format!("rep_{rep}.csv"))
        };
        write_records(&csv, &record.epochs)?;
        let best_val_acc = record
            .epochs
            .iter()
            .find(|e| e.epoch == record.best_epoch)
            .map_or(0.0, |e| e.val_acc);
        log::info!("{} rep {rep}: test acc {:.4}, stopped at {}", variant.label, record.test_acc, record.stop_epoch);
        Ok(ClassifyUnit {
            rep,
            seed: repetition_seed(variant.train.seed, rep),
            test_acc: record.test_acc,
            test_loss: record.test_loss,
            best_epoch: record.best_epoch,
            stop_epoch: record.stop_epoch,
            best_val_loss: record.best_val_loss,
            best_val_acc,
            wall_seconds: Some(record.wall_time.as_secs_f64()),
        })
    })
}

fn summarise_variants<'a>(variants: &'a [Variant], units: Vec<ClassifyUnit>, reps: usize) -> (Vec<VariantSummary<'a>>, Vec<f64>) {
    let mut times = Vec::with_capacity(units.len());
    let mut out: Vec<VariantSummary> = Vec::with_capacity(variants.len());
    let mut units = units.into_iter();
    for v in variants {
        let mut runs: Vec<ClassifyUnit> = units.by_ref().take(reps).collect();
        for r in &mut runs {
            times.push(r.wall_seconds.take().unwrap_or(0.0));
        }
        out.push(VariantSummary {
            label: &v.label,
            model: &v.model,
            train: &v.train,
            test_acc: stats(runs.iter().map(|r| r.test_acc)),
            val_acc: stats(runs.iter().map(|r| r.best_val_acc)),
            runs,
        });
    }
    (out, times)
}

/// Highest mean validation accuracy; lower mean validation loss, then
/// earlier position, break ties.
fn best_variant(summaries: &[VariantSummary]) -> usize {
    let val_loss = |s: &VariantSummary| s.runs.iter().map(|r| r.best_val_loss).sum::<f64>() / s.runs.len() as f64;
    let mut best = 0;
    for (i, s) in summaries.iter().enumerate().skip(1) {
        let b = &summaries[best];
        if s.val_acc.mean > b.val_acc.mean || (s.val_acc.mean == b.val_acc.mean && val_loss(s) < val_loss(b)) {
            best = i;
        }
    }
    best
}

pub fn classify(run: &Run) -> Result<(), CliError> {
    classification(run, "classify", run.config.classify_variants())
}

pub fn sensitivity(run: &Run) -> Result<(), CliError> {
    classification(run, "sensitivity", run.config.sensitivity_variants())
}

fn classification(run: &Run, command: &str, variants: Vec<Variant>) -> Result<(), CliError> {
    let cfg = run.config;
    let started = Instant::now();
    let gs = load_graphs(cfg)?;
    let Some(units) = classification_units(run, &gs, &variants)? else {
        return Ok(());
    };
    let (summaries, times) = summarise_variants(&variants, units, cfg.repetitions);
    let grid = cfg.grid.is_some() && command == "classify";
    let best = grid.then(|| best_variant(&summaries));

    for s in &summaries {
        println!(
            "{} {}: test accuracy {} (validation {}) over {} repetitions",
            gs.name,
            s.label,
            pm(s.test_acc),
            pm(s.val_acc),
            cfg.repetitions
        );
    }
    if let Some(b) = best {
        println!("best validation: {}", summaries[b].label);
    }
    if command == "sensitivity" {
        let rows: Vec<(f64, f64, f64)> = cfg
            .thresholds
            .iter()
            .zip(&summaries)
            .map(|(&r, s)| (r, s.test_acc.mean, s.test_acc.std))
            .collect();
        write_sensitivity_csv(&run.dir().join("sensitivity.csv"), &rows)?;
    }

    let summary = ClassifySummary {
        command,
        dataset: &gs.name,
        graphs: gs.len(),
        classes: gs.class_count,
        features: gs.feature_dim(),
        seed: cfg.seed,
        repetitions: cfg.repetitions,
        best_variant: best.map(|b| summaries[b].label),
        variants: summaries,
        config: cfg,
    };
    write_json(&run.dir().join("summary.json"), &summary)?;
    write_json(
        &run.dir().join("timing.json"),
        &Timing { wall_seconds: started.elapsed().as_secs_f64(), units: times },
    )?;
    println!("results in {}", run.dir().display());
    Ok(())
}

fn write_sensitivity_csv(path: &Path, rows: &[(f64, f64, f64)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(["r", "mean_acc", "std_acc"]).map_err(|e| CliError::io(path, e))?;
    for (r, m, s) in rows {
        w.write_record([r.to_string(), m.to_string(), s.to_string()])
            .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

// ----------------------------------------------------------------- cluster

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyScore {
    metrics: ClusterMetrics,
    rank: Option<usize>,
    captured_energy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClusterUnit {
    rep: usize,
    seed: u64,
    scores: Vec<PolicyScore>,
    wall_seconds: f64,
}

#[derive(Debug, Serialize)]
struct PolicyRun {
    rep: usize,
    seed: u64,
    #[serde(flatten)]
    score: PolicyScore,
}

#[derive(Debug, Serialize)]
struct PolicySummary {
    label: String,
    policy: Option<RankPolicy>,
    accuracy: MeanStd,
    nmi: MeanStd,
    ari: MeanStd,
    completeness: MeanStd,
    captured_energy: Option<MeanStd>,
    rank: Option<MeanStd>,
    runs: Vec<PolicyRun>,
}

#[derive(Debug, Serialize)]
struct ClusterSummary<'a> {
    command: &'a str,
    dataset: &'a str,
    nodes: usize,
    edges: usize,
    classes: usize,
    seed: u64,
    repetitions: usize,
    policies: Vec<PolicySummary>,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

#[derive(Serialize)]
struct AssignmentRow<'a> {
    node_id: &'a str,
    cluster: usize,
    truth: usize,
}

pub fn cluster(run: &Run) -> Result<(), CliError> {
    let cfg = run.config;
    let started = Instant::now();
    let ds = load_network(cfg)?;
    if cfg.policies.is_empty() {
        return Err(CliError::config("cluster needs at least one policy"));
    }
    let labels: Vec<String> = cfg.policies.iter().map(|&p| policy_label(p)).collect();
    let units = run.fanout.run(cfg.repetitions, |rep| {
        let t = Instant::now();
        let out = cluster_repetition(&ds, &cfg.vgae, &cfg.policies, cfg.edge_fractions, rep)?;
        let runs = run.dir().join("runs");
        write_records(
            &runs.join(format!("rep_{rep}.csv")),
            out.losses.iter().enumerate().map(|(i, &loss)| LossRow { epoch: i + 1, loss }),
        )?;
        let truth = ds.labels();
        let mut scores = Vec::with_capacity(out.results.len());
        for (pr, label) in out.results.iter().zip(&labels) {
            write_records(
                &run.dir().join("assignments").join(format!("rep_{rep}_{label}.csv")),
                pr.result.assignment.iter().zip(truth).zip(&ds.node_ids).map(|((&cluster, &truth), id)| AssignmentRow {
                    node_id: id,
                    cluster,
                    truth,
                }),
            )?;
            scores.push(PolicyScore {
                metrics: pr.result.metrics.expect("ground truth supplied"),
                rank: pr.result.rank,
                captured_energy: pr.result.captured_energy,
            });
        }
        log::info!("rep {rep}: {}", labels.iter().zip(&scores).map(|(l, s)| format!("{l} acc {:.4}", s.metrics.accuracy)).collect::<Vec<_>>().join(", "));
        Ok(ClusterUnit {
            rep,
            seed: repetition_seed(cfg.vgae.seed, rep),
            scores,
            wall_seconds: t.elapsed().as_secs_f64(),
        })
    })?;
    let Some(units) = units else {
        return Ok(());
    };

    let times: Vec<f64> = units.iter().map(|u| u.wall_seconds).collect();
    let policies: Vec<PolicySummary> = cfg
        .policies
        .iter()
        .enumerate()
        .map(|(i, &policy)| {
            let runs: Vec<PolicyRun> = units
                .iter()
                .map(|u| PolicyRun { rep: u.rep, seed: u.seed, score: u.scores[i].clone() })
                .collect();
            let metric = |f: fn(&ClusterMetrics) -> f64| stats(runs.iter().map(|r| f(&r.score.metrics)));
            PolicySummary {
                label: labels[i].clone(),
                policy,
                accuracy: metric(|m| m.accuracy),
                nmi: metric(|m| m.nmi),
                ari: metric(|m| m.ari),
                completeness: metric(|m| m.completeness),
                captured_energy: policy.map(|_| stats(runs.iter().filter_map(|r| r.score.captured_energy))),
                rank: policy.map(|_| stats(runs.iter().filter_map(|r| r.score.rank.map(|p| p as f64)))),
                runs,
            }
        })
        .collect();

    println!("{} ({} nodes, {} classes), {} repetitions", cfg.dataset.name, ds.graph.node_count(), ds.class_count(), cfg.repetitions);
    println!("{:<12} {:>16} {:>16} {:>16} {:>16} {:>16}", "policy", "acc", "nmi", "ari", "cs", "y");
    let cell = |m: MeanStd| format!("{:.4} ± {:.4}", m.mean, m.std);
    for p in &policies {
        println!(
            "{:<12} {:>16} {:>16} {:>16} {:>16} {:>16}",
            p.label,
            cell(p.accuracy),
            cell(p.nmi),
            cell(p.ari),
            cell(p.completeness),
            p.captured_energy.map_or("-".to_string(), cell)
        );
    }

    let summary = ClusterSummary {
        command: "cluster",
        dataset: &cfg.dataset.name,
        nodes: ds.graph.node_count(),
        edges: ds.graph.edge_count(),
        classes: ds.class_count(),
        seed: cfg.seed,
        repetitions: cfg.repetitions,
        policies,
        config: cfg,
    };
    write_json(&run.dir().join("summary.json"), &summary)?;
    write_json(
        &run.dir().join("timing.json"),
        &Timing { wall_seconds: started.elapsed().as_secs_f64(), units: times },
    )?;
    println!("results in {}", run.dir().display());
    Ok(())
}

// ------------------------------------------------------------------- embed

#[derive(Debug, Serialize)]
struct EmbedSummary<'a> {
    command: &'a str,
    mode: &'a str,
    dataset: &'a str,
    rows: usize,
    width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    captured_energy: Option<f64>,
    seed: u64,
    config: &'a ExperimentConfig,
}

fn columns(prefix: &str, width: usize) -> Vec<String> {
    let mut h = vec!["id".to_string(), "label".to_string()];
    h.extend((0..width).map(|j| format!("{prefix}{j}")));
    h
}

/// Graph mode trains repetition 0 and writes each graph's readout; node
/// mode trains the autoencoder of repetition 0 and writes the rectified
/// basis rows, plus the latent means in `latent.csv`.
pub fn embed(run: &Run) -> Result<(), CliError> {
    let cfg = run.config;
    let path = run.dir().join("embeddings.csv");
    let summary = match cfg.task {
        crate::config::Task::Classify => {
            let gs = load_graphs(cfg)?;
            let trained = train_repetition(&gs, &cfg.model, &cfg.train, cfg.graph_fractions, 0)?;
            let rows = gs
                .graphs
                .iter()
                .map(|g| trained.model.embed(&trained.store, g))
                .collect::<Result<Vec<_>, _>>()?;
            let width = cfg.model.readout_dim();
            write_matrix_rows(
                &path,
                &columns("e", width),
                rows.iter().enumerate().map(|(i, r)| {
                    let label = gs.graphs[i].label().map_or(String::new(), |l| l.to_string());
                    (i.to_string(), label, r.as_slice())
                }),
            )?;
            println!("{} graphs × {width} features, test accuracy {:.4}", rows.len(), trained.record.test_acc);
            EmbedSummary {
                command: "embed",
                mode: "graph",
                dataset: &cfg.dataset.name,
                rows: rows.len(),
                width,
                test_acc: Some(trained.record.test_acc),
                captured_energy: None,
                seed: cfg.seed,
                config: cfg,
            }
        }
        crate::config::Task::Cluster => {
            let ds = load_network(cfg)?;
            let state = vgae_repetition(&ds, &cfg.vgae, cfg.edge_fractions, 0)?;
            let point = rectify(&state.mu, RectifyMode::NodeLevel, cfg.embed_policy)?;
            let labels = ds.labels();
            let node_rows = |m: &egg_core::Matrix| -> Vec<(String, String, Vec<f64>)> {
                (0..m.rows())
                    .map(|i| (ds.node_ids[i].clone(), labels[i].to_string(), m.row(i).to_vec()))
                    .collect()
            };
            let basis = node_rows(point.basis());
            write_matrix_rows(
                &path,
                &columns("u", point.rank()),
                basis.iter().map(|(id, l, r)| (id.clone(), l.clone(), r.as_slice())),
            )?;
            let latent = node_rows(&state.mu);
            write_matrix_rows(
                &run.dir().join("latent.csv"),
                &columns("z", state.mu.cols()),
                latent.iter().map(|(id, l, r)| (id.clone(), l.clone(), r.as_slice())),
            )?;
            let y = point.captured_energy()?;
            println!("{} nodes × rank {}, captured energy {y:.4}", basis.len(), point.rank());
            EmbedSummary {
                command: "embed",
                mode: "node",
                dataset: &cfg.dataset.name,
                rows: basis.len(),
                width: point.rank(),
                test_acc: None,
                captured_energy: Some(y),
                seed: cfg.seed,
                config: cfg,
            }
        }
    };
    write_json(&run.dir().join("summary.json"), &summary)?;
    println!("results in {}", run.dir().display());
    Ok(())
}

// --------------------------------------------------------------- gradcheck

#[derive(Debug, Serialize)]
struct GradcheckSummary<'a> {
    command: &'a str,
    seed: u64,
    trials: usize,
    tolerance: f64,
    suites: Vec<checks::SuiteReport>,
    passed: bool,
}

pub fn gradcheck(run: &Run) -> Result<(), CliError> {
    let cfg = run.config;
    let trials = cfg.gradcheck.trials;
    let suites = checks::run_all(trials, cfg.seed)?;
    let passed = suites.iter().all(|s| s.passed);
    println!("{:<14} {:>6} {:>12} {:>10} {:>8} {:>8}  status", "suite", "trials", "max_rel_err", "non_finite", "clamped", "redrawn");
    for s in &suites {
        println!(
            "{:<14} {:>6} {:>12.3e} {:>10} {:>8} {:>8}  {}",
            s.name,
            s.trials,
            s.max_relative_error,
            s.non_finite,
            s.clamped,
            s.redrawn,
            if s.passed { "pass" } else { "FAIL" }
        );
    }
    write_json(
        &run.dir().join("summary.json"),
        &GradcheckSummary {
            command: "gradcheck",
            seed: cfg.seed,
            trials,
            tolerance: checks::GRADIENT_TOLERANCE,
            suites,
            passed,
        },
    )?;
    if passed {
        Ok(())
    } else {
        Err(CliError::check("gradient check failed"))
    }
}
