//! One function per subcommand. Each writes a single run into the results
//! store and prints a human-readable summary on standard output.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use scatter_core::io::{
    self, assemble_dataset, fingerprint, EmbedClient, EmbeddedSample, EmbeddingCache,
    EmbeddingTransport, HttpTransport, PolicyCheckpoint, RunStore, WriteMode,
};
use scatter_core::metrics::{
    metric_report, threshold_sweep, EvaluationConfig, MetricReport, SampleScores, MATCH_GRID,
    VALID_GRID,
};
use scatter_core::report::{
    breakdown_csv, embedding_csv, metrics_csv, render_metrics, render_sweep, sweep_csv,
};
use scatter_core::reward::compute_rewards;
use scatter_core::{Error, Result};

use crate::args::{DataArgs, EvaluateArgs, ReportArgs, ScoreArgs, StoreArgs, SweepArgs, TrainArgs};
use crate::config::{
    embedding_settings, eval_config, reward_config, toy_experiment, EmbeddingFile, FileConfig,
};

const REPORT_JSON: &str = "report.json";

fn write_mode(s: &StoreArgs) -> WriteMode {
    if s.overwrite {
        WriteMode::Overwrite
    } else if s.resume {
        WriteMode::Resume
    } else {
        WriteMode::CreateNew
    }
}

fn file_digest(path: &Path) -> Result<String> {
    fingerprint(&std::fs::read(path)?)
}

/// Loads both files and resolves every text to a vector.
fn load_dataset(
    data: &DataArgs,
    embed_file: &EmbeddingFile,
    embed: &crate::args::EmbedArgs,
) -> Result<Vec<EmbeddedSample>> {
    let samples = io::load_samples(&data.samples)?;
    let hypotheses = io::load_hypotheses(&data.hypotheses)?;
    let settings = embedding_settings(embed_file, embed);
    let cache = match &settings.cache_dir {
        Some(dir) => EmbeddingCache::open(dir)?,
        None => EmbeddingCache::in_memory(),
    };
    let http = settings
        .endpoint
        .as_ref()
        .map(|url| HttpTransport::new(url.clone(), settings.timeout));
    let mut client = EmbedClient::new(
        settings.embedder.clone(),
        &cache,
        http.as_ref().map(|t| t as &dyn EmbeddingTransport),
    );
    client.offline = settings.offline;
    assemble_dataset(&samples, &hypotheses, Some(&client))
}

#[derive(Serialize)]
struct InputIdentity<'a, C: Serialize> {
    command: &'a str,
    samples: String,
    hypotheses: String,
    embedder: String,
    config: C,
}

fn identity<'a, C: Serialize>(
    command: &'a str,
    data: &DataArgs,
    file: &FileConfig,
    embed: &crate::args::EmbedArgs,
    config: C,
) -> Result<InputIdentity<'a, C>> {
    Ok(InputIdentity {
        command,
        samples: file_digest(&data.samples)?,
        hypotheses: file_digest(&data.hypotheses)?,
        embedder: embedding_settings(&file.embedding, embed).embedder,
        config,
    })
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn default_id(prefix: &str, fp: &str) -> String {
    format!("{prefix}-{}", &fp[..12])
}

pub fn score(file: &FileConfig, args: &ScoreArgs) -> Result<()> {
    let reward = reward_config(&file.reward, &args.reward)?;
    let ident = identity("score", &args.data, file, &args.embed, reward)?;
    let fp = fingerprint(&ident)?;
    let dataset = load_dataset(&args.data, &file.embedding, &args.embed)?;

    let scored = dataset
        .par_iter()
        .map(|s| compute_rewards(&s.response_group()?, &reward))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<(&str, &_)> = dataset
        .iter()
        .zip(&scored)
        .flat_map(|(s, bs)| bs.iter().map(move |b| (s.id.as_str(), b)))
        .collect();
    let csv = breakdown_csv(&rows)?;

    let store = RunStore::open(&args.store.out)?;
    let run_id = args
        .store
        .run_id
        .clone()
        .unwrap_or_else(|| default_id("score", &fp));
    let path = store.persist(
        &run_id,
        &fp,
        write_mode(&args.store),
        &[
            ("breakdown.csv", csv.as_bytes()),
            ("config.json", &json_bytes(&ident)?),
        ],
    )?;
    println!(
        "scored {} rollouts over {} samples ({reward_name}, gate {gate}) -> {}",
        rows.len(),
        dataset.len(),
        path.join("breakdown.csv").display(),
        reward_name = reward.components,
        gate = reward.gate_mode,
    );
    Ok(())
}

fn score_dataset(dataset: &[EmbeddedSample]) -> Result<Vec<SampleScores>> {
    dataset
        .par_iter()
        .map(|s| SampleScores::compute(s.id.clone(), &s.round_embeddings(), &s.ground_truth))
        .collect()
}

fn min_rounds(scores: &[SampleScores]) -> Result<usize> {
    scores
        .iter()
        .map(SampleScores::rounds)
        .min()
        .ok_or_else(|| Error::Structure("no samples to evaluate".into()))
}

pub fn evaluate(file: &FileConfig, args: &EvaluateArgs) -> Result<()> {
    let config = eval_config(&file.eval, &args.thresholds, EvaluationConfig::default())?;
    #[derive(Serialize)]
    struct EvalIdentity<'a> {
        config: EvaluationConfig,
        ks: &'a Option<Vec<usize>>,
        verdicts: Option<String>,
        sweep: bool,
        export_embeddings: bool,
        label: &'a Option<String>,
    }
    let ks_flag = args.ks.clone().or_else(|| file.eval.ks.clone());
    let verdict_digest = args.verdicts.as_deref().map(file_digest).transpose()?;
    let ident = identity(
        "evaluate",
        &args.data,
        file,
        &args.embed,
        EvalIdentity {
            config,
            ks: &ks_flag,
            verdicts: verdict_digest,
            sweep: args.sweep,
            export_embeddings: args.export_embeddings,
            label: &args.label,
        },
    )?;
    let fp = fingerprint(&ident)?;
    let run_id = args
        .store
        .run_id
        .clone()
        .unwrap_or_else(|| default_id("eval", &fp));
    let label = args.label.clone().unwrap_or_else(|| run_id.clone());

    let dataset = load_dataset(&args.data, &file.embedding, &args.embed)?;
    let scores = score_dataset(&dataset)?;
    let rounds = min_rounds(&scores)?;
    let mut ks = ks_flag
        .clone()
        .unwrap_or_else(|| if rounds > 1 { vec![1, rounds] } else { vec![1] });
    ks.sort_unstable();
    ks.dedup();
    let mut report = metric_report(label.clone(), &scores, &ks, &config)?;
    if let Some(path) = &args.verdicts {
        let verdicts = io::load_verdicts(path)?;
        let ids: Vec<String> = dataset.iter().map(|s| s.id.clone()).collect();
        report.attach_verdicts(&verdicts, &ids)?;
    }
    let text = render_metrics(std::slice::from_ref(&report));

    let mut artifacts: Vec<(String, Vec<u8>)> = vec![
        ("config.json".into(), json_bytes(&ident)?),
        (REPORT_JSON.into(), json_bytes(&report)?),
        (
            "metrics.csv".into(),
            metrics_csv(std::slice::from_ref(&report))?.into_bytes(),
        ),
        ("metrics.txt".into(), text.clone().into_bytes()),
    ];
    let k_max = *ks.last().expect("ks is non-empty");
    let mut sweep_text = None;
    if args.sweep {
        let table = threshold_sweep(&scores, k_max, &MATCH_GRID, &VALID_GRID, &config)?;
        let t = render_sweep(&[(&label, &table)]);
        artifacts.push((
            "sweep.csv".into(),
            sweep_csv(&[(&label, &table)])?.into_bytes(),
        ));
        artifacts.push(("sweep.txt".into(), t.clone().into_bytes()));
        sweep_text = Some(t);
    }
    if args.export_embeddings {
        let rounds: Vec<_> = dataset
            .iter()
            .map(EmbeddedSample::round_embeddings)
            .collect();
        let evals = scores
            .iter()
            .map(|s| s.evaluate(&config, k_max))
            .collect::<Result<Vec<_>>>()?;
        let items: Vec<_> = rounds.iter().map(Vec::as_slice).zip(&evals).collect();
        artifacts.push(("embeddings.csv".into(), embedding_csv(&items)?.into_bytes()));
    }

    let store = RunStore::open(&args.store.out)?;
    let refs: Vec<(&str, &[u8])> = artifacts
        .iter()
        .map(|(n, b)| (n.as_str(), b.as_slice()))
        .collect();
    let path = store.persist(&run_id, &fp, write_mode(&args.store), &refs)?;
    print!("{text}");
    if let Some(t) = sweep_text {
        println!();
        print!("{t}");
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn sweep(file: &FileConfig, args: &SweepArgs) -> Result<()> {
    let config = eval_config(&file.eval, &args.thresholds, EvaluationConfig::default())?;
    let match_grid = args
        .match_grid
        .clone()
        .unwrap_or_else(|| MATCH_GRID.to_vec());
    let valid_grid = args
        .valid_grid
        .clone()
        .unwrap_or_else(|| VALID_GRID.to_vec());
    for &t in match_grid.iter().chain(&valid_grid) {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!(
                "sweep thresholds must lie in (0, 1], got {t}"
            )));
        }
    }
    let ident = identity(
        "sweep",
        &args.data,
        file,
        &args.embed,
        (config, args.k, &match_grid, &valid_grid, &args.label),
    )?;
    let fp = fingerprint(&ident)?;
    let run_id = args
        .store
        .run_id
        .clone()
        .unwrap_or_else(|| default_id("sweep", &fp));
    let label = args.label.clone().unwrap_or_else(|| run_id.clone());

    let dataset = load_dataset(&args.data, &file.embedding, &args.embed)?;
    let scores = score_dataset(&dataset)?;
    let k = match args.k {
        Some(k) => k,
        None => min_rounds(&scores)?,
    };
    let table = threshold_sweep(&scores, k, &match_grid, &valid_grid, &config)?;
    let text = render_sweep(&[(&label, &table)]);
    let store = RunStore::open(&args.store.out)?;
    let path = store.persist(
        &run_id,
        &fp,
        write_mode(&args.store),
        &[
            ("config.json", &json_bytes(&ident)?),
            ("sweep.json", &json_bytes(&table)?),
            ("sweep.csv", sweep_csv(&[(&label, &table)])?.as_bytes()),
            ("sweep.txt", text.as_bytes()),
        ],
    )?;
    print!("{text}");
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct ToySummary {
    seed: u64,
    mode_coverage: usize,
    modes: usize,
    valid_ratio: f64,
    final_entropy: Option<f64>,
    draws: Vec<Vec<usize>>,
}

pub fn train_toy(file: &FileConfig, args: &TrainArgs, seed: u64) -> Result<()> {
    let exp = toy_experiment(file, args)?;
    let n = args.seeds.or(file.toy.seeds).unwrap_or(1);
    if n == 0 {
        return Err(Error::Config("--seeds must be >= 1".into()));
    }
    let prefix = args.store.run_id.clone().unwrap_or_else(|| {
        format!(
            "toy-{}-{}",
            exp.train.reward.components, exp.train.reward.gate_mode
        )
    });
    let store = RunStore::open(&args.store.out)?;
    let mode = write_mode(&args.store);

    let seeds: Vec<u64> = (seed..seed + n).collect();
    let reports = seeds
        .par_iter()
        .map(|&s| -> Result<(String, MetricReport, usize, usize)> {
            let run_id = format!("{prefix}-s{s}");
            let fp = fingerprint(&(&exp, s))?;
            if mode == WriteMode::CreateNew && store.exists(&run_id) {
                return Err(Error::RunExists(run_id));
            }
            let out = exp.run(s)?;
            let ev = &out.evaluation;
            let mut report = ev.report.clone();
            report.label = run_id.clone();
            let mut steps = Vec::new();
            for log in &out.run.logs {
                serde_json::to_writer(&mut steps, log)?;
                steps.push(b'\n');
            }
            let summary = ToySummary {
                seed: s,
                mode_coverage: ev.mode_coverage,
                modes: ev.modes,
                valid_ratio: ev.valid_ratio(),
                final_entropy: out.run.logs.last().map(|l| l.entropy),
                draws: ev.draws.clone(),
            };
            store.persist_with(&run_id, &fp, mode, |w| {
                w.write_json("experiment.json", &(&exp, s))?;
                w.write_json(
                    "checkpoint.json",
                    &PolicyCheckpoint::new(&out.run.policy, fp.clone()),
                )?;
                w.write("steps.jsonl", &steps)?;
                w.write_json("evaluation.json", &summary)?;
                w.write_json(REPORT_JSON, &report)?;
                w.write(
                    "metrics.csv",
                    metrics_csv(std::slice::from_ref(&report))?.as_bytes(),
                )?;
                w.write(
                    "metrics.txt",
                    render_metrics(std::slice::from_ref(&report)).as_bytes(),
                )
            })?;
            Ok((run_id, report, ev.mode_coverage, ev.modes))
        })
        .collect::<Result<Vec<_>>>()?;

    let tables: Vec<MetricReport> = reports.iter().map(|r| r.1.clone()).collect();
    print!("{}", render_metrics(&tables));
    for (id, _, cov, modes) in &reports {
        println!("{id}: mode coverage {cov}/{modes}");
    }
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let store = RunStore::open(&args.store)?;
    let runs = match &args.runs {
        Some(r) => r.clone(),
        None => store
            .runs()?
            .into_iter()
            .filter(|id| {
                store
                    .manifest(id)
                    .is_ok_and(|m| m.artifacts.contains_key(REPORT_JSON))
            })
            .collect(),
    };
    if runs.is_empty() {
        return Err(Error::Structure(format!(
            "no metric reports in {}",
            args.store.display()
        )));
    }
    let reports = runs
        .iter()
        .map(|id| {
            let mut r: MetricReport = store.read_json(id, REPORT_JSON)?;
            r.label = id.clone();
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let text = render_metrics(&reports);
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        io::write_atomic(&dir.join("metrics.csv"), metrics_csv(&reports)?.as_bytes())?;
        io::write_atomic(&dir.join("metrics.txt"), text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}
