use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use vidsum_core::evaluate::{
    EvalOptions, EvalResult, EvalSetting, F1Aggregation, RefinedScorer, Scorer,
    TrainingFreeScorer,
};
use vidsum_core::featureio::{
    l2_normalize_rows, load_dataset, load_manifest, normalize_length, FeatureMatrix, VideoRecord,
};
use vidsum_core::metrics::{ScoreKind, ScoreSeries};
use vidsum_core::refine::{self, load_checkpoint, save_checkpoint, Checkpoint};
use vidsum_core::summarize::{default_shots, make_summary};
use vidsum_core::synth::{generate, write_dataset, SynthSpec};
use vidsum_core::{Error, Result};

use crate::{AggArg, EvalArgs, Metric, ScoreArgs, ScorerArg, SettingArg, SummarizeArgs, SynthArgs, TrainArgs};

impl From<SettingArg> for EvalSetting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Canonical => EvalSetting::Canonical,
            SettingArg::Augmented => EvalSetting::Augmented,
            SettingArg::Transfer => EvalSetting::Transfer,
        }
    }
}

impl From<AggArg> for F1Aggregation {
    fn from(a: AggArg) -> Self {
        match a {
            AggArg::Mean => F1Aggregation::Mean,
            AggArg::Max => F1Aggregation::Max,
        }
    }
}

fn manifest_base(manifest_path: &Path) -> &Path {
    manifest_path.parent().unwrap_or_else(|| Path::new(""))
}

/// Every command records the flags it actually ran with, so a rerun from
/// the emitted file reproduces the outputs byte for byte.
fn write_config(dir: &Path, config: &serde_json::Value) -> Result<()> {
    write_json(&dir.join("config.json"), config)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_videos: args.videos,
        frames: args.frames,
        dim: args.dim,
        n_clusters: args.clusters,
        redundancy: args.redundancy,
        noise_sigma: args.noise,
        key_fraction: args.key_fraction,
        background_pool: args.pool,
        seed: args.seed,
    };
    let dataset = generate(&spec)?;
    create_dir(&args.out)?;
    write_dataset(&dataset, &args.out)?;
    write_config(&args.out, &json!({ "command": "synth", "out": args.out, "spec": spec }))?;
    println!(
        "wrote {} synthetic videos ({} frames, dim {}) to {}",
        spec.n_videos,
        spec.frames,
        spec.dim,
        args.out.display()
    );
    Ok(())
}

struct MetricSet {
    align: bool,
    uniform: bool,
    filter: bool,
}

fn resolve_metrics(metrics: &[Metric]) -> Result<MetricSet> {
    if metrics.is_empty() {
        return Err(Error::Domain("at least one metric is required".into()));
    }
    Ok(MetricSet {
        align: metrics.contains(&Metric::Align),
        uniform: metrics.contains(&Metric::Uniform),
        filter: metrics.contains(&Metric::Filter),
    })
}

enum ScoreMode {
    Free(TrainingFreeScorer),
    Refined(Box<RefinedScorer>),
}

impl ScoreMode {
    fn score(&self, video: &VideoRecord) -> Result<ScoreSeries> {
        match self {
            ScoreMode::Free(s) => s.score(video),
            ScoreMode::Refined(s) => s.score(video),
        }
    }
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let set = resolve_metrics(&args.metrics)?;
    let manifest = load_manifest(&args.manifest)?;
    let records = load_dataset(&manifest, manifest_base(&args.manifest))?;

    let (mode, model_config) = match &args.checkpoint {
        Some(path) => {
            let mut scorer = RefinedScorer::from_checkpoint(load_checkpoint(path)?);
            scorer.use_align = set.align;
            scorer.use_uniform = set.uniform;
            scorer.use_filter = set.filter;
            scorer.epsilon = args.epsilon;
            scorer.sigma = args.sigma;
            let config = scorer.config.clone();
            (ScoreMode::Refined(Box::new(scorer)), Some(config))
        }
        None => {
            if set.filter {
                return Err(Error::Domain(
                    "the filter metric needs a trained model; pass --checkpoint".into(),
                ));
            }
            let scorer = TrainingFreeScorer {
                use_align: set.align,
                use_uniform: set.uniform,
                neighbor_ratio: args.neighbor_ratio,
                epsilon: args.epsilon,
                sigma: args.sigma,
            };
            (ScoreMode::Free(scorer), None)
        }
    };
    let neighbor_ratio = model_config
        .as_ref()
        .map_or(args.neighbor_ratio, |c| c.neighbor_ratio);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .map_err(|e| Error::Domain(format!("worker pool: {e}")))?;
    let scored: Vec<(String, Vec<f64>)> = pool.install(|| {
        records
            .par_iter()
            .map(|r| mode.score(r).map(|s| (r.id.clone(), s.values().to_vec())))
            .collect::<Result<_>>()
    })?;
    let scores: BTreeMap<String, Vec<f64>> = scored.into_iter().collect();

    let per_video_dir = args.out.join("scores");
    create_dir(&per_video_dir)?;
    write_json(&args.out.join("scores.json"), &scores)?;
    for (id, values) in &scores {
        let mut csv = String::from("frame,score\n");
        for (i, v) in values.iter().enumerate() {
            csv.push_str(&format!("{i},{v}\n"));
        }
        let path = per_video_dir.join(format!("{id}.csv"));
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    }
    write_config(
        &args.out,
        &json!({
            "command": "score",
            "manifest": args.manifest,
            "out": args.out,
            "metrics": args.metrics,
            "neighbor_ratio": neighbor_ratio,
            "epsilon": args.epsilon,
            "sigma": args.sigma,
            "checkpoint": args.checkpoint,
            "model_config": model_config,
            "workers": args.workers,
        }),
    )?;
    println!("scored {} videos -> {}", scores.len(), args.out.display());
    Ok(())
}

/// Normalizes (and optionally resamples) manifest videos into a training
/// batch, with one derived seed per video so the draw does not depend on
/// batch composition elsewhere.
fn prepare_features(
    records: &[VideoRecord],
    target_length: usize,
    seed: u64,
) -> Result<Vec<FeatureMatrix>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let f = if r.features.is_normalized() {
                r.features.clone()
            } else {
                l2_normalize_rows(&r.features)?
            };
            if target_length > 0 {
                let mixed = seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                normalize_length(&f, target_length, mixed)
            } else {
                Ok(f)
            }
        })
        .collect()
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let records = load_dataset(&manifest, manifest_base(&args.manifest))?;
    let config = args.flags.to_config();
    let features = prepare_features(&records, args.flags.target_length, config.seed)?;
    let outcome = refine::train(&features, &config)?;

    create_dir(&args.out)?;
    let mut csv = String::from("step,loss\n");
    for (i, loss) in outcome.history.iter().enumerate() {
        csv.push_str(&format!("{},{loss}\n", i + 1));
    }
    let history_path = args.out.join("loss_history.csv");
    fs::write(&history_path, csv).map_err(|e| Error::io(&history_path, e))?;
    let steps = outcome.history.len();
    let final_loss = outcome.history.last().copied();
    save_checkpoint(
        &args.out.join("model.ckpt"),
        &Checkpoint { projector: outcome.projector, filter: outcome.filter, config: config.clone() },
    )?;
    write_config(
        &args.out,
        &json!({
            "command": "train",
            "manifest": args.manifest,
            "out": args.out,
            "config": config,
            "target_length": args.flags.target_length,
        }),
    )?;
    match final_loss {
        Some(loss) => println!(
            "trained on {} videos, {steps} steps, final loss {loss:.6} -> {}",
            records.len(),
            args.out.display()
        ),
        None => println!(
            "no optimizer steps ran; wrote initial parameters -> {}",
            args.out.display()
        ),
    }
    Ok(())
}

#[derive(Serialize)]
struct SummaryOut {
    budget: usize,
    selected_shots: Vec<usize>,
    frame_mask: Vec<u8>,
}

pub fn summarize(args: &SummarizeArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let records = load_dataset(&manifest, manifest_base(&args.manifest))?;
    let by_id: BTreeMap<&str, &VideoRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();

    let text = fs::read_to_string(&args.scores).map_err(|e| Error::io(&args.scores, e))?;
    let scores: BTreeMap<String, Vec<f64>> = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", args.scores.display())))?;

    let mut summaries = BTreeMap::new();
    for (id, values) in &scores {
        let record = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Manifest(format!("scores mention unknown video {id:?}")))?;
        let t = record.features.frames();
        if values.len() != t {
            return Err(Error::Data(format!(
                "video {id:?}: {} scores for {t} frames",
                values.len()
            )));
        }
        let series = ScoreSeries::new(values.clone(), ScoreKind::Importance)?;
        let shots = match &record.shots {
            Some(s) => s.clone(),
            None => default_shots(t, args.shot_len)?,
        };
        let selection = make_summary(&series, &shots, args.ratio)?;
        summaries.insert(
            id.clone(),
            SummaryOut {
                budget: selection.budget,
                selected_shots: selection.selected_indices(),
                frame_mask: selection.frame_mask,
            },
        );
    }

    create_dir(&args.out)?;
    write_json(&args.out.join("summary.json"), &summaries)?;
    write_config(
        &args.out,
        &json!({
            "command": "summarize",
            "manifest": args.manifest,
            "scores": args.scores,
            "out": args.out,
            "ratio": args.ratio,
            "shot_len": args.shot_len,
        }),
    )?;
    println!("summarized {} videos -> {}", summaries.len(), args.out.display());
    Ok(())
}

/// A refined scorer whose parameters came from a checkpoint: fitting is
/// a no-op, so every fold reuses the same model.
struct FixedScorer(RefinedScorer);

impl Scorer for FixedScorer {
    fn fit(&mut self, _train: &[&VideoRecord]) -> Result<()> {
        Ok(())
    }

    fn score(&self, video: &VideoRecord) -> Result<ScoreSeries> {
        self.0.score(video)
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let records = load_dataset(&manifest, manifest_base(&args.manifest))?;
    let setting: EvalSetting = match args.setting {
        Some(s) => s.into(),
        None => manifest.setting,
    };
    let aggregation: F1Aggregation = match args.agg {
        Some(a) => a.into(),
        None => manifest.f1_aggregation.unwrap_or_default(),
    };
    let opts = EvalOptions {
        summary_ratio: args.ratio,
        shot_len: args.shot_len,
        f1_aggregation: aggregation,
    };
    let metrics = match &args.metrics {
        Some(m) => m.clone(),
        None => match args.scorer {
            ScorerArg::Free => vec![Metric::Align, Metric::Uniform],
            ScorerArg::Refined => vec![Metric::Align, Metric::Uniform, Metric::Filter],
        },
    };
    let set = resolve_metrics(&metrics)?;

    let (result, model_config) = match args.scorer {
        ScorerArg::Free => {
            if set.filter {
                return Err(Error::Domain(
                    "the filter metric needs --scorer refined".into(),
                ));
            }
            let mut scorer = TrainingFreeScorer {
                use_align: set.align,
                use_uniform: set.uniform,
                neighbor_ratio: args.flags.neighbor_ratio,
                epsilon: args.epsilon,
                sigma: args.sigma,
            };
            (run_eval(&records, &manifest, setting, &mut scorer, &opts)?, None)
        }
        ScorerArg::Refined => {
            let mut scorer = match &args.checkpoint {
                Some(path) => RefinedScorer::from_checkpoint(load_checkpoint(path)?),
                None => RefinedScorer::new(args.flags.to_config()),
            };
            scorer.use_align = set.align;
            scorer.use_uniform = set.uniform;
            scorer.use_filter = set.filter;
            scorer.epsilon = args.epsilon;
            scorer.sigma = args.sigma;
            scorer.target_length = match args.flags.target_length {
                0 => None,
                n => Some(n),
            };
            let config = scorer.config.clone();
            let result = if args.checkpoint.is_some() {
                let mut fixed = FixedScorer(scorer);
                run_eval(&records, &manifest, setting, &mut fixed, &opts)?
            } else {
                run_eval(&records, &manifest, setting, &mut scorer, &opts)?
            };
            (result, Some(config))
        }
    };

    create_dir(&args.out)?;
    let mut csv = String::from("setting,fold,videos,f1,kendall_tau,spearman_rho\n");
    for fold in &result.per_fold {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            result.setting, fold.fold, fold.num_videos, fold.f1, fold.kendall_tau, fold.spearman_rho
        ));
    }
    csv.push_str(&format!(
        "{},overall,{},{},{},{}\n",
        result.setting,
        result.per_video.len(),
        result.f1,
        result.kendall_tau,
        result.spearman_rho
    ));
    let results_path = args.out.join("results.csv");
    fs::write(&results_path, csv).map_err(|e| Error::io(&results_path, e))?;

    let mut csv = String::from("id,fold,f1,kendall_tau,spearman_rho\n");
    for v in &result.per_video {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            v.id, v.fold, v.f1, v.kendall_tau, v.spearman_rho
        ));
    }
    let per_video_path = args.out.join("per_video.csv");
    fs::write(&per_video_path, csv).map_err(|e| Error::io(&per_video_path, e))?;

    write_json(&args.out.join("result.json"), &result)?;
    write_config(
        &args.out,
        &json!({
            "command": "eval",
            "manifest": args.manifest,
            "out": args.out,
            "setting": result.setting,
            "agg": aggregation,
            "scorer": args.scorer,
            "metrics": metrics,
            "epsilon": args.epsilon,
            "sigma": args.sigma,
            "ratio": args.ratio,
            "shot_len": args.shot_len,
            "checkpoint": args.checkpoint,
            "model_config": model_config,
        }),
    )?;

    print_table(&result);
    println!("wrote {}", results_path.display());
    Ok(())
}

fn run_eval(
    records: &[VideoRecord],
    manifest: &vidsum_core::featureio::DatasetManifest,
    setting: EvalSetting,
    scorer: &mut dyn Scorer,
    opts: &EvalOptions,
) -> Result<EvalResult> {
    vidsum_core::evaluate::run_setting(records, &manifest.splits, setting, scorer, opts)
}

fn print_table(result: &EvalResult) {
    println!(
        "{:<10} {:>7} {:>7} {:>9} {:>9} {:>9}",
        "setting", "fold", "videos", "F1", "tau", "rho"
    );
    for fold in &result.per_fold {
        println!(
            "{:<10} {:>7} {:>7} {:>9.4} {:>9.4} {:>9.4}",
            result.setting.to_string(),
            fold.fold,
            fold.num_videos,
            fold.f1,
            fold.kendall_tau,
            fold.spearman_rho
        );
    }
    println!(
        "{:<10} {:>7} {:>7} {:>9.4} {:>9.4} {:>9.4}",
        result.setting.to_string(),
        "overall",
        result.per_video.len(),
        result.f1,
        result.kendall_tau,
        result.spearman_rho
    );
}
