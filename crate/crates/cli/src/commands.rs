use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use mri_forge_core::augment::{compose, random_plan, AugmentPlan, AugmentSpec, PlanPolicy};
use mri_forge_core::dataset::{
    balanced_epoch_sample, build_manifest, list_frames, load_boxes, load_manifest, load_sources,
    select_frames, write_epoch_sample, BuildPolicy, Split,
};
use mri_forge_core::detect::{
    default_grid, evaluate, grid_search, group_by_video, write_reports, AggregationParams,
    FaceScore, VideoLabel,
};
use mri_forge_core::digest::dir_digest;
use mri_forge_core::distract::{
    overlay, random_spec, DistractPolicy, DistractionSpec, FrameSequence,
};
use mri_forge_core::image::{load_image, save_image};
use mri_forge_core::jsonl::{read_jsonl, write_file};
use mri_forge_core::losses::{evaluate_predictions, mri_ssim_config, L2Mode, LossConfig};
use mri_forge_core::perceptual::{export_mri, mri_image, ssim_image, SsimConfig};
use mri_forge_core::synth::{generate_corpus, SynthConfig};
use mri_forge_core::{Label, SeedSpec};

use crate::config::{read_toml, require_dir, require_file, RunConfig};
use crate::{
    AugmentArgs, Cli, Command, DatasetArgs, DetectArgs, DistractArgs, EpochArgs, Invalid, L2Arg,
    LossArgs, MriArgs, Preset, SplitArg, SsimArgs, SsimOpts, SynthArgs,
};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Invalid("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ssim(a) => ssim(a, &cfg),
        Command::Mri(a) => mri(a, &cfg),
        Command::Augment(a) => augment(a, &cfg),
        Command::Distract(a) => distract(a, &cfg),
        Command::SynthCorpus(a) => synth(a, &cfg),
        Command::MakeDataset(a) => make_dataset(a, &cfg),
        Command::EpochSample(a) => epoch_sample(a, &cfg),
        Command::EvalLosses(a) => eval_losses(a, &cfg),
        Command::Detect(a) => detect(a, &cfg, false),
        Command::GridSearch(a) => detect(a, &cfg, true),
    }
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn parse_json<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> anyhow::Result<T> {
    Ok(serde_json::from_str(text).map_err(|e| Invalid(format!("{what}: {e}")))?)
}

fn ssim_config(opts: &SsimOpts, cfg: &RunConfig) -> anyhow::Result<SsimConfig> {
    let mut s = cfg.ssim.clone().unwrap_or_default();
    if let Some(w) = opts.window {
        s.window = w;
    }
    if let Some(k) = opts.k1 {
        s.k1 = k;
    }
    if let Some(k) = opts.k2 {
        s.k2 = k;
    }
    if let Some(l) = opts.dynamic_range {
        s.dynamic_range = l;
    }
    s.validate()?;
    Ok(s)
}

fn load_pair(
    a: &Path,
    b: &Path,
) -> anyhow::Result<(mri_forge_core::ImageBuf, mri_forge_core::ImageBuf)> {
    require_file(a)?;
    require_file(b)?;
    Ok((load_image(a)?, load_image(b)?))
}

fn ssim(a: SsimArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let s = ssim_config(&a.ssim, cfg)?;
    let (x, y) = load_pair(&a.a, &a.b)?;
    let map = ssim_image(&x, &y, &s)?;
    if let Some(path) = &a.map {
        save_image(&map.to_display(), path)?;
    }
    println!("{:.6}", map.mean());
    Ok(())
}

fn mri(a: MriArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let s = ssim_config(&a.ssim, cfg)?;
    let (x, y) = load_pair(&a.a, &a.b)?;
    let m = mri_image(&x, &y, &s)?;
    let raw = a.raw.then(|| a.out.with_extension("mri"));
    export_mri(&m, &a.out, raw.as_deref())?;
    Ok(())
}

fn augment(a: AugmentArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let seed = SeedSpec::new(cfg.seed(a.seed)?, "augment");
    require_file(&a.input)?;
    let plan = if a.specs.is_empty() {
        let policy: PlanPolicy = match &a.policy {
            Some(p) => read_toml(p)?,
            None => PlanPolicy::default(),
        };
        random_plan(&seed, &policy)?
    } else {
        let specs = a
            .specs
            .iter()
            .map(|s| parse_json::<AugmentSpec>("--spec", s))
            .collect::<anyhow::Result<Vec<_>>>()?;
        AugmentPlan { specs, seed }
    };
    let img = load_image(&a.input)?;
    save_image(&compose(&img, &plan)?, &a.output)?;
    print_json(&plan)
}

fn distract(a: DistractArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let seed = SeedSpec::new(cfg.seed(a.seed)?, "distract");
    require_dir(&a.input_dir)?;
    let files = list_frames(&a.input_dir)?;
    let indices = select_frames(files.len(), a.stride)?;
    if indices.is_empty() {
        return Err(Invalid(format!("no frames in {}", a.input_dir.display())).into());
    }
    let frames = indices
        .iter()
        .map(|&i| load_image(&files[i]))
        .collect::<Result<Vec<_>, _>>()?;
    let seq = FrameSequence::new(frames, indices.clone())?;
    let spec: DistractionSpec = match &a.spec {
        Some(text) => parse_json("--spec", text)?,
        None => {
            let policy: DistractPolicy = match &a.policy {
                Some(p) => read_toml(p)?,
                None => DistractPolicy::default(),
            };
            let f = &seq.frames()[0];
            random_spec(&seed, &policy, (f.width(), f.height()))?
        }
    };
    let out = overlay(&seq, &spec, &seed.child("overlay"))?;
    for (frame, &i) in out.frames().iter().zip(&indices) {
        let name = files[i].file_stem().expect("frame file has a name");
        save_image(frame, a.output_dir.join(name).with_extension("png"))?;
    }
    print_json(&spec)
}

fn synth(a: SynthArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let seed = SeedSpec::new(cfg.seed(a.seed)?, "corpus");
    let out = a
        .out
        .or_else(|| cfg.paths.out_dir.clone())
        .ok_or_else(|| Invalid("--out is required".into()))?;
    let sc = SynthConfig {
        n_videos: a.n_videos,
        frames_per_video: a.frames_per_video,
        width: a.width,
        height: a.height,
        corpus: a.corpus,
    };
    let corpus = generate_corpus(&sc, &out, &seed)?;
    print_json(&serde_json::json!({
        "videos": corpus.sources.len(),
        "boxes": corpus.boxes.len(),
        "digest": dir_digest(&out)?,
    }))
}

fn required(
    flag: Option<PathBuf>,
    fallback: &Option<PathBuf>,
    name: &str,
) -> anyhow::Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Invalid(format!("--{name} is required")).into())
}

fn make_dataset(a: DatasetArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let seed = SeedSpec::new(cfg.seed(a.seed)?, "dataset");
    let sources_path = required(a.sources, &cfg.paths.sources, "sources")?;
    let boxes_path = required(a.boxes, &cfg.paths.boxes, "boxes")?;
    let out = required(a.out, &cfg.paths.out_dir, "out")?;
    require_file(&sources_path)?;
    require_file(&boxes_path)?;
    let mut policy: BuildPolicy = match a.policy.or_else(|| cfg.policy.clone()) {
        Some(p) => read_toml(&p)?,
        None => BuildPolicy::default(),
    };
    if let Some(s) = &cfg.ssim {
        policy.ssim = s.clone();
    }
    if let Some(f) = a.face_size {
        policy.face_size = f;
    }
    if let Some(s) = a.stride {
        policy.stride = s;
    }
    let sources = load_sources(&sources_path)?;
    for s in &sources {
        require_dir(&s.frame_dir)?;
    }
    let boxes = load_boxes(&boxes_path)?;
    let entries = build_manifest(&sources, &boxes, &policy, &out, &seed)?;
    let count = |l: Label| entries.iter().filter(|e| e.label == l).count();
    print_json(&serde_json::json!({
        "entries": entries.len(),
        "fake": count(Label::Fake),
        "real": count(Label::Real),
        "digest": dir_digest(&out)?,
    }))
}

fn epoch_sample(a: EpochArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let seed = SeedSpec::new(cfg.seed(a.seed)?, "epochs");
    require_file(&a.manifest)?;
    let manifest = load_manifest(&a.manifest)?;
    let split = a.split.map(|s| match s {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    });
    let sample = balanced_epoch_sample(&manifest, split, a.epoch, &seed)?;
    if sample.with_replacement {
        log::warn!("fewer reals than fakes; reals drawn with replacement");
    }
    write_epoch_sample(&a.out, &sample)?;
    Ok(())
}

fn eval_losses(a: LossArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    require_file(&a.manifest)?;
    require_dir(&a.predictions)?;
    let mut lc: LossConfig = cfg.losses.clone().unwrap_or_default();
    if let Some(v) = a.lambda {
        lc.lambda = v;
    }
    if let Some(v) = a.tau {
        lc.tau = v;
    }
    if let Some(v) = a.eta {
        lc.eta = v;
    }
    if let Some(m) = a.l2_mode {
        lc.l2_mode = match m {
            L2Arg::Mse => L2Mode::Mse,
            L2Arg::Norm => L2Mode::Norm,
        };
    }
    if let Some(v) = a.real_label {
        lc.labels.real = v;
    }
    if let Some(v) = a.fake_label {
        lc.labels.fake = v;
    }
    let report = evaluate_predictions(&a.manifest, &a.predictions, &lc, &mri_ssim_config())?;
    match &a.out {
        Some(path) => {
            let json = serde_json::to_string_pretty(&report)?;
            write_file(path, json.as_bytes())?;
            Ok(())
        }
        None => print_json(&report),
    }
}

fn detect(a: DetectArgs, cfg: &RunConfig, force_grid: bool) -> anyhow::Result<()> {
    require_file(&a.scores)?;
    require_file(&a.labels)?;
    let scores: Vec<FaceScore> = read_jsonl(&a.scores)?;
    if scores.is_empty() {
        return Err(Invalid(format!("{} holds no face scores", a.scores.display())).into());
    }
    let labels: Vec<VideoLabel> = read_jsonl(&a.labels)?;
    let mut label_map = BTreeMap::new();
    for l in labels {
        if label_map.insert(l.video_id.clone(), l.label).is_some() {
            return Err(Invalid(format!("duplicate label for {}", l.video_id)).into());
        }
    }
    let grouped = group_by_video(&scores)?;
    let grid_run = force_grid || a.grid;
    let (params, grid) = if grid_run {
        let thresholds = a
            .thresholds
            .or_else(|| cfg.grid.thresholds.clone())
            .unwrap_or_else(default_grid);
        let fractions = a
            .fractions
            .or_else(|| cfg.grid.fractions.clone())
            .unwrap_or_else(default_grid);
        let g = grid_search(&grouped, &label_map, &thresholds, &fractions)?;
        (g.best, Some(g))
    } else {
        let params = match (a.preset, a.threshold, a.fraction) {
            (Some(Preset::PlainFrames), ..) => AggregationParams::PLAIN_FRAMES,
            (Some(Preset::MriBased), ..) => AggregationParams::MRI_BASED,
            (None, Some(t), Some(f)) => AggregationParams::new(t, f)?,
            _ => {
                return Err(Invalid(
                    "give --preset, --threshold with --fraction, or --grid".into(),
                )
                .into());
            }
        };
        (params, None)
    };
    let evaluation = evaluate(&grouped, &label_map, &params)?;
    write_reports(&a.out, &evaluation, grid.as_ref())?;
    print_json(&serde_json::json!({
        "params": evaluation.params,
        "confusion": evaluation.confusion,
        "metrics": evaluation.metrics,
        "dropped": evaluation.dropped,
    }))
}
