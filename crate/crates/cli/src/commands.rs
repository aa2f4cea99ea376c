//! Subcommand implementations. Each writes into a fresh run directory together with
//! the resolved configuration (`run.toml`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use image::{Rgb, RgbImage};
use log::{info, warn};
use serde::Serialize;

use flowmotion_core::bboxprep::{box_from_corners, preprocess_roi, Box2D};
use flowmotion_core::classifier::{
    load_checkpoint, predict_batch, save_checkpoint, train, write_history_csv, LabeledRoi, ModelParams,
};
use flowmotion_core::dataset::{
    build_pairs, build_samples, read_manifest, split_samples, summarize, write_manifest, PairMode, SampleRecord,
    SceneDir, Split, SCENE_META,
};
use flowmotion_core::flowcore::{load_npy, render_colorwheel, save_npy, FlowField, MagnitudeScale};
use flowmotion_core::flowestim::{estimate_flow, GrayImage};
use flowmotion_core::labeling::MotionLabel;
use flowmotion_core::metrics::confusion;
use flowmotion_core::synth::{generate, suite_scenes, SynthScene};

use crate::config::RunConfig;
use crate::rundir::RunDir;
use crate::{
    Command, EvalArgs, FilterArgs, FlowArgs, InferArgs, PreprocessArgs, RenderArgs, SplitChoice, SynthArgs,
    TrainArgs, UsageError,
};

pub const MANIFEST: &str = "manifest.jsonl";
pub const RUN_CONFIG: &str = "run.toml";
pub const CHECKPOINT: &str = "model.ckpt";
pub const HISTORY: &str = "history.csv";
pub const METRICS: &str = "metrics.json";
pub const PREDICTIONS: &str = "predictions.jsonl";

pub fn dispatch(cmd: Command, mut cfg: RunConfig, seed: Option<u64>, out: &Path) -> anyhow::Result<()> {
    let mut inputs = BTreeMap::new();
    let name = match &cmd {
        Command::Synth(a) => {
            if let Some(n) = a.scenes {
                cfg.synth.scenes = n;
            }
            if let Some(s) = a.size {
                cfg.synth.width = s;
                cfg.synth.height = s;
            }
            "synth"
        }
        Command::Flow(a) => {
            inputs.insert("scenes", a.scenes.display().to_string());
            if a.interval.is_some() {
                cfg.flow.interval = a.interval;
            }
            if let Some(v) = a.alpha {
                cfg.flow.hs.alpha = v;
            }
            if let Some(v) = a.iterations {
                cfg.flow.hs.iterations = v;
            }
            if let Some(v) = a.levels {
                cfg.flow.hs.pyramid_levels = v;
            }
            "flow"
        }
        Command::Filter(a) => {
            inputs.insert("scenes", a.scenes.display().to_string());
            if a.interval.is_some() {
                cfg.flow.interval = a.interval;
            }
            if let Some(v) = a.eval_fraction {
                cfg.filter.eval_fraction = v;
            }
            "filter"
        }
        Command::Preprocess(a) => {
            inputs.insert("manifest", a.manifest.display().to_string());
            if let Some(v) = a.roi_size {
                cfg.preprocess.roi_size = v;
            }
            "preprocess"
        }
        Command::Train(a) => {
            inputs.insert("manifest", a.manifest.display().to_string());
            let t = &mut cfg.train;
            t.epochs = a.epochs.unwrap_or(t.epochs);
            t.batch_size = a.batch_size.unwrap_or(t.batch_size);
            t.learning_rate = a.lr.unwrap_or(t.learning_rate);
            t.weight_decay = a.wd.unwrap_or(t.weight_decay);
            t.momentum = a.momentum.unwrap_or(t.momentum);
            t.step_size = a.step_size.unwrap_or(t.step_size);
            t.gamma = a.gamma.unwrap_or(t.gamma);
            "train"
        }
        Command::Eval(a) => {
            inputs.insert("manifest", a.manifest.display().to_string());
            if let Some(c) = &a.checkpoint {
                inputs.insert("checkpoint", c.display().to_string());
            }
            "eval"
        }
        Command::Infer(a) => {
            inputs.insert("checkpoint", a.checkpoint.display().to_string());
            inputs.insert("scenes", a.scenes.display().to_string());
            if a.interval.is_some() {
                cfg.flow.interval = a.interval;
            }
            "infer"
        }
        Command::Render(a) => {
            inputs.insert("flow", a.flow.display().to_string());
            "render"
        }
    };
    let cfg = cfg.resolve(seed);
    check_inputs(&cmd)?;
    let rd = RunDir::create(out)?;
    write_run_config(rd.path(), name, &inputs, &cfg)?;
    match cmd {
        Command::Synth(a) => cmd_synth(&rd, &cfg, &a)?,
        Command::Flow(a) => cmd_flow(&rd, &cfg, &a)?,
        Command::Filter(a) => cmd_filter(&rd, &cfg, &a)?,
        Command::Preprocess(a) => cmd_preprocess(&rd, &cfg, &a)?,
        Command::Train(a) => cmd_train(&rd, &cfg, &a)?,
        Command::Eval(a) => cmd_eval(&rd, &a)?,
        Command::Infer(a) => cmd_infer(&rd, &cfg, &a)?,
        Command::Render(a) => cmd_render(&rd, &a)?,
    }
    let dir = rd.commit()?;
    info!("{name}: wrote {}", dir.display());
    Ok(())
}

fn check_inputs(cmd: &Command) -> anyhow::Result<()> {
    let paths: Vec<&PathBuf> = match cmd {
        Command::Synth(_) => vec![],
        Command::Flow(a) => vec![&a.scenes],
        Command::Filter(a) => vec![&a.scenes],
        Command::Preprocess(a) => vec![&a.manifest],
        Command::Train(a) => vec![&a.manifest],
        Command::Eval(a) => a.checkpoint.iter().chain([&a.manifest]).collect(),
        Command::Infer(a) => vec![&a.checkpoint, &a.scenes],
        Command::Render(a) => vec![&a.flow],
    };
    for p in paths {
        if !p.exists() {
            return Err(UsageError::new(format!("{} does not exist", p.display())).into());
        }
    }
    Ok(())
}

fn write_run_config(
    dir: &Path,
    command: &str,
    inputs: &BTreeMap<&str, String>,
    cfg: &RunConfig,
) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct RunSection<'a> {
        command: &'a str,
        inputs: &'a BTreeMap<&'a str, String>,
    }
    let mut text = cfg.to_toml()?;
    text.push('\n');
    text.push_str(&toml::to_string_pretty(&toml::Table::from_iter([(
        "run".to_string(),
        toml::Value::try_from(RunSection { command, inputs })?,
    )]))?);
    std::fs::write(dir.join(RUN_CONFIG), text).context("writing run.toml")
}

/// Scene directories under `root`, or `root` itself if it is one.
pub fn scene_dirs(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if root.join(SCENE_META).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .with_context(|| format!("listing {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(SCENE_META).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(UsageError::new(format!("no scenes found under {}", root.display())).into());
    }
    Ok(dirs)
}

fn absolute(p: &Path) -> anyhow::Result<PathBuf> {
    if p.is_absolute() {
        Ok(p.to_path_buf())
    } else {
        Ok(std::env::current_dir()?.join(p))
    }
}

fn pair_mode(cfg: &RunConfig) -> PairMode {
    match cfg.flow.interval {
        Some(n) => PairMode::EveryNFrames(n),
        None => PairMode::KeyframesOnly,
    }
}

fn cmd_synth(rd: &RunDir, cfg: &RunConfig, _args: &SynthArgs) -> anyhow::Result<()> {
    let scenes = suite_scenes(&cfg.synth)?;
    let mut moving = 0;
    for sc in &scenes {
        let scene = generate(sc)?;
        moving += (0..sc.objects.len())
            .filter(|&i| sc.intended_label(i) == MotionLabel::Moving)
            .count();
        scene.write(rd.path())?;
    }
    info!("synth: {} scenes, {moving} moving objects", scenes.len());
    Ok(())
}

fn cmd_flow(rd: &RunDir, cfg: &RunConfig, args: &FlowArgs) -> anyhow::Result<()> {
    cfg.flow.hs.validate()?;
    let mode = pair_mode(cfg);
    for dir in scene_dirs(&args.scenes)? {
        let scene = SceneDir::load(&dir)?;
        let name = dir.file_name().context("scene directory name")?;
        let out_dir = rd.path().join(name);
        let mut record = scene.record.clone();
        let mut images: Vec<Option<GrayImage>> = vec![None; record.frames.len()];
        for (i, f) in record.frames.iter().enumerate() {
            let dst = out_dir.join(&f.image);
            if let Some(parent) = dst.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::copy(scene.resolve(&f.image), &dst)
                .with_context(|| format!("copying frame {i} of {}", dir.display()))?;
        }
        for f in &mut record.frames {
            f.flow = None;
        }
        std::fs::create_dir_all(out_dir.join("flow"))?;
        for (a, b) in build_pairs(&scene.record, mode)? {
            for k in [a, b] {
                if images[k].is_none() {
                    images[k] = Some(GrayImage::load(scene.resolve(&scene.record.frames[k].image))?);
                }
            }
            let (Some(ia), Some(ib)) = (&images[a], &images[b]) else {
                unreachable!("frames loaded above");
            };
            let flow = estimate_flow(ia, ib, &cfg.flow.hs)?;
            let rel = SynthScene::flow_name(a);
            save_npy(out_dir.join(&rel), &flow)?;
            record.frames[a].flow = Some(rel);
        }
        SceneDir { dir: out_dir, record }.save()?;
    }
    Ok(())
}

fn cmd_filter(rd: &RunDir, cfg: &RunConfig, args: &FilterArgs) -> anyhow::Result<()> {
    let criteria = &cfg.filter.criteria;
    criteria.validate()?;
    let mode = pair_mode(cfg);
    let root = absolute(&args.scenes)?;
    let mut samples = Vec::new();
    let mut dropped = 0;
    for dir in scene_dirs(&root)? {
        let scene = SceneDir::load(&dir)?;
        if criteria.excludes_scene(&scene.record.description) {
            dropped += 1;
            continue;
        }
        samples.extend(build_samples(&scene, mode, criteria)?);
    }
    if samples.is_empty() {
        bail!("no samples passed the filter");
    }
    split_samples(&mut samples, cfg.filter.eval_fraction, cfg.split_seed())?;
    let mut counts: Vec<_> = summarize(&samples).into_iter().collect();
    counts.sort_by_key(|((s, l), _)| (format!("{s:?}"), *l as u8));
    info!("filter: {} samples, {dropped} scenes excluded, counts {counts:?}", samples.len());
    write_manifest(&rd.path().join(MANIFEST), &samples)?;
    Ok(())
}

fn cmd_preprocess(rd: &RunDir, cfg: &RunConfig, args: &PreprocessArgs) -> anyhow::Result<()> {
    let size = cfg.preprocess.roi_size;
    let mut samples = read_manifest(&args.manifest)?;
    let roi_dir = rd.path().join("rois");
    std::fs::create_dir_all(&roi_dir)?;
    let final_dir = absolute(rd.target())?.join("rois");
    let mut cache: Option<(PathBuf, FlowField)> = None;
    for (i, s) in samples.iter_mut().enumerate() {
        if cache.as_ref().map(|(p, _)| p != &s.flow).unwrap_or(true) {
            cache = Some((s.flow.clone(), load_npy(&s.flow)?));
        }
        let field = &cache.as_ref().expect("cached above").1;
        let roi = preprocess_roi(field, &s.roi_box, size).with_context(|| format!("sample {}", s.sample_id))?;
        let file = format!("{i:06}.npy");
        save_npy(roi_dir.join(&file), &roi)?;
        s.roi = Some(final_dir.join(file));
    }
    write_manifest(&rd.path().join(MANIFEST), &samples)?;
    info!("preprocess: {} ROIs of {size}x{size}", samples.len());
    Ok(())
}

fn load_rois(samples: &[&SampleRecord]) -> anyhow::Result<Vec<LabeledRoi>> {
    samples
        .iter()
        .map(|s| {
            let path = s
                .roi
                .as_ref()
                .ok_or_else(|| UsageError::new(format!("sample {} has no ROI; run preprocess first", s.sample_id)))?;
            Ok(LabeledRoi {
                roi: load_npy(path)?,
                label: s.label,
            })
        })
        .collect()
}

fn cmd_train(rd: &RunDir, cfg: &RunConfig, args: &TrainArgs) -> anyhow::Result<()> {
    let samples = read_manifest(&args.manifest)?;
    let tr: Vec<&SampleRecord> = samples.iter().filter(|s| s.split != Some(Split::Eval)).collect();
    let ev: Vec<&SampleRecord> = samples.iter().filter(|s| s.split == Some(Split::Eval)).collect();
    let (tr, ev) = (load_rois(&tr)?, load_rois(&ev)?);
    if let Some(r) = tr.first() {
        if r.roi.width() != cfg.net.input_size || r.roi.height() != cfg.net.input_size {
            return Err(UsageError::new(format!(
                "ROIs are {}x{} but the network expects {}x{}; set preprocess.roi_size",
                r.roi.width(),
                r.roi.height(),
                cfg.net.input_size,
                cfg.net.input_size
            ))
            .into());
        }
    }
    info!("train: {} train / {} eval samples", tr.len(), ev.len());
    let outcome = train(&tr, &ev, &cfg.net, &cfg.train)?;
    let meta = serde_json::json!({ "train": cfg.train });
    save_checkpoint(rd.path().join(CHECKPOINT), &outcome.params, &meta)?;
    let mut buf = Vec::new();
    write_history_csv(&outcome.history, &mut buf)?;
    std::fs::write(rd.path().join(HISTORY), buf)?;
    Ok(())
}

fn cmd_eval(rd: &RunDir, args: &EvalArgs) -> anyhow::Result<()> {
    let samples = read_manifest(&args.manifest)?;
    let mut chosen: Vec<SampleRecord> = samples
        .into_iter()
        .filter(|s| match args.split {
            SplitChoice::All => true,
            SplitChoice::Eval => s.split == Some(Split::Eval),
            SplitChoice::Train => s.split != Some(Split::Eval),
        })
        .collect();
    if chosen.is_empty() {
        return Err(UsageError::new("no samples in the selected split").into());
    }
    if let Some(ck) = &args.checkpoint {
        let (params, _) = load_checkpoint(ck)?;
        let refs: Vec<&SampleRecord> = chosen.iter().collect();
        let rois = load_rois(&refs)?;
        let fields: Vec<&FlowField> = rois.iter().map(|r| &r.roi).collect();
        let preds = predict_batch(&params, &fields)?;
        for (s, (label, p)) in chosen.iter_mut().zip(preds) {
            s.prediction = Some(label);
            s.probability = Some(p as f32);
        }
    }
    let mut preds = Vec::with_capacity(chosen.len());
    for s in &chosen {
        preds.push(s.prediction.ok_or_else(|| {
            UsageError::new(format!("sample {} has no prediction; pass --checkpoint", s.sample_id))
        })?);
    }
    let truths: Vec<MotionLabel> = chosen.iter().map(|s| s.label).collect();
    let report = confusion(&preds, &truths)?.report();
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(rd.path().join(METRICS), text)?;
    write_manifest(&rd.path().join(PREDICTIONS), &chosen)?;
    info!(
        "eval: {} samples, P {:?} R {:?} F1 {:?}",
        chosen.len(),
        report.precision_pct,
        report.recall_pct,
        report.f1_pct
    );
    Ok(())
}

/// Blue for Still, red for Moving.
pub fn label_color(label: MotionLabel) -> Rgb<u8> {
    match label {
        MotionLabel::Still => Rgb([0, 0, 255]),
        MotionLabel::Moving => Rgb([255, 0, 0]),
    }
}

/// Draws a one-pixel rectangle outline covering the pixels the box touches.
pub fn draw_box(img: &mut RgbImage, b: &Box2D, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = (b.xmin.floor() as i64).clamp(0, w - 1);
    let x1 = ((b.xmax.ceil() as i64) - 1).clamp(0, w - 1);
    let y0 = (b.ymin.floor() as i64).clamp(0, h - 1);
    let y1 = ((b.ymax.ceil() as i64) - 1).clamp(0, h - 1);
    for x in x0..=x1 {
        img.put_pixel(x as u32, y0 as u32, color);
        img.put_pixel(x as u32, y1 as u32, color);
    }
    for y in y0..=y1 {
        img.put_pixel(x0 as u32, y as u32, color);
        img.put_pixel(x1 as u32, y as u32, color);
    }
}

#[derive(Serialize)]
struct Inference<'a> {
    scene_id: &'a str,
    frame: usize,
    object_id: &'a str,
    label: MotionLabel,
    probability: f64,
}

fn cmd_infer(rd: &RunDir, cfg: &RunConfig, args: &InferArgs) -> anyhow::Result<()> {
    let (params, _): (ModelParams<f32>, _) = load_checkpoint(&args.checkpoint)?;
    let size = params.config().input_size;
    let mode = pair_mode(cfg);
    let mut lines = String::new();
    for dir in scene_dirs(&args.scenes)? {
        let scene = SceneDir::load(&dir)?;
        let rec = &scene.record;
        let out_dir = rd.path().join(dir.file_name().context("scene directory name")?);
        std::fs::create_dir_all(&out_dir)?;
        for (a, _) in build_pairs(rec, mode)? {
            let frame = &rec.frames[a];
            let Some(flow_ref) = &frame.flow else {
                warn!("{}: frame {a} has no flow, skipped", rec.scene_id);
                continue;
            };
            let field = load_npy(scene.resolve(flow_ref))?;
            let mut img = image::open(scene.resolve(&frame.image))
                .with_context(|| format!("reading frame {a} of {}", rec.scene_id))?
                .to_rgb8();
            let mut boxes = Vec::new();
            let mut rois = Vec::new();
            for ann in &frame.annotations {
                let b = match box_from_corners(&ann.corners) {
                    Ok(b) => b,
                    Err(e) => {
                        warn!("{}: object {} skipped: {e}", rec.scene_id, ann.object_id);
                        continue;
                    }
                };
                rois.push(preprocess_roi(&field, &b, size)?);
                boxes.push((ann, b));
            }
            let refs: Vec<&FlowField> = rois.iter().collect();
            let preds = if refs.is_empty() {
                Vec::new()
            } else {
                predict_batch(&params, &refs)?
            };
            for ((ann, b), (label, p)) in boxes.iter().zip(preds) {
                draw_box(&mut img, b, label_color(label));
                lines.push_str(&serde_json::to_string(&Inference {
                    scene_id: &rec.scene_id,
                    frame: a,
                    object_id: &ann.object_id,
                    label,
                    probability: p,
                })?);
                lines.push('\n');
            }
            img.save(out_dir.join(format!("{a:04}.png")))?;
        }
    }
    std::fs::write(rd.path().join(PREDICTIONS), lines)?;
    Ok(())
}

fn cmd_render(rd: &RunDir, args: &RenderArgs) -> anyhow::Result<()> {
    let field = load_npy(&args.flow)?;
    let scale = match args.max_magnitude {
        Some(m) if m > 0.0 => MagnitudeScale::Fixed(m),
        Some(m) => return Err(UsageError::new(format!("--max-magnitude must be positive, got {m}")).into()),
        None => MagnitudeScale::Auto,
    };
    let stem = args.flow.file_stem().and_then(|s| s.to_str()).unwrap_or("flow");
    render_colorwheel(&field, scale).save(rd.path().join(format!("{stem}.png")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_outline_is_clamped() {
        let mut img = RgbImage::new(10, 10);
        let b = Box2D::new(-3.0, 4.5, 2.0, 20.0).unwrap();
        draw_box(&mut img, &b, label_color(MotionLabel::Moving));
        assert_eq!(img.get_pixel(0, 2), &Rgb([255, 0, 0]));
        assert_eq!(img.get_pixel(4, 9), &Rgb([255, 0, 0]));
        assert_eq!(img.get_pixel(2, 5), &Rgb([0, 0, 0]));
    }
}
