use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use phasenet_core::canvas::canvas_size;
use phasenet_core::container::{write_atomic, Container};
use phasenet_core::evalkit::{
    format_table, leave_one_out_with, Average, Interpolator, MetricReport, Passthrough, PhaseBaseline, PhaseNetMethod,
};
use phasenet_core::imageio::{encode_png, probe_image, read_image, BitDepth};
use phasenet_core::pyramid::resolution_schedule;
use phasenet_core::trainer::{load_triplets, synthetic_triplets, Checkpoint, Trainer};
use phasenet_core::{Decomposition, FilterBank, Image, PyramidConfig, RealGrid};

use crate::config::RunConfig;
use crate::Method;

const DECOMPOSITION_KIND: &[u8] = b"phasenet-decomposition";

fn require_output<'a>(out: Option<&'a Path>, what: &str) -> Result<&'a Path> {
    out.with_context(|| format!("--output is required ({what})"))
}

fn write_png(path: &Path, image: &Image, depth: BitDepth) -> Result<()> {
    write_atomic(path, &encode_png(image, depth)?).with_context(|| format!("writing {}", path.display()))
}

fn is_frame(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// PNG frames of a directory in file-name order.
fn read_sequence(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading sequence {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| is_frame(p));
    paths.sort();
    paths.iter().map(|p| Ok(read_image(p)?)).collect()
}

fn scaled(grid: &RealGrid, f: impl Fn(f64) -> f64) -> Image {
    Image::from_grid(&grid.map(|v| f(v).clamp(0.0, 1.0)))
}

fn put_decomposition(c: &mut Container, prefix: &str, dec: &Decomposition) -> Result<()> {
    let (h, w) = dec.lowpass.shape();
    c.put_f64(format!("{prefix}.lowpass"), vec![h, w], dec.lowpass.as_slice().to_vec())?;
    let (h, w) = dec.highpass.shape();
    c.put_f64(format!("{prefix}.highpass"), vec![h, w], dec.highpass.as_slice().to_vec())?;
    for band in dec.bands.iter().flatten() {
        let (h, w) = band.data.shape();
        let data = band.data.as_slice().iter().flat_map(|z| [z.re, z.im]).collect();
        c.put_f64(
            format!("{prefix}.band.{:02}.{}", band.level, band.orientation),
            vec![h, w, 2],
            data,
        )?;
    }
    Ok(())
}

pub fn decompose(cfg: &RunConfig, image: &Path, out: Option<&Path>) -> Result<()> {
    let out = require_output(out, "directory for the decomposition")?;
    let img = read_image(image)?;
    let (h, w, channels) = img.dims();
    let bank = FilterBank::new(&cfg.pyramid, (h, w))?;
    let decs = (0..channels)
        .map(|c| bank.decompose(&img.channel(c)))
        .collect::<phasenet_core::Result<Vec<_>>>()?;
    let luma = if channels == 1 {
        decs[0].clone()
    } else {
        bank.decompose(&img.luma())?
    };

    std::fs::create_dir_all(out)?;
    let mut c = Container::new();
    c.put_bytes("kind", DECOMPOSITION_KIND.to_vec())?;
    c.put_bytes("config", serde_json::to_vec(&cfg.pyramid)?)?;
    c.put_u64("channels", vec![channels as u64])?;
    for (i, dec) in decs.iter().enumerate() {
        put_decomposition(&mut c, &format!("c{i}"), dec)?;
    }
    c.save(&out.join("decomposition.phnt"))?;

    for band in luma.bands.iter().flatten() {
        let amp = band.amplitude();
        let peak = amp.max_abs().max(1e-12);
        let stem = format!("level_{:02}_orient_{}", band.level, band.orientation);
        write_png(&out.join(format!("{stem}_amplitude.png")), &scaled(&amp, |v| v / peak), cfg.bit_depth)?;
        let phase = band.phase();
        let to_unit = |v: f64| (v + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
        write_png(&out.join(format!("{stem}_phase.png")), &scaled(&phase, to_unit), cfg.bit_depth)?;
    }
    write_png(&out.join("lowpass.png"), &scaled(&luma.lowpass, |v| v), cfg.bit_depth)?;
    let peak = luma.highpass.max_abs().max(1e-12);
    write_png(&out.join("highpass.png"), &scaled(&luma.highpass, |v| 0.5 + 0.5 * v / peak), cfg.bit_depth)?;
    eprintln!(
        "{h}x{w}, {} levels x {} orientations written to {}",
        bank.levels(),
        bank.orientations(),
        out.display()
    );
    Ok(())
}

/// Pyramid used with a checkpoint: its own geometry, with the level count
/// overridden when set explicitly.
fn checkpoint_pyramid(cfg: &RunConfig, ck: &Checkpoint) -> PyramidConfig {
    let mut pyramid = ck.pyramid;
    if cfg.levels_set {
        pyramid.levels = cfg.pyramid.levels;
    }
    pyramid
}

fn build_method(
    cfg: &RunConfig,
    method: Method,
    checkpoint: Option<&Path>,
    frames: &[Image],
) -> Result<Box<dyn Interpolator>> {
    Ok(match method {
        Method::Average => Box::new(Average),
        Method::Baseline => Box::new(PhaseBaseline::new(cfg.pyramid)),
        Method::Passthrough => Box::new(Passthrough {
            frames: frames.to_vec(),
        }),
        Method::Phasenet => {
            let path = checkpoint.context("the phasenet method needs --checkpoint")?;
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            let pyramid = checkpoint_pyramid(cfg, &ck);
            Box::new(PhaseNetMethod::new(&ck.weights, pyramid)?)
        }
    })
}

pub fn interpolate(
    cfg: &RunConfig,
    frame1: &Path,
    frame2: &Path,
    method: Method,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let out = require_output(out, "path of the synthesized frame")?;
    if method == Method::Passthrough {
        bail!("passthrough needs the held-out frame; use it with `eval`");
    }
    let a = read_image(frame1)?;
    let b = read_image(frame2)?;
    a.ensure_same_dims(&b)?;
    let interpolator = build_method(cfg, method, checkpoint, &[])?;
    let (h, w, _) = a.dims();
    if method != Method::Average {
        let pyramid = match (method, checkpoint) {
            (Method::Phasenet, Some(p)) => checkpoint_pyramid(cfg, &Checkpoint::load(p)?),
            _ => cfg.pyramid,
        };
        let (ch, cw) = canvas_size(h, w, &pyramid);
        eprintln!("canvas {cw}x{ch}, {} levels", pyramid.levels);
    }
    let mid = interpolator.interpolate(&a, &b, 1)?;
    write_png(out, &mid, cfg.bit_depth)
}

pub fn train(cfg: &RunConfig, dataset: &Path, resume: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let out = require_output(out, "directory for checkpoints and the log")?;
    let data = load_triplets(dataset).with_context(|| format!("loading dataset {}", dataset.display()))?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(Checkpoint::load(path)?)?,
        None => Trainer::new(cfg.arch(), cfg.pyramid, cfg.train.clone())?,
    };
    std::fs::create_dir_all(out)?;
    let log_path = out.join("train.jsonl");
    let mut log = match resume {
        Some(_) => std::fs::read_to_string(&log_path).unwrap_or_default(),
        None => String::new(),
    };
    let mut log_error = None;
    eprintln!(
        "{} triplets, {} parameters, {} stages",
        data.len(),
        trainer.weights.parameter_count(),
        trainer.stages().len()
    );
    trainer.run(
        &data,
        &mut |record| {
            let line = serde_json::to_string(record).expect("record serializes");
            eprintln!("{line}");
            log.push_str(&line);
            log.push('\n');
            if let Err(e) = write_atomic(&log_path, log.as_bytes()) {
                log_error.get_or_insert(e);
            }
        },
        &mut |t| t.checkpoint().save(&out.join(format!("stage_{:02}.phnt", t.next_stage))),
    )?;
    if let Some(e) = log_error {
        return Err(e.into());
    }
    trainer.checkpoint().save(&out.join("model.phnt"))?;
    eprintln!("model written to {}", out.join("model.phnt").display());
    Ok(())
}

pub fn eval(
    cfg: &RunConfig,
    sequence: &Path,
    methods: &[Method],
    checkpoint: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let frames = read_sequence(sequence)?;
    let name = sequence
        .file_name()
        .map_or_else(|| sequence.display().to_string(), |n| n.to_string_lossy().into_owned());
    let mut reports: Vec<MetricReport> = Vec::new();
    for &method in methods {
        let interpolator = build_method(cfg, method, checkpoint, &frames)?;
        let report = leave_one_out_with(&frames, interpolator.as_ref(), &name, cfg.psnr_cap, &mut |s| {
            eprintln!("{}: frame {} psnr {:.3} ssim {:.4}", interpolator.name(), s.index, s.psnr, s.ssim)
        })?;
        reports.push(report);
    }
    let table = format_table(&reports);
    print!("{table}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("report.txt"), table.as_bytes())?;
        let jsonl: String = reports.iter().map(MetricReport::to_jsonl).collect();
        write_atomic(&dir.join("report.jsonl"), jsonl.as_bytes())?;
    }
    Ok(())
}

fn describe_checkpoint(ck: &Checkpoint) -> Result<()> {
    let arch = &ck.weights.arch;
    println!("checkpoint");
    println!("  levels        {} (network blocks {})", ck.weights.levels(), ck.weights.blocks());
    println!("  orientations  {}", arch.orientations);
    println!("  width         {}", arch.width);
    println!("  parameters    {}", ck.weights.parameter_count());
    println!("  block groups  {:?}", ck.weights.block_groups);
    let stages = phasenet_core::trainer::plan_stages(&ck.weights, &ck.train).len();
    println!("  stages done   {}/{}", ck.next_stage.min(stages), stages);
    println!("  pyramid       {}", serde_json::to_string(&ck.pyramid)?);
    println!("  training      {}", serde_json::to_string(&ck.train)?);
    Ok(())
}

pub fn info(cfg: &RunConfig, path: Option<&Path>) -> Result<()> {
    let Some(path) = path else {
        println!("pyramid  {}", serde_json::to_string(&cfg.pyramid)?);
        println!("network  {}", serde_json::to_string(&cfg.arch())?);
        println!("training {}", serde_json::to_string(&cfg.train)?);
        println!("psnr cap {}", cfg.psnr_cap);
        return Ok(());
    };
    if is_frame(path) {
        let (h, w, c) = probe_image(path)?;
        let (ch, cw) = canvas_size(h, w, &cfg.pyramid);
        println!("image {w}x{h}, {c} channel(s)");
        println!("padded canvas for {} levels: {cw}x{ch}", cfg.pyramid.levels);
        let schedule = resolution_schedule(&cfg.pyramid, (ch, cw))?;
        for (level, (lh, lw)) in schedule.iter().enumerate() {
            println!("  level {level:>2}: {lw}x{lh}");
        }
        return Ok(());
    }
    let container = Container::load(path).with_context(|| format!("reading {}", path.display()))?;
    if container.bytes("kind").ok() == Some(b"phasenet-checkpoint".as_slice()) {
        return describe_checkpoint(&Checkpoint::from_container(&container)?);
    }
    println!("container with {} entries", container.len());
    for name in container.names() {
        println!("  {name} {:?}", container.get(name)?.dims);
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let out = require_output(out, "directory for the dataset")?;
    let data = synthetic_triplets(&cfg.synthetic)?;
    for i in 0..data.len() {
        let dir = out.join(format!("t{i:05}"));
        std::fs::create_dir_all(&dir)?;
        for (k, frame) in data.triplet(i)?.iter().enumerate() {
            write_png(&dir.join(format!("frame_{k}.png")), frame, BitDepth::Sixteen)?;
        }
    }
    eprintln!("{} triplets written to {}", data.len(), out.display());
    Ok(())
}
