use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use flowsr::degradation::{DegradationModel, DegradationSpec};
use flowsr::evalkit::{error_map, evaluate_sequence, FlowInputs};
use flowsr::flo::{load_flo, save_flo, save_flow_png};
use flowsr::frames::{list_frames, load_sequence, read_frame, write_frame, FrameTemplate};
use flowsr::trainer::{load_checkpoint, Checkpoint, Dataset, SequencePair, Trainer, LOSS_LOG_HEADER};
use flowsr::{Error, FlowLevel, Frame, Result};

use crate::run_config::{Resolved, RunConfig};
use crate::{DegradeArgs, EvalArgs, FlowArgs, SrArgs, TrainArgs};

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn template(t: &Option<String>) -> Result<Option<FrameTemplate>> {
    t.as_deref().map(FrameTemplate::parse).transpose()
}

fn file_name(path: &Path) -> PathBuf {
    PathBuf::from(path.file_name().expect("listed frames are files"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::File {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn degrade(args: &DegradeArgs) -> Result<()> {
    let spec = match args.model {
        DegradationModel::Bicubic => {
            if args.sigma.is_some() {
                return Err(Error::Config("--sigma only applies to the BD model".into()));
            }
            DegradationSpec::bicubic(args.scale)
        }
        DegradationModel::BlurDecimate => DegradationSpec::blur_decimate(args.scale, args.sigma),
    };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let paths = list_frames(&args.input, template(&args.template)?.as_ref())?;
    create_dir(&args.output)?;
    for p in &paths {
        let lr = spec.apply(&read_frame(p)?)?;
        write_frame(&args.output.join(file_name(p)), &lr)?;
    }
    let detail = match spec.model {
        DegradationModel::Bicubic => String::new(),
        DegradationModel::BlurDecimate => format!(" sigma={} radius={}", spec.sigma, spec.radius()),
    };
    println!(
        "degraded {} frames: model={} scale={}{detail} -> {}",
        paths.len(),
        spec.model,
        spec.scale,
        args.output.display()
    );
    Ok(())
}

fn has_png(dir: &Path) -> Result<bool> {
    Ok(fs::read_dir(dir)?.filter_map(|e| e.ok()).any(|e| {
        e.path().is_file() && e.path().extension().is_some_and(|x| x.eq_ignore_ascii_case("png"))
    }))
}

/// `root` itself when it holds frames, else its subdirectories in order.
fn sequence_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::File {
            path: root.to_path_buf(),
            message: "directory not found".into(),
        });
    }
    if has_png(root)? {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::NoFrames(root.to_path_buf()));
    }
    Ok(dirs)
}

fn crop_to_multiple(f: &Frame, s: usize) -> Result<Frame> {
    let (h, w) = f.dims();
    f.crop(0, 0, w - w % s, h - h % s)
}

fn load_dataset(r: &Resolved) -> Result<Dataset> {
    let t = template(&r.template)?;
    let s = r.network.scale;
    let mut sequences = Vec::new();
    for dir in sequence_dirs(&r.hr_dir)? {
        let hr: Vec<Frame> = load_sequence(&dir, t.as_ref())?
            .iter()
            .map(|f| crop_to_multiple(f, s))
            .collect::<Result<_>>()?;
        let lr = match &r.lr_dir {
            Some(lr_root) => {
                let rel = dir.strip_prefix(&r.hr_dir).unwrap_or(Path::new(""));
                load_sequence(&lr_root.join(rel), t.as_ref())?
            }
            None => hr.iter().map(|f| r.degradation.apply(f)).collect::<Result<_>>()?,
        };
        log::info!("sequence {}: {} frames", dir.display(), hr.len());
        sequences.push(SequencePair { lr, hr });
    }
    Dataset::new(sequences, s, r.network.radius)
}

fn checkpoint_keys(ck: &Checkpoint) -> RunConfig {
    let t = &ck.train;
    RunConfig {
        scale: Some(ck.network.scale),
        radius: Some(ck.network.radius),
        channels: Some(ck.network.channels),
        batch_size: Some(t.batch_size),
        patch_size: Some(t.patch_size),
        lr_initial: Some(t.lr_initial),
        lr_decay_every: Some(t.lr_decay_every),
        lr_decay_factor: Some(t.lr_decay_factor),
        max_steps: Some(t.max_steps),
        adam_beta1: Some(t.adam_beta1),
        adam_beta2: Some(t.adam_beta2),
        adam_epsilon: Some(t.adam_epsilon),
        seed: Some(t.seed),
        checkpoint_every: Some(t.checkpoint_every),
        lambda1: Some(t.weights.lambda1),
        lambda2: Some(t.weights.lambda2),
        lambda3: Some(t.weights.lambda3),
        lambda4: Some(t.weights.lambda4),
        ..RunConfig::default()
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let resume = args.resume.as_deref().map(load_checkpoint).transpose()?;
    let mut rc = resume.as_ref().map(checkpoint_keys).unwrap_or_default();
    if let Some(p) = &args.config {
        rc = rc.overlay(RunConfig::load(p)?);
    }
    rc = rc.overlay(RunConfig {
        preset: args.preset,
        scale: args.scale,
        hr_dir: args.hr_dir.clone(),
        lr_dir: args.lr_dir.clone(),
        output_dir: args.output_dir.clone(),
        max_steps: args.max_steps,
        checkpoint_every: args.checkpoint_every,
        seed: args.seed,
        batch_size: args.batch_size,
        patch_size: args.patch_size,
        ..RunConfig::default()
    });
    let r = rc.resolve()?;
    let data = load_dataset(&r)?;

    let mut trainer = match resume {
        Some(ck) => {
            if ck.network != r.network {
                return Err(Error::Checkpoint(format!(
                    "checkpoint network {:?} differs from the configured {:?}",
                    ck.network, r.network
                )));
            }
            let mut t = Trainer::from_checkpoint(ck)?;
            t.train = r.train;
            t
        }
        None => Trainer::new(r.network, r.train)?,
    };
    let start = trainer.step;
    create_dir(&r.output_dir)?;
    let log_path = r.output_dir.join("loss.csv");
    let fresh = start == 0 || !log_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)?;
    let mut log = BufWriter::new(file);
    if fresh {
        writeln!(log, "{LOSS_LOG_HEADER}")?;
    }
    let ck_dir = r.output_dir.join("checkpoints");
    let mut last = None;
    let written = trainer.run(&data, &mut log, Some(&ck_dir), |rec| {
        if rec.step % 100 == 0 {
            log::info!("step {} total {:.6} sr {:.6} ofr {:.6} lr {:e}", rec.step, rec.total, rec.sr, rec.ofr, rec.lr);
        }
        last = Some(*rec);
    })?;
    match last {
        Some(rec) => println!(
            "trained steps {start}..{}: final total loss {:.6} (sr {:.6}, ofr {:.6})",
            trainer.step, rec.total, rec.sr, rec.ofr
        ),
        None => println!("nothing to do: step {} already reached max_steps", trainer.step),
    }
    println!("loss log: {}", log_path.display());
    if let Some(p) = written.last() {
        println!("wrote {} checkpoints, latest {}", written.len(), p.display());
    }
    Ok(())
}

pub fn super_resolve(args: &SrArgs) -> Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let net = ck.network;
    for (flag, want, have) in [("scale", args.scale, net.scale), ("radius", args.radius, net.radius)] {
        if want.is_some_and(|w| w != have) {
            return Err(Error::Checkpoint(format!(
                "--{flag} {} does not match the checkpoint ({flag} {have})",
                want.unwrap_or_default()
            )));
        }
    }
    let t = template(&args.template)?;
    let paths = list_frames(&args.input, t.as_ref())?;
    let frames = load_sequence(&args.input, t.as_ref())?;
    let out = ck.model.super_resolve_sequence(&frames)?;
    create_dir(&args.output)?;
    for (f, p) in out.iter().zip(&paths[net.radius..]) {
        write_frame(&args.output.join(file_name(p)), f)?;
    }
    println!(
        "wrote {} SR frames ({}x, {}-frame window) to {}",
        out.len(),
        net.scale,
        net.frames(),
        args.output.display()
    );
    Ok(())
}

fn flo_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::File {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("flo")))
        .collect();
    v.sort();
    Ok(v)
}

fn load_flows(dir: &Path, count: usize) -> Result<Vec<flowsr::FlowField>> {
    let files = flo_files(dir)?;
    if files.len() != count {
        return Err(Error::InvalidArgument(format!(
            "{} has {} .flo files for {count} frames",
            dir.display(),
            files.len()
        )));
    }
    files.iter().map(|p| load_flo(p, FlowLevel::Hr)).collect()
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let t = template(&args.template)?;
    let sr_paths = list_frames(&args.sr, t.as_ref())?;
    let gt_paths = list_frames(&args.gt, t.as_ref())?;
    if sr_paths.len() != gt_paths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} SR frames but {} ground-truth frames",
            sr_paths.len(),
            gt_paths.len()
        )));
    }
    let sr = load_sequence(&args.sr, t.as_ref())?;
    let gt = load_sequence(&args.gt, t.as_ref())?;
    let n = sr.len();

    let est = args.flow.as_deref().map(|d| load_flows(d, n)).transpose()?;
    let reference = args.ref_flow.as_deref().map(|d| load_flows(d, n)).transpose()?;
    let sources = args
        .flow_source
        .as_deref()
        .map(|d| {
            let f = load_sequence(d, t.as_ref())?;
            if f.len() != n {
                return Err(Error::InvalidArgument(format!("{} has {} frames, expected {n}", d.display(), f.len())));
            }
            Ok(f)
        })
        .transpose()?;
    let flows: Vec<FlowInputs<'_>> = match &est {
        None => Vec::new(),
        Some(e) => (0..n)
            .map(|i| FlowInputs {
                estimated: Some(&e[i]),
                reference: reference.as_ref().map(|r| &r[i]),
                source: sources.as_ref().map(|s| &s[i]),
                target: sources.as_ref().map(|_| &gt[i]),
            })
            .collect(),
    };
    let report = evaluate_sequence(&sr, &gt, args.scale, &flows)?;
    print!("{}", report.table());
    if let Some(p) = &args.csv {
        fs::write(p, report.to_csv()).map_err(|e| Error::File {
            path: p.clone(),
            message: e.to_string(),
        })?;
        println!("report: {}", p.display());
    }
    if let Some(dir) = &args.error_maps {
        create_dir(dir)?;
        for m in &report.frames {
            let map = error_map(&sr[m.index].luma_only(), &gt[m.index].luma_only())?;
            write_frame(&dir.join(file_name(&sr_paths[m.index])), &map)?;
        }
    }
    Ok(())
}

pub fn flow(args: &FlowArgs) -> Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let a = read_frame(&args.source)?;
    let b = read_frame(&args.target)?;
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "source {:?} and target {:?} differ in size",
            a.dims(),
            b.dims()
        )));
    }
    let f = ck.model.flow(&a, &b)?;
    if f.u().iter().chain(f.v()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: ck.step,
            sr: f64::NAN,
            ofr: f64::NAN,
            total: f64::NAN,
        });
    }
    save_flo(&args.output, &f)?;
    let png = args.png.clone().unwrap_or_else(|| args.output.with_extension("png"));
    let max = save_flow_png(&png, &f)?;
    let (h, w) = f.dims();
    println!(
        "wrote {w}x{h} flow to {} and {} (colour scale: max magnitude {max:.3} px)",
        args.output.display(),
        png.display()
    );
    Ok(())
}
