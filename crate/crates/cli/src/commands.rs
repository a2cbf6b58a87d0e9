use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use retouch_core::agent::WORKING_MAX_SIDE;
use retouch_core::distort::{pair_seed, synthesize_pair, write_manifest, DistortConfig, ManifestEntry};
use retouch_core::features::{load_context_feature, HISTOGRAM_LEN};
use retouch_core::metrics::{ssim, write_report, EvalRow};
use retouch_core::nn::{load_checkpoint, save_checkpoint};
use retouch_core::synth::reference_scene;
use retouch_core::train::{write_log, ContextMode, RunOptions, TrainingSample};
use retouch_core::{
    enhance, mean_lab_distance, run_training, AdamState, ContextProvider, EnhanceOptions, MlpNetwork, StateLayout,
};

use crate::args::{Catalogue, ContextKind, DistortArgs, EnhanceArgs, EvalArgs, GenRefsArgs, TrainArgs};
use crate::config::resolve_train_config;
use crate::imageio::{file_stem, list_images, load_image, save_png};
use crate::pairs::{distorted_path, find_feature, load_features, load_pair, read_pair_manifest, reference_path, MANIFEST_FILE};

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        bail!("jobs must be ≥ 1");
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

pub fn gen_refs(a: &GenRefsArgs) -> Result<()> {
    if a.count == 0 || a.size == 0 {
        bail!("count and size must be ≥ 1");
    }
    fs::create_dir_all(&a.out)?;
    for i in 0..a.count {
        let img = reference_scene(a.size, a.size, a.seed + i as u64);
        save_png(&a.out.join(format!("scene_{i:04}.png")), &img)?;
    }
    info!("wrote {} reference scenes to {}", a.count, a.out.display());
    Ok(())
}

struct PairJob {
    stem: String,
    reference: usize,
    seed: u64,
}

pub fn distort(a: &DistortArgs) -> Result<()> {
    if a.per_ref == 0 {
        bail!("per-ref must be ≥ 1");
    }
    let mut cfg = match a.ops {
        Catalogue::Full => DistortConfig::default(),
        Catalogue::GlobalTone => DistortConfig::global_tone(),
        Catalogue::RegionalTone => DistortConfig::regional_tone(),
    };
    cfg.d_min = a.min_d;
    cfg.d_max = a.max_d;
    cfg.validate()?;
    let pool = thread_pool(a.jobs)?;

    let mut refs: Vec<(String, retouch_core::RgbImage)> = Vec::new();
    for path in list_images(&a.refs)? {
        let stem = file_stem(&path);
        if refs.iter().any(|(s, _)| *s == stem) {
            warn!("skipping {}: another reference already uses stem `{stem}`", path.display());
            continue;
        }
        match load_image(&path) {
            Ok(img) => refs.push((stem, img)),
            Err(e) => warn!("skipping {}: {e:#}", path.display()),
        }
    }
    if refs.is_empty() {
        bail!("no readable reference images in {}", a.refs.display());
    }
    fs::create_dir_all(&a.out)?;

    let jobs: Vec<PairJob> = refs
        .iter()
        .enumerate()
        .flat_map(|(i, (stem, _))| {
            (0..a.per_ref).map(move |k| PairJob {
                stem: if a.per_ref == 1 {
                    stem.clone()
                } else {
                    format!("{stem}_{k}")
                },
                reference: i,
                seed: pair_seed(a.seed, (i * a.per_ref + k) as u64),
            })
        })
        .collect();
    let results: Vec<Result<ManifestEntry>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let pair = synthesize_pair(&refs[job.reference].1, &job.stem, job.seed, &cfg)?;
                save_png(&distorted_path(&a.out, &job.stem), &pair.distorted)?;
                save_png(&reference_path(&a.out, &job.stem), &pair.reference)?;
                Ok(ManifestEntry {
                    stem: job.stem.clone(),
                    achieved_distance: pair.achieved_distance,
                    op_count: pair.op_log.len(),
                    seed: job.seed,
                })
            })
            .collect()
    });

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(e) => entries.push(e),
            Err(e) => failures.push(format!("{}: {e:#}", job.stem)),
        }
    }
    let manifest = a.out.join(MANIFEST_FILE);
    let mut w = BufWriter::new(File::create(&manifest)?);
    write_manifest(&mut w, &entries)?;
    w.flush()?;
    info!("wrote {} pairs and {}", entries.len(), manifest.display());
    if !failures.is_empty() {
        bail!("{} pair(s) could not be synthesized:\n  {}", failures.len(), failures.join("\n  "));
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(a.config.as_deref(), a.steps, a.seed)?;
    let entries = read_pair_manifest(&a.pairs)?;
    let stems: Vec<&str> = entries.iter().map(|e| e.stem.as_str()).collect();
    let (mode, features) = match a.context {
        ContextKind::Tiny => (ContextMode::Tiny, None),
        ContextKind::File => {
            let dir = a.features_dir.as_deref().context("--context file needs --features-dir")?;
            let features = load_features(dir, &stems)?;
            (ContextMode::External { dim: features[0].dim() }, Some(features))
        }
    };
    let mut samples = Vec::with_capacity(entries.len());
    for (i, stem) in stems.iter().enumerate() {
        let (distorted, reference) = load_pair(&a.pairs, stem)?;
        samples.push(TrainingSample {
            input: distorted.downsample_to_fit(WORKING_MAX_SIDE),
            target: reference.downsample_to_fit(WORKING_MAX_SIDE),
            context: features.as_ref().map(|f| f[i].clone()),
        });
    }

    let resume = if a.resume {
        let (net, adam) = load_checkpoint(&a.out).with_context(|| format!("cannot resume from {}", a.out.display()))?;
        let hidden = &net.dims()[1..net.dims().len() - 1];
        if hidden != cfg.hidden.as_slice() {
            warn!("checkpoint hidden widths {hidden:?} differ from configured {:?}; keeping the checkpoint's", cfg.hidden);
        }
        let adam = adam.unwrap_or_else(|| {
            warn!("checkpoint has no optimizer state; starting a fresh one");
            AdamState::new(&net)
        });
        Some((net, adam))
    } else {
        None
    };
    let opts = RunOptions {
        resume,
        checkpoint_path: Some(a.out.clone()),
    };
    info!("training on {} pairs for {} environment steps", samples.len(), cfg.total_steps);
    let outcome = run_training(&samples, &cfg, mode, opts)?;
    save_checkpoint(&a.out, &outcome.learner.pair.online, Some(&outcome.learner.adam))?;

    let log_path = a.log.clone().unwrap_or_else(|| sibling(&a.out, ".log.csv"));
    let mut w = BufWriter::new(File::create(&log_path)?);
    write_log(&mut w, &outcome.log)?;
    w.flush()?;
    fs::write(sibling(&a.out, ".config"), cfg.to_text())?;
    info!(
        "{} episodes, {} environment steps, {} gradient steps; checkpoint {}",
        outcome.episodes,
        outcome.env_steps,
        outcome.learner.iteration(),
        a.out.display()
    );
    Ok(())
}

/// Context provider matching the checkpoint's input width.
fn context_for(net: &MlpNetwork, context_file: Option<&Path>) -> Result<ContextProvider> {
    let provider = match context_file {
        Some(path) => ContextProvider::Fixed(load_context_feature(path)?),
        None if net.input_dim() == StateLayout::tiny().input_dim() => ContextProvider::Tiny,
        None => bail!(
            "checkpoint expects a {}-dim context vector; pass one with --context-file",
            net.input_dim().saturating_sub(HISTOGRAM_LEN)
        ),
    };
    if provider.layout().input_dim() != net.input_dim() {
        bail!(
            "checkpoint input width {} does not match context width {} + histogram {}",
            net.input_dim(),
            provider.dim(),
            HISTOGRAM_LEN
        );
    }
    Ok(provider)
}

pub fn enhance_cmd(a: &EnhanceArgs) -> Result<()> {
    let (net, _) = load_checkpoint(&a.checkpoint)?;
    let provider = context_for(&net, a.context_file.as_deref())?;
    let input = load_image(&a.input)?;
    let opts = EnhanceOptions {
        max_steps: a.max_steps,
        target: None,
    };
    let out = enhance(&net, &input, &provider, &opts)?;
    save_png(&a.output, &out.image)?;
    if let Some(path) = &a.trace {
        let mut w = BufWriter::new(File::create(path)?);
        out.trace.write_json(&mut w)?;
        w.flush()?;
    }
    let names: Vec<&str> = out.trace.actions().map(|a| a.name()).collect();
    info!("{} edit(s): {}", names.len(), names.join(" "));
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let (net, _) = load_checkpoint(&a.checkpoint)?;
    let entries = read_pair_manifest(&a.pairs)?;
    let pool = thread_pool(a.jobs)?;
    let opts = EnhanceOptions {
        max_steps: a.max_steps,
        target: None,
    };
    let rows: Vec<Result<EvalRow>> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| {
                let feature = match &a.features_dir {
                    Some(dir) => Some(
                        find_feature(dir, &e.stem)
                            .with_context(|| format!("missing context feature for stem `{}`", e.stem))?,
                    ),
                    None => None,
                };
                let provider = context_for(&net, feature.as_deref())?;
                let (distorted, reference) = load_pair(&a.pairs, &e.stem)?;
                let out = enhance(&net, &distorted, &provider, &opts)?;
                Ok(EvalRow {
                    stem: e.stem.clone(),
                    l2_before: mean_lab_distance(&distorted, &reference)?,
                    l2_after: mean_lab_distance(&out.image, &reference)?,
                    ssim: ssim(&out.image, &reference).with_context(|| format!("pair `{}`", e.stem))?,
                })
            })
            .collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut w = BufWriter::new(File::create(&a.report)?);
    let summary = write_report(&mut w, &rows)?;
    w.flush()?;
    println!(
        "pairs {}  mean L2 before {:.3}  after {:.3}  mean SSIM {:.4}",
        rows.len(),
        summary.l2_before,
        summary.l2_after,
        summary.ssim
    );
    Ok(())
}
