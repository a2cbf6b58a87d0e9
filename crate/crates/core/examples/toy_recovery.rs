//! Trains the desk-scale agent on tone-matched synthetic scenes with global
//! tone distortions and reports held-out recovery, on the same held-out
//! scenes under global and under regional (highlight/shadow) distortions.
//!
//! cargo run --release -p retouch-core --example toy_recovery -- key=value ...
//! where keys are training-config keys, plus `save=PATH` / `load=PATH` for
//! the trained checkpoint.

use std::time::Instant;

use retouch_core::agent::{enhance, EnhanceOptions};
use retouch_core::distort::{synthesize_pair, DistortConfig};
use retouch_core::features::ContextProvider;
use retouch_core::nn::{load_checkpoint, save_checkpoint, DESK_HIDDEN};
use retouch_core::synth::reference_set;
use retouch_core::train::{run_training, ContextMode, RunOptions, SynthesizedPairs, TrainConfig};
use retouch_core::{mean_lab_distance, MlpNetwork, RgbImage};

fn report(net: &MlpNetwork, name: &str, refs: &[RgbImage], distort: &DistortConfig, seed: u64) -> retouch_core::Result<()> {
    let max_steps = 20;
    let mut curve = vec![0.0; max_steps + 1];
    let mut before = 0.0;
    let mut after = 0.0;
    let mut steps = 0;
    for (i, r) in refs.iter().enumerate() {
        let pair = synthesize_pair(r, "eval", seed + i as u64, distort)?;
        let opts = EnhanceOptions { max_steps, target: Some(r) };
        let e = enhance(net, &pair.distorted, &ContextProvider::Tiny, &opts)?;
        let d0 = mean_lab_distance(&pair.distorted, r)?;
        before += d0;
        after += mean_lab_distance(&e.image, r)?;
        steps += e.trace.len();
        let mut last = d0;
        for k in 0..=max_steps {
            if k > 0 {
                if let Some(entry) = e.trace.entries().get(k - 1) {
                    last = entry.distance_after.unwrap();
                }
            }
            curve[k] += last;
        }
    }
    let n = refs.len() as f64;
    let curve: Vec<String> = curve.iter().step_by(2).map(|c| format!("{:.2}", c / n)).collect();
    println!(
        "{name}: before {:.3} after {:.3} ratio {:.3} mean steps {:.1} | curve {}",
        before / n,
        after / n,
        after / before,
        steps as f64 / n,
        curve.join(" ")
    );
    Ok(())
}

fn main() -> retouch_core::Result<()> {
    let mut cfg = TrainConfig {
        hidden: DESK_HIDDEN.to_vec(),
        gamma: 0.8,
        base_lr: 3e-4,
        lr_decay: 0.5,
        lr_decay_every: 10_000,
        eps_decay_steps: 15_000,
        warmup: 500,
        target_sync_every: 1_000,
        replay_capacity: 20_000,
        total_steps: 40_000,
        seed: 2,
        log_every: 50,
        ..TrainConfig::default()
    };
    let mut save = None;
    let mut load = None;
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        match k {
            "save" => save = Some(v.to_string()),
            "load" => load = Some(v.to_string()),
            _ => cfg.set(k, v)?,
        }
    }
    let train_refs = reference_set(50, 64, 64, 1000);
    let net = match load {
        Some(path) => load_checkpoint(path)?.0,
        None => {
            let source = SynthesizedPairs {
                references: train_refs.clone(),
                distort: DistortConfig::global_tone(),
                seed: 7,
            };
            let t0 = Instant::now();
            let out = run_training(&source, &cfg, ContextMode::Tiny, RunOptions::default())?;
            println!("trained {} steps in {:.1}s", out.env_steps, t0.elapsed().as_secs_f64());
            for r in out.log.iter().step_by(3) {
                println!("{:>7} loss {:>8.4} eps {:.3} ret {:>7.3}", r.iteration, r.loss, r.epsilon, r.mean_return);
            }
            if let Some(path) = save {
                save_checkpoint(path, &out.learner.pair.online, None)?;
            }
            out.learner.pair.online
        }
    };
    let held_out = reference_set(20, 64, 64, 90_000);
    report(&net, "train-refs global", &train_refs[..20], &DistortConfig::global_tone(), 77_000)?;
    report(&net, "held-out global", &held_out, &DistortConfig::global_tone(), 55_000)?;
    report(&net, "held-out regional", &held_out, &DistortConfig::regional_tone(), 55_000)?;
    Ok(())
}
