use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use ppinn::model::NetworkParameters;
use ppinn::trainer::{train_with_progress, TrainingConfig, TrainingHistory};
use ppinn::{Precision, Real};

use crate::config::{self, Overrides};

pub const MODEL_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const RESOLVED_FILE: &str = "resolved-config.toml";

/// Fails early, before any work, if `dir` cannot receive files.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let probe = dir.join(".ppinn-write-probe");
    fs::write(&probe, b"").with_context(|| format!("output directory {} is not writable", dir.display()))?;
    fs::remove_file(&probe)?;
    Ok(())
}

pub fn run(file: Option<&Path>, flags: &Overrides, log_every: usize) -> Result<ExitCode> {
    let cfg = config::resolve(file, flags)?;
    let tc = cfg.training_config()?;
    let resolved = cfg.to_resolved_toml()?;
    ensure_writable(&cfg.out_dir)?;
    match tc.precision {
        Precision::F32 => train_in::<f32>(&cfg.out_dir, &tc, &resolved, log_every),
        Precision::F64 => train_in::<f64>(&cfg.out_dir, &tc, &resolved, log_every),
    }
}

fn write_history(dir: &Path, history: &TrainingHistory) -> Result<()> {
    let mut buf = Vec::new();
    history.write_csv(&mut buf)?;
    fs::write(dir.join(HISTORY_FILE), buf)?;
    Ok(())
}

fn write_stage_checkpoints<T: Real>(dir: &Path, checkpoints: &[NetworkParameters<T>]) -> Result<()> {
    for (k, p) in checkpoints.iter().enumerate() {
        p.save(dir.join(format!("stage{}.ckpt", k + 1)))?;
    }
    Ok(())
}

fn train_in<T: Real>(dir: &Path, tc: &TrainingConfig, resolved: &str, log_every: usize) -> Result<ExitCode> {
    eprintln!(
        "training {}x{} network, {}-bit, seed {}, into {}",
        tc.network.hidden_layers,
        tc.network.width,
        tc.precision,
        tc.seed,
        dir.display()
    );
    let started = Instant::now();
    let mut log = |r: &ppinn::trainer::HistoryRow| {
        if log_every > 0 && r.iter.is_multiple_of(log_every) {
            eprintln!(
                "[{:>7.1}s] stage {} iter {:>5}  total {:.3e}  pde {:.3e}  bc {:.3e}  ic {:.3e}",
                started.elapsed().as_secs_f64(),
                r.stage,
                r.iter,
                r.total,
                r.pde,
                r.bc,
                r.ic
            );
        }
    };
    let result = train_with_progress::<T>(tc, &mut log);
    fs::write(dir.join(RESOLVED_FILE), resolved)?;
    match result {
        Ok(out) => {
            write_history(dir, &out.history)?;
            write_stage_checkpoints(dir, &out.checkpoints)?;
            out.params.save(dir.join(MODEL_FILE))?;
            for s in &out.stages {
                eprintln!(
                    "stage {}: {} iterations, stop {:?}, full-set loss {:.4e}",
                    s.stage, s.iterations, s.stop, s.end_total
                );
            }
            println!("best total loss = {:e}", out.best_total);
            println!("elapsed = {:.1}s", started.elapsed().as_secs_f64());
            Ok(ExitCode::SUCCESS)
        }
        Err(fail) => {
            write_history(dir, &fail.history)?;
            write_stage_checkpoints(dir, &fail.checkpoints)?;
            if let Some(p) = &fail.last_params {
                p.save(dir.join("last.ckpt"))?;
            }
            eprintln!("error: {fail}");
            Ok(ExitCode::FAILURE)
        }
    }
}
