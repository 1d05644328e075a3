use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use ppinn::evaluator::{evaluate_with, ErrorReport, EvaluationConfig, ExactModel};
use ppinn::model::AnyNetwork;
use sha2::{Digest, Sha256};

use crate::config::{self, Overrides};
use crate::train::{ensure_writable, MODEL_FILE, RESOLVED_FILE};

pub const SUMMARY_FILE: &str = "summary.txt";
pub const ERRORS_FILE: &str = "errors.csv";
pub const SLICES_FILE: &str = "slices.csv";

pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub nx: Option<usize>,
    pub nt: Option<usize>,
    pub exact_oracle: bool,
    pub out: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run(args: EvalArgs) -> Result<ExitCode> {
    let checkpoint = args.checkpoint.map(|p| if p.is_dir() { p.join(MODEL_FILE) } else { p });
    let run_dir = checkpoint
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf);

    // explicit config, else the snapshot written next to the checkpoint
    let config_path = args.config.clone().or_else(|| {
        run_dir
            .as_ref()
            .map(|d| d.join(RESOLVED_FILE))
            .filter(|p| p.is_file())
    });
    let mut eval_cfg = match &config_path {
        Some(p) => config::resolve(Some(p), &Overrides::default())?.evaluation,
        None => EvaluationConfig::default(),
    };
    if let Some(nx) = args.nx {
        eval_cfg.nx = nx;
    }
    if let Some(nt) = args.nt {
        eval_cfg.nt = nt;
    }
    let config_hash = match &config_path {
        Some(p) => sha256_hex(&fs::read(p)?),
        None => "none".to_string(),
    };

    let out = match (args.out, &run_dir) {
        (Some(o), _) => o,
        (None, Some(d)) => d.clone(),
        (None, None) => bail!("--out is required with --exact-oracle and no checkpoint"),
    };

    let (report, source, ckpt_hash) = if args.exact_oracle {
        (evaluate_with(&ExactModel, &eval_cfg)?, "exact-oracle".to_string(), "none".to_string())
    } else {
        let path = checkpoint.expect("required by clap without --exact-oracle");
        let bytes = fs::read(&path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
        let net = AnyNetwork::load(&path).with_context(|| format!("invalid checkpoint {}", path.display()))?;
        let report = match &net {
            AnyNetwork::F32(p) => evaluate_with(p, &eval_cfg)?,
            AnyNetwork::F64(p) => evaluate_with(p, &eval_cfg)?,
        };
        (report, path.display().to_string(), sha256_hex(&bytes))
    };

    ensure_writable(&out)?;
    write_outputs(&out, &report, &[
        ("source", source),
        ("checkpoint_sha256", ckpt_hash),
        ("config_hash", config_hash),
    ])?;
    println!("rel_l2_u = {:e}", report.rel_l2_u);
    println!("rel_l2_phi = {:e}", report.rel_l2_phi);
    println!("points = {}", report.points());
    Ok(ExitCode::SUCCESS)
}

fn write_outputs(dir: &Path, report: &ErrorReport, extra: &[(&str, String)]) -> Result<()> {
    let mut buf = Vec::new();
    report.write_summary(&mut buf, extra)?;
    fs::write(dir.join(SUMMARY_FILE), buf)?;
    let mut buf = Vec::new();
    report.write_errors_csv(&mut buf)?;
    fs::write(dir.join(ERRORS_FILE), buf)?;
    let mut buf = Vec::new();
    report.write_slices_csv(&mut buf)?;
    fs::write(dir.join(SLICES_FILE), buf)?;
    Ok(())
}
