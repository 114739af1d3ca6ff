use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use ldrcnet::arch::{Ablation, ModelConfig, Networks};
use ldrcnet::data::PairedDataset;
use ldrcnet::train::{apply_config_text, Checkpoint, Mode, Phase, TrainConfig, Trainer, LOG_HEADER};

use crate::{CliError, CliResult, TrainArgs};

const FREEZE_PROTOCOL: &str = "--phase derain needs --resume <constraint checkpoint>. Training is two-phase: \
     `--phase constraint` pretrains the encoder together with the constraint network, then the derain phase \
     freezes that encoder and trains only the deraining network. Ablations s2 (no encoder) and s3 \
     (unconstrained, randomly initialised frozen encoder) skip pretraining.";

fn configs(a: &TrainArgs) -> CliResult<(ModelConfig, TrainConfig)> {
    let mut model = ModelConfig::with_base(a.base_channels);
    model.ablation = a.ablation.unwrap_or_default();
    let mut train = TrainConfig {
        lr_init: a.lr_init,
        lr_final: a.lr_final,
        total_steps: a.steps,
        batch_size: a.batch_size,
        patch_size: a.patch_size,
        lambda1: a.lambda1,
        lambda2: a.lambda2,
        seed: a.seed,
        mode: if a.phase == Phase::Joint { Mode::Joint } else { Mode::TwoPhase },
    };
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        apply_config_text(&text, &mut model, &mut train)?;
    }
    model.validate()?;
    train.validate()?;
    if (train.mode == Mode::Joint) != (a.phase == Phase::Joint) {
        return Err(CliError::Usage(format!("mode {:?} contradicts --phase {}", train.mode, a.phase)));
    }
    Ok((model, train))
}

fn trainer(a: &TrainArgs, model: ModelConfig, train: TrainConfig) -> CliResult<Trainer> {
    match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if let Some(ab) = a.ablation.filter(|&ab| ab != ckpt.model.ablation) {
                return Err(CliError::Usage(format!(
                    "--ablation {ab} does not match the checkpoint's variant {}",
                    ckpt.model.ablation
                )));
            }
            Ok(Trainer::from_checkpoint(&ckpt, train, a.phase)?)
        }
        None => {
            if a.phase == Phase::Derain && !matches!(model.ablation, Ablation::S2 | Ablation::S3) {
                return Err(CliError::Usage(FREEZE_PROTOCOL.into()));
            }
            let nets = Networks::build(&model, train.seed)?;
            Ok(Trainer::new(nets, train, a.phase)?)
        }
    }
}

pub fn run(a: TrainArgs) -> CliResult {
    let (model, train) = configs(&a)?;
    let dataset = PairedDataset::open(&a.data)?;
    let pairs = dataset.load()?;
    let mut t = trainer(&a, model, train)?;
    fs::create_dir_all(&a.out)?;
    let ckpt_path: PathBuf = a.out.join(format!("{}.ldrc", a.phase));
    let log_path = a.out.join(format!("{}.loss.tsv", a.phase));
    let append = t.step_count() > 0 && log_path.exists();
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&log_path)?;
    if !append {
        writeln!(log, "{LOG_HEADER}")?;
    }
    println!(
        "training {} phase of {} on {} pairs: steps {}..{}",
        t.phase(),
        t.nets.config.ablation,
        pairs.len(),
        t.step_count(),
        t.cfg.total_steps
    );
    let mut io_err = None;
    let (save_every, log_every) = (a.save_every, a.log_every);
    t.run(&pairs, |t, r| {
        if let Err(e) = writeln!(log, "{}", r.log_line()) {
            io_err = Some(e);
            return Ok(false);
        }
        let done = r.step + 1;
        if log_every > 0 && (done % log_every == 0 || done == t.cfg.total_steps) {
            println!("step {done}/{} loss {} lr {:e}", t.cfg.total_steps, r.loss, r.lr);
        }
        if save_every > 0 && done % save_every == 0 {
            t.checkpoint().save(&ckpt_path)?;
        }
        Ok(true)
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    t.checkpoint().save(&ckpt_path)?;
    println!("checkpoint {}", ckpt_path.display());
    println!("loss log {}", log_path.display());
    Ok(())
}
