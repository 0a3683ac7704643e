use std::collections::BTreeMap;
use std::time::Instant;

use pop_core::checkpoint::save_checkpoint;
use pop_core::ppo::{IterationLog, TrainConfig, Trainer};
use pop_core::{PopError, Result};

use super::{progress, Context, Settings};
use crate::kv::Pairs;
use crate::output::{f, opt};

pub const LOG_FILE: &str = "train_log.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const INITIAL_CHECKPOINT: &str = "checkpoints/ckpt-000000";
pub const FINAL_CHECKPOINT: &str = "checkpoints/final";

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub preset: String,
    pub config: TrainConfig,
}

impl Settings for TrainSettings {
    fn defaults() -> Self {
        Self { preset: "desk".into(), config: TrainConfig::desk() }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "preset" {
            self.config = match value {
                "desk" => TrainConfig::desk(),
                "reference" => TrainConfig::default(),
                _ => return Err(PopError::Config(format!("bad value '{value}' for key 'preset' (desk or reference)"))),
            };
            self.preset = value.into();
            return Ok(());
        }
        self.config.set(key, value)
    }

    fn pairs(&self) -> Pairs {
        let mut p = vec![("preset".to_string(), self.preset.clone())];
        p.extend(self.config.to_pairs());
        p
    }

    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn validate(&self) -> Result<()> {
        self.config.validate()
    }
}

const LOG_HEADER: [&str; 10] = [
    "iteration",
    "mean_episode_reward",
    "moving_average",
    "kl",
    "clip_fraction",
    "epochs",
    "kl_coef",
    "value_loss",
    "failed_episodes",
    "validation_ni",
];

fn log_row(l: &IterationLog) -> Vec<String> {
    vec![
        l.iteration.to_string(),
        f(l.mean_episode_reward),
        f(l.moving_average),
        f(l.kl),
        f(l.clip_fraction),
        l.epochs.to_string(),
        f(l.kl_coef),
        f(l.value_loss),
        l.failed_episodes.to_string(),
        opt(l.validation_ni),
    ]
}

fn checkpoint(ctx: &mut Context, s: &TrainSettings, trainer: &Trainer, rel: &str) -> Result<()> {
    let meta: BTreeMap<String, String> = s.pairs().into_iter().collect();
    let (json, bin) = save_checkpoint(&ctx.out.path(rel), trainer.policy(), trainer.iteration(), meta)?;
    ctx.out.register(&json);
    ctx.out.register(&bin);
    Ok(())
}

fn write_logs(ctx: &mut Context, logs: &[IterationLog], validation: &[(u64, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = logs.iter().map(log_row).collect();
    ctx.out.write_csv(LOG_FILE, "pop-train-log", &LOG_HEADER, &rows)?;
    let rows: Vec<Vec<String>> = validation.iter().map(|(i, v)| vec![i.to_string(), f(*v)]).collect();
    ctx.out.write_csv(VALIDATION_FILE, "pop-validation", &["iteration", "mean_final_ni"], &rows)
}

pub fn run(s: &TrainSettings, ctx: &mut Context) -> Result<()> {
    let mut trainer = Trainer::new(s.config.clone())?;
    let total = s.config.total_iterations;
    checkpoint(ctx, s, &trainer, INITIAL_CHECKPOINT)?;
    let mut validation = Vec::new();
    if let Some(v) = trainer.validate(ctx.workers)? {
        progress(format!("iteration 0: validation NI {v:.4}"));
        validation.push((0, v));
    }
    let mut logs = Vec::with_capacity(total);
    let start = Instant::now();
    while !trainer.is_done() {
        let log = match trainer.step(ctx.workers) {
            Ok(l) => l,
            Err(e) => {
                // keep what was learned about the failure
                write_logs(ctx, &logs, &validation)?;
                return Err(e);
            }
        };
        let it = log.iteration;
        if let Some(v) = log.validation_ni {
            validation.push((it, v));
        }
        if it % 10 == 0 || log.validation_ni.is_some() || it as usize == total {
            let rate = start.elapsed().as_secs_f64() / logs.len().max(1) as f64;
            progress(format!(
                "iteration {it}/{total}: reward {:.4} (avg {:.4}) kl {:.2e} epochs {}{} [{rate:.2} s/it]",
                log.mean_episode_reward,
                log.moving_average,
                log.kl,
                log.epochs,
                log.validation_ni.map(|v| format!(" validation NI {v:.4}")).unwrap_or_default(),
            ));
        }
        logs.push(log);
        let every = s.config.checkpoint_every as u64;
        if every > 0 && it % every == 0 && (it as usize) < total {
            checkpoint(ctx, s, &trainer, &format!("checkpoints/ckpt-{it:06}"))?;
        }
    }
    if total > 0 {
        checkpoint(ctx, s, &trainer, FINAL_CHECKPOINT)?;
    }
    write_logs(ctx, &logs, &validation)
}
