use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lvm_core::agent::ActionScale;
use lvm_core::config::RunConfig;
use lvm_core::latent_model::LatentState;
use lvm_core::metrics::MetricsLog;
use lvm_core::replay::read_episode;
use lvm_core::trainer::{checkpoint_config, eval_seeds, evaluate_policy, EvalPolicy, Trainer};

use crate::ConfigArgs;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const REPORT_FILE: &str = "report.txt";
pub const EVAL_FILE: &str = "eval_episodes.csv";

fn default_out() -> Option<PathBuf> {
    std::env::var_os("LVM_OUT").filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Defaults, then the config file, then `--set` pairs, then named flags.
pub fn build_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::desk();
    if let Some(out) = default_out() {
        cfg.out = out;
    }
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    for kv in &args.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, found `{kv}`");
        };
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.single_critic {
        cfg.trainer.single_critic = true;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(args: &ConfigArgs, resume: bool) -> Result<()> {
    let cfg = build_config(args)?;
    let out = cfg.out.clone();
    let ckpt = out.join(CHECKPOINT_DIR);
    let metrics = out.join(METRICS_FILE);
    let (mut trainer, mut log) = if resume {
        let trainer = Trainer::load_checkpoint(&ckpt, cfg.clone())
            .with_context(|| format!("cannot resume from {}", ckpt.display()))?;
        let log = MetricsLog::resume(&metrics, trainer.epoch, &cfg.echo_entries())?;
        (trainer, log)
    } else {
        let trainer = Trainer::new(cfg.clone())?;
        let log = MetricsLog::create(&metrics, &cfg.echo_entries())?;
        (trainer, log)
    };
    fs::write(out.join("config.txt"), cfg.to_text()).with_context(|| format!("writing {}", out.display()))?;

    let every = cfg.trainer.eval_every.max(1);
    while !trainer.is_pretrained() || trainer.can_continue() {
        let stop = (trainer.epoch / every + 1) * every;
        trainer.run(&mut log, Some(stop))?;
        trainer.save_checkpoint(&ckpt)?;
        eprintln!(
            "epoch {} env_steps {} grad_steps {}",
            trainer.epoch, trainer.env_steps, trainer.grad_steps
        );
    }

    let (report, _) = trainer.evaluate(cfg.trainer.eval_episodes)?;
    let random = trainer.evaluate_random(cfg.trainer.eval_episodes)?;
    let mut text = format!(
        "epochs={}\nenv_steps={}\ngrad_steps={}\n",
        trainer.epoch, trainer.env_steps, trainer.grad_steps
    );
    text.push_str(&report.to_text());
    for line in random.to_text().lines() {
        let _ = writeln!(text, "random.{line}");
    }
    let path = out.join(REPORT_FILE);
    fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    print!("{text}");
    Ok(())
}

fn load(checkpoint: &Path) -> Result<(RunConfig, Trainer)> {
    let cfg = checkpoint_config(checkpoint)?;
    let trainer = Trainer::load_checkpoint(checkpoint, cfg.clone())?;
    Ok((cfg, trainer))
}

pub fn eval(checkpoint: &Path, episodes: usize, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    if episodes == 0 {
        bail!("--episodes must be at least 1");
    }
    let (cfg, trainer) = load(checkpoint)?;
    let seeds = eval_seeds(seed.unwrap_or(cfg.seed), episodes);
    let policy = EvalPolicy::Learned {
        model: &trainer.model,
        agent: &trainer.agent,
    };
    let (report, traces) = evaluate_policy(&cfg.env, policy, &seeds, cfg.agent.gamma)?;

    let mut csv = String::from("episode,seed,return,length,mean_abs_lateral_error,lateral_trace\n");
    for (i, t) in traces.iter().enumerate() {
        let mean = t.lateral.iter().sum::<f64>() / t.lateral.len() as f64;
        let trace: Vec<String> = t.lateral.iter().map(|y| y.to_string()).collect();
        let _ = writeln!(
            csv,
            "{i},{},{},{},{mean},{}",
            t.seed,
            t.episode_return,
            t.lateral.len(),
            trace.join(";")
        );
    }
    let dir = out.or_else(default_out).unwrap_or(cfg.out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(EVAL_FILE);
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    print!("{}", report.to_text());
    Ok(())
}

/// Frame indices spread evenly over `0..count`, endpoints included.
fn spread(count: usize, n: usize) -> Vec<usize> {
    let n = n.min(count);
    if n <= 1 {
        return vec![0; n];
    }
    (0..n).map(|j| (j * (count - 1) + (n - 1) / 2) / (n - 1)).collect()
}

pub fn reconstruct(checkpoint: &Path, episode: &Path, output: &Path, frames: usize) -> Result<()> {
    if frames == 0 {
        bail!("--frames must be at least 1");
    }
    let (cfg, trainer) = load(checkpoint)?;
    let m = &trainer.model.cfg;
    let ep = read_episode(episode, m.obs_channels, m.img_size, m.action_dim)?;
    let scale = ActionScale::from_env(&cfg.env);
    let len = m.obs_len();

    let mut z = LatentState::zeros(m);
    let mut recon = Vec::with_capacity(ep.steps() + 1);
    for t in 0..=ep.steps() {
        let action: Vec<f32> = if t == 0 {
            vec![0.0; m.action_dim]
        } else {
            let a = &ep.actions[(t - 1) * m.action_dim..t * m.action_dim];
            scale.normalize(a).iter().map(|&v| v as f32).collect()
        };
        z = trainer.model.filter_step(&z, &action, &ep.observations[t * len..(t + 1) * len])?;
        let img: Vec<f32> = trainer.model.decode_obs(&z).iter().map(|v| v.clamp(0.0, 1.0)).collect();
        recon.push(img);
    }

    let picks = spread(ep.steps() + 1, frames);
    let real: Vec<&[f32]> = picks.iter().map(|&t| &ep.observations[t * len..(t + 1) * len]).collect();
    let fake: Vec<&[f32]> = picks.iter().map(|&t| recon[t].as_slice()).collect();
    write_grid(output, &real, &fake, m.obs_channels, m.img_size)?;

    let mut total = 0.0;
    for ((&t, r), f) in picks.iter().zip(&real).zip(&fake) {
        let mse = r.iter().zip(f.iter()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / len as f64;
        total += mse;
        println!("frame {t} mse {mse}");
    }
    let all: Vec<f64> = real.iter().flat_map(|r| r.iter().map(|&v| v as f64)).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
    println!("mean mse {}", total / picks.len() as f64);
    println!("pixel variance {var}");
    Ok(())
}

/// Upscaling factor of each cell in the reconstruction grid.
pub const CELL_SCALE: u32 = 4;

/// Top row real frames, bottom row reconstructions; CHW inputs in [0, 1].
fn write_grid(path: &Path, real: &[&[f32]], fake: &[&[f32]], channels: usize, size: usize) -> Result<()> {
    let cell = size as u32 * CELL_SCALE;
    let mut img = image::RgbImage::new(cell * real.len() as u32, cell * 2);
    for (row, frames) in [real, fake].into_iter().enumerate() {
        for (col, frame) in frames.iter().enumerate() {
            for y in 0..cell {
                for x in 0..cell {
                    let (py, px) = ((y / CELL_SCALE) as usize, (x / CELL_SCALE) as usize);
                    let at = |c: usize| (frame[(c * size + py) * size + px] * 255.0).round() as u8;
                    let rgb = if channels >= 3 { [at(0), at(1), at(2)] } else { [at(0); 3] };
                    img.put_pixel(col as u32 * cell + x, row as u32 * cell + y, image::Rgb(rgb));
                }
            }
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_hits_both_ends() {
        assert_eq!(spread(10, 4), vec![0, 3, 6, 9]);
        assert_eq!(spread(3, 8), vec![0, 1, 2]);
        assert_eq!(spread(5, 1), vec![0]);
    }

    #[test]
    fn precedence_is_defaults_file_flags() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        fs::write(&file, "seed=3\nagent.sigma=0.2\ntrainer.batch=8\n").unwrap();
        let args = ConfigArgs {
            config: Some(file),
            seed: Some(9),
            overrides: vec!["trainer.batch=4".into()],
            ..Default::default()
        };
        let cfg = build_config(&args).unwrap();
        let defaults = RunConfig::desk();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.agent.sigma, 0.2);
        assert_eq!(cfg.trainer.batch, 4);
        assert_eq!(cfg.trainer.horizon, defaults.trainer.horizon);
    }
}
