use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use capsule_core::dataset::{
    build_manifest, collect_scripted, finetune_recipe, load_demo, pretrain_corpus, replay_error, save_demo,
    scripted_demo, Demonstration, InstructionTemplate, Manifest, Split,
};
use capsule_core::diffusion::Policy;
use capsule_core::harness::{
    default_trials, reports_to_csv, run_ablation, run_eval, run_trial, train_mode, AblationData, AblationMode,
    Config, IdleController, TeleopConfig, TeleopServer, TickMode, CONFIG_ENV,
};
use capsule_core::sim::{TaskKind, TaskSpec, WaterFraction};

#[derive(Parser)]
#[command(name = "capsule", version, about = "Magnetic capsule endoscopy simulator and policy tools")]
struct Cli {
    /// TOML config; defaults apply when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Parent directory of the per-run output directories.
    #[arg(long, global = true, default_value = "runs")]
    runs: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct TaskArgs {
    /// Task family, or `family@water`.
    #[arg(long, default_value = "navigation")]
    task: String,
    /// Water line: one_third, one_half or full.
    #[arg(long)]
    water: Option<String>,
}

impl TaskArgs {
    fn spec(&self) -> Result<TaskSpec> {
        let mut t = TaskSpec::parse(&self.task)?;
        if let Some(w) = &self.water {
            t.water = WaterFraction::parse(w)?;
        }
        Ok(t)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Driver {
    Idle,
    Expert,
}

#[derive(Subcommand)]
enum Cmd {
    /// One headless rollout.
    Sim {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "expert")]
        driver: Driver,
    },
    /// Scripted demonstrations plus a manifest.
    Collect {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Collect the whole fine-tuning recipe instead of one task.
        #[arg(long, conflicts_with = "pretrain")]
        finetune_set: bool,
        /// Collect the randomized pretraining corpus (size from the config).
        #[arg(long)]
        pretrain: bool,
    },
    /// Teleoperation service.
    Teleop {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// One step per command instead of the wall clock.
        #[arg(long)]
        lockstep: bool,
    },
    /// Train a policy from demo manifests.
    Train {
        /// Fine-tuning manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        pretrain_manifest: Option<PathBuf>,
        #[arg(long, default_value = "ours")]
        mode: AblationMode,
        /// Checkpoint path; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-loop success rates for a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated tasks; a bare family covers every water line
        /// for the view tasks.
        #[arg(long, default_value = "navigation")]
        task: String,
        /// Trials per task; defaults to 5, or 10 for rotation.
        #[arg(long)]
        trials: Option<usize>,
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seeds: u64,
    },
    /// Train and evaluate the ablation variants.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "ours,regress,scratch,pretrained_only")]
        modes: Vec<AblationMode>,
        #[arg(long, value_delimiter = ',', default_value = "navigation,rotation")]
        tasks: Vec<String>,
        #[arg(long)]
        pretrain_manifest: PathBuf,
        #[arg(long)]
        finetune_manifest: PathBuf,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seeds: u64,
    },
    /// Validate a stored demo and replay its actions.
    Replay {
        #[arg(long)]
        demo: PathBuf,
    },
}

fn run_dir(cfg: &Config, root: &Path, cmd: &str) -> Result<PathBuf> {
    let dir = cfg.run_dir(root, cmd);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(dir)
}

fn expand_tasks(spec: &str) -> Result<Vec<TaskSpec>> {
    let mut out = Vec::new();
    for s in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let t = TaskSpec::parse(s)?;
        let per_line = !s.contains('@') && matches!(t.kind, TaskKind::ViewAdjustment | TaskKind::ViewRotation);
        if per_line {
            out.extend(WaterFraction::ALL.map(|w| TaskSpec::new(t.kind, w)));
        } else {
            out.push(t);
        }
    }
    if out.is_empty() {
        bail!("no tasks given");
    }
    Ok(out)
}

fn load_manifest(path: &Path) -> Result<Vec<Demonstration>> {
    let m = Manifest::load(path).with_context(|| format!("manifest {}", path.display()))?;
    Ok(m.load_demos()?)
}

fn save_all(demos: &[Demonstration], dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    demos
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let stem = format!("{prefix}-{}-{}-s{}-{i:04}", d.task.kind.id(), d.task.water.name(), d.seed);
            Ok(save_demo(d, dir, &stem)?)
        })
        .collect()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Sim { task, seed, driver } => {
            let task = task.spec()?;
            let text = InstructionTemplate::for_task(&task).canonical();
            let (success, ticks, flags) = match driver {
                Driver::Idle => {
                    let r = run_trial(&mut IdleController, &cfg.env, task, &text, seed)?;
                    (r.success, r.ticks, r.subtasks)
                }
                Driver::Expert => {
                    let d = scripted_demo(&cfg.env, task, &text, seed, &cfg.expert)?;
                    let flags = d.outcome.subtasks.iter().map(|s| s.done).collect();
                    (d.outcome.success, d.records.len(), flags)
                }
            };
            println!("{} seed {seed}: success {success} after {ticks} ticks, subtasks {flags:?}", task.label());
        }
        Cmd::Collect {
            task,
            count,
            seed,
            finetune_set,
            pretrain,
        } => {
            let label = if pretrain {
                "pretrain".to_string()
            } else if finetune_set {
                "finetune".to_string()
            } else {
                task.spec()?.label().replace('@', "-")
            };
            let dir = run_dir(&cfg, &cli.runs, &format!("collect-{label}"))?;
            let demo_dir = dir.join("demos");
            let (files, split) = if pretrain {
                let seed = seed.unwrap_or(cfg.corpus.pretrain_seed);
                let demos = pretrain_corpus(&cfg.env, &cfg.expert, cfg.corpus.pretrain_demos, seed)?;
                (save_all(&demos, &demo_dir, "pre")?, Split::Pretrain)
            } else {
                let seed = seed.unwrap_or(cfg.corpus.finetune_seed);
                let plan = if finetune_set {
                    finetune_recipe()
                } else {
                    vec![(task.spec()?, count)]
                };
                let mut files = Vec::new();
                for (i, (t, n)) in plan.iter().enumerate() {
                    // disjoint seed blocks per task; flagged takes are kept on disk
                    let demos = collect_scripted(&cfg.env, *t, *n, seed + 1000 * i as u64, &cfg.expert)?;
                    let failed = demos.iter().filter(|d| d.flagged).count();
                    if failed > 0 {
                        log::warn!("{failed} of {n} {} demos flagged", t.label());
                    }
                    files.extend(save_all(&demos, &demo_dir, "demo")?);
                }
                (files, Split::Finetune)
            };
            let manifest = build_manifest(&files, split)?;
            let path = dir.join("manifest.json");
            manifest.save(&path)?;
            println!("{} demos, manifest {}", manifest.total, path.display());
        }
        Cmd::Teleop {
            port,
            task,
            seed,
            lockstep,
        } => {
            let dir = run_dir(&cfg, &cli.runs, "teleop")?;
            let mut tc = TeleopConfig::new(cfg.env.clone(), task.spec()?, dir.join("demos"));
            tc.seed = seed;
            if lockstep {
                tc.mode = TickMode::Lockstep;
            }
            let server = TeleopServer::bind(("0.0.0.0", port), tc).with_context(|| format!("port {port}"))?;
            println!("teleop listening on ws://{}", server.local_addr()?);
            let stats = server.run(&AtomicBool::new(false))?;
            println!("{} ticks, {} takes", stats.ticks, stats.recorded.len());
        }
        Cmd::Train {
            manifest,
            pretrain_manifest,
            mode,
            out,
        } => {
            let fine = manifest.as_deref().map(load_manifest).transpose()?.unwrap_or_default();
            let pre = pretrain_manifest.as_deref().map(load_manifest).transpose()?.unwrap_or_default();
            let data = AblationData::build(&cfg, &pre, &fine)?;
            let policy = train_mode(mode, &cfg, &data)?;
            let out = match out {
                Some(p) => p,
                None => run_dir(&cfg, &cli.runs, "train")?.join(format!("{mode}.ckpt")),
            };
            policy.save(&out)?;
            println!("{mode} policy written to {}", out.display());
        }
        Cmd::Eval {
            checkpoint,
            task,
            trials,
            seeds,
        } => {
            let policy = Policy::load(&checkpoint)?;
            let dir = run_dir(&cfg, &cli.runs, "eval")?;
            let hash = cfg.hash();
            let mut reports = Vec::new();
            for t in expand_tasks(&task)? {
                let n = trials.unwrap_or_else(|| default_trials(t.kind));
                let list: Vec<u64> = (seeds..seeds + n as u64).collect();
                let text = InstructionTemplate::for_task(&t).canonical();
                let r = run_eval(&policy, &cfg.env, t, &text, &list, &cfg.eval, &hash)?;
                println!("{}: {}/{} ({:.0}%)", r.task, r.successes, r.trials, 100.0 * r.success_rate);
                reports.push(r);
            }
            let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("policy");
            fs::write(dir.join(format!("{stem}.csv")), reports_to_csv(&reports))?;
            fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&reports)?)?;
            println!("report in {}", dir.display());
        }
        Cmd::Ablate {
            modes,
            tasks,
            pretrain_manifest,
            finetune_manifest,
            trials,
            seeds,
        } => {
            let pre = load_manifest(&pretrain_manifest)?;
            let fine = load_manifest(&finetune_manifest)?;
            let tasks = expand_tasks(&tasks.join(","))?;
            let data = AblationData::build(&cfg, &pre, &fine)?;
            let list: Vec<u64> = (seeds..seeds + trials as u64).collect();
            let table = run_ablation(&cfg, &modes, &tasks, &data, &list)?;
            let dir = run_dir(&cfg, &cli.runs, "ablate")?;
            let csv = table.to_csv();
            fs::write(dir.join("ablation.csv"), &csv)?;
            fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&table)?)?;
            print!("{csv}");
            println!("report in {}", dir.display());
        }
        Cmd::Replay { demo } => {
            let d = load_demo(&demo)?;
            d.validate(&cfg.env)?;
            let err = replay_error(&d, &cfg.env)?;
            println!(
                "{}: {} records, success {}, replay error {err:.3e} m",
                d.task.label(),
                d.records.len(),
                d.outcome.success
            );
            if err > 1e-6 {
                bail!("replay drifted {err:.3e} m from the recording");
            }
        }
    }
    Ok(())
}
