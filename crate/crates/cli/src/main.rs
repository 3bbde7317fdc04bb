//! `splitjscc`: dataset generation, three-step training, evaluation, SNR
//! sweeps and the BER utility. Worker threads follow `RAYON_NUM_THREADS`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use splitjscc::baseline::{simulate_ber, write_ber_csv};
use splitjscc::channel::SnrSpec;
use splitjscc::harness::{
    evaluate, min_regret, parse_grid, parse_separate, parse_snr, run_sweep, train_three_step, Arm, ArmStores,
    Dataset, EvalMetrics, ExperimentConfig, Model, Step, SweepMeta, SweepReport, SweepRow,
};
use splitjscc::tensor::{load_checkpoint, ParamStore};

#[derive(Parser)]
#[command(name = "splitjscc", version, about = "Split multi-task inference over a noisy channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Flat `key = value` experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides a config key, e.g. `--set train.seed=3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shapes dataset.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output file (default: the configured dataset path).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run training steps; checkpoints land in the output directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// 1, 2, 3 or all. Steps 2 and 3 resume from the previous step's checkpoint.
        #[arg(long, default_value = "all")]
        step: String,
        /// Training SNR in dB, or `none` for a noiseless channel.
        #[arg(long)]
        snr_train: Option<String>,
    },
    /// Evaluate one arm at one SNR on the test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint (default: step3.ckpt for jscc, step1.ckpt otherwise).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test SNR in dB, or `none`.
        #[arg(long, default_value = "none")]
        snr: String,
        /// direct, jscc, or a separate-scheme label such as q75-conv-bpsk.
        #[arg(long, default_value = "jscc")]
        arm: String,
    },
    /// Evaluate arms over a grid of test SNRs and write a CSV report.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// End-to-end checkpoint used by the jscc arm (default: step3.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Network-only checkpoint for the direct and separate arms (default: step1.ckpt).
        #[arg(long)]
        base_checkpoint: Option<PathBuf>,
        /// `start:stop:step` in dB, or a comma list; `none` adds the noiseless point.
        #[arg(long)]
        snr_grid: Option<String>,
        /// Comma list of direct, jscc, separate (all configured schemes) or scheme labels.
        #[arg(long, default_value = "jscc,separate")]
        arms: String,
        /// CSV path (default: <output dir>/sweep.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write an SVG plot of mAP and mIoU against test SNR.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Pick the training SNR with the smallest worst-case regret across sweep reports.
    SelectSnrTrain {
        /// Sweep CSVs of models trained at different SNRs.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "jscc")]
        arm: String,
    },
    /// Monte-Carlo BER of BPSK with and without the convolutional code.
    BaselineBer {
        /// Eb/N0 grid in dB.
        #[arg(long, default_value = "0:10:1")]
        ebn0_grid: String,
        #[arg(long, default_value_t = 1_000_000)]
        bits: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// CSV path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData { cfg, out } => gen_data(&cfg.load()?, out),
        Command::Train { cfg, step, snr_train } => {
            let mut cfg = cfg.load()?;
            if let Some(s) = snr_train {
                cfg.snr_train = parse_snr(&s)?;
            }
            train(&cfg, &parse_steps(&step)?)
        }
        Command::Eval {
            cfg,
            checkpoint,
            snr,
            arm,
        } => eval(&cfg.load()?, checkpoint, &snr, &arm),
        Command::Sweep {
            cfg,
            checkpoint,
            base_checkpoint,
            snr_grid,
            arms,
            out,
            svg,
        } => {
            let mut cfg = cfg.load()?;
            if let Some(g) = snr_grid {
                cfg.snr_grid = parse_grid(&g)?;
            }
            sweep(&cfg, checkpoint, base_checkpoint, &arms, out, svg)
        }
        Command::SelectSnrTrain { reports, arm } => select(&reports, &arm),
        Command::BaselineBer {
            ebn0_grid,
            bits,
            seed,
            out,
        } => baseline_ber(&ebn0_grid, bits, seed, out),
    }
}

fn parse_steps(s: &str) -> Result<Vec<Step>> {
    Ok(match s {
        "all" => Step::ALL.to_vec(),
        "1" => vec![Step::One],
        "2" => vec![Step::Two],
        "3" => vec![Step::Three],
        _ => bail!("--step must be 1, 2, 3 or all"),
    })
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
        }
        None => Ok(std::io::stdout().write_all(bytes)?),
    }
}

fn gen_data(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<()> {
    let path = out.unwrap_or_else(|| cfg.dataset_path());
    let data = Dataset::generate(&cfg.data)?;
    let mut bytes = Vec::new();
    data.write(&mut bytes)?;
    write_output(Some(&path), &bytes)?;
    eprintln!("wrote {} images to {}", data.len(), path.display());
    Ok(())
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let path = cfg.dataset_path();
    let data = Dataset::load(&path).with_context(|| format!("loading dataset {} (run gen-data first)", path.display()))?;
    if data.image_size != cfg.model.image_size || data.num_classes != cfg.model.num_classes {
        bail!("dataset {} does not match the configured image size or class count", path.display());
    }
    Ok(data)
}

fn meta(cfg: &ExperimentConfig) -> SweepMeta {
    SweepMeta {
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.eval_seed,
    }
}

fn single_row(cfg: &ExperimentConfig, arm: Arm, snr: Option<f64>, m: EvalMetrics) -> SweepReport {
    SweepReport {
        meta: meta(cfg),
        rows: vec![SweepRow {
            arm: arm.label(),
            snr_test_db: snr,
            map: m.map,
            miou: m.miou,
            feature_l1: m.feature_l1,
            decode_success_rate: m.decode_success,
            equivalent_ratio: m.equivalent_ratio,
            snr_train_db: if arm == Arm::Jscc { cfg.snr_train } else { None },
        }],
    }
}

fn train(cfg: &ExperimentConfig, steps: &[Step]) -> Result<()> {
    let data = load_dataset(cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    let model = Model::new(cfg)?;
    let initial = match steps[0] {
        Step::One => None,
        s => {
            let prev = dir.join(format!("step{}.ckpt", s.number() - 1));
            Some(load_checkpoint(&prev).with_context(|| format!("step {} resumes from {}", s.number(), prev.display()))?)
        }
    };
    let test: Vec<usize> = data.test_indices().collect();
    let mut store = initial;
    for &step in steps {
        eprintln!("step {}: {} iterations", step.number(), cfg.steps[step.number() as usize - 1].iterations);
        let outcome = train_three_step(cfg, &data, &[step], store.take(), Some(dir))?;
        let (first, last) = outcome.logs[0].1.head_tail(20);
        eprintln!("step {}: loss {first:.4} -> {last:.4}", step.number());
        let arm = if step == Step::One { Arm::Direct } else { Arm::Jscc };
        let m = evaluate(&model, &outcome.store, &data, &test, arm, &SnrSpec::noiseless(), cfg.eval_seed)?;
        let report = single_row(cfg, arm, None, m);
        let path = dir.join(format!("step{}.metrics.csv", step.number()));
        fs::write(&path, report.to_csv_string()?)?;
        eprintln!("step {}: noiseless test mAP {:.4}, mIoU {:.4}", step.number(), m.map, m.miou);
        store = Some(outcome.store);
    }
    Ok(())
}

fn parse_arm(cfg: &ExperimentConfig, s: &str) -> Result<Vec<Arm>> {
    Ok(match s {
        "direct" => vec![Arm::Direct],
        "jscc" => vec![Arm::Jscc],
        "separate" => cfg.separate_arms.iter().map(|&c| Arm::Separate(c)).collect(),
        label => vec![Arm::Separate(parse_separate(label)?)],
    })
}

fn eval(cfg: &ExperimentConfig, checkpoint: Option<PathBuf>, snr: &str, arm: &str) -> Result<()> {
    let arms = parse_arm(cfg, arm)?;
    let [arm] = arms[..] else {
        bail!("--arm names a single arm");
    };
    let snr = parse_snr(snr)?;
    let data = load_dataset(cfg)?;
    let model = Model::new(cfg)?;
    let jscc = arm == Arm::Jscc;
    let path = checkpoint.unwrap_or_else(|| cfg.output_dir.join(if jscc { "step3.ckpt" } else { "step1.ckpt" }));
    let store = model.load(&path, jscc).with_context(|| format!("loading {}", path.display()))?;
    let test: Vec<usize> = data.test_indices().collect();
    let m = evaluate(&model, &store, &data, &test, arm, &SnrSpec::from_option(snr), cfg.eval_seed)?;
    print!("{}", single_row(cfg, arm, snr, m).to_csv_string()?);
    Ok(())
}

fn load_store(model: &Model, path: &Path, with_codec: bool) -> Result<ParamStore<f32>> {
    model.load(path, with_codec).with_context(|| format!("loading {}", path.display()))
}

fn sweep(
    cfg: &ExperimentConfig,
    checkpoint: Option<PathBuf>,
    base_checkpoint: Option<PathBuf>,
    arms: &str,
    out: Option<PathBuf>,
    svg: Option<PathBuf>,
) -> Result<()> {
    let mut arm_list = Vec::new();
    for a in arms.split(',').map(str::trim).filter(|a| !a.is_empty()) {
        for arm in parse_arm(cfg, a)? {
            if !arm_list.contains(&arm) {
                arm_list.push(arm);
            }
        }
    }
    let data = load_dataset(cfg)?;
    let model = Model::new(cfg)?;
    let needs_base = arm_list.iter().any(|a| *a != Arm::Jscc);
    let needs_jscc = arm_list.contains(&Arm::Jscc);
    let jscc = match needs_jscc {
        true => load_store(&model, &checkpoint.unwrap_or_else(|| cfg.output_dir.join("step3.ckpt")), true)?,
        false => ParamStore::new(),
    };
    let base = match needs_base {
        true => load_store(&model, &base_checkpoint.unwrap_or_else(|| cfg.output_dir.join("step1.ckpt")), false)?,
        false => ParamStore::new(),
    };
    let report = run_sweep(
        &model,
        &ArmStores { jscc: &jscc, base: &base },
        &data,
        &cfg.snr_grid,
        &arm_list,
        cfg.snr_train,
        meta(cfg),
    )?;
    let out = out.unwrap_or_else(|| cfg.output_dir.join("sweep.csv"));
    write_output(Some(&out), report.to_csv_string()?.as_bytes())?;
    eprintln!("wrote {} rows to {}", report.rows.len(), out.display());
    if let Some(svg) = svg {
        write_output(Some(&svg), report.to_svg().as_bytes())?;
    }
    Ok(())
}

fn select(paths: &[PathBuf], arm: &str) -> Result<()> {
    let reports: Vec<SweepReport> = paths
        .iter()
        .map(|p| {
            let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Ok(SweepReport::read_csv(std::io::BufReader::new(f))?)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&SweepReport> = reports.iter().collect();
    let Some((i, regret)) = min_regret(&refs, arm) else {
        bail!("the reports share no test SNR for arm `{arm}`");
    };
    let train = reports[i].rows.iter().find(|r| r.arm == arm).and_then(|r| r.snr_train_db);
    println!(
        "{}\tsnr_train={}\tworst_regret={regret}",
        paths[i].display(),
        splitjscc::harness::format_snr(train)
    );
    Ok(())
}

fn baseline_ber(grid: &str, bits: u64, seed: u64, out: Option<PathBuf>) -> Result<()> {
    if bits == 0 {
        bail!("--bits must be positive");
    }
    let grid = parse_grid(grid)?;
    let mut points = Vec::new();
    for (i, &snr) in grid.iter().enumerate() {
        let Some(snr) = snr else {
            bail!("the BER grid needs finite Eb/N0 values");
        };
        for coded in [false, true] {
            points.push(simulate_ber(snr, bits, coded, splitjscc::channel::derive_seed(seed, i as u64)));
        }
    }
    let mut buf = Vec::new();
    write_ber_csv(&points, &mut buf)?;
    write_output(out.as_deref(), &buf)
}
