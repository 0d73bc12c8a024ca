use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use handpose::handmodel::dataset::{sample_stream, write_jsonl};
use handpose::handmodel::{load_dataset, Sample};
use handpose::pipeline::{
    evaluate, git_blob_hash, load_checkpoint, load_variants, resume, rows_to_csv, run_ablation, sha256_hex,
    stage1_pretrain, stage2_train_generator, stage3_adversarial, Checkpoint, EpochLog, Manifest, Stage,
    TrainConfig,
};
use handpose::rng::Stream;
use handpose::{Error, Result};

#[derive(Parser)]
#[command(name = "handpose", version, about = "Train and evaluate the hand-pose generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataStream {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic samples as JSON lines.
    GenerateData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        stream: DataStream,
    },
    /// Run one training stage. Stages 2 and 3 start from the previous
    /// stage's checkpoint; a checkpoint of the same stage is resumed.
    Train {
        #[arg(long)]
        stage: u8,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint; prints the summary CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pck_out: PathBuf,
    },
    /// Train every variant on synthetic data from the config's seed.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variants: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,critic_loss\n");
    for l in log {
        let c = l.critic_loss.map(|c| c.to_string()).unwrap_or_default();
        s += &format!("{},{},{}\n", l.epoch, l.loss, c);
    }
    s
}

fn generate_data(seed: u64, count: usize, out: &Path, stream: DataStream) -> Result<()> {
    let label = match stream {
        DataStream::Train => Stream::TrainData,
        DataStream::Test => Stream::TestData,
    };
    let samples = sample_stream(seed, label, count)?;
    let mut bytes = Vec::new();
    write_jsonl(&samples, &mut bytes)?;
    write(out, &bytes)?;
    let mut m = Manifest::new("generate-data");
    m.dataset_sha256.insert(out.display().to_string(), sha256_hex(&bytes));
    m.add_output(out, &bytes);
    m.write_next_to(out)?;
    Ok(())
}

fn train(stage: u8, config: Option<&Path>, data: &Path, init: Option<&Path>, out: &Path) -> Result<()> {
    let stage = Stage::parse(stage)?;
    let cfg = load_config(config)?;
    let samples = load_dataset(data)?;
    let init = init.map(load_checkpoint).transpose()?;
    let outcome = match (stage, &init) {
        (s, Some(ck)) if ck.stage == s => {
            let epochs = match s {
                Stage::I => cfg.stage1_epochs,
                Stage::II => cfg.stage2_epochs,
                Stage::III => cfg.stage3_epochs,
            };
            resume(ck, &samples, epochs)?
        }
        (Stage::I, None) => stage1_pretrain(&cfg, &samples)?,
        (Stage::I, Some(ck)) => {
            return Err(Error::StageMismatch {
                expected: Stage::I.label().into(),
                found: ck.stage.label().into(),
            })
        }
        (Stage::II, Some(ck)) => stage2_train_generator(&cfg, ck, &samples)?,
        (Stage::III, Some(ck)) => stage3_adversarial(&cfg, ck, &samples)?,
        (_, None) => {
            return Err(Error::Invalid(format!(
                "stage {} needs --init-checkpoint",
                stage.number()
            )))
        }
    };
    let bytes = outcome.checkpoint().to_json().into_bytes();
    write(out, &bytes)?;
    let log_path = PathBuf::from(format!("{}.log.csv", out.display()));
    let log = log_csv(&outcome.log);
    write(&log_path, log.as_bytes())?;

    let mut m = Manifest::new(&format!("train --stage {}", stage.number()));
    m.config_sha256 = Some(cfg.hash());
    m.dataset_sha256.insert(data.display().to_string(), sha256_hex(&read(data)?));
    m.checkpoint_blob = Some(git_blob_hash(&bytes));
    m.add_output(out, &bytes);
    m.add_output(&log_path, log.as_bytes());
    m.write_next_to(out)?;
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path, pck_out: &Path) -> Result<String> {
    let ck_bytes = read(checkpoint)?;
    let text = String::from_utf8(ck_bytes.clone()).map_err(|e| Error::Invalid(e.to_string()))?;
    let ck = Checkpoint::from_json(&text)?;
    let samples = load_dataset(data)?;
    let report = evaluate(&ck, &samples)?;
    let pck = report.pck.to_csv();
    write(pck_out, pck.as_bytes())?;

    let mut m = Manifest::new("eval");
    m.config_sha256 = Some(ck.config.hash());
    m.dataset_sha256.insert(data.display().to_string(), sha256_hex(&read(data)?));
    m.checkpoint_blob = Some(git_blob_hash(&ck_bytes));
    m.add_output(pck_out, pck.as_bytes());
    m.write_next_to(pck_out)?;
    Ok(report.summary_csv())
}

fn ablate(config: Option<&Path>, variants: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let vars = load_variants(variants)?;
    let train: Vec<Sample> = sample_stream(cfg.seed, Stream::TrainData, cfg.train_size)?;
    let test: Vec<Sample> = sample_stream(cfg.seed, Stream::TestData, cfg.test_size)?;
    let rows = run_ablation(&cfg, &vars, &train, &test)?;
    let csv = rows_to_csv(&rows);
    write(out, csv.as_bytes())?;

    let mut m = Manifest::new("ablate");
    m.config_sha256 = Some(cfg.hash());
    for (name, data) in [("train", &train), ("test", &test)] {
        let mut bytes = Vec::new();
        write_jsonl(data, &mut bytes)?;
        m.dataset_sha256.insert(name.into(), sha256_hex(&bytes));
    }
    m.dataset_sha256.insert(variants.display().to_string(), sha256_hex(&read(variants)?));
    m.add_output(out, csv.as_bytes());
    m.write_next_to(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData {
            seed,
            count,
            out,
            stream,
        } => generate_data(seed, count, &out, stream),
        Command::Train {
            stage,
            config,
            data,
            init_checkpoint,
            out,
        } => train(stage, config.as_deref(), &data, init_checkpoint.as_deref(), &out),
        Command::Eval {
            checkpoint,
            data,
            pck_out,
        } => {
            let summary = eval(&checkpoint, &data, &pck_out)?;
            print!("{summary}");
            std::io::stdout().flush().map_err(|e| Error::io("<stdout>", e))
        }
        Command::Ablate { config, variants, out } => ablate(config.as_deref(), &variants, &out),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("error kind=usage msg={}", one_line(msg.lines().next().unwrap_or("")));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} msg={}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
