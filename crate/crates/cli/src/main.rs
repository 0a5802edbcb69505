use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ardis::imaging::{load_rgb, save_image, BitDepth};
use ardis::metrics::{psnr, ssim, MetricReport, MetricRow};
use ardis::pipeline::data::list_pngs;
use ardis::pipeline::train::{TrainOptions, Trainer};
use ardis::pipeline::{evaluate_pair, load_checkpoint, load_checkpoint_for, load_dataset, ArdisConfig, Model};
use ardis::{selftest, Error};

/// Arbitrary-resolution image steganography.
#[derive(Parser, Debug)]
#[command(name = "ardis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Hide a secret image of any size inside a cover.
    Hide {
        #[arg(long)]
        cover: PathBuf,
        #[arg(long)]
        secret: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write a 16-bit PNG instead of 8-bit.
        #[arg(long)]
        bits16: bool,
    },
    /// Recover the secret; its resolution is read from the stego.
    Reveal {
        #[arg(long)]
        stego: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a model on a directory of PNGs.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path; the CSV log goes next to it unless --log is given.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint that holds optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Hide and reveal every cover/secret pair with matching file names.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        covers: PathBuf,
        #[arg(long)]
        secrets: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Quantize stegos to 16 bits instead of 8 before revealing.
        #[arg(long)]
        bits16: bool,
    },
    /// Run the no-training property suite.
    Selftest,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } => Failure::Numeric(e.to_string()),
            Error::Config { .. } => Failure::Usage(e.to_string()),
            e => Failure::Data(e.to_string()),
        }
    }
}

fn depth(bits16: bool) -> BitDepth {
    if bits16 {
        BitDepth::Sixteen
    } else {
        BitDepth::Eight
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_model(path: &Path) -> Result<Model<f32>, Failure> {
    Ok(load_checkpoint::<f32>(path)?.0)
}

fn hide(cover: &Path, secret: &Path, model: &Path, out: &Path, bits16: bool) -> Result<(), Failure> {
    let model = load_model(model)?;
    let cover = load_rgb(cover)?;
    let secret = load_rgb(secret)?;
    let hidden = model.hide(&cover, &secret)?;
    let depth = depth(bits16);
    save_image(&hidden.stego, out, depth)?;
    let stego = hidden.stego.quantize(depth);
    println!(
        "hid {}x{} secret; stego PSNR {:.2} dB, SSIM {:.4}",
        hidden.secret_dims.0,
        hidden.secret_dims.1,
        psnr(&stego, &cover)?,
        ssim(&stego, &cover)?
    );
    Ok(())
}

fn reveal(stego_path: &Path, model: &Path, out: &Path, report: Option<&Path>) -> Result<(), Failure> {
    let model = load_model(model)?;
    let stego = load_rgb(stego_path)?;
    let r = model.reveal(&stego)?;
    save_image(&r.secret, out, BitDepth::Eight)?;
    let (h, w) = r.decode.dims();
    println!("resolution {h}x{w}, decode margin {:.4}", r.decode.margin());
    if let Some(warning) = &r.warning {
        eprintln!("warning: {warning}");
    }
    if let Some(path) = report {
        let mut rep = MetricReport::default();
        rep.push(MetricRow {
            id: file_name(stego_path),
            ..Default::default()
        });
        rep.write_csv(path)?;
    }
    Ok(())
}

fn train(config: &Path, data: &Path, out: &Path, seed: Option<u64>, resume: Option<&Path>, log: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = ArdisConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let images: Vec<_> = load_dataset(data)?.into_iter().map(|(_, img)| img).collect();
    let (model, adam) = match resume {
        Some(path) => {
            let (mut model, adam) = load_checkpoint_for::<f32>(path, &cfg)?;
            if adam.is_none() {
                return Err(Failure::Data(format!("{} holds no optimizer state to resume from", path.display())));
            }
            model.config = cfg.clone();
            (model, adam)
        }
        None => (Model::new(cfg.clone())?, None),
    };
    let mut trainer = Trainer::new(model, adam, images)?;
    let opts = TrainOptions {
        log_path: Some(log.unwrap_or_else(|| out.with_extension("csv"))),
        checkpoint_path: Some(out.to_path_buf()),
    };
    let start = trainer.step_count();
    let every = cfg.log_interval;
    let last = cfg.total_steps;
    trainer.run_with(&opts, |row| {
        if (every > 0 && row.step % every == 0) || row.step == last {
            println!(
                "step {:>6}  loss {:.5}  stego {:.2} dB  secret {:.2} dB  rre {:.1}%",
                row.step, row.total, row.stego_psnr, row.secret_psnr, row.rre
            );
        }
    })?;
    if trainer.step_count() == start {
        println!("nothing to do: already at step {start}");
    }
    Ok(())
}

fn eval(model: &Path, covers: &Path, secrets: &Path, report: &Path, bits16: bool) -> Result<(), Failure> {
    let model = load_model(model)?;
    let cover_files = list_pngs(covers)?;
    let secret_files = list_pngs(secrets)?;
    if cover_files.is_empty() || secret_files.is_empty() {
        return Err(Failure::Data(format!("no PNG pairs in {} and {}", covers.display(), secrets.display())));
    }
    let cn: BTreeSet<String> = cover_files.iter().map(|p| file_name(p)).collect();
    let sn: BTreeSet<String> = secret_files.iter().map(|p| file_name(p)).collect();
    let unpaired: Vec<&String> = cn.symmetric_difference(&sn).collect();
    if !unpaired.is_empty() {
        let list = unpaired.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
        return Err(Failure::Data(format!("unpaired files: {list}")));
    }
    let mut rep = MetricReport::default();
    for name in &cn {
        let cover = load_rgb(covers.join(name))?;
        let secret = load_rgb(secrets.join(name))?;
        let r = evaluate_pair(&model, name, &cover, &secret, Some(depth(bits16)))?;
        rep.push(r.row);
    }
    rep.write_csv(report)?;
    let mean = rep.aggregate();
    let show = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
    println!(
        "{} pairs; stego PSNR {} SSIM {}; secret PSNR {} SSIM {}; RRE {}%",
        rep.rows.len(),
        show(mean.stego_psnr),
        show(mean.stego_ssim),
        show(mean.secret_psnr),
        show(mean.secret_ssim),
        show(mean.rre_percent)
    );
    Ok(())
}

fn run_selftest() -> Result<(), Failure> {
    let checks = selftest::run_all(|c| {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {:<28} {} ({:.2} s)", c.name, c.detail, c.seconds);
    });
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::Data(format!("{failed} of {} properties failed", checks.len())));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Hide { cover, secret, model, out, bits16 } => hide(&cover, &secret, &model, &out, bits16),
        Command::Reveal { stego, model, out, report } => reveal(&stego, &model, &out, report.as_deref()),
        Command::Train { config, data, out, seed, resume, log } => train(&config, &data, &out, seed, resume.as_deref(), log),
        Command::Eval { model, covers, secrets, report, bits16 } => eval(&model, &covers, &secrets, &report, bits16),
        Command::Selftest => run_selftest(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (1, m),
                Failure::Data(m) => (2, m),
                Failure::Numeric(m) => (3, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
