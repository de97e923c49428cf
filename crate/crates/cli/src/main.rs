//! `ppgvc`: corpus generation, staged training, conversion, scoring and
//! benchmarking from the command line.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use ppgvc::corpus::{generate_corpus, load_manifest, manifest_path, CorpusSpec, SpeakerRole};
use ppgvc::dsp::{read_wav, write_wav, Analyzer, DspConfig, Waveform};
use ppgvc::eval::{bench, bench_convert, mcd, Alignment, LatencyTable, McdReport};
use ppgvc::neural::{Checkpoint, Network, Parent, Stage};
use ppgvc::pipeline::{
    features, prepare_stage1, synthesize_stage3_pairs, train_stage1, train_stage2, train_stage3, ArchConfig,
    CascadeConverter, Converter, DirectConverter, StageConfig, Trained,
};

use config::{ArchArgs, BenchArgs, ConvertArgs, EvalArgs, FileConfig, GenCorpusArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "ppgvc", version, about = "Non-parallel voice conversion with a distilled direct network")]
struct Cli {
    /// TOML file with one table per subcommand; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic multi-speaker corpus.
    GenCorpus(GenCorpusArgs),
    /// Train one stage and write its checkpoint and loss log.
    Train(TrainArgs),
    /// Convert a WAV file (or every WAV in a directory).
    Convert(ConvertArgs),
    /// Mel-cepstral distortion between target and converted speech.
    Eval(EvalArgs),
    /// Time each network on synthetic utterances and print the summary table.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Direct,
    Cascade,
}

type CliResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::MissingRequiredArgument, msg)
        .exit()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let file = match cli.config.as_deref().map(FileConfig::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::GenCorpus(a) => gen_corpus(a.merge(file.gen_corpus)),
        Command::Train(a) => train(a.merge(file.train)),
        Command::Convert(a) => convert(a.merge(file.convert)),
        Command::Eval(a) => eval(a.merge(file.eval)),
        Command::Bench(a) => run_bench(a.merge(file.bench)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn gen_corpus(a: GenCorpusArgs) -> CliResult<()> {
    let out = a.out.unwrap_or_else(|| usage_error("the following required argument was not provided: --out <DIR>"));
    let mut spec = CorpusSpec::default();
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(n) = a.utterances {
        spec.utterances_per_speaker = n;
    }
    if let Some(s) = a.seconds {
        spec.utterance_seconds = s;
    }
    let corpus = generate_corpus(&spec, &out, &DspConfig::default())?;
    eprintln!(
        "wrote {} utterances from {} speakers to {}",
        corpus.len(),
        corpus.speakers().len(),
        out.display()
    );
    Ok(())
}

fn checkpoint_path(models: &Path, stage: Stage) -> PathBuf {
    models.join(format!("{stage}.ckpt"))
}

fn require(models: &Path, stage: Stage, needed_by: u8) -> CliResult<(Checkpoint, String)> {
    let path = checkpoint_path(models, stage);
    if !path.is_file() {
        return Err(Box::new(ppgvc::Error::Prerequisite(format!(
            "stage {needed_by} needs the {stage} checkpoint from an earlier stage; {} does not exist",
            path.display()
        ))));
    }
    Ok(Checkpoint::load_stage(&path, stage)?)
}

fn arch_for(args: &ArchArgs, base: Option<&Network>) -> ArchConfig {
    let base = base.map_or_else(ArchConfig::default, |n| ArchConfig::from_network(n.config()));
    args.apply(base)
}

fn write_losses(path: &Path, trained: &Trained) -> CliResult<()> {
    let mut text = String::from("epoch\tloss\n");
    for (i, l) in trained.losses.iter().enumerate() {
        text.push_str(&format!("{}\t{l}\n", i + 1));
    }
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn load_waves(manifest: &Path, take: Option<usize>, rate: u32) -> CliResult<Vec<Waveform>> {
    let corpus = load_manifest(manifest)?;
    let n = take.unwrap_or(corpus.len()).min(corpus.len());
    Ok(corpus.utterances[..n]
        .iter()
        .map(|u| u.load_audio(rate))
        .collect::<ppgvc::Result<_>>()?)
}

fn train(a: TrainArgs) -> CliResult<()> {
    let stage = a.stage.unwrap_or_else(|| usage_error("the following required argument was not provided: --stage <1|2|3>"));
    let models = a.models.clone().unwrap_or_else(|| PathBuf::from("models"));
    let data = a.data.clone().unwrap_or_else(|| PathBuf::from("data"));
    let dsp = DspConfig::default();
    let mut cfg = StageConfig::default();
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.batch_segments {
        cfg.batch_segments = v;
    }
    if let Some(v) = a.segment_frames {
        cfg.segment_frames = v;
        cfg.segment_hop = v;
    }
    if let Some(v) = a.segment_hop {
        cfg.segment_hop = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    let (stage_tag, trained, dsp, parents) = match stage {
        1 => {
            let manifest = a.manifest.clone().unwrap_or_else(|| manifest_path(&data, Some(SpeakerRole::Train)));
            let analyzer = Analyzer::new(&dsp)?;
            let corpus = load_manifest(&manifest)?;
            let examples = prepare_stage1(&corpus, &analyzer)?;
            let n_phones = match a.phones {
                Some(p) => p,
                None => examples.iter().flat_map(|e| e.labels.iter()).max().map_or(0, |m| m + 1),
            };
            eprintln!("stage 1: {} utterances, {n_phones} phones", examples.len());
            let arch = arch_for(&a.arch, None);
            (Stage::Net1, train_stage1(&examples, n_phones, &dsp, &arch, &cfg)?, dsp, vec![])
        }
        2 => {
            let (net1, sha1) = require(&models, Stage::Net1, 2)?;
            let dsp = net1.header.dsp.clone();
            let manifest = a.manifest.clone().unwrap_or_else(|| manifest_path(&data, Some(SpeakerRole::Target)));
            let waves = load_waves(&manifest, a.take, dsp.sample_rate)?;
            eprintln!("stage 2: {} target utterances", waves.len());
            let arch = arch_for(&a.arch, Some(&net1.network));
            let trained = train_stage2(&net1.network, &Analyzer::new(&dsp)?, &waves, &arch, &cfg)?;
            let parents = vec![Parent {
                stage: Stage::Net1,
                sha256: sha1,
            }];
            (Stage::Net2, trained, dsp, parents)
        }
        3 => {
            let (net1, sha1) = require(&models, Stage::Net1, 3)?;
            let (net2, sha2) = require(&models, Stage::Net2, 3)?;
            if !net2.header.parents.iter().any(|p| p.stage == Stage::Net1 && p.sha256 == sha1) {
                return Err("the net2 checkpoint was trained from a different net1 checkpoint".into());
            }
            let dsp = net1.header.dsp.clone();
            let analyzer = Analyzer::new(&dsp)?;
            let manifest = a.manifest.clone().unwrap_or_else(|| manifest_path(&data, Some(SpeakerRole::Train)));
            let waves = load_waves(&manifest, a.take, dsp.sample_rate)?;
            let cascade = CascadeConverter::new(net1.network.clone(), net2.network.clone(), analyzer)?;
            let pairs = synthesize_stage3_pairs(&cascade, &waves)?;
            eprintln!("stage 3: {} distillation pairs", pairs.len());
            let arch = arch_for(&a.arch, Some(&net2.network));
            let warm = a.warm_start.unwrap_or(false).then_some(&net2.network);
            let trained = train_stage3(&pairs, &dsp, &arch, &cfg, warm)?;
            let parents = vec![
                Parent {
                    stage: Stage::Net1,
                    sha256: sha1,
                },
                Parent {
                    stage: Stage::Net2,
                    sha256: sha2,
                },
            ];
            (Stage::Net3, trained, dsp, parents)
        }
        other => usage_error(format!("invalid --stage {other}: expected 1, 2 or 3")),
    };
    fs::create_dir_all(&models).map_err(|e| format!("{}: {e}", models.display()))?;
    let path = checkpoint_path(&models, stage_tag);
    let checkpoint = Checkpoint::new(stage_tag, trained.network.clone(), dsp, parents);
    checkpoint.save(&path)?;
    Checkpoint::load_stage(&path, stage_tag)?;
    write_losses(&models.join(format!("{stage_tag}.loss.tsv")), &trained)?;
    if let Some(last) = trained.losses.last() {
        eprintln!("final training loss {last:.4}");
    }
    println!("{}", path.display());
    Ok(())
}

fn build_converter(mode: Mode, models: &[PathBuf]) -> CliResult<Box<dyn Converter>> {
    let checkpoints = models.iter().map(|p| Checkpoint::load(p)).collect::<ppgvc::Result<Vec<_>>>()?;
    let of = |stage: Stage| checkpoints.iter().find(|c| c.header.stage == stage);
    match mode {
        Mode::Direct => {
            if checkpoints.len() != 1 {
                usage_error(format!("direct mode takes exactly one --model (net3), got {}", checkpoints.len()));
            }
            let net3 = of(Stage::Net3).ok_or("direct mode needs a net3 checkpoint")?;
            Ok(Box::new(DirectConverter::new(net3.network.clone(), Analyzer::new(&net3.header.dsp)?)?))
        }
        Mode::Cascade => {
            if checkpoints.len() != 2 {
                usage_error(format!("cascade mode takes exactly two --model files (net1, net2), got {}", checkpoints.len()));
            }
            let net1 = of(Stage::Net1).ok_or("cascade mode needs a net1 checkpoint")?;
            let net2 = of(Stage::Net2).ok_or("cascade mode needs a net2 checkpoint")?;
            if net1.header.dsp != net2.header.dsp {
                return Err("net1 and net2 were trained with different analysis settings".into());
            }
            let analyzer = Analyzer::new(&net1.header.dsp)?;
            Ok(Box::new(CascadeConverter::new(net1.network.clone(), net2.network.clone(), analyzer)?))
        }
    }
}

/// Files to process: `input` itself, or every `.wav` directly inside it.
fn wav_inputs(input: &Path) -> CliResult<Vec<PathBuf>> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| format!("{}: {e}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(format!("no .wav files in {}", input.display()).into());
        }
        Ok(files)
    } else if input.is_file() {
        Ok(vec![input.to_path_buf()])
    } else {
        Err(format!("{} does not exist", input.display()).into())
    }
}

fn convert(a: ConvertArgs) -> CliResult<()> {
    let input = a.input.unwrap_or_else(|| usage_error("the following required argument was not provided: --in <PATH>"));
    let out = a.out.unwrap_or_else(|| usage_error("the following required argument was not provided: --out <PATH>"));
    let mode = a.mode.unwrap_or(Mode::Direct);
    if a.model.is_empty() {
        usage_error("the following required argument was not provided: --model <CHECKPOINT>");
    }
    let converter = build_converter(mode, &a.model)?;
    let rate = converter.analyzer().config().sample_rate;
    let files = wav_inputs(&input)?;
    let to_dir = input.is_dir();
    if to_dir {
        fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
    }
    for f in &files {
        let (_, wave) = converter.convert(&read_wav(f, rate)?)?;
        let dest = if to_dir {
            out.join(f.file_name().ok_or("input file has no name")?)
        } else {
            out.clone()
        };
        write_wav(&dest, &wave)?;
        println!("{}", dest.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let target = a.target.unwrap_or_else(|| usage_error("the following required argument was not provided: --target <PATH>"));
    let converted = a
        .converted
        .unwrap_or_else(|| usage_error("the following required argument was not provided: --converted <PATH>"));
    let align: Alignment = a.align.as_deref().unwrap_or("frame").parse()?;
    let (targets, outputs) = (wav_inputs(&target)?, wav_inputs(&converted)?);
    if targets.len() != outputs.len() {
        return Err(format!("{} target files but {} converted files", targets.len(), outputs.len()).into());
    }
    let dsp = DspConfig::default();
    let analyzer = Analyzer::new(&dsp)?;
    let mut values = Vec::with_capacity(targets.len());
    let mut ids = Vec::with_capacity(targets.len());
    for (t, c) in targets.iter().zip(&outputs) {
        let tm = analyzer.mfcc(&read_wav(t, dsp.sample_rate)?)?;
        let cm = analyzer.mfcc(&read_wav(c, dsp.sample_rate)?)?;
        values.push(mcd(&tm, &cm, align)?);
        ids.push(c.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    }
    let report = McdReport::from_values(values)?;
    let tsv = report.to_tsv(&ids);
    match a.out {
        Some(path) => fs::write(&path, &tsv).map_err(|e| format!("{}: {e}", path.display()))?,
        None => print!("{tsv}"),
    }
    eprintln!(
        "MCD {:.4} dB +/- {:.4} over {} utterances",
        report.mean, report.stddev, report.n_utterances
    );
    Ok(())
}

fn run_bench(a: BenchArgs) -> CliResult<()> {
    let dsp = DspConfig::default();
    let analyzer = Analyzer::new(&dsp)?;
    let spec = CorpusSpec {
        utterance_seconds: a.seconds.unwrap_or(2.0),
        ..CorpusSpec::default()
    };
    let n = a.utterances.unwrap_or(30);
    let repeats = a.repeats.unwrap_or(3);
    let n_phones = a.phones.unwrap_or(spec.phones.len());
    spec.validate()?;
    let utterances: Vec<Waveform> = (0..n)
        .map(|u| {
            let s = u % spec.speakers.len();
            let plan = ppgvc::corpus::utterance_plan(&spec, u);
            ppgvc::corpus::render(&spec, &spec.speakers[s], &plan, ppgvc::corpus::noise_seed(&spec, s, u))
        })
        .collect::<ppgvc::Result<_>>()?;
    let arch = a.arch.apply(ArchConfig::default());
    let seed = a.seed.unwrap_or(0);
    let cascade = CascadeConverter::new(
        Network::new(arch.net1(&dsp, n_phones), seed)?,
        Network::new(arch.net2(&dsp, n_phones), seed + 1)?,
        analyzer.clone(),
    )?;
    let direct = DirectConverter::new(Network::new(arch.net3(&dsp), seed + 2)?, analyzer.clone())?;
    eprintln!("timing {n} utterances of {:.1} s, best of {repeats}", spec.utterance_seconds);
    let net1 = bench("net1", cascade.net1().param_count(), &utterances, repeats, |w| {
        cascade.ppg(&features(&analyzer, w)?).map(|_| ())
    })?;
    let ppgs = utterances
        .iter()
        .map(|w| cascade.ppg(&features(&analyzer, w)?))
        .collect::<ppgvc::Result<Vec<_>>>()?;
    let net2 = bench("net2", cascade.net2().param_count(), &ppgs, repeats, |p| {
        cascade.spectrogram_from_ppg(p).map(|_| ())
    })?;
    let net3 = bench_convert(&direct, &utterances, repeats)?;
    let cascade = bench_convert(&cascade, &utterances, repeats)?;
    let table = LatencyTable {
        net1,
        net2,
        net3,
        cascade,
    };
    print!("{}", table.to_table()?);
    if let Some(path) = a.out {
        fs::write(&path, table.to_tsv()?).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}
