//! Command-line front end: corpus packing, staged training, evaluation,
//! embedding, retrieval and ablations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use biobridge::corpus::{
    corpus_stats, load_corpus_dir, pack_corpus, sample_mixture, write_packs, MixtureSpec, PackedSequence, SamplingMode,
    DEFAULT_MAX_SEQ_LEN,
};
use biobridge::tokenize::{read_fasta, TextVocab, CANONICAL_RESIDUES};
use biobridge::train::eval::generate_answer;
use biobridge::train::{
    eval_task, load_config, run_ablation, run_stage, AblationConfig, Dataset, EvalOptions, Model, ProteinMode,
    RetrievalIndex, RunConfig, Split, Stage, SyntheticTaskSpec, Variant,
};
use biobridge::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "biobridge",
    version,
    about = "Protein-language bridging: packing, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    A,
    B,
    C,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::A => Stage::Dicp,
            StageArg::B => Stage::Align,
            StageArg::C => Stage::EndToEnd,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Stratified,
    Multinomial,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProteinArg {
    Aligned,
    PlainText,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    NoPretraining,
    NoAlignment,
}

#[derive(Subcommand)]
enum Command {
    /// Pack a corpus directory into fixed-window sequences
    Pack {
        /// Directory with manifest.json
        #[arg(long)]
        corpus: PathBuf,
        /// Output JSONL of packs
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_SEQ_LEN)]
        max_seq_len: usize,
        /// Draw this many packs by the mixture instead of writing all packs
        #[arg(long)]
        samples: Option<usize>,
        /// Mixture ratios file (TOML or JSON); defaults to the built-in table
        #[arg(long)]
        mixture: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "stratified")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one training stage
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        config: PathBuf,
        /// Run directory for checkpoint, loss curve and report
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a saved dataset
    Eval {
        /// Dataset JSON written by `synth`
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "aligned")]
        protein_mode: ProteinArg,
        /// Also write the metrics here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print Q-Former latents for every record of a FASTA file as JSONL
    Embed {
        #[arg(long)]
        fasta: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Build a retrieval index from a FASTA file (headers hold descriptions)
    Index {
        #[arg(long)]
        fasta: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Query an index with free text or a FASTA file of proteins
    Retrieve {
        /// Text, or a path to a FASTA file
        #[arg(long)]
        query: String,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Run the ablation and print the comparison table
    Ablate {
        /// Restrict to these variants (repeatable); all by default
        #[arg(long, value_enum)]
        variant: Vec<VariantArg>,
        /// Ablation config (TOML or JSON); built-in defaults otherwise
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/ablation")]
        out: PathBuf,
    },
    /// Generate a synthetic dataset from a task spec
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy answer for one protein
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sequence: String,
        #[arg(long, default_value = "Describe the protein.")]
        question: String,
        #[arg(long, default_value_t = 48)]
        max_new: usize,
        #[arg(long, value_enum, default_value = "aligned")]
        protein_mode: ProteinArg,
    },
}

fn protein_mode(p: ProteinArg) -> ProteinMode {
    match p {
        ProteinArg::Aligned => ProteinMode::Aligned,
        ProteinArg::PlainText => ProteinMode::PlainText,
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn pack(
    corpus: &Path,
    out: &Path,
    max_seq_len: usize,
    samples: Option<usize>,
    mixture: Option<&Path>,
    mode: ModeArg,
    seed: u64,
) -> Result<()> {
    let docs = load_corpus_dir(corpus)?;
    let vocab = TextVocab::default_vocab();
    let packed = pack_corpus(docs, &vocab, max_seq_len)?;
    for s in &packed.skipped {
        log::warn!("skipped document {} ({}): {}", s.doc, s.source, s.reason);
    }
    let packs: Vec<PackedSequence> = match samples {
        Some(n) => {
            let spec: MixtureSpec = match mixture {
                Some(p) => load_config(p)?,
                None => MixtureSpec::default(),
            };
            let mut pools: BTreeMap<_, Vec<PackedSequence>> = BTreeMap::new();
            for p in &packed.packs {
                pools.entry(p.source).or_default().push(p.clone());
            }
            let mode = match mode {
                ModeArg::Stratified => SamplingMode::Stratified,
                ModeArg::Multinomial => SamplingMode::Multinomial,
            };
            sample_mixture(&spec, &pools, n, mode, &mut ChaCha8Rng::seed_from_u64(seed))?
        }
        None => packed.packs,
    };
    write_packs(out, &packs)?;
    let stats = corpus_stats(&packs, vocab.specials().pad);
    if stats.padding_tokens != 0 {
        return Err(Error::Invariant(format!(
            "{} padding tokens in packs",
            stats.padding_tokens
        )));
    }
    print_json(&stats)
}

fn train(stage: Stage, config: &Path, out: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if cfg.stage.stage != stage {
        log::info!(
            "config names stage {}, running {}",
            cfg.stage.stage.as_str(),
            stage.as_str()
        );
        cfg.stage.stage = stage;
    }
    let (_, report) = run_stage(&cfg, out)?;
    print_json(&report)
}

fn eval(task: &Path, ckpt: &Path, split: SplitArg, mode: ProteinArg, out: Option<&Path>) -> Result<()> {
    let ds = Dataset::load(task)?;
    let model = Model::load(ckpt)?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let opts = EvalOptions {
        protein_mode: protein_mode(mode),
        ..EvalOptions::default()
    };
    let report = eval_task(&model, &ds, split, &opts)?;
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    print_json(&report)
}

fn embed(fasta: &Path, ckpt: &Path) -> Result<()> {
    let model = Model::load(ckpt)?;
    for rec in read_fasta(fasta)? {
        let z = model.protein_latent(&rec.sequence)?;
        let rows: Vec<&[f64]> = (0..z.rows()).map(|i| z.row(i)).collect();
        println!("{}", serde_json::json!({ "id": rec.id, "latent": rows }));
    }
    Ok(())
}

fn retrieve(query: &str, index: &Path, k: usize) -> Result<()> {
    let (model, index) = RetrievalIndex::load(index)?;
    if Path::new(query).is_file() {
        let mut out = BTreeMap::new();
        for rec in read_fasta(Path::new(query))? {
            out.insert(rec.id.clone(), index.search_protein(&model, &rec.sequence, k)?);
        }
        print_json(&out)
    } else {
        print_json(&index.search_text(&model, query, k)?)
    }
}

fn ablate(variants: &[VariantArg], config: Option<&Path>, out: &Path) -> Result<()> {
    let mut cfg: AblationConfig = match config {
        Some(p) => load_config(p)?,
        None => AblationConfig::default(),
    };
    if !variants.is_empty() {
        cfg.variants = variants
            .iter()
            .map(|v| match v {
                VariantArg::Full => Variant::Full,
                VariantArg::NoPretraining => Variant::NoPretraining,
                VariantArg::NoAlignment => Variant::NoAlignment,
            })
            .collect();
    }
    let report = run_ablation(&cfg, Some(out))?;
    print!("{}", report.table());
    Ok(())
}

fn synth(spec: &Path, out: &Path) -> Result<()> {
    let spec: SyntheticTaskSpec = load_config(spec)?;
    let ds = biobridge::train::generate_synthetic(&spec)?;
    ds.save(out)?;
    println!(
        "{} train, {} val, {} test -> {}",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        out.display()
    );
    Ok(())
}

fn generate(ckpt: &Path, sequence: &str, question: &str, max_new: usize, mode: ProteinArg) -> Result<()> {
    if let Some(c) = sequence
        .chars()
        .find(|c| !CANONICAL_RESIDUES.contains(c.to_ascii_uppercase()))
    {
        log::warn!("residue {c:?} is not canonical and will be read as X");
    }
    let model = Model::load(ckpt)?;
    let cond = model.conditioning(sequence, protein_mode(mode))?;
    println!("{}", generate_answer(&model, &cond, question, max_new)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pack {
            corpus,
            out,
            max_seq_len,
            samples,
            mixture,
            mode,
            seed,
        } => pack(&corpus, &out, max_seq_len, samples, mixture.as_deref(), mode, seed),
        Command::Train { stage, config, out } => train(stage.into(), &config, &out),
        Command::Eval {
            task,
            ckpt,
            split,
            protein_mode,
            out,
        } => eval(&task, &ckpt, split, protein_mode, out.as_deref()),
        Command::Embed { fasta, ckpt } => embed(&fasta, &ckpt),
        Command::Index { fasta, ckpt, out } => {
            let model = Model::load(&ckpt)?;
            let index = RetrievalIndex::build(&model, &read_fasta(&fasta)?)?;
            index.save(&model, &out)?;
            println!("indexed {} proteins -> {}", index.entries.len(), out.display());
            Ok(())
        }
        Command::Retrieve { query, index, k } => retrieve(&query, &index, k),
        Command::Ablate { variant, config, out } => ablate(&variant, config.as_deref(), &out),
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::Generate {
            ckpt,
            sequence,
            question,
            max_new,
            protein_mode,
        } => generate(&ckpt, &sequence, &question, max_new, protein_mode),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Invariant(_) => 3,
                Error::Config(_) | Error::Parse { .. } => 2,
                _ => 1,
            })
        }
    }
}
