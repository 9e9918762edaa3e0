use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use facret::descriptors::{
    generate_corpus, load_corpus_dir, read_descriptor_file, write_corpus_dir, DescriptorMatrix, SynthCorpusSpec,
};
use facret::eval::{evaluate, sweep_alpha, sweep_bits, sweep_rank, EvalConfig, EvalReport, RankMode};
use facret::factorization::NmfConfig;
use facret::service::{
    build_index, read_index_file, serve, write_index_file, OrderMode, PipelineConfig, RetrievalClient, ServerConfig,
};

#[derive(Parser)]
#[command(name = "facret", version, about = "Factor-loading image retrieval and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus as one descriptor file per image.
    Generate {
        /// e.g. `objects=50,views=5,t=32,n=400,rank=4,sigma=0.05,seed=1`
        #[arg(long, default_value = "")]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Factorize and quantize a corpus into an index file.
    BuildIndex {
        #[arg(long)]
        corpus: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        bits: u8,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long, default_value_t = 0)]
        nmf_seed: u64,
    },
    /// Answer queries against an index over TCP.
    Serve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
    },
    /// Send one descriptor file to a server and print the ranked objects.
    Query {
        #[arg(long)]
        server: String,
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long, default_value_t = 20)]
        eta: u16,
        #[arg(long, default_value_t = 2)]
        alpha: u16,
        #[arg(long, default_value_t = 5)]
        bits: u8,
        #[arg(long)]
        k_max: Option<usize>,
        /// Seconds.
        #[arg(long, default_value_t = 30)]
        timeout: u64,
    },
    /// Leave-one-view-out accuracy of every pipeline.
    Evaluate(EvalArgs),
    /// Combined accuracy across alpha values.
    SweepAlpha {
        #[command(flatten)]
        eval: EvalArgs,
        /// Comma-separated; defaults to 0..=eta.
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<usize>,
    },
    /// Accuracy across quantization rates, plus an unquantized row.
    SweepBits {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,8")]
        bit_grid: Vec<u8>,
    },
    /// Accuracy at fixed model orders, plus the estimated order.
    SweepRank {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        ranks: Vec<usize>,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// A descriptor directory or `synthetic:<spec>`.
    #[arg(long, default_value = "synthetic:")]
    corpus: String,
    #[arg(long, default_value_t = 20)]
    eta: usize,
    #[arg(long, default_value_t = 2)]
    alpha: usize,
    /// Bit rate, or `none` for unquantized loadings.
    #[arg(long, default_value = "5", value_parser = parse_bits)]
    bits: BitRate,
    #[arg(long, default_value_t = 20)]
    top: usize,
    /// JSON-lines report destination.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    query_view: usize,
    /// `estimated` or `fixed(k)`.
    #[arg(long, default_value = "estimated")]
    rank: RankMode,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, default_value_t = 0)]
    nmf_seed: u64,
}

impl EvalArgs {
    fn config(&self) -> EvalConfig {
        EvalConfig {
            eta: self.eta,
            alpha: self.alpha,
            bits: self.bits.0,
            top: self.top,
            query_view: self.query_view,
            rank_mode: self.rank,
            k_max: self.k_max,
            nmf: NmfConfig { seed: self.nmf_seed, ..NmfConfig::default() },
        }
    }
}

#[derive(Clone, Copy)]
struct BitRate(Option<u8>);

fn parse_bits(s: &str) -> Result<BitRate, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(BitRate(None));
    }
    match s.parse::<u8>() {
        Ok(b) if (1..=16).contains(&b) => Ok(BitRate(Some(b))),
        _ => Err(format!("expected 1..=16 or `none`, got {s:?}")),
    }
}

fn load_corpus(source: &str) -> Result<Vec<DescriptorMatrix>> {
    if let Some(spec) = source.strip_prefix("synthetic:") {
        let spec = SynthCorpusSpec::parse(spec)?;
        info!("generating synthetic corpus {spec:?}");
        Ok(generate_corpus(&spec)?)
    } else {
        let dir = Path::new(source);
        let corpus = load_corpus_dir(dir).with_context(|| format!("reading corpus {}", dir.display()))?;
        if corpus.is_empty() {
            bail!("no descriptor files in {}", dir.display());
        }
        Ok(corpus)
    }
}

fn finish_report(report: EvalReport, out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        report.write_jsonl(BufWriter::new(file))?;
        info!("report written to {}", path.display());
    }
    println!("{}", report.summary_table());
    report.check_invariants()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { spec, out } => {
            let spec = SynthCorpusSpec::parse(&spec)?;
            let corpus = generate_corpus(&spec)?;
            std::fs::create_dir_all(&out)?;
            write_corpus_dir(&out, &corpus)?;
            println!("wrote {} images to {}", corpus.len(), out.display());
        }
        Command::BuildIndex { corpus, out, bits, k_max, nmf_seed } => {
            let corpus = load_corpus(&corpus)?;
            let config = PipelineConfig {
                order: OrderMode::Estimated { k_max },
                nmf: NmfConfig { seed: nmf_seed, ..NmfConfig::default() },
                bits: Some(bits),
            };
            let index = build_index(&corpus, &config)?;
            write_index_file(&out, &index)?;
            let mean_k = index.iter().map(|i| i.k_star as f64).sum::<f64>() / index.len() as f64;
            println!(
                "indexed {} images of {} objects, mean model order {mean_k:.3}, written to {}",
                index.len(),
                index.object_count(),
                out.display()
            );
        }
        Command::Serve { index, listen } => {
            let index = read_index_file(&index).with_context(|| format!("loading index {}", index.display()))?;
            let handle = serve(Arc::new(index), listen.as_str(), ServerConfig::default())?;
            println!("listening on {}", handle.local_addr());
            handle.wait();
        }
        Command::Query { server, descriptors, eta, alpha, bits, k_max, timeout } => {
            let m = read_descriptor_file(&descriptors)?;
            let addr: SocketAddr = server.parse().with_context(|| format!("bad server address {server:?}"))?;
            let config = PipelineConfig { order: OrderMode::Estimated { k_max }, ..PipelineConfig::default() };
            let mut client = RetrievalClient::connect(addr, Duration::from_secs(timeout))?;
            let list = client.query(&m, eta, alpha, bits, &config)?;
            for (rank, entry) in list.entries.iter().enumerate() {
                println!("{}\t{}\t{:.6}", rank + 1, entry.object_id, entry.score);
            }
        }
        Command::Evaluate(args) => {
            let corpus = load_corpus(&args.corpus)?;
            let report = evaluate(&corpus, &args.corpus, &args.config())?;
            finish_report(report, args.out.as_deref())?;
        }
        Command::SweepAlpha { eval, alphas } => {
            let corpus = load_corpus(&eval.corpus)?;
            let alphas = if alphas.is_empty() { (0..=eval.eta).collect() } else { alphas };
            let report = sweep_alpha(&corpus, &eval.corpus, &eval.config(), &alphas)?;
            finish_report(report, eval.out.as_deref())?;
        }
        Command::SweepBits { eval, bit_grid } => {
            let corpus = load_corpus(&eval.corpus)?;
            let report = sweep_bits(&corpus, &eval.corpus, &eval.config(), &bit_grid)?;
            finish_report(report, eval.out.as_deref())?;
        }
        Command::SweepRank { eval, ranks } => {
            let corpus = load_corpus(&eval.corpus)?;
            let report = sweep_rank(&corpus, &eval.corpus, &eval.config(), &ranks)?;
            finish_report(report, eval.out.as_deref())?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(err) = run(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
