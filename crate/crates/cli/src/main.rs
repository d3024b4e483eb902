mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use scanquery::engine::{Engine, IndexSpec, QueryHit, QuerySource, QuerySpec};
use scanquery::eval::{
    mnss_experiment, nard_report, recall_experiment, snms_experiment, synth_world, templates_experiment,
    ExperimentReport, LearnedScorer, MixtureParams, MnssParams, NardParams, RawScanScorer, RecallParams,
    ScannerModel, SnmsParams, SynthParams, TemplateNoise, TemplatesParams,
};
use scanquery::inference::{
    decoder_spec, encoder_spec, he_initialized, similarity_spec, Encoder, NetworkRole, SimilarityNet, WeightBundle,
};
use scanquery::scan::{read_scans, write_scans, AngularWindow};
use scanquery::store::EpsilonParams;

use config::{CliConfig, Overrides, Settings};

#[derive(Parser, Debug)]
#[command(name = "scanquery", version, about = "Similarity search over 2D LiDAR scan logs")]
struct Cli {
    /// TOML config file. Flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Store directory [default: ./scanquery-store]
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Encoder weight file
    #[arg(long, global = true)]
    encoder: Option<PathBuf>,
    /// Decoder weight file
    #[arg(long, global = true)]
    decoder: Option<PathBuf>,
    /// Similarity network weight file
    #[arg(long, global = true)]
    similarity: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Append scans from a JSON-lines file to the store
    Ingest {
        /// One scan per line
        file: PathBuf,
    },
    /// Build the neighbor graph over the stored embeddings
    Index(IndexArgs),
    /// Retrieve the top-k stored scans for a query scan
    Query(QueryArgs),
    /// Run an evaluation experiment and write its report
    Experiment(ExperimentArgs),
    /// Write a synthetic corpus as JSON-lines scans
    Synth(SynthArgs),
    /// Serve the HTTP API
    Serve {
        /// Port on 127.0.0.1; overridden by --bind
        #[arg(long)]
        port: Option<u16>,
        /// Full listen address [default: 127.0.0.1:8080]
        #[arg(long)]
        bind: Option<String>,
    },
    /// Write the rasterized bitmap of a stored scan as PNG
    Render {
        #[arg(long)]
        scan_id: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write freshly initialized encoder, decoder and similarity weights
    InitWeights {
        #[arg(long)]
        out_dir: PathBuf,
        /// Raster side in pixels, a multiple of 16
        #[arg(long, default_value_t = 256)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false, id = "threshold")]
struct IndexThreshold {
    /// Fixed neighbor radius
    #[arg(long)]
    epsilon: Option<f64>,
    /// Estimate the radius by probing the decoder
    #[arg(long)]
    auto: bool,
}

#[derive(Args, Debug)]
struct IndexArgs {
    #[command(flatten)]
    threshold: IndexThreshold,
    /// Origins sampled for --auto [default: 64]
    #[arg(long, requires = "auto")]
    samples: Option<usize>,
    /// Directions per origin for --auto [default: 8]
    #[arg(long, requires = "auto")]
    directions: Option<usize>,
    /// Seed for --auto [default: 0]
    #[arg(long, requires = "auto")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false, id = "source")]
struct SourceArgs {
    /// File holding the query scan as a single JSON line
    #[arg(long)]
    scan_file: Option<PathBuf>,
    /// Use a stored scan as the query
    #[arg(long)]
    scan_id: Option<u64>,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Restrict the query to beams in [START, START+SPAN), radians
    #[arg(long, num_args = 2, value_names = ["START", "SPAN"], allow_negative_numbers = true)]
    window: Option<Vec<f64>>,
    /// Results to return [default: 10]
    #[arg(long)]
    k: Option<usize>,
    /// Evaluation budget [default: all records]
    #[arg(long)]
    t: Option<usize>,
    /// Seed for the random restart order [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum ScorerKind {
    /// Beam-wise range differences on the raw scans
    Raw,
    /// Encoder embeddings scored by the similarity network
    Learned,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum Fov {
    #[value(name = "270")]
    Deg270,
    #[value(name = "360")]
    Deg360,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Synthetic episodes [default: 20]
    #[arg(long)]
    episodes: Option<usize>,
    /// Scans per episode [default: 25]
    #[arg(long)]
    scans_per_episode: Option<usize>,
    /// Scanner field of view in degrees
    #[arg(long, value_enum, default_value = "270")]
    fov: Fov,
}

impl CorpusArgs {
    fn params(&self) -> SynthParams {
        let d = SynthParams::default();
        SynthParams {
            episodes: self.episodes.unwrap_or(d.episodes),
            scans_per_episode: self.scans_per_episode.unwrap_or(d.scans_per_episode),
            scanner: match self.fov {
                Fov::Deg270 => ScannerModel::fov_270(),
                Fov::Deg360 => ScannerModel::fov_360(),
            },
            ..d
        }
    }
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(subcommand)]
    kind: ExperimentKind,
    /// Report path; `.jsonl`, `.summary.txt` and `.curves.csv` are derived from its stem
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Scoring function for the scan protocols
    #[arg(long, global = true, value_enum, default_value = "raw")]
    scorer: ScorerKind,
}

#[derive(Subcommand, Debug)]
enum ExperimentKind {
    /// Rank correlation under increasing rotation of one scan
    Mnss {
        /// Rotation magnitudes [default: 50]
        #[arg(long)]
        levels: Option<usize>,
        /// [default: 50]
        #[arg(long)]
        k: Option<usize>,
        /// [default: 10]
        #[arg(long)]
        queries: Option<usize>,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Rank correlation between a scan and its rotated copy
    Snms {
        /// [default: 50]
        #[arg(long)]
        k: Option<usize>,
        /// [default: 10]
        #[arg(long)]
        queries: Option<usize>,
        /// Rotation in radians [default: drawn from (0, pi/4)]
        #[arg(long)]
        theta: Option<f64>,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Fraction of same-type episodes reached by the top-k
    Recall {
        /// [default: 10]
        #[arg(long)]
        k: Option<usize>,
        /// [default: 50]
        #[arg(long)]
        queries: Option<usize>,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Recall of template fragments injected into host scans
    Templates {
        /// Hosts per template [default: 50]
        #[arg(long)]
        injections: Option<usize>,
        /// [default: 200]
        #[arg(long)]
        k: Option<usize>,
        /// Range noise in meters; enables rotation noise too
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Largest rotation noise in radians [default: 0.1 with --noise-sigma]
        #[arg(long, requires = "noise_sigma")]
        noise_rotation: Option<f64>,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Residual curves of graph-guided evaluation against random order
    Nard {
        /// Synthetic embeddings [default: 10000]
        #[arg(long)]
        records: Option<usize>,
        /// [default: 100]
        #[arg(long)]
        queries: Option<usize>,
        /// [default: 10]
        #[arg(long)]
        k: Option<usize>,
        /// Evaluation budget [default: all records]
        #[arg(long)]
        t: Option<usize>,
        /// Target mean neighbor count used to pick the radius [default: 12]
        #[arg(long)]
        degree: Option<usize>,
        /// Mixture clusters [default: 8]
        #[arg(long)]
        clusters: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scan output, one JSON line per scan
    #[arg(long)]
    out: PathBuf,
    /// Also write the episode labels as JSON
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    corpus: CorpusArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    let flags = Overrides {
        store: cli.store,
        encoder: cli.encoder,
        decoder: cli.decoder,
        similarity: cli.similarity,
    };
    let settings = Settings::resolve(file, flags);
    match cli.command {
        Command::Ingest { file } => ingest(&settings, &file),
        Command::Index(args) => index(&settings, args),
        Command::Query(args) => query(&settings, args),
        Command::Experiment(args) => experiment(&settings, args),
        Command::Synth(args) => synth(args),
        Command::Serve { port, bind } => serve(&settings, port, bind),
        Command::Render { scan_id, out } => {
            let engine = open(&settings)?;
            std::fs::write(&out, engine.render(scan_id)?).with_context(|| format!("writing {}", out.display()))?;
            Ok(())
        }
        Command::InitWeights { out_dir, side, seed } => init_weights(&out_dir, side, seed),
    }
}

fn open(s: &Settings) -> anyhow::Result<Engine> {
    Ok(Engine::open(&s.store, &s.weights)?)
}

fn ingest(s: &Settings, path: &Path) -> anyhow::Result<()> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let scans = read_scans(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    let mut engine = open(s)?;
    let ids = engine.ingest(scans)?;
    match (ids.first(), ids.last()) {
        (Some(a), Some(b)) => println!("ingested {} scans, ids {a}..={b}", ids.len()),
        _ => println!("ingested 0 scans"),
    }
    Ok(())
}

fn index(s: &Settings, args: IndexArgs) -> anyhow::Result<()> {
    let spec = match args.threshold.epsilon {
        Some(e) if !(e.is_finite() && e >= 0.0) => bail!("epsilon must be a non-negative number, got {e}"),
        Some(e) => IndexSpec::Epsilon(e),
        None => {
            let d = EpsilonParams::default();
            IndexSpec::Auto(EpsilonParams {
                samples: args.samples.unwrap_or(d.samples),
                directions: args.directions.unwrap_or(d.directions),
                seed: args.seed.unwrap_or(d.seed),
                ..d
            })
        }
    };
    let mut engine = open(s)?;
    let info = engine.build_index(&spec)?;
    println!(
        "epsilon {} nodes {} edges {} max_degree {}",
        info.epsilon, info.nodes, info.edges, info.max_degree
    );
    Ok(())
}

fn query(s: &Settings, args: QueryArgs) -> anyhow::Result<()> {
    let source = match (args.source.scan_file, args.source.scan_id) {
        (Some(path), _) => {
            let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            let mut scans = read_scans(BufReader::new(f))?;
            if scans.len() != 1 {
                bail!("{} holds {} scans, expected exactly one", path.display(), scans.len());
            }
            QuerySource::Scan(scans.remove(0))
        }
        (None, Some(id)) => QuerySource::ScanId(id),
        (None, None) => unreachable!("clap enforces a query source"),
    };
    let window = match args.window.as_deref() {
        Some(&[start, span]) => Some(AngularWindow::new(start, span).map_err(scanquery::engine::EngineError::from)?),
        _ => None,
    };
    let spec = QuerySpec {
        source,
        window,
        k: args.k.unwrap_or(s.k),
        t: args.t.or(s.t),
        seed: args.seed.unwrap_or(s.seed),
    };
    let engine = open(s)?;
    let outcome = engine.query(&spec)?;
    match args.out {
        Some(path) => {
            let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(BufWriter::new(f), &outcome.hits)?;
        }
        None => write_csv(std::io::stdout().lock(), &outcome.hits)?,
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_csv<W: Write>(mut out: W, hits: &[QueryHit]) -> std::io::Result<()> {
    writeln!(out, "rank,id,score,timestamp_us,deployment_id,seq")?;
    for (i, h) in hits.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            i + 1,
            h.id,
            h.score,
            h.timestamp_us,
            csv_field(&h.deployment_id),
            h.seq
        )?;
    }
    out.flush()
}

fn learned_scorer(s: &Settings) -> anyhow::Result<LearnedScorer> {
    let load = |p: &Option<PathBuf>, what: &str| -> anyhow::Result<WeightBundle> {
        let p = p.as_ref().with_context(|| format!("--scorer learned needs {what} weights (--{what})"))?;
        WeightBundle::load(p).with_context(|| format!("loading {}", p.display()))
    };
    Ok(LearnedScorer {
        encoder: Encoder::new(load(&s.weights.encoder, "encoder")?)?,
        similarity: SimilarityNet::new(load(&s.weights.similarity, "similarity")?)?,
    })
}

fn experiment(s: &Settings, args: ExperimentArgs) -> anyhow::Result<()> {
    let out = args.out.context("experiment needs --out REPORT")?;
    let seed = args.seed;
    let report = match args.scorer {
        ScorerKind::Raw => run_experiment(args.kind, &RawScanScorer, "raw", seed)?,
        ScorerKind::Learned => run_experiment(args.kind, &learned_scorer(s)?, "learned", seed)?,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let written = report.write_files(&out)?;
    print!("{}", report.summary_table());
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn run_experiment<S: scanquery::eval::ScanScorer + Sync>(
    kind: ExperimentKind,
    scorer: &S,
    name: &str,
    seed: u64,
) -> anyhow::Result<ExperimentReport> {
    let report = match kind {
        ExperimentKind::Mnss { levels, k, queries, corpus } => {
            let d = MnssParams::default();
            let p = MnssParams {
                levels: levels.unwrap_or(d.levels),
                k: k.unwrap_or(d.k),
                queries: queries.unwrap_or(d.queries),
                corpus: corpus.params(),
            };
            mnss_experiment(&p, scorer, name, seed)?
        }
        ExperimentKind::Snms { k, queries, theta, corpus } => {
            let d = SnmsParams::default();
            let p = SnmsParams {
                k: k.unwrap_or(d.k),
                queries: queries.unwrap_or(d.queries),
                theta,
                corpus: corpus.params(),
            };
            snms_experiment(&p, scorer, name, seed)?
        }
        ExperimentKind::Recall { k, queries, corpus } => {
            let d = RecallParams::default();
            let p = RecallParams {
                k: k.unwrap_or(d.k),
                queries: queries.unwrap_or(d.queries),
                corpus: corpus.params(),
            };
            recall_experiment(&p, scorer, name, seed)?
        }
        ExperimentKind::Templates { injections, k, noise_sigma, noise_rotation, corpus } => {
            let d = TemplatesParams::default();
            let p = TemplatesParams {
                injections_per_template: injections.unwrap_or(d.injections_per_template),
                k: k.unwrap_or(d.k),
                noise: noise_sigma
                    .map(|sigma| TemplateNoise { sigma, max_rotation: noise_rotation.unwrap_or(0.1) })
                    .or(d.noise),
                corpus: corpus.params(),
            };
            templates_experiment(&p, scorer, name, seed)?
        }
        ExperimentKind::Nard { records, queries, k, t, degree, clusters } => {
            let d = NardParams::default();
            let p = NardParams {
                records: records.unwrap_or(d.records),
                mixture: MixtureParams {
                    clusters: clusters.unwrap_or(d.mixture.clusters),
                    ..d.mixture
                },
                queries: queries.unwrap_or(d.queries),
                k: k.unwrap_or(d.k),
                t,
                degree: degree.unwrap_or(d.degree),
            };
            nard_report(&p, seed)?
        }
    };
    Ok(report)
}

fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let corpus = synth_world(&args.corpus.params(), args.seed);
    let f = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = BufWriter::new(f);
    write_scans(&mut w, &corpus.scans)?;
    w.flush()?;
    if let Some(path) = args.labels {
        let json = serde_json::to_string_pretty(&corpus.episodes)?;
        std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {} scans in {} episodes", corpus.scans.len(), corpus.episodes.len());
    Ok(())
}

fn serve(s: &Settings, port: Option<u16>, bind: Option<String>) -> anyhow::Result<()> {
    let addr: SocketAddr = match (bind, port) {
        (Some(b), _) => b.parse().with_context(|| format!("bad --bind address {b}"))?,
        (None, Some(p)) => SocketAddr::from(([127, 0, 0, 1], p)),
        (None, None) => s.bind.parse().with_context(|| format!("bad bind address {}", s.bind))?,
    };
    let engine = open(s)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    eprintln!("listening on http://{addr}");
    rt.block_on(scanquery_service::serve(engine, addr))?;
    Ok(())
}

fn init_weights(dir: &Path, side: usize, seed: u64) -> anyhow::Result<()> {
    if side == 0 || !side.is_multiple_of(16) {
        bail!("--side must be a positive multiple of 16, got {side}");
    }
    std::fs::create_dir_all(dir)?;
    let nets = [
        (NetworkRole::Encoder, encoder_spec(side), "encoder.l2vw"),
        (NetworkRole::Decoder, decoder_spec(side), "decoder.l2vw"),
        (NetworkRole::Similarity, similarity_spec(), "similarity.l2vw"),
    ];
    for (i, (role, spec, name)) in nets.into_iter().enumerate() {
        let path = dir.join(name);
        he_initialized(role, &spec, seed.wrapping_add(i as u64))?.save(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
