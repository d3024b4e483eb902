//! The engine behind the CLI and HTTP service: a store directory plus the
//! three networks. Every front end delegates here so that identical
//! parameters give identical answers.
//!
//! Besides the record and graph files, the store directory keeps
//! `scans.jsonl`, the original scans in interchange form, one line per id.
//! Rendering and window queries need them; embeddings alone cannot be
//! restricted to an angular window.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::inference::{Decoder, Encoder, InferenceError, LatentVector, SimilarityNet, WeightBundle};
use crate::query::{evaluate, QueryError, QueryRequest, QueryTrace, TopKResult};
use crate::scan::{rasterize, read_scans, restrict_fov, scan_to_line, AngularWindow, LaserScan, RasterConfig, ScanError};
use crate::store::{build_graph, estimate_epsilon, EmbedStore, EpsilonGraph, EpsilonParams, LatentDecoder, RecordMeta, StoreError, StoreSnapshot};
use crate::util::par_map;

pub const SCANS_FILE: &str = "scans.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("index missing: build it before querying")]
    IndexMissing,
    #[error("index stale: built over {built} records, store now holds {current}; rebuild it")]
    IndexStale { built: u64, current: u64 },
    #[error("unknown scan id {0}")]
    UnknownId(u64),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("{0} weights not configured")]
    WeightsMissing(&'static str),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Scan(ScanError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Query(QueryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ScanError> for EngineError {
    fn from(e: ScanError) -> Self {
        match e {
            ScanError::InvalidWindow(m) => EngineError::InvalidWindow(m),
            ScanError::Domain(m) => EngineError::InvalidWindow(m),
            other => EngineError::Scan(other),
        }
    }
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownId(id) => EngineError::UnknownId(id),
            StoreError::DecoderMissing => EngineError::WeightsMissing("decoder"),
            other => EngineError::Store(other),
        }
    }
}

impl From<QueryError> for EngineError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::ZeroK | QueryError::ZeroT => EngineError::InvalidRequest(e.to_string()),
            other => EngineError::Query(other),
        }
    }
}

impl EngineError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::IndexMissing => "index_missing",
            EngineError::IndexStale { .. } => "index_stale",
            EngineError::UnknownId(_) => "unknown_id",
            EngineError::InvalidWindow(_) => "invalid_window",
            EngineError::WeightsMissing(_) => "weights_missing",
            EngineError::InvalidRequest(_) => "invalid_request",
            EngineError::Scan(_) => "invalid_scan",
            EngineError::Inference(_) => "inference_error",
            EngineError::Store(_) => "store_error",
            EngineError::Query(_) => "query_error",
            EngineError::Io(_) => "io_error",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightPaths {
    pub encoder: Option<PathBuf>,
    pub decoder: Option<PathBuf>,
    pub similarity: Option<PathBuf>,
}

/// Where the query scan comes from, and an optional angular restriction.
#[derive(Debug, Clone, PartialEq)]
pub enum QuerySource {
    Scan(LaserScan),
    ScanId(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub source: QuerySource,
    pub window: Option<AngularWindow>,
    pub k: usize,
    pub t: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryHit {
    pub id: u64,
    pub score: f64,
    pub timestamp_us: u64,
    pub deployment_id: String,
    pub seq: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub result: TopKResult,
    pub hits: Vec<QueryHit>,
    pub trace: QueryTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IndexSpec {
    Epsilon(f64),
    Auto(EpsilonParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexInfo {
    pub epsilon: f64,
    pub nodes: usize,
    pub edges: usize,
    pub max_degree: usize,
    pub store_version: u64,
}

impl IndexInfo {
    fn of(g: &EpsilonGraph) -> Self {
        Self {
            epsilon: g.epsilon(),
            nodes: g.node_count(),
            edges: g.edge_count(),
            max_degree: g.max_degree(),
            store_version: g.store_version(),
        }
    }
}

pub struct Engine {
    store: EmbedStore,
    scans: Vec<LaserScan>,
    scan_out: BufWriter<File>,
    encoder: Option<Encoder>,
    decoder: Option<Decoder>,
    similarity: Option<SimilarityNet>,
    graph: Option<Arc<EpsilonGraph>>,
}

fn load<T>(
    path: &Option<PathBuf>,
    wrap: impl Fn(WeightBundle) -> Result<T, InferenceError>,
) -> Result<Option<T>, EngineError> {
    match path {
        None => Ok(None),
        Some(p) => Ok(Some(wrap(WeightBundle::load(p)?)?)),
    }
}

impl Engine {
    /// Opens (or creates) the store at `dir` and loads the configured weights.
    pub fn open(dir: impl AsRef<Path>, weights: &WeightPaths) -> Result<Self, EngineError> {
        let store = EmbedStore::open(dir.as_ref())?;
        let scan_path = store.dir().join(SCANS_FILE);
        let scans = if scan_path.exists() {
            read_scans(BufReader::new(File::open(&scan_path)?))?
        } else {
            Vec::new()
        };
        if scans.len() != store.len() {
            return Err(StoreError::Corrupt(format!(
                "{} archived scans for {} records",
                scans.len(),
                store.len()
            ))
            .into());
        }
        let scan_out = BufWriter::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&scan_path)?,
        );
        let graph_path = store.graph_path();
        let graph = if graph_path.exists() {
            Some(Arc::new(EpsilonGraph::load(&graph_path)?))
        } else {
            None
        };
        Ok(Self {
            store,
            scans,
            scan_out,
            encoder: load(&weights.encoder, Encoder::new)?,
            decoder: load(&weights.decoder, Decoder::new)?,
            similarity: load(&weights.similarity, SimilarityNet::new)?,
            graph,
        })
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        self.store.snapshot()
    }

    pub fn graph(&self) -> Option<&Arc<EpsilonGraph>> {
        self.graph.as_ref()
    }

    pub fn scan(&self, id: u64) -> Result<&LaserScan, EngineError> {
        usize::try_from(id)
            .ok()
            .and_then(|i| self.scans.get(i))
            .ok_or(EngineError::UnknownId(id))
    }

    fn encoder(&self) -> Result<&Encoder, EngineError> {
        self.encoder.as_ref().ok_or(EngineError::WeightsMissing("encoder"))
    }

    /// Raster geometry used for embedding and rendering.
    pub fn raster_config(&self) -> RasterConfig {
        self.encoder
            .as_ref()
            .map_or_else(RasterConfig::default, Encoder::raster_config)
    }

    /// Rasterizes and encodes a scan, returning the mean vector.
    pub fn embed(&self, scan: &LaserScan) -> Result<LatentVector, EngineError> {
        let enc = self.encoder()?;
        let bitmap = rasterize(scan, &enc.raster_config())?;
        Ok(enc.encode(&bitmap)?.mu)
    }

    /// Embeds and stores the scans; returns their ids. Any existing index
    /// becomes stale.
    pub fn ingest(&mut self, scans: Vec<LaserScan>) -> Result<Vec<u64>, EngineError> {
        let vectors: Vec<LatentVector> = par_map(&scans, |s| self.embed(s))
            .into_iter()
            .collect::<Result<_, _>>()?;
        let mut ids = Vec::with_capacity(scans.len());
        for (scan, v) in scans.into_iter().zip(vectors) {
            let meta = scan.meta();
            let id = self.store.insert(
                v,
                RecordMeta {
                    timestamp_us: meta.timestamp_us,
                    deployment_id: meta.deployment_id.clone(),
                    seq: meta.seq,
                },
            )?;
            writeln!(self.scan_out, "{}", scan_to_line(&scan))?;
            self.scans.push(scan);
            ids.push(id);
        }
        self.scan_out.flush()?;
        self.store.flush()?;
        Ok(ids)
    }

    /// Builds the neighbor graph and writes it next to the store.
    pub fn build_index(&mut self, spec: &IndexSpec) -> Result<IndexInfo, EngineError> {
        let snapshot = self.store.snapshot();
        let epsilon = match spec {
            IndexSpec::Epsilon(e) => *e,
            IndexSpec::Auto(params) => {
                let dec = self.decoder.as_ref().map(|d| d as &dyn LatentDecoder);
                estimate_epsilon(&snapshot, dec, params)?
            }
        };
        let graph = build_graph(&snapshot, epsilon)?;
        graph.save(self.store.graph_path())?;
        let info = IndexInfo::of(&graph);
        self.graph = Some(Arc::new(graph));
        Ok(info)
    }

    pub fn index_info(&self) -> Option<IndexInfo> {
        self.graph.as_deref().map(IndexInfo::of)
    }

    fn current_graph(&self) -> Result<Arc<EpsilonGraph>, EngineError> {
        let g = self.graph.as_ref().ok_or(EngineError::IndexMissing)?;
        let current = self.store.len() as u64;
        if g.store_version() != current {
            return Err(EngineError::IndexStale {
                built: g.store_version(),
                current,
            });
        }
        Ok(Arc::clone(g))
    }

    /// The query vector for a spec: the scan, restricted to the window if
    /// one is given, rasterized and encoded.
    pub fn query_vector(&self, spec: &QuerySpec) -> Result<LatentVector, EngineError> {
        let base = match &spec.source {
            QuerySource::Scan(s) => s,
            QuerySource::ScanId(id) => self.scan(*id)?,
        };
        match &spec.window {
            None => self.embed(base),
            Some(w) => self.embed(&restrict_fov(base, w)?),
        }
    }

    pub fn query(&self, spec: &QuerySpec) -> Result<QueryOutcome, EngineError> {
        let graph = self.current_graph()?;
        let sim = self
            .similarity
            .as_ref()
            .ok_or(EngineError::WeightsMissing("similarity"))?;
        if spec.k == 0 {
            return Err(EngineError::InvalidRequest("k must be at least 1".into()));
        }
        let q = self.query_vector(spec)?;
        let mut req = QueryRequest::new(q, spec.k).with_seed(spec.seed);
        req.t = spec.t;
        let snapshot = self.store.snapshot();
        let (result, trace) = evaluate(&req, &snapshot, &graph, sim)?;
        let hits = result
            .items
            .iter()
            .map(|s| {
                let r = snapshot.get(s.id).expect("result ids come from the snapshot");
                QueryHit {
                    id: s.id,
                    score: s.score,
                    timestamp_us: r.timestamp_us,
                    deployment_id: r.deployment_id.clone(),
                    seq: r.seq,
                }
            })
            .collect();
        Ok(QueryOutcome { result, hits, trace })
    }

    /// PNG of the stored scan's bitmap (0 black, 1 white).
    pub fn render(&self, id: u64) -> Result<Vec<u8>, EngineError> {
        let scan = self.scan(id)?;
        Ok(rasterize(scan, &self.raster_config())?.to_png())
    }
}
