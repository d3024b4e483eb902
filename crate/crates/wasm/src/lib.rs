//! In-browser demo over a synthetic corpus. Everything runs on raw scans, so
//! no weight files are needed.
//!
//! The exported surface is small: [`Demo`] renders a scan with an angular
//! window highlighted and runs window-restricted top-k queries, and
//! [`nard_curves`] computes residual curves for graph-guided evaluation
//! against a random-order pass.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use scanquery::eval::{
    nard_report, prepare_all, synth_world, top_k, EpisodeLabel, MixtureParams, NardParams, RawScanScorer, ScanQuery,
    ScanScorer, ScannerModel, SynthParams,
};
use scanquery::scan::{apply_rotation, rasterize, restrict_fov, AngularWindow, LaserScan, RasterConfig};

pub const RASTER_SIDE: usize = 128;
const RASTER_SPAN: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub rank: usize,
    pub index: u64,
    pub score: f64,
    pub location_type: String,
    pub same_episode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curves {
    pub fraction: Vec<f64>,
    pub evaluate: Vec<f64>,
    pub baseline: Vec<f64>,
    pub auc_evaluate: f64,
    pub auc_baseline: f64,
    pub epsilon: f64,
}

#[wasm_bindgen]
pub struct Demo {
    scans: Vec<LaserScan>,
    episodes: Vec<EpisodeLabel>,
    prepared: Vec<LaserScan>,
    raster: RasterConfig,
}

fn window(scan: &LaserScan, start: f64, span: f64) -> Result<Option<AngularWindow>, String> {
    if span <= 0.0 || span >= scan.fov() {
        return Ok(None);
    }
    AngularWindow::new(start, span).map(Some).map_err(|e| e.to_string())
}

impl Demo {
    pub fn generate(seed: u64, episodes: usize, scans_per_episode: usize) -> Result<Demo, String> {
        if episodes == 0 || scans_per_episode == 0 {
            return Err("need at least one episode and one scan per episode".into());
        }
        let params = SynthParams {
            episodes,
            scans_per_episode,
            scanner: ScannerModel::fov_360().with_beams(360),
            ..SynthParams::default()
        };
        let corpus = synth_world(&params, seed);
        let prepared = prepare_all(&RawScanScorer, &corpus.scans).map_err(|e| e.to_string())?;
        Ok(Demo {
            scans: corpus.scans,
            episodes: corpus.episodes,
            prepared,
            raster: RasterConfig::centered(RASTER_SIDE, RASTER_SPAN),
        })
    }

    fn view(&self, index: usize, rotation: f64) -> Result<LaserScan, String> {
        let scan = self
            .scans
            .get(index)
            .ok_or_else(|| format!("no scan {index}; corpus holds {}", self.scans.len()))?;
        Ok(apply_rotation(scan, rotation))
    }

    fn episode(&self, id: u64) -> Option<&EpisodeLabel> {
        self.episodes.iter().find(|e| e.contains(id))
    }

    /// One byte per pixel, row-major: 0 empty, 1 hit by a beam outside the
    /// window, 2 hit by a beam inside it.
    pub fn render_cells(&self, index: usize, rotation: f64, start: f64, span: f64) -> Result<Vec<u8>, String> {
        let scan = self.view(index, rotation)?;
        let full = rasterize(&scan, &self.raster).map_err(|e| e.to_string())?;
        let Some(w) = window(&scan, start, span)? else {
            return Ok(full.cells().iter().map(|&c| c * 2).collect());
        };
        let part = restrict_fov(&scan, &w).map_err(|e| e.to_string())?;
        let inside = rasterize(&part, &self.raster).map_err(|e| e.to_string())?;
        Ok(full.cells().iter().zip(inside.cells()).map(|(&a, &b)| a + b).collect())
    }

    /// Top-k over the whole corpus for the rotated, windowed scan.
    pub fn search(&self, index: usize, rotation: f64, start: f64, span: f64, k: usize) -> Result<Vec<Hit>, String> {
        let scan = self.view(index, rotation)?;
        let q = match window(&scan, start, span)? {
            Some(w) => {
                let part = restrict_fov(&scan, &w).map_err(|e| e.to_string())?;
                RawScanScorer.prepare_query(ScanQuery::Fragment(&part))
            }
            None => RawScanScorer.prepare_query(ScanQuery::Whole(&scan)),
        }
        .map_err(|e| e.to_string())?;
        let result = top_k(&RawScanScorer, &q, &self.prepared, k).map_err(|e| e.to_string())?;
        let own = self.episode(index as u64);
        Ok(result
            .items
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let ep = self.episode(s.id);
                Hit {
                    rank: i + 1,
                    index: s.id,
                    score: s.score,
                    location_type: ep.map(|e| e.location_type.clone()).unwrap_or_default(),
                    same_episode: ep.is_some() && ep == own,
                }
            })
            .collect())
    }
}

/// Mean residual curves over `queries` clustered-embedding queries.
pub fn compute_curves(records: usize, queries: usize, k: usize, clusters: usize, seed: u64) -> Result<Curves, String> {
    let p = NardParams {
        records,
        mixture: MixtureParams { clusters, ..MixtureParams::default() },
        queries,
        k,
        t: None,
        degree: NardParams::default().degree,
    };
    let report = nard_report(&p, seed).map_err(|e| e.to_string())?;
    let cmp = report.curves.ok_or("report has no curves")?;
    let span = cmp.evaluate.t.last().copied().unwrap_or(1).max(1) as f64;
    Ok(Curves {
        fraction: cmp.evaluate.t.iter().map(|&t| t as f64 / span).collect(),
        evaluate: cmp.evaluate.mean,
        baseline: cmp.baseline.mean,
        auc_evaluate: cmp.evaluate.auc,
        auc_baseline: cmp.baseline.auc,
        epsilon: report.parameters["epsilon"].as_f64().unwrap_or(f64::NAN),
    })
}

fn js_err(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, episodes: usize, scans_per_episode: usize) -> Result<Demo, JsError> {
        Demo::generate(seed.into(), episodes, scans_per_episode).map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn count(&self) -> usize {
        self.scans.len()
    }

    #[wasm_bindgen(getter)]
    pub fn side(&self) -> usize {
        self.raster.side_px
    }

    #[wasm_bindgen(js_name = locationType)]
    pub fn location_type(&self, index: usize) -> String {
        self.episode(index as u64).map(|e| e.location_type.clone()).unwrap_or_default()
    }

    /// See [`Demo::render_cells`].
    pub fn render(&self, index: usize, rotation: f64, start: f64, span: f64) -> Result<Vec<u8>, JsError> {
        self.render_cells(index, rotation, start, span).map_err(js_err)
    }

    /// JSON array of hits.
    pub fn query(&self, index: usize, rotation: f64, start: f64, span: f64, k: usize) -> Result<String, JsError> {
        let hits = self.search(index, rotation, start, span, k).map_err(js_err)?;
        serde_json::to_string(&hits).map_err(|e| js_err(e.to_string()))
    }
}

/// JSON object with `fraction`, `evaluate` and `baseline` arrays plus both areas.
#[wasm_bindgen]
pub fn nard_curves(records: usize, queries: usize, k: usize, clusters: usize, seed: u32) -> Result<String, JsError> {
    let c = compute_curves(records, queries, k, clusters, seed.into()).map_err(js_err)?;
    serde_json::to_string(&c).map_err(|e| js_err(e.to_string()))
}
