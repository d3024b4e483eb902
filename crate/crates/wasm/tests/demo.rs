use scanquery::eval::{prepare_all, synth_world, top_k, RawScanScorer, ScanQuery, ScanScorer, ScannerModel, SynthParams};
use scanquery_wasm::{compute_curves, Demo, RASTER_SIDE};

fn demo() -> Demo {
    Demo::generate(3, 4, 6).unwrap()
}

#[test]
fn render_marks_window_pixels_as_a_subset() {
    let d = demo();
    let full = d.render_cells(5, 0.0, 0.0, 0.0).unwrap();
    assert_eq!(full.len(), RASTER_SIDE * RASTER_SIDE);
    assert!(full.iter().all(|&c| c == 0 || c == 2));
    assert!(full.contains(&2));

    let part = d.render_cells(5, 0.0, -0.6, 1.2).unwrap();
    assert!(part.iter().all(|&c| c <= 2));
    // the window never adds pixels, it only splits them
    for (a, b) in full.iter().zip(&part) {
        assert_eq!(*a > 0, *b > 0);
    }
    assert!(part.contains(&1) && part.contains(&2));
}

#[test]
fn unrotated_whole_scan_finds_itself_first() {
    let d = demo();
    let hits = d.search(9, 0.0, 0.0, 0.0, 5).unwrap();
    assert_eq!(hits.len(), 5);
    assert_eq!(hits[0].index, 9);
    assert!(hits[0].same_episode);
    assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), [1, 2, 3, 4, 5]);
}

#[test]
fn search_matches_a_direct_top_k() {
    let d = demo();
    let params = SynthParams {
        episodes: 4,
        scans_per_episode: 6,
        scanner: ScannerModel::fov_360().with_beams(360),
        ..SynthParams::default()
    };
    let scans = synth_world(&params, 3).scans;
    let prepared = prepare_all(&RawScanScorer, &scans).unwrap();
    let q = RawScanScorer.prepare_query(ScanQuery::Whole(&scans[2])).unwrap();
    let want = top_k(&RawScanScorer, &q, &prepared, 7).unwrap();
    let got = d.search(2, 0.0, 0.0, 0.0, 7).unwrap();
    let got: Vec<(u64, f64)> = got.iter().map(|h| (h.index, h.score)).collect();
    let want: Vec<(u64, f64)> = want.items.iter().map(|s| (s.id, s.score)).collect();
    assert_eq!(got, want);
}

#[test]
fn bad_inputs_are_errors() {
    let d = demo();
    assert!(d.render_cells(1000, 0.0, 0.0, 0.0).is_err());
    assert!(d.search(0, 0.0, 0.0, 0.0, 0).is_err());
    assert!(d.search(0, 0.0, f64::NAN, 0.5, 3).is_err());
    assert!(Demo::generate(0, 0, 3).is_err());
}

#[test]
fn curves_start_at_one_and_reach_zero() {
    let c = compute_curves(300, 5, 5, 6, 1).unwrap();
    assert_eq!(c.fraction.len(), c.evaluate.len());
    assert_eq!(c.fraction.len(), c.baseline.len());
    assert_eq!(c.evaluate[0], 1.0);
    assert_eq!(*c.evaluate.last().unwrap(), 0.0);
    assert_eq!(*c.baseline.last().unwrap(), 0.0);
    assert!(c.auc_evaluate < c.auc_baseline);
    assert!(c.epsilon > 0.0);
}
