//! Host-side checks of the demo surface (the same code the wasm build ships).

use mvcaa_demo::{consistency_curve_json, warp_error_rgba, CorrExplorer, PanoExplorer};

#[test]
fn pano_explorer_buffers_and_metrics() {
    let ex = PanoExplorer::new(7, 48);
    assert_eq!(ex.pano_width(), 256);
    assert_eq!(ex.pano_height(), 128);
    assert_eq!(ex.pano_rgba().len(), 128 * 256 * 4);
    assert_eq!(ex.stitched_rgba().len(), 128 * 256 * 4);
    assert_eq!(ex.crop_rgba(3).len(), 48 * 48 * 4);
    let metrics: serde_json::Value = serde_json::from_str(&ex.metrics_json()).unwrap();
    assert!(metrics["overlap_psnr_db"].as_f64().unwrap() > 30.0);
    assert!(metrics["stitch_round_trip_db"].as_f64().unwrap() > 30.0);
    // same seed, same pixels
    let ex2 = PanoExplorer::new(7, 48);
    assert_eq!(ex.pano_rgba(), ex2.pano_rgba());
}

#[test]
fn corr_explorer_marks_neighborhoods() {
    let ex = CorrExplorer::new(3, 32);
    assert_eq!(ex.n_views(), 8);
    let src = ex.source_rgba(0, 20, 16);
    assert_eq!(src.len(), 32 * 32 * 4);
    let tgt = ex.target_rgba(0, 20, 16, 3);
    assert_eq!(tgt.len(), 32 * 32 * 4);
    let info: serde_json::Value = serde_json::from_str(&ex.info_json(0, 20, 16, 3)).unwrap();
    assert_eq!(info["source_view"], 0);
    assert_eq!(info["target_view"], 1);
    assert_eq!(info["entries"].as_array().unwrap().len(), 9);
}

#[test]
fn consistency_curve_decreases_with_noise() {
    let parsed: serde_json::Value = serde_json::from_str(&consistency_curve_json(5, 32, 0.2, 5)).unwrap();
    let points = parsed["points"].as_array().unwrap();
    assert_eq!(points.len(), 5);
    let first = points[0]["overlap_db"].as_f64().unwrap();
    let last = points[4]["overlap_db"].as_f64().unwrap();
    assert!(last < first, "noise must reduce overlap PSNR: {first} -> {last}");
    assert!((points[0]["ratio"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn warp_error_buffer_shape() {
    let buf = warp_error_rgba(2, 32, 1);
    assert_eq!(buf.len(), 32 * 32 * 4);
}
