use std::collections::HashSet;

use clx_core::eval::{confusion_from_detections, confusion_from_offsets, metrics, MetricCounts};
use clx_core::recover::*;
use clx_core::synth::{build_stream, generate_pdus, AnnotatedStream, TrafficSpec};
use clx_core::Layer;
use proptest::prelude::*;

const VALID: [u8; 3] = [0x01, 0x06, 0x11];

fn oracle(s: &AnnotatedStream, layer: Layer) -> Vec<HeaderDetection> {
    s.layer_offsets(layer)
        .into_iter()
        .map(|o| HeaderDetection { offset_bytes: o, layer, score: 1.0, corrected: Vec::new() })
        .collect()
}

fn det(offset: usize, score: f64) -> HeaderDetection {
    HeaderDetection { offset_bytes: offset, layer: Layer::Ip, score, corrected: Vec::new() }
}

#[test]
fn hamming_examples() {
    assert_eq!(correct_protocol_field(&[0; 20].map(|_| 0x06), &VALID).unwrap().0, 0x06);
    let mut h = [0u8; 20];
    h[9] = 0x06;
    assert_eq!(correct_protocol_field(&h, &[0x06, 0x11, 0x01]).unwrap(), (0x06, 0));
    h[9] = 0x07;
    assert_eq!(correct_protocol_field(&h, &[0x06, 0x11, 0x01]).unwrap(), (0x06, 1));
    h[9] = 0x00;
    assert_eq!(correct_protocol_field(&h, &[0x01, 0x06]).unwrap(), (0x01, 1));
    assert!(correct_protocol_field(&h[..5], &VALID).is_err());
    assert!(correct_protocol_field(&h, &[]).is_err());
}

#[test]
fn correction_is_idempotent_for_every_byte() {
    for b in 0..=255u8 {
        let (code, d) = nearest_code(b, &VALID).unwrap();
        assert!(VALID.contains(&code));
        assert!(VALID.iter().all(|&v| hamming(b, v) >= d));
        assert_eq!(nearest_code(code, &VALID), Some((code, 0)));
    }
}

#[test]
fn clean_segmentation_matches_frame_data_fields() {
    let s = build_stream(&TrafficSpec { n_pdus: 120, seed: 3, ..TrafficSpec::default() }).unwrap();
    let bb = oracle(&s, Layer::Bb);
    let regions = segment_bb_frames(&bb, s.bytes.len());
    assert_eq!(regions.len(), bb.len());
    for (i, (r, d)) in regions.iter().zip(&bb).enumerate() {
        assert_eq!(r.start, d.offset_bytes + 10);
        assert_eq!(r.end, bb.get(i + 1).map_or(s.bytes.len(), |n| n.offset_bytes));
        let dfl = u16::from_be_bytes([s.bytes[d.offset_bytes + 4], s.bytes[d.offset_bytes + 5]]) as usize / 8;
        assert!(r.end - r.start >= dfl);
        assert!(s.bytes[r.start + dfl..r.end].iter().all(|&b| b == 0));
    }
    assert_eq!(segment_bb_frames(&[], 77), vec![0..77]);
}

#[test]
fn segmentation_of_two_detections() {
    let bb = [0, 1000].map(|o| HeaderDetection { offset_bytes: o, layer: Layer::Bb, score: 0.9, corrected: vec![] });
    assert_eq!(segment_bb_frames(&bb, 1500), vec![10..1000, 1010..1500]);
}

#[test]
fn oracle_detections_extract_ground_truth_pdus() {
    let spec = TrafficSpec { n_pdus: 300, seed: 21, ..TrafficSpec::default() };
    let s = build_stream(&spec).unwrap();
    let pdus = extract_pdus(&oracle(&s, Layer::Bb), &oracle(&s, Layer::Gse), &oracle(&s, Layer::Ip), &s.bytes);
    let want: Vec<Vec<u8>> = generate_pdus(&spec).unwrap().into_iter().map(|p| p.bytes).collect();
    let got: Vec<Vec<u8>> = pdus.iter().map(|p| p.bytes.clone()).collect();
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(&want).enumerate() {
        assert_eq!(g, w, "pdu {i}: {} vs {} bytes, {} fragments", g.len(), w.len(), pdus[i].fragments);
    }
    assert!(pdus.iter().all(|p| !p.truncated));
    assert!(pdus.iter().any(|p| p.fragments > 1));
}

#[test]
fn ip_detection_without_boundary_runs_to_end() {
    let data = vec![0x45u8; 64];
    let pdus = extract_pdus(&[], &[], &[det(30, 0.9)], &data);
    assert_eq!(pdus.len(), 1);
    assert_eq!(pdus[0].offset, 30);
    assert_eq!(pdus[0].bytes.len(), 34);
    assert!(pdus[0].truncated);
}

#[test]
fn nms_keeps_the_higher_of_two_neighbours() {
    let kept = suppress(vec![det(100, 0.7), det(101, 0.9)], 20);
    assert_eq!(kept.iter().map(|d| d.offset_bytes).collect::<Vec<_>>(), vec![101]);
    let tie = suppress(vec![det(101, 0.8), det(100, 0.8)], 20);
    assert_eq!(tie[0].offset_bytes, 100);
    assert!(suppress(vec![], 5).is_empty());
}

proptest! {
    #[test]
    fn nms_invariants(cands in proptest::collection::vec((0usize..400, 0.5f64..1.0), 0..60), radius in 1usize..25) {
        let mut seen = HashSet::new();
        let cands: Vec<_> = cands.into_iter().filter(|(o, _)| seen.insert(*o)).map(|(o, s)| det(o, s)).collect();
        let kept = suppress(cands.clone(), radius);
        prop_assert!(kept.windows(2).all(|w| w[1].offset_bytes >= w[0].offset_bytes + radius));
        for c in &cands {
            let covered = kept.iter().any(|k| k.offset_bytes.abs_diff(c.offset_bytes) < radius && k.score >= c.score);
            prop_assert!(covered);
        }
        if let Some(best) = cands.iter().map(|c| c.score).reduce(f64::max) {
            prop_assert!(kept.iter().any(|k| k.score == best));
        }
    }

    #[test]
    fn pdu_file_round_trip(records in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..80), 0..10)) {
        let pdus: Vec<ExtractedPdu> = records
            .iter()
            .enumerate()
            .map(|(i, b)| ExtractedPdu { offset: i, bytes: b.clone(), fragments: 1, truncated: false })
            .collect();
        let mut buf = Vec::new();
        write_pdus(&mut buf, &pdus).unwrap();
        prop_assert_eq!(read_pdus(&buf).unwrap(), records);
    }
}

#[test]
fn detections_file_round_trip() {
    let mut d = det(12, 0.75);
    d.corrected.push(FieldRepair { field: "protocol".into(), from: 7, to: 6, distance: 1 });
    let ds = vec![d, det(40, 0.6)];
    let mut buf = Vec::new();
    write_detections(&mut buf, &ds.iter().collect::<Vec<_>>()).unwrap();
    assert_eq!(read_detections(&buf[..]).unwrap(), ds);
}

#[test]
fn exact_offset_matching() {
    let s = build_stream(&TrafficSpec { n_pdus: 30, seed: 1, ..TrafficSpec::default() }).unwrap();
    let mut found = oracle(&s, Layer::Gse);
    let n = found.len();
    found[0].offset_bytes += 1;
    let c = confusion_from_detections(&found, &s.annotations, Layer::Gse, s.bytes.len());
    assert_eq!(c, MetricCounts { tp: n - 1, fp: 1, fn_: 1, tn: s.bytes.len() - n - 1 });
    let m = metrics(&c);
    let r = (n - 1) as f64 / n as f64;
    assert!((m.recall.unwrap() - r).abs() < 1e-12);
    assert!((m.f1.unwrap() - r).abs() < 1e-12);
}

#[test]
fn undefined_metrics_are_none() {
    let m = metrics(&confusion_from_offsets(&[], &HashSet::new(), 10));
    assert_eq!((m.precision, m.recall, m.f1), (None, None, None));
    assert_eq!(m.acc, Some(1.0));
}

#[test]
fn scan_config_layer_thresholds_override_the_default() {
    let c: ScanConfig = serde_json::from_str(r#"{"threshold": 0.6, "layer_thresholds": {"bb": 0.95}}"#).unwrap();
    assert_eq!((c.threshold(Layer::Bb), c.threshold(Layer::Ip)), (0.95, 0.6));
    let bad: ScanConfig = serde_json::from_str(r#"{"layer_thresholds": {"gse": 1.5}}"#).unwrap();
    assert!(bad.validate().is_err());
}
