//! WebAssembly bindings for the demo page. Every export returns a JSON
//! string so the page needs no generated type glue.

use std::collections::HashSet;

use clx_core::codec::{PROTO_ICMP, PROTO_TCP, PROTO_UDP};
use clx_core::corruption::{corrupt_stream, CorruptionSpec};
use clx_core::fsm::fsm_decode;
use clx_core::recover::{hamming, nearest_code};
use clx_core::synth::{build_stream, generate_pdus, TrafficSpec};
use clx_core::{Layer, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_PDUS: usize = 5000;
const PREVIEW_BYTES: usize = 192;

#[derive(Debug, Serialize, PartialEq, Eq)]
pub struct LayerCounts {
    pub bb: usize,
    pub gse: usize,
    pub ip: usize,
    pub pdus: usize,
}

#[derive(Debug, Serialize)]
pub struct PreviewByte {
    pub value: u8,
    pub changed: bool,
    /// Layer whose header starts here, if any.
    pub header: Option<Layer>,
}

#[derive(Debug, Serialize)]
pub struct RecoveryView {
    pub stream_bytes: usize,
    pub changed_bits: u64,
    pub truth: LayerCounts,
    pub found: LayerCounts,
    pub correct_pdus: usize,
    pub crc_failures: usize,
    pub preview: Vec<PreviewByte>,
}

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub degree: f64,
    pub pdu_fraction: f64,
    pub gse_fraction: f64,
}

#[derive(Debug, Serialize)]
pub struct Candidate {
    pub code: u8,
    pub name: &'static str,
    pub distance: u32,
}

#[derive(Debug, Serialize)]
pub struct RepairView {
    pub observed: u8,
    pub bits: String,
    pub candidates: Vec<Candidate>,
    pub chosen: u8,
    pub distance: u32,
}

fn traffic(pdus: usize, seed: u64) -> Result<TrafficSpec> {
    if pdus == 0 || pdus > MAX_PDUS {
        return Err(clx_core::Error::Config(format!("PDU count must be in 1..={MAX_PDUS}")));
    }
    Ok(TrafficSpec { n_pdus: pdus, seed, ..TrafficSpec::default() })
}

/// Generates a stream, corrupts it and runs the FSM decoder over it.
pub fn recovery_view(pdus: usize, seed: u64, gamma1: f64, gamma2: f64) -> Result<RecoveryView> {
    let clean = build_stream(&traffic(pdus, seed)?)?;
    let noisy = corrupt_stream(&clean, &CorruptionSpec::new(gamma1, gamma2, seed ^ 0x5eed)?)?;
    let report = fsm_decode(&noisy.bytes);
    let sent = generate_pdus(&traffic(pdus, seed)?)?;
    let truth: HashSet<&[u8]> = sent.iter().map(|p| p.bytes.as_slice()).collect();
    Ok(RecoveryView {
        stream_bytes: clean.bytes.len(),
        changed_bits: clean.bytes.iter().zip(&noisy.bytes).map(|(a, b)| (a ^ b).count_ones() as u64).sum(),
        truth: LayerCounts {
            bb: clean.layer_offsets(Layer::Bb).len(),
            gse: clean.layer_offsets(Layer::Gse).len(),
            ip: clean.layer_offsets(Layer::Ip).len(),
            pdus,
        },
        found: LayerCounts { bb: report.bb_found, gse: report.gse_found, ip: report.ip_found, pdus: report.pdus.len() },
        correct_pdus: report.pdus.iter().filter(|p| truth.contains(p.bytes.as_slice())).count(),
        crc_failures: report.crc_failures,
        preview: preview(&clean, &noisy.bytes),
    })
}

fn preview(clean: &clx_core::synth::AnnotatedStream, noisy: &[u8]) -> Vec<PreviewByte> {
    (0..PREVIEW_BYTES.min(noisy.len()))
        .map(|i| PreviewByte {
            value: noisy[i],
            changed: noisy[i] != clean.bytes[i],
            header: clean.annotations.iter().find(|a| a.offset_bytes == i).map(|a| a.layer),
        })
        .collect()
}

/// Mean FSM recovery over `rounds` channel seeds for evenly spaced degrees
/// from 0 to `max_degree`.
pub fn recovery_curve(pdus: usize, seed: u64, flip: f64, loss: f64, max_degree: f64, steps: usize, rounds: usize) -> Result<Vec<CurvePoint>> {
    let clean = build_stream(&traffic(pdus, seed)?)?;
    let gse_truth = clean.layer_offsets(Layer::Gse).len() as f64;
    let steps = steps.clamp(2, 50);
    let rounds = rounds.clamp(1, 20);
    (0..steps)
        .map(|k| {
            let degree = max_degree * k as f64 / (steps - 1) as f64;
            let (mut p, mut g) = (0.0, 0.0);
            for r in 0..rounds {
                let spec = CorruptionSpec::from_degree(degree, flip, loss, seed.wrapping_add(1000 + r as u64))?;
                let report = fsm_decode(&corrupt_stream(&clean, &spec)?.bytes);
                p += report.pdus.len() as f64 / pdus as f64;
                g += report.gse_found as f64 / gse_truth;
            }
            Ok(CurvePoint { degree, pdu_fraction: p / rounds as f64, gse_fraction: g / rounds as f64 })
        })
        .collect()
}

fn protocol_name(code: u8) -> &'static str {
    match code {
        PROTO_ICMP => "ICMP",
        PROTO_TCP => "TCP",
        PROTO_UDP => "UDP",
        _ => "?",
    }
}

/// Hamming repair of an observed IPv4 protocol byte.
pub fn repair_view(observed: u8) -> RepairView {
    let valid = [PROTO_ICMP, PROTO_TCP, PROTO_UDP];
    let (chosen, distance) = nearest_code(observed, &valid).expect("non-empty code set");
    RepairView {
        observed,
        bits: format!("{observed:08b}"),
        candidates: valid.iter().map(|&code| Candidate { code, name: protocol_name(code), distance: hamming(observed, code) }).collect(),
        chosen,
        distance,
    }
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = recoverStream)]
pub fn recover_stream(pdus: usize, seed: u32, gamma1: f64, gamma2: f64) -> std::result::Result<String, JsError> {
    to_js(recovery_view(pdus, seed as u64, gamma1, gamma2))
}

#[wasm_bindgen(js_name = recoveryCurve)]
pub fn recovery_curve_js(pdus: usize, seed: u32, flip: f64, loss: f64, max_degree: f64, steps: usize, rounds: usize) -> std::result::Result<String, JsError> {
    to_js(recovery_curve(pdus, seed as u64, flip, loss, max_degree, steps, rounds))
}

#[wasm_bindgen(js_name = repairProtocol)]
pub fn repair_protocol(observed: u8) -> std::result::Result<String, JsError> {
    to_js(Ok(repair_view(observed)))
}
