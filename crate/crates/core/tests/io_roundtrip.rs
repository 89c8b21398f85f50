//! Container round-trips and the byte-offset guarantees of read errors.

use rsm_core::io::{read_trace_batch, write_trace_batch, IoError, TRACE_MAGIC};
use rsm_core::model::{RampSpec, ReadModel};
use rsm_core::simulate::{simulate_batch, PulseSequence, SensorModel};

fn small_batch() -> Vec<rsm_core::simulate::ShotTrace> {
    let model = ReadModel::new(1.05e4, 0.84, 0.3965, -4.649e-4, 3.02e-4).unwrap();
    let sensor = SensorModel::new(9e-9, 2e-6, 0.0, 1.0, 2e-6).unwrap();
    let ramp = RampSpec::new((-2.205e-3, 0.505e-3), 3e-3).unwrap();
    let seq = PulseSequence::new(1e-3, 2e-4, ramp, None, 0.5, None).unwrap();
    simulate_batch(24, &seq, &model, &sensor, 13.2e-3, 2.5, 404)
}

#[test]
fn batch_round_trips_bit_for_bit() {
    let traces = small_batch();
    let mut buf = Vec::new();
    write_trace_batch(&mut buf, &traces).unwrap();
    let back = read_trace_batch(&mut buf.as_slice()).unwrap();
    assert_eq!(back.len(), traces.len());
    for (a, b) in traces.iter().zip(back.iter()) {
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.meta, b.meta);
        assert_eq!(a.samples.len(), b.samples.len());
        for (x, y) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn corrupt_magic_is_reported_at_offset_zero() {
    let traces = small_batch();
    let mut buf = Vec::new();
    write_trace_batch(&mut buf, &traces).unwrap();
    buf[3] ^= 0xff;
    match read_trace_batch(&mut buf.as_slice()).unwrap_err() {
        IoError::Malformed { offset, .. } => assert_eq!(offset, 0),
        other => panic!("wrong error {other:?}"),
    }
}

#[test]
fn unsupported_version_is_its_own_error() {
    let traces = small_batch();
    let mut buf = Vec::new();
    write_trace_batch(&mut buf, &traces).unwrap();
    buf[8] = 9;
    match read_trace_batch(&mut buf.as_slice()).unwrap_err() {
        IoError::UnsupportedVersion(v) => assert_eq!(v, 9),
        other => panic!("wrong error {other:?}"),
    }
}

#[test]
fn truncation_is_reported_at_the_cut() {
    let traces = small_batch();
    let mut buf = Vec::new();
    write_trace_batch(&mut buf, &traces).unwrap();
    let cut = buf.len() - 11;
    buf.truncate(cut);
    match read_trace_batch(&mut buf.as_slice()).unwrap_err() {
        IoError::Malformed { offset, reason } => {
            assert!(offset as usize <= cut, "offset {offset} past cut {cut}");
            assert!(offset as usize + 16 >= cut, "offset {offset} far from cut {cut}");
            assert!(reason.contains("unexpected end"), "reason {reason:?}");
        }
        other => panic!("wrong error {other:?}"),
    }
}

#[test]
fn trailing_garbage_is_rejected() {
    let traces = small_batch();
    let mut buf = Vec::new();
    write_trace_batch(&mut buf, &traces).unwrap();
    let end = buf.len();
    buf.extend_from_slice(&[0u8; 5]);
    match read_trace_batch(&mut buf.as_slice()).unwrap_err() {
        IoError::Malformed { offset, .. } => assert_eq!(offset as usize, end),
        other => panic!("wrong error {other:?}"),
    }
}

#[test]
fn header_starts_with_the_documented_magic() {
    let traces = small_batch();
    let mut buf = Vec::new();
    write_trace_batch(&mut buf, &traces).unwrap();
    assert_eq!(&buf[..8], &TRACE_MAGIC);
    // version immediately after, little-endian
    assert_eq!(&buf[8..12], &1u32.to_le_bytes());
}

#[test]
fn mixed_batches_are_refused() {
    let mut traces = small_batch();
    traces[1].samples.pop();
    let mut buf = Vec::new();
    match write_trace_batch(&mut buf, &traces).unwrap_err() {
        IoError::Inconsistent(msg) => assert!(msg.contains("samples")),
        other => panic!("wrong error {other:?}"),
    }
}
