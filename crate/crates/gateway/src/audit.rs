//! Information-barrier audit over captured engine→console frames.

use std::collections::BTreeSet;

use hsi_core::session::{RecordBody, SessionLog};
use hsi_core::world::CellIndex;
use serde_json::Value;

/// Every cell the hazard process ever activated in a session.
pub fn hazard_ground_truth(log: &SessionLog) -> BTreeSet<CellIndex> {
    log.records
        .iter()
        .filter_map(|r| match &r.body {
            RecordBody::HazardEvent(e) => Some(e.activated.iter().copied()),
            _ => None,
        })
        .flatten()
        .collect()
}

fn strip_alerts(v: &mut Value) {
    match v {
        Value::Object(map) => {
            if map.contains_key("affected_cells") && map.contains_key("hazard_kind") {
                map.clear();
                return;
            }
            map.values_mut().for_each(strip_alerts);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_alerts),
        _ => {}
    }
}

/// A forbidden cell found outside alert payloads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Leak {
    pub frame: usize,
    pub cell: CellIndex,
}

/// Scans raw frames for `forbidden` cells once alert payloads are blanked.
/// Both the JSON encoding and the display form of a cell count as a hit.
/// Frames that are not JSON are scanned whole.
pub fn scan_frames(frames: &[Vec<u8>], forbidden: &BTreeSet<CellIndex>) -> Vec<Leak> {
    let needles: Vec<(CellIndex, Vec<u8>, Vec<u8>)> = forbidden
        .iter()
        .map(|c| (*c, serde_json::to_vec(c).expect("cell serializes"), c.to_string().into_bytes()))
        .collect();
    let mut leaks = Vec::new();
    for (i, raw) in frames.iter().enumerate() {
        let bytes = match serde_json::from_slice::<Value>(raw) {
            Ok(mut v) => {
                strip_alerts(&mut v);
                serde_json::to_vec(&v).expect("value serializes")
            }
            Err(_) => raw.clone(),
        };
        for (cell, json, text) in &needles {
            if contains(&bytes, json) || contains(&bytes, text) {
                leaks.push(Leak { frame: i, cell: *cell });
            }
        }
    }
    leaks
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alerts_are_exempt_but_other_fields_are_not() {
        let c = CellIndex::new(3, 4);
        let forbidden = BTreeSet::from([c]);
        let ok = br#"{"type":"Snapshot","alerts":[{"tick":1,"hazard_kind":"Dis","affected_cells":[{"col":3,"row":4}],"text":"at (3,4)"}],"marked":[]}"#;
        let bad = br#"{"type":"Snapshot","alerts":[],"marked":[{"col":3,"row":4}]}"#;
        let bad_text = br#"{"type":"Rejection","reason":"invalid action","detail":"cell (3,4)"}"#;
        assert!(scan_frames(&[ok.to_vec()], &forbidden).is_empty());
        assert_eq!(scan_frames(&[ok.to_vec(), bad.to_vec(), bad_text.to_vec()], &forbidden), vec![Leak { frame: 1, cell: c }, Leak { frame: 2, cell: c }]);
    }
}
