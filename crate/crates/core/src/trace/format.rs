//! Binary and CSV trace files.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! "LCTR" | version: u16 = 1 | count: u64 | count x record
//! record = kind: u8 | t_ns: u64 | dev: u64 | inode: u64 | offset: u64   (33 bytes)
//! ```

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{first_unsorted, EventKind, PageKey, TraceEvent};

pub const MAGIC: &[u8; 4] = b"LCTR";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 8;
pub const RECORD_LEN: usize = 1 + 8 * 4;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("bad magic at byte offset {offset}")]
    BadMagic { offset: u64 },
    #[error("unsupported trace version {version} at byte offset {offset}")]
    BadVersion { version: u16, offset: u64 },
    #[error("truncated trace: expected {expected} bytes, found {found} (at byte offset {offset})")]
    Truncated {
        expected: u64,
        found: u64,
        offset: u64,
    },
    #[error("{extra} trailing bytes after last record at byte offset {offset}")]
    TrailingBytes { extra: u64, offset: u64 },
    #[error("unknown event kind {kind} at byte offset {offset}")]
    BadKind { kind: u8, offset: u64 },
    #[error("timestamps go backwards at record {index} (byte offset {offset})")]
    Unsorted { index: u64, offset: u64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn record_offset(index: usize) -> u64 {
    (HEADER_LEN + index * RECORD_LEN) as u64
}

pub fn write_trace_bytes(events: &[TraceEvent]) -> Result<Vec<u8>, TraceError> {
    if let Some(i) = first_unsorted(events) {
        return Err(TraceError::Unsorted {
            index: i as u64,
            offset: record_offset(i),
        });
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + events.len() * RECORD_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(events.len() as u64).to_le_bytes());
    for ev in events {
        buf.push(ev.kind.to_byte());
        buf.extend_from_slice(&ev.t_ns.to_le_bytes());
        buf.extend_from_slice(&ev.key.dev.to_le_bytes());
        buf.extend_from_slice(&ev.key.inode.to_le_bytes());
        buf.extend_from_slice(&ev.key.offset.to_le_bytes());
    }
    Ok(buf)
}

pub fn write_trace(events: &[TraceEvent], path: impl AsRef<Path>) -> Result<(), TraceError> {
    let bytes = write_trace_bytes(events)?;
    fs::write(path, bytes)?;
    Ok(())
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    let mut raw = [0u8; 8];
    raw.copy_from_slice(&bytes[at..at + 8]);
    u64::from_le_bytes(raw)
}

pub fn read_trace_bytes(bytes: &[u8]) -> Result<Vec<TraceEvent>, TraceError> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(TraceError::BadMagic { offset: 0 });
    }
    if bytes.len() < HEADER_LEN {
        return Err(TraceError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
            offset: bytes.len() as u64,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(TraceError::BadVersion { version, offset: 4 });
    }
    let count = u64_at(bytes, 6);
    let expected = (HEADER_LEN as u64).saturating_add(count.saturating_mul(RECORD_LEN as u64));
    let found = bytes.len() as u64;
    if found < expected {
        // point at the first record that is cut short
        let complete = (found - HEADER_LEN as u64) / RECORD_LEN as u64;
        return Err(TraceError::Truncated {
            expected,
            found,
            offset: HEADER_LEN as u64 + complete * RECORD_LEN as u64,
        });
    }
    if found > expected {
        return Err(TraceError::TrailingBytes {
            extra: found - expected,
            offset: expected,
        });
    }

    let mut events = Vec::with_capacity(count as usize);
    let mut prev_t = 0u64;
    for (i, rec) in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN).enumerate() {
        let offset = record_offset(i);
        let kind = EventKind::from_byte(rec[0]).ok_or(TraceError::BadKind {
            kind: rec[0],
            offset,
        })?;
        let t_ns = u64_at(rec, 1);
        if i > 0 && t_ns < prev_t {
            return Err(TraceError::Unsorted {
                index: i as u64,
                offset,
            });
        }
        prev_t = t_ns;
        events.push(TraceEvent {
            kind,
            t_ns,
            key: PageKey::new(u64_at(rec, 9), u64_at(rec, 17), u64_at(rec, 25)),
        });
    }
    Ok(events)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceEvent>, TraceError> {
    let bytes = fs::read(path)?;
    read_trace_bytes(&bytes)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    kind: EventKind,
    t_ns: u64,
    dev: u64,
    inode: u64,
    offset: u64,
}

/// Writes one row per event under the header `kind,t_ns,dev,inode,offset`.
pub fn export_csv(events: &[TraceEvent], path: impl AsRef<Path>) -> Result<(), TraceError> {
    let file = fs::File::create(path)?;
    write_csv(events, BufWriter::new(file))
}

pub(crate) fn write_csv<W: Write>(events: &[TraceEvent], out: W) -> Result<(), TraceError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(["kind", "t_ns", "dev", "inode", "offset"])?;
    for ev in events {
        w.serialize(CsvRow {
            kind: ev.kind,
            t_ns: ev.t_ns,
            dev: ev.key.dev,
            inode: ev.key.inode,
            offset: ev.key.offset,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<TraceEvent>, TraceError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut events = Vec::new();
    for row in r.deserialize() {
        let row: CsvRow = row?;
        events.push(TraceEvent {
            kind: row.kind,
            t_ns: row.t_ns,
            key: PageKey::new(row.dev, row.inode, row.offset),
        });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_events() -> Vec<TraceEvent> {
        vec![
            TraceEvent::access(0, PageKey::new(1, 2, 3)),
            TraceEvent::insert(0, PageKey::new(1, 2, 3)),
            TraceEvent::evict(9, PageKey::new(1, 2, 3)),
        ]
    }

    #[test]
    fn empty_trace_is_header_only() {
        let bytes = write_trace_bytes(&[]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert!(read_trace_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn record_layout_is_fixed() {
        let ev = TraceEvent::evict(0x0102, PageKey::new(3, 4, 5));
        let bytes = write_trace_bytes(&[ev]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + RECORD_LEN);
        assert_eq!(&bytes[..4], b"LCTR");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..14], &1u64.to_le_bytes());
        assert_eq!(bytes[14], 2);
        assert_eq!(&bytes[15..23], &0x0102u64.to_le_bytes());
        assert_eq!(&bytes[39..47], &5u64.to_le_bytes());
    }

    #[test]
    fn corrupted_magic_fails_at_offset_zero() {
        let mut bytes = write_trace_bytes(&sample_events()).unwrap();
        bytes[1] = b'X';
        match read_trace_bytes(&bytes) {
            Err(TraceError::BadMagic { offset }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_record_reports_its_offset() {
        let bytes = write_trace_bytes(&sample_events()).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        match read_trace_bytes(cut) {
            Err(TraceError::Truncated { offset, .. }) => {
                assert_eq!(offset, (HEADER_LEN + 2 * RECORD_LEN) as u64)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unsorted_records_are_rejected() {
        let mut bytes = write_trace_bytes(&sample_events()).unwrap();
        // rewrite the last timestamp to go backwards
        let at = HEADER_LEN + 2 * RECORD_LEN + 1;
        bytes[at..at + 8].copy_from_slice(&0u64.to_le_bytes());
        bytes[HEADER_LEN + RECORD_LEN + 1..HEADER_LEN + RECORD_LEN + 9]
            .copy_from_slice(&5u64.to_le_bytes());
        match read_trace_bytes(&bytes) {
            Err(TraceError::Unsorted { index, offset }) => {
                assert_eq!(index, 2);
                assert_eq!(offset, (HEADER_LEN + 2 * RECORD_LEN) as u64);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut unsorted = sample_events();
        unsorted.swap(0, 2);
        assert!(matches!(
            write_trace_bytes(&unsorted),
            Err(TraceError::Unsorted { index: 1, .. })
        ));
    }

    #[test]
    fn bad_kind_and_trailing_bytes() {
        let mut bytes = write_trace_bytes(&sample_events()).unwrap();
        bytes.push(0);
        assert!(matches!(
            read_trace_bytes(&bytes),
            Err(TraceError::TrailingBytes { extra: 1, .. })
        ));
        bytes.pop();
        bytes[HEADER_LEN] = 7;
        assert!(matches!(
            read_trace_bytes(&bytes),
            Err(TraceError::BadKind { kind: 7, offset }) if offset == HEADER_LEN as u64
        ));
    }

    #[test]
    fn csv_single_access_row() {
        let mut out = Vec::new();
        write_csv(&[TraceEvent::access(5, PageKey::new(1, 2, 3))], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "kind,t_ns,dev,inode,offset\nAccess,5,1,2,3\n"
        );
        let mut empty = Vec::new();
        write_csv(&[], &mut empty).unwrap();
        assert_eq!(
            String::from_utf8(empty).unwrap(),
            "kind,t_ns,dev,inode,offset\n"
        );
    }

    fn arb_events() -> impl Strategy<Value = Vec<TraceEvent>> {
        prop::collection::vec(
            (
                0u8..3,
                0u64..1_000,
                any::<u64>(),
                any::<u64>(),
                any::<u64>(),
            ),
            0..200,
        )
        .prop_map(|raw| {
            let mut t = 0u64;
            raw.into_iter()
                .map(|(k, dt, dev, inode, offset)| {
                    t += dt;
                    TraceEvent {
                        kind: EventKind::from_byte(k).unwrap(),
                        t_ns: t,
                        key: PageKey::new(dev, inode, offset),
                    }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn binary_and_csv_round_trip(events in arb_events()) {
            let bytes = write_trace_bytes(&events).unwrap();
            prop_assert_eq!(read_trace_bytes(&bytes).unwrap(), events.clone());

            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.csv");
            export_csv(&events, &path).unwrap();
            prop_assert_eq!(read_csv(&path).unwrap(), events);
        }
    }
}
