//! QDTT binary time-tag files.
//!
//! | offset | size | field                       |
//! |--------|------|-----------------------------|
//! | 0      | 4    | magic `QDTT`                |
//! | 4      | 2    | version, u16 LE (1)         |
//! | 6      | 1    | channel_count               |
//! | 7      | 1    | reserved (0)                |
//! | 8      | 4    | resolution_ps, u32 LE       |
//! | 12     | 8    | record_count, u64 LE        |
//! | 20     | 16·n | records                     |
//!
//! Each record is `channel: u8`, 7 reserved zero bytes, `timestamp_ps: u64 LE`.
//! Timestamps are non-decreasing.
//!
//! Importers from vendor formats map their fields as follows: the vendor
//! channel index becomes `channel`, the absolute arrival time converted to
//! picoseconds becomes `timestamp_ps`, and the native bin size becomes
//! `resolution_ps`. Overflow/marker records carry no photon and are dropped.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::{PhotonEvent, TimeTagStream};

pub const MAGIC: &[u8; 4] = b"QDTT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;
pub const RECORD_LEN: usize = 16;

pub fn write<W: Write>(stream: &TimeTagStream, mut w: W) -> Result<()> {
    if !stream.is_sorted() {
        return Err(Error::Unsorted("time-tag stream"));
    }
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(MAGIC);
    header[4..6].copy_from_slice(&VERSION.to_le_bytes());
    header[6] = stream.channel_count;
    header[8..12].copy_from_slice(&stream.resolution_ps.to_le_bytes());
    header[12..20].copy_from_slice(&(stream.events.len() as u64).to_le_bytes());
    w.write_all(&header)?;
    let mut rec = [0u8; RECORD_LEN];
    for e in &stream.events {
        rec[0] = e.channel;
        rec[8..16].copy_from_slice(&e.timestamp.to_le_bytes());
        w.write_all(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<TimeTagStream> {
    let mut header = [0u8; HEADER_LEN];
    read_exact_at(&mut r, &mut header, 0)?;
    if &header[0..4] != MAGIC {
        return Err(Error::parse("byte offset 0", "bad magic, expected 'QDTT'"));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(Error::parse("byte offset 4", format!("unsupported version {version}")));
    }
    let channel_count = header[6];
    let resolution_ps = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
    let record_count = u64::from_le_bytes(header[12..20].try_into().expect("8 bytes"));

    let mut events = Vec::with_capacity(record_count.min(1 << 24) as usize);
    let mut rec = [0u8; RECORD_LEN];
    let mut last = 0u64;
    for i in 0..record_count {
        let offset = HEADER_LEN as u64 + i * RECORD_LEN as u64;
        read_exact_at(&mut r, &mut rec, offset).map_err(|e| match e {
            Error::Parse { .. } => Error::parse(
                format!("byte offset {offset}"),
                format!("file ends after {i} of {record_count} records"),
            ),
            other => other,
        })?;
        let timestamp = u64::from_le_bytes(rec[8..16].try_into().expect("8 bytes"));
        if timestamp < last {
            return Err(Error::parse(format!("byte offset {}", offset + 8), "timestamps decrease"));
        }
        last = timestamp;
        events.push(PhotonEvent { channel: rec[0], timestamp });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        let offset = HEADER_LEN as u64 + record_count * RECORD_LEN as u64;
        return Err(Error::parse(format!("byte offset {offset}"), "trailing data after the declared records"));
    }
    Ok(TimeTagStream { events, channel_count, resolution_ps })
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::parse(format!("byte offset {offset}"), "unexpected end of file")
        } else {
            Error::Io(e)
        }
    })
}

pub fn write_file(stream: &TimeTagStream, path: &Path) -> Result<()> {
    write(stream, BufWriter::new(File::create(path)?))
}

pub fn read_file(path: &Path) -> Result<TimeTagStream> {
    read(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> TimeTagStream {
        TimeTagStream {
            events: vec![
                PhotonEvent { channel: 0, timestamp: 5 },
                PhotonEvent { channel: 2, timestamp: 5 },
                PhotonEvent { channel: 1, timestamp: u64::MAX },
            ],
            channel_count: 3,
            resolution_ps: 1,
        }
    }

    #[test]
    fn layout_is_fixed() {
        let mut buf = Vec::new();
        write(&sample(), &mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 3 * RECORD_LEN);
        assert_eq!(&buf[0..4], b"QDTT");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(buf[6], 3);
        assert_eq!(&buf[12..20], &3u64.to_le_bytes());
        assert_eq!(buf[HEADER_LEN + RECORD_LEN], 2);
        assert_eq!(&buf[HEADER_LEN + 8..HEADER_LEN + 16], &5u64.to_le_bytes());
    }

    #[test]
    fn malformed_files_name_offset() {
        let mut buf = Vec::new();
        write(&sample(), &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read(&bad[..]), Err(Error::Parse { location, .. }) if location == "byte offset 0"));

        let truncated = &buf[..buf.len() - 4];
        assert!(matches!(read(truncated), Err(Error::Parse { location, .. }) if location == "byte offset 52"));

        let mut backwards = buf.clone();
        backwards[HEADER_LEN + 8..HEADER_LEN + 16].copy_from_slice(&9u64.to_le_bytes());
        assert!(matches!(read(&backwards[..]), Err(Error::Parse { location, .. }) if location == "byte offset 44"));

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(read(&trailing[..]).is_err());

        let mut unsorted = sample();
        unsorted.events.swap(0, 2);
        assert!(matches!(write(&unsorted, Vec::new()), Err(Error::Unsorted(_))));
    }

    proptest! {
        #[test]
        fn round_trip(mut ts in prop::collection::vec((0u8..3, any::<u64>()), 0..200), res in 1u32..1000) {
            ts.sort_by_key(|t| t.1);
            let stream = TimeTagStream {
                events: ts.iter().map(|&(channel, timestamp)| PhotonEvent { channel, timestamp }).collect(),
                channel_count: 3,
                resolution_ps: res,
            };
            let mut buf = Vec::new();
            write(&stream, &mut buf).unwrap();
            prop_assert_eq!(read(&buf[..]).unwrap(), stream);
        }
    }
}
