//! FHF1: the hour-frame binary format.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    [u8; 4] = "FHF1"
//! version  u32     = 1
//! rate     u32       tick_rate_hz
//! start    u64       epoch seconds of first tick
//! n_dev    u32
//! n_ticks  u32
//! devices  n_dev x { name_len u16, name [u8], kind u8 }
//! payload  n_dev x n_ticks f32, column-major (device-major)
//! ```
//!
//! The payload is copied byte for byte, so NaN bit patterns survive a round
//! trip unchanged.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::catalog::{DeviceCatalog, DeviceKind, DeviceSpec};
use crate::error::{Error, Result};
use crate::frame::{HourFrame, TickMatrix};

pub const MAGIC: [u8; 4] = *b"FHF1";
pub const VERSION: u32 = 1;

/// Serializes a frame. Validates invariants first; nothing is written on
/// failure. Returns the number of bytes emitted.
pub fn write_hour_frame<W: Write>(frame: &HourFrame, mut sink: W) -> Result<u64> {
    frame.validate()?;
    if frame.n_ticks() > u32::MAX as usize || frame.n_devices() > u32::MAX as usize {
        return Err(Error::invariant("frame dimensions exceed u32 range"));
    }

    let mut written: u64 = 0;
    let mut put = |sink: &mut W, bytes: &[u8]| -> Result<()> {
        sink.write_all(bytes)?;
        written += bytes.len() as u64;
        Ok(())
    };

    put(&mut sink, &MAGIC)?;
    put(&mut sink, &VERSION.to_le_bytes())?;
    put(&mut sink, &frame.catalog.tick_rate_hz.to_le_bytes())?;
    put(&mut sink, &frame.start_time.to_le_bytes())?;
    put(&mut sink, &(frame.n_devices() as u32).to_le_bytes())?;
    put(&mut sink, &(frame.n_ticks() as u32).to_le_bytes())?;

    for dev in &frame.catalog.devices {
        let name = dev.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::invariant(format!("device name too long: {:?}", dev.name)));
        }
        put(&mut sink, &(name.len() as u16).to_le_bytes())?;
        put(&mut sink, name)?;
        put(&mut sink, &[dev.kind.code()])?;
    }

    let mut buf = Vec::with_capacity(frame.data.raw().len() * 4);
    for v in frame.data.raw() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    put(&mut sink, &buf)?;
    Ok(written)
}

/// Deserializes a frame, validating magic, version, and payload length.
pub fn read_hour_frame<R: Read>(mut source: R) -> Result<HourFrame> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut source, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, got: magic });
    }

    let version = read_u32(&mut source)?;
    if version > VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let tick_rate_hz = read_u32(&mut source)?;
    let start_time = read_u64(&mut source)?;
    let n_devices = read_u32(&mut source)? as usize;
    let n_ticks = read_u32(&mut source)? as usize;

    let mut devices = Vec::with_capacity(n_devices);
    for _ in 0..n_devices {
        let name_len = read_u16(&mut source)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact_or_truncated(&mut source, &mut name, "device name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::invariant("device name is not valid UTF-8"))?;
        let mut kind = [0u8; 1];
        read_exact_or_truncated(&mut source, &mut kind, "device kind")?;
        devices.push(DeviceSpec::new(name, DeviceKind::from_code(kind[0])?));
    }
    let catalog = Arc::new(DeviceCatalog { devices, tick_rate_hz });

    let expected = n_devices * n_ticks * 4;
    let mut payload = vec![0u8; expected];
    let got = read_fully(&mut source, &mut payload)?;
    if got != expected {
        return Err(Error::Truncated { expected, got });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let data = TickMatrix::from_values(n_ticks, n_devices, values)?;
    Ok(HourFrame::new(catalog, start_time, data))
}

pub fn write_hour_frame_file(frame: &HourFrame, path: impl AsRef<Path>) -> Result<u64> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let n = write_hour_frame(frame, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn read_hour_frame_file(path: impl AsRef<Path>) -> Result<HourFrame> {
    read_hour_frame(BufReader::new(File::open(path)?))
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    let got = read_fully(r, buf)?;
    if got != buf.len() {
        return Err(Error::Truncated { expected: buf.len(), got });
    }
    let _ = what;
    Ok(())
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact_or_truncated(r, &mut b, "u16")?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b, "u32")?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b, "u64")?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_device_frame() -> HourFrame {
        let catalog = DeviceCatalog::new(
            vec![
                DeviceSpec::new("r0", DeviceKind::Reading),
                DeviceSpec::new("bp", DeviceKind::Permit),
            ],
            15,
        )
        .unwrap();
        let data = TickMatrix::from_values(3, 2, vec![1.0, 2.0, 3.0, 1.0, 1.0, 0.0]).unwrap();
        HourFrame::new(catalog, 1_700_000_000, data)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let frame = two_device_frame();
        let mut bytes = Vec::new();
        let n = write_hour_frame(&frame, &mut bytes).unwrap();
        assert_eq!(n as usize, bytes.len());
        // magic 4 + version 4 + rate 4 + start 8 + n_dev 4 + n_ticks 4
        // + devices (2+2+1) + (2+2+1) + payload 24
        assert_eq!(bytes.len(), 28 + 5 + 5 + 24);
        let back = read_hour_frame(bytes.as_slice()).unwrap();
        assert!(back.bit_eq(&frame));
    }

    #[test]
    fn nan_payload_bits_survive() {
        let mut frame = two_device_frame();
        frame.data.set(1, 0, f32::from_bits(0x7fc0_1234));
        let mut bytes = Vec::new();
        write_hour_frame(&frame, &mut bytes).unwrap();
        let back = read_hour_frame(bytes.as_slice()).unwrap();
        assert_eq!(back.data.get(1, 0).to_bits(), 0x7fc0_1234);
        assert!(back.bit_eq(&frame));
    }

    #[test]
    fn shape_mismatch_writes_nothing() {
        let mut frame = two_device_frame();
        frame.data = TickMatrix::zeros(3, 5);
        let mut bytes = Vec::new();
        let err = write_hour_frame(&frame, &mut bytes).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
        assert!(bytes.is_empty());
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let err = read_hour_frame(&b"XXXX0000"[..]).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
    }

    #[test]
    fn short_payload_is_a_truncation_error() {
        let frame = two_device_frame();
        let mut bytes = Vec::new();
        write_hour_frame(&frame, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 4);
        let err = read_hour_frame(bytes.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Truncated { expected: 24, got: 20 }));
    }

    #[test]
    fn future_version_is_rejected() {
        let frame = two_device_frame();
        let mut bytes = Vec::new();
        write_hour_frame(&frame, &mut bytes).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = read_hour_frame(bytes.as_slice()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion(2)));
    }
}
