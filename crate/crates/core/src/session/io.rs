//! Canonical session files.
//!
//! * `canonical_csv`: header `time_s,speed,ch01..chNN`, one row per sample, plus a
//!   sidecar `<stem>.manifest` with dotted keys
//!   (`channel.ch01.region=visual`, `channel.ch01.side=left`, `session.rat_id=...`).
//! * `canonical_bin`: magic `LCDC1`, then little-endian `u32 C`, `u64 T`,
//!   `f64 sample_rate`, C×T eeg as `f32` (channel-major), T speed as `f32`,
//!   and the manifest text prefixed by its `u32` byte length.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{ChannelInfo, Matrix, Region, Session, Side};
use crate::error::{Error, Result};
use crate::util::{parse_kv, write_atomic};

pub const BIN_MAGIC: &[u8; 5] = b"LCDC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionFormat {
    CanonicalCsv,
    CanonicalBin,
}

impl FromStr for SessionFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical_csv" | "csv" => Ok(Self::CanonicalCsv),
            "canonical_bin" | "bin" => Ok(Self::CanonicalBin),
            _ => Err(Error::Format(format!("unknown session format {s:?}"))),
        }
    }
}

impl SessionFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            Self::CanonicalCsv => "csv",
            Self::CanonicalBin => "lcdc",
        }
    }

    /// Guess from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(Self::CanonicalCsv),
            "lcdc" | "bin" => Some(Self::CanonicalBin),
            _ => None,
        }
    }
}

/// Sidecar manifest path for a CSV session file.
pub fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest")
}

/// Parsed manifest contents.
struct Manifest {
    id: Option<String>,
    rat_id: String,
    sample_rate_hz: Option<f64>,
    channel_order: Option<Vec<String>>,
    labels: BTreeMap<String, (Option<Region>, Option<Side>)>,
    extra: BTreeMap<String, String>,
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut m = Manifest {
        id: None,
        rat_id: String::new(),
        sample_rate_hz: None,
        channel_order: None,
        labels: BTreeMap::new(),
        extra: BTreeMap::new(),
    };
    let mut have_rat = false;
    for (key, value) in parse_kv(text)? {
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["session", "id"] => m.id = Some(value),
            ["session", "rat_id"] => {
                m.rat_id = value;
                have_rat = true;
            }
            ["session", "sample_rate_hz"] => {
                m.sample_rate_hz = Some(value.parse().map_err(|_| {
                    Error::Format(format!("manifest: bad sample rate {value:?}"))
                })?)
            }
            ["session", "channels"] => {
                m.channel_order = Some(value.split(',').map(|s| s.trim().to_string()).collect())
            }
            ["session", rest] => {
                m.extra.insert(rest.to_string(), value);
            }
            ["channel", name, "region"] => {
                m.labels.entry(name.to_string()).or_default().0 = Some(value.parse()?)
            }
            ["channel", name, "side"] => {
                m.labels.entry(name.to_string()).or_default().1 = Some(value.parse()?)
            }
            _ => return Err(Error::Format(format!("manifest: unknown key {key:?}"))),
        }
    }
    if !have_rat {
        return Err(Error::Format("manifest: missing session.rat_id".into()));
    }
    Ok(m)
}

fn channel_infos(names: &[String], m: &Manifest) -> Result<Vec<ChannelInfo>> {
    names
        .iter()
        .map(|n| match m.labels.get(n) {
            Some((Some(region), Some(side))) => Ok(ChannelInfo {
                name: n.clone(),
                region: *region,
                side: *side,
            }),
            _ => Err(Error::Format(format!(
                "manifest: channel {n} lacks a region or side label"
            ))),
        })
        .collect()
}

/// Manifest text describing `s` (channel order, labels, metadata).
pub fn render_manifest(s: &Session) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "session.id = {}", s.id());
    let _ = writeln!(out, "session.rat_id = {}", s.rat_id());
    let _ = writeln!(out, "session.sample_rate_hz = {}", s.sample_rate_hz());
    let names: Vec<&str> = s.channels().iter().map(|c| c.name.as_str()).collect();
    let _ = writeln!(out, "session.channels = {}", names.join(","));
    for (k, v) in &s.metadata {
        let _ = writeln!(out, "session.{k} = {v}");
    }
    for c in s.channels() {
        let _ = writeln!(out, "channel.{}.region = {}", c.name, c.region);
        let _ = writeln!(out, "channel.{}.side = {}", c.name, c.side.as_str());
    }
    out
}

fn default_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "session".into())
}

fn finish(
    path: &Path,
    m: Manifest,
    rate: f64,
    eeg: Matrix,
    speed: Vec<f64>,
    names: &[String],
) -> Result<Session> {
    let channels = channel_infos(names, &m)?;
    let id = m.id.clone().unwrap_or_else(|| default_id(path));
    let mut s = Session::new(id, m.rat_id.clone(), rate, eeg, speed, channels)?;
    s.metadata = m.extra;
    Ok(s)
}

fn read_csv(path: &Path) -> Result<Session> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let mtext = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest = parse_manifest(&mtext)?;

    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "time_s" || cols[1] != "speed" {
        return Err(Error::Format(format!(
            "{}: header must start with time_s,speed and list channels",
            path.display()
        )));
    }
    let names: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
    let n_ch = names.len();
    let mut time = Vec::new();
    let mut speed = Vec::new();
    let mut chans: Vec<Vec<f64>> = vec![Vec::new(); n_ch];
    let parse = |cell: &str, row: usize| -> Result<f64> {
        cell.parse::<f64>().map_err(|_| {
            Error::Format(format!("{}: row {row}: cannot parse {cell:?}", path.display()))
        })
    };
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != cols.len() {
            return Err(Error::Format(format!(
                "{}: row {row} has {} cells, header has {}",
                path.display(),
                cells.len(),
                cols.len()
            )));
        }
        if !cells[0].is_empty() {
            time.push(parse(cells[0], row)?);
        }
        if !cells[1].is_empty() {
            speed.push(parse(cells[1], row)?);
        }
        for (c, cell) in cells[2..].iter().enumerate() {
            if !cell.is_empty() {
                chans[c].push(parse(cell, row)?);
            }
        }
    }
    let t = chans[0].len();
    for (c, ch) in chans.iter().enumerate() {
        if ch.len() != t {
            return Err(Error::Integrity(format!(
                "{}: channel {} has {} samples, {} has {t}",
                path.display(),
                names[c],
                ch.len(),
                names[0]
            )));
        }
    }
    if speed.len() != t {
        return Err(Error::Integrity(format!(
            "{}: speed has {} samples but eeg has {t}",
            path.display(),
            speed.len()
        )));
    }
    let rate = match manifest.sample_rate_hz {
        Some(r) => r,
        None if time.len() >= 2 && time[1] > time[0] => 1.0 / (time[1] - time[0]),
        None => {
            return Err(Error::Format(format!(
                "{}: cannot determine sample rate",
                path.display()
            )))
        }
    };
    let data: Vec<f64> = chans.into_iter().flatten().collect();
    let eeg = Matrix::new(n_ch, t, data)?;
    finish(path, manifest, rate, eeg, speed, &names)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "{}: truncated file at byte {}",
                self.path.display(),
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| {
            Error::Format(format!("{}: size overflow", self.path.display()))
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

fn read_bin(path: &Path) -> Result<Session> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor {
        buf: &buf,
        pos: 0,
        path,
    };
    if cur.take(5)? != BIN_MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let c = cur.u32()? as usize;
    let t = cur.u64()? as usize;
    let rate = cur.f64()?;
    let eeg = cur.f32s(c * t)?;
    let speed = cur.f32s(t)?;
    let mlen = cur.u32()? as usize;
    let mtext = std::str::from_utf8(cur.take(mlen)?)
        .map_err(|_| Error::Format(format!("{}: manifest is not UTF-8", path.display())))?;
    if cur.pos != buf.len() {
        return Err(Error::Format(format!("{}: trailing bytes", path.display())));
    }
    let manifest = parse_manifest(mtext)?;
    let names = manifest.channel_order.clone().unwrap_or_else(|| {
        (1..=c).map(|i| format!("ch{i:02}")).collect()
    });
    if names.len() != c {
        return Err(Error::Format(format!(
            "{}: manifest lists {} channels, header says {c}",
            path.display(),
            names.len()
        )));
    }
    finish(path, manifest, rate, Matrix::new(c, t, eeg)?, speed, &names)
}

/// Reads and validates a session file.
pub fn ingest_session(path: &Path, format: SessionFormat) -> Result<Session> {
    match format {
        SessionFormat::CanonicalCsv => read_csv(path),
        SessionFormat::CanonicalBin => read_bin(path),
    }
}

/// Serialises a session. `canonical_bin` stores samples as `f32`, so values
/// that are not exactly representable are rounded.
pub fn session_to_bin(s: &Session) -> Vec<u8> {
    let manifest = render_manifest(s);
    let c = s.n_channels();
    let t = s.n_samples();
    let mut out = Vec::with_capacity(5 + 4 + 8 + 8 + 4 * (c + 1) * t + 4 + manifest.len());
    out.extend_from_slice(BIN_MAGIC);
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&(t as u64).to_le_bytes());
    out.extend_from_slice(&s.sample_rate_hz().to_le_bytes());
    for v in &s.eeg().data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for v in s.speed() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    out
}

fn session_to_csv(s: &Session) -> String {
    let mut out = String::from("time_s,speed");
    for c in s.channels() {
        out.push(',');
        out.push_str(&c.name);
    }
    out.push('\n');
    for t in 0..s.n_samples() {
        let _ = write!(out, "{},{}", t as f64 / s.sample_rate_hz(), s.speed()[t]);
        for c in 0..s.n_channels() {
            let _ = write!(out, ",{}", s.channel(c)[t]);
        }
        out.push('\n');
    }
    out
}

/// Writes a session atomically; CSV output also writes the sidecar manifest.
pub fn write_session(s: &Session, path: &Path, format: SessionFormat) -> Result<()> {
    match format {
        SessionFormat::CanonicalBin => write_atomic(path, &session_to_bin(s)),
        SessionFormat::CanonicalCsv => {
            write_atomic(&manifest_path(path), render_manifest(s).as_bytes())?;
            write_atomic(path, session_to_csv(s).as_bytes())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::test_support::ramp_session;

    fn write_csv_fixture(dir: &Path, speed_rows: usize) -> PathBuf {
        let p = dir.join("s.csv");
        let mut text = String::from("time_s,speed,ch01,ch02,ch03\n");
        for t in 0..100 {
            let sp = if t < speed_rows { format!("{}", t as f64 * 0.1) } else { String::new() };
            let _ = writeln!(text, "{},{},{},{},{}", t as f64 * 0.01, sp, t, 2 * t, 3 * t);
        }
        fs::write(&p, text).unwrap();
        fs::write(
            manifest_path(&p),
            "session.rat_id = r7\nchannel.ch01.region = visual\nchannel.ch01.side = left\n\
             channel.ch02.region = motor\nchannel.ch02.side = right\n\
             channel.ch03.region = somatomotor\nchannel.ch03.side = left\n",
        )
        .unwrap();
        p
    }

    #[test]
    fn csv_readback() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv_fixture(dir.path(), 100);
        let s = ingest_session(&p, SessionFormat::CanonicalCsv).unwrap();
        assert_eq!((s.n_channels(), s.n_samples()), (3, 100));
        assert_eq!(s.rat_id(), "r7");
        assert_eq!(s.id(), "s");
        assert!((s.sample_rate_hz() - 100.0).abs() < 1e-9);
        assert_eq!(s.channel(2)[10], 30.0);
        assert_eq!(s.channels()[0].region, Region::Visual);
    }

    #[test]
    fn csv_short_speed_column_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv_fixture(dir.path(), 99);
        assert!(matches!(
            ingest_session(&p, SessionFormat::CanonicalCsv),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn csv_malformed_header_and_nan() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv_fixture(dir.path(), 100);
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, text.replacen("time_s,speed", "t,v", 1)).unwrap();
        assert!(matches!(
            ingest_session(&p, SessionFormat::CanonicalCsv),
            Err(Error::Format(_))
        ));
        fs::write(&p, text.replacen("\n0.05,0.5,5,", "\n0.05,0.5,NaN,", 1)).unwrap();
        let err = ingest_session(&p, SessionFormat::CanonicalCsv).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
        assert!(err.to_string().contains("ch01") && err.to_string().contains("index 5"));
    }

    #[test]
    fn bin_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let s = ramp_session(4, 64);
        let p1 = dir.path().join("a.lcdc");
        write_session(&s, &p1, SessionFormat::CanonicalBin).unwrap();
        let a = ingest_session(&p1, SessionFormat::CanonicalBin).unwrap();
        let p2 = dir.path().join("b.lcdc");
        write_session(&a, &p2, SessionFormat::CanonicalBin).unwrap();
        let b = ingest_session(&p2, SessionFormat::CanonicalBin).unwrap();
        assert_eq!(a, b);
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(a.channels(), s.channels());
    }

    #[test]
    fn bin_truncation_and_magic() {
        let dir = tempfile::tempdir().unwrap();
        let s = ramp_session(2, 30);
        let bytes = session_to_bin(&s);
        let p = dir.path().join("t.lcdc");
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(ingest_session(&p, SessionFormat::CanonicalBin), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&p, bad).unwrap();
        assert!(ingest_session(&p, SessionFormat::CanonicalBin).is_err());
    }

    #[test]
    fn csv_roundtrip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let s = ramp_session(3, 50);
        let p = dir.path().join("r.csv");
        write_session(&s, &p, SessionFormat::CanonicalCsv).unwrap();
        let back = ingest_session(&p, SessionFormat::CanonicalCsv).unwrap();
        assert_eq!(back.eeg(), s.eeg());
        assert_eq!(back.speed(), s.speed());
        assert_eq!(back.id(), "s1");
    }
}
