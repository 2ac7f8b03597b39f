//! Dataset and report serialization.
//!
//! # `.csid` layout
//!
//! All integers and floats little-endian.
//!
//! | field         | type          |
//! |---------------|---------------|
//! | magic         | `b"CSID"`     |
//! | version       | u32 = 1       |
//! | n_samples     | u32           |
//! | m             | u32           |
//! | n_rx          | u32           |
//! | n_ap          | u32           |
//! | env_tag_len   | u8 (≤ 32)     |
//! | env_tag       | UTF-8 bytes   |
//!
//! followed by `n_samples` records of `x: f64, y: f64` and then
//! `m * n_rx * n_ap` pairs `re: f32, im: f32` in `[ap][rx][subcarrier]` order.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::csi::{CsiSample, Dataset, Location, TensorDims};
use crate::{Error, Result};

pub const CSID_MAGIC: [u8; 4] = *b"CSID";
pub const CSID_VERSION: u32 = 1;
pub const MAX_ENV_TAG_LEN: usize = 32;

/// Bytes of the fixed part of the header (without the env tag).
pub const CSID_FIXED_HEADER_LEN: usize = 4 + 4 * 5 + 1;

pub fn csid_header_len(env_tag: &str) -> usize {
    CSID_FIXED_HEADER_LEN + env_tag.len()
}

/// Bytes per stored sample: 16 for the label plus 8 per complex entry.
pub fn csid_record_len(dims: &TensorDims) -> usize {
    16 + 8 * dims.entries()
}

pub fn csid_file_len(dims: &TensorDims, env_tag: &str, n_samples: usize) -> usize {
    csid_header_len(env_tag) + n_samples * csid_record_len(dims)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsidHeader {
    pub n_samples: u32,
    pub dims: TensorDims,
    pub env_tag: String,
}

fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::Precondition(format!("{what} = {value} exceeds u32")))
}

/// Writes `dataset` in `.csid` form and returns the number of bytes emitted.
pub fn write_csid<W: Write>(dataset: &Dataset, sink: W) -> Result<u64> {
    dataset.check()?;
    let tag = dataset.env_tag().as_bytes();
    if tag.len() > MAX_ENV_TAG_LEN {
        return Err(Error::Precondition(format!(
            "env tag is {} bytes, at most {MAX_ENV_TAG_LEN} allowed",
            tag.len()
        )));
    }
    let dims = dataset.dims();
    let mut w = BufWriter::new(sink);
    w.write_all(&CSID_MAGIC)?;
    w.write_all(&CSID_VERSION.to_le_bytes())?;
    for v in [
        to_u32(dataset.len(), "n_samples")?,
        to_u32(dims.n_subcarriers(), "m")?,
        to_u32(dims.n_rx(), "n_rx")?,
        to_u32(dims.n_ap(), "n_ap")?,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[tag.len() as u8])?;
    w.write_all(tag)?;

    let mut record = Vec::with_capacity(csid_record_len(dims));
    for s in dataset.samples() {
        record.clear();
        record.extend_from_slice(&s.label.x.to_le_bytes());
        record.extend_from_slice(&s.label.y.to_le_bytes());
        for z in &s.csi {
            record.extend_from_slice(&z.re.to_le_bytes());
            record.extend_from_slice(&z.im.to_le_bytes());
        }
        w.write_all(&record)?;
    }
    w.flush()?;
    Ok(csid_file_len(dims, dataset.env_tag(), dataset.len()) as u64)
}

/// Reads as many bytes as available up to `buf.len()`; returns the count.
fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn read_header<R: Read>(r: &mut R) -> Result<CsidHeader> {
    let mut fixed = [0u8; CSID_FIXED_HEADER_LEN];
    let got = fill(r, &mut fixed)?;
    if got < fixed.len() {
        return Err(Error::Format(format!(
            "truncated header: expected at least {} bytes, got {got}",
            fixed.len()
        )));
    }
    if fixed[0..4] != CSID_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"CSID\"",
            String::from_utf8_lossy(&fixed[0..4])
        )));
    }
    let word = |i: usize| u32::from_le_bytes(fixed[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != CSID_VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {CSID_VERSION}")));
    }
    let n_samples = word(1);
    let dims = TensorDims::new(word(2) as usize, word(3) as usize, word(4) as usize)
        .map_err(|e| Error::Format(e.to_string()))?;
    let tag_len = fixed[CSID_FIXED_HEADER_LEN - 1] as usize;
    if tag_len > MAX_ENV_TAG_LEN {
        return Err(Error::Format(format!("env tag length {tag_len} exceeds {MAX_ENV_TAG_LEN}")));
    }
    let mut tag = vec![0u8; tag_len];
    let got = fill(r, &mut tag)?;
    if got < tag_len {
        return Err(Error::Format(format!(
            "truncated header: expected {} bytes, got {}",
            CSID_FIXED_HEADER_LEN + tag_len,
            CSID_FIXED_HEADER_LEN + got
        )));
    }
    let env_tag = String::from_utf8(tag).map_err(|_| Error::Format("env tag is not UTF-8".into()))?;
    Ok(CsidHeader { n_samples, dims, env_tag })
}

/// Inverse of [`write_csid`].
pub fn read_csid<R: Read>(source: R) -> Result<Dataset> {
    let mut r = BufReader::new(source);
    let header = read_header(&mut r)?;
    let dims = header.dims;
    let n = header.n_samples as usize;
    let header_len = csid_header_len(&header.env_tag);
    let record_len = csid_record_len(&dims);
    let expected_total = csid_file_len(&dims, &header.env_tag, n);

    let mut samples = Vec::with_capacity(n);
    let mut record = vec![0u8; record_len];
    for i in 0..n {
        let got = fill(&mut r, &mut record)?;
        if got < record_len {
            return Err(Error::Format(format!(
                "truncated payload: expected {expected_total} bytes, got {} (stopped in sample {i})",
                header_len + i * record_len + got
            )));
        }
        let f64_at = |o: usize| f64::from_le_bytes(record[o..o + 8].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(record[o..o + 4].try_into().unwrap());
        let label = Location::new(f64_at(0), f64_at(8));
        if !label.is_finite() {
            return Err(Error::Data { sample: i, message: "non-finite label".into() });
        }
        let mut csi = Vec::with_capacity(dims.entries());
        for k in 0..dims.entries() {
            let z = Complex32::new(f32_at(16 + 8 * k), f32_at(20 + 8 * k));
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::Data {
                    sample: i,
                    message: format!("non-finite CSI entry at flat index {k}"),
                });
            }
            csi.push(z);
        }
        samples.push(CsiSample::new(csi, label));
    }
    let mut probe = [0u8; 1];
    if fill(&mut r, &mut probe)? != 0 {
        return Err(Error::Format(format!(
            "trailing bytes after {expected_total}-byte payload"
        )));
    }
    let ds = Dataset::new(dims, header.env_tag, samples);
    ds.check()?;
    Ok(ds)
}

pub fn write_csid_file(dataset: &Dataset, path: impl AsRef<Path>) -> Result<u64> {
    write_csid(dataset, File::create(path)?)
}

pub fn read_csid_file(path: impl AsRef<Path>) -> Result<Dataset> {
    read_csid(File::open(path)?)
}

/// One axis of an externally supplied 4-D CSI array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Sample,
    Subcarrier,
    Rx,
    Ap,
}

impl Axis {
    fn letter(self) -> char {
        match self {
            Axis::Sample => 'n',
            Axis::Subcarrier => 'm',
            Axis::Rx => 'r',
            Axis::Ap => 'a',
        }
    }
}

/// Axis order of a flat raw array, outermost first (the last axis varies fastest).
///
/// Written as four letters: `n` sample, `m` subcarrier, `r` rx antenna, `a` AP.
/// The canonical `.csid` order is `narm`; a NumPy array shaped
/// `N x M x N_RX x N_AP` in C order is `nmra`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisOrder([Axis; 4]);

impl AxisOrder {
    pub const CANONICAL: AxisOrder = AxisOrder([Axis::Sample, Axis::Ap, Axis::Rx, Axis::Subcarrier]);

    pub fn new(axes: [Axis; 4]) -> Result<Self> {
        for a in [Axis::Sample, Axis::Subcarrier, Axis::Rx, Axis::Ap] {
            if axes.iter().filter(|&&b| b == a).count() != 1 {
                return Err(Error::Config(format!("axis order must use each axis once: {axes:?}")));
            }
        }
        Ok(Self(axes))
    }

    pub fn axes(&self) -> [Axis; 4] {
        self.0
    }

    /// All 24 permutations.
    pub fn all() -> Vec<AxisOrder> {
        let axes = [Axis::Sample, Axis::Subcarrier, Axis::Rx, Axis::Ap];
        let mut out = Vec::with_capacity(24);
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        if let Ok(o) = AxisOrder::new([axes[a], axes[b], axes[c], axes[d]]) {
                            out.push(o);
                        }
                    }
                }
            }
        }
        out
    }
}

impl FromStr for AxisOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.trim().chars().collect();
        if chars.len() != 4 {
            return Err(Error::Config(format!("axis order {s:?} must have 4 letters from n,m,r,a")));
        }
        let mut axes = [Axis::Sample; 4];
        for (slot, c) in axes.iter_mut().zip(chars) {
            *slot = match c.to_ascii_lowercase() {
                'n' => Axis::Sample,
                'm' => Axis::Subcarrier,
                'r' => Axis::Rx,
                'a' => Axis::Ap,
                other => return Err(Error::Config(format!("unknown axis letter {other:?}"))),
            };
        }
        AxisOrder::new(axes)
    }
}

impl fmt::Display for AxisOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in self.0 {
            write!(f, "{}", a.letter())?;
        }
        Ok(())
    }
}

/// Reorders a flat raw CSI array into a canonical dataset.
///
/// `labels` is flat `x0, y0, x1, y1, ...`; the sample count is taken from it.
pub fn ingest_raw(
    values: &[Complex32],
    labels: &[f64],
    dims: TensorDims,
    env_tag: &str,
    input_order: AxisOrder,
) -> Result<Dataset> {
    if !labels.len().is_multiple_of(2) {
        return Err(Error::Dimension(format!("labels length {} is odd", labels.len())));
    }
    let n = labels.len() / 2;
    if values.len() != n * dims.entries() {
        return Err(Error::Dimension(format!(
            "{} complex values for {n} samples of dims {dims}, expected {}",
            values.len(),
            n * dims.entries()
        )));
    }

    let extent = |a: Axis| match a {
        Axis::Sample => n,
        Axis::Subcarrier => dims.n_subcarriers(),
        Axis::Rx => dims.n_rx(),
        Axis::Ap => dims.n_ap(),
    };
    // row-major strides of the input layout
    let axes = input_order.axes();
    let mut strides = [0usize; 4];
    let mut acc = 1;
    for k in (0..4).rev() {
        strides[k] = acc;
        acc *= extent(axes[k]);
    }
    let stride_of = |a: Axis| strides[axes.iter().position(|&b| b == a).unwrap()];
    let (s_n, s_m, s_r, s_a) = (
        stride_of(Axis::Sample),
        stride_of(Axis::Subcarrier),
        stride_of(Axis::Rx),
        stride_of(Axis::Ap),
    );

    let samples = (0..n)
        .map(|i| {
            let mut csi = Vec::with_capacity(dims.entries());
            for ap in 0..dims.n_ap() {
                for rx in 0..dims.n_rx() {
                    for m in 0..dims.n_subcarriers() {
                        csi.push(values[i * s_n + ap * s_a + rx * s_r + m * s_m]);
                    }
                }
            }
            CsiSample::new(csi, Location::new(labels[2 * i], labels[2 * i + 1]))
        })
        .collect();
    let ds = Dataset::new(dims, env_tag, samples);
    ds.check()?;
    Ok(ds)
}

/// One cell of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub environment: String,
    pub regime: String,
    pub multiple: f64,
    pub method: String,
    /// Squared meters.
    pub test_mse: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// Picks the format from a file extension (`.json` → JSON, otherwise CSV).
    pub fn from_path(path: &Path) -> ReportFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

pub const REPORT_COLUMNS: [&str; 6] = ["environment", "regime", "multiple", "method", "test_mse", "seed"];

struct CountingWriter<W> {
    inner: W,
    count: u64,
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.count += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Writes the results table; MSE values carry 6 decimals.
pub fn write_report<W: Write>(rows: &[ReportRow], sink: W, format: ReportFormat) -> Result<u64> {
    if rows.is_empty() {
        return Err(Error::Precondition("report has no rows".into()));
    }
    for r in rows {
        if !(r.test_mse >= 0.0) || !(r.multiple >= 1.0) {
            return Err(Error::Precondition(format!(
                "invalid row: test_mse={} multiple={}",
                r.test_mse, r.multiple
            )));
        }
    }
    let mut out = CountingWriter { inner: sink, count: 0 };
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(REPORT_COLUMNS).map_err(csv_error)?;
            for r in rows {
                w.write_record([
                    r.environment.clone(),
                    r.regime.clone(),
                    r.multiple.to_string(),
                    r.method.clone(),
                    format!("{:.6}", r.test_mse),
                    r.seed.to_string(),
                ])
                .map_err(csv_error)?;
            }
            w.flush()?;
        }
        ReportFormat::Json => {
            out.write_all(b"[\n")?;
            for (i, r) in rows.iter().enumerate() {
                let sep = if i + 1 == rows.len() { "" } else { "," };
                writeln!(
                    out,
                    "  {{\"environment\": {}, \"regime\": {}, \"multiple\": {}, \"method\": {}, \"test_mse\": {:.6}, \"seed\": {}}}{sep}",
                    serde_json::to_string(&r.environment).unwrap(),
                    serde_json::to_string(&r.regime).unwrap(),
                    r.multiple,
                    serde_json::to_string(&r.method).unwrap(),
                    r.test_mse,
                    r.seed,
                )?;
            }
            out.write_all(b"]\n")?;
        }
    }
    out.flush()?;
    Ok(out.count)
}

pub fn read_report<R: Read>(source: R, format: ReportFormat) -> Result<Vec<ReportRow>> {
    match format {
        ReportFormat::Json => {
            serde_json::from_reader(source).map_err(|e| Error::Format(format!("report JSON: {e}")))
        }
        ReportFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(source);
            let header = rdr.headers().map_err(csv_error)?.clone();
            if header.iter().ne(REPORT_COLUMNS) {
                return Err(Error::Format(format!("unexpected report header {header:?}")));
            }
            rdr.deserialize().map(|r| r.map_err(csv_error)).collect()
        }
    }
}

pub fn write_report_file(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    write_report(rows, File::create(path)?, ReportFormat::from_path(path))
}

pub fn read_report_file(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    read_report(File::open(path)?, ReportFormat::from_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dims: TensorDims, n: usize, tag: &str) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let csi = (0..dims.entries())
                    .map(|k| Complex32::new(k as f32 * 0.5, -(i as f32)))
                    .collect();
                CsiSample::new(csi, Location::new(1.25 * i as f64, 3.0))
            })
            .collect();
        Dataset::new(dims, tag, samples)
    }

    #[test]
    fn single_entry_payload_is_24_bytes() {
        let ds = tiny(TensorDims::new(1, 1, 1).unwrap(), 1, "LOS");
        let mut buf = Vec::new();
        let n = write_csid(&ds, &mut buf).unwrap();
        assert_eq!(n as usize, buf.len());
        assert_eq!(buf.len() - csid_header_len("LOS"), 24);
        assert_eq!(&buf[..4], b"CSID");
    }

    #[test]
    fn wild_sized_record() {
        assert_eq!(csid_record_len(&TensorDims::new(234, 4, 4).unwrap()), 29968);
    }

    #[test]
    fn header_bytes_are_exact() {
        let ds = tiny(TensorDims::new(2, 3, 4).unwrap(), 5, "NLOS");
        let mut buf = Vec::new();
        write_csid(&ds, &mut buf).unwrap();
        let mut expected = b"CSID".to_vec();
        for v in [1u32, 5, 2, 3, 4] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.push(4);
        expected.extend_from_slice(b"NLOS");
        assert_eq!(&buf[..expected.len()], expected.as_slice());
        // first label x of sample 0 then y
        let o = expected.len();
        assert_eq!(f64::from_le_bytes(buf[o..o + 8].try_into().unwrap()), 0.0);
        assert_eq!(f64::from_le_bytes(buf[o + 8..o + 16].try_into().unwrap()), 3.0);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let ds = tiny(TensorDims::new(1, 1, 1).unwrap(), 1, "x");
        let mut buf = Vec::new();
        write_csid(&ds, &mut buf).unwrap();
        buf[3] = b'X';
        assert!(matches!(read_csid(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn bad_version_is_a_format_error() {
        let ds = tiny(TensorDims::new(1, 1, 1).unwrap(), 1, "x");
        let mut buf = Vec::new();
        write_csid(&ds, &mut buf).unwrap();
        buf[4] = 2;
        assert!(matches!(read_csid(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_names_expected_and_actual_length() {
        let ds = tiny(TensorDims::new(2, 2, 2).unwrap(), 3, "x");
        let mut buf = Vec::new();
        write_csid(&ds, &mut buf).unwrap();
        let full = buf.len();
        buf.truncate(full - 10);
        match read_csid(buf.as_slice()) {
            Err(Error::Format(msg)) => {
                assert!(msg.contains(&full.to_string()), "{msg}");
                assert!(msg.contains(&(full - 10).to_string()), "{msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn nan_payload_is_a_data_error_with_index() {
        let dims = TensorDims::new(1, 1, 2).unwrap();
        let ds = tiny(dims, 3, "x");
        let mut buf = Vec::new();
        write_csid(&ds, &mut buf).unwrap();
        let o = csid_header_len("x") + 2 * csid_record_len(&dims) + 16 + 8 + 4;
        buf[o..o + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_csid(buf.as_slice()), Err(Error::Data { sample: 2, .. })));
    }

    #[test]
    fn invalid_dataset_and_long_tag_are_rejected_on_write() {
        let ds = tiny(TensorDims::new(1, 1, 1).unwrap(), 1, &"t".repeat(33));
        assert!(matches!(write_csid(&ds, Vec::new()), Err(Error::Precondition(_))));
        let ds = Dataset::new(TensorDims::new(1, 1, 1).unwrap(), "x", vec![]);
        assert!(write_csid(&ds, Vec::new()).is_err());
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let ds = tiny(TensorDims::new(1, 1, 1).unwrap(), 2, "x");
        let mut buf = Vec::new();
        write_csid(&ds, &mut buf).unwrap();
        buf.push(0);
        assert!(matches!(read_csid(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn axis_order_parsing() {
        assert_eq!("narm".parse::<AxisOrder>().unwrap(), AxisOrder::CANONICAL);
        assert_eq!(AxisOrder::CANONICAL.to_string(), "narm");
        assert!("nnrm".parse::<AxisOrder>().is_err());
        assert!("nar".parse::<AxisOrder>().is_err());
        assert_eq!(AxisOrder::all().len(), 24);
    }

    #[test]
    fn ingest_single_entry_any_order() {
        let dims = TensorDims::new(1, 1, 1).unwrap();
        let values = [Complex32::new(1.0, 2.0), Complex32::new(3.0, 4.0)];
        let labels = [0.0, 1.0, 2.0, 3.0];
        for order in AxisOrder::all() {
            let ds = ingest_raw(&values, &labels, dims, "x", order).unwrap();
            assert_eq!(ds.len(), 2);
            assert_eq!(ds.samples()[1].csi, vec![Complex32::new(3.0, 4.0)]);
            assert_eq!(ds.samples()[1].label, Location::new(2.0, 3.0));
        }
    }

    #[test]
    fn ingest_subcarrier_major() {
        // dims (M=2, N_RX=1, N_AP=2), one sample, input order n,m,r,a
        let dims = TensorDims::new(2, 1, 2).unwrap();
        let code = |m: usize, a: usize| Complex32::new(m as f32, a as f32);
        let mut values = Vec::new();
        for m in 0..2 {
            for a in 0..2 {
                values.push(code(m, a));
            }
        }
        let ds = ingest_raw(&values, &[0.0, 0.0], dims, "x", "nmra".parse().unwrap()).unwrap();
        assert_eq!(ds.samples()[0].csi, vec![code(0, 0), code(1, 0), code(0, 1), code(1, 1)]);
    }

    #[test]
    fn ingest_length_errors() {
        let dims = TensorDims::new(1, 1, 1).unwrap();
        let values = [Complex32::new(1.0, 2.0), Complex32::new(3.0, 4.0)];
        assert!(matches!(
            ingest_raw(&values, &[0.0, 1.0, 2.0], dims, "x", AxisOrder::CANONICAL),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            ingest_raw(&values, &[0.0, 1.0], dims, "x", AxisOrder::CANONICAL),
            Err(Error::Dimension(_))
        ));
    }

    fn row(mse: f64) -> ReportRow {
        ReportRow {
            environment: "NLOS".into(),
            regime: "small".into(),
            multiple: 1.0,
            method: "none".into(),
            test_mse: mse,
            seed: 42,
        }
    }

    #[test]
    fn csv_row_matches_table_precision() {
        let mut buf = Vec::new();
        let n = write_report(&[row(5.204818)], &mut buf, ReportFormat::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(n as usize, text.len());
        assert_eq!(text, "environment,regime,multiple,method,test_mse,seed\nNLOS,small,1,none,5.204818,42\n");
    }

    #[test]
    fn empty_report_is_rejected() {
        assert!(matches!(write_report(&[], Vec::new(), ReportFormat::Csv), Err(Error::Precondition(_))));
        assert!(matches!(write_report(&[], Vec::new(), ReportFormat::Json), Err(Error::Precondition(_))));
    }

    #[test]
    fn json_parses_back() {
        let mut rows = vec![row(5.204818), row(1.34924)];
        rows[1].multiple = 5.0;
        rows[1].method = "phase".into();
        rows[1].environment = "quote\"d".into();
        let mut buf = Vec::new();
        write_report(&rows, &mut buf, ReportFormat::Json).unwrap();
        let back = read_report(buf.as_slice(), ReportFormat::Json).unwrap();
        assert_eq!(back, rows);
        let value: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let keys: Vec<&String> = value[0].as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 6);
        for k in REPORT_COLUMNS {
            assert!(value[0].get(k).is_some());
        }
    }

    #[test]
    fn csv_parses_back() {
        let rows = vec![row(0.5), row(2.25)];
        let mut buf = Vec::new();
        write_report(&rows, &mut buf, ReportFormat::Csv).unwrap();
        assert_eq!(read_report(buf.as_slice(), ReportFormat::Csv).unwrap(), rows);
    }
}
