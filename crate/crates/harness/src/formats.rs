//! On-disk formats: binary feature files, feature CSV, noisy-label CSV and
//! model checkpoints.
//!
//! Feature file layout (all little-endian):
//!
//! ```text
//! "PRFT" | version u32 | N u64 | d u64 | label width u8 | N*d f64 | N labels
//! ```
//!
//! Checkpoint layout:
//!
//! ```text
//! "PRCK" | version u32 | input u64 | hidden u64 | output u64
//!        | per layer: weights f64[out*in], bias f64[out]
//!        | bank flag u8 [capacity u64 | dim u64 | len u64 | per entry: label u64, f64[dim]]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use prism_core::dataeval::{Dataset, Provenance, Split};
use prism_core::memory_bank::MemoryBank;
use prism_core::model::{Dense, EmbeddingNet, Layout};
use prism_core::noise::NoisyLabeling;
use prism_core::{FeatureMatrix, FeatureVector};

use crate::HarnessError;

const FEATURE_MAGIC: &[u8; 4] = b"PRFT";
const CHECKPOINT_MAGIC: &[u8; 4] = b"PRCK";
const VERSION: u32 = 1;

fn fmt_err(path: &Path, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Format(format!("{}: {msg}", path.display()))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }

    fn u8(&mut self) -> std::io::Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> std::io::Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> std::io::Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> std::io::Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }

    fn at_end(&mut self) -> std::io::Result<bool> {
        let mut b = [0u8; 1];
        Ok(self.inner.read(&mut b)? == 0)
    }
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn label_width(max: usize) -> u8 {
    match max {
        0..=0xff => 1,
        0x100..=0xffff => 2,
        0x1_0000..=0xffff_ffff => 4,
        _ => 8,
    }
}

pub fn write_features(path: &Path, features: &FeatureMatrix, labels: &[usize]) -> Result<(), HarnessError> {
    if features.rows() != labels.len() {
        return Err(fmt_err(path, "feature and label counts differ"));
    }
    let width = label_width(labels.iter().copied().max().unwrap_or(0));
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(features.rows() as u64).to_le_bytes())?;
    w.write_all(&(features.cols() as u64).to_le_bytes())?;
    w.write_all(&[width])?;
    write_f64s(&mut w, features.as_slice())?;
    for &y in labels {
        w.write_all(&(y as u64).to_le_bytes()[..width as usize])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<(FeatureMatrix, Vec<usize>), HarnessError> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    let e = |m: &str| fmt_err(path, m);
    if &r.bytes::<4>().map_err(|_| e("truncated header"))? != FEATURE_MAGIC {
        return Err(e("not a feature file"));
    }
    let version = r.u32().map_err(|_| e("truncated header"))?;
    if version != VERSION {
        return Err(fmt_err(path, format!("unsupported version {version}")));
    }
    let n = r.u64().map_err(|_| e("truncated header"))? as usize;
    let d = r.u64().map_err(|_| e("truncated header"))? as usize;
    let width = r.u8().map_err(|_| e("truncated header"))? as usize;
    if ![1, 2, 4, 8].contains(&width) {
        return Err(fmt_err(path, format!("bad label width {width}")));
    }
    let data = r.f64s(n * d).map_err(|_| e("truncated features"))?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut b = [0u8; 8];
        r.inner.read_exact(&mut b[..width]).map_err(|_| e("truncated labels"))?;
        labels.push(u64::from_le_bytes(b) as usize);
    }
    if !r.at_end()? {
        return Err(e("trailing bytes"));
    }
    Ok((FeatureMatrix::from_vec(n, d, data).map_err(|err| fmt_err(path, err))?, labels))
}

/// Loads a feature file as a dataset whose class universe is `max label + 1`.
pub fn read_dataset(path: &Path, split: Split) -> Result<Dataset, HarnessError> {
    let (features, labels) = if path.extension().is_some_and(|e| e == "csv") {
        read_features_csv(path)?
    } else {
        read_features(path)?
    };
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    Dataset::new(
        features,
        labels,
        classes,
        split,
        Provenance::File(path.display().to_string()),
    )
    .map_err(|err| fmt_err(path, err))
}

/// `label,x0,x1,...` with a header row.
pub fn write_features_csv(path: &Path, features: &FeatureMatrix, labels: &[usize]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..features.cols()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (row, y) in features.iter_rows().zip(labels) {
        let mut rec = vec![y.to_string()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv(path: &Path) -> Result<(FeatureMatrix, Vec<usize>), HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let cols = r.headers()?.len();
    if cols < 2 {
        return Err(fmt_err(path, "need a label column and at least one feature column"));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| fmt_err(path, format!("row {}: bad {what}", line + 1));
        labels.push(rec[0].trim().parse::<usize>().map_err(|_| bad("label"))?);
        for field in rec.iter().skip(1) {
            data.push(field.trim().parse::<f64>().map_err(|_| bad("feature"))?);
        }
    }
    let m = FeatureMatrix::from_vec(labels.len(), cols - 1, data).map_err(|err| fmt_err(path, err))?;
    Ok((m, labels))
}

/// `sample_id,original_label,noisy_label,corrupted_flag`.
pub fn write_noisy_labels(path: &Path, noisy: &NoisyLabeling) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "original_label", "noisy_label", "corrupted_flag"])?;
    for i in 0..noisy.len() {
        w.write_record([
            i.to_string(),
            noisy.original_labels[i].to_string(),
            noisy.labels[i].to_string(),
            u8::from(noisy.corrupted_mask[i]).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_noisy_labels(path: &Path) -> Result<NoisyLabeling, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = NoisyLabeling {
        labels: Vec::new(),
        corrupted_mask: Vec::new(),
        original_labels: Vec::new(),
    };
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || fmt_err(path, format!("row {}: malformed", line + 1));
        if rec.len() != 4 || rec[0].parse::<usize>().map_err(|_| bad())? != line {
            return Err(bad());
        }
        out.original_labels.push(rec[1].parse().map_err(|_| bad())?);
        out.labels.push(rec[2].parse().map_err(|_| bad())?);
        out.corrupted_mask.push(match &rec[3] {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        });
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, net: &EmbeddingNet, bank: Option<&MemoryBank>) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    let l = net.layout();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [l.input_dim, l.hidden_dim, l.output_dim] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for layer in net.layers() {
        write_f64s(&mut w, &layer.weight)?;
        write_f64s(&mut w, &layer.bias)?;
    }
    match bank {
        None => w.write_all(&[0])?,
        Some(b) => {
            w.write_all(&[1])?;
            for v in [b.capacity(), b.dim(), b.len()] {
                w.write_all(&(v as u64).to_le_bytes())?;
            }
            for e in b.entries() {
                w.write_all(&(e.label as u64).to_le_bytes())?;
                write_f64s(&mut w, &e.feature)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(EmbeddingNet, Option<MemoryBank>), HarnessError> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    let e = |m: &str| fmt_err(path, m);
    if &r.bytes::<4>().map_err(|_| e("truncated"))? != CHECKPOINT_MAGIC {
        return Err(e("not a checkpoint"));
    }
    if r.u32().map_err(|_| e("truncated"))? != VERSION {
        return Err(e("unsupported checkpoint version"));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.u64().map_err(|_| e("truncated"))? as usize;
    }
    let layout = Layout {
        input_dim: dims[0],
        hidden_dim: dims[1],
        output_dim: dims[2],
    };
    let mut layers = Vec::new();
    for (i, o) in layout.layer_dims() {
        let mut d = Dense::zeros(i, o);
        d.weight = r.f64s(i * o).map_err(|_| e("truncated weights"))?;
        d.bias = r.f64s(o).map_err(|_| e("truncated weights"))?;
        layers.push(d);
    }
    let net = EmbeddingNet::from_layers(layout, layers).map_err(|err| fmt_err(path, err))?;
    let bank = match r.u8().map_err(|_| e("truncated"))? {
        0 => None,
        1 => {
            let cap = r.u64().map_err(|_| e("truncated bank"))? as usize;
            let dim = r.u64().map_err(|_| e("truncated bank"))? as usize;
            let len = r.u64().map_err(|_| e("truncated bank"))? as usize;
            let mut entries = Vec::with_capacity(len);
            for _ in 0..len {
                let label = r.u64().map_err(|_| e("truncated bank"))? as usize;
                entries.push((FeatureVector::new(r.f64s(dim).map_err(|_| e("truncated bank"))?), label));
            }
            Some(MemoryBank::from_entries(cap, dim, entries).map_err(|err| fmt_err(path, err))?)
        }
        _ => return Err(e("bad bank flag")),
    };
    if !r.at_end()? {
        return Err(e("trailing bytes"));
    }
    Ok((net, bank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use prism_core::SeededRng;

    fn sample(n: usize, d: usize, classes: usize) -> (FeatureMatrix, Vec<usize>) {
        let mut rng = SeededRng::new(n as u64);
        (
            FeatureMatrix::from_vec(n, d, (0..n * d).map(|_| rng.gaussian()).collect()).unwrap(),
            (0..n).map(|_| rng.below(classes)).collect(),
        )
    }

    #[test]
    fn binary_round_trip_all_widths() {
        let dir = tempfile::tempdir().unwrap();
        for classes in [3, 300, 70_000] {
            let (f, l) = sample(20, 3, classes);
            let p = dir.path().join("f.bin");
            write_features(&p, &f, &l).unwrap();
            let (f2, l2) = read_features(&p).unwrap();
            assert_eq!(f2, f);
            assert_eq!(l2, l);
        }
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let f = FeatureMatrix::from_rows(2, [[1.0, 2.0]]).unwrap();
        write_features(&p, &f, &[5]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"PRFT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(bytes[24], 1);
        assert_eq!(f64::from_le_bytes(bytes[25..33].try_into().unwrap()), 1.0);
        assert_eq!(bytes[41], 5);
        assert_eq!(bytes.len(), 42);
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let (f, l) = sample(4, 2, 3);
        write_features(&p, &f, &l).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_features(&p).is_err());
        std::fs::write(&p, b"NOPE").unwrap();
        assert!(read_features(&p).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (f, l) = sample(15, 4, 5);
        let p = dir.path().join("f.csv");
        write_features_csv(&p, &f, &l).unwrap();
        let (f2, l2) = read_features_csv(&p).unwrap();
        assert_eq!(f2, f);
        assert_eq!(l2, l);
        let ds = read_dataset(&p, Split::Test).unwrap();
        assert_eq!(ds.len(), 15);
    }

    #[test]
    fn noisy_label_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let labels = vec![0, 1, 2, 0, 1];
        let noisy = prism_core::noise::symmetric_noise(&labels, 3, 0.4, &mut SeededRng::new(0)).unwrap();
        let p = dir.path().join("n.csv");
        write_noisy_labels(&p, &noisy).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("sample_id,original_label,noisy_label,corrupted_flag\n"));
        assert_eq!(read_noisy_labels(&p).unwrap(), noisy);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeededRng::new(1);
        let net = EmbeddingNet::new(Layout::mlp(5, 7, 3), &mut rng).unwrap();
        let mut bank = MemoryBank::new(4, 3).unwrap();
        let (f, l) = sample(6, 3, 2);
        bank.enqueue_clean(f.iter_rows().zip(l.iter().copied())).unwrap();
        let p = dir.path().join("c.bin");
        write_checkpoint(&p, &net, Some(&bank)).unwrap();
        let (net2, bank2) = read_checkpoint(&p).unwrap();
        assert_eq!(net2, net);
        let bank2 = bank2.unwrap();
        assert_eq!(bank2.len(), 4);
        let a: Vec<_> = bank.entries().cloned().collect();
        let b: Vec<_> = bank2.entries().cloned().collect();
        assert_eq!(a, b);
        write_checkpoint(&p, &net, None).unwrap();
        assert!(read_checkpoint(&p).unwrap().1.is_none());
    }
}
