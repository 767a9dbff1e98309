//! JSONL datasets, the QDITEMB1 embedding matrix, and result JSON.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::error::{QditError, Result};
use crate::types::{DataPoint, Dataset, SelectionResult};

pub const EMB_MAGIC: &[u8; 8] = b"QDITEMB1";
pub const EMB_HEADER_LEN: u64 = 16;

/// Writes `path` through a temporary file in the same directory, renamed
/// into place only after `write` succeeds.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let ctx = || format!("writing {}", path.display());
    let mut tmp = NamedTempFile::new_in(&dir).map_err(|e| QditError::io(ctx(), e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w).map_err(|e| QditError::io(ctx(), e))?;
        w.flush().map_err(|e| QditError::io(ctx(), e))?;
    }
    tmp.persist(path)
        .map_err(|e| QditError::io(ctx(), e.error))?;
    Ok(())
}

/// One JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonlRecord {
    pub id: String,
    pub quality: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// Parses every non-blank line. Returns `(line_number, record)` pairs, 1-based.
pub fn read_records(path: &Path) -> Result<Vec<(usize, JsonlRecord)>> {
    let file =
        File::open(path).map_err(|e| QditError::io(format!("opening {}", path.display()), e))?;
    let parse_err = |line: usize, message: String| QditError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(parse_err(lineno, format!("duplicate id {:?}", rec.id)));
        }
        if !rec.quality.is_finite() {
            return Err(parse_err(lineno, "quality is not finite".into()));
        }
        out.push((lineno, rec));
    }
    if out.is_empty() {
        return Err(parse_err(0, "no records".into()));
    }
    Ok(out)
}

/// Loads a dataset whose records all carry inline embeddings.
pub fn load_jsonl(path: &Path) -> Result<Dataset> {
    load_dataset(path, None)
}

/// Loads a dataset, taking embeddings from `embeddings` when given and from
/// the records otherwise.
pub fn load_dataset(path: &Path, embeddings: Option<&Path>) -> Result<Dataset> {
    let records = read_records(path)?;
    let parse_err = |line: usize, message: String| QditError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let inline = records
        .iter()
        .filter(|(_, r)| r.embedding.is_some())
        .count();
    let matrix = match embeddings {
        Some(bin) => {
            if inline > 0 {
                let (line, _) = records.iter().find(|(_, r)| r.embedding.is_some()).unwrap();
                return Err(parse_err(
                    *line,
                    "inline embedding present while an embeddings file was supplied".into(),
                ));
            }
            Some(load_embeddings_bin(bin, Some(records.len()))?)
        }
        None => {
            if inline == 0 {
                return Err(parse_err(
                    records[0].0,
                    "no inline embeddings and no embeddings file supplied".into(),
                ));
            }
            if inline != records.len() {
                let (line, _) = records.iter().find(|(_, r)| r.embedding.is_none()).unwrap();
                return Err(parse_err(
                    *line,
                    "record lacks an embedding while others have one".into(),
                ));
            }
            None
        }
    };

    let mut dim = None;
    let mut points = Vec::with_capacity(records.len());
    for (row, (line, rec)) in records.into_iter().enumerate() {
        let embedding = match &matrix {
            Some(m) => m.row(row).iter().map(|&x| x as f64).collect(),
            None => rec.embedding.unwrap(),
        };
        let d = *dim.get_or_insert(embedding.len());
        if embedding.len() != d {
            return Err(parse_err(
                line,
                format!("embedding has dimension {}, expected {d}", embedding.len()),
            ));
        }
        if d == 0 {
            return Err(parse_err(line, "embedding is empty".into()));
        }
        if embedding.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(
                line,
                "embedding has a non-finite component".into(),
            ));
        }
        if embedding.iter().all(|&x| x == 0.0) {
            return Err(parse_err(
                line,
                "degenerate embedding: zero-norm vector".into(),
            ));
        }
        points.push(DataPoint {
            id: rec.id,
            text: rec.text.unwrap_or_default(),
            quality: rec.quality,
            embedding,
        });
    }
    Dataset::from_points(points)
}

/// Writes raw qualities and raw embeddings so a reload reproduces them exactly.
pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        for i in 0..dataset.len() {
            let text = dataset.text(i);
            let rec = JsonlRecord {
                id: dataset.id(i).to_string(),
                quality: dataset.raw_quality()[i],
                text: (!text.is_empty()).then(|| text.to_string()),
                embedding: Some(dataset.raw_embedding(i).to_vec()),
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// Row-major `n × dim` matrix of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub n: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * dim {
            return Err(QditError::LengthMismatch {
                left: data.len(),
                right: n * dim,
            });
        }
        Ok(EmbeddingMatrix { n, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Copy with every row scaled to unit length (computed in f64).
    pub fn unit_normalized(&self) -> Result<Self> {
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.n {
            let row = self.row(i);
            let norm = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(QditError::InvalidDataset(format!(
                    "row {i}: degenerate embedding"
                )));
            }
            data.extend(row.iter().map(|&x| (x as f64 / norm) as f32));
        }
        Ok(EmbeddingMatrix {
            n: self.n,
            dim: self.dim,
            data,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(EMB_HEADER_LEN as usize + self.data.len() * 4);
        out.extend_from_slice(EMB_MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }
}

/// Reads a QDITEMB1 file. Values are returned exactly as stored.
pub fn load_embeddings_bin(path: &Path, expected_n: Option<usize>) -> Result<EmbeddingMatrix> {
    let fmt = |offset: u64, message: String| QditError::Format {
        path: path.to_path_buf(),
        offset,
        message,
    };
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| QditError::io(format!("reading {}", path.display()), e))?;
    if bytes.len() < 8 || &bytes[..8] != EMB_MAGIC {
        return Err(fmt(0, "not a QDITEMB1 file".into()));
    }
    if (bytes.len() as u64) < EMB_HEADER_LEN {
        return Err(fmt(bytes.len() as u64, "truncated header".into()));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(fmt(12, "dimension is zero".into()));
    }
    let expected_len = EMB_HEADER_LEN + (n as u64) * (dim as u64) * 4;
    if (bytes.len() as u64) < expected_len {
        return Err(fmt(
            bytes.len() as u64,
            format!("truncated file: expected {expected_len} bytes for n={n}, dim={dim}"),
        ));
    }
    if (bytes.len() as u64) > expected_len {
        return Err(fmt(
            expected_len,
            format!("trailing bytes after {n}x{dim} matrix"),
        ));
    }
    if let Some(want) = expected_n {
        if want != n {
            return Err(fmt(
                8,
                format!("file holds {n} rows but {want} records were loaded"),
            ));
        }
    }
    let mut data = Vec::with_capacity(n * dim);
    for (k, chunk) in bytes[EMB_HEADER_LEN as usize..].chunks_exact(4).enumerate() {
        let x = f32::from_le_bytes(chunk.try_into().unwrap());
        if !x.is_finite() {
            return Err(fmt(
                EMB_HEADER_LEN + 4 * k as u64,
                "non-finite value".into(),
            ));
        }
        data.push(x);
    }
    Ok(EmbeddingMatrix { n, dim, data })
}

pub fn write_embeddings_bin(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    if matrix.n > u32::MAX as usize || matrix.dim > u32::MAX as usize {
        return Err(QditError::InvalidConfig(
            "matrix too large for a QDITEMB1 header".into(),
        ));
    }
    let bytes = matrix.to_bytes();
    atomic_write(path, |w| w.write_all(&bytes))
}

/// On-disk selection result. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub selected_ids: Vec<String>,
    pub selected_indices: Vec<usize>,
    pub alpha: f64,
    pub algorithm: String,
    pub k: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_clusters: Option<usize>,
    pub truncated: bool,
    pub diversity: f64,
    pub mean_quality: f64,
    pub objective_trace: Vec<f64>,
}

impl ResultFile {
    pub fn from_result(result: &SelectionResult, dataset: &Dataset) -> Result<Self> {
        dataset.check_subset(&result.selected)?;
        let c = &result.config;
        Ok(ResultFile {
            selected_ids: result
                .selected
                .iter()
                .map(|&i| dataset.id(i).to_string())
                .collect(),
            selected_indices: result.selected.clone(),
            alpha: c.alpha,
            algorithm: c.algorithm.to_string(),
            k: c.k_select,
            seed: c.seed,
            epsilon: c.epsilon,
            tau: c.tau,
            n_clusters: c.n_clusters,
            truncated: result.truncated,
            diversity: result.diversity,
            mean_quality: result.mean_quality,
            objective_trace: result.objective_trace.clone(),
        })
    }
}

pub fn result_json(result: &SelectionResult, dataset: &Dataset) -> Result<String> {
    let file = ResultFile::from_result(result, dataset)?;
    serde_json::to_string_pretty(&file).map_err(|e| QditError::InvalidConfig(e.to_string()))
}

pub fn write_result(result: &SelectionResult, dataset: &Dataset, path: &Path) -> Result<()> {
    let mut json = result_json(result, dataset)?;
    json.push('\n');
    atomic_write(path, |w| w.write_all(json.as_bytes()))
}

pub fn read_result(path: &Path) -> Result<ResultFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| QditError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| QditError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facility::SimilarityBackend;
    use crate::select::select;
    use crate::types::{Algorithm, SelectionConfig};
    use tempfile::tempdir;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_three_records() {
        let d = tempdir().unwrap();
        let p = write(
            d.path(),
            "a.jsonl",
            "{\"id\":\"a\",\"quality\":2,\"embedding\":[1,0,0,0]}\n\
             {\"id\":\"b\",\"quality\":4,\"text\":\"hi\",\"embedding\":[0,1,0,0]}\n\
             \n\
             {\"id\":\"c\",\"quality\":6,\"embedding\":[0,0,1,1]}\n",
        );
        let ds = load_jsonl(&p).unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 4));
        assert_eq!(ds.normalized_quality(), &[0.0, 0.5, 1.0]);
        assert_eq!(ds.text(1), "hi");
        assert_eq!(ds.ids(), &["a", "b", "c"]);
    }

    fn parse_line(err: QditError) -> usize {
        match err {
            QditError::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn load_errors_name_the_line() {
        let d = tempdir().unwrap();
        let cases = [
            ("{\"id\":\"a\",\"quality\":1,\"embedding\":[1]}\n{\"id\":\"b\",\"embedding\":[1]}\n", 2),
            ("{\"id\":\"a\",\"quality\":1,\"embedding\":[1]}\nnot json\n", 2),
            ("{\"id\":\"a\",\"quality\":1,\"embedding\":[1]}\n{\"id\":\"b\",\"quality\":1}\n", 2),
            ("{\"id\":\"a\",\"quality\":1,\"embedding\":[1]}\n{\"id\":\"a\",\"quality\":1,\"embedding\":[1]}\n", 2),
            ("{\"id\":\"a\",\"quality\":1,\"embedding\":[1,2]}\n\n{\"id\":\"b\",\"quality\":1,\"embedding\":[1]}\n", 3),
            ("{\"id\":\"a\",\"quality\":1,\"embedding\":[0,0]}\n", 1),
        ];
        for (body, line) in cases {
            let p = write(d.path(), "x.jsonl", body);
            assert_eq!(parse_line(load_jsonl(&p).unwrap_err()), line, "{body}");
        }
        let p = write(d.path(), "y.jsonl", "{\"id\":\"a\",\"quality\":1}\n");
        assert!(load_jsonl(&p).is_err());
        assert!(load_jsonl(&d.path().join("missing.jsonl")).is_err());
    }

    #[test]
    fn save_load_is_bit_exact() {
        let ds = crate::testkit::make_synthetic(&crate::testkit::SyntheticSpec::new(
            40,
            5,
            3,
            0.7,
            crate::testkit::QualityMode::UniformRandom,
            4,
        ));
        let d = tempdir().unwrap();
        let p = d.path().join("ds.jsonl");
        save_jsonl(&ds, &p).unwrap();
        let back = load_jsonl(&p).unwrap();
        assert_eq!(back.raw_quality(), ds.raw_quality());
        assert_eq!(back.unit_embeddings(), ds.unit_embeddings());
        for i in 0..ds.len() {
            assert_eq!(back.raw_embedding(i), ds.raw_embedding(i));
        }
    }

    #[test]
    fn bin_format() {
        let d = tempdir().unwrap();
        let m = EmbeddingMatrix::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.6, 0.8]).unwrap();
        let p = d.path().join("e.bin");
        write_embeddings_bin(&m, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 40);
        assert_eq!(load_embeddings_bin(&p, Some(2)).unwrap(), m);
        assert!(load_embeddings_bin(&p, Some(3)).is_err());

        let mut bad = bytes.clone();
        bad[7] = b'9';
        let q = write(d.path(), "bad.bin", "");
        std::fs::write(&q, &bad).unwrap();
        let err = load_embeddings_bin(&q, None).unwrap_err().to_string();
        assert!(err.contains("not a QDITEMB1 file"), "{err}");

        std::fs::write(&q, &bytes[..39]).unwrap();
        assert!(load_embeddings_bin(&q, None)
            .unwrap_err()
            .to_string()
            .contains("truncated"));
        std::fs::write(&q, &bytes[..10]).unwrap();
        assert!(load_embeddings_bin(&q, None).is_err());

        let n = m.unit_normalized().unwrap();
        assert!((n.row(1)[2] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn dataset_with_bin_embeddings() {
        let d = tempdir().unwrap();
        let j = write(
            d.path(),
            "t.jsonl",
            "{\"id\":\"a\",\"quality\":1,\"text\":\"x\"}\n{\"id\":\"b\",\"quality\":2,\"text\":\"y\"}\n",
        );
        let b = d.path().join("t.bin");
        write_embeddings_bin(
            &EmbeddingMatrix::new(2, 2, vec![3.0, 4.0, 0.0, 2.0]).unwrap(),
            &b,
        )
        .unwrap();
        let ds = load_dataset(&j, Some(&b)).unwrap();
        assert_eq!(ds.embedding(0), &[0.6, 0.8]);
        assert_eq!(ds.embedding(1), &[0.0, 1.0]);
        write_embeddings_bin(&EmbeddingMatrix::new(3, 2, vec![1.0; 6]).unwrap(), &b).unwrap();
        assert!(load_dataset(&j, Some(&b)).is_err());
    }

    #[test]
    fn result_round_trip() {
        let ds = crate::testkit::make_synthetic(&crate::testkit::SyntheticSpec::new(
            30,
            4,
            3,
            0.5,
            crate::testkit::QualityMode::UniformRandom,
            9,
        ));
        let backend = SimilarityBackend::dense(&ds);
        let r = select(
            &ds,
            &backend,
            &SelectionConfig::new(Algorithm::Threshold, 3, 0.0),
        )
        .unwrap();
        let d = tempdir().unwrap();
        let p = d.path().join("r.json");
        write_result(&r, &ds, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let keys = [
            "selected_ids",
            "selected_indices",
            "alpha",
            "algorithm",
            "k",
            "seed",
            "tau",
            "truncated",
            "diversity",
            "mean_quality",
            "objective_trace",
        ];
        let pos: Vec<usize> = keys
            .iter()
            .map(|k| text.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(!text.contains("\"epsilon\""));
        let back = read_result(&p).unwrap();
        assert_eq!(back.selected_ids.len(), 3);
        assert_eq!(back.selected_indices, r.selected);
        assert_eq!(back.diversity, r.diversity);
        assert_eq!(back.mean_quality, r.mean_quality);
        assert_eq!(back.objective_trace, r.objective_trace);
        assert_eq!(back.tau, Some(0.5));
    }

    #[test]
    fn atomic_write_leaves_nothing_on_failure() {
        let d = tempdir().unwrap();
        let p = d.path().join("out.txt");
        let r = atomic_write(&p, |w| {
            w.write_all(b"partial")?;
            Err(std::io::Error::other("boom"))
        });
        assert!(r.is_err());
        assert!(!p.exists());
        assert_eq!(std::fs::read_dir(d.path()).unwrap().count(), 0);
    }
}
