use std::path::Path;

use super::{LabeledDataset, Sample};
use crate::error::{Error, Result};

/// Load a CSV with header `f0,…,f{p-1},label,domain`.
///
/// Sample `index` is the data-row position; call
/// [`LabeledDataset::split_by_domain`] to obtain per-domain pools.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let fail = |message: String| Error::Ingestion {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fail(e.to_string()))?;
    let headers = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    let n = headers.len();
    if n < 3 || &headers[n - 2] != "label" || &headers[n - 1] != "domain" {
        return Err(fail(
            "header must be f0,…,f{p-1},label,domain".to_string(),
        ));
    }
    let p = n - 2;
    for (j, h) in headers.iter().take(p).enumerate() {
        if h != format!("f{j}") {
            return Err(fail(format!("column {j} is `{h}`, expected `f{j}`")));
        }
    }

    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fail(e.to_string()))?;
        let line = row + 2;
        let features = record
            .iter()
            .take(p)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| fail(format!("line {line}: `{v}` is not a finite number")))
            })
            .collect::<Result<Vec<_>>>()?;
        let int = |v: &str, what: &str| {
            v.parse::<usize>()
                .map_err(|_| fail(format!("line {line}: {what} `{v}` is not a non-negative integer")))
        };
        samples.push(Sample {
            features,
            label: int(&record[p], "label")?,
            domain: int(&record[p + 1], "domain")?,
            index: row,
        });
    }
    Ok(LabeledDataset {
        input_dim: p,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_and_splits_domains() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "f0,f1,label,domain\n0.5,1,2,0\n-1,2.5,0,1\n3,4,1,0\n").unwrap();
        let data = load_csv(&path).unwrap();
        assert_eq!(data.input_dim, 2);
        assert_eq!(data.samples[1].features, vec![-1.0, 2.5]);
        let pools = data.split_by_domain();
        assert_eq!(pools.len(), 2);
        assert_eq!(pools[0].len(), 2);
        assert_eq!(pools[0].samples[1].index, 1);
        assert_eq!(pools[1].samples[0].label, 0);
    }

    #[test]
    fn bad_header_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x,label,domain\n1,0,0\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Ingestion { .. })));
        std::fs::write(&path, "f0,label,domain\nnan,0,0\n").unwrap();
        assert!(load_csv(&path).unwrap_err().to_string().contains("line 2"));
    }
}
