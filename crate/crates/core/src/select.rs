//! MRMR feature ranking (difference form) on equal-width discretized columns.

use std::fmt::Write as _;
use std::io::{self, Read, Write};

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BINS: usize = 16;
pub const DEFAULT_TAU: f64 = 0.07;

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error("columns differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("bin count must be at least 1")]
    NoBins,
    #[error("no feature scores above tau = {0}; try a lower threshold")]
    EmptySelection(f64),
    #[error("feature name count {names} does not match {cols} columns")]
    Names { names: usize, cols: usize },
    #[error("I/O error")]
    Io(#[from] io::Error),
    #[error("CSV error")]
    Csv(#[from] csv::Error),
    #[error("malformed ranking file: {0}")]
    Malformed(String),
}

/// Map values to `bins` equal-width bins spanning `[min, max]`. Values
/// outside the range fall into the edge bins; a zero-width range puts
/// everything in bin 0.
pub fn discretize_with_range(values: &[f64], bins: usize, min: f64, max: f64) -> Vec<usize> {
    let width = max - min;
    values
        .iter()
        .map(|&v| {
            if !(width > 0.0) || bins <= 1 {
                return 0;
            }
            let b = ((v - min) / width * bins as f64).floor();
            if b < 0.0 {
                0
            } else {
                (b as usize).min(bins - 1)
            }
        })
        .collect()
}

pub fn discretize(values: &[f64], bins: usize) -> Vec<usize> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    discretize_with_range(values, bins, min, max)
}

/// Empirical mutual information in bits between two discrete columns.
pub fn mutual_information(x: &[usize], y: &[usize]) -> Result<f64, SelectError> {
    if x.len() != y.len() {
        return Err(SelectError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(SelectError::TooFewRows(x.len()));
    }
    Ok(mi_unchecked(x, y))
}

fn mi_unchecked(x: &[usize], y: &[usize]) -> f64 {
    let kx = x.iter().max().map_or(0, |m| m + 1);
    let ky = y.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0u64; kx * ky];
    let mut px = vec![0u64; kx];
    let mut py = vec![0u64; ky];
    for (&a, &b) in x.iter().zip(y) {
        joint[a * ky + b] += 1;
        px[a] += 1;
        py[b] += 1;
    }
    let n = x.len() as f64;
    let mut mi = 0.0;
    for a in 0..kx {
        if px[a] == 0 {
            continue;
        }
        for b in 0..ky {
            let c = joint[a * ky + b];
            if c == 0 {
                continue;
            }
            // p(x,y)/(p(x)p(y)) = c·n/(nx·ny)
            mi += (c as f64 / n) * ((c as f64 * n) / (px[a] as f64 * py[b] as f64)).log2();
        }
    }
    mi.max(0.0)
}

/// Shannon entropy in bits.
pub fn entropy(x: &[usize]) -> f64 {
    let k = x.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0u64; k];
    for &v in x {
        counts[v] += 1;
    }
    let n = x.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Counterpart of a sender/receiver feature (`sBytesAvg` ↔ `rBytesAvg`).
pub fn dual_of(name: &str) -> Option<String> {
    let rest = name.get(1..)?;
    match name.as_bytes().first()? {
        b's' => Some(format!("r{rest}")),
        b'r' => Some(format!("s{rest}")),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    /// MID score at the time the feature was picked.
    pub score: f64,
    /// MI with the labels alone.
    pub relevance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrmrRanking {
    /// Greedy selection order.
    pub features: Vec<RankedFeature>,
    pub bins: usize,
    pub pairs: Vec<(String, String)>,
}

impl MrmrRanking {
    pub fn get(&self, name: &str) -> Option<&RankedFeature> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    fn counterpart(&self, name: &str) -> Option<&str> {
        self.pairs.iter().find_map(|(a, b)| {
            if a == name {
                Some(b.as_str())
            } else if b == name {
                Some(a.as_str())
            } else {
                None
            }
        })
    }

    /// Greedy order with each dual placed right after the first of its pair.
    pub fn paired_order(&self) -> Vec<(usize, &RankedFeature)> {
        let mut out = Vec::with_capacity(self.features.len());
        let mut placed = vec![false; self.features.len()];
        for (i, f) in self.features.iter().enumerate() {
            if placed[i] {
                continue;
            }
            placed[i] = true;
            out.push((i + 1, f));
            if let Some(j) = self.counterpart(&f.name).and_then(|d| self.position(d)) {
                if !placed[j] {
                    placed[j] = true;
                    out.push((j + 1, &self.features[j]));
                }
            }
        }
        out
    }

    /// CSV with `rank,feature,score,relevance`; duals are adjacent.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SelectError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rank", "feature", "score", "relevance"])?;
        for (rank, f) in self.paired_order() {
            w.write_record([
                rank.to_string(),
                f.name.clone(),
                format!("{:.6}", f.score),
                format!("{:.6}", f.relevance),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "MRMR ranking (MID, {} bins)", self.bins);
        let _ = writeln!(out, "{:>4}  {:<16} {:>10} {:>10}", "rank", "feature", "score", "relevance");
        for (rank, f) in self.paired_order() {
            let _ = writeln!(out, "{rank:>4}  {:<16} {:>10.4} {:>10.4}", f.name, f.score, f.relevance);
        }
        out
    }
}

/// Greedy forward MRMR: each step picks the feature maximizing
/// `MI(f; y) − mean_{g selected} MI(f; g)`. Ties go to the lower column index.
pub fn mrmr_rank(
    rows: ArrayView2<f64>,
    labels: &[usize],
    names: &[String],
    bins: usize,
) -> Result<MrmrRanking, SelectError> {
    let (n, p) = rows.dim();
    if names.len() != p {
        return Err(SelectError::Names { names: names.len(), cols: p });
    }
    if labels.len() != n {
        return Err(SelectError::LengthMismatch(n, labels.len()));
    }
    if n < 2 {
        return Err(SelectError::TooFewRows(n));
    }
    if bins == 0 {
        return Err(SelectError::NoBins);
    }
    let columns: Vec<Vec<usize>> = (0..p)
        .into_par_iter()
        .map(|j| discretize(&rows.column(j).to_vec(), bins))
        .collect();
    let relevance: Vec<f64> = columns.par_iter().map(|c| mi_unchecked(c, labels)).collect();
    let mut redundancy = vec![0.0; p];
    let mut remaining: Vec<usize> = (0..p).collect();
    let mut features = Vec::with_capacity(p);
    while !remaining.is_empty() {
        let chosen = features.len();
        let score = |j: usize| {
            if chosen == 0 {
                relevance[j]
            } else {
                relevance[j] - redundancy[j] / chosen as f64
            }
        };
        let mut best = remaining[0];
        for &j in &remaining[1..] {
            if score(j) > score(best) {
                best = j;
            }
        }
        features.push(RankedFeature {
            name: names[best].clone(),
            score: score(best),
            relevance: relevance[best],
        });
        remaining.retain(|&j| j != best);
        let picked = &columns[best];
        let add: Vec<f64> = remaining.par_iter().map(|&j| mi_unchecked(&columns[j], picked)).collect();
        for (&j, v) in remaining.iter().zip(add) {
            redundancy[j] += v;
        }
    }
    let mut pairs = Vec::new();
    for name in names {
        if let Some(d) = dual_of(name) {
            if name.starts_with('s') && names.contains(&d) {
                pairs.push((name.clone(), d));
            }
        }
    }
    Ok(MrmrRanking { features, bins, pairs })
}

/// Features scoring above `tau`, plus the dual of every such feature.
/// Returned in ranking order.
pub fn select_by_threshold(ranking: &MrmrRanking, tau: f64) -> Result<Vec<String>, SelectError> {
    let mut keep: Vec<bool> = ranking.features.iter().map(|f| f.score > tau).collect();
    if !keep.iter().any(|&k| k) {
        return Err(SelectError::EmptySelection(tau));
    }
    for i in 0..keep.len() {
        if ranking.features[i].score > tau {
            if let Some(j) = ranking.counterpart(&ranking.features[i].name).and_then(|d| ranking.position(d)) {
                keep[j] = true;
            }
        }
    }
    Ok(ranking
        .features
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(f, _)| f.name.clone())
        .collect())
}

/// One feature name per line.
pub fn write_selected<W: Write>(mut writer: W, selected: &[String]) -> io::Result<()> {
    for s in selected {
        writeln!(writer, "{s}")?;
    }
    writer.flush()
}

/// Accepts either a plain name list or a ranking CSV (uses its `feature`
/// column).
pub fn read_selected<R: Read>(mut reader: R) -> Result<Vec<String>, SelectError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let first = match lines.clone().next() {
        Some(f) => f,
        None => return Err(SelectError::Malformed("no feature names".into())),
    };
    if first.contains(',') {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let idx = rdr
            .headers()?
            .iter()
            .position(|h| h == "feature")
            .ok_or_else(|| SelectError::Malformed("CSV has no `feature` column".into()))?;
        let mut out = Vec::new();
        for rec in rdr.records() {
            out.push(rec?.get(idx).unwrap_or("").to_string());
        }
        return Ok(out);
    }
    Ok(lines.by_ref().map(str::to_string).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn mi_identity_and_constant() {
        let y = vec![0, 1, 0, 1, 1, 0];
        assert!((mutual_information(&y, &y).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mutual_information(&[3; 6], &y).unwrap(), 0.0);
        assert!(mutual_information(&[0], &[0]).is_err());
        assert!(mutual_information(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn mi_small_table() {
        let x = vec![0, 0, 0, 1, 1, 1];
        let y = vec![0, 0, 1, 0, 1, 1];
        let expect = 2.0 * (2.0 / 6.0) * ((2.0 / 6.0) / 0.25f64).log2() + 2.0 * (1.0 / 6.0) * ((1.0 / 6.0) / 0.25f64).log2();
        assert!((mutual_information(&x, &y).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.0817).abs() < 1e-4);
    }

    #[test]
    fn discretize_edges() {
        assert_eq!(discretize(&[0.0, 0.5, 1.0], 2), vec![0, 1, 1]);
        assert_eq!(discretize(&[2.0, 2.0], 16), vec![0, 0]);
        assert_eq!(discretize_with_range(&[-1.0, 5.0], 4, 0.0, 1.0), vec![0, 3]);
    }

    #[test]
    fn label_copy_ranks_first() {
        let n = 40;
        let labels: Vec<usize> = (0..n).map(|i| (i % 4 == 0) as usize).collect();
        let mut rows = Array2::zeros((n, 3));
        for i in 0..n {
            rows[[i, 0]] = (i % 3) as f64;
            rows[[i, 1]] = labels[i] as f64;
            rows[[i, 2]] = ((i * 13) % 11) as f64;
        }
        let names: Vec<String> = ["noise", "a", "other"].iter().map(|s| s.to_string()).collect();
        let r = mrmr_rank(rows.view(), &labels, &names, DEFAULT_BINS).unwrap();
        assert_eq!(r.features[0].name, "a");
    }

    #[test]
    fn duplicate_column_sinks_below_informative_feature() {
        // y = 2a + b with independent bits a, b; noise independent of both.
        let n = 64;
        let a: Vec<usize> = (0..n).map(|i| i & 1).collect();
        let b: Vec<usize> = (0..n).map(|i| (i >> 1) & 1).collect();
        let noise: Vec<usize> = (0..n).map(|i| (i >> 2) % 3).collect();
        let y: Vec<usize> = (0..n).map(|i| 2 * a[i] + b[i]).collect();
        let mut rows = Array2::zeros((n, 4));
        for i in 0..n {
            rows[[i, 0]] = noise[i] as f64;
            rows[[i, 1]] = a[i] as f64;
            rows[[i, 2]] = b[i] as f64;
            rows[[i, 3]] = a[i] as f64;
        }
        let names: Vec<String> = ["noise", "a", "b", "a_copy"].iter().map(|s| s.to_string()).collect();
        let r = mrmr_rank(rows.view(), &y, &names, DEFAULT_BINS).unwrap();
        assert_eq!(r.features[0].name, "a");
        assert_eq!(r.features[1].name, "b");
        assert!((r.features[1].score - 1.0).abs() < 1e-12);
        let copy_step2 = mutual_information(&a, &y).unwrap() - mutual_information(&a, &a).unwrap();
        assert!(copy_step2 <= 1e-12);
        assert!(r.position("a_copy").unwrap() > r.position("b").unwrap());
    }

    #[test]
    fn dual_closure() {
        let f = |name: &str, score: f64| RankedFeature {
            name: name.into(),
            score,
            relevance: score,
        };
        let ranking = MrmrRanking {
            features: vec![f("rBytesAvg", 0.43), f("duration", 0.2), f("protocol", 0.01), f("sBytesAvg", 0.05)],
            bins: 16,
            pairs: vec![("sBytesAvg".into(), "rBytesAvg".into())],
        };
        assert_eq!(
            select_by_threshold(&ranking, 0.07).unwrap(),
            vec!["rBytesAvg", "duration", "sBytesAvg"]
        );
        assert_eq!(select_by_threshold(&ranking, f64::NEG_INFINITY).unwrap().len(), 4);
        assert!(matches!(
            select_by_threshold(&ranking, f64::INFINITY),
            Err(SelectError::EmptySelection(_))
        ));
        let order: Vec<&str> = ranking.paired_order().iter().map(|(_, f)| f.name.as_str()).collect();
        assert_eq!(order, vec!["rBytesAvg", "sBytesAvg", "duration", "protocol"]);
    }

    #[test]
    fn selected_file_round_trip() {
        let names = vec!["a".to_string(), "b".to_string()];
        let mut buf = Vec::new();
        write_selected(&mut buf, &names).unwrap();
        assert_eq!(read_selected(&buf[..]).unwrap(), names);
        let csv = "rank,feature,score,relevance\n1,a,0.5,0.5\n2,b,0.1,0.2\n";
        assert_eq!(read_selected(csv.as_bytes()).unwrap(), names);
    }

    #[test]
    fn duals() {
        assert_eq!(dual_of("sttl").as_deref(), Some("rttl"));
        assert_eq!(dual_of("rWinTCP").as_deref(), Some("sWinTCP"));
        assert_eq!(dual_of("duration"), None);
    }
}
