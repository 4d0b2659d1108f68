//! Files written by the runs: CSV tables, JSON summaries, SVG plots and the
//! binary ensemble format.
//!
//! Binary ensembles are little-endian: magic `FHNE`, `u32` version, `u32` dim,
//! `u64` count, then the position, `v`, `w` and mass columns as `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::particle::ParticleEnsemble;

pub const ENSEMBLE_MAGIC: &[u8; 4] = b"FHNE";
pub const ENSEMBLE_VERSION: u32 = 1;

/// Raw columns of a stored ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleData {
    pub dim: usize,
    pub positions: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub masses: Vec<f64>,
}

impl From<&ParticleEnsemble> for EnsembleData {
    fn from(e: &ParticleEnsemble) -> Self {
        Self {
            dim: e.dim(),
            positions: e.positions().to_vec(),
            v: e.v().to_vec(),
            w: e.w().to_vec(),
            masses: e.masses().to_vec(),
        }
    }
}

pub fn encode_ensemble(data: &EnsembleData) -> Vec<u8> {
    let n = data.masses.len();
    let mut out = Vec::with_capacity(20 + 8 * n * (data.dim + 3));
    out.extend_from_slice(ENSEMBLE_MAGIC);
    out.extend_from_slice(&ENSEMBLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(data.dim as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for col in [&data.positions, &data.v, &data.w, &data.masses] {
        for x in col.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_ensemble(bytes: &[u8]) -> Result<EnsembleData> {
    let bad = |msg: &str| Error::InvalidInput(format!("bad ensemble file: {msg}"));
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != ENSEMBLE_MAGIC {
        return Err(bad("wrong magic"));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b).map_err(|_| bad("truncated header"))?;
    let version = u32::from_le_bytes(u32b);
    if version != ENSEMBLE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32b).map_err(|_| bad("truncated header"))?;
    let dim = u32::from_le_bytes(u32b) as usize;
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b).map_err(|_| bad("truncated header"))?;
    let n = u64::from_le_bytes(u64b) as usize;
    if !(1..=3).contains(&dim) || r.len() != 8 * n * (dim + 3) {
        return Err(bad("inconsistent sizes"));
    }
    let mut read_col = |len: usize| -> Vec<f64> {
        let (head, tail) = r.split_at(8 * len);
        r = tail;
        head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
    };
    let positions = read_col(n * dim);
    let v = read_col(n);
    let w = read_col(n);
    let masses = read_col(n);
    Ok(EnsembleData { dim, positions, v, w, masses })
}

pub fn write_ensemble(path: &Path, data: &EnsembleData) -> Result<()> {
    fs::write(path, encode_ensemble(data))?;
    Ok(())
}

pub fn read_ensemble(path: &Path) -> Result<EnsembleData> {
    decode_ensemble(&fs::read(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Writes a CSV with the given header and rows, numbers in round-trip precision.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<Option<f64>>]) -> Result<()> {
    fs::write(path, format_table(header, rows))?;
    Ok(())
}

pub fn format_table(header: &[&str], rows: &[Vec<Option<f64>>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| x.map(|v| format!("{v:.17e}")).unwrap_or_default()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Parses a numeric CSV with a header; empty cells become `None`.
pub fn parse_table(text: &str) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty CSV".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let row: Vec<Option<f64>> = line
            .split(',')
            .map(|c| {
                let c = c.trim();
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|_| Error::InvalidInput(format!("row {}: `{c}` is not a number", k + 1)))
                }
            })
            .collect::<Result<_>>()?;
        if row.len() != header.len() {
            return Err(Error::InvalidInput(format!("row {} has {} fields, expected {}", k + 1, row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Log-log line plot of one or more series against eps.
pub fn loglog_svg(title: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 50.0;
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.1.iter().copied()).filter(|(x, y)| *x > 0.0 && *y > 0.0).collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    );
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let span = |v: Vec<f64>| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min).log10();
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max).log10();
        if hi - lo < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) }
    };
    let (x0, x1) = span(pts.iter().map(|p| p.0).collect());
    let (y0, y1) = span(pts.iter().map(|p| p.1).collect());
    let px = |x: f64| M + (x.log10() - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y.log10() - y0) / (y1 - y0) * (H - 2.0 * M);
    svg.push_str(&format!(
        "<rect x=\"{M}\" y=\"{M}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W - 2.0 * M,
        H - 2.0 * M
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">eps ({:.3e} .. {:.3e})</text>\n",
        W / 2.0,
        H - 15.0,
        10f64.powf(x0),
        10f64.powf(x1)
    ));
    svg.push_str(&format!(
        "<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">{:.3e} .. {:.3e}</text>\n",
        H / 2.0,
        H / 2.0,
        10f64.powf(y0),
        10f64.powf(y1)
    ));
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    for (k, (name, data)) in series.iter().enumerate() {
        let c = colors[k % colors.len()];
        let path: Vec<String> = data
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        svg.push_str(&format!("<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"1.5\" points=\"{}\"/>\n", path.join(" ")));
        for p in &path {
            let (a, b) = p.split_once(',').unwrap();
            svg.push_str(&format!("<circle cx=\"{a}\" cy=\"{b}\" r=\"3\" fill=\"{c}\"/>\n"));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{c}\">{}</text>\n",
            M + 8.0,
            M + 16.0 * (k + 1) as f64,
            escape(name)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_round_trip() {
        let d = EnsembleData {
            dim: 2,
            positions: vec![0.1, 0.2, 0.3, 0.4],
            v: vec![1.0, -1.0],
            w: vec![0.5, f64::MIN_POSITIVE],
            masses: vec![0.25, 0.75],
        };
        let bytes = encode_ensemble(&d);
        assert_eq!(&bytes[..4], b"FHNE");
        assert_eq!(bytes.len(), 20 + 8 * 2 * 5);
        assert_eq!(decode_ensemble(&bytes).unwrap(), d);
        assert!(decode_ensemble(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_ensemble(&wrong).is_err());
    }

    #[test]
    fn table_round_trip() {
        let rows = vec![vec![Some(0.1), None, Some(-3.5e-20)], vec![Some(1.0), Some(2.0), None]];
        let text = format_table(&["a", "b", "c"], &rows);
        let (h, r) = parse_table(&text).unwrap();
        assert_eq!(h, vec!["a", "b", "c"]);
        assert_eq!(r, rows);
        assert!(parse_table("a,b\n1\n").is_err());
    }

    #[test]
    fn svg_is_well_formed() {
        let s = loglog_svg("H <eps>", &[("sup H", vec![(0.4, 1e-3), (0.2, 2e-4)])]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("&lt;eps&gt;"));
    }
}
