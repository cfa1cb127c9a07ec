//! Artifact writers: grayscale heatmaps, sweep tables, error summaries.

use std::io::Write;
use std::path::Path;

use crate::dp::ErrorStats;
use crate::error::{Error, Result};
use crate::reach::SafetyField;

/// Gray level of a probability: `round(v·255)` after clamping to `[0, 1]`.
pub fn gray_level(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (P5) of `values` on a `cols × rows` grid whose first axis
/// varies fastest. Image row 0 holds the largest second-axis value.
pub fn heatmap_bytes(values: &[f64], cols: usize, rows: usize) -> Result<Vec<u8>> {
    if cols * rows != values.len() || values.is_empty() {
        return Err(Error::Shape(format!(
            "{cols}x{rows} heatmap does not match {} values",
            values.len()
        )));
    }
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for r in (0..rows).rev() {
        out.extend(values[r * cols..(r + 1) * cols].iter().map(|v| gray_level(*v)));
    }
    Ok(out)
}

/// Parses a P5 image written by [`heatmap_bytes`] into `(cols, rows, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Parse {
        what: "pgm".into(),
        message: m.into(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected an 8-bit P5 image"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
    let (cols, rows) = (num(fields[1])?, num(fields[2])?);
    let pixels = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?.to_vec();
    if pixels.len() != cols * rows {
        return Err(bad("raster size does not match header"));
    }
    Ok((cols, rows, pixels))
}

pub fn write_heatmap(path: &Path, values: &[f64], shape: (usize, usize)) -> Result<()> {
    write_file(path, &heatmap_bytes(values, shape.0, shape.1)?)
}

/// Writes the field's value heatmap and, when bounds are attached, the lower
/// and upper bracket heatmaps next to it. Returns the written file names.
pub fn write_field_heatmaps(dir: &Path, stem: &str, field: &SafetyField) -> Result<Vec<String>> {
    let shape = field
        .grid_shape
        .ok_or_else(|| Error::Shape("field has no grid shape".into()))?;
    let mut names = vec![format!("{stem}.pgm")];
    write_heatmap(&dir.join(&names[0]), &field.values, shape)?;
    if let (Some(lo), Some(hi)) = (&field.lower, &field.upper) {
        for (suffix, v) in [("lower", lo), ("upper", hi)] {
            let name = format!("{stem}_{suffix}.pgm");
            write_heatmap(&dir.join(&name), v, shape)?;
            names.push(name);
        }
    }
    Ok(names)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })?;
    Ok(std::io::BufWriter::new(f))
}

pub fn write_field_csv(path: &Path, field: &SafetyField) -> Result<()> {
    let mut w = create_file(path)?;
    field.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_field_csv(path: &Path) -> Result<SafetyField> {
    let f = std::fs::File::open(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })?;
    SafetyField::read_csv(std::io::BufReader::new(f))
}

/// One row of a bound sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub m: usize,
    pub delta: f64,
    pub mean_b: f64,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["M", "delta", "mean_B"]).map_err(crate::embedding::csv_error)?;
    for r in rows {
        w.write_record([r.m.to_string(), r.delta.to_string(), r.mean_b.to_string()])
            .map_err(crate::embedding::csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(crate::embedding::csv_error)?;
        if rec.len() != 3 {
            return Err(Error::Parse {
                what: "sweep csv".into(),
                message: format!("expected 3 columns, got {}", rec.len()),
            });
        }
        let m = rec[0].parse::<usize>().map_err(|e| Error::Parse {
            what: "sweep csv".into(),
            message: e.to_string(),
        })?;
        rows.push(SweepRow {
            m,
            delta: crate::embedding::parse_finite(&rec[1], "sweep csv")?,
            mean_b: crate::embedding::parse_finite(&rec[2], "sweep csv")?,
        });
    }
    Ok(rows)
}

pub fn write_errors_csv<W: Write>(stats: &ErrorStats, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["max_abs", "mean_abs"]).map_err(crate::embedding::csv_error)?;
    w.write_record([stats.max_abs.to_string(), stats.mean_abs.to_string()])
        .map_err(crate::embedding::csv_error)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_levels() {
        let bytes = heatmap_bytes(&[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0], 2, 2).unwrap();
        let (c, r, px) = parse_pgm(&bytes).unwrap();
        assert_eq!((c, r), (2, 2));
        // second-axis index 1 is the top image row
        assert_eq!(px, vec![170, 255, 0, 85]);
    }

    #[test]
    fn out_of_range_values_clamp() {
        assert_eq!(gray_level(-0.2), 0);
        assert_eq!(gray_level(1.7), 255);
        assert_eq!(gray_level(0.5), 128);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(heatmap_bytes(&[0.0; 3], 2, 2).is_err());
    }

    #[test]
    fn sweep_round_trip() {
        let rows = vec![
            SweepRow { m: 100, delta: 0.1, mean_b: 3.5 },
            SweepRow { m: 400, delta: 1.9, mean_b: 0.25 },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert!(buf.starts_with(b"M,delta,mean_B\n"));
        assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), rows);
    }
}
