//! CSV and ASCII-PLY point-cloud files.
//!
//! Both formats carry x, y, z, r, g, b, object_id, class_id per point.
//! Colors stored with an integer type (or integer-looking CSV fields) are
//! rescaled from [0, 255] to [0, 1] on load.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::{Error, Result};

use super::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Csv,
    Ply,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<CloudFormat> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(CloudFormat::Csv),
            Some("ply") => Ok(CloudFormat::Ply),
            other => Err(Error::validation(format!(
                "cannot infer cloud format from extension {other:?} (expected .csv or .ply)"
            ))),
        }
    }
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    match CloudFormat::from_path(path)? {
        CloudFormat::Csv => load_csv(path),
        CloudFormat::Ply => load_ply(path),
    }
}

pub fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    cloud.validate()?;
    match CloudFormat::from_path(path)? {
        CloudFormat::Csv => save_csv(cloud, path, &[]),
        CloudFormat::Ply => save_ply(cloud, path),
    }
}

/// CSV writer with optional extra integer columns (for example a
/// `segment_id` column appended after partitioning).
pub fn save_csv(cloud: &PointCloud, path: &Path, extra: &[(&str, &[u32])]) -> Result<()> {
    for (name, values) in extra {
        if values.len() != cloud.len() {
            return Err(Error::validation(format!(
                "extra column {name} has {} values for {} points",
                values.len(),
                cloud.len()
            )));
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "x,y,z,r,g,b,object_id,class_id")?;
    for (name, _) in extra {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let c = cloud.colors[i];
        write!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(p[0]),
            fmt_f64(p[1]),
            fmt_f64(p[2]),
            fmt_f64(c[0]),
            fmt_f64(c[1]),
            fmt_f64(c[2]),
            cloud.object_id[i],
            cloud.class_id[i]
        )?;
        for (_, values) in extra {
            write!(out, ",{}", values[i])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Shortest round-trip decimal, with a forced decimal point so color
/// fields never look integer-typed on reload.
fn fmt_f64(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn load_csv(path: &Path) -> Result<PointCloud> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let required = ["x", "y", "z", "r", "g", "b", "object_id", "class_id"];
    let mut column = [0usize; 8];
    for (slot, name) in required.iter().enumerate() {
        column[slot] = headers
            .iter()
            .position(|h| h.trim() == *name)
            .ok_or_else(|| parse_err(path, 1, format!("missing column {name}")))?;
    }

    let mut cloud = PointCloud {
        positions: vec![],
        colors: vec![],
        object_id: vec![],
        class_id: vec![],
    };
    let mut colors_all_integer = true;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| parse_err(path, line, e.to_string()))?;
        let field = |slot: usize| -> Result<&str> {
            record
                .get(column[slot])
                .map(str::trim)
                .ok_or_else(|| parse_err(path, line, format!("missing field {}", required[slot])))
        };
        let mut coords = [0.0f64; 3];
        for (d, v) in coords.iter_mut().enumerate() {
            let raw = field(d)?;
            *v = raw
                .parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("bad {} value {raw:?}", required[d])))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite {} coordinate", required[d])));
            }
        }
        let mut color = [0.0f64; 3];
        for (d, v) in color.iter_mut().enumerate() {
            let raw = field(3 + d)?;
            if raw.contains(['.', 'e', 'E']) {
                colors_all_integer = false;
            }
            *v = raw.parse::<f64>().map_err(|_| {
                parse_err(path, line, format!("bad {} value {raw:?}", required[3 + d]))
            })?;
            if !v.is_finite() {
                return Err(parse_err(path, line, "non-finite color"));
            }
        }
        let object_id = field(6)?
            .parse::<u32>()
            .map_err(|_| parse_err(path, line, "bad object_id"))?;
        let class_id = field(7)?
            .parse::<u32>()
            .map_err(|_| parse_err(path, line, "bad class_id"))?;
        cloud.positions.push(coords);
        cloud.colors.push(color);
        cloud.object_id.push(object_id);
        cloud.class_id.push(class_id);
    }
    if cloud.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    if colors_all_integer {
        for c in &mut cloud.colors {
            for v in c.iter_mut() {
                *v /= 255.0;
            }
        }
    }
    cloud.validate()?;
    Ok(cloud)
}

struct PlyProperty {
    name: String,
    integer: bool,
}

fn load_ply(path: &Path) -> Result<PointCloud> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let mut next_line = || -> Result<(usize, String)> {
        match lines.next() {
            Some((idx, line)) => Ok((idx + 1, line?)),
            None => Err(parse_err(path, 0, "unexpected end of file")),
        }
    };

    let (line_no, magic) = next_line()?;
    if magic.trim() != "ply" {
        return Err(parse_err(path, line_no, "not a PLY file"));
    }
    let mut n_vertices: Option<usize> = None;
    let mut properties: Vec<PlyProperty> = Vec::new();
    let mut in_vertex_element = false;
    let data_start;
    loop {
        let (line_no, line) = next_line()?;
        let line = line.trim().to_string();
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            Some("format") => {
                if tokens.get(1) != Some(&"ascii") {
                    return Err(parse_err(path, line_no, "only ascii PLY is supported"));
                }
            }
            Some("comment") => {}
            Some("element") => {
                let count: usize = tokens
                    .get(2)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(path, line_no, "bad element line"))?;
                if tokens.get(1) == Some(&"vertex") {
                    n_vertices = Some(count);
                    in_vertex_element = true;
                } else {
                    if count > 0 {
                        return Err(parse_err(
                            path,
                            line_no,
                            format!("unsupported element {:?}", tokens.get(1)),
                        ));
                    }
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue;
                }
                let (ty, name) = match (tokens.get(1), tokens.get(2)) {
                    (Some(ty), Some(name)) => (*ty, *name),
                    _ => return Err(parse_err(path, line_no, "bad property line")),
                };
                let integer = matches!(
                    ty,
                    "char" | "uchar" | "short" | "ushort" | "int" | "uint" | "int8" | "uint8"
                        | "int16" | "uint16" | "int32" | "uint32"
                );
                properties.push(PlyProperty {
                    name: name.to_string(),
                    integer,
                });
            }
            Some("end_header") => {
                data_start = line_no + 1;
                break;
            }
            _ => return Err(parse_err(path, line_no, format!("unexpected header line {line:?}"))),
        }
    }

    let n_vertices =
        n_vertices.ok_or_else(|| parse_err(path, data_start, "missing vertex element"))?;
    let find = |names: &[&str]| -> Result<(usize, bool)> {
        for name in names {
            if let Some(pos) = properties.iter().position(|p| p.name == *name) {
                return Ok((pos, properties[pos].integer));
            }
        }
        Err(parse_err(
            path,
            data_start,
            format!("missing vertex property {}", names[0]),
        ))
    };
    let px = find(&["x"])?;
    let py = find(&["y"])?;
    let pz = find(&["z"])?;
    let pr = find(&["r", "red"])?;
    let pg = find(&["g", "green"])?;
    let pb = find(&["b", "blue"])?;
    let poid = find(&["object_id"])?;
    let pcid = find(&["class_id"])?;
    let color_integer = pr.1 && pg.1 && pb.1;

    let mut cloud = PointCloud {
        positions: Vec::with_capacity(n_vertices),
        colors: Vec::with_capacity(n_vertices),
        object_id: Vec::with_capacity(n_vertices),
        class_id: Vec::with_capacity(n_vertices),
    };
    for _ in 0..n_vertices {
        let (line_no, line) = next_line()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < properties.len() {
            return Err(parse_err(
                path,
                line_no,
                format!("{} fields, expected {}", fields.len(), properties.len()),
            ));
        }
        let num = |slot: (usize, bool)| -> Result<f64> {
            let raw = fields[slot.0];
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad number {raw:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line_no, "non-finite value"));
            }
            Ok(v)
        };
        cloud.positions.push([num(px)?, num(py)?, num(pz)?]);
        let scale = if color_integer { 1.0 / 255.0 } else { 1.0 };
        cloud
            .colors
            .push([num(pr)? * scale, num(pg)? * scale, num(pb)? * scale]);
        cloud.object_id.push(num(poid)? as u32);
        cloud.class_id.push(num(pcid)? as u32);
    }
    if cloud.is_empty() {
        return Err(parse_err(path, data_start, "no vertices"));
    }
    cloud.validate()?;
    Ok(cloud)
}

fn save_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", cloud.len())?;
    for name in ["x", "y", "z", "red", "green", "blue"] {
        writeln!(out, "property double {name}")?;
    }
    for name in ["object_id", "class_id"] {
        writeln!(out, "property uint {name}")?;
    }
    writeln!(out, "end_header")?;
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let c = cloud.colors[i];
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            fmt_f64(p[0]),
            fmt_f64(p[1]),
            fmt_f64(p[2]),
            fmt_f64(c[0]),
            fmt_f64(c[1]),
            fmt_f64(c[2]),
            cloud.object_id[i],
            cloud.class_id[i]
        )?;
    }
    out.flush()?;
    Ok(())
}
