//! ASCII point cloud formats (PCD v0.7, PLY 1.0, bare xyz) and label files.
//!
//! Coordinates are written with 6 fractional digits and normals with 8, so a
//! save/load round trip keeps coordinates within 1e-6 and keeps normals unit
//! length within the validity tolerance. Binary variants are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};

use crate::cloud::{LabelMask, PointCloud, SurfaceClass};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PcdAscii,
    PlyAscii,
    Xyz,
}

impl CloudFormat {
    /// Picks a format from the file extension (`.pcd`, `.ply`, `.xyz`/`.txt`).
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("pcd") => Ok(CloudFormat::PcdAscii),
            Some("ply") => Ok(CloudFormat::PlyAscii),
            Some("xyz") | Some("txt") => Ok(CloudFormat::Xyz),
            _ => Err(Error::UnsupportedFormat(format!(
                "cannot infer cloud format from {}",
                path.display()
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CloudFormat::PcdAscii => "pcd-ascii",
            CloudFormat::PlyAscii => "ply-ascii",
            CloudFormat::Xyz => "xyz",
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcd" | "pcd-ascii" => Ok(CloudFormat::PcdAscii),
            "ply" | "ply-ascii" => Ok(CloudFormat::PlyAscii),
            "xyz" => Ok(CloudFormat::Xyz),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

/// What to do with records whose coordinates are NaN or infinite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonFinitePolicy {
    #[default]
    Reject,
    /// Drop the record. Sensor clouds mark missing returns with NaN.
    Drop,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub non_finite: NonFinitePolicy,
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    load_cloud_with(path, format, LoadOptions::default())
}

pub fn load_cloud_with(path: &Path, format: CloudFormat, options: LoadOptions) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&text, format, options)
}

pub fn parse_cloud(text: &str, format: CloudFormat, options: LoadOptions) -> Result<PointCloud> {
    match format {
        CloudFormat::PcdAscii => parse_pcd(text, options),
        CloudFormat::PlyAscii => parse_ply(text, options),
        CloudFormat::Xyz => parse_xyz(text, options),
    }
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let text = format_cloud(cloud, format)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn format_cloud(cloud: &PointCloud, format: CloudFormat) -> Result<String> {
    cloud.ensure_non_empty()?;
    match format {
        CloudFormat::PcdAscii => Ok(format_pcd(cloud)),
        CloudFormat::PlyAscii => Ok(format_ply(cloud, None)),
        CloudFormat::Xyz => {
            if cloud.normals().is_some() {
                return Err(Error::UnsupportedFields {
                    format: "xyz",
                    fields: "normal_x normal_y normal_z".into(),
                });
            }
            let mut out = String::with_capacity(cloud.len() * 32);
            for p in cloud.points() {
                write_coords(&mut out, p);
                out.push('\n');
            }
            Ok(out)
        }
    }
}

/// Writes a PLY with per-vertex `red green blue` properties for inspection.
pub fn save_colored_ply(cloud: &PointCloud, colors: &[[u8; 3]], path: &Path) -> Result<()> {
    cloud.ensure_non_empty()?;
    if colors.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            actual: colors.len(),
        });
    }
    let text = format_ply(cloud, Some(colors));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<LabelMask> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

pub fn parse_labels(text: &str) -> Result<LabelMask> {
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        let id: i64 = token
            .parse()
            .map_err(|_| Error::parse(line_no, format!("expected an integer class id, got {token:?}")))?;
        let class = SurfaceClass::from_id(id).ok_or(Error::UnknownClassId { id, line: line_no })?;
        labels.push(class);
    }
    Ok(LabelMask::new(labels))
}

pub fn format_labels(mask: &LabelMask) -> String {
    let mut out = String::with_capacity(mask.len() * 2);
    for class in mask.labels() {
        let _ = writeln!(out, "{}", class.id());
    }
    out
}

pub fn save_labels(mask: &LabelMask, path: &Path) -> Result<()> {
    fs::write(path, format_labels(mask)).map_err(|e| Error::io(path, e))
}

fn write_coords(out: &mut String, p: &Point3<f64>) {
    let _ = write!(out, "{:.6} {:.6} {:.6}", p.x, p.y, p.z);
}

fn write_normal(out: &mut String, n: &Vector3<f64>, valid: bool) {
    if valid {
        let _ = write!(out, " {:.8} {:.8} {:.8}", n.x, n.y, n.z);
    } else {
        out.push_str(" nan nan nan");
    }
}

fn format_pcd(cloud: &PointCloud) -> String {
    let has_normals = cloud.normals().is_some();
    let (fields, cols) = if has_normals {
        ("x y z normal_x normal_y normal_z", 6)
    } else {
        ("x y z", 3)
    };
    let o = cloud.sensor_origin();
    let mut out = String::with_capacity(256 + cloud.len() * if has_normals { 72 } else { 32 });
    out.push_str("# .PCD v0.7 - Point Cloud Data file format\n");
    out.push_str("VERSION 0.7\n");
    let _ = writeln!(out, "FIELDS {fields}");
    let _ = writeln!(out, "SIZE {}", vec!["8"; cols].join(" "));
    let _ = writeln!(out, "TYPE {}", vec!["F"; cols].join(" "));
    let _ = writeln!(out, "COUNT {}", vec!["1"; cols].join(" "));
    let _ = writeln!(out, "WIDTH {}", cloud.len());
    out.push_str("HEIGHT 1\n");
    let _ = writeln!(out, "VIEWPOINT {:.6} {:.6} {:.6} 1 0 0 0", o.x, o.y, o.z);
    let _ = writeln!(out, "POINTS {}", cloud.len());
    out.push_str("DATA ascii\n");
    for (i, p) in cloud.points().iter().enumerate() {
        write_coords(&mut out, p);
        if let Some(normals) = cloud.normals() {
            write_normal(&mut out, &normals[i], cloud.valid()[i]);
        }
        out.push('\n');
    }
    out
}

fn format_ply(cloud: &PointCloud, colors: Option<&[[u8; 3]]>) -> String {
    let o = cloud.sensor_origin();
    let mut out = String::with_capacity(256 + cloud.len() * 48);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "comment viewpoint {:.6} {:.6} {:.6}", o.x, o.y, o.z);
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.normals().is_some() {
        out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    if colors.is_some() {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        write_coords(&mut out, p);
        if let Some(normals) = cloud.normals() {
            write_normal(&mut out, &normals[i], cloud.valid()[i]);
        }
        if let Some(colors) = colors {
            let [r, g, b] = colors[i];
            let _ = write!(out, " {r} {g} {b}");
        }
        out.push('\n');
    }
    out
}

/// Column positions of the fields the loader understands.
#[derive(Debug, Default)]
struct Columns {
    xyz: [usize; 3],
    normal: Option<[usize; 3]>,
    width: usize,
}

impl Columns {
    fn from_names(names: &[String], counts: &[usize], line: usize) -> Result<Self> {
        let mut offsets = Vec::with_capacity(names.len());
        let mut width = 0;
        for &c in counts {
            offsets.push(width);
            width += c;
        }
        let find = |candidates: &[&str]| {
            names
                .iter()
                .position(|n| candidates.contains(&n.as_str()))
                .map(|i| offsets[i])
        };
        let xyz = match (find(&["x"]), find(&["y"]), find(&["z"])) {
            (Some(x), Some(y), Some(z)) => [x, y, z],
            _ => return Err(Error::parse(line, "fields x, y and z are required")),
        };
        let normal = match (
            find(&["normal_x", "nx"]),
            find(&["normal_y", "ny"]),
            find(&["normal_z", "nz"]),
        ) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            (None, None, None) => None,
            _ => return Err(Error::parse(line, "incomplete normal fields")),
        };
        Ok(Self { xyz, normal, width })
    }
}

/// Accumulates records into a cloud.
struct Records {
    points: Vec<Point3<f64>>,
    normals: Vec<Vector3<f64>>,
    with_normals: bool,
    options: LoadOptions,
}

impl Records {
    fn new(with_normals: bool, options: LoadOptions, capacity: usize) -> Self {
        Self {
            points: Vec::with_capacity(capacity),
            normals: Vec::with_capacity(if with_normals { capacity } else { 0 }),
            with_normals,
            options,
        }
    }

    fn push(&mut self, line: &str, line_no: usize, cols: &Columns) -> Result<()> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != cols.width {
            return Err(Error::parse(
                line_no,
                format!("expected {} values, found {}", cols.width, tokens.len()),
            ));
        }
        let value = |i: usize| -> Result<f64> {
            parse_float(tokens[i]).ok_or_else(|| Error::parse(line_no, format!("invalid number {:?}", tokens[i])))
        };
        let p = Point3::new(value(cols.xyz[0])?, value(cols.xyz[1])?, value(cols.xyz[2])?);
        let normal = match cols.normal {
            Some([a, b, c]) => Some(Vector3::new(value(a)?, value(b)?, value(c)?)),
            None => None,
        };
        if !p.iter().all(|c| c.is_finite()) {
            return match self.options.non_finite {
                NonFinitePolicy::Reject => Err(Error::NonFiniteCoordinate { line: line_no }),
                NonFinitePolicy::Drop => Ok(()),
            };
        }
        self.points.push(p);
        if let Some(n) = normal {
            self.normals.push(n);
        }
        Ok(())
    }

    fn finish(self, origin: Point3<f64>) -> Result<PointCloud> {
        let cloud = PointCloud::new(self.points).with_sensor_origin(origin);
        if self.with_normals {
            cloud.with_normals(self.normals)
        } else {
            Ok(cloud)
        }
    }
}

fn parse_float(token: &str) -> Option<f64> {
    match token {
        "nan" | "NaN" | "-nan" | "-NaN" => Some(f64::NAN),
        _ => token.parse().ok(),
    }
}

fn parse_count(token: Option<&str>, line: usize, what: &str) -> Result<usize> {
    token
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse(line, format!("invalid {what}")))
}

fn parse_pcd(text: &str, options: LoadOptions) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut fields: Option<Vec<String>> = None;
    let mut counts: Option<Vec<usize>> = None;
    let mut points: Option<usize> = None;
    let mut width_height: (Option<usize>, Option<usize>) = (None, None);
    let mut origin = Point3::origin();
    let mut header_end = 0;

    for (line_no, line) in lines.by_ref() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let key = tokens.next().unwrap_or_default().to_ascii_uppercase();
        match key.as_str() {
            "VERSION" | "SIZE" | "TYPE" => {}
            "FIELDS" => fields = Some(tokens.map(str::to_string).collect()),
            "COUNT" => {
                counts = Some(
                    tokens
                        .map(|t| parse_count(Some(t), line_no, "COUNT"))
                        .collect::<Result<_>>()?,
                )
            }
            "WIDTH" => width_height.0 = Some(parse_count(tokens.next(), line_no, "WIDTH")?),
            "HEIGHT" => width_height.1 = Some(parse_count(tokens.next(), line_no, "HEIGHT")?),
            "POINTS" => points = Some(parse_count(tokens.next(), line_no, "POINTS")?),
            "VIEWPOINT" => {
                let vals: Vec<f64> = tokens.filter_map(|t| t.parse().ok()).collect();
                if vals.len() != 7 {
                    return Err(Error::parse(line_no, "VIEWPOINT needs 7 values"));
                }
                origin = Point3::new(vals[0], vals[1], vals[2]);
            }
            "DATA" => {
                match tokens.next() {
                    Some("ascii") => {}
                    Some(other) => {
                        return Err(Error::UnsupportedFormat(format!(
                            "PCD DATA {other} (only ascii is supported)"
                        )))
                    }
                    None => return Err(Error::parse(line_no, "DATA without encoding")),
                }
                header_end = line_no;
                break;
            }
            other => return Err(Error::parse(line_no, format!("unknown PCD header key {other}"))),
        }
    }
    if header_end == 0 {
        return Err(Error::parse(text.lines().count(), "missing DATA line"));
    }
    let fields = fields.ok_or_else(|| Error::parse(header_end, "missing FIELDS"))?;
    let counts = counts.unwrap_or_else(|| vec![1; fields.len()]);
    if counts.len() != fields.len() {
        return Err(Error::parse(header_end, "COUNT and FIELDS lengths differ"));
    }
    let declared = match (points, width_height) {
        (Some(n), _) => n,
        (None, (Some(w), Some(h))) => w * h,
        _ => return Err(Error::parse(header_end, "missing POINTS")),
    };
    let cols = Columns::from_names(&fields, &counts, header_end)?;
    let mut records = Records::new(cols.normal.is_some(), options, declared);
    let mut seen = 0usize;
    let mut last_line = header_end;
    for (line_no, line) in lines {
        last_line = line_no;
        if line.trim().is_empty() {
            continue;
        }
        seen += 1;
        if seen > declared {
            return Err(Error::parse(
                line_no,
                format!("more records than the {declared} declared"),
            ));
        }
        records.push(line, line_no, &cols)?;
    }
    if seen != declared {
        return Err(Error::parse(
            last_line,
            format!("header declares {declared} points but {seen} records found"),
        ));
    }
    records.finish(origin)
}

fn parse_ply(text: &str, options: LoadOptions) -> Result<PointCloud> {
    struct Element {
        name: String,
        count: usize,
        properties: Vec<String>,
    }

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::parse(1, "missing ply magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut origin = Point3::origin();
    let mut header_end = 0;
    let mut saw_format = false;
    for (line_no, line) in lines.by_ref() {
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            None => continue,
            Some("format") => {
                match tokens.next() {
                    Some("ascii") => {}
                    Some(other) => {
                        return Err(Error::UnsupportedFormat(format!(
                            "PLY {other} (only ascii is supported)"
                        )))
                    }
                    None => return Err(Error::parse(line_no, "format without encoding")),
                }
                saw_format = true;
            }
            Some("comment") => {
                let rest: Vec<&str> = tokens.collect();
                if rest.len() == 4 && rest[0] == "viewpoint" {
                    let vals: Option<Vec<f64>> = rest[1..].iter().map(|t| t.parse().ok()).collect();
                    if let Some(v) = vals {
                        origin = Point3::new(v[0], v[1], v[2]);
                    }
                }
            }
            Some("obj_info") => {}
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| Error::parse(line_no, "element without name"))?
                    .to_string();
                let count = parse_count(tokens.next(), line_no, "element count")?;
                elements.push(Element {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(line_no, "property before element"))?;
                let rest: Vec<&str> = tokens.collect();
                let name = rest
                    .last()
                    .ok_or_else(|| Error::parse(line_no, "property without name"))?;
                if rest.first() == Some(&"list") && element.name == "vertex" {
                    return Err(Error::parse(line_no, "list properties on vertices are not supported"));
                }
                element.properties.push(name.to_string());
            }
            Some("end_header") => {
                header_end = line_no;
                break;
            }
            Some(other) => return Err(Error::parse(line_no, format!("unknown PLY header keyword {other}"))),
        }
    }
    if header_end == 0 {
        return Err(Error::parse(text.lines().count(), "missing end_header"));
    }
    if !saw_format {
        return Err(Error::parse(header_end, "missing format line"));
    }
    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(header_end, "no vertex element"))?;
    let props = &elements[vertex].properties;
    let cols = Columns::from_names(props, &vec![1; props.len()], header_end)?;
    let mut records = Records::new(cols.normal.is_some(), options, elements[vertex].count);

    let mut body = lines.filter(|(_, l)| !l.trim().is_empty());
    for (idx, element) in elements.iter().enumerate() {
        for k in 0..element.count {
            let (line_no, line) = body.next().ok_or_else(|| {
                Error::parse(
                    text.lines().count(),
                    format!(
                        "element {} declares {} records but only {k} found",
                        element.name, element.count
                    ),
                )
            })?;
            if idx == vertex {
                records.push(line, line_no, &cols)?;
            }
        }
    }
    if let Some((line_no, _)) = body.next() {
        return Err(Error::parse(line_no, "trailing data after the declared elements"));
    }
    records.finish(origin)
}

fn parse_xyz(text: &str, options: LoadOptions) -> Result<PointCloud> {
    let cols = Columns {
        xyz: [0, 1, 2],
        normal: None,
        width: 3,
    };
    let mut records = Records::new(false, options, 0);
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        records.push(trimmed, idx + 1, &cols)?;
    }
    records.finish(Point3::origin())
}
