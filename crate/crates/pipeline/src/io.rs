//! File formats: PLY point clouds, PGM images, JSON models / poses /
//! transforms, statistics CSV. Every writer goes through a temporary file
//! in the destination directory and renames it into place.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use lodtherm::enrichment::ClassStatistics;
use lodtherm::geometry::{Point3, PointCloud, RigidTransform, SemanticClass};
use lodtherm::projection::{CameraModel, FramePose, Image};
use lodtherm::sampling::BuildingModel;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| PipelineError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| PipelineError::io(path, e))?;
    tmp.persist(path).map_err(|e| PipelineError::io(path, e.error))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::format(path, e.to_string()))
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json_string(value).as_bytes())
}

pub fn read_model(path: &Path) -> Result<BuildingModel> {
    read_json(path)
}

pub fn read_transform(path: &Path) -> Result<RigidTransform> {
    read_json(path)
}

pub fn read_camera(path: &Path) -> Result<CameraModel> {
    let cam: CameraModel = read_json(path)?;
    cam.validate()?;
    Ok(cam)
}

/// One entry of a pose file. `image` is relative to the pose file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEntry {
    pub image: PathBuf,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl PoseEntry {
    pub fn transform(&self) -> lodtherm::Result<RigidTransform> {
        let r = nalgebra::Matrix3::from_row_slice(&self.rotation);
        RigidTransform::new_repairing(r, lodtherm::Vector3::from(self.translation))
    }

    pub fn new(image: impl Into<PathBuf>, t: &RigidTransform) -> Self {
        let r = t.rotation();
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[3 * i + j] = r[(i, j)];
            }
        }
        let tr = t.translation();
        Self {
            image: image.into(),
            rotation,
            translation: [tr.x, tr.y, tr.z],
        }
    }
}

/// Reads a pose list and the images it references.
pub fn read_frames(path: &Path) -> Result<Vec<FramePose>> {
    let entries: Vec<PoseEntry> = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .map(|e| {
            let transform = e
                .transform()
                .map_err(|err| PipelineError::format(path, err.to_string()))?;
            let image = read_pgm(&base.join(&e.image))?;
            Ok(FramePose { transform, image })
        })
        .collect()
}

// ---------------------------------------------------------------- PGM

fn pgm_header_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Binary (P5) grayscale; values are divided by the max value.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |m: &str| PipelineError::format(path, format!("PGM: {m}"));
    let mut pos = 0;
    if pgm_header_token(bytes, &mut pos).as_deref() != Some("P5") {
        return Err(bad("only binary P5 images are supported"));
    }
    let mut num = || -> Result<usize> {
        pgm_header_token(bytes, &mut pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("malformed header"))
    };
    let (width, height, maxval) = (num()?, num()?, num()?);
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("invalid size or max value"));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    let raster = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated raster"))?;
    let scale = maxval as f64;
    let data: Vec<f64> = if wide {
        raster
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / scale).min(1.0))
            .collect()
    } else {
        raster.iter().map(|&b| (b as f64 / scale).min(1.0)).collect()
    };
    Ok(Image::new(width, height, data)?)
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    parse_pgm(&bytes, path)
}

/// Encodes with max value 255 (8-bit) or 65535 (16-bit, big-endian).
pub fn encode_pgm(image: &Image, sixteen_bit: bool) -> Vec<u8> {
    let maxval: u32 = if sixteen_bit { 65535 } else { 255 };
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), maxval).into_bytes();
    for &v in image.data() {
        let q = (v * maxval as f64).round() as u32;
        if sixteen_bit {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

pub fn write_pgm(path: &Path, image: &Image, sixteen_bit: bool) -> Result<()> {
    write_atomic(path, &encode_pgm(image, sixteen_bit))
}

// ---------------------------------------------------------------- PLY

/// Id index meaning "no id".
pub const NO_ID: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

/// Serializes a cloud as binary little-endian PLY. Positions are doubles;
/// `intensity` (float, NaN = none), `label` (uchar) and `id` (uint index
/// into `comment id <k> <name>` lines) are written when present.
#[allow(clippy::needless_range_loop)]
pub fn encode_ply(cloud: &PointCloud) -> Result<Vec<u8>> {
    let mut table: Vec<&str> = Vec::new();
    let mut lookup: HashMap<&str, u32> = HashMap::new();
    let mut id_index = Vec::new();
    if cloud.has_ids() {
        for id in cloud.ids() {
            if id.is_empty() {
                id_index.push(NO_ID);
                continue;
            }
            if id.contains(['\n', '\r']) {
                return Err(PipelineError::Config(format!("id {id:?} contains a line break")));
            }
            let k = *lookup.entry(id.as_str()).or_insert_with(|| {
                table.push(id.as_str());
                (table.len() - 1) as u32
            });
            id_index.push(k);
        }
    }
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    for (k, name) in table.iter().enumerate() {
        header.push_str(&format!("comment id {k} {name}\n"));
    }
    header.push_str(&format!(
        "element vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        cloud.len()
    ));
    if cloud.has_intensity() {
        header.push_str("property float intensity\n");
    }
    if cloud.has_labels() {
        header.push_str("property uchar label\n");
    }
    if cloud.has_ids() {
        header.push_str("property uint id\n");
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&c.to_le_bytes());
        }
        if cloud.has_intensity() {
            let v = cloud.intensity()[i].map(|v| v as f32).unwrap_or(f32::NAN);
            out.extend_from_slice(&v.to_le_bytes());
        }
        if cloud.has_labels() {
            out.push(cloud.labels()[i].code());
        }
        if cloud.has_ids() {
            out.extend_from_slice(&id_index[i].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_atomic(path, &encode_ply(cloud)?)
}

/// Byte offset where the vertex payload begins.
pub fn ply_payload_offset(bytes: &[u8]) -> Option<usize> {
    let marker = b"end_header\n";
    bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .map(|p| p + marker.len())
}

struct PlyHeader {
    format: PlyFormat,
    vertices: usize,
    props: Vec<(String, Scalar)>,
    ids: HashMap<u32, String>,
    /// Elements after the vertex element are ignored.
    payload_start: usize,
}

fn parse_ply_header(bytes: &[u8], path: &Path) -> Result<PlyHeader> {
    let bad = |m: String| PipelineError::format(path, format!("PLY: {m}"));
    let start = ply_payload_offset(bytes).ok_or_else(|| bad("missing end_header".into()))?;
    let text = std::str::from_utf8(&bytes[..start]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing magic".into()));
    }
    let mut format = None;
    let mut vertices = None;
    let mut props = Vec::new();
    let mut ids = HashMap::new();
    let mut in_vertex = false;
    let mut seen_element = false;
    for line in lines {
        let line = line.trim_end_matches('\r');
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                format = Some(match words.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLe,
                    other => return Err(bad(format!("unsupported format {other:?}"))),
                })
            }
            Some("comment") => {
                if words.next() == Some("id") {
                    let rest = line.trim_start()["comment".len()..].trim_start()["id".len()..].trim_start();
                    let (k, name) = rest.split_once(' ').unwrap_or((rest, ""));
                    let k: u32 = k.parse().map_err(|_| bad(format!("bad id comment {line:?}")))?;
                    ids.insert(k, name.to_string());
                }
            }
            Some("obj_info") | None => {}
            Some("element") => {
                let name = words.next().unwrap_or_default();
                let count: usize = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad(format!("bad element line {line:?}")))?;
                if name == "vertex" {
                    if seen_element {
                        return Err(bad("the vertex element must come first".into()));
                    }
                    vertices = Some(count);
                    in_vertex = true;
                } else {
                    in_vertex = false;
                }
                seen_element = true;
            }
            Some("property") => {
                if !in_vertex {
                    continue;
                }
                let ty = words.next().unwrap_or_default();
                if ty == "list" {
                    return Err(bad("list properties on vertices are not supported".into()));
                }
                let scalar = Scalar::parse(ty).ok_or_else(|| bad(format!("unknown type {ty}")))?;
                let name = words.next().ok_or_else(|| bad(format!("bad property line {line:?}")))?;
                props.push((name.to_string(), scalar));
            }
            Some("end_header") => break,
            Some(other) => return Err(bad(format!("unexpected header keyword {other}"))),
        }
    }
    Ok(PlyHeader {
        format: format.ok_or_else(|| bad("missing format line".into()))?,
        vertices: vertices.ok_or_else(|| bad("missing vertex element".into()))?,
        props,
        ids,
        payload_start: start,
    })
}

pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let bad = |m: String| PipelineError::format(path, format!("PLY: {m}"));
    let header = parse_ply_header(bytes, path)?;
    let col = |name: &str| header.props.iter().position(|(n, _)| n == name);
    let (Some(ix), Some(iy), Some(iz)) = (col("x"), col("y"), col("z")) else {
        return Err(bad("x, y and z properties are required".into()));
    };
    let (i_int, i_lab, i_id) = (col("intensity"), col("label"), col("id"));
    let n = header.vertices;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let payload = &bytes[header.payload_start..];
    match header.format {
        PlyFormat::BinaryLe => {
            let stride: usize = header.props.iter().map(|(_, s)| s.size()).sum();
            if payload.len() < stride * n {
                return Err(bad(format!("payload holds fewer than {n} vertices")));
            }
            for chunk in payload.chunks_exact(stride).take(n) {
                let mut off = 0;
                let mut row = Vec::with_capacity(header.props.len());
                for (_, s) in &header.props {
                    row.push(s.read_le(&chunk[off..]));
                    off += s.size();
                }
                rows.push(row);
            }
        }
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(payload).map_err(|_| bad("ASCII payload is not UTF-8".into()))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()).take(n) {
                let row = line
                    .split_whitespace()
                    .map(|w| {
                        if w.eq_ignore_ascii_case("nan") {
                            Ok(f64::NAN)
                        } else {
                            w.parse::<f64>()
                        }
                    })
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|_| bad(format!("bad vertex line {line:?}")))?;
                if row.len() < header.props.len() {
                    return Err(bad(format!("vertex line has too few values: {line:?}")));
                }
                rows.push(row);
            }
            if rows.len() < n {
                return Err(bad(format!("payload holds fewer than {n} vertices")));
            }
        }
    }

    let points: Vec<Point3> = rows.iter().map(|r| Point3::new(r[ix], r[iy], r[iz])).collect();
    let mut cloud = PointCloud::new(points).map_err(|e| bad(e.to_string()))?;
    if let Some(k) = i_int {
        let values = rows.iter().map(|r| (!r[k].is_nan()).then_some(r[k])).collect();
        cloud = cloud.with_intensity(values).map_err(|e| bad(e.to_string()))?;
    }
    if let Some(k) = i_lab {
        let labels = rows
            .iter()
            .map(|r| {
                SemanticClass::from_code(r[k] as u8)
                    .filter(|_| r[k] >= 0.0 && r[k] <= 255.0 && r[k].fract() == 0.0)
                    .ok_or_else(|| bad(format!("unknown label code {}", r[k])))
            })
            .collect::<Result<Vec<_>>>()?;
        cloud = cloud.with_labels(labels).map_err(|e| bad(e.to_string()))?;
    }
    if let Some(k) = i_id {
        let ids = rows
            .iter()
            .map(|r| {
                let idx = r[k] as u32;
                if idx == NO_ID {
                    Ok(String::new())
                } else {
                    header
                        .ids
                        .get(&idx)
                        .cloned()
                        .ok_or_else(|| bad(format!("id index {idx} has no comment entry")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        cloud = cloud.with_ids(ids).map_err(|e| bad(e.to_string()))?;
    }
    Ok(cloud)
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| PipelineError::io(path, e))?;
    parse_ply(&bytes, path)
}

// ---------------------------------------------------------------- CSV

#[derive(Serialize, Deserialize)]
struct StatsRecord {
    class: String,
    count: usize,
    mean_intensity: Option<f64>,
    std_intensity: Option<f64>,
}

/// `class,count,mean_intensity,std_intensity`; undefined values are
/// empty fields.
pub fn encode_stats_csv(stats: &ClassStatistics) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &stats.rows {
        w.serialize(StatsRecord {
            class: row.class.name().to_string(),
            count: row.count,
            mean_intensity: row.mean_intensity,
            std_intensity: row.std_intensity,
        })
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    w.into_inner().map_err(|e| PipelineError::Config(e.to_string()))
}

pub fn write_stats_csv(path: &Path, stats: &ClassStatistics) -> Result<()> {
    write_atomic(path, &encode_stats_csv(stats)?)
}

/// `(class, count, mean, std)` rows of a statistics CSV.
pub type StatsRow = (SemanticClass, usize, Option<f64>, Option<f64>);

pub fn read_stats_csv(path: &Path) -> Result<Vec<StatsRow>> {
    let file = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    r.deserialize::<StatsRecord>()
        .map(|rec| {
            let rec = rec.map_err(|e| PipelineError::format(path, e.to_string()))?;
            let class = rec
                .class
                .parse()
                .map_err(|_| PipelineError::format(path, format!("unknown class {}", rec.class)))?;
            Ok((class, rec.count, rec.mean_intensity, rec.std_intensity))
        })
        .collect()
}

/// First line of a text file, for diagnostics.
pub fn first_line(path: &Path) -> Option<String> {
    let f = fs::File::open(path).ok()?;
    BufReader::new(f).lines().next()?.ok()
}
