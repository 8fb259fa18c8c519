//! Annotated PLY point clouds.
//!
//! Vertex properties understood: `x y z` (float or double), `red green blue`
//! (uchar), `confidence` (int), `semantic` (uchar: 0 = stem, 1 = leaf,
//! 255 = unlabeled) and `instance` (int). Any other scalar vertex property is
//! carried through as an extra column. ASCII and little-endian binary bodies
//! are supported.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Label, Point3, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            other => return Err(Error::PlyHeader(format!("unknown property type {other}"))),
        })
    }

    fn name(self) -> &'static str {
        match self {
            ScalarType::I8 => "char",
            ScalarType::U8 => "uchar",
            ScalarType::I16 => "short",
            ScalarType::U16 => "ushort",
            ScalarType::I32 => "int",
            ScalarType::U32 => "uint",
            ScalarType::F32 => "float",
            ScalarType::F64 => "double",
        }
    }

    fn read(self, r: &mut Cursor<&[u8]>) -> std::io::Result<f64> {
        Ok(match self {
            ScalarType::I8 => r.read_i8()? as f64,
            ScalarType::U8 => r.read_u8()? as f64,
            ScalarType::I16 => r.read_i16::<LittleEndian>()? as f64,
            ScalarType::U16 => r.read_u16::<LittleEndian>()? as f64,
            ScalarType::I32 => r.read_i32::<LittleEndian>()? as f64,
            ScalarType::U32 => r.read_u32::<LittleEndian>()? as f64,
            ScalarType::F32 => r.read_f32::<LittleEndian>()? as f64,
            ScalarType::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

struct Property {
    name: String,
    ty: ScalarType,
}

struct Header {
    format: PlyFormat,
    vertex_count: usize,
    properties: Vec<Property>,
    comments: Vec<String>,
}

/// Everything read from a PLY file.
#[derive(Debug, Clone)]
pub struct PlyFile {
    pub cloud: PointCloud,
    /// Unrecognized scalar vertex properties, by name, as f64.
    pub extras: Vec<(String, Vec<f64>)>,
    pub comments: Vec<String>,
}

impl PlyFile {
    pub fn extra(&self, name: &str) -> Option<&[f64]> {
        self.extras
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    Ok(read_ply(path)?.cloud)
}

/// Writes a binary little-endian PLY with no extra columns.
pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    write_ply(path, cloud, &[], &[], PlyFormat::BinaryLittleEndian)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PlyFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    const END: &[u8] = b"end_header";
    let pos = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::PlyHeader("missing end_header".into()))?;
    let mut body = pos + END.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    let header = std::str::from_utf8(&bytes[..pos])
        .map_err(|_| Error::PlyHeader("header is not valid UTF-8".into()))?;
    Ok((header, &bytes[body..]))
}

fn parse_header(text: &str) -> Result<Header> {
    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(Error::PlyHeader("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut comments = Vec::new();
    let mut in_vertex = false;
    let mut seen_other_element = false;
    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            None => {}
            Some("format") => {
                format = Some(match (tok.next(), tok.next()) {
                    (Some("ascii"), Some("1.0")) => PlyFormat::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => PlyFormat::BinaryLittleEndian,
                    (f, v) => {
                        return Err(Error::PlyHeader(format!(
                            "unsupported format {} {}",
                            f.unwrap_or(""),
                            v.unwrap_or("")
                        )))
                    }
                });
            }
            Some("comment") | Some("obj_info") => {
                comments.push(line.split_once(' ').map(|x| x.1).unwrap_or("").to_string());
            }
            Some("element") => {
                let name = tok.next().unwrap_or("");
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::PlyHeader(format!("bad element line '{line}'")))?;
                if name == "vertex" {
                    if seen_other_element {
                        return Err(Error::PlyHeader("vertex must be the first element".into()));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                } else {
                    if vertex_count.is_none() {
                        seen_other_element = true;
                    }
                    in_vertex = false;
                }
            }
            Some("property") => {
                if !in_vertex {
                    continue;
                }
                let ty = tok.next().unwrap_or("");
                if ty == "list" {
                    return Err(Error::PlyHeader("list properties on vertex are not supported".into()));
                }
                let ty = ScalarType::parse(ty)?;
                let name = tok
                    .next()
                    .ok_or_else(|| Error::PlyHeader(format!("property without name: '{line}'")))?;
                if properties.iter().any(|p: &Property| p.name == name) {
                    return Err(Error::PlyHeader(format!("duplicate property {name}")));
                }
                properties.push(Property {
                    name: name.to_string(),
                    ty,
                });
            }
            Some(other) => return Err(Error::PlyHeader(format!("unexpected keyword {other}"))),
        }
    }
    let format = format.ok_or_else(|| Error::PlyHeader("missing format line".into()))?;
    let vertex_count = vertex_count.ok_or_else(|| Error::PlyHeader("missing vertex element".into()))?;
    for axis in ["x", "y", "z"] {
        if !properties.iter().any(|p| p.name == axis) {
            return Err(Error::PlyHeader(format!("missing vertex property {axis}")));
        }
    }
    let has = |n: &str| properties.iter().any(|p| p.name == n);
    let rgb = [has("red"), has("green"), has("blue")];
    if rgb.iter().any(|&b| b) && !rgb.iter().all(|&b| b) {
        return Err(Error::PlyHeader("color needs all of red, green, blue".into()));
    }
    Ok(Header {
        format,
        vertex_count,
        properties,
        comments,
    })
}

fn parse_ply(bytes: &[u8]) -> Result<PlyFile> {
    let (header_text, body) = split_header(bytes)?;
    let header = parse_header(header_text)?;
    let n = header.vertex_count;
    let np = header.properties.len();
    let mut columns: Vec<Vec<f64>> = (0..np).map(|_| Vec::with_capacity(n)).collect();

    match header.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| Error::PlyBody("ASCII body is not UTF-8".into()))?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for row in 0..n {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::PlyBody(format!("expected {n} vertices, found {row}")))?;
                let values: Vec<&str> = line.split_whitespace().collect();
                if values.len() != np {
                    return Err(Error::PlyBody(format!(
                        "vertex {row} has {} values, header declares {np}",
                        values.len()
                    )));
                }
                for (col, v) in columns.iter_mut().zip(values) {
                    col.push(
                        v.parse::<f64>()
                            .map_err(|_| Error::PlyBody(format!("vertex {row}: cannot parse '{v}'")))?,
                    );
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut cur = Cursor::new(body);
            for row in 0..n {
                for (col, prop) in columns.iter_mut().zip(&header.properties) {
                    col.push(prop.ty.read(&mut cur).map_err(|_| {
                        Error::PlyBody(format!("binary body truncated at vertex {row} of {n}"))
                    })?);
                }
            }
        }
    }

    let take = |name: &str, columns: &mut Vec<Vec<f64>>, props: &mut Vec<Property>| -> Option<Vec<f64>> {
        let i = props.iter().position(|p| p.name == name)?;
        props.remove(i);
        Some(columns.remove(i))
    };
    let mut props = header.properties;
    let xs = take("x", &mut columns, &mut props).expect("checked in header");
    let ys = take("y", &mut columns, &mut props).expect("checked in header");
    let zs = take("z", &mut columns, &mut props).expect("checked in header");
    let positions: Vec<Point3> = (0..n).map(|i| [xs[i], ys[i], zs[i]]).collect();

    fn integral(v: f64, name: &str, max: f64) -> Result<f64> {
        if v.fract() != 0.0 || v < 0.0 || v > max {
            return Err(Error::PlyBody(format!("{name} value {v} out of range")));
        }
        Ok(v)
    }

    let colors = match (
        take("red", &mut columns, &mut props),
        take("green", &mut columns, &mut props),
        take("blue", &mut columns, &mut props),
    ) {
        (Some(r), Some(g), Some(b)) => Some(
            (0..n)
                .map(|i| {
                    Ok([
                        integral(r[i], "red", 255.0)? as u8,
                        integral(g[i], "green", 255.0)? as u8,
                        integral(b[i], "blue", 255.0)? as u8,
                    ])
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => None,
    };
    let confidence = take("confidence", &mut columns, &mut props)
        .map(|c| {
            c.into_iter()
                .map(|v| integral(v, "confidence", u32::MAX as f64).map(|v| v as u32))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let semantic = match take("semantic", &mut columns, &mut props) {
        Some(s) => s
            .into_iter()
            .map(|v| Label::from_code(integral(v, "semantic", 255.0)? as u8))
            .collect::<Result<Vec<_>>>()?,
        None => vec![Label::Unlabeled; n],
    };
    let instance = take("instance", &mut columns, &mut props)
        .map(|c| {
            c.into_iter()
                .map(|v| integral(v, "instance", u32::MAX as f64).map(|v| v as u32))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;

    let cloud = PointCloud::new(positions, colors, confidence, semantic, instance)
        .map_err(|e| Error::PlyBody(e.to_string()))?;
    let extras = props.into_iter().map(|p| p.name).zip(columns).collect();
    Ok(PlyFile {
        cloud,
        extras,
        comments: header.comments,
    })
}

/// Writes a cloud plus optional integer columns and header comments.
///
/// Positions are written as `float` when every coordinate is exactly
/// representable in 32 bits and as `double` otherwise, so binary files
/// round-trip bit-exactly.
pub fn write_ply(
    path: impl AsRef<Path>,
    cloud: &PointCloud,
    extras: &[(&str, &[i32])],
    comments: &[String],
    format: PlyFormat,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ply(cloud, extras, comments, format)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_ply(
    cloud: &PointCloud,
    extras: &[(&str, &[i32])],
    comments: &[String],
    format: PlyFormat,
) -> Result<Vec<u8>> {
    let n = cloud.len();
    for (name, col) in extras {
        if col.len() != n {
            return Err(Error::InvalidInput(format!(
                "extra column {name} has {} entries for {n} points",
                col.len()
            )));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidInput(format!("invalid property name '{name}'")));
        }
    }
    let single = cloud
        .positions()
        .iter()
        .all(|p| p.iter().all(|&c| (c as f32) as f64 == c));
    let pos_ty = if single { ScalarType::F32 } else { ScalarType::F64 };

    let mut out = Vec::new();
    let mut h = String::from("ply\n");
    h.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    for c in comments {
        h.push_str(&format!("comment {}\n", c.replace('\n', " ")));
    }
    h.push_str(&format!("element vertex {n}\n"));
    for axis in ["x", "y", "z"] {
        h.push_str(&format!("property {} {axis}\n", pos_ty.name()));
    }
    if cloud.colors().is_some() {
        h.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if cloud.confidence().is_some() {
        h.push_str("property int confidence\n");
    }
    h.push_str("property uchar semantic\n");
    if cloud.instance().is_some() {
        h.push_str("property int instance\n");
    }
    for (name, _) in extras {
        h.push_str(&format!("property int {name}\n"));
    }
    h.push_str("end_header\n");
    out.extend_from_slice(h.as_bytes());

    let overflow = |v: u32, what: &str| {
        i32::try_from(v).map_err(|_| Error::InvalidInput(format!("{what} value {v} exceeds int range")))
    };
    for i in 0..n {
        let p = cloud.positions()[i];
        match format {
            PlyFormat::Ascii => {
                let mut fields: Vec<String> = if single {
                    p.iter().map(|&c| format!("{}", c as f32)).collect()
                } else {
                    p.iter().map(|c| format!("{c}")).collect()
                };
                if let Some(col) = cloud.colors() {
                    fields.extend(col[i].iter().map(|c| c.to_string()));
                }
                if let Some(conf) = cloud.confidence() {
                    fields.push(overflow(conf[i], "confidence")?.to_string());
                }
                fields.push(cloud.semantic()[i].code().to_string());
                if let Some(inst) = cloud.instance() {
                    fields.push(overflow(inst[i], "instance")?.to_string());
                }
                for (_, col) in extras {
                    fields.push(col[i].to_string());
                }
                out.extend_from_slice(fields.join(" ").as_bytes());
                out.push(b'\n');
            }
            PlyFormat::BinaryLittleEndian => {
                let w = &mut out;
                for &c in &p {
                    if single {
                        w.write_f32::<LittleEndian>(c as f32).expect("vec write");
                    } else {
                        w.write_f64::<LittleEndian>(c).expect("vec write");
                    }
                }
                if let Some(col) = cloud.colors() {
                    w.write_all(&col[i]).expect("vec write");
                }
                if let Some(conf) = cloud.confidence() {
                    w.write_i32::<LittleEndian>(overflow(conf[i], "confidence")?)
                        .expect("vec write");
                }
                w.write_u8(cloud.semantic()[i].code()).expect("vec write");
                if let Some(inst) = cloud.instance() {
                    w.write_i32::<LittleEndian>(overflow(inst[i], "instance")?)
                        .expect("vec write");
                }
                for (_, col) in extras {
                    w.write_i32::<LittleEndian>(col[i]).expect("vec write");
                }
            }
        }
    }
    Ok(out)
}

/// Reads PLY bytes from any reader.
pub fn read_ply_from(mut reader: impl Read) -> Result<PlyFile> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<reader>", e))?;
    parse_ply(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ASCII3: &str = "ply\nformat ascii 1.0\ncomment toy\nelement vertex 3\n\
property float x\nproperty float y\nproperty float z\nproperty uchar semantic\nend_header\n\
0 0 0 0\n1 0 0 1\n0 1 0.5 1\n";

    #[test]
    fn parses_ascii_with_labels() {
        let f = read_ply_from(ASCII3.as_bytes()).unwrap();
        assert_eq!(f.cloud.len(), 3);
        assert_eq!(f.cloud.semantic(), &[Label::Stem, Label::Leaf, Label::Leaf]);
        assert_eq!(f.cloud.positions()[2], [0.0, 1.0, 0.5]);
        assert_eq!(f.comments, vec!["toy".to_string()]);
        assert!(f.cloud.colors().is_none());
    }

    #[test]
    fn missing_axis_is_a_header_error() {
        let text = ASCII3.replace("property float y\n", "");
        assert!(matches!(read_ply_from(text.as_bytes()), Err(Error::PlyHeader(_))));
    }

    #[test]
    fn unknown_semantic_code_is_rejected() {
        let text = ASCII3.replace("1 0 0 1\n", "1 0 0 7\n");
        assert!(read_ply_from(text.as_bytes()).is_err());
    }

    #[test]
    fn short_row_is_rejected() {
        let text = ASCII3.replace("1 0 0 1\n", "1 0 0\n");
        assert!(matches!(read_ply_from(text.as_bytes()), Err(Error::PlyBody(_))));
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let c = PointCloud::from_positions(vec![[1.0, 2.0, 3.0]; 4]).unwrap();
        let mut bytes = encode_ply(&c, &[], &[], PlyFormat::BinaryLittleEndian).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(parse_ply(&bytes), Err(Error::PlyBody(_))));
    }

    #[test]
    fn extras_are_carried() {
        let c = PointCloud::from_positions(vec![[0.5, 0.25, 1.0], [2.0, 3.0, 4.0]]).unwrap();
        for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let bytes = encode_ply(&c, &[("superpoint", &[7, -1])], &[], format).unwrap();
            let f = parse_ply(&bytes).unwrap();
            assert_eq!(f.extra("superpoint").unwrap(), &[7.0, -1.0]);
            assert_eq!(f.cloud, c);
        }
    }

    fn arb_cloud() -> impl Strategy<Value = PointCloud> {
        (1usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::array::uniform3(-1e3f64..1e3), n),
                prop::option::of(prop::collection::vec(prop::array::uniform3(any::<u8>()), n)),
                prop::option::of(prop::collection::vec(0u32..1000, n)),
                prop::collection::vec(prop::sample::select(vec![Label::Stem, Label::Leaf, Label::Unlabeled]), n),
                prop::option::of(prop::collection::vec(0u32..50, n)),
            )
                .prop_map(|(p, c, conf, s, inst)| PointCloud::new(p, c, conf, s, inst).unwrap())
        })
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_identity(cloud in arb_cloud()) {
            let bytes = encode_ply(&cloud, &[], &[], PlyFormat::BinaryLittleEndian).unwrap();
            prop_assert_eq!(parse_ply(&bytes).unwrap().cloud, cloud);
        }

        #[test]
        fn ascii_round_trip_is_identity(cloud in arb_cloud()) {
            let bytes = encode_ply(&cloud, &[], &[], PlyFormat::Ascii).unwrap();
            prop_assert_eq!(parse_ply(&bytes).unwrap().cloud, cloud);
        }
    }
}
