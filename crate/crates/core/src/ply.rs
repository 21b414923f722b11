//! Binary little-endian PLY reader/writer for 3DGS-style splat files.
//!
//! Vertex layout written by [`save_ply`]:
//! `x y z nx ny nz f_dc_0..2 f_rest_0..(3*((L+1)^2-1)-1) opacity scale_0..2 rot_0..3 importance`,
//! all `float`. `f_rest` is channel-major (all red coefficients, then green,
//! then blue), matching the common exporter. Opacity and importance are
//! logits, scales are logs, `rot` is `(w, x, y, z)`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::model::{sh_coeff_count, Gaussian, SplatCloud};

#[derive(Debug, Clone, Copy)]
pub struct PlyLoadOptions {
    /// Importance logit assigned when the file has no `importance` property.
    pub default_importance_logit: f64,
}

impl Default for PlyLoadOptions {
    fn default() -> Self {
        PlyLoadOptions {
            default_importance_logit: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
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

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

struct Property {
    name: String,
    ty: Scalar,
    offset: usize,
}

struct Header {
    vertex_count: usize,
    stride: usize,
    props: Vec<Property>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut lineno = 0;
    let mut buf = Vec::new();
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut seen_other_before_vertex = false;
    let mut props = Vec::new();
    let mut stride = 0;
    loop {
        buf.clear();
        lineno += 1;
        let n = r
            .read_until(b'\n', &mut buf)
            .map_err(|e| parse_err(lineno, format!("read failed: {e}")))?;
        if n == 0 {
            return Err(parse_err(lineno, "unexpected end of file before end_header"));
        }
        let line = std::str::from_utf8(&buf)
            .map_err(|_| parse_err(lineno, "header is not valid UTF-8"))?
            .trim_end_matches(['\n', '\r']);
        let toks: Vec<&str> = line.split_whitespace().collect();
        if lineno == 1 {
            if line != "ply" {
                return Err(parse_err(1, format!("expected magic 'ply', found {line:?}")));
            }
            continue;
        }
        match toks.first().copied() {
            Some("format") => {
                if toks.get(1) != Some(&"binary_little_endian") {
                    return Err(parse_err(
                        lineno,
                        format!("unsupported format {line:?}; only binary_little_endian is read"),
                    ));
                }
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                if toks.len() != 3 {
                    return Err(parse_err(lineno, format!("malformed element line {line:?}")));
                }
                let count: usize = toks[2]
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad element count {:?}", toks[2])))?;
                if toks[1] == "vertex" {
                    if seen_other_before_vertex {
                        return Err(parse_err(
                            lineno,
                            "non-empty element precedes 'vertex'; unsupported layout",
                        ));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                } else {
                    if vertex_count.is_none() && count > 0 {
                        seen_other_before_vertex = true;
                    }
                    in_vertex = false;
                }
            }
            Some("property") => {
                if !in_vertex {
                    continue;
                }
                if toks.get(1) == Some(&"list") {
                    return Err(parse_err(lineno, "list properties on vertex are unsupported"));
                }
                if toks.len() != 3 {
                    return Err(parse_err(lineno, format!("malformed property line {line:?}")));
                }
                let ty = Scalar::parse(toks[1])
                    .ok_or_else(|| parse_err(lineno, format!("unknown property type {:?}", toks[1])))?;
                props.push(Property {
                    name: toks[2].to_string(),
                    ty,
                    offset: stride,
                });
                stride += ty.size();
            }
            Some("end_header") => break,
            _ => return Err(parse_err(lineno, format!("unrecognized header line {line:?}"))),
        }
    }
    let vertex_count = vertex_count.ok_or_else(|| parse_err(lineno, "no 'element vertex' declared"))?;
    Ok(Header {
        vertex_count,
        stride,
        props,
    })
}

/// SH degree implied by `n` f_rest properties.
pub fn degree_from_rest_count(n: usize) -> Option<usize> {
    (0..=3).find(|&l| 3 * (sh_coeff_count(l) - 1) == n)
}

pub fn load_ply(path: &Path) -> Result<SplatCloud> {
    load_ply_with(path, PlyLoadOptions::default())
}

pub fn load_ply_with(path: &Path, opts: PlyLoadOptions) -> Result<SplatCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = read_header(&mut r)?;
    let index: HashMap<&str, usize> = header
        .props
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.as_str(), i))
        .collect();
    let need = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Format(format!("missing vertex property {name:?}")))
    };

    let rest_count = header
        .props
        .iter()
        .filter(|p| p.name.starts_with("f_rest_"))
        .count();
    let degree = degree_from_rest_count(rest_count).ok_or_else(|| {
        Error::Format(format!(
            "{rest_count} f_rest properties does not match any SH degree in [0, 3] (expected 0, 9, 24 or 45)"
        ))
    })?;
    let rest: Vec<usize> = (0..rest_count)
        .map(|i| need(&format!("f_rest_{i}")))
        .collect::<Result<_>>()?;
    let pos = [need("x")?, need("y")?, need("z")?];
    let dc = [need("f_dc_0")?, need("f_dc_1")?, need("f_dc_2")?];
    let scale = [need("scale_0")?, need("scale_1")?, need("scale_2")?];
    let rot = [need("rot_0")?, need("rot_1")?, need("rot_2")?, need("rot_3")?];
    let opacity = need("opacity")?;
    let normal = ["nx", "ny", "nz"].map(|n| index.get(n).copied());
    let importance = index.get("importance").copied();

    let mut payload = vec![0u8; header.vertex_count * header.stride];
    r.read_exact(&mut payload).map_err(|e| {
        Error::Format(format!(
            "{}: vertex payload truncated ({} vertices x {} bytes expected): {e}",
            path.display(),
            header.vertex_count,
            header.stride
        ))
    })?;

    let rest_per_channel = sh_coeff_count(degree) - 1;
    let mut gaussians = Vec::with_capacity(header.vertex_count);
    for rec in payload.chunks_exact(header.stride.max(1)).take(header.vertex_count) {
        let get = |i: usize| {
            let p = &header.props[i];
            p.ty.read(&rec[p.offset..p.offset + p.ty.size()])
        };
        let mut sh = vec![[0.0; 3]; sh_coeff_count(degree)];
        sh[0] = dc.map(get);
        for ch in 0..3 {
            for j in 0..rest_per_channel {
                sh[j + 1][ch] = get(rest[ch * rest_per_channel + j]);
            }
        }
        gaussians.push(Gaussian {
            center: Vector3::from(pos.map(get)),
            log_scales: Vector3::from(scale.map(get)),
            rotation: rot.map(get),
            opacity_logit: get(opacity),
            sh,
            importance_logit: importance.map_or(opts.default_importance_logit, get),
            normal: normal.map(|n| n.map_or(0.0, |i| get(i) as f32)),
        });
    }
    Ok(SplatCloud {
        sh_degree: degree,
        gaussians,
    })
}

/// Property names in write order for degree `degree`.
pub fn property_names(degree: usize) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..3 * (sh_coeff_count(degree) - 1)).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names.push("importance".into());
    names
}

pub fn save_ply(cloud: &SplatCloud, path: &Path) -> Result<()> {
    cloud.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        cloud.len()
    );
    for name in property_names(cloud.sh_degree) {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(io)?;

    let rest_per_channel = sh_coeff_count(cloud.sh_degree) - 1;
    let mut rec: Vec<f32> = Vec::new();
    for g in &cloud.gaussians {
        rec.clear();
        rec.extend(g.center.iter().map(|&v| v as f32));
        rec.extend_from_slice(&g.normal);
        rec.extend(g.sh[0].iter().map(|&v| v as f32));
        for ch in 0..3 {
            rec.extend((0..rest_per_channel).map(|j| g.sh[j + 1][ch] as f32));
        }
        rec.push(g.opacity_logit as f32);
        rec.extend(g.log_scales.iter().map(|&v| v as f32));
        rec.extend(g.rotation.iter().map(|&v| v as f32));
        rec.push(g.importance_logit as f32);
        for v in &rec {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Byte offset where the vertex payload starts (just past `end_header\n`).
pub fn payload_offset(bytes: &[u8]) -> Option<usize> {
    let marker = b"end_header\n";
    bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .map(|p| p + marker.len())
}
