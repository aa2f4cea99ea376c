//! NPY v1.0 codec for flow fields.
//!
//! Only one profile is supported: little-endian `f32`, C order, shape `(H, W, 2)`.
//! This is what the pipeline writes and what it expects to read back.

use super::{FlowError, FlowField};

/// The npy magic number.
const MAGIC: &[u8; 6] = b"\x93NUMPY";
/// Magic, two version bytes and the u16 header length.
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

/// Encodes a field as an NPY v1.0 byte buffer.
pub fn write_npy(field: &FlowField) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}, 2), }}",
        field.height(),
        field.width()
    );
    // header = dict + padding spaces + '\n', with PREAMBLE_LEN + header ≡ 0 (mod 64)
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    let header_len = dict.len() + pad + 1;

    let mut out = Vec::with_capacity(PREAMBLE_LEN + header_len + field.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', pad));
    out.push(b'\n');
    for v in field.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes an NPY buffer holding an `(H, W, 2)` little-endian `f32` array.
pub fn read_npy(bytes: &[u8]) -> Result<FlowField, FlowError> {
    if bytes.len() < PREAMBLE_LEN || &bytes[..6] != MAGIC {
        return Err(FlowError::Format("missing npy magic".into()));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(FlowError::Format(format!(
            "unsupported npy version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body_start = PREAMBLE_LEN + header_len;
    if bytes.len() < body_start {
        return Err(FlowError::Format("header extends past end of file".into()));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE_LEN..body_start])
        .map_err(|_| FlowError::Format("header is not ASCII".into()))?;
    let dict = parse_header(header)?;

    if dict.descr != "<f4" {
        return Err(FlowError::UnsupportedDtype(dict.descr));
    }
    if dict.fortran_order {
        return Err(FlowError::Format("fortran order is not supported".into()));
    }
    let (h, w) = match dict.shape.as_slice() {
        [h, w, 2] => (*h, *w),
        other => return Err(FlowError::Shape(other.to_vec())),
    };

    let n = h * w * 2;
    let payload = &bytes[body_start..];
    if payload.len() != n * 4 {
        return Err(FlowError::Length {
            expected: n * 4,
            actual: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FlowField::from_vec(w, h, data)
}

#[derive(Debug)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses the python dict literal of an npy header.
///
/// Accepts the subset numpy itself emits: string, boolean and integer-tuple values.
fn parse_header(header: &str) -> Result<HeaderDict, FlowError> {
    let bad = |msg: &str| FlowError::Format(format!("{msg} in header {:?}", header.trim_end()));
    let body = header
        .trim()
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| bad("expected a dict literal"))?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let (key, after) = take_quoted(rest).ok_or_else(|| bad("expected a quoted key"))?;
        let after = after
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| bad("expected ':'"))?
            .trim_start();
        let after = match key {
            "descr" => {
                let (value, after) = take_quoted(after).ok_or_else(|| bad("bad descr"))?;
                descr = Some(value.to_string());
                after
            }
            "fortran_order" => {
                if let Some(a) = after.strip_prefix("False") {
                    fortran = Some(false);
                    a
                } else if let Some(a) = after.strip_prefix("True") {
                    fortran = Some(true);
                    a
                } else {
                    return Err(bad("bad fortran_order"));
                }
            }
            "shape" => {
                let inner = after.strip_prefix('(').ok_or_else(|| bad("bad shape"))?;
                let close = inner.find(')').ok_or_else(|| bad("unterminated shape"))?;
                let dims = inner[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|_| bad("bad shape entry")))
                    .collect::<Result<Vec<_>, _>>()?;
                shape = Some(dims);
                &inner[close + 1..]
            }
            _ => return Err(bad("unknown key")),
        };
        let after = after.trim_start();
        rest = after.strip_prefix(',').unwrap_or(after).trim_start();
    }

    Ok(HeaderDict {
        descr: descr.ok_or_else(|| bad("missing descr"))?,
        fortran_order: fortran.ok_or_else(|| bad("missing fortran_order"))?,
        shape: shape.ok_or_else(|| bad("missing shape"))?,
    })
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &s[1..];
    let end = inner.find(quote)?;
    Some((&inner[..end], &inner[end + 1..]))
}
