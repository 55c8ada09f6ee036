//! Data objects as ranks define them, before they have file GIDs.
//!
//! Variables name their dimensions by full name; conversion to and from a
//! [`Header`] resolves those names against the header's dimension list. The
//! canonical payload bytes of an [`ObjectDef`] are what ranks exchange and what
//! consistency checks compare.

use std::collections::{BTreeMap, HashMap};

use crate::codec::{CodecError, Reader, Writer};
use crate::model::{validate_attrs, validate_name, AttrValue, AttributeDef, DimensionDef, Header, NcType, VariableDef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectKind {
    Dimension,
    Variable,
    Attribute,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 3] = [ObjectKind::Dimension, ObjectKind::Variable, ObjectKind::Attribute];

    pub fn index(self) -> usize {
        self as usize
    }

    pub(crate) fn code(self) -> u8 {
        self as u8 + 1
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code.checked_sub(1)? as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Dimension => "dimension",
            ObjectKind::Variable => "variable",
            ObjectKind::Attribute => "attribute",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectDef {
    Dimension {
        len: u64,
    },
    Variable {
        /// Full names of the variable's dimensions.
        dims: Vec<String>,
        nc_type: NcType,
        attrs: Vec<AttributeDef>,
    },
    /// A global attribute of the object's block (or of the file).
    Attribute {
        value: AttrValue,
    },
}

impl ObjectDef {
    pub fn kind(&self) -> ObjectKind {
        match self {
            ObjectDef::Dimension { .. } => ObjectKind::Dimension,
            ObjectDef::Variable { .. } => ObjectKind::Variable,
            ObjectDef::Attribute { .. } => ObjectKind::Attribute,
        }
    }

    /// Canonical big-endian serialization.
    pub fn payload(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.push(self.kind().code());
        match self {
            ObjectDef::Dimension { len } => w.u64(*len),
            ObjectDef::Variable { dims, nc_type, attrs } => {
                w.u32(nc_type.code());
                w.u32(dims.len() as u32);
                for d in dims {
                    put_str(&mut w, d);
                }
                w.u32(attrs.len() as u32);
                for a in attrs {
                    put_str(&mut w, &a.name);
                    put_value(&mut w, &a.value);
                }
            }
            ObjectDef::Attribute { value } => put_value(&mut w, value),
        }
        w.buf
    }

    pub fn from_payload(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let code = r.take(1)?[0];
        let kind = ObjectKind::from_code(code)
            .ok_or_else(|| CodecError::Malformed(format!("unknown object kind {code}")))?;
        let def = match kind {
            ObjectKind::Dimension => ObjectDef::Dimension { len: r.u64()? },
            ObjectKind::Variable => {
                let nc_type = get_type(&mut r)?;
                let n = r.u32()? as usize;
                let n = r.count(n as u64, 4)?;
                let dims = (0..n).map(|_| get_str(&mut r)).collect::<Result<_, _>>()?;
                let n = r.u32()? as usize;
                let n = r.count(n as u64, 12)?;
                let attrs = (0..n)
                    .map(|_| {
                        Ok(AttributeDef {
                            name: get_str(&mut r)?,
                            value: get_value(&mut r)?,
                        })
                    })
                    .collect::<Result<_, CodecError>>()?;
                ObjectDef::Variable { dims, nc_type, attrs }
            }
            ObjectKind::Attribute => ObjectDef::Attribute {
                value: get_value(&mut r)?,
            },
        };
        if r.pos != bytes.len() {
            return Err(CodecError::Malformed("trailing bytes after object payload".into()));
        }
        Ok(def)
    }
}

fn put_str(w: &mut Writer, s: &str) {
    w.u32(s.len() as u32);
    w.buf.extend_from_slice(s.as_bytes());
}

fn get_str(r: &mut Reader) -> Result<String, CodecError> {
    let n = r.u32()? as usize;
    let raw = r.take(n)?;
    String::from_utf8(raw.to_vec()).map_err(|_| CodecError::InvalidName(String::from_utf8_lossy(raw).into_owned()))
}

fn put_value(w: &mut Writer, v: &AttrValue) {
    w.u32(v.nc_type().code());
    w.u32(v.len() as u32);
    w.buf.extend_from_slice(&v.to_be_bytes());
}

fn get_type(r: &mut Reader) -> Result<NcType, CodecError> {
    let code = r.u32()?;
    NcType::from_code(code).ok_or_else(|| CodecError::Malformed(format!("unknown type code {code}")))
}

fn get_value(r: &mut Reader) -> Result<AttrValue, CodecError> {
    let ty = get_type(r)?;
    let n = r.u32()? as usize;
    let n = r.count(n as u64, ty.size() as usize)?;
    Ok(AttrValue::from_be_bytes(ty, r.take(n * ty.size() as usize)?))
}

/// A named object definition as produced by a workload.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectDefinition {
    pub full_name: String,
    pub def: ObjectDef,
}

impl ObjectDefinition {
    pub fn new(full_name: impl Into<String>, def: ObjectDef) -> Self {
        Self {
            full_name: full_name.into(),
            def,
        }
    }

    pub fn kind(&self) -> ObjectKind {
        self.def.kind()
    }

    /// Checks the name and the payload on its own; dimension references are
    /// resolved by whoever holds the dimensions.
    pub fn validate(&self) -> Result<(), CodecError> {
        validate_full_name(&self.full_name)?;
        match &self.def {
            ObjectDef::Dimension { len: 0 } => Err(CodecError::Malformed(format!(
                "dimension {:?} has length 0",
                self.full_name
            ))),
            ObjectDef::Dimension { .. } => Ok(()),
            ObjectDef::Variable { attrs, .. } => validate_attrs(attrs),
            ObjectDef::Attribute { value } => validate_attrs(&[AttributeDef {
                name: self.full_name.clone(),
                value: value.clone(),
            }]),
        }
    }
}

/// Splits a full name at its last `/` into `(block path, local name)`.
/// Names without `/` belong to the root block `""`.
pub fn split_full_name(full_name: &str) -> (&str, &str) {
    full_name.rsplit_once('/').unwrap_or(("", full_name))
}

pub fn join_full_name(path: &str, local: &str) -> String {
    if path.is_empty() {
        local.to_string()
    } else {
        format!("{path}/{local}")
    }
}

/// A full name is valid when both parts are printable ASCII, the local part is
/// non-empty, and a `/` is never left with an empty path before it.
pub fn validate_full_name(full_name: &str) -> Result<(), CodecError> {
    validate_name(full_name)?;
    let (path, local) = split_full_name(full_name);
    if local.is_empty() || (path.is_empty() && full_name.contains('/')) {
        return Err(CodecError::InvalidName(full_name.to_string()));
    }
    Ok(())
}

/// Logical metadata of a file: `(kind, full name) -> payload`.
pub type ObjectSet = BTreeMap<(ObjectKind, String), Vec<u8>>;

pub fn object_set<'a>(objects: impl IntoIterator<Item = &'a ObjectDefinition>) -> ObjectSet {
    objects
        .into_iter()
        .map(|o| ((o.kind(), o.full_name.clone()), o.def.payload()))
        .collect()
}

/// Objects of one header namespace. Local names are prefixed with `path`.
pub fn objects_from_header(header: &Header, path: &str) -> Vec<ObjectDefinition> {
    let mut out = Vec::with_capacity(header.dims.len() + header.global_atts.len() + header.vars.len());
    for d in &header.dims {
        out.push(ObjectDefinition::new(
            join_full_name(path, &d.name),
            ObjectDef::Dimension { len: d.len },
        ));
    }
    for a in &header.global_atts {
        out.push(ObjectDefinition::new(
            join_full_name(path, &a.name),
            ObjectDef::Attribute { value: a.value.clone() },
        ));
    }
    for v in &header.vars {
        out.push(ObjectDefinition::new(
            join_full_name(path, &v.name),
            ObjectDef::Variable {
                dims: v
                    .dim_ids
                    .iter()
                    .map(|&id| join_full_name(path, &header.dims[id].name))
                    .collect(),
                nc_type: v.nc_type,
                attrs: v.attrs.clone(),
            },
        ));
    }
    out
}

/// Builds a header from objects already in file order. Each object's local
/// name is its full name with `strip` (a block path) removed; pass `""` to keep
/// full names. `begin`/`vsize` are left zero.
pub fn header_from_objects<'a>(
    objects: impl IntoIterator<Item = &'a ObjectDefinition>,
    strip: &str,
) -> Result<Header, CodecError> {
    let local = |full: &'a str| -> Result<&'a str, CodecError> {
        if strip.is_empty() {
            return Ok(full);
        }
        full.strip_prefix(strip)
            .and_then(|rest| rest.strip_prefix('/'))
            .ok_or_else(|| CodecError::Malformed(format!("object {full:?} is not in block {strip:?}")))
    };
    let mut header = Header::default();
    let mut dim_ids: HashMap<&str, usize> = HashMap::new();
    let mut vars = Vec::new();
    for o in objects {
        match &o.def {
            ObjectDef::Dimension { len } => {
                dim_ids.insert(o.full_name.as_str(), header.dims.len());
                header.dims.push(DimensionDef {
                    name: local(&o.full_name)?.to_string(),
                    len: *len,
                });
            }
            ObjectDef::Attribute { value } => header.global_atts.push(AttributeDef {
                name: local(&o.full_name)?.to_string(),
                value: value.clone(),
            }),
            ObjectDef::Variable { .. } => vars.push(o),
        }
    }
    for o in vars {
        let ObjectDef::Variable { dims, nc_type, attrs } = &o.def else {
            unreachable!()
        };
        let ids = dims
            .iter()
            .map(|d| {
                dim_ids.get(d.as_str()).copied().ok_or_else(|| CodecError::DanglingDimRef {
                    var: o.full_name.clone(),
                    dim_id: u64::MAX,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        header.vars.push(VariableDef {
            name: local(&o.full_name)?.to_string(),
            dim_ids: ids,
            nc_type: *nc_type,
            attrs: attrs.clone(),
            begin: 0,
            vsize: 0,
        });
    }
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<ObjectDefinition> {
        vec![
            ObjectDefinition::new("g/x", ObjectDef::Dimension { len: 4 }),
            ObjectDefinition::new(
                "g/v",
                ObjectDef::Variable {
                    dims: vec!["g/x".into(), "g/x".into()],
                    nc_type: NcType::Double,
                    attrs: vec![AttributeDef {
                        name: "units".into(),
                        value: AttrValue::Chars(b"K".to_vec()),
                    }],
                },
            ),
            ObjectDefinition::new("g/title", ObjectDef::Attribute { value: AttrValue::Floats(vec![0.5]) }),
        ]
    }

    #[test]
    fn payload_round_trip() {
        for o in sample() {
            assert_eq!(ObjectDef::from_payload(&o.def.payload()).unwrap(), o.def);
        }
        assert!(ObjectDef::from_payload(&[9]).is_err());
        assert!(ObjectDef::from_payload(&[]).is_err());
    }

    #[test]
    fn split_names() {
        assert_eq!(split_full_name("b00001/v000002"), ("b00001", "v000002"));
        assert_eq!(split_full_name("a/b/c"), ("a/b", "c"));
        assert_eq!(split_full_name("flat"), ("", "flat"));
        assert!(validate_full_name("/v").is_err());
        assert!(validate_full_name("b/").is_err());
        assert!(validate_full_name("/shared/v").is_ok());
    }

    #[test]
    fn header_conversion_round_trip() {
        let objects = sample();
        let header = header_from_objects(&objects, "g").unwrap();
        assert_eq!(header.dims[0].name, "x");
        assert_eq!(header.vars[0].dim_ids, vec![0, 0]);
        let back = objects_from_header(&header, "g");
        assert_eq!(object_set(&back), object_set(&objects));
    }

    #[test]
    fn dangling_dimension_name() {
        let objects = vec![ObjectDefinition::new(
            "v",
            ObjectDef::Variable {
                dims: vec!["nope".into()],
                nc_type: NcType::Int,
                attrs: vec![],
            },
        )];
        assert!(matches!(
            header_from_objects(&objects, ""),
            Err(CodecError::DanglingDimRef { .. })
        ));
    }
}
