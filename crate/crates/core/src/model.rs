//! Logical header model shared by both on-disk formats.
//!
//! A [`Header`] is the netCDF-style metadata set of one namespace: dimensions,
//! global attributes and variables. List position defines the GID of every
//! entry. The same type describes a whole classic file and the content of one
//! metadata block in the partitioned format.

use std::collections::HashSet;

use crate::codec::CodecError;

/// External data types, tagged with their classic on-disk codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NcType {
    Byte,
    Char,
    Short,
    Int,
    Float,
    Double,
    Int64,
}

impl NcType {
    pub const ALL: [NcType; 7] = [
        NcType::Byte,
        NcType::Char,
        NcType::Short,
        NcType::Int,
        NcType::Float,
        NcType::Double,
        NcType::Int64,
    ];

    pub fn code(self) -> u32 {
        match self {
            NcType::Byte => 1,
            NcType::Char => 2,
            NcType::Short => 3,
            NcType::Int => 4,
            NcType::Float => 5,
            NcType::Double => 6,
            NcType::Int64 => 10,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            1 => NcType::Byte,
            2 => NcType::Char,
            3 => NcType::Short,
            4 => NcType::Int,
            5 => NcType::Float,
            6 => NcType::Double,
            10 => NcType::Int64,
            _ => return None,
        })
    }

    /// Element size in bytes.
    pub fn size(self) -> u64 {
        match self {
            NcType::Byte | NcType::Char => 1,
            NcType::Short => 2,
            NcType::Int | NcType::Float => 4,
            NcType::Double | NcType::Int64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NcType::Byte => "BYTE",
            NcType::Char => "CHAR",
            NcType::Short => "SHORT",
            NcType::Int => "INT",
            NcType::Float => "FLOAT",
            NcType::Double => "DOUBLE",
            NcType::Int64 => "INT64",
        }
    }
}

/// Homogeneous attribute values; the variant carries the type tag.
#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    Bytes(Vec<i8>),
    Chars(Vec<u8>),
    Shorts(Vec<i16>),
    Ints(Vec<i32>),
    Floats(Vec<f32>),
    Doubles(Vec<f64>),
    Int64s(Vec<i64>),
}

impl AttrValue {
    pub fn nc_type(&self) -> NcType {
        match self {
            AttrValue::Bytes(_) => NcType::Byte,
            AttrValue::Chars(_) => NcType::Char,
            AttrValue::Shorts(_) => NcType::Short,
            AttrValue::Ints(_) => NcType::Int,
            AttrValue::Floats(_) => NcType::Float,
            AttrValue::Doubles(_) => NcType::Double,
            AttrValue::Int64s(_) => NcType::Int64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            AttrValue::Bytes(v) => v.len(),
            AttrValue::Chars(v) => v.len(),
            AttrValue::Shorts(v) => v.len(),
            AttrValue::Ints(v) => v.len(),
            AttrValue::Floats(v) => v.len(),
            AttrValue::Doubles(v) => v.len(),
            AttrValue::Int64s(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Big-endian value bytes, unpadded.
    pub fn to_be_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * self.nc_type().size() as usize);
        match self {
            AttrValue::Bytes(v) => out.extend(v.iter().map(|b| *b as u8)),
            AttrValue::Chars(v) => out.extend_from_slice(v),
            AttrValue::Shorts(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            AttrValue::Ints(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            AttrValue::Floats(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            AttrValue::Doubles(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            AttrValue::Int64s(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        }
        out
    }

    /// Inverse of [`AttrValue::to_be_bytes`]; `raw.len()` must be a multiple of the element size.
    pub fn from_be_bytes(ty: NcType, raw: &[u8]) -> Self {
        fn chunks<const N: usize>(raw: &[u8]) -> impl Iterator<Item = [u8; N]> + '_ {
            raw.chunks_exact(N).map(|c| c.try_into().unwrap())
        }
        match ty {
            NcType::Byte => AttrValue::Bytes(raw.iter().map(|b| *b as i8).collect()),
            NcType::Char => AttrValue::Chars(raw.to_vec()),
            NcType::Short => AttrValue::Shorts(chunks(raw).map(i16::from_be_bytes).collect()),
            NcType::Int => AttrValue::Ints(chunks(raw).map(i32::from_be_bytes).collect()),
            NcType::Float => AttrValue::Floats(chunks(raw).map(f32::from_be_bytes).collect()),
            NcType::Double => AttrValue::Doubles(chunks(raw).map(f64::from_be_bytes).collect()),
            NcType::Int64 => AttrValue::Int64s(chunks(raw).map(i64::from_be_bytes).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionDef {
    pub name: String,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDef {
    pub name: String,
    pub value: AttrValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableDef {
    pub name: String,
    /// GIDs of the dimensions in the enclosing header, slowest-varying first.
    pub dim_ids: Vec<usize>,
    pub nc_type: NcType,
    pub attrs: Vec<AttributeDef>,
    /// File offset of the variable's data.
    pub begin: u64,
    /// Data size in bytes, rounded up to a multiple of 4.
    pub vsize: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Header {
    pub dims: Vec<DimensionDef>,
    pub global_atts: Vec<AttributeDef>,
    pub vars: Vec<VariableDef>,
}

pub(crate) fn round_up(value: u64, align: u64) -> u64 {
    debug_assert!(align > 0);
    value.div_ceil(align) * align
}

/// Names are non-empty printable ASCII.
pub fn validate_name(name: &str) -> Result<(), CodecError> {
    if name.is_empty() || !name.bytes().all(|b| (0x20..=0x7e).contains(&b)) {
        return Err(CodecError::InvalidName(name.to_string()));
    }
    Ok(())
}

fn check_unique<'a>(names: impl Iterator<Item = &'a str>) -> Result<(), CodecError> {
    let mut seen = HashSet::new();
    for name in names {
        if !seen.insert(name) {
            return Err(CodecError::DuplicateName(name.to_string()));
        }
    }
    Ok(())
}

pub(crate) fn validate_attrs(attrs: &[AttributeDef]) -> Result<(), CodecError> {
    for att in attrs {
        validate_name(&att.name)?;
        if att.value.is_empty() && att.value.nc_type() != NcType::Char {
            return Err(CodecError::Malformed(format!(
                "numeric attribute {:?} has no values",
                att.name
            )));
        }
    }
    check_unique(attrs.iter().map(|a| a.name.as_str()))
}

impl VariableDef {
    /// Data bytes of this variable given the dimension table it refers to.
    pub fn data_size(&self, dims: &[DimensionDef]) -> Result<u64, CodecError> {
        let mut elems: u64 = 1;
        for &id in &self.dim_ids {
            let dim = dims.get(id).ok_or_else(|| CodecError::DanglingDimRef {
                var: self.name.clone(),
                dim_id: id as u64,
            })?;
            elems = elems.checked_mul(dim.len).ok_or_else(|| {
                CodecError::UnrepresentableValue(format!("size of variable {:?} overflows", self.name))
            })?;
        }
        let raw = elems.checked_mul(self.nc_type.size()).ok_or_else(|| {
            CodecError::UnrepresentableValue(format!("size of variable {:?} overflows", self.name))
        })?;
        Ok(round_up(raw, 4))
    }
}

impl Header {
    pub fn is_empty(&self) -> bool {
        self.dims.is_empty() && self.global_atts.is_empty() && self.vars.is_empty()
    }

    /// Checks names, uniqueness, dimension lengths and dimension references.
    pub fn validate(&self) -> Result<(), CodecError> {
        for dim in &self.dims {
            validate_name(&dim.name)?;
            if dim.len == 0 {
                return Err(CodecError::Malformed(format!(
                    "dimension {:?} has length 0; record dimensions are not supported",
                    dim.name
                )));
            }
        }
        check_unique(self.dims.iter().map(|d| d.name.as_str()))?;
        validate_attrs(&self.global_atts)?;
        for var in &self.vars {
            validate_name(&var.name)?;
            for &id in &var.dim_ids {
                if id >= self.dims.len() {
                    return Err(CodecError::DanglingDimRef {
                        var: var.name.clone(),
                        dim_id: id as u64,
                    });
                }
            }
            validate_attrs(&var.attrs)?;
        }
        check_unique(self.vars.iter().map(|v| v.name.as_str()))
    }

    /// Sum of the variables' data sizes.
    pub fn data_size(&self) -> Result<u64, CodecError> {
        self.vars
            .iter()
            .try_fold(0u64, |acc, v| Ok(acc + v.data_size(&self.dims)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(name: &str, dims: Vec<usize>, ty: NcType) -> VariableDef {
        VariableDef {
            name: name.into(),
            dim_ids: dims,
            nc_type: ty,
            attrs: vec![],
            begin: 0,
            vsize: 0,
        }
    }

    #[test]
    fn type_codes_round_trip() {
        for ty in NcType::ALL {
            assert_eq!(NcType::from_code(ty.code()), Some(ty));
        }
        assert_eq!(NcType::from_code(7), None);
    }

    #[test]
    fn short_variable_size_is_padded() {
        let dims = vec![
            DimensionDef { name: "a".into(), len: 3 },
            DimensionDef { name: "b".into(), len: 5 },
        ];
        assert_eq!(var("v", vec![0, 1], NcType::Short).data_size(&dims).unwrap(), 32);
        assert_eq!(var("s", vec![], NcType::Byte).data_size(&dims).unwrap(), 4);
    }

    #[test]
    fn validate_rejects_bad_headers() {
        let mut h = Header::default();
        h.dims.push(DimensionDef { name: "x".into(), len: 1 });
        h.dims.push(DimensionDef { name: "x".into(), len: 2 });
        assert!(matches!(h.validate(), Err(CodecError::DuplicateName(n)) if n == "x"));

        let mut h = Header::default();
        h.vars.push(var("v", vec![0], NcType::Int));
        assert!(matches!(h.validate(), Err(CodecError::DanglingDimRef { .. })));

        let mut h = Header::default();
        h.dims.push(DimensionDef { name: "t".into(), len: 0 });
        assert!(matches!(h.validate(), Err(CodecError::Malformed(_))));

        assert!(validate_name("").is_err());
        assert!(validate_name("tab\there").is_err());
        assert!(validate_name("b00001/v000001").is_ok());
    }

    #[test]
    fn attr_bytes_round_trip() {
        let vals = [
            AttrValue::Shorts(vec![-1, 7]),
            AttrValue::Doubles(vec![1.5, -0.25]),
            AttrValue::Int64s(vec![i64::MIN]),
            AttrValue::Chars(b"units".to_vec()),
        ];
        for v in vals {
            assert_eq!(AttrValue::from_be_bytes(v.nc_type(), &v.to_be_bytes()), v);
        }
    }
}
