//! Classic header layout.
//!
//! ```text
//! header    = magic numrecs dim_list gatt_list var_list
//! magic     = 'C' 'D' 'F' version            version in {1, 2, 5}
//! list      = ABSENT | tag count entry*      ABSENT = 0 (4 bytes) + 0 (count width)
//! dim       = name length
//! attr      = name nc_type nelems values     values zero-padded to 4 bytes
//! var       = name ndims dimid* vatt_list nc_type vsize begin
//! name      = nelems chars                   chars zero-padded to 4 bytes
//! ```
//!
//! Count-like fields (numrecs, list counts, name lengths, dimension lengths,
//! dimids, vsize) are 4 bytes in versions 1 and 2 and 8 bytes in version 5.
//! `begin` is 4 bytes in version 1 and 8 bytes otherwise.

use super::{padding, CodecError, Reader, Result, Writer, TAG_ATTRIBUTE, TAG_DIMENSION, TAG_VARIABLE};
use crate::model::{round_up, AttrValue, AttributeDef, DimensionDef, Header, NcType, VariableDef};

pub const CLASSIC_MAGIC: [u8; 3] = *b"CDF";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FormatVersion {
    /// 32-bit offsets.
    Cdf1,
    /// 64-bit offsets.
    Cdf2,
    /// 64-bit counts and offsets, extended types.
    #[default]
    Cdf5,
}

impl FormatVersion {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(Self::Cdf1),
            2 => Some(Self::Cdf2),
            5 => Some(Self::Cdf5),
            _ => None,
        }
    }

    pub fn byte(self) -> u8 {
        match self {
            Self::Cdf1 => 1,
            Self::Cdf2 => 2,
            Self::Cdf5 => 5,
        }
    }

    pub(crate) fn widths(self) -> Widths {
        match self {
            Self::Cdf1 => Widths::new(4, 4),
            Self::Cdf2 => Widths::new(4, 8),
            Self::Cdf5 => Widths::new(8, 8),
        }
    }
}

/// Field widths of a list-grammar encoding.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Widths {
    pub count: usize,
    pub offset: usize,
}

impl Widths {
    pub const fn new(count: usize, offset: usize) -> Self {
        Self { count, offset }
    }

    fn max(width: usize) -> u64 {
        if width == 4 {
            i32::MAX as u64
        } else {
            i64::MAX as u64
        }
    }

    fn check(width: usize, value: u64, what: &str) -> Result<()> {
        if value > Self::max(width) {
            return Err(CodecError::UnrepresentableValue(format!(
                "{what} = {value} exceeds {}-byte field",
                width
            )));
        }
        Ok(())
    }

    fn check_count(&self, value: u64, what: &str) -> Result<()> {
        Self::check(self.count, value, what)
    }

    fn name_len(&self, name: &str) -> usize {
        self.count + name.len() + padding(name.len())
    }

    fn attr_len(&self, att: &AttributeDef) -> usize {
        let raw = att.value.len() * att.value.nc_type().size() as usize;
        self.name_len(&att.name) + 4 + self.count + raw + padding(raw)
    }

    fn list_len(&self) -> usize {
        4 + self.count
    }

    /// Byte length of the three lists (dims, global attributes, variables).
    pub fn lists_len(&self, header: &Header) -> usize {
        let dims: usize = header
            .dims
            .iter()
            .map(|d| self.name_len(&d.name) + self.count)
            .sum();
        let gatts: usize = header.global_atts.iter().map(|a| self.attr_len(a)).sum();
        let vars: usize = header
            .vars
            .iter()
            .map(|v| {
                self.name_len(&v.name)
                    + self.count * (1 + v.dim_ids.len())
                    + self.list_len()
                    + v.attrs.iter().map(|a| self.attr_len(a)).sum::<usize>()
                    + 4
                    + self.count
                    + self.offset
            })
            .sum();
        3 * self.list_len() + dims + gatts + vars
    }

    pub fn write_name(&self, w: &mut Writer, name: &str) -> Result<()> {
        self.check_count(name.len() as u64, "name length")?;
        w.uint(name.len() as u64, self.count);
        w.padded(name.as_bytes());
        Ok(())
    }

    fn write_attrs(&self, w: &mut Writer, attrs: &[AttributeDef]) -> Result<()> {
        if attrs.is_empty() {
            w.u32(0);
            w.uint(0, self.count);
            return Ok(());
        }
        self.check_count(attrs.len() as u64, "attribute count")?;
        w.u32(TAG_ATTRIBUTE);
        w.uint(attrs.len() as u64, self.count);
        for att in attrs {
            let ty = att.value.nc_type();
            if ty == NcType::Int64 && self.count == 4 {
                return Err(CodecError::UnrepresentableValue(format!(
                    "attribute {:?}: INT64 requires version 5",
                    att.name
                )));
            }
            self.write_name(w, &att.name)?;
            w.u32(ty.code());
            self.check_count(att.value.len() as u64, "attribute length")?;
            w.uint(att.value.len() as u64, self.count);
            w.padded(&att.value.to_be_bytes());
        }
        Ok(())
    }

    /// Writes dim_list, gatt_list and var_list.
    pub fn write_lists(&self, w: &mut Writer, header: &Header) -> Result<()> {
        if header.dims.is_empty() {
            w.u32(0);
            w.uint(0, self.count);
        } else {
            self.check_count(header.dims.len() as u64, "dimension count")?;
            w.u32(TAG_DIMENSION);
            w.uint(header.dims.len() as u64, self.count);
            for dim in &header.dims {
                self.write_name(w, &dim.name)?;
                self.check_count(dim.len, "dimension length")?;
                w.uint(dim.len, self.count);
            }
        }

        self.write_attrs(w, &header.global_atts)?;

        if header.vars.is_empty() {
            w.u32(0);
            w.uint(0, self.count);
        } else {
            self.check_count(header.vars.len() as u64, "variable count")?;
            w.u32(TAG_VARIABLE);
            w.uint(header.vars.len() as u64, self.count);
            for var in &header.vars {
                if var.nc_type == NcType::Int64 && self.count == 4 {
                    return Err(CodecError::UnrepresentableValue(format!(
                        "variable {:?}: INT64 requires version 5",
                        var.name
                    )));
                }
                self.write_name(w, &var.name)?;
                w.uint(var.dim_ids.len() as u64, self.count);
                for &id in &var.dim_ids {
                    w.uint(id as u64, self.count);
                }
                self.write_attrs(w, &var.attrs)?;
                w.u32(var.nc_type.code());
                self.check_count(var.vsize, "vsize")?;
                w.uint(var.vsize, self.count);
                Self::check(self.offset, var.begin, "begin")?;
                w.uint(var.begin, self.offset);
            }
        }
        Ok(())
    }

    pub fn read_name(&self, r: &mut Reader) -> Result<String> {
        let len = r.uint(self.count)?;
        let len = r.count(len, 1)?;
        let raw = r.padded(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CodecError::InvalidName(String::from_utf8_lossy(raw).into_owned()))
    }

    /// Reads a list header; returns the entry count, checking the tag.
    fn read_list_head(&self, r: &mut Reader, tag: u32, min_entry: usize) -> Result<usize> {
        let got = r.u32()?;
        let count = r.uint(self.count)?;
        if got == 0 {
            if count != 0 {
                return Err(CodecError::Malformed("ABSENT list with non-zero count".into()));
            }
            return Ok(0);
        }
        if got != tag {
            return Err(CodecError::Malformed(format!("expected list tag {tag:#x}, found {got:#x}")));
        }
        if count == 0 {
            return Err(CodecError::Malformed("tagged list with zero entries".into()));
        }
        r.count(count, min_entry)
    }

    fn read_attrs(&self, r: &mut Reader) -> Result<Vec<AttributeDef>> {
        let n = self.read_list_head(r, TAG_ATTRIBUTE, self.count * 2 + 4)?;
        let mut attrs = Vec::with_capacity(n);
        for _ in 0..n {
            let name = self.read_name(r)?;
            let code = r.u32()?;
            let ty = NcType::from_code(code)
                .ok_or_else(|| CodecError::Malformed(format!("unknown type code {code}")))?;
            let nelems = r.uint(self.count)?;
            let nelems = r.count(nelems, ty.size() as usize)?;
            let raw = r.padded(nelems * ty.size() as usize)?;
            attrs.push(AttributeDef {
                name,
                value: AttrValue::from_be_bytes(ty, raw),
            });
        }
        Ok(attrs)
    }

    /// Reads the three lists and validates the result.
    pub fn read_lists(&self, r: &mut Reader) -> Result<Header> {
        let ndims = self.read_list_head(r, TAG_DIMENSION, self.count * 2)?;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            let name = self.read_name(r)?;
            let len = r.uint(self.count)?;
            dims.push(DimensionDef { name, len });
        }

        let global_atts = self.read_attrs(r)?;

        let nvars = self.read_list_head(r, TAG_VARIABLE, self.count * 5)?;
        let mut vars = Vec::with_capacity(nvars);
        for _ in 0..nvars {
            let name = self.read_name(r)?;
            let ndims = r.uint(self.count)?;
            let ndims = r.count(ndims, self.count)?;
            let mut dim_ids = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                let id = r.uint(self.count)?;
                if id >= dims.len() as u64 {
                    return Err(CodecError::DanglingDimRef { var: name, dim_id: id });
                }
                dim_ids.push(id as usize);
            }
            let attrs = self.read_attrs(r)?;
            let code = r.u32()?;
            let nc_type = NcType::from_code(code)
                .ok_or_else(|| CodecError::Malformed(format!("unknown type code {code}")))?;
            let vsize = r.uint(self.count)?;
            let begin = r.uint(self.offset)?;
            vars.push(VariableDef {
                name,
                dim_ids,
                nc_type,
                attrs,
                begin,
                vsize,
            });
        }

        let header = Header {
            dims,
            global_atts,
            vars,
        };
        header.validate()?;
        Ok(header)
    }
}

/// Encoded size of `header` under `version`; independent of `begin`/`vsize` values.
pub fn encoded_len(header: &Header, version: FormatVersion) -> usize {
    let w = version.widths();
    4 + w.count + w.lists_len(header)
}

pub fn encode_classic(header: &Header, version: FormatVersion) -> Result<Vec<u8>> {
    header.validate()?;
    let widths = version.widths();
    let mut w = Writer {
        buf: Vec::with_capacity(encoded_len(header, version)),
    };
    w.buf.extend_from_slice(&CLASSIC_MAGIC);
    w.buf.push(version.byte());
    w.uint(0, widths.count); // numrecs
    widths.write_lists(&mut w, header)?;
    Ok(w.buf)
}

/// Version byte of a classic image, or `BadMagic`.
pub fn peek_version(bytes: &[u8]) -> Result<FormatVersion> {
    if bytes.len() < 4 {
        if bytes.len() < 3 && CLASSIC_MAGIC.starts_with(bytes) {
            return Err(CodecError::Truncated {
                at: bytes.len(),
                needed: 4 - bytes.len(),
            });
        }
        return Err(CodecError::BadMagic);
    }
    if bytes[..3] != CLASSIC_MAGIC {
        return Err(CodecError::BadMagic);
    }
    FormatVersion::from_byte(bytes[3]).ok_or(CodecError::BadMagic)
}

/// Parses a classic header at the start of `bytes`, returning the header, its
/// version and the number of bytes consumed. Trailing bytes are ignored.
pub fn decode_classic_full(bytes: &[u8]) -> Result<(Header, FormatVersion, usize)> {
    let version = peek_version(bytes)?;
    let widths = version.widths();
    let mut r = Reader::new(bytes);
    r.take(4)?;
    let numrecs = r.uint(widths.count)?;
    if numrecs != 0 {
        return Err(CodecError::Malformed(format!(
            "numrecs = {numrecs}; record variables are not supported"
        )));
    }
    let header = widths.read_lists(&mut r)?;
    Ok((header, version, r.pos))
}

pub fn decode_classic(bytes: &[u8]) -> Result<Header> {
    decode_classic_full(bytes).map(|(h, _, _)| h)
}

/// Assigns `vsize` to every variable and lays out their data contiguously in
/// GID order, starting at `header_reserve` rounded up to `alignment`.
pub fn compute_offsets(
    header: &Header,
    version: FormatVersion,
    header_reserve: u64,
    alignment: u64,
) -> Result<Header> {
    if alignment == 0 || !alignment.is_power_of_two() {
        return Err(CodecError::BadAlignment(alignment));
    }
    let needed = encoded_len(header, version) as u64;
    if header_reserve < needed {
        return Err(CodecError::ReserveTooSmall {
            reserve: header_reserve,
            needed,
        });
    }
    let mut out = header.clone();
    assign_data_offsets(&mut out, round_up(header_reserve, alignment))?;
    Ok(out)
}

/// Fills `vsize` and consecutive `begin` offsets starting at `start`; returns
/// the end offset of the last variable's data.
pub(crate) fn assign_data_offsets(header: &mut Header, start: u64) -> Result<u64> {
    let mut next = start;
    for i in 0..header.vars.len() {
        let vsize = header.vars[i].data_size(&header.dims)?;
        let var = &mut header.vars[i];
        var.vsize = vsize;
        var.begin = next;
        next = next
            .checked_add(vsize)
            .ok_or_else(|| CodecError::UnrepresentableValue("data section overflows".into()))?;
    }
    Ok(next)
}

/// Header reserve used by the writers: encoded size rounded up to `alignment`.
pub fn classic_reserve(header: &Header, version: FormatVersion, alignment: u64) -> u64 {
    round_up(encoded_len(header, version) as u64, alignment)
}

/// Lays out `header` with the writers' reserve rule and encodes it.
pub fn encode_with_layout(header: &Header, version: FormatVersion, alignment: u64) -> Result<(Header, Vec<u8>)> {
    let reserve = classic_reserve(header, version, alignment);
    let laid = compute_offsets(header, version, reserve, alignment)?;
    let bytes = encode_classic(&laid, version)?;
    Ok((laid, bytes))
}
