#![allow(dead_code)]

use parahead::codec::block::MetadataBlock;
use parahead::model::{AttrValue, AttributeDef, DimensionDef, Header, NcType, VariableDef};
use rand::seq::SliceRandom;
use rand::Rng;

const NAME_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-. +:";

pub fn random_name(rng: &mut impl Rng, prefix: &str, index: usize) -> String {
    let extra = rng.gen_range(0..9);
    let tail: String = (0..extra)
        .map(|_| *NAME_CHARS.choose(rng).unwrap() as char)
        .collect();
    format!("{prefix}{index}{tail}")
}

pub fn random_attr_value(rng: &mut impl Rng, allow_int64: bool) -> AttrValue {
    let n = rng.gen_range(1..6);
    let pick = if allow_int64 { 7 } else { 6 };
    match rng.gen_range(0..pick) {
        0 => AttrValue::Bytes((0..n).map(|_| rng.gen()).collect()),
        1 => AttrValue::Chars((0..rng.gen_range(0..12)).map(|_| rng.gen_range(0x20..0x7f)).collect()),
        2 => AttrValue::Shorts((0..n).map(|_| rng.gen()).collect()),
        3 => AttrValue::Ints((0..n).map(|_| rng.gen()).collect()),
        4 => AttrValue::Floats((0..n).map(|_| rng.gen_range(-1e6f32..1e6)).collect()),
        5 => AttrValue::Doubles((0..n).map(|_| rng.gen_range(-1e12f64..1e12)).collect()),
        _ => AttrValue::Int64s((0..n).map(|_| rng.gen()).collect()),
    }
}

fn random_attrs(rng: &mut impl Rng, max: usize, allow_int64: bool) -> Vec<AttributeDef> {
    (0..rng.gen_range(0..=max))
        .map(|i| AttributeDef {
            name: random_name(rng, "a", i),
            value: random_attr_value(rng, allow_int64),
        })
        .collect()
}

/// A valid header; `allow_int64` false keeps it encodable under every version.
pub fn random_header(rng: &mut impl Rng, allow_int64: bool) -> Header {
    let dims: Vec<DimensionDef> = (0..rng.gen_range(0..6))
        .map(|i| DimensionDef {
            name: random_name(rng, "d", i),
            len: rng.gen_range(1..2000),
        })
        .collect();
    let types: Vec<NcType> = NcType::ALL
        .into_iter()
        .filter(|t| allow_int64 || *t != NcType::Int64)
        .collect();
    let vars = (0..rng.gen_range(0..6))
        .map(|i| {
            let ndims = if dims.is_empty() { 0 } else { rng.gen_range(0..=3) };
            VariableDef {
                name: random_name(rng, "v", i),
                dim_ids: (0..ndims).map(|_| rng.gen_range(0..dims.len())).collect(),
                nc_type: *types.choose(rng).unwrap(),
                attrs: random_attrs(rng, 3, allow_int64),
                begin: rng.gen_range(0..1 << 30),
                vsize: rng.gen_range(0..1 << 30) & !3,
            }
        })
        .collect();
    Header {
        dims,
        global_atts: random_attrs(rng, 3, allow_int64),
        vars,
    }
}

/// Blocks with distinct paths; one of them may be the root block.
pub fn random_blocks(rng: &mut impl Rng) -> Vec<MetadataBlock> {
    let n = rng.gen_range(0..6);
    let mut blocks: Vec<MetadataBlock> = (0..n)
        .map(|i| MetadataBlock {
            block_path: if i == 0 && rng.gen_bool(0.3) {
                String::new()
            } else {
                format!("grp{}/{}", rng.gen_range(0..3), random_name(rng, "b", i))
            },
            content: random_header(rng, true),
        })
        .collect();
    blocks.sort_by(|a, b| a.block_path.cmp(&b.block_path));
    blocks.dedup_by(|a, b| a.block_path == b.block_path);
    blocks
}
