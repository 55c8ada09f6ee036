mod common;

use parahead::codec::block::{
    decode_block, decode_image, encode_block, encode_image, layout_blocks, MetadataBlock,
};
use parahead::codec::classic::{
    compute_offsets, decode_classic, decode_classic_full, encode_classic, encode_with_layout,
    encoded_len, FormatVersion,
};
use parahead::model::{AttrValue, AttributeDef, DimensionDef, Header, NcType, VariableDef};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const VERSIONS: [FormatVersion; 3] = [FormatVersion::Cdf1, FormatVersion::Cdf2, FormatVersion::Cdf5];

fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

/// The header written by `tests/fixtures/gen_reference.py`.
fn reference_header() -> Header {
    let var = |name: &str, dims: Vec<usize>, ty, attrs| VariableDef {
        name: name.into(),
        dim_ids: dims,
        nc_type: ty,
        attrs,
        begin: 0,
        vsize: 0,
    };
    Header {
        dims: vec![
            DimensionDef { name: "x".into(), len: 10 },
            DimensionDef { name: "y".into(), len: 3 },
        ],
        global_atts: vec![
            AttributeDef { name: "title".into(), value: AttrValue::Chars(b"demo".to_vec()) },
            AttributeDef { name: "level".into(), value: AttrValue::Ints(vec![3]) },
        ],
        vars: vec![
            var("v", vec![0], NcType::Int, vec![]),
            var(
                "w",
                vec![1, 0],
                NcType::Short,
                vec![
                    AttributeDef { name: "units".into(), value: AttrValue::Chars(b"m".to_vec()) },
                    AttributeDef { name: "scale".into(), value: AttrValue::Doubles(vec![1.5]) },
                ],
            ),
            var("s", vec![], NcType::Byte, vec![]),
        ],
    }
}

#[test]
fn matches_reference_encoder_on_empty_file() {
    for (version, file) in [(FormatVersion::Cdf1, "ref_empty_v1.nc"), (FormatVersion::Cdf2, "ref_empty_v2.nc")] {
        let ours = encode_classic(&Header::default(), version).unwrap();
        assert_eq!(ours, fixture(file), "{file}");
    }
}

#[test]
fn matches_reference_encoder_on_populated_file() {
    for (version, file) in [(FormatVersion::Cdf1, "ref_v1.nc"), (FormatVersion::Cdf2, "ref_v2.nc")] {
        let reference = fixture(file);
        let (laid, ours) = encode_with_layout(&reference_header(), version, 4).unwrap();
        assert_eq!(ours, reference[..ours.len()], "{file}");
        let (decoded, v, used) = decode_classic_full(&reference).unwrap();
        assert_eq!((decoded, v, used), (laid, version, ours.len()));
    }
}

#[test]
fn reference_offsets_match_hand_layout() {
    let (laid, bytes) = encode_with_layout(&reference_header(), FormatVersion::Cdf1, 4).unwrap();
    assert_eq!(bytes.len(), 264);
    let begins: Vec<u64> = laid.vars.iter().map(|v| v.begin).collect();
    let sizes: Vec<u64> = laid.vars.iter().map(|v| v.vsize).collect();
    assert_eq!(begins, [264, 304, 364]);
    assert_eq!(sizes, [40, 60, 4]);
}

#[test]
fn seeded_headers_round_trip_all_versions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let h = common::random_header(&mut rng, false);
        for v in VERSIONS {
            let bytes = encode_classic(&h, v).unwrap();
            assert_eq!(bytes.len(), encoded_len(&h, v));
            assert_eq!(decode_classic(&bytes).unwrap(), h);
        }
    }
}

#[test]
fn seeded_block_sets_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let blocks = common::random_blocks(&mut rng);
        let (table, image) = encode_image(&blocks, 8).unwrap();
        assert_eq!(table, layout_blocks(&blocks, 8));
        let (decoded_table, decoded) = decode_image(&image).unwrap();
        assert_eq!(decoded_table, table);
        let strip = |bs: &[MetadataBlock]| -> Vec<(String, Header)> {
            bs.iter()
                .map(|b| {
                    let mut c = b.content.clone();
                    c.vars.iter_mut().for_each(|v| {
                        v.begin = 0;
                        v.vsize = 0;
                    });
                    (b.block_path.clone(), c)
                })
                .collect()
        };
        assert_eq!(strip(&decoded), strip(&blocks));
        for (entry, block) in decoded_table.entries.iter().zip(&decoded) {
            assert_eq!(entry.n_vars, block.content.vars.len() as u64);
            assert_eq!(entry.n_dims, block.content.dims.len() as u64);
            assert_eq!(entry.n_atts, block.content.global_atts.len() as u64);
        }
    }
}

#[test]
fn offsets_are_monotone_and_disjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let h = common::random_header(&mut rng, true);
        let reserve = encoded_len(&h, FormatVersion::Cdf5) as u64 + 17;
        let laid = compute_offsets(&h, FormatVersion::Cdf5, reserve, 16).unwrap();
        for pair in laid.vars.windows(2) {
            assert!(pair[0].begin + pair[0].vsize <= pair[1].begin);
            assert!(pair[0].begin < pair[1].begin);
        }
        if let Some(first) = laid.vars.first() {
            assert_eq!(first.begin % 16, 0);
            assert!(first.begin >= reserve);
        }
    }
}

proptest! {
    #[test]
    fn classic_encode_is_a_fixed_point(seed in any::<u64>(), v in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = common::random_header(&mut rng, false);
        let bytes = encode_classic(&h, VERSIONS[v]).unwrap();
        let again = encode_classic(&decode_classic(&bytes).unwrap(), VERSIONS[v]).unwrap();
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn block_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in common::random_blocks(&mut rng) {
            let bytes = encode_block(&block).unwrap();
            prop_assert_eq!(decode_block(&bytes).unwrap(), block);
        }
    }

    #[test]
    fn decoding_garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_classic(&bytes);
        let _ = decode_block(&bytes);
        let _ = decode_image(&bytes);
    }

    #[test]
    fn truncated_prefixes_are_errors(seed in any::<u64>(), cut in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = common::random_header(&mut rng, true);
        let bytes = encode_classic(&h, FormatVersion::Cdf5).unwrap();
        let at = ((bytes.len() as f64) * cut) as usize;
        prop_assert!(decode_classic(&bytes[..at]).is_err());
    }
}
