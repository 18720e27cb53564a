mod common;

use govprobe::attnio::{
    from_bytes, pool, read_atn_file, to_bytes, write_atn_file, AtnReader, AttentionRecord, FeatureTable, HeadMask,
    PoolMode,
};
use govprobe::rng::SeededRng;
use govprobe::{Error, Execution};
use proptest::prelude::*;

use common::{brute_force_pool, fuzz_record};

fn records(seed: u64, n: usize) -> Vec<AttentionRecord> {
    let mut rng = SeededRng::new(seed);
    (0..n).map(|i| fuzz_record(&mut rng, &format!("corpus:s{i}:1:{}", 2 + i))).collect()
}

proptest! {
    #[test]
    fn container_round_trip(seed in any::<u64>(), n in 0usize..8) {
        let recs = records(seed, n);
        let bytes = to_bytes(&recs).unwrap();
        prop_assert_eq!(from_bytes(&bytes).unwrap(), recs);
    }

    #[test]
    fn pooling_matches_enumeration(seed in any::<u64>()) {
        let rec = &records(seed, 1)[0];
        let mask = HeadMask::full(rec.layers, rec.heads);
        for mode in PoolMode::ALL {
            let v = pool(rec, &mask, mode).unwrap();
            prop_assert_eq!(v.values.len(), rec.layers as usize * rec.heads as usize);
            for (k, &(l, a)) in v.head_index_map.iter().enumerate() {
                prop_assert_eq!(v.values[k], brute_force_pool(rec, l as usize, a as usize, mode));
            }
        }
    }

    #[test]
    fn max_both_dominates_each_direction(seed in any::<u64>()) {
        let rec = &records(seed, 1)[0];
        let mask = HeadMask::full(rec.layers, rec.heads);
        let g = pool(rec, &mask, PoolMode::GovToDep).unwrap().values;
        let d = pool(rec, &mask, PoolMode::DepToGov).unwrap().values;
        let m = pool(rec, &mask, PoolMode::MaxBoth).unwrap().values;
        for k in 0..m.len() {
            prop_assert_eq!(m[k], g[k].max(d[k]));
        }
    }
}

#[test]
fn every_truncation_is_an_error() {
    let bytes = to_bytes(&records(11, 3)).unwrap();
    for cut in 0..bytes.len() {
        let result = from_bytes(&bytes[..cut]);
        match result {
            Err(Error::Container { offset, .. }) => assert!(offset <= cut as u64, "cut {cut}, offset {offset}"),
            // a cut on a record boundary is a shorter, valid container
            Ok(recs) => assert!(recs.len() < 3 && to_bytes(&recs).unwrap().len() == cut, "cut {cut}"),
            Err(e) => panic!("cut {cut}: unexpected {e}"),
        }
    }
}

#[test]
fn bad_magic_and_version() {
    let mut bytes = to_bytes(&records(1, 1)).unwrap();
    bytes[0] = b'X';
    assert!(matches!(from_bytes(&bytes), Err(Error::Container { offset: 0, .. })));
    let mut bytes = to_bytes(&records(1, 1)).unwrap();
    bytes[4] = 9;
    assert!(matches!(from_bytes(&bytes), Err(Error::Container { .. })));
}

#[test]
fn reader_streams_files() {
    let recs = records(5, 20);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("attn.atn");
    write_atn_file(&path, &recs).unwrap();
    assert_eq!(read_atn_file(&path).unwrap(), recs);
    let file = std::io::BufReader::new(std::fs::File::open(&path).unwrap());
    let streamed: Vec<AttentionRecord> = AtnReader::new(file).unwrap().map(Result::unwrap).collect();
    assert_eq!(streamed, recs);
}

#[test]
fn feature_table_selects_masked_columns() {
    let mut rng = SeededRng::new(7);
    let recs: Vec<AttentionRecord> = (0..10)
        .map(|i| govprobe::synthetic::random_record(&mut rng, &format!("r{i}"), 12, 12, 2, 2))
        .collect();
    let table = FeatureTable::from_records(Execution::Sequential, &recs, PoolMode::GovToDep).unwrap();
    assert_eq!(table, FeatureTable::from_records(Execution::Parallel, &recs, PoolMode::GovToDep).unwrap());
    let mask = HeadMask::first_n_layers(12, 12, 3).unwrap();
    let x = table.select(&["r4", "r1"], &mask).unwrap();
    assert_eq!(x.dim(), (2, 36));
    for (row, rec) in [(0, &recs[4]), (1, &recs[1])] {
        for (k, (l, a)) in mask.iter().enumerate() {
            assert_eq!(x[[row, k]], rec.pool_head(l, a, PoolMode::GovToDep));
        }
    }
    assert!(table.select(&["missing"], &mask).is_err());
    let wrong = HeadMask::full(13, 12);
    assert!(table.select(&["r1"], &wrong).is_err());
}
