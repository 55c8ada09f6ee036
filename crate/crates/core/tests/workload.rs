use std::collections::{BTreeMap, BTreeSet};

use parahead::object::{ObjectDef, ObjectKind};
use parahead::workload::{
    gen_workload, scaled_count, ConflictInjection, ConflictMode, Dataset, NameScheme, Partition, WorkloadError,
    WorkloadSpec,
};

#[test]
fn full_dataset_per_rank_counts_at_four_ranks() {
    let w = gen_workload(&WorkloadSpec::scaled(Dataset::D98M, 1.0, 4, 1)).unwrap();
    for r in 0..4 {
        assert_eq!(w.count(r, ObjectKind::Variable), 142_120);
        let dims = w.count(r, ObjectKind::Dimension);
        assert!((213_178..=213_179).contains(&dims), "{dims}");
    }
    let total: usize = (0..4).map(|r| w.count(r, ObjectKind::Dimension)).sum();
    assert_eq!(total, 852_715);
}

#[test]
fn ten_variables_split_over_two_ranks() {
    let w = gen_workload(&WorkloadSpec::new(10, 4, 2, 0)).unwrap();
    assert_eq!(w.count(0, ObjectKind::Variable), 5);
    assert_eq!(w.count(1, ObjectKind::Variable), 5);
    let names = |r: usize| -> BTreeSet<&str> { w.ranks[r].iter().map(|o| o.full_name.as_str()).collect() };
    assert!(names(0).is_disjoint(&names(1)));
}

#[test]
fn one_injected_type_conflict() {
    let mut spec = WorkloadSpec::new(40, 60, 3, 21);
    spec.conflicts = Some(ConflictInjection {
        count: 1,
        mode: ConflictMode::TypeMismatch,
    });
    let w = gen_workload(&spec).unwrap();
    assert_eq!(w.injected.len(), 1);
    let mut defs: BTreeMap<&str, Vec<(usize, &ObjectDef)>> = BTreeMap::new();
    for (r, objects) in w.ranks.iter().enumerate() {
        for o in objects.iter().filter(|o| o.kind() == ObjectKind::Variable) {
            defs.entry(&o.full_name).or_default().push((r, &o.def));
        }
    }
    let multi: Vec<_> = defs.iter().filter(|(_, d)| d.len() > 1).collect();
    assert_eq!(multi.len(), 1);
    let (name, d) = multi[0];
    assert_eq!(*name, w.injected[0]);
    assert_eq!(d.len(), 2);
    assert_ne!(d[0].0, d[1].0);
    match (d[0].1, d[1].1) {
        (ObjectDef::Variable { nc_type: a, dims: da, .. }, ObjectDef::Variable { nc_type: b, dims: db, .. }) => {
            assert_ne!(a, b);
            assert_eq!(da, db);
        }
        _ => unreachable!(),
    }
}

#[test]
fn dim_conflicts_change_only_dimensions() {
    let mut spec = WorkloadSpec::new(40, 60, 2, 4);
    spec.conflicts = Some(ConflictInjection {
        count: 3,
        mode: ConflictMode::DimMismatch,
    });
    let w = gen_workload(&spec).unwrap();
    assert_eq!(w.injected.len(), 3);
    for name in &w.injected {
        let defs: Vec<&ObjectDef> = w.ranks.iter().flatten().filter(|o| &o.full_name == name).map(|o| &o.def).collect();
        assert_eq!(defs.len(), 2);
        let (ObjectDef::Variable { nc_type: a, dims: da, .. }, ObjectDef::Variable { nc_type: b, dims: db, .. }) =
            (defs[0], defs[1])
        else {
            unreachable!()
        };
        assert_eq!(a, b);
        assert_ne!(da, db);
    }
}

#[test]
fn shared_objects_are_replicated_identically() {
    let mut spec = WorkloadSpec::new(100, 150, 4, 9);
    spec.shared_fraction = 0.2;
    let w = gen_workload(&spec).unwrap();
    let shared = (spec.shared_vars() + spec.shared_dims()) as usize;
    assert_eq!((spec.shared_vars(), spec.shared_dims()), (20, 30));
    for r in 1..4 {
        assert_eq!(w.ranks[r][..shared], w.ranks[0][..shared]);
    }
    let unique_vars: usize = (0..4).map(|r| w.count(r, ObjectKind::Variable) - 20).sum();
    assert_eq!(unique_vars, 80);
}

#[test]
fn generation_is_deterministic_in_the_seed() {
    let spec = WorkloadSpec::new(200, 300, 3, 5);
    assert_eq!(gen_workload(&spec).unwrap(), gen_workload(&spec).unwrap());
    let other = WorkloadSpec { seed: 6, ..spec.clone() };
    assert_ne!(gen_workload(&spec).unwrap().ranks, gen_workload(&other).unwrap().ranks);
}

#[test]
fn scale_preserves_the_variable_to_dimension_ratio() {
    for s in [0.001, 0.01, 0.05, 0.5] {
        let spec = WorkloadSpec::scaled(Dataset::D98M, s, 2, 0);
        assert_eq!(spec.total_vars, scaled_count(568_480, s));
        assert_eq!(spec.total_dims, scaled_count(852_715, s));
        let ratio = spec.total_dims as f64 / spec.total_vars as f64;
        assert!((ratio - 852_715.0 / 568_480.0).abs() < 2e-3, "{s}: {ratio}");
    }
    let desk = WorkloadSpec::scaled(Dataset::D98M, 0.01, 1, 0);
    assert_eq!((desk.total_vars, desk.total_dims), (5685, 8527));
}

#[test]
fn strict_partition_reports_the_remainder() {
    let mut spec = WorkloadSpec::new(10, 9, 4, 0);
    spec.partition = Partition::Strict;
    assert!(matches!(
        gen_workload(&spec),
        Err(WorkloadError::IndivisiblePartition { total: 10, ranks: 4, .. })
    ));
}

#[test]
fn name_schemes() {
    let mut spec = WorkloadSpec::new(4, 4, 2, 0);
    let blocked = gen_workload(&spec).unwrap();
    assert!(blocked.ranks[1].iter().all(|o| o.full_name.starts_with("b00001/")));
    spec.name_scheme = NameScheme::Flat;
    let flat = gen_workload(&spec).unwrap();
    assert!(flat.ranks.iter().flatten().all(|o| !o.full_name.contains('/')));
    assert!(flat.ranks[1].iter().any(|o| o.full_name == "v00001_000000"));
}
