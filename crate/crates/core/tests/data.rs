use std::collections::BTreeSet;
use std::path::Path;

use proptest::prelude::*;

use xmodal_core::data::{
    batch_iter, default_vocabulary, generate_synthetic, load_dataset, parse_dataset, save_dataset,
    split, write_dataset, SplitConfig, SynthConfig, Tuple, TupleDataset,
};
use xmodal_core::Error;

fn arb_dataset() -> impl Strategy<Value = TupleDataset> {
    (2usize..4, 1usize..5, 2usize..6, 1usize..12).prop_flat_map(|(m, d, vocab, n)| {
        let tuple = (
            prop::collection::vec(
                prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), d),
                m,
            ),
            prop::collection::btree_set(0..vocab as u32, 0..=vocab),
        );
        prop::collection::vec(tuple, n).prop_map(move |ts| {
            let tuples = ts
                .into_iter()
                .enumerate()
                .map(|(i, (views, labels))| Tuple {
                    id: (i as u64) * 7 + 3,
                    labels,
                    views,
                })
                .collect();
            TupleDataset::new(vec![d; m], default_vocabulary(vocab), tuples).unwrap()
        })
    })
}

fn text_of(ds: &TupleDataset) -> String {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn parse(text: &str) -> xmodal_core::Result<TupleDataset> {
    parse_dataset(text, Path::new("mem.tsv"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_round_trip_is_exact(ds in arb_dataset()) {
        let back = parse(&text_of(&ds)).unwrap();
        prop_assert_eq!(back.dims(), ds.dims());
        prop_assert_eq!(back.tuples(), ds.tuples());
    }

    #[test]
    fn split_is_a_partition(n in 10usize..200, seed in any::<u64>()) {
        let ds = generate_synthetic(&SynthConfig { num_tuples: n, seed, ..SynthConfig::default() }).unwrap();
        let (tr, va, te) = split(&ds, &SplitConfig { seed, ..SplitConfig::default() }).unwrap();
        prop_assert_eq!(tr.len() + va.len() + te.len(), n);
        prop_assert_eq!(va.len(), (n as f64 * 0.24 + 1e-9).floor() as usize);
        let ids = |d: &TupleDataset| d.tuples().iter().map(|t| t.id).collect::<BTreeSet<_>>();
        let (a, b, c) = (ids(&tr), ids(&va), ids(&te));
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        prop_assert_eq!(a.len() + b.len() + c.len(), n);
    }

    #[test]
    fn batches_cover_each_tuple_once(n in 2usize..150, b in 2usize..40, seed in any::<u64>(), epoch in 0usize..20) {
        let batches = batch_iter(n, b, seed, epoch).unwrap();
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        prop_assert!(batches.iter().all(|c| c.len() >= 2 && c.len() <= b));
        let dropped = if n % b == 1 { 1 } else { 0 };
        prop_assert_eq!(seen.len(), n - dropped);
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), n - dropped);
        prop_assert_eq!(batches, batch_iter(n, b, seed, epoch).unwrap());
    }
}

#[test]
fn synthetic_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synth.tsv");
    let ds = generate_synthetic(&SynthConfig {
        num_tuples: 120,
        multi_label: true,
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.tuples(), ds.tuples());
    assert_eq!(back.label_vocabulary().len(), 8);
    save_dataset(&back, &dir.path().join("again.tsv")).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(dir.path().join("again.tsv")).unwrap()
    );
}

#[test]
fn default_split_sizes() {
    let ds = generate_synthetic(&SynthConfig::default()).unwrap();
    let (tr, va, te) = split(&ds, &SplitConfig::default()).unwrap();
    assert_eq!((tr.len(), va.len(), te.len()), (1040, 480, 480));
}

fn sample_text() -> String {
    let tuples = (0..4)
        .map(|i| Tuple {
            id: i,
            labels: BTreeSet::from([(i % 2) as u32]),
            views: vec![vec![i as f64, 0.5], vec![-1.0, i as f64 * 0.25]],
        })
        .collect();
    text_of(&TupleDataset::new(vec![2, 2], default_vocabulary(2), tuples).unwrap())
}

#[test]
fn truncated_file_names_last_complete_line() {
    let text = sample_text();
    let cut = &text[..text.len() - 5];
    match parse(cut) {
        Err(Error::Parse { line, detail, .. }) => {
            assert_eq!(line, 9);
            assert!(detail.contains("last complete line is 8"), "{detail}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn malformed_records_are_rejected() {
    let text = sample_text();
    let lines: Vec<&str> = text.lines().collect();
    let rebuild = |ls: &[String]| ls.iter().map(|l| format!("{l}\n")).collect::<String>();
    let owned: Vec<String> = lines.iter().map(|s| s.to_string()).collect();

    let mut nan = owned.clone();
    let fields: Vec<&str> = owned[1].split('\t').collect();
    nan[1] = format!("{}\t{}\tNaN,1.0\t{}", fields[0], fields[1], fields[3]);
    assert!(parse(&rebuild(&nan)).is_err());

    let mut three = owned.clone();
    three[2] = fields[..3].join("\t");
    assert!(matches!(
        parse(&rebuild(&three)),
        Err(Error::Parse { line: 3, .. })
    ));

    let mut dup = owned.clone();
    dup.push(owned[1].clone());
    assert!(matches!(parse(&rebuild(&dup)), Err(Error::Parse { .. })));

    let mut missing = owned.clone();
    missing.pop();
    assert!(matches!(
        parse(&rebuild(&missing)),
        Err(Error::Validation(_))
    ));

    let mut bad_header = owned.clone();
    bad_header[0] = "#something-else".into();
    assert!(matches!(
        parse(&rebuild(&bad_header)),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn dataset_invariants_are_enforced() {
    let t = |id, views: Vec<Vec<f64>>| Tuple {
        id,
        labels: BTreeSet::from([0]),
        views,
    };
    let vocab = default_vocabulary(2);
    assert!(TupleDataset::new(vec![2], vocab.clone(), vec![t(0, vec![vec![1.0, 2.0]])]).is_err());
    assert!(TupleDataset::new(
        vec![1, 1],
        vocab.clone(),
        vec![
            t(0, vec![vec![1.0], vec![1.0]]),
            t(0, vec![vec![1.0], vec![1.0]])
        ]
    )
    .is_err());
    assert!(TupleDataset::new(
        vec![1, 1],
        vocab.clone(),
        vec![t(0, vec![vec![1.0], vec![1.0, 2.0]])]
    )
    .is_err());
    assert!(TupleDataset::new(
        vec![1, 1],
        vocab,
        vec![t(0, vec![vec![f64::INFINITY], vec![1.0]])]
    )
    .is_err());
    let over = Tuple {
        id: 1,
        labels: BTreeSet::from([5]),
        views: vec![vec![1.0], vec![1.0]],
    };
    assert!(TupleDataset::new(vec![1, 1], default_vocabulary(2), vec![over]).is_err());
}
