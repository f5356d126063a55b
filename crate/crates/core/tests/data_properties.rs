use leal_core::data::{
    encode_and_normalize, split_dataset, synthetic_feature_split, Column, Labels, Table,
};
use leal_core::nn::Task;
use leal_core::tensor::{RngStream, StreamLabel};
use proptest::prelude::*;

fn shuffle_stream(seed: u64) -> RngStream {
    RngStream::new(seed, StreamLabel::Shuffle)
}

fn mixed_table(n: usize, seed: u64) -> (Table, Labels) {
    let mut rng = RngStream::new(seed, StreamLabel::Synth);
    let cats = ["red", "green", "blue"];
    let mut rows = Vec::new();
    for _ in 0..n {
        rows.push(vec![
            format!("{}", rng.normal() * 3.0 + 1.0),
            cats[rng.below(3)].to_string(),
            format!("{}", rng.below(5)),
            cats[rng.below(2)].to_string(),
            format!("{}", rng.uniform()),
        ]);
    }
    let colors: Vec<String> = cats.iter().map(|c| c.to_string()).collect();
    let columns = vec![
        Column::numeric("a"),
        Column::categorical("colour", colors.clone()),
        Column::numeric("b"),
        Column::categorical("shade", colors),
        Column::numeric("c"),
    ];
    let labels = Labels {
        values: (0..n).map(|_| rng.below(3) as f64).collect(),
        task: Task::Classification { classes: 3 },
        class_names: vec!["x".into(), "y".into(), "z".into()],
    };
    (Table::new("mixed", columns, rows).unwrap(), labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn numeric_columns_are_standardized_on_training_rows(
        values in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..40),
        keep in prop::collection::vec(any::<bool>(), 40),
    ) {
        let names: Vec<String> = (0..3).map(|j| format!("c{j}")).collect();
        let table = Table::from_numeric("t", &names, &values).unwrap();
        let mut train: Vec<usize> = (0..values.len()).filter(|&i| keep[i]).collect();
        if train.len() < 2 {
            train = (0..values.len()).collect();
        }
        let enc = encode_and_normalize(&table, &train).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = train.iter().map(|&i| enc.values.row(i)[j]).collect();
            let t = col.len() as f64;
            let mean = col.iter().sum::<f64>() / t;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t).sqrt();
            prop_assert!(mean.abs() < 1e-8);
            if enc.blocks[j].std != 1.0 || sd > 1e-12 {
                prop_assert!((sd - 1.0).abs() < 1e-8, "column {} std {}", j, sd);
            }
        }
    }

    #[test]
    fn split_is_a_disjoint_cover(n in 10usize..1000, seed in any::<u64>()) {
        let s = split_dataset(n, &mut shuffle_stream(seed)).unwrap();
        prop_assert_eq!(s.sizes(), [7 * n / 10, n / 10, n - 7 * n / 10 - n / 10]);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(&s, &split_dataset(n, &mut shuffle_stream(seed)).unwrap());
    }
}

#[test]
fn one_hot_blocks_decode_to_source_categories() {
    let (table, _) = mixed_table(60, 1);
    let enc = encode_and_normalize(&table, &(0..40).collect::<Vec<_>>()).unwrap();
    for (b, block) in enc.blocks.iter().enumerate() {
        if block.categories.is_none() {
            continue;
        }
        let j = table.column_index(&block.name).unwrap();
        for i in 0..table.n() {
            assert_eq!(enc.decode_category(i, b), Some(table.rows[i][j].as_str()));
        }
    }
}

#[test]
fn synthetic_split_reconstructs_source_for_many_seeds() {
    let (table, labels) = mixed_table(40, 7);
    for seed in 0..50 {
        let b = synthetic_feature_split(&table, labels.clone(), &shuffle_stream(seed), true).unwrap();
        let gt = b.ground_truth.as_ref().unwrap();
        let mut sorted = gt.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..40).collect::<Vec<_>>(), "bijection");
        for p in &b.primary_table.columns {
            assert!(b.secondary_table.columns.iter().all(|s| s.name != p.name));
        }
        assert_eq!(b.primary_table.m() + b.secondary_table.m(), table.m());
        for i in 0..table.n() {
            for (j, col) in table.columns.iter().enumerate() {
                let value = match b.primary_table.column_index(&col.name) {
                    Ok(c) => &b.primary_table.rows[i][c],
                    Err(_) => {
                        let c = b.secondary_table.column_index(&col.name).unwrap();
                        &b.secondary_table.rows[gt[i]][c]
                    }
                };
                assert_eq!(value, &table.rows[i][j]);
            }
        }
        assert_eq!(b.labels, labels);
    }
}
