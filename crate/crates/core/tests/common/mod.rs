//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use bayes_mi::dataio::{Column, ColumnKind, Dataset, Value};
use bayes_mi::ContingencyTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn categorical(name: String, k: usize) -> Column {
    Column {
        name,
        kind: ColumnKind::Categorical,
        categories: (0..k).map(|v| format!("v{v}")).collect(),
        edges: None,
    }
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// A thyroid-screening-like dataset: 3163 instances, 23 categorical
/// features, about 95% majority class, a handful of informative features and
/// roughly 2500 missing values concentrated on a few columns.
pub fn hypothyroid_like(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (p(value | negative), p(value | positive), missing rate)
    let mut specs: Vec<(Vec<f64>, Vec<f64>, f64)> = vec![
        (vec![0.96, 0.04], vec![0.25, 0.75], 0.0),
        (vec![0.7, 0.25, 0.05], vec![0.1, 0.3, 0.6], 0.15),
        (vec![0.5, 0.3, 0.15, 0.05], vec![0.15, 0.2, 0.3, 0.35], 0.2),
        (vec![0.9, 0.1], vec![0.75, 0.25], 0.1),
    ];
    let noise_missing = [0.0, 0.0, 0.12, 0.0, 0.1, 0.0, 0.08, 0.0, 0.0, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    for (f, &miss) in noise_missing.iter().enumerate() {
        let k = 2 + f % 4;
        let mut p: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z);
        specs.push((p.clone(), p, miss));
    }
    let mut columns: Vec<Column> = specs
        .iter()
        .enumerate()
        .map(|(f, (p, _, _))| categorical(format!("f{f}"), p.len()))
        .collect();
    columns.push(Column {
        name: "class".into(),
        kind: ColumnKind::Categorical,
        categories: vec!["negative".into(), "hypothyroid".into()],
        edges: None,
    });
    let class_column = specs.len();
    let rows = (0..3163)
        .map(|_| {
            let y = usize::from(rng.random::<f64>() < 0.048);
            let mut row: Vec<Value> = specs
                .iter()
                .map(|(neg, pos, miss)| {
                    let v = draw(&mut rng, if y == 0 { neg } else { pos });
                    if rng.random::<f64>() < *miss {
                        Value::Missing
                    } else {
                        Value::Category(v)
                    }
                })
                .collect();
            row.push(Value::Category(y));
            row
        })
        .collect();
    Dataset {
        columns,
        rows,
        class_column,
        delimiter: b',',
        missing_token: "?".into(),
    }
}

/// Random table with the requested missingness pattern.
pub fn random_table(rng: &mut ChaCha8Rng, r: usize, s: usize, max_cell: u32, rows_missing: bool, cols_missing: bool) -> ContingencyTable {
    let joint = (0..r * s).map(|_| f64::from(rng.random_range(0..=max_cell))).collect();
    let margin = |rng: &mut ChaCha8Rng, on: bool, n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| if on { f64::from(rng.random_range(0..=max_cell)) } else { 0.0 })
            .collect()
    };
    let rows = margin(rng, rows_missing, r);
    let cols = margin(rng, cols_missing, s);
    ContingencyTable::new(r, s, joint, rows, cols).unwrap()
}
