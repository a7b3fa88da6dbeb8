#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2014, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

pub fn stamp(i: usize) -> NaiveDateTime {
    start() + Duration::minutes(5 * i as i64)
}

pub fn nab_stamp(i: usize) -> String {
    stamp(i).format("%Y-%m-%d %H:%M:%S%.6f").to_string()
}

pub fn write_nab_csv(path: &Path, values: &[f64]) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let mut text = String::from("timestamp,value\n");
    for (i, v) in values.iter().enumerate() {
        writeln!(text, "{},{}", stamp(i).format("%Y-%m-%d %H:%M:%S"), v).unwrap();
    }
    std::fs::write(path, text).unwrap();
}

/// Label JSON with inclusive index windows per dataset key.
pub fn write_labels(path: &Path, entries: &[(&str, Vec<(usize, usize)>)]) {
    let map: serde_json::Map<String, serde_json::Value> = entries
        .iter()
        .map(|(key, windows)| {
            let list = windows.iter().map(|(a, b)| serde_json::json!([nab_stamp(*a), nab_stamp(*b)])).collect();
            (key.to_string(), serde_json::Value::Array(list))
        })
        .collect();
    std::fs::write(path, serde_json::to_string_pretty(&map).unwrap()).unwrap();
}

pub fn normal(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn sine(n: usize, period: f64, noise: f64, seed: u64) -> Vec<f64> {
    let e = normal(seed, n);
    (0..n).map(|t| 10.0 + 3.0 * (2.0 * std::f64::consts::PI * t as f64 / period).sin() + noise * e[t]).collect()
}

/// Sine with a three-point spike of height `height` starting at `at`.
pub fn sine_with_spike(n: usize, at: usize, height: f64, seed: u64) -> Vec<f64> {
    let mut v = sine(n, 24.0, 0.4, seed);
    for x in &mut v[at..at + 3] {
        *x += height;
    }
    v
}
