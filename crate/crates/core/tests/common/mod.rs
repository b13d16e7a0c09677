#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

pub fn load_schema(name: &str) -> Value {
    let text = std::fs::read_to_string(schema_dir().join(name)).expect("schema file");
    serde_json::from_str(&text).expect("schema parses")
}

/// Validator for the JSON Schema keywords used by the shipped schemas: `type`,
/// `required`, `properties`, `additionalProperties: false`, `items`, `enum`,
/// `minimum`, `maximum`, `minLength`, `maxLength` and local `$ref`.
pub fn validate(root: &Value, instance: &Value) -> Vec<String> {
    let mut errors = Vec::new();
    check(root, root, instance, "$", &mut errors);
    errors
}

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_u64() || v.is_i64() || v.as_f64().is_some_and(|f| f.fract() == 0.0),
        other => panic!("unsupported type keyword {other}"),
    }
}

fn check(root: &Value, schema: &Value, v: &Value, at: &str, errors: &mut Vec<String>) {
    let Some(obj) = schema.as_object() else { return };
    if let Some(r) = obj.get("$ref").and_then(Value::as_str) {
        let target = r.trim_start_matches("#/").split('/').fold(root, |node, key| &node[key]);
        check(root, target, v, at, errors);
    }
    if let Some(t) = obj.get("type") {
        let ok = match t {
            Value::String(s) => type_matches(s, v),
            Value::Array(ts) => ts.iter().any(|t| type_matches(t.as_str().unwrap(), v)),
            _ => true,
        };
        if !ok {
            errors.push(format!("{at}: expected type {t}, got {v}"));
            return;
        }
    }
    if let Some(Value::Array(options)) = obj.get("enum") {
        if !options.contains(v) {
            errors.push(format!("{at}: {v} not in enum"));
        }
    }
    if let Some(x) = v.as_f64() {
        if let Some(min) = obj.get("minimum").and_then(Value::as_f64) {
            if x < min {
                errors.push(format!("{at}: {x} < minimum {min}"));
            }
        }
        if let Some(max) = obj.get("maximum").and_then(Value::as_f64) {
            if x > max {
                errors.push(format!("{at}: {x} > maximum {max}"));
            }
        }
    }
    if let Some(s) = v.as_str() {
        let len = s.chars().count() as u64;
        if obj.get("minLength").and_then(Value::as_u64).is_some_and(|m| len < m) || obj.get("maxLength").and_then(Value::as_u64).is_some_and(|m| len > m) {
            errors.push(format!("{at}: string length {len} out of bounds"));
        }
    }
    if let Some(map) = v.as_object() {
        if let Some(Value::Array(req)) = obj.get("required") {
            for key in req.iter().filter_map(Value::as_str) {
                if !map.contains_key(key) {
                    errors.push(format!("{at}: missing required {key:?}"));
                }
            }
        }
        let props = obj.get("properties").and_then(Value::as_object);
        for (key, value) in map {
            match props.and_then(|p| p.get(key)) {
                Some(sub) => check(root, sub, value, &format!("{at}.{key}"), errors),
                None if obj.get("additionalProperties") == Some(&Value::Bool(false)) => errors.push(format!("{at}: unexpected property {key:?}")),
                None => {}
            }
        }
    }
    if let (Some(items), Some(arr)) = (obj.get("items"), v.as_array()) {
        for (i, item) in arr.iter().enumerate() {
            check(root, items, item, &format!("{at}[{i}]"), errors);
        }
    }
}

pub fn isoeb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isoeb"))
        .args(args)
        .env_remove("ISOEB_SEED")
        .output()
        .expect("binary runs")
}

/// Exact weighted projection onto `{v nonincreasing, lo <= v <= hi}` by
/// enumerating contiguous partitions. At the optimum every block sits at its
/// weighted mean, except a leading run of blocks pinned at `hi` and a trailing
/// run pinned at `lo`; every such candidate is tried and the cheapest feasible
/// one is returned.
pub fn brute_projection(x: &[f64], w: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let p = x.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (p - 1)) {
        let mut blocks = Vec::new();
        let mut start = 0;
        for i in 0..p {
            if i == p - 1 || mask & (1 << i) != 0 {
                blocks.push(start..i + 1);
                start = i + 1;
            }
        }
        let means: Vec<f64> = blocks
            .iter()
            .map(|b| b.clone().map(|i| w[i] * x[i]).sum::<f64>() / b.clone().map(|i| w[i]).sum::<f64>())
            .collect();
        let k = blocks.len();
        for top in 0..=k {
            for bottom in 0..=(k - top) {
                let mut v = vec![0.0; p];
                for (j, b) in blocks.iter().enumerate() {
                    let val = if j < top {
                        hi
                    } else if j >= k - bottom {
                        lo
                    } else {
                        means[j]
                    };
                    for i in b.clone() {
                        v[i] = val;
                    }
                }
                let feasible = v.windows(2).all(|s| s[0] >= s[1] - 1e-12) && v.iter().all(|&e| e >= lo - 1e-12 && e <= hi + 1e-12);
                if !feasible {
                    continue;
                }
                let obj: f64 = (0..p).map(|i| w[i] * (x[i] - v[i]).powi(2)).sum();
                if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                    best = Some((obj, v));
                }
            }
        }
    }
    best.expect("some candidate is feasible").1
}

/// Left slopes of the least concave majorant of the CUSUM diagram, from the
/// upper convex hull of `(k, S_k)`.
pub fn lcm_slopes(x: &[f64]) -> Vec<f64> {
    let mut pts = vec![(0.0f64, 0.0f64)];
    for (k, xi) in x.iter().enumerate() {
        let s = pts[k].1;
        pts.push(((k + 1) as f64, s + xi));
    }
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &pt in &pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if (b.0 - a.0) * (pt.1 - a.1) - (b.1 - a.1) * (pt.0 - a.0) >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(pt);
    }
    let mut out = Vec::new();
    for seg in hull.windows(2) {
        let slope = (seg[1].1 - seg[0].1) / (seg[1].0 - seg[0].0);
        out.extend(std::iter::repeat_n(slope, (seg[1].0 - seg[0].0) as usize));
    }
    out
}

/// Maximize a concave function of `u` on `[a, b]` by golden-section search.
fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Order-restricted maximizer of `loglik` over `k_1 <= ... <= k_K` by
/// enumerating contiguous partitions. The objective is separable, so each
/// block value is found by a log-grid scan and golden refinement with the
/// other coordinates held fixed.
pub fn brute_restricted_max(k_count: usize, loglik: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (k_count - 1)) {
        let mut blocks = Vec::new();
        let mut start = 0;
        for i in 0..k_count {
            if i == k_count - 1 || mask & (1 << i) != 0 {
                blocks.push(start..i + 1);
                start = i + 1;
            }
        }
        let mut kappa = vec![1.0; k_count];
        for b in &blocks {
            let eval = |u: f64, kappa: &[f64]| {
                let mut k = kappa.to_vec();
                for i in b.clone() {
                    k[i] = u.exp();
                }
                loglik(&k)
            };
            let grid: Vec<f64> = (0..=6000).map(|i| -30.0 + 0.01 * i as f64).collect();
            let u0 = grid.iter().copied().max_by(|a, c| eval(*a, &kappa).total_cmp(&eval(*c, &kappa))).unwrap();
            let u = golden(|u| eval(u, &kappa), u0 - 0.01, u0 + 0.01);
            for i in b.clone() {
                kappa[i] = u.exp();
            }
        }
        if kappa.windows(2).any(|w| w[0] > w[1] * (1.0 + 1e-9)) {
            continue;
        }
        let val = loglik(&kappa);
        if best.as_ref().is_none_or(|(b, _)| val > *b) {
            best = Some((val, kappa));
        }
    }
    best.expect("the single-block partition is feasible").1
}
