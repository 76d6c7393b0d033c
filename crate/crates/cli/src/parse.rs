//! Small value parsers for command-line arguments.

use seqattack::Selection;

/// One step's selection: `e<i>` (1-based), `none`, `all` or `mask:<bits>`.
fn selection(item: &str, n: usize) -> Result<Selection, String> {
    let item = item.trim();
    match item {
        "none" => return Ok(Selection::none(n)),
        "all" => return Ok(Selection::new(vec![true; n])),
        _ => {}
    }
    if let Some(idx) = item.strip_prefix('e') {
        let i: usize = idx.parse().map_err(|_| format!("bad agent index in {item:?}"))?;
        if i == 0 || i > n {
            return Err(format!("agent index {i} outside 1..={n}"));
        }
        return Ok(Selection::single(n, i - 1));
    }
    if let Some(mask) = item.strip_prefix("mask:") {
        let m: u64 = mask.parse().map_err(|_| format!("bad mask in {item:?}"))?;
        if n < 64 && m >> n != 0 {
            return Err(format!("mask {m} has bits beyond {n} agents"));
        }
        return Ok(Selection::from_mask(n, m));
    }
    Err(format!("unrecognized selection {item:?}; expected e<i>, none, all or mask:<int>"))
}

/// A single selection held constant, or a comma list with one entry per step.
pub fn gamma_sequence(spec: &str, n: usize, horizon: usize) -> Result<Vec<Selection>, String> {
    let items: Vec<&str> = spec.split(',').collect();
    match items.len() {
        1 => Ok(vec![selection(items[0], n)?; horizon + 1]),
        len if len == horizon + 1 => items.iter().map(|s| selection(s, n)).collect(),
        len => Err(format!("gamma list has {len} entries, need 1 or {}", horizon + 1)),
    }
}

pub fn vector(spec: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("bad number {s:?}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated values, got {}", v.len()));
    }
    Ok(v)
}
