//! Cell selectors on the command line: `c3`, `y0.1`, `[a,b]x[c,d]`, `all`, `sink`.

use std::collections::BTreeSet;

use lyagate_core::partition::CellComplex;

/// Tolerance when matching cell extents against a box selector.
const BOX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    Cell(usize),
    Tuple(Vec<usize>),
    Box { lower: Vec<f64>, upper: Vec<f64> },
    All,
    Sink,
}

pub fn parse(text: &str) -> Result<Selector, String> {
    let t = text.trim();
    if t == "all" {
        return Ok(Selector::All);
    }
    if t == "sink" {
        return Ok(Selector::Sink);
    }
    if let Some(id) = t.strip_prefix('c') {
        return id
            .parse()
            .map(Selector::Cell)
            .map_err(|_| format!("bad cell selector `{text}`"));
    }
    if let Some(tuple) = t.strip_prefix('y') {
        return tuple
            .split('.')
            .map(str::parse)
            .collect::<Result<Vec<usize>, _>>()
            .map(Selector::Tuple)
            .map_err(|_| format!("bad slice tuple `{text}`"));
    }
    if t.starts_with('[') {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for part in t.split('x') {
            let inner = part
                .trim()
                .strip_prefix('[')
                .and_then(|p| p.strip_suffix(']'))
                .ok_or_else(|| format!("bad interval `{part}` in `{text}`"))?;
            let (a, b) = inner
                .split_once(',')
                .ok_or_else(|| format!("interval `{part}` needs two endpoints"))?;
            let a: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
            if a > b {
                return Err(format!("empty interval `{part}`"));
            }
            lower.push(a);
            upper.push(b);
        }
        return Ok(Selector::Box { lower, upper });
    }
    Err(format!("unrecognized cell selector `{text}` (expected c<id>, y<h1.h2..>, [a,b]x.., all or sink)"))
}

/// Resolves selectors to cell ids. `sink` resolves to nothing.
pub fn resolve(selectors: &[String], complex: &CellComplex) -> Result<BTreeSet<usize>, String> {
    let mut cells = BTreeSet::new();
    for text in selectors {
        let found: Vec<usize> = match parse(text)? {
            Selector::Cell(id) if id < complex.len() => vec![id],
            Selector::Cell(id) => return Err(format!("no cell c{id} (there are {})", complex.len())),
            Selector::Tuple(y) => complex.cells_with_tuple(&y),
            Selector::Box { lower, upper } => {
                if lower.len() != complex.domain.dim() {
                    return Err(format!("`{text}` has {} intervals, state has {}", lower.len(), complex.domain.dim()));
                }
                complex.cells_in_box(&lower, &upper, BOX_TOLERANCE)
            }
            Selector::All => (0..complex.len()).collect(),
            Selector::Sink => continue,
        };
        if found.is_empty() {
            return Err(format!("selector `{text}` matches no cell"));
        }
        cells.extend(found);
    }
    Ok(cells)
}
