//! Bank population descriptions: a JSON spec file or an inline grid
//! expression.
//!
//! File format:
//! ```json
//! {
//!   "in_dim": 10, "out_dim": 2,
//!   "widths": [1, 2, 3]            // or {"min": 1, "max": 100}
//!   "activations": ["relu", "tanh"],
//!   "repeats": 10,
//!   "biases": false,
//!   "seed": 42
//! }
//! ```
//!
//! Grid expression: `WIDTHS:ACTS:REPEATS`, e.g. `1-100:all:10` or
//! `3,19,200:relu,tanh:1`. Widths are a comma list of integers and/or
//! `a-b` ranges; `all` selects every activation.

use std::path::Path;

use mlpbank_core::{grid_specs, Activation, Error, ModelSpec, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum WidthsField {
    List(Vec<usize>),
    Range { min: usize, max: usize },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankSpecFile {
    in_dim: usize,
    out_dim: usize,
    widths: WidthsField,
    activations: Vec<String>,
    repeats: usize,
    #[serde(default)]
    biases: bool,
    #[serde(default)]
    seed: u64,
}

/// A parsed model population, with the dimensions the source declared
/// (grid expressions declare none).
#[derive(Debug, Clone)]
pub struct BankPopulation {
    pub specs: Vec<ModelSpec>,
    pub in_dim: Option<usize>,
    pub out_dim: Option<usize>,
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub repeats: usize,
    pub biases: bool,
    pub seed: Option<u64>,
}

fn expand_widths(field: &WidthsField) -> Result<Vec<usize>> {
    match field {
        WidthsField::List(v) if !v.is_empty() => Ok(v.clone()),
        WidthsField::List(_) => Err(Error::Parse("widths list is empty".into())),
        WidthsField::Range { min, max } => {
            if min > max || *min == 0 {
                return Err(Error::Parse(format!(
                    "widths range {{min: {min}, max: {max}}} is invalid"
                )));
            }
            Ok((*min..=*max).collect())
        }
    }
}

fn parse_activations(names: &[String]) -> Result<Vec<Activation>> {
    if names.len() == 1 && names[0] == "all" {
        return Ok(Activation::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| n.parse::<Activation>().map_err(Error::Parse))
        .collect()
}

/// Loads a JSON bank spec file.
pub fn load_spec_file(path: &Path) -> Result<BankPopulation> {
    let text = std::fs::read_to_string(path)?;
    let file: BankSpecFile = serde_json::from_str(&text).map_err(|e| {
        Error::Parse(format!(
            "{}: line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    let widths = expand_widths(&file.widths)?;
    let activations = parse_activations(&file.activations)?;
    let specs = grid_specs(&widths, &activations, file.repeats)?;
    Ok(BankPopulation {
        specs,
        in_dim: Some(file.in_dim),
        out_dim: Some(file.out_dim),
        widths,
        activations,
        repeats: file.repeats,
        biases: file.biases,
        seed: Some(file.seed),
    })
}

fn parse_width_list(text: &str) -> Result<Vec<usize>> {
    let mut widths = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once('-') {
            let lo: usize = a
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad width range `{part}`")))?;
            let hi: usize = b
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad width range `{part}`")))?;
            if lo == 0 || lo > hi {
                return Err(Error::Parse(format!("bad width range `{part}`")));
            }
            widths.extend(lo..=hi);
        } else {
            let w: usize = part
                .parse()
                .map_err(|_| Error::Parse(format!("bad width `{part}`")))?;
            widths.push(w);
        }
    }
    Ok(widths)
}

/// Parses a `WIDTHS:ACTS:REPEATS` grid expression.
pub fn parse_grid_expr(expr: &str) -> Result<BankPopulation> {
    let parts: Vec<&str> = expr.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Parse(format!(
            "grid expression `{expr}` must be WIDTHS:ACTS:REPEATS (e.g. 1-100:all:10)"
        )));
    }
    let widths = parse_width_list(parts[0])?;
    let names: Vec<String> = parts[1].split(',').map(|s| s.trim().to_string()).collect();
    let activations = parse_activations(&names)?;
    let repeats: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad repeat count `{}`", parts[2])))?;
    let specs = grid_specs(&widths, &activations, repeats)?;
    Ok(BankPopulation {
        specs,
        in_dim: None,
        out_dim: None,
        widths,
        activations,
        repeats,
        biases: false,
        seed: None,
    })
}

/// Resolves `--models`: an existing file path is loaded as a spec file,
/// anything else is parsed as a grid expression.
pub fn resolve_models_arg(arg: &str) -> Result<BankPopulation> {
    let path = Path::new(arg);
    if path.exists() {
        load_spec_file(path)
    } else {
        parse_grid_expr(arg)
    }
}

/// Decomposes a model id into (repeat, activation, width) under the
/// documented grid ordering.
pub fn model_coordinates(pop: &BankPopulation, id: usize) -> (usize, Activation, usize) {
    let per_repeat = pop.widths.len() * pop.activations.len();
    let repeat = id / per_repeat;
    let within = id % per_repeat;
    let act = pop.activations[within / pop.widths.len()];
    let width = pop.widths[within % pop.widths.len()];
    (repeat, act, width)
}
