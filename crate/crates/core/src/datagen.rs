//! Seeded synthetic datasets.
//!
//! Inputs are standard-normal draws. Targets come from a fixed random
//! teacher MLP (hidden width 8, Tanh) so there is a learnable signal:
//! regression adds Gaussian noise with sigma 0.01, classification one-hot
//! encodes the argmax of the teacher logits. Timing experiments only need
//! the shapes, but the learnable signal is what lets loss-decrease sanity
//! checks hold.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ops::Activation;
use crate::rng::{mix, SplitMix64};
use crate::scalar::Scalar;
use crate::sequential::SequentialMlp;
use crate::tensor::Tensor;

pub const TEACHER_HIDDEN: usize = 8;
pub const REGRESSION_NOISE_SIGMA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(format!(
                "unknown task `{other}` (expected regression or classification)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub x: Tensor<T>,
    pub t: Tensor<T>,
    pub task: Task,
    pub seed: u64,
}

impl<T: Scalar> Dataset<T> {
    pub fn n_samples(&self) -> usize {
        self.x.extent(0)
    }
    pub fn n_features(&self) -> usize {
        self.x.extent(1)
    }
    pub fn n_outputs(&self) -> usize {
        self.t.extent(1)
    }
}

/// The teacher used for a dataset seed; exposed so sanity tests can train
/// a student of the same architecture.
pub fn teacher_for_seed<T: Scalar>(
    n_features: usize,
    n_outputs: usize,
    seed: u64,
) -> Result<SequentialMlp<T>> {
    SequentialMlp::build(
        TEACHER_HIDDEN,
        Activation::Tanh,
        n_features,
        n_outputs,
        mix(seed, 2),
        false,
    )
}

/// Generates a dataset; identical arguments produce bit-identical data.
pub fn synth_dataset<T: Scalar>(
    n_samples: usize,
    n_features: usize,
    n_outputs: usize,
    seed: u64,
    task: Task,
) -> Result<Dataset<T>> {
    if n_samples == 0 || n_features == 0 || n_outputs == 0 {
        return Err(Error::Config(format!(
            "dataset dimensions must be >= 1: {n_samples} x {n_features} x {n_outputs}"
        )));
    }
    let mut x_rng = SplitMix64::new(mix(seed, 1));
    let x = Tensor::from_fn(vec![n_samples, n_features], |_| {
        T::from_f64(x_rng.next_normal())
    })?;

    let teacher = teacher_for_seed::<T>(n_features, n_outputs, seed)?;
    let (logits, _) = teacher.forward(&x)?;

    let t = match task {
        Task::Regression => {
            let mut noise_rng = SplitMix64::new(mix(seed, 3));
            let mut t = logits;
            for v in t.data_mut() {
                *v += T::from_f64(REGRESSION_NOISE_SIGMA * noise_rng.next_normal());
            }
            t
        }
        Task::Classification => {
            let mut t = Tensor::zeros(vec![n_samples, n_outputs])?;
            for i in 0..n_samples {
                let row = logits.row(i);
                let mut best = 0;
                for (o, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = o;
                    }
                }
                t.set2(i, best, T::ONE);
            }
            t
        }
    };

    Ok(Dataset { x, t, task, seed })
}

/// Writes `header x0..x{F-1},t0..t{O-1}` then one sample per line. Values
/// are printed with round-trip precision.
pub fn write_csv<T: Scalar>(data: &Dataset<T>, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let (f, o) = (data.n_features(), data.n_outputs());
    let mut header = Vec::with_capacity(f + o);
    header.extend((0..f).map(|i| format!("x{i}")));
    header.extend((0..o).map(|i| format!("t{i}")));
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.n_samples() {
        let mut fields = Vec::with_capacity(f + o);
        fields.extend(data.x.row(i).iter().map(|v| format!("{:?}", v.to_f64())));
        fields.extend(data.t.row(i).iter().map(|v| format!("{:?}", v.to_f64())));
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Reads a CSV written by [`write_csv`]. The column split is recovered
/// from the header's `x*`/`t*` names.
pub fn read_csv<T: Scalar>(path: &Path, task: Task) -> Result<Dataset<T>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty csv".into()))??;
    let names: Vec<&str> = header.split(',').collect();
    let n_features = names.iter().take_while(|n| n.starts_with('x')).count();
    let n_outputs = names.len() - n_features;
    if n_features == 0 || n_outputs == 0 || !names[n_features..].iter().all(|n| n.starts_with('t'))
    {
        return Err(Error::Parse(format!(
            "header must be x0..x{{F-1}},t0..t{{O-1}}, got `{header}`"
        )));
    }

    let mut x_data = Vec::new();
    let mut t_data = Vec::new();
    let mut n_samples = 0;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                names.len(),
                fields.len()
            )));
        }
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|e| {
                Error::Parse(format!("line {}, column {}: {e}", lineno + 2, col + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "line {}, column {}: non-finite value",
                    lineno + 2,
                    col + 1
                )));
            }
            if col < n_features {
                x_data.push(T::from_f64(v));
            } else {
                t_data.push(T::from_f64(v));
            }
        }
        n_samples += 1;
    }
    if n_samples == 0 {
        return Err(Error::Parse("csv has a header but no samples".into()));
    }
    Ok(Dataset {
        x: Tensor::new(vec![n_samples, n_features], x_data)?,
        t: Tensor::new(vec![n_samples, n_outputs], t_data)?,
        task,
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_is_twelve_datasets() {
        let samples = [100usize, 1_000, 10_000];
        let features = [5usize, 10, 50, 100];
        let mut built = 0;
        for &s in &samples {
            for &f in &features {
                let ds = synth_dataset::<f32>(s, f, 2, 42, Task::Regression).unwrap();
                assert_eq!(ds.x.shape(), &[s, f]);
                assert_eq!(ds.t.shape(), &[s, 2]);
                built += 1;
            }
        }
        assert_eq!(built, 12);
    }

    #[test]
    fn same_seed_bit_identical() {
        let a = synth_dataset::<f64>(50, 7, 3, 9, Task::Regression).unwrap();
        let b = synth_dataset::<f64>(50, 7, 3, 9, Task::Regression).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.t, b.t);
        let c = synth_dataset::<f64>(50, 7, 3, 10, Task::Regression).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn classification_targets_are_one_hot() {
        let ds = synth_dataset::<f64>(64, 5, 4, 3, Task::Classification).unwrap();
        for i in 0..64 {
            let row = ds.t.row(i);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            assert_eq!(ones, 1);
            assert_eq!(zeros, 3);
        }
    }

    #[test]
    fn values_are_finite_and_columns_centered() {
        let n = 4000;
        let ds = synth_dataset::<f64>(n, 6, 2, 123, Task::Regression).unwrap();
        assert!(ds.x.data().iter().all(|v| v.is_finite()));
        assert!(ds.t.data().iter().all(|v| v.is_finite()));
        let bound = 5.0 / (n as f64).sqrt();
        for c in 0..6 {
            let mean: f64 = (0..n).map(|i| ds.x.at2(i, c)).sum::<f64>() / n as f64;
            assert!(mean.abs() < bound, "column {c} mean {mean}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join("mlpbank_datagen_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.csv");
        let ds = synth_dataset::<f32>(20, 3, 2, 77, Task::Regression).unwrap();
        write_csv(&ds, &path).unwrap();
        let back = read_csv::<f32>(&path, Task::Regression).unwrap();
        assert_eq!(ds.x, back.x);
        assert_eq!(ds.t, back.t);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn csv_rejects_malformed_rows() {
        let dir = std::env::temp_dir().join("mlpbank_datagen_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "x0,t0\n1.0\n").unwrap();
        assert!(matches!(
            read_csv::<f64>(&path, Task::Regression),
            Err(Error::Parse(_))
        ));
        std::fs::write(&path, "x0,t0\n1.0,zzz\n").unwrap();
        assert!(matches!(
            read_csv::<f64>(&path, Task::Regression),
            Err(Error::Parse(_))
        ));
        std::fs::remove_file(&path).unwrap();
    }
}
