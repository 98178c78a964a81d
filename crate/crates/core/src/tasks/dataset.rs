use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::sha256_hex;
use crate::numcore::{encode_tensor, load_tensor, Real, Tensor};

/// What a model is trained against.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One class per sequence.
    Classes(Vec<usize>),
    /// One class per step, `N * T` entries.
    StepClasses(Vec<usize>),
    /// Real-valued per-step targets `(N, T, D)`.
    Values(Tensor<f32>),
    /// Flip-flop: multi-hot next-symbol sets `(N, T, 5)` plus the index of the
    /// prediction set at every step (`N * T`).
    FlipFlop {
        multi_hot: Tensor<f32>,
        sets: Vec<u8>,
    },
}

impl Targets {
    pub fn kind(&self) -> &'static str {
        match self {
            Targets::Classes(_) => "classes",
            Targets::StepClasses(_) => "step_classes",
            Targets::Values(_) => "values",
            Targets::FlipFlop { .. } => "flipflop",
        }
    }
}

/// A set of equal-length sequences `(N, T, D_in)` with their targets.
///
/// `extras` carries tensors that are never used for training, such as clean
/// trajectories or held-out target dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor<f32>,
    pub targets: Targets,
    pub extras: BTreeMap<String, Tensor<f32>>,
}

fn gather_steps<T: Copy>(v: &[T], t: usize, idx: &[usize]) -> Vec<T> {
    idx.iter()
        .flat_map(|&i| v[i * t..(i + 1) * t].iter().copied())
        .collect()
}

impl Dataset {
    pub fn new(inputs: Tensor<f32>, targets: Targets) -> Result<Self> {
        let d = Self {
            inputs,
            targets,
            extras: BTreeMap::new(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.rank() != 3 {
            return Err(Error::Data(format!(
                "inputs must be (N, T, D), got {:?}",
                self.inputs.shape()
            )));
        }
        let (n, t) = (self.len(), self.seq_len());
        let ok = match &self.targets {
            Targets::Classes(c) => c.len() == n,
            Targets::StepClasses(c) => c.len() == n * t,
            Targets::Values(v) => v.rank() == 3 && v.dim(0) == n && v.dim(1) == t,
            Targets::FlipFlop { multi_hot, sets } => {
                multi_hot.shape() == [n, t, 5] && sets.len() == n * t
            }
        };
        if !ok {
            return Err(Error::Data(format!(
                "{} targets do not match inputs {:?}",
                self.targets.kind(),
                self.inputs.shape()
            )));
        }
        for (k, e) in &self.extras {
            if e.rank() == 0 || e.dim(0) != n {
                return Err(Error::Data(format!(
                    "extra `{k}` has {:?} rows, expected {n}",
                    e.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seq_len(&self) -> usize {
        self.inputs.dim(1)
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.dim(2)
    }

    /// Rows `idx` in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let t = self.seq_len();
        let targets = match &self.targets {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::StepClasses(c) => Targets::StepClasses(gather_steps(c, t, idx)),
            Targets::Values(v) => Targets::Values(v.gather_rows(idx)),
            Targets::FlipFlop { multi_hot, sets } => Targets::FlipFlop {
                multi_hot: multi_hot.gather_rows(idx),
                sets: gather_steps(sets, t, idx),
            },
        };
        Dataset {
            inputs: self.inputs.gather_rows(idx),
            targets,
            extras: self
                .extras
                .iter()
                .map(|(k, v)| (k.clone(), v.gather_rows(idx)))
                .collect(),
        }
    }

    /// Contiguous range of rows.
    pub fn range(&self, start: usize, end: usize) -> Dataset {
        self.subset(&(start..end.min(self.len())).collect::<Vec<_>>())
    }

    pub fn first(&self, n: usize) -> Dataset {
        self.range(0, n)
    }

    pub fn batch_inputs<F: Real>(&self, idx: &[usize]) -> Tensor<F> {
        self.inputs.gather_rows(idx).cast()
    }

    fn target_tensors(&self) -> Vec<(&'static str, Tensor<f32>)> {
        let as_f32 = |v: &[usize]| v.iter().map(|&c| c as f32).collect::<Vec<_>>();
        let (n, t) = (self.len(), self.seq_len());
        match &self.targets {
            Targets::Classes(c) => vec![("classes", Tensor::new(&[n], as_f32(c)).unwrap())],
            Targets::StepClasses(c) => {
                vec![("step_classes", Tensor::new(&[n, t], as_f32(c)).unwrap())]
            }
            Targets::Values(v) => vec![("values", v.clone())],
            Targets::FlipFlop { multi_hot, sets } => vec![
                ("multi_hot", multi_hot.clone()),
                (
                    "sets",
                    Tensor::new(&[n, t], sets.iter().map(|&s| s as f32).collect()).unwrap(),
                ),
            ],
        }
    }

    /// Write `inputs.mgt`, target and extra tensors, and `dataset.json`
    /// describing provenance and file digests.
    pub fn save(&self, dir: &Path, provenance: &serde_json::Value) -> Result<DatasetSidecar> {
        fs::create_dir_all(dir)?;
        let mut files = BTreeMap::new();
        let mut write = |name: String, t: &Tensor<f32>| -> Result<()> {
            let bytes = encode_tensor(t);
            files.insert(name.clone(), sha256_hex(&bytes));
            fs::write(dir.join(name), bytes)?;
            Ok(())
        };
        write("inputs.mgt".into(), &self.inputs)?;
        for (name, t) in self.target_tensors() {
            write(format!("target_{name}.mgt"), &t)?;
        }
        for (name, t) in &self.extras {
            write(format!("extra_{name}.mgt"), t)?;
        }
        let sidecar = DatasetSidecar {
            targets: self.targets.kind().to_string(),
            n: self.len(),
            seq_len: self.seq_len(),
            input_dim: self.input_dim(),
            extras: self.extras.keys().cloned().collect(),
            files,
            provenance: provenance.clone(),
        };
        fs::write(
            dir.join("dataset.json"),
            serde_json::to_string_pretty(&sidecar)? + "\n",
        )?;
        Ok(sidecar)
    }

    pub fn load(dir: &Path) -> Result<(Dataset, DatasetSidecar)> {
        let side_path = dir.join("dataset.json");
        if !side_path.exists() {
            return Err(Error::MissingPath(side_path));
        }
        let sidecar: DatasetSidecar = serde_json::from_str(&fs::read_to_string(&side_path)?)?;
        let read = |name: &str| -> Result<Tensor<f32>> {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|_| Error::MissingPath(path.clone()))?;
            if let Some(want) = sidecar.files.get(name) {
                if &sha256_hex(&bytes) != want {
                    return Err(Error::Data(format!(
                        "{} does not match its recorded digest",
                        path.display()
                    )));
                }
            }
            Ok(load_tensor(&path)?.to())
        };
        let ids = |t: Tensor<f32>| t.data().iter().map(|&v| v as usize).collect::<Vec<_>>();
        let targets = match sidecar.targets.as_str() {
            "classes" => Targets::Classes(ids(read("target_classes.mgt")?)),
            "step_classes" => Targets::StepClasses(ids(read("target_step_classes.mgt")?)),
            "values" => Targets::Values(read("target_values.mgt")?),
            "flipflop" => Targets::FlipFlop {
                multi_hot: read("target_multi_hot.mgt")?,
                sets: ids(read("target_sets.mgt")?)
                    .into_iter()
                    .map(|s| s as u8)
                    .collect(),
            },
            other => return Err(Error::Data(format!("unknown target kind `{other}`"))),
        };
        let mut d = Dataset::new(read("inputs.mgt")?, targets)?;
        for name in &sidecar.extras {
            d.extras
                .insert(name.clone(), read(&format!("extra_{name}.mgt"))?);
        }
        d.validate()?;
        Ok((d, sidecar))
    }
}

/// JSON description stored next to a cached dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub targets: String,
    pub n: usize,
    pub seq_len: usize,
    pub input_dim: usize,
    pub extras: Vec<String>,
    /// File name to sha256.
    pub files: BTreeMap<String, String>,
    /// Generator config and seed.
    pub provenance: serde_json::Value,
}
