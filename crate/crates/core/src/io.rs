//! JSON and CSV artifacts: lossless float formatting, the model file and the
//! prediction-error tables.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::data::format_float;
use crate::error::{Error, Result};
use crate::gram::GroupIndex;
use crate::kernel::{KernelFamily, KernelSet, MarginalDistribution, MarginalSpec};
use crate::select::{Choice, Metamodel, Procedure, SelectionResult, Validation};

/// Pretty JSON formatter writing every float with 17 significant digits.
pub struct Float17Formatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Default for Float17Formatter<'_> {
    fn default() -> Self {
        Float17Formatter {
            inner: PrettyFormatter::with_indent(b"  "),
        }
    }
}

impl Formatter for Float17Formatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_value(writer)
    }
}

pub fn to_json_writer<W: Write, T: Serialize + ?Sized>(writer: W, value: &T) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(writer, Float17Formatter::default());
    value.serialize(&mut ser)?;
    Ok(())
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    to_json_writer(&mut buf, value)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    to_json_writer(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationInfo {
    TestSet { size: usize },
    CrossValidation { folds: usize, seed: u64 },
    None,
}

impl From<&Validation> for ValidationInfo {
    fn from(v: &Validation) -> Self {
        match v {
            Validation::TestSet(d) => ValidationInfo::TestSet { size: d.len() },
            Validation::CrossValidation { folds, seed } => ValidationInfo::CrossValidation {
                folds: *folds,
                seed: *seed,
            },
        }
    }
}

/// Penalty levels of a group-sparse fit: the grid values and the per-group
/// levels they induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyInfo {
    pub mu: f64,
    pub gamma: f64,
    pub mu_prime: BTreeMap<GroupIndex, f64>,
    pub gamma_prime: BTreeMap<GroupIndex, f64>,
}

/// Contents of `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub kernel: KernelFamily,
    pub marginals: Vec<MarginalSpec>,
    pub f0: f64,
    pub support: Vec<GroupIndex>,
    pub coefficients: BTreeMap<GroupIndex, Vec<f64>>,
    pub procedure: Option<Procedure>,
    pub selection: Option<Choice>,
    pub penalties: Option<PenaltyInfo>,
    pub validation: Option<ValidationInfo>,
    /// Training inputs, one array per row.
    pub training_x: Vec<Vec<f64>>,
}

pub const MODEL_FORMAT: &str = "anova-rkhs-model";
pub const MODEL_VERSION: u32 = 1;

impl ModelFile {
    pub fn from_model(model: &Metamodel) -> Self {
        let x = model.training_design();
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            kernel: model.kernels().family(),
            marginals: model.kernels().marginal_specs(),
            f0: model.f0(),
            support: model.support().into_iter().collect(),
            coefficients: model
                .coefficients()
                .iter()
                .map(|(g, t)| (g.clone(), t.iter().copied().collect()))
                .collect(),
            procedure: None,
            selection: None,
            penalties: None,
            validation: None,
            training_x: (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect(),
        }
    }

    pub fn from_selection(result: &SelectionResult, validation: &Validation) -> Self {
        let mut file = Self::from_model(&result.model);
        file.procedure = Some(result.procedure);
        file.selection = Some(result.chosen.clone());
        file.validation = Some(validation.into());
        if let Choice::Penalty { mu, gamma } = result.chosen {
            let groups = result.grid.groups.clone();
            let pen = result.grid.penalties(mu, gamma);
            file.penalties = Some(PenaltyInfo {
                mu,
                gamma,
                mu_prime: groups.iter().cloned().zip(pen.mu).collect(),
                gamma_prime: groups.into_iter().zip(pen.gamma).collect(),
            });
        }
        file
    }

    /// Rebuilds the metamodel (kernels are re-centered from the marginal specs).
    pub fn to_model(&self) -> Result<Metamodel> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Validation(format!("not a model file (format `{}`)", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::Validation(format!("unsupported model version {}", self.version)));
        }
        let marginals = self
            .marginals
            .iter()
            .map(MarginalDistribution::from_spec)
            .collect::<Result<Vec<_>>>()?;
        let kernels = KernelSet::new(self.kernel, marginals)?;
        let d = kernels.dim();
        let n = self.training_x.len();
        if self.training_x.iter().any(|r| r.len() != d) {
            return Err(Error::Validation("training rows do not match the number of marginals".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| self.training_x[i][j]);
        let support: Vec<&GroupIndex> = self.coefficients.keys().collect();
        if support != self.support.iter().collect::<Vec<_>>() {
            return Err(Error::Validation("support does not match the coefficient groups".into()));
        }
        let coefficients = self
            .coefficients
            .iter()
            .map(|(g, t)| (g.clone(), DVector::from_vec(t.clone())))
            .collect();
        Metamodel::new(self.f0, coefficients, Arc::new(kernels), Arc::new(x))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(io::BufReader::new(File::open(path)?))?)
    }
}

/// `mu,gamma,pe,support_size` rows; failed fits have an empty `pe`.
pub fn write_pe_surface_csv<W: Write>(result: &SelectionResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["mu", "gamma", "pe", "support_size"])?;
    for e in &result.pe_surface {
        w.write_record([
            format_float(e.mu),
            format_float(e.gamma),
            e.pe.map(format_float).unwrap_or_default(),
            e.support.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `support,lambda,pe` rows of the ridge procedure.
pub fn write_ridge_csv<W: Write>(result: &SelectionResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["support", "lambda", "pe"])?;
    for e in &result.ridge_table {
        let label = e.support.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        w.write_record([label, format_float(e.lambda), e.pe.map(format_float).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}
