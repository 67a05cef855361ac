//! Run configuration files (TOML).
//!
//! ```toml
//! [system]
//! kind = "vanderpol"        # linear | rotation | vanderpol | neural
//! mu = 1.0
//!
//! [initial]
//! x0 = [2.0, 0.0]
//! delta0 = 0.05
//!
//! [time]
//! t0 = 0.0
//! horizon = 2.0             # or: times = [0.25, 0.5, ...]
//! steps = 8
//!
//! [slr]
//! gamma = 0.05
//! mu = 1.05
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::engine::{ReachProblem, SlrConfig};
use crate::error::{Result, SlrError};
use crate::field::{Activation, NeuralFieldSpec, VectorField};
use crate::weights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Linear,
    /// The planar rotation `x' = [[0, 1], [−1, 0]] x`.
    Rotation,
    Vanderpol,
    Neural,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightsFormat {
    #[default]
    Text,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub kind: SystemKind,
    /// State dimension; checked against the field when given.
    pub n: Option<usize>,
    /// Van der Pol damping.
    pub mu: Option<f64>,
    /// Linear system matrix, one inner list per row.
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Neural weights file, relative to the config file.
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub format: WeightsFormat,
    /// Layer widths: required for binary weights and for seeded networks.
    pub widths: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    /// Seed of a randomly initialized network when no weights file is given.
    pub seed: Option<u64>,
    pub scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub x0: Vec<f64>,
    pub delta0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default)]
    pub t0: f64,
    pub times: Option<Vec<f64>>,
    /// Uniform grid `t0 + k·horizon/steps`, `k = 1..=steps`.
    pub horizon: Option<f64>,
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub result: String,
    pub log: String,
    /// Write one ellipse-boundary CSV per timestep.
    pub projection: bool,
    pub projection_axes: [usize; 2],
    pub projection_points: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("slr-out"),
            result: "reachtube.json".into(),
            log: "run.log".into(),
            projection: true,
            projection_axes: [0, 1],
            projection_points: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: SystemSection,
    initial: InitialSection,
    time: TimeSection,
    #[serde(default)]
    slr: SlrConfig,
    #[serde(default)]
    output: OutputSection,
}

/// A validated run configuration with its field already built.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub system: SystemSection,
    pub initial: InitialSection,
    pub t0: f64,
    pub times: Vec<f64>,
    pub slr: SlrConfig,
    pub output: OutputSection,
    pub field: VectorField,
    /// Directory relative paths in the file are resolved against.
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn problem(&self) -> ReachProblem {
        ReachProblem {
            field: self.field.clone(),
            x0: self.initial.x0.clone(),
            delta0: self.initial.delta0,
            t0: self.t0,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.output.dir)
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| SlrError::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&src, &base)
}

/// Parses and validates a config, reporting every problem found rather than
/// the first. Relative weight and output paths resolve against `base_dir`.
pub fn parse_config_str(src: &str, base_dir: &Path) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| SlrError::Config(e.to_string()))?;
    let mut errs = raw.slr.validation_errors();

    let field = match build_field(&raw.system, base_dir) {
        Ok(f) => Some(f),
        Err(SlrError::Validation(v)) => {
            errs.extend(v);
            None
        }
        Err(e) => {
            errs.push(e.to_string());
            None
        }
    };
    if let Some(f) = &field {
        if let Some(n) = raw.system.n {
            if n != f.dim() {
                errs.push(format!(
                    "system.n = {n} but the field has dimension {}",
                    f.dim()
                ));
            }
        }
        if raw.initial.x0.len() != f.dim() {
            errs.push(format!(
                "initial.x0 has {} entries, expected {}",
                raw.initial.x0.len(),
                f.dim()
            ));
        }
        let [i, j] = raw.output.projection_axes;
        if raw.output.projection && (i >= f.dim() || j >= f.dim() || i == j) {
            errs.push(format!(
                "output.projection_axes = [{i}, {j}] must be two distinct coordinates below {}",
                f.dim()
            ));
        }
    }
    if raw.initial.x0.iter().any(|v| !v.is_finite()) {
        errs.push("initial.x0 must be finite".into());
    }
    if !(raw.initial.delta0 >= 0.0 && raw.initial.delta0.is_finite()) {
        errs.push(format!(
            "initial.delta0 must be ≥ 0, got {}",
            raw.initial.delta0
        ));
    }
    if raw.output.projection_points < 3 {
        errs.push("output.projection_points must be at least 3".into());
    }

    let t0 = raw.time.t0;
    let times = match (&raw.time.times, raw.time.horizon, raw.time.steps) {
        (Some(ts), None, None) => ts.clone(),
        (None, Some(h), Some(k)) => {
            if !(h >= 0.0 && h.is_finite()) {
                errs.push(format!("time.horizon must be ≥ 0, got {h}"));
            }
            (1..=k).map(|i| t0 + h * i as f64 / k as f64).collect()
        }
        (None, None, None) => {
            errs.push("time needs either `times` or `horizon` and `steps`".into());
            Vec::new()
        }
        _ => {
            errs.push("time takes either `times` or both `horizon` and `steps`, not a mix".into());
            Vec::new()
        }
    };
    if !t0.is_finite() {
        errs.push("time.t0 must be finite".into());
    }
    if times.iter().any(|t| !t.is_finite()) {
        errs.push("time grid must be finite".into());
    }
    if times.windows(2).any(|w| !(w[0] <= w[1])) {
        errs.push("time grid must be sorted".into());
    }
    if times.first().is_some_and(|t| *t < t0) {
        errs.push(format!("time grid starts before t0 = {t0}"));
    }

    if !errs.is_empty() {
        return Err(SlrError::Validation(errs));
    }
    Ok(RunConfig {
        system: raw.system,
        initial: raw.initial,
        t0,
        times,
        slr: raw.slr,
        output: raw.output,
        field: field.expect("no errors implies a field"),
        base_dir: base_dir.to_path_buf(),
    })
}

fn build_field(sys: &SystemSection, base_dir: &Path) -> Result<VectorField> {
    let mut errs = Vec::new();
    let unused = |errs: &mut Vec<String>, name: &str, present: bool| {
        if present {
            errs.push(format!(
                "system.{name} does not apply to kind {:?}",
                sys.kind
            ));
        }
    };
    let neural_keys = [
        ("weights", sys.weights.is_some()),
        ("widths", sys.widths.is_some()),
        ("activation", sys.activation.is_some()),
        ("seed", sys.seed.is_some()),
        ("scale", sys.scale.is_some()),
    ];
    let field = match sys.kind {
        SystemKind::Rotation | SystemKind::Vanderpol | SystemKind::Linear => {
            for (k, p) in neural_keys {
                unused(&mut errs, k, p);
            }
            match sys.kind {
                SystemKind::Rotation => {
                    unused(&mut errs, "mu", sys.mu.is_some());
                    unused(&mut errs, "matrix", sys.matrix.is_some());
                    Some(VectorField::rotation())
                }
                SystemKind::Vanderpol => {
                    unused(&mut errs, "matrix", sys.matrix.is_some());
                    let mu = sys.mu.unwrap_or(1.0);
                    if !mu.is_finite() {
                        errs.push("system.mu must be finite".into());
                    }
                    Some(VectorField::van_der_pol(mu))
                }
                _ => {
                    unused(&mut errs, "mu", sys.mu.is_some());
                    match &sys.matrix {
                        None => {
                            errs.push("system.matrix is required for kind linear".into());
                            None
                        }
                        Some(rows) => {
                            let n = rows.len();
                            if let Some((i, r)) =
                                rows.iter().enumerate().find(|(_, r)| r.len() != n)
                            {
                                errs.push(format!(
                                    "system.matrix row {i} has {} entries, expected {n}",
                                    r.len()
                                ));
                                None
                            } else {
                                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                                match VectorField::linear(DMatrix::from_row_slice(n, n, &flat)) {
                                    Ok(f) => Some(f),
                                    Err(e) => {
                                        errs.push(e.to_string());
                                        None
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        SystemKind::Neural => {
            unused(&mut errs, "mu", sys.mu.is_some());
            unused(&mut errs, "matrix", sys.matrix.is_some());
            match neural_spec(sys, base_dir) {
                Ok(spec) => match VectorField::neural(spec) {
                    Ok(f) => Some(f),
                    Err(e) => {
                        errs.push(e.to_string());
                        None
                    }
                },
                Err(e) => {
                    errs.push(e.to_string());
                    None
                }
            }
        }
    };
    match field {
        Some(f) if errs.is_empty() => Ok(f),
        _ => Err(SlrError::Validation(errs)),
    }
}

fn neural_spec(sys: &SystemSection, base_dir: &Path) -> Result<NeuralFieldSpec> {
    let activation = sys.activation.unwrap_or(Activation::Tanh);
    let spec = match (&sys.weights, sys.format) {
        (Some(path), WeightsFormat::Text) => {
            let spec = weights::load_text(&base_dir.join(path))?;
            if let Some(w) = &sys.widths {
                if *w != spec.widths {
                    return Err(SlrError::Config(format!(
                        "system.widths {w:?} disagree with the weights file {:?}",
                        spec.widths
                    )));
                }
            }
            if sys.activation.is_some_and(|a| a != spec.activation) {
                return Err(SlrError::Config(
                    "system.activation disagrees with the weights file".into(),
                ));
            }
            spec
        }
        (Some(path), WeightsFormat::Binary) => {
            let widths = sys
                .widths
                .as_ref()
                .ok_or_else(|| SlrError::Config("binary weights need system.widths".into()))?;
            weights::load_binary(&base_dir.join(path), widths, activation)?
        }
        (None, _) => {
            let widths = sys.widths.as_ref().ok_or_else(|| {
                SlrError::Config("kind neural needs system.weights or system.widths".into())
            })?;
            NeuralFieldSpec::seeded(
                widths,
                activation,
                sys.scale.unwrap_or(1.0),
                sys.seed.unwrap_or(0),
            )
        }
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[system]
kind = "rotation"

[initial]
x0 = [1.0, 0.0]
delta0 = 0.1

[time]
times = [0.785, 1.57, 3.14]
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config_str(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(c.times.len(), 3);
        assert_eq!(c.slr, SlrConfig::default());
        assert_eq!(c.output, OutputSection::default());
        assert_eq!(c.field.dim(), 2);
    }

    #[test]
    fn uniform_grid() {
        let src = MINIMAL.replace(
            "times = [0.785, 1.57, 3.14]",
            "t0 = 1.0\nhorizon = 2.0\nsteps = 4",
        );
        let c = parse_config_str(&src, Path::new(".")).unwrap();
        assert_eq!(c.times, vec![1.5, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn bad_gamma_cites_range() {
        let src = format!("{MINIMAL}\n[slr]\ngamma = 1.5\n");
        let msg = parse_config_str(&src, Path::new("."))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("γ ∈ (0,1)"), "{msg}");
    }

    #[test]
    fn all_errors_reported() {
        let src = MINIMAL
            .replace("delta0 = 0.1", "delta0 = -1.0")
            .replace("x0 = [1.0, 0.0]", "x0 = [1.0]")
            .replace("[0.785, 1.57, 3.14]", "[2.0, 1.0]")
            + "\n[slr]\ngamma = 0.0\nmu = 0.5\n";
        match parse_config_str(&src, Path::new(".")) {
            Err(SlrError::Validation(v)) => assert_eq!(v.len(), 5, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let src = MINIMAL.replace("delta0 = 0.1", "delta0 = 0.1\nradius = 2");
        assert!(matches!(
            parse_config_str(&src, Path::new(".")),
            Err(SlrError::Config(m)) if m.contains("radius")
        ));
    }

    #[test]
    fn wrong_weight_shape_names_layer() {
        let dir = tempfile::tempdir().unwrap();
        let good = NeuralFieldSpec::seeded(&[2, 3, 2], Activation::Tanh, 1.0, 1);
        let text = weights::to_text(&good).replace("W1 2 3", "W1 3 2");
        std::fs::write(dir.path().join("w.txt"), text).unwrap();
        let src = r#"
[system]
kind = "neural"
weights = "w.txt"
[initial]
x0 = [0.0, 0.0]
delta0 = 0.1
[time]
times = [1.0]
"#;
        let msg = parse_config_str(src, dir.path()).unwrap_err().to_string();
        assert!(msg.contains("layer 1"), "{msg}");
    }

    #[test]
    fn linear_matrix_must_be_square() {
        let src = MINIMAL.replace(
            "kind = \"rotation\"",
            "kind = \"linear\"\nmatrix = [[0.0, 1.0], [1.0]]",
        );
        let msg = parse_config_str(&src, Path::new("."))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("row 1"), "{msg}");
    }

    #[test]
    fn seeded_network_dimension_checked() {
        let src = MINIMAL.replace(
            "kind = \"rotation\"",
            "kind = \"neural\"\nwidths = [3, 4, 3]\nseed = 2",
        );
        let msg = parse_config_str(&src, Path::new("."))
            .unwrap_err()
            .to_string();
        assert!(
            msg.contains("initial.x0 has 2 entries, expected 3"),
            "{msg}"
        );
    }
}
