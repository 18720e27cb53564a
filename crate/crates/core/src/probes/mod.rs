//! Probing classifiers over pooled attention features.

pub mod forest;
pub mod logreg;
pub mod metrics;
pub mod mlp;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;

pub use forest::{ForestParams, RandomForest};
pub use logreg::{LogRegParams, LogisticRegression};
pub use metrics::{micro_average, Metrics};
pub use mlp::{Mlp, MlpParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ProbeKind {
    LogReg,
    Mlp1,
    Mlp2,
    Rf,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 4] = [ProbeKind::LogReg, ProbeKind::Mlp1, ProbeKind::Mlp2, ProbeKind::Rf];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::LogReg => "LOGREG",
            ProbeKind::Mlp1 => "MLP1",
            ProbeKind::Mlp2 => "MLP2",
            ProbeKind::Rf => "RF",
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['-', '_'], "").as_str() {
            "LOGREG" => Ok(ProbeKind::LogReg),
            "MLP1" => Ok(ProbeKind::Mlp1),
            "MLP2" => Ok(ProbeKind::Mlp2),
            "RF" => Ok(ProbeKind::Rf),
            _ => Err(Error::invalid(format!("unknown probe {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    pub max_iter: usize,
    #[serde(default)]
    pub hidden_sizes: Vec<usize>,
    pub trees: usize,
    /// Inverse L2 strength of the logistic regression.
    pub l2_strength: f64,
    pub seed: u64,
    #[serde(default)]
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    /// Scale each feature to zero mean and unit variance before fitting.
    #[serde(default)]
    pub standardize: bool,
}

impl ProbeConfig {
    pub fn new(kind: ProbeKind, seed: u64) -> Self {
        let (max_iter, hidden_sizes) = match kind {
            ProbeKind::LogReg => (10_000, vec![]),
            ProbeKind::Mlp1 => (200, vec![144]),
            ProbeKind::Mlp2 => (200, vec![144, 72]),
            ProbeKind::Rf => (0, vec![]),
        };
        Self {
            kind,
            max_iter,
            hidden_sizes,
            trees: 300,
            l2_strength: 1.0,
            seed,
            max_features: None,
            bootstrap: true,
            standardize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ProbeKind::LogReg if !(self.l2_strength.is_finite() && self.l2_strength > 0.0) => {
                Err(Error::invalid(format!("l2_strength must be positive, got {}", self.l2_strength)))
            }
            ProbeKind::Mlp1 | ProbeKind::Mlp2 if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) => {
                Err(Error::invalid("MLP needs non-zero hidden layer sizes"))
            }
            ProbeKind::Rf if self.trees == 0 => Err(Error::invalid("forest needs at least one tree")),
            ProbeKind::Rf if self.max_features == Some(0) => Err(Error::invalid("max_features must be positive")),
            ProbeKind::LogReg | ProbeKind::Mlp1 | ProbeKind::Mlp2 if self.max_iter == 0 => {
                Err(Error::invalid("max_iter must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.scale[j]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Model {
    LogReg(LogisticRegression),
    Mlp(Mlp),
    Forest(RandomForest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedProbe {
    pub format_version: u32,
    pub config: ProbeConfig,
    pub feature_dim: usize,
    /// (layer, head) of each input column.
    pub head_index_map: Vec<(u16, u16)>,
    pub scaler: Option<Scaler>,
    pub model: Model,
}

fn check_inputs(x: ArrayView2<f64>, y: Option<&[bool]>) -> Result<()> {
    if let Some(y) = y {
        if y.len() != x.nrows() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                found: y.len(),
            });
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("feature matrix contains non-finite values"));
    }
    Ok(())
}

impl TrainedProbe {
    pub fn fit(
        cfg: &ProbeConfig,
        x: ArrayView2<f64>,
        y: &[bool],
        head_index_map: Vec<(u16, u16)>,
        exec: Execution,
    ) -> Result<Self> {
        cfg.validate()?;
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid("empty training matrix"));
        }
        check_inputs(x, Some(y))?;
        if head_index_map.len() != x.ncols() {
            return Err(Error::Dimension {
                expected: x.ncols(),
                found: head_index_map.len(),
            });
        }
        let scaler = cfg.standardize.then(|| Scaler::fit(x));
        let scaled = scaler.as_ref().map(|s| s.transform(x));
        let xs = scaled.as_ref().map_or(x, |a| a.view());
        let model = match cfg.kind {
            ProbeKind::LogReg => {
                let params = LogRegParams {
                    c: cfg.l2_strength,
                    max_iter: cfg.max_iter,
                    ..LogRegParams::default()
                };
                let m = logreg::fit(xs, y, &params);
                if !m.converged {
                    log::warn!("logistic regression stopped after {} iterations without converging", m.iterations);
                }
                Model::LogReg(m)
            }
            ProbeKind::Mlp1 | ProbeKind::Mlp2 => {
                let params = MlpParams {
                    hidden: cfg.hidden_sizes.clone(),
                    max_iter: cfg.max_iter,
                    seed: cfg.seed,
                    ..MlpParams::default()
                };
                Model::Mlp(Mlp::fit(xs, y, &params))
            }
            ProbeKind::Rf => {
                let params = ForestParams {
                    n_trees: cfg.trees,
                    max_features: cfg.max_features,
                    bootstrap: cfg.bootstrap,
                    seed: cfg.seed,
                };
                Model::Forest(RandomForest::fit(exec, xs, y, &params))
            }
        };
        Ok(Self {
            format_version: FORMAT_VERSION,
            config: cfg.clone(),
            feature_dim: x.ncols(),
            head_index_map,
            scaler,
            model,
        })
    }

    pub fn kind(&self) -> ProbeKind {
        self.config.kind
    }

    /// Score of POSITIVE per row, in [0, 1].
    pub fn predict_scores(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.feature_dim {
            return Err(Error::Dimension {
                expected: self.feature_dim,
                found: x.ncols(),
            });
        }
        check_inputs(x, None)?;
        let scaled = self.scaler.as_ref().map(|s| s.transform(x));
        let xs = scaled.as_ref().map_or(x, |a| a.view());
        Ok(match &self.model {
            Model::LogReg(m) => m.predict_proba(xs),
            Model::Mlp(m) => m.predict_proba(xs),
            Model::Forest(m) => m.predict_proba(xs),
        })
    }

    /// POSITIVE iff the score is at least 0.5.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<bool>> {
        Ok(self.predict_scores(x)?.into_iter().map(|s| s >= 0.5).collect())
    }

    pub fn evaluate(&self, x: ArrayView2<f64>, y: &[bool]) -> Result<Metrics> {
        Metrics::from_predictions(y, &self.predict(x)?)
    }

    /// Heads ordered by descending absolute logistic coefficient, ties by
    /// ascending (layer, head).
    pub fn head_ranking(&self) -> Result<Vec<((u16, u16), f64)>> {
        let Model::LogReg(m) = &self.model else {
            return Err(Error::invalid(format!("head ranking needs LOGREG, not {}", self.kind())));
        };
        Ok(rank_heads(&self.head_index_map, &m.coef))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let probe: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if probe.format_version != FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported probe format version {}",
                probe.format_version
            )));
        }
        if probe.head_index_map.len() != probe.feature_dim {
            return Err(Error::validation("probe head map does not match its feature dimension"));
        }
        Ok(probe)
    }
}

/// Ranks heads by `|coef|`, descending; ties go to the smaller (layer, head).
pub fn rank_heads(heads: &[(u16, u16)], coef: &[f64]) -> Vec<((u16, u16), f64)> {
    let mut ranked: Vec<((u16, u16), f64)> = heads.iter().copied().zip(coef.iter().copied()).collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn kind_parsing() {
        assert_eq!("logreg".parse::<ProbeKind>().unwrap(), ProbeKind::LogReg);
        assert_eq!("MLP-2".parse::<ProbeKind>().unwrap(), ProbeKind::Mlp2);
        assert_eq!("rf".parse::<ProbeKind>().unwrap(), ProbeKind::Rf);
        assert!("svm".parse::<ProbeKind>().is_err());
        assert_eq!(serde_json::to_string(&ProbeKind::Mlp1).unwrap(), "\"MLP1\"");
    }

    #[test]
    fn defaults() {
        assert_eq!(ProbeConfig::new(ProbeKind::LogReg, 0).max_iter, 10_000);
        assert_eq!(ProbeConfig::new(ProbeKind::Mlp1, 0).hidden_sizes, vec![144]);
        assert_eq!(ProbeConfig::new(ProbeKind::Mlp2, 0).hidden_sizes, vec![144, 72]);
        assert_eq!(ProbeConfig::new(ProbeKind::Rf, 0).trees, 300);
    }

    #[test]
    fn ranking_ties_break_on_head() {
        let heads = [(0, 1), (0, 0), (1, 0)];
        let ranked = rank_heads(&heads, &[-2.0, 2.0, 1.0]);
        let order: Vec<(u16, u16)> = ranked.iter().map(|r| r.0).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0)]);
    }

    #[test]
    fn ranking_rejects_non_linear_probes() {
        let x = array![[0.0], [1.0]];
        let mut cfg = ProbeConfig::new(ProbeKind::Rf, 0);
        cfg.trees = 3;
        let p = TrainedProbe::fit(&cfg, x.view(), &[false, true], vec![(0, 0)], Execution::Sequential).unwrap();
        assert!(p.head_ranking().is_err());
    }

    #[test]
    fn dimension_checks() {
        let x = array![[0.0, 1.0], [1.0, 0.0]];
        let cfg = ProbeConfig::new(ProbeKind::LogReg, 0);
        assert!(TrainedProbe::fit(&cfg, x.view(), &[true], vec![(0, 0), (0, 1)], Execution::Sequential).is_err());
        assert!(TrainedProbe::fit(&cfg, x.view(), &[true, false], vec![(0, 0)], Execution::Sequential).is_err());
        let p = TrainedProbe::fit(&cfg, x.view(), &[true, false], vec![(0, 0), (0, 1)], Execution::Sequential).unwrap();
        assert!(matches!(
            p.predict(array![[1.0]].view()),
            Err(Error::Dimension { expected: 2, found: 1 })
        ));
        let bad = array![[f64::NAN, 0.0]];
        assert!(p.predict(bad.view()).is_err());
    }

    #[test]
    fn scaler_standardizes() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let s = Scaler::fit(x.view());
        let t = s.transform(x.view());
        assert_eq!(t, array![[-1.0, 0.0], [1.0, 0.0]]);
    }
}
