//! Text formats: the mixture document and CSV number formatting.
//!
//! A mixture document is TOML:
//!
//! ```toml
//! dim = 2
//! weights = [0.5, 0.5]
//!
//! [[components]]
//! mean = [0.0, 1.0]
//! cov = 1.0                       # isotropic σ²
//!
//! [[components]]
//! mean = [3.0, 0.0]
//! cov = [[2.0, 0.1], [0.1, 1.0]]  # full, row-major; a flat list is a diagonal
//! ```
//!
//! Floats are written in shortest round-trip form, so `f64` parameters survive
//! a write/read cycle bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{Covariance, GaussianComponent, Mixture};
use crate::linalg::SymMat;
use crate::scalar::Scalar;

/// CSV number format: 13 significant digits in scientific notation.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.12e}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovDoc {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub mean: Vec<f64>,
    pub cov: CovDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDoc {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub components: Vec<ComponentDoc>,
}

impl MixtureDoc {
    pub fn from_mixture<S: Scalar>(m: &Mixture<S>) -> Self {
        let components = m
            .components()
            .iter()
            .map(|c| ComponentDoc {
                mean: c.mean().iter().map(|v| v.as_f64()).collect(),
                cov: match c.covariance() {
                    Covariance::Isotropic(v) => CovDoc::Scalar(v.as_f64()),
                    Covariance::Diagonal(v) => CovDoc::Diagonal(v.iter().map(|x| x.as_f64()).collect()),
                    Covariance::Full(mat) => CovDoc::Full(
                        mat.rows()
                            .into_iter()
                            .map(|r| r.into_iter().map(|x| x.as_f64()).collect())
                            .collect(),
                    ),
                },
            })
            .collect();
        Self {
            dim: m.dim(),
            weights: m.weights().iter().map(|w| w.as_f64()).collect(),
            components,
        }
    }

    pub fn to_mixture<S: Scalar>(&self) -> Result<Mixture<S>> {
        if self.components.is_empty() {
            return Err(Error::InvalidArgument("mixture document has no components".into()));
        }
        let lift = |v: &[f64]| v.iter().map(|&x| S::lit(x)).collect::<Vec<S>>();
        let comps = self
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if c.mean.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        got: c.mean.len(),
                    });
                }
                let cov = match &c.cov {
                    CovDoc::Scalar(v) => Covariance::Isotropic(S::lit(*v)),
                    CovDoc::Diagonal(v) => Covariance::Diagonal(lift(v)),
                    CovDoc::Full(rows) => {
                        let rows: Vec<Vec<S>> = rows.iter().map(|r| lift(r)).collect();
                        Covariance::Full(SymMat::from_rows(&rows).ok_or_else(|| {
                            Error::Parse(format!("component {i}: covariance matrix is not square"))
                        })?)
                    }
                };
                GaussianComponent::new(lift(&c.mean), cov).map_err(|e| match e {
                    Error::NotPositiveDefinite { min_eigenvalue, .. } => Error::NotPositiveDefinite {
                        component: i,
                        min_eigenvalue,
                    },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mixture::new(comps, lift(&self.weights))
    }
}

pub fn mixture_to_toml<S: Scalar>(m: &Mixture<S>) -> String {
    toml::to_string(&MixtureDoc::from_mixture(m)).expect("mixture document serializes")
}

pub fn mixture_from_toml<S: Scalar>(text: &str) -> Result<Mixture<S>> {
    let doc: MixtureDoc = toml::from_str(text).map_err(|e| Error::Parse(e.message().to_string()))?;
    doc.to_mixture()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_all_representations() {
        let text = r#"
            dim = 2
            weights = [0.25, 0.25, 0.5]

            [[components]]
            mean = [0.0, 1.0]
            cov = 1.0

            [[components]]
            mean = [3.0, 0.0]
            cov = [2.0, 0.5]

            [[components]]
            mean = [-3.0, 0.0]
            cov = [[2.0, 0.1], [0.1, 1.0]]
        "#;
        let m: Mixture<f64> = mixture_from_toml(text).unwrap();
        assert_eq!(m.len(), 3);
        assert!(matches!(m.component(0).covariance(), Covariance::Isotropic(_)));
        assert!(matches!(m.component(1).covariance(), Covariance::Diagonal(_)));
        assert!(matches!(m.component(2).covariance(), Covariance::Full(_)));
        let back: Mixture<f64> = mixture_from_toml(&mixture_to_toml(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(mixture_from_toml::<f64>("dim = 1\nweights = []\ncomponents = []").is_err());
        let bad_dim = "dim = 2\nweights = [1.0]\n[[components]]\nmean = [0.0]\ncov = 1.0\n";
        assert!(matches!(
            mixture_from_toml::<f64>(bad_dim),
            Err(Error::DimensionMismatch { .. })
        ));
        let bad_cov = "dim = 1\nweights = [1.0]\n[[components]]\nmean = [0.0]\ncov = -1.0\n";
        assert!(matches!(
            mixture_from_toml::<f64>(bad_cov),
            Err(Error::NotPositiveDefinite { component: 0, .. })
        ));
        assert!(matches!(mixture_from_toml::<f64>("not toml ["), Err(Error::Parse(_))));
    }

    #[test]
    fn number_format_keeps_precision() {
        let v = std::f64::consts::PI * 1e-7;
        let s = fmt_num(v);
        let back: f64 = s.parse().unwrap();
        assert!(((back - v) / v).abs() < 1e-12);
        assert_eq!(fmt_num(f64::INFINITY), "inf");
    }

    proptest! {
        #[test]
        fn toml_round_trip_is_lossless(
            means in proptest::collection::vec(-1e6f64..1e6, 1..5),
            var in 1e-6f64..1e3,
            raw in proptest::collection::vec(0.01f64..1.0, 1..5),
        ) {
            let k = raw.len().min(means.len());
            let comps: Vec<_> = means[..k]
                .iter()
                .map(|&m| GaussianComponent::new(vec![m, -m / 3.0], Covariance::Isotropic(var)).unwrap())
                .collect();
            let m = Mixture::normalized(comps, raw[..k].to_vec()).unwrap();
            let back: Mixture<f64> = mixture_from_toml(&mixture_to_toml(&m)).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
