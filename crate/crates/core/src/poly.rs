//! Multivariate polynomials with exact partial derivatives. Used for
//! analytic test data and for polynomial initial conditions in configs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sum of monomials `coef * prod_a x_a^powers[a]` over a fixed number of
/// variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolyJson", into = "PolyJson")]
pub struct Polynomial {
    dim: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

#[derive(Serialize, Deserialize, Clone)]
struct PolyJson(Vec<(f64, Vec<u32>)>);

impl TryFrom<PolyJson> for Polynomial {
    type Error = Error;
    fn try_from(raw: PolyJson) -> Result<Polynomial> {
        let dim = raw
            .0
            .first()
            .map(|(_, p)| p.len())
            .ok_or_else(|| Error::InvalidParameter("polynomial needs at least one term".into()))?;
        Polynomial::from_terms(dim, raw.0)
    }
}

impl From<Polynomial> for PolyJson {
    fn from(p: Polynomial) -> PolyJson {
        PolyJson(p.terms)
    }
}

impl Polynomial {
    pub fn from_terms(dim: usize, terms: Vec<(f64, Vec<u32>)>) -> Result<Polynomial> {
        for (_, powers) in &terms {
            if powers.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "polynomial term powers",
                    expected: dim,
                    got: powers.len(),
                });
            }
        }
        Ok(Polynomial { dim, terms })
    }

    pub fn zero(dim: usize) -> Polynomial {
        Polynomial { dim, terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.terms
            .iter()
            .map(|(c, powers)| {
                let mut t = *c;
                for (xi, &p) in x.iter().zip(powers) {
                    t *= xi.powi(p as i32);
                }
                t
            })
            .sum()
    }

    /// Exact partial derivative along one axis.
    pub fn partial(&self, axis: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|(_, powers)| powers[axis] > 0)
            .map(|(c, powers)| {
                let mut p = powers.clone();
                p[axis] -= 1;
                (c * powers[axis] as f64, p)
            })
            .collect();
        Polynomial { dim: self.dim, terms }
    }
}
