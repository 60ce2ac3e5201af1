//! Pointwise classification of boundary phase points into the elliptic,
//! hyperbolic and glancing sets, with the glancing contact order.

use serde::{Deserialize, Serialize};

use crate::chart::CollarChart;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyOptions {
    /// Tolerance on `r_0` for the glancing set.
    pub tol_g: f64,
    /// Tolerance on `r_1` and the iterated brackets.
    pub tol_bracket: f64,
    /// Largest contact order tried before giving up.
    pub k_max: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            tol_g: 1e-8,
            tol_bracket: 1e-6,
            k_max: 8,
        }
    }
}

impl ClassifyOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_g > 0.0) {
            return Err(Error::Invalid(format!("tol_g must be positive, got {}", self.tol_g)));
        }
        if !(self.tol_bracket > 0.0) {
            return Err(Error::Invalid(format!(
                "tol_bracket must be positive, got {}",
                self.tol_bracket
            )));
        }
        if self.k_max < 2 {
            return Err(Error::Invalid("k_max must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tag {
    Elliptic,
    Hyperbolic,
    Glancing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlancingDetail {
    pub order: usize,
    /// Sign of `r_1`, present only for order 2.
    pub sign: Option<Sign>,
}

/// The numbers that decided a classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub r0: f64,
    pub r1: f64,
    /// `H_{r_0}^j(r_1)` for `j = 0, 1, ...` as far as they were evaluated.
    pub brackets: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryClass {
    pub tag: Tag,
    pub glancing: Option<GlancingDetail>,
    pub witness: Witness,
}

impl BoundaryClass {
    /// `G^{2,+}`: the tangent ray leaves into the interior.
    pub fn is_diffractive(&self) -> bool {
        matches!(
            self.glancing,
            Some(GlancingDetail {
                order: 2,
                sign: Some(Sign::Plus)
            })
        )
    }

    /// Glancing points outside `G^{2,+}`, where the flow glides.
    pub fn is_gliding(&self) -> bool {
        self.tag == Tag::Glancing && !self.is_diffractive()
    }

    pub fn label(&self) -> String {
        match (self.tag, self.glancing) {
            (Tag::Elliptic, _) => "E".into(),
            (Tag::Hyperbolic, _) => "H".into(),
            (Tag::Glancing, Some(GlancingDetail { order: 2, sign })) => match sign {
                Some(Sign::Plus) => "G2+".into(),
                _ => "G2-".into(),
            },
            (Tag::Glancing, Some(d)) => format!("G{}", d.order),
            (Tag::Glancing, None) => "G".into(),
        }
    }
}

/// Classify the boundary point `(x', xi')` of `chart`.
///
/// A glancing point has order 2 when `r_1` is nonzero; otherwise its order
/// is the smallest `k >= 3` with `H_{r_0}^{k-2}(r_1)` nonzero. If every
/// bracket up to `k_max` vanishes the result is an explicit error.
pub fn classify(chart: &CollarChart, x: f64, xi: f64, opts: &ClassifyOptions) -> Result<BoundaryClass> {
    opts.validate()?;
    let budget = chart.max_derivative_order;
    if opts.k_max > budget {
        return Err(Error::OrderBudget {
            requested: opts.k_max,
            budget,
        });
    }
    let r0 = chart.r0(x, xi);
    let r1 = chart.r1(x, xi);
    let mut witness = Witness {
        r0,
        r1,
        brackets: vec![r1],
    };
    if r0 > opts.tol_g {
        return Ok(BoundaryClass {
            tag: Tag::Hyperbolic,
            glancing: None,
            witness,
        });
    }
    if r0 < -opts.tol_g {
        return Ok(BoundaryClass {
            tag: Tag::Elliptic,
            glancing: None,
            witness,
        });
    }
    if r1.abs() > opts.tol_bracket {
        let sign = if r1 > 0.0 { Sign::Plus } else { Sign::Minus };
        return Ok(BoundaryClass {
            tag: Tag::Glancing,
            glancing: Some(GlancingDetail {
                order: 2,
                sign: Some(sign),
            }),
            witness,
        });
    }
    for k in 3..=opts.k_max {
        let b = chart.iterated_bracket(k - 2, x, xi)?;
        witness.brackets.push(b);
        if b.abs() > opts.tol_bracket {
            return Ok(BoundaryClass {
                tag: Tag::Glancing,
                glancing: Some(GlancingDetail {
                    order: k,
                    sign: None,
                }),
                witness,
            });
        }
    }
    Err(Error::ContactOrderUnresolved {
        k_max: opts.k_max,
        x,
        xi,
    })
}
