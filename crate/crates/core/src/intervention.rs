//! Shift projections between a non-dominant language's representations and the
//! dominant language's subspace, as hooks for [`crate::toymodel::forward_with_hooks`].
//!
//! Shift-toward at `L_to`: `h̃ = h − v_l + v_d`. Shift-backward at `L_bk`:
//! `h′ = h̃ − v_d + v_l`. Both use the same constant for every position.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{LanguageVectorTable, ShiftArea};
use crate::lang::LangId;
use crate::numkit::Matrix;
use crate::toymodel::{HiddenStateHook, LayerHook};

fn check_dims(h: &Matrix, a: &[f64], b: &[f64]) -> Result<()> {
    for v in [a, b] {
        if v.len() != h.cols() {
            return Err(Error::DimensionMismatch {
                context: "shift vector",
                expected: h.cols(),
                actual: v.len(),
            });
        }
    }
    Ok(())
}

/// Every row `r` becomes `r − sub + add`.
fn translate(h: &Matrix, sub: &[f64], add: &[f64]) -> Matrix {
    let mut out = h.clone();
    for r in 0..out.rows() {
        for ((x, s), a) in out.row_mut(r).iter_mut().zip(sub).zip(add) {
            *x = *x - s + a;
        }
    }
    out
}

/// `h − v_l + v_d` row-wise.
pub fn shift_toward(h: &Matrix, v_l: &[f64], v_d: &[f64]) -> Result<Matrix> {
    check_dims(h, v_l, v_d)?;
    Ok(translate(h, v_l, v_d))
}

/// `h̃ − v_d + v_l` row-wise.
pub fn shift_backward(h_tilde: &Matrix, v_d: &[f64], v_l: &[f64]) -> Result<Matrix> {
    check_dims(h_tilde, v_d, v_l)?;
    Ok(translate(h_tilde, v_d, v_l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftDirection {
    Toward,
    Backward,
}

/// Constant translation hook. Its vectors are not parameters: gradients never reach them.
#[derive(Debug, Clone)]
pub struct ShiftHook {
    name: String,
    direction: ShiftDirection,
    subtract: Vec<f64>,
    add: Vec<f64>,
}

impl ShiftHook {
    pub fn toward(lang: LangId, v_l: Vec<f64>, v_d: Vec<f64>) -> Self {
        Self {
            name: format!("shift_toward[{lang}]"),
            direction: ShiftDirection::Toward,
            subtract: v_l,
            add: v_d,
        }
    }

    pub fn backward(lang: LangId, v_d: Vec<f64>, v_l: Vec<f64>) -> Self {
        Self {
            name: format!("shift_backward[{lang}]"),
            direction: ShiftDirection::Backward,
            subtract: v_d,
            add: v_l,
        }
    }

    pub fn direction(&self) -> ShiftDirection {
        self.direction
    }
}

impl HiddenStateHook for ShiftHook {
    fn name(&self) -> &str {
        &self.name
    }

    fn apply(&self, h: &Matrix) -> Result<Matrix> {
        check_dims(h, &self.subtract, &self.add)?;
        Ok(translate(h, &self.subtract, &self.add))
    }
}

/// Everything the hooks need: the dominant language, the area and the vector table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftPlan {
    dominant: LangId,
    area: ShiftArea,
    vectors: LanguageVectorTable,
    enabled: bool,
}

#[derive(Debug, Clone)]
pub struct BuiltHooks {
    pub hooks: Vec<LayerHook>,
    /// Set when hooks were requested from a disabled plan.
    pub warning: Option<String>,
}

impl ShiftPlan {
    pub fn new(
        dominant: LangId,
        area: ShiftArea,
        vectors: LanguageVectorTable,
        enabled: bool,
    ) -> Result<Self> {
        area.validate(vectors.num_layers)?;
        if !vectors.contains(dominant) {
            return Err(Error::Lookup(format!(
                "dominant language {dominant} not in vector table"
            )));
        }
        Ok(Self {
            dominant,
            area,
            vectors,
            enabled,
        })
    }

    pub fn dominant(&self) -> LangId {
        self.dominant
    }

    pub fn area(&self) -> &ShiftArea {
        &self.area
    }

    pub fn vectors(&self) -> &LanguageVectorTable {
        &self.vectors
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn with_enabled(mut self, enabled: bool) -> Self {
        self.enabled = enabled;
        self
    }

    /// Replaces one vector (used by the online estimator during training).
    pub fn set_vector(&mut self, lang: LangId, layer: usize, v: Vec<f64>) -> Result<()> {
        self.vectors.set(lang, layer, v)
    }

    /// Whether `lang`'s inputs are shifted under this plan.
    pub fn shifts(&self, lang: LangId) -> bool {
        self.enabled && lang != self.dominant
    }

    /// Dominant id, area bounds and vector checksums, for manifests.
    pub fn summary(&self) -> Result<serde_json::Value> {
        let checksums: BTreeMap<String, String> = self
            .vectors
            .languages()
            .map(|l| Ok((l.to_string(), self.vectors.checksum(l)?)))
            .collect::<Result<_>>()?;
        Ok(serde_json::json!({
            "dominant_language": self.dominant,
            "l_to": self.area.l_to,
            "l_bk": self.area.l_bk,
            "enabled": self.enabled,
            "vector_checksums": checksums,
        }))
    }
}

/// Hooks for one query language: none for the dominant language, otherwise shift-toward
/// at `L_to` followed by shift-backward at `L_bk`.
pub fn build_hooks(plan: &ShiftPlan, query_language: LangId) -> Result<BuiltHooks> {
    if !plan.vectors.contains(query_language) {
        return Err(Error::Lookup(format!(
            "language {query_language} not in vector table"
        )));
    }
    if !plan.enabled {
        return Ok(BuiltHooks {
            hooks: Vec::new(),
            warning: Some("shift plan is disabled; no hooks installed".into()),
        });
    }
    if query_language == plan.dominant {
        return Ok(BuiltHooks {
            hooks: Vec::new(),
            warning: None,
        });
    }
    let (l_to, l_bk) = (plan.area.l_to, plan.area.l_bk);
    let v = |lang, layer| plan.vectors.get(lang, layer).map(<[f64]>::to_vec);
    let toward = ShiftHook::toward(
        query_language,
        v(query_language, l_to)?,
        v(plan.dominant, l_to)?,
    );
    let backward = ShiftHook::backward(
        query_language,
        v(plan.dominant, l_bk)?,
        v(query_language, l_bk)?,
    );
    Ok(BuiltHooks {
        hooks: vec![LayerHook::new(l_to, toward), LayerHook::new(l_bk, backward)],
        warning: None,
    })
}

/// Hooks for `lang`, or none when no plan applies.
pub fn hooks_for(plan: Option<&ShiftPlan>, lang: LangId) -> Result<Vec<LayerHook>> {
    match plan {
        Some(p) if p.shifts(lang) => Ok(build_hooks(p, lang)?.hooks),
        _ => Ok(Vec::new()),
    }
}
