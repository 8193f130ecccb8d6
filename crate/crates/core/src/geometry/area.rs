//! Per-layer distance profiles and selection of the low-distance layer area.

use serde::{Deserialize, Serialize};

use super::subspace::{distance_terms, fit_subspace, Ridge};
use crate::error::{Error, Result};
use crate::lang::LangId;
use crate::numkit::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDistance {
    /// 1-based.
    pub layer: usize,
    pub distance: f64,
    pub eigen_term: f64,
    pub mean_term: f64,
    pub ridge: f64,
    /// Retained rank of the (dominant-like, dominant) subspaces.
    pub ranks: (usize, usize),
    pub samples: (usize, usize),
}

/// Distance between a dominant-like subspace and the dominant subspace at every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    /// (non-dominant, dominant)
    pub language_pair: (LangId, LangId),
    pub variance_threshold: f64,
    pub layers: Vec<LayerDistance>,
}

impl DistanceProfile {
    /// Builds a bare profile from distances of layers `1..=len`.
    pub fn from_distances(pair: (LangId, LangId), distances: &[f64]) -> Result<Self> {
        if let Some(bad) = distances.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "distance of layer {} is not a finite non-negative number",
                bad + 1
            )));
        }
        Ok(Self {
            language_pair: pair,
            variance_threshold: f64::NAN,
            layers: distances
                .iter()
                .enumerate()
                .map(|(i, &d)| LayerDistance {
                    layer: i + 1,
                    distance: d,
                    eigen_term: d,
                    mean_term: 0.0,
                    ridge: 0.0,
                    ranks: (0, 0),
                    samples: (0, 0),
                })
                .collect(),
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.distance).collect()
    }

    /// Element-wise mean of several profiles over the same layers (e.g. across languages).
    pub fn average(profiles: &[DistanceProfile]) -> Result<Vec<f64>> {
        let first = profiles
            .first()
            .ok_or_else(|| Error::InvalidInput("no profiles to average".into()))?;
        let n = first.num_layers();
        if profiles.iter().any(|p| p.num_layers() != n) {
            return Err(Error::InvalidInput("profiles cover different layer counts".into()));
        }
        Ok((0..n)
            .map(|i| profiles.iter().map(|p| p.layers[i].distance).sum::<f64>() / profiles.len() as f64)
            .collect())
    }

    /// CSV with columns `layer,distance,eigen_term,mean_term`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,distance,eigen_term,mean_term\n");
        for l in &self.layers {
            out.push_str(&format!(
                "{},{},{},{}\n",
                l.layer, l.distance, l.eigen_term, l.mean_term
            ));
        }
        out
    }
}

/// Per-layer distance between already shift-projected non-dominant states and dominant states.
///
/// `dominant_like[i]` and `dominant[i]` hold the token representations of layer `i + 1`.
pub fn distance_profile(
    dominant_like: &[Matrix],
    dominant: &[Matrix],
    language_pair: (LangId, LangId),
    variance_threshold: f64,
    ridge: Ridge,
) -> Result<DistanceProfile> {
    if dominant_like.len() != dominant.len() || dominant.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "layers in the two representation streams",
            expected: dominant.len(),
            actual: dominant_like.len(),
        });
    }
    let mut layers = Vec::with_capacity(dominant.len());
    for (i, (x_like, x_dom)) in dominant_like.iter().zip(dominant).enumerate() {
        let layer = i + 1;
        let compute = || -> Result<LayerDistance> {
            let a = fit_subspace(x_like, variance_threshold)?;
            let b = fit_subspace(x_dom, variance_threshold)?;
            let eps = ridge.resolve(&a, &b);
            let terms = distance_terms(&a, &b, eps)?;
            Ok(LayerDistance {
                layer,
                distance: terms.total(),
                eigen_term: terms.eigen_term,
                mean_term: terms.mean_term,
                ridge: eps,
                ranks: (a.rank, b.rank),
                samples: (a.sample_count, b.sample_count),
            })
        };
        layers.push(compute().map_err(|e| e.at_layer(layer))?);
    }
    Ok(DistanceProfile {
        language_pair,
        variance_threshold,
        layers,
    })
}

/// Layers between which hidden states are shifted: toward at `l_to`, backward at `l_bk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftArea {
    pub l_to: usize,
    pub l_bk: usize,
    pub beta: f64,
    /// The layers of the area, ascending. Always `l_to..=l_bk`.
    pub selected_layers: Vec<usize>,
    /// Whether the ⌈L·β⌉ smallest-distance layers were contiguous. When false the
    /// area is the best contiguous window instead.
    pub contiguous: bool,
    /// The ⌈L·β⌉ smallest-distance layers, ascending.
    pub ranked_layers: Vec<usize>,
}

impl ShiftArea {
    /// A manually chosen area `[l_to, l_bk]` in a model with `num_layers` layers.
    pub fn manual(l_to: usize, l_bk: usize, num_layers: usize) -> Result<Self> {
        if !(1 <= l_to && l_to < l_bk && l_bk <= num_layers) {
            return Err(Error::Config(format!(
                "layer area {l_to}:{l_bk} violates 1 ≤ L_to < L_bk ≤ {num_layers}"
            )));
        }
        let layers: Vec<usize> = (l_to..=l_bk).collect();
        Ok(Self {
            l_to,
            l_bk,
            beta: layers.len() as f64 / num_layers as f64,
            ranked_layers: layers.clone(),
            selected_layers: layers,
            contiguous: true,
        })
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if !(1 <= self.l_to && self.l_to < self.l_bk && self.l_bk <= num_layers) {
            return Err(Error::Config(format!(
                "shift area {}:{} violates 1 ≤ L_to < L_bk ≤ {num_layers}",
                self.l_to, self.l_bk
            )));
        }
        Ok(())
    }

    /// Layers carrying the contrastive loss: `l_to..l_bk`.
    pub fn mcl_layers(&self) -> std::ops::Range<usize> {
        self.l_to..self.l_bk
    }
}

/// `⌈L·β⌉`, robust to `L·β` landing a rounding error above an integer (10 × 0.3).
pub fn area_size(num_layers: usize, beta: f64) -> usize {
    let raw = num_layers as f64 * beta;
    (raw - 1e-9).ceil().max(0.0) as usize
}

/// Picks the ⌈L·β⌉ layers of smallest distance (ties to the lower layer). If they are not
/// contiguous, falls back to the contiguous window of that length with the least distance sum.
pub fn select_shift_area(profile: &DistanceProfile, beta: f64) -> Result<ShiftArea> {
    select_from_distances(&profile.distances(), beta)
}

pub fn select_from_distances(distances: &[f64], beta: f64) -> Result<ShiftArea> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!("beta {beta} outside (0, 1]")));
    }
    let num_layers = distances.len();
    if num_layers < 2 {
        return Err(Error::Config(format!("need at least 2 layers, got {num_layers}")));
    }
    let n = area_size(num_layers, beta);
    if n < 2 {
        return Err(Error::AreaTooSmall { count: n });
    }
    let mut order: Vec<usize> = (0..num_layers).collect();
    order.sort_by(|&i, &j| distances[i].total_cmp(&distances[j]).then(i.cmp(&j)));
    let mut ranked: Vec<usize> = order[..n].iter().map(|i| i + 1).collect();
    ranked.sort_unstable();

    let contiguous = ranked[n - 1] - ranked[0] + 1 == n;
    let (l_to, l_bk) = if contiguous {
        (ranked[0], ranked[n - 1])
    } else {
        let mut best = (f64::INFINITY, 0);
        for start in 0..=(num_layers - n) {
            let sum: f64 = distances[start..start + n].iter().sum();
            if sum < best.0 {
                best = (sum, start);
            }
        }
        (best.1 + 1, best.1 + n)
    };
    Ok(ShiftArea {
        l_to,
        l_bk,
        beta,
        selected_layers: (l_to..=l_bk).collect(),
        contiguous,
        ranked_layers: ranked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_sorted_example() {
        let a = select_from_distances(&[5.0, 4.0, 3.0, 1.0, 1.0, 1.0, 2.0, 3.0, 9.0, 9.0], 0.3)
            .unwrap();
        assert_eq!(a.selected_layers, vec![4, 5, 6]);
        assert_eq!((a.l_to, a.l_bk), (4, 6));
        assert!(a.contiguous);
    }

    #[test]
    fn ceiling_rule() {
        assert_eq!(area_size(32, 0.30), 10);
        assert_eq!(area_size(8, 0.30), 3);
        assert_eq!(area_size(10, 0.30), 3);
        assert_eq!(area_size(10, 0.31), 4);
        assert_eq!(area_size(10, 0.1), 1);
    }

    #[test]
    fn area_too_small() {
        let err = select_from_distances(&[1.0; 10], 0.1).unwrap_err();
        assert!(matches!(err, Error::AreaTooSmall { count: 1 }));
        assert!(err.is_config());
    }

    #[test]
    fn manual_area_bounds() {
        assert!(ShiftArea::manual(3, 3, 8).is_err());
        assert!(ShiftArea::manual(0, 3, 8).is_err());
        assert!(ShiftArea::manual(3, 9, 8).is_err());
        let a = ShiftArea::manual(2, 5, 8).unwrap();
        assert_eq!(a.selected_layers, vec![2, 3, 4, 5]);
        assert_eq!(a.mcl_layers(), 2..5);
    }
}
