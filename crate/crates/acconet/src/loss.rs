//! Hybrid training loss: pixel-level binary cross-entropy plus map-level
//! IoU, summed without weighting over the five deeply supervised outputs.

use std::sync::Arc;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Val};
use crate::schedule::LEVELS;
use crate::Scalar;

/// Guard for the logarithms and the empty-union case.
pub const LOSS_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    #[default]
    Both,
    Bce,
    Iou,
}

impl LossMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "both" => Ok(LossMode::Both),
            "bce" | "bce-only" => Ok(LossMode::Bce),
            "iou" | "iou-only" => Ok(LossMode::Iou),
            other => Err(Error::Config(format!(
                "unknown loss mode `{other}` (expected both|bce|iou)"
            ))),
        }
    }

    pub fn uses_bce(self) -> bool {
        self != LossMode::Iou
    }

    pub fn uses_iou(self) -> bool {
        self != LossMode::Bce
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossMode::Both => write!(f, "both"),
            LossMode::Bce => write!(f, "bce"),
            LossMode::Iou => write!(f, "iou"),
        }
    }
}

/// Per-level loss terms plus their sum, extracted as plain scalars.
#[derive(Debug, Clone)]
pub struct LossBreakdown<S: Scalar> {
    pub bce: [S; LEVELS],
    pub iou: [S; LEVELS],
    pub total: S,
}

fn check_pair<S: Scalar>(g: &Graph<S>, pred: &Val<S>, target: &ArrayD<S>, what: &str) -> Result<()> {
    let ps = g.shape(pred);
    if ps != target.shape() {
        return Err(Error::shape(
            what,
            format!("{:?}", target.shape()),
            format!("{ps:?}"),
        ));
    }
    if ps.len() != 4 || ps[1] != 1 {
        return Err(Error::shape(
            what,
            "(B, 1, h, w)".to_string(),
            format!("{ps:?}"),
        ));
    }
    Ok(())
}

/// Mean over pixels of -[G ln(S+eps) + (1-G) ln(1-S+eps)].
pub fn bce_loss<S: Scalar>(g: &mut Graph<S>, pred: &Val<S>, target: &ArrayD<S>) -> Result<Val<S>> {
    check_pair(g, pred, target, "binary cross-entropy loss")?;
    Ok(g.bce(pred, Arc::new(target.clone()), S::from_f64(LOSS_EPS)))
}

/// 1 - (|S∧G|+eps)/(|S∨G|+eps) per image, averaged over the batch.
pub fn iou_loss<S: Scalar>(g: &mut Graph<S>, pred: &Val<S>, target: &ArrayD<S>) -> Result<Val<S>> {
    check_pair(g, pred, target, "IoU loss")?;
    Ok(g.iou(pred, Arc::new(target.clone()), S::from_f64(LOSS_EPS)))
}

/// Deep-supervision total: the sum of the active per-level terms over all
/// five saliency maps. Every map must already be at ground-truth resolution.
pub fn total_loss<S: Scalar>(
    g: &mut Graph<S>,
    maps: &[Val<S>],
    target: &ArrayD<S>,
    mode: LossMode,
) -> Result<(Val<S>, LossBreakdown<S>)> {
    if maps.len() != LEVELS {
        return Err(Error::Config(format!(
            "deep supervision expects {LEVELS} saliency maps, got {}",
            maps.len()
        )));
    }
    let mut bce = [S::zero(); LEVELS];
    let mut iou = [S::zero(); LEVELS];
    let mut terms: Vec<Val<S>> = Vec::with_capacity(2 * LEVELS);
    for (t, map) in maps.iter().enumerate() {
        if mode.uses_bce() {
            let term = bce_loss(g, map, target)?;
            bce[t] = *g.value(&term).iter().next().expect("scalar");
            terms.push(term);
        }
        if mode.uses_iou() {
            let term = iou_loss(g, map, target)?;
            iou[t] = *g.value(&term).iter().next().expect("scalar");
            terms.push(term);
        }
    }
    let refs: Vec<&Val<S>> = terms.iter().collect();
    let total = g.add_n(&refs);
    let total_v = *g.value(&total).iter().next().expect("scalar");
    Ok((
        total,
        LossBreakdown {
            bce,
            iou,
            total: total_v,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn map_of(values: ArrayD<f64>, g: &mut Graph<f64>) -> Val<f64> {
        g.input(values)
    }

    fn checkerboard(b: usize, h: usize, w: usize) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(&[b, 1, h, w]), |ix| ((ix[0] + ix[2] + ix[3]) % 2) as f64)
    }

    #[test]
    fn perfect_prediction_has_negligible_loss() {
        let mut g = Graph::new(false);
        let gt = checkerboard(1, 4, 4);
        let pred = map_of(gt.clone(), &mut g);
        let b = bce_loss(&mut g, &pred, &gt).unwrap();
        let i = iou_loss(&mut g, &pred, &gt).unwrap();
        assert!(*g.value(&b).iter().next().unwrap() < 1e-6);
        assert!(*g.value(&i).iter().next().unwrap() < 1e-6);
    }

    #[test]
    fn uniform_half_prediction_costs_ln_two_per_pixel() {
        let mut g = Graph::new(false);
        let gt = checkerboard(2, 4, 4);
        let pred = map_of(ArrayD::from_elem(IxDyn(&[2, 1, 4, 4]), 0.5), &mut g);
        let b = bce_loss(&mut g, &pred, &gt).unwrap();
        let got = *g.value(&b).iter().next().unwrap();
        assert!((got - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn complementary_prediction_drives_iou_loss_to_one() {
        let mut g = Graph::new(false);
        let gt = checkerboard(1, 4, 4);
        let inv = gt.mapv(|v| 1.0 - v);
        let pred = map_of(inv, &mut g);
        let i = iou_loss(&mut g, &pred, &gt).unwrap();
        let got = *g.value(&i).iter().next().unwrap();
        assert!(got > 1.0 - 1e-6);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut g = Graph::new(false);
        let gt = checkerboard(1, 4, 4);
        let pred = map_of(ArrayD::from_elem(IxDyn(&[1, 1, 8, 8]), 0.5), &mut g);
        assert!(bce_loss(&mut g, &pred, &gt).is_err());
        assert!(iou_loss(&mut g, &pred, &gt).is_err());
    }

    #[test]
    fn total_is_the_sum_of_its_terms() {
        let mut g = Graph::new(false);
        let gt = checkerboard(2, 4, 4);
        let maps: Vec<Val<f64>> = (0..LEVELS)
            .map(|k| {
                map_of(
                    ArrayD::from_shape_fn(IxDyn(&[2, 1, 4, 4]), |ix| {
                        0.1 + 0.05 * ((ix[2] * 4 + ix[3] + k) % 13) as f64
                    }),
                    &mut g,
                )
            })
            .collect();
        let (total, parts) = total_loss(&mut g, &maps, &gt, LossMode::Both).unwrap();
        let direct: f64 = parts.bce.iter().sum::<f64>() + parts.iou.iter().sum::<f64>();
        let got = *g.value(&total).iter().next().unwrap();
        assert!((got - direct).abs() < 1e-9);
        assert!((got - parts.total).abs() < 1e-12);
    }

    #[test]
    fn bce_only_mode_sums_exactly_the_bce_terms() {
        let mut g = Graph::new(false);
        let gt = checkerboard(1, 4, 4);
        let maps: Vec<Val<f64>> =
            (0..LEVELS).map(|_| map_of(ArrayD::from_elem(IxDyn(&[1, 1, 4, 4]), 0.3), &mut g)).collect();
        let (total, parts) = total_loss(&mut g, &maps, &gt, LossMode::Bce).unwrap();
        let got = *g.value(&total).iter().next().unwrap();
        assert_eq!(parts.iou, [0.0; LEVELS]);
        assert!((got - parts.bce.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn wrong_map_count_is_rejected() {
        let mut g = Graph::new(false);
        let gt = checkerboard(1, 4, 4);
        let maps: Vec<Val<f64>> =
            (0..3).map(|_| map_of(ArrayD::from_elem(IxDyn(&[1, 1, 4, 4]), 0.3), &mut g)).collect();
        assert!(total_loss(&mut g, &maps, &gt, LossMode::Both).is_err());
    }

    #[test]
    fn swapping_identical_maps_keeps_the_total() {
        let mut g = Graph::new(false);
        let gt = checkerboard(1, 4, 4);
        let a = ArrayD::from_elem(IxDyn(&[1, 1, 4, 4]), 0.4);
        let b = ArrayD::from_elem(IxDyn(&[1, 1, 4, 4]), 0.7);
        let maps1: Vec<Val<f64>> = [&a, &b, &a, &a, &b].iter().map(|m| map_of((*m).clone(), &mut g)).collect();
        let maps2: Vec<Val<f64>> = [&b, &a, &a, &a, &b].iter().map(|m| map_of((*m).clone(), &mut g)).collect();
        let (t1, _) = total_loss(&mut g, &maps1, &gt, LossMode::Both).unwrap();
        let (t2, _) = total_loss(&mut g, &maps2, &gt, LossMode::Both).unwrap();
        let v1 = *g.value(&t1).iter().next().unwrap();
        let v2 = *g.value(&t2).iter().next().unwrap();
        assert!((v1 - v2).abs() < 1e-12);
    }
}
