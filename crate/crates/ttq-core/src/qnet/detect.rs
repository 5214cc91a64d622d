//! Detection decoding and evaluation: grid decode with anchors, IOU, greedy
//! matching, per-class average precision and its mean.

use crate::tensor::DenseTensor;

use super::QnetError;

pub const NMS_DEFAULT_IOU: f64 = 0.45;

/// One decoded box in normalized image coordinates (center + size in [0,1]).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
    pub class_probs: Vec<f64>,
    pub class_id: usize,
}

impl DetectionBox {
    /// Plain box without class scores, mostly for ground truth and tests.
    pub fn plain(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        DetectionBox {
            cx,
            cy,
            w,
            h,
            confidence: 1.0,
            class_probs: Vec::new(),
            class_id: 0,
        }
    }
}

/// Grid geometry of the detection head: `channels = boxes * (5 + classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionGridConfig {
    pub grid: usize,
    pub boxes: usize,
    pub classes: usize,
    /// Anchor (width, height) priors in grid-cell units, one per box.
    pub anchors: Vec<(f64, f64)>,
}

impl DetectionGridConfig {
    pub fn channels(&self) -> usize {
        self.boxes * (5 + self.classes)
    }

    pub fn validate(&self) -> Result<(), QnetError> {
        if self.grid == 0 || self.boxes == 0 || self.classes == 0 {
            return Err(QnetError::Config("grid, boxes, classes must be >= 1".into()));
        }
        if self.anchors.len() != self.boxes {
            return Err(QnetError::Config(format!(
                "expected {} anchors, got {}",
                self.boxes,
                self.anchors.len()
            )));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Decodes a `grid x grid x boxes*(5+classes)` feature tensor.
///
/// Per cell `(gy, gx)` and box `b` the channel block holds
/// `(tx, ty, tw, th, tconf, class logits...)`; centers are
/// `(gx + sigmoid(tx)) / S`, sizes are `anchor * exp(t) / S`, confidence is
/// `sigmoid(tconf)`, class scores a softmax. Boxes below `conf_threshold`
/// are dropped.
pub fn decode_detections(
    feature: &DenseTensor<f64>,
    cfg: &DetectionGridConfig,
    conf_threshold: f64,
) -> Result<Vec<DetectionBox>, QnetError> {
    cfg.validate()?;
    let dims = feature.shape().dims();
    let s = cfg.grid;
    if dims != [s, s, cfg.channels()] {
        return Err(QnetError::Shape(format!(
            "feature shape {} does not match {s}x{s}x{}",
            feature.shape(),
            cfg.channels()
        )));
    }
    let data = feature.as_slice();
    let per_box = 5 + cfg.classes;
    let ch = cfg.channels();
    let mut out = Vec::new();
    for gy in 0..s {
        for gx in 0..s {
            let cell = &data[(gy * s + gx) * ch..][..ch];
            for b in 0..cfg.boxes {
                let f = &cell[b * per_box..][..per_box];
                let confidence = sigmoid(f[4]);
                if confidence < conf_threshold {
                    continue;
                }
                let (aw, ah) = cfg.anchors[b];
                let class_probs = softmax(&f[5..]);
                let class_id = class_probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                out.push(DetectionBox {
                    cx: (gx as f64 + sigmoid(f[0])) / s as f64,
                    cy: (gy as f64 + sigmoid(f[1])) / s as f64,
                    w: aw * f[2].exp() / s as f64,
                    h: ah * f[3].exp() / s as f64,
                    confidence,
                    class_probs,
                    class_id,
                });
            }
        }
    }
    Ok(out)
}

/// Intersection over union of two center-format boxes; 0 for disjoint or
/// degenerate boxes.
pub fn iou(a: &DetectionBox, b: &DetectionBox) -> f64 {
    if a.w <= 0.0 || a.h <= 0.0 || b.w <= 0.0 || b.h <= 0.0 {
        return 0.0;
    }
    let (ax0, ax1) = (a.cx - a.w / 2.0, a.cx + a.w / 2.0);
    let (ay0, ay1) = (a.cy - a.h / 2.0, a.cy + a.h / 2.0);
    let (bx0, bx1) = (b.cx - b.w / 2.0, b.cx + b.w / 2.0);
    let (by0, by1) = (b.cy - b.h / 2.0, b.cy + b.h / 2.0);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy per-class non-maximum suppression at `iou_threshold`.
/// Post-processing beyond the decode contract; visual output only.
pub fn nms(mut dets: Vec<DetectionBox>, iou_threshold: f64) -> Vec<DetectionBox> {
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut keep: Vec<DetectionBox> = Vec::new();
    for det in dets {
        let suppressed = keep
            .iter()
            .any(|k| k.class_id == det.class_id && iou(k, &det) >= iou_threshold);
        if !suppressed {
            keep.push(det);
        }
    }
    keep
}

/// A prediction attached to the frame it was made on.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub frame_id: usize,
    pub bbox: DetectionBox,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub frame_id: usize,
    pub bbox: DetectionBox,
}

/// Average precision for one class: predictions sorted by confidence,
/// greedily matched to unmatched same-frame truths at `iou_threshold`, then
/// the area under the precision-recall curve with the monotone-decreasing
/// precision envelope (all-points interpolation). No truths gives 0.
pub fn average_precision(
    preds: &[Prediction],
    truths: &[GroundTruth],
    iou_threshold: f64,
) -> f64 {
    if truths.is_empty() || preds.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .bbox
            .confidence
            .total_cmp(&preds[a].bbox.confidence)
            .then(a.cmp(&b))
    });

    let mut matched = vec![false; truths.len()];
    let mut is_tp = Vec::with_capacity(preds.len());
    for &pi in &order {
        let p = &preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for (ti, t) in truths.iter().enumerate() {
            if matched[ti] || t.frame_id != p.frame_id {
                continue;
            }
            let overlap = iou(&p.bbox, &t.bbox);
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((ti, overlap));
            }
        }
        match best {
            Some((ti, _)) => {
                matched[ti] = true;
                is_tp.push(true);
            }
            None => is_tp.push(false),
        }
    }

    // precision/recall after each prediction
    let n_truth = truths.len() as f64;
    let mut tp = 0usize;
    let mut precisions = Vec::with_capacity(is_tp.len());
    let mut recalls = Vec::with_capacity(is_tp.len());
    for (i, &hit) in is_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precisions.push(tp as f64 / (i + 1) as f64);
        recalls.push(tp as f64 / n_truth);
    }

    // monotone envelope from the right, then sum rectangle areas
    let mut envelope = precisions.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..envelope.len() {
        let dr = recalls[i] - prev_recall;
        if dr > 0.0 {
            ap += dr * envelope[i];
            prev_recall = recalls[i];
        }
    }
    ap
}

/// Arithmetic mean over per-class AP values.
pub fn mean_ap(per_class: &[f64]) -> f64 {
    if per_class.is_empty() {
        return 0.0;
    }
    per_class.iter().sum::<f64>() / per_class.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn grid_cfg(s: usize, b: usize, c: usize) -> DetectionGridConfig {
        DetectionGridConfig {
            grid: s,
            boxes: b,
            classes: c,
            anchors: (0..b).map(|i| (1.0 + i as f64, 1.0 + i as f64)).collect(),
        }
    }

    #[test]
    fn channels_match_published_head_sizes() {
        assert_eq!(grid_cfg(7, 2, 20).channels(), 50);
        assert_eq!(grid_cfg(19, 5, 20).channels(), 125);
        assert_eq!(grid_cfg(19, 5, 80).channels(), 425);
    }

    #[test]
    fn all_negative_logits_decode_empty() {
        let cfg = grid_cfg(3, 1, 2);
        let feature = DenseTensor::from_vec(
            Shape::new(vec![3, 3, 7]).unwrap(),
            vec![-40.0; 3 * 3 * 7],
        )
        .unwrap();
        let dets = decode_detections(&feature, &cfg, 0.5).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn zero_conf_logit_is_half_confidence() {
        let cfg = grid_cfg(19, 1, 2);
        let mut data = vec![-40.0; 19 * 19 * 7];
        // cell (0,0), box 0: tx = ty = tw = th = 0, conf = 0
        for k in 0..5 {
            data[k] = 0.0;
        }
        let feature = DenseTensor::from_vec(Shape::new(vec![19, 19, 7]).unwrap(), data).unwrap();
        let dets = decode_detections(&feature, &cfg, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert!((d.confidence - 0.5).abs() < 1e-12);
        assert!((d.cx - 0.5 / 19.0).abs() < 1e-12);
        assert!((d.cy - 0.5 / 19.0).abs() < 1e-12);
        let prob_sum: f64 = d.class_probs.iter().sum();
        assert!((prob_sum - 1.0).abs() < 1e-5);
    }

    /// Encoding a synthetic box into logits and decoding recovers it.
    #[test]
    fn decode_inverts_encode() {
        let cfg = grid_cfg(5, 1, 3);
        let s = cfg.grid as f64;
        let (bx, by, bw, bh) = (0.53, 0.27, 0.2, 0.1);
        let (gx, gy) = ((bx * s).floor() as usize, (by * s).floor() as usize);
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let tx = logit(bx * s - gx as f64);
        let ty = logit(by * s - gy as f64);
        let tw = (bw * s / cfg.anchors[0].0).ln();
        let th = (bh * s / cfg.anchors[0].1).ln();

        let mut data = vec![-40.0; 5 * 5 * 8];
        let base = (gy * 5 + gx) * 8;
        data[base] = tx;
        data[base + 1] = ty;
        data[base + 2] = tw;
        data[base + 3] = th;
        data[base + 4] = 3.0; // confident
        data[base + 5] = 0.0;
        data[base + 6] = 2.0;
        data[base + 7] = -1.0;
        let feature = DenseTensor::from_vec(Shape::new(vec![5, 5, 8]).unwrap(), data).unwrap();
        let dets = decode_detections(&feature, &cfg, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert!((d.cx - bx).abs() < 1e-6);
        assert!((d.cy - by).abs() < 1e-6);
        assert!((d.w - bw).abs() < 1e-6);
        assert!((d.h - bh).abs() < 1e-6);
        assert_eq!(d.class_id, 1);
    }

    #[test]
    fn iou_hand_cases() {
        let a = DetectionBox::plain(1.0, 1.0, 2.0, 2.0); // (0,0)-(2,2)
        assert_eq!(iou(&a, &a), 1.0);
        let disjoint = DetectionBox::plain(5.0, 5.0, 2.0, 2.0);
        assert_eq!(iou(&a, &disjoint), 0.0);
        let b = DetectionBox::plain(2.0, 1.0, 2.0, 2.0); // (1,0)-(3,2)
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let degenerate = DetectionBox::plain(1.0, 1.0, 0.0, 2.0);
        assert_eq!(iou(&a, &degenerate), 0.0);
    }

    fn pred(frame: usize, cx: f64, conf: f64) -> Prediction {
        let mut bbox = DetectionBox::plain(cx, 0.5, 0.2, 0.2);
        bbox.confidence = conf;
        Prediction { frame_id: frame, bbox }
    }

    fn truth(frame: usize, cx: f64) -> GroundTruth {
        GroundTruth {
            frame_id: frame,
            bbox: DetectionBox::plain(cx, 0.5, 0.2, 0.2),
        }
    }

    #[test]
    fn perfect_predictions_have_unit_ap() {
        let truths = vec![truth(0, 0.2), truth(1, 0.6)];
        let preds = vec![pred(0, 0.2, 0.9), pred(1, 0.6, 0.8)];
        assert_eq!(average_precision(&preds, &truths, 0.5), 1.0);
    }

    #[test]
    fn no_predictions_zero_ap() {
        let truths = vec![truth(0, 0.2)];
        assert_eq!(average_precision(&[], &truths, 0.5), 0.0);
        assert_eq!(average_precision(&[pred(0, 0.2, 0.9)], &[], 0.5), 0.0);
    }

    /// Worked example: 3 predictions (TP at .9, FP at .8, TP at .7) over two
    /// truths. Brute-force PR enumeration gives 1*(1/2) + (2/3)*(1/2) = 5/6.
    #[test]
    fn ap_worked_example() {
        let truths = vec![truth(0, 0.2), truth(1, 0.6)];
        let preds = vec![
            pred(0, 0.2, 0.9),  // TP
            pred(2, 0.9, 0.8),  // FP (wrong frame)
            pred(1, 0.6, 0.7),  // TP
        ];
        let ap = average_precision(&preds, &truths, 0.5);
        assert!((ap - 5.0 / 6.0).abs() < 1e-6, "ap {ap}");

        // independent oracle: accumulate the PR curve point by point
        let flags = [true, false, true];
        let mut tp = 0.0;
        let mut points = Vec::new();
        for (i, &f) in flags.iter().enumerate() {
            if f {
                tp += 1.0;
            }
            points.push((tp / 2.0, tp / (i as f64 + 1.0)));
        }
        let mut oracle = 0.0;
        let mut prev_r = 0.0;
        for (i, &(r, _)) in points.iter().enumerate() {
            let best_p = points[i..]
                .iter()
                .map(|&(_, p)| p)
                .fold(f64::MIN, f64::max);
            if r > prev_r {
                oracle += (r - prev_r) * best_p;
                prev_r = r;
            }
        }
        assert!((ap - oracle).abs() < 1e-12);
    }

    #[test]
    fn ap_depends_only_on_confidence_ranks() {
        let truths = vec![truth(0, 0.2), truth(1, 0.6)];
        let preds = vec![pred(0, 0.2, 0.9), pred(2, 0.9, 0.8), pred(1, 0.6, 0.7)];
        let scaled: Vec<Prediction> = preds
            .iter()
            .map(|p| {
                let mut q = p.clone();
                q.bbox.confidence *= 17.0;
                q
            })
            .collect();
        assert_eq!(
            average_precision(&preds, &truths, 0.5),
            average_precision(&scaled, &truths, 0.5)
        );
    }

    #[test]
    fn mean_ap_cases() {
        assert_eq!(mean_ap(&[0.7]), 0.7);
        assert_eq!(mean_ap(&[1.0, 0.0]), 0.5);
        assert!((mean_ap(&[0.9, 0.6, 0.3]) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn nms_suppresses_same_class_overlaps() {
        let mut a = DetectionBox::plain(0.5, 0.5, 0.2, 0.2);
        a.confidence = 0.9;
        let mut b = DetectionBox::plain(0.51, 0.5, 0.2, 0.2);
        b.confidence = 0.8;
        let mut c = DetectionBox::plain(0.51, 0.5, 0.2, 0.2);
        c.confidence = 0.7;
        c.class_id = 1; // different class survives
        let kept = nms(vec![a, b, c], NMS_DEFAULT_IOU);
        assert_eq!(kept.len(), 2);
        assert!((kept[0].confidence - 0.9).abs() < 1e-12);
        assert_eq!(kept[1].class_id, 1);
    }
}
