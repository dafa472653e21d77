//! Boosted Haar cascades and the OpenCV cascade XML format.

use std::fmt::Write as _;

use roxmltree::{Document, Node};

use crate::error::{Error, Result};

/// Weighted rectangle in base-window coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HaarRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HaarFeature {
    pub rects: Vec<HaarRect>,
}

/// Where a tree node branches to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Child {
    Node(usize),
    Leaf(usize),
}

impl Child {
    /// Decodes the file convention: positive values are node indices, others
    /// are negated leaf indices.
    fn from_code(code: i64) -> Self {
        if code > 0 {
            Child::Node(code as usize)
        } else {
            Child::Leaf(code.unsigned_abs() as usize)
        }
    }

    fn code(self) -> i64 {
        match self {
            Child::Node(i) => i as i64,
            Child::Leaf(i) => -(i as i64),
        }
    }
}

/// Split on one feature: values below `threshold` (scaled by the window's
/// normalisation factor) go left.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeNode {
    pub feature: usize,
    pub threshold: f64,
    pub left: Child,
    pub right: Child,
}

/// A small decision tree; a single node makes a stump.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakClassifier {
    pub nodes: Vec<TreeNode>,
    pub leaves: Vec<f64>,
}

impl WeakClassifier {
    pub fn stump(feature: usize, threshold: f64, left: f64, right: f64) -> Self {
        Self {
            nodes: vec![TreeNode {
                feature,
                threshold,
                left: Child::Leaf(0),
                right: Child::Leaf(1),
            }],
            leaves: vec![left, right],
        }
    }

    /// Walks the tree, calling `below(feature, threshold)` at each node.
    pub(crate) fn eval(&self, mut below: impl FnMut(usize, f64) -> bool) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match if below(node.feature, node.threshold) { node.left } else { node.right } {
                Child::Node(next) => i = next,
                Child::Leaf(leaf) => return self.leaves[leaf],
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub classifiers: Vec<WeakClassifier>,
    /// The stage rejects a window whose leaf sum falls below this value.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeModel {
    window: (usize, usize),
    stages: Vec<Stage>,
    features: Vec<HaarFeature>,
}

impl CascadeModel {
    pub fn new(window: (usize, usize), stages: Vec<Stage>, features: Vec<HaarFeature>) -> Result<Self> {
        let (ww, wh) = window;
        if ww < 3 || wh < 3 {
            return Err(Error::Schema(format!("base window {ww}x{wh} is too small")));
        }
        if stages.is_empty() {
            return Err(Error::Schema("cascade has no stages".into()));
        }
        for (fi, f) in features.iter().enumerate() {
            if !(2..=3).contains(&f.rects.len()) {
                return Err(Error::Schema(format!("feature {fi} has {} rects, expected 2 or 3", f.rects.len())));
            }
            for r in &f.rects {
                if r.x + r.w > ww || r.y + r.h > wh || !r.weight.is_finite() {
                    return Err(Error::Schema(format!("feature {fi} has rect {r:?} outside the {ww}x{wh} window")));
                }
            }
            if !f.rects.iter().any(|r| r.weight < 0.0) || !f.rects.iter().any(|r| r.weight > 0.0) {
                return Err(Error::Schema(format!("feature {fi} needs both positive and negative weights")));
            }
        }
        for (si, stage) in stages.iter().enumerate() {
            if stage.classifiers.is_empty() {
                return Err(Error::Schema(format!("stage {si} has no weak classifiers")));
            }
            if stage.threshold.is_nan() {
                return Err(Error::Schema(format!("stage {si} threshold is NaN")));
            }
            for (ci, c) in stage.classifiers.iter().enumerate() {
                validate_tree(c, features.len()).map_err(|e| match e {
                    Error::Schema(m) => Error::Schema(format!("stage {si} classifier {ci}: {m}")),
                    other => other,
                })?;
            }
        }
        Ok(Self { window, stages, features })
    }

    /// Base window `(width, height)`.
    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn features(&self) -> &[HaarFeature] {
        &self.features
    }

    /// Serialises in the same layout [`parse_cascade_xml`] reads.
    pub fn to_xml(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\"?>\n<opencv_storage>\n<cascade type_id=\"opencv-cascade-classifier\">\n");
        let _ = write!(
            out,
            "  <stageType>BOOST</stageType>\n  <featureType>HAAR</featureType>\n  <height>{}</height>\n  <width>{}</width>\n  <stageNum>{}</stageNum>\n  <stages>\n",
            self.window.1,
            self.window.0,
            self.stages.len()
        );
        for stage in &self.stages {
            let _ = write!(
                out,
                "    <_>\n      <maxWeakCount>{}</maxWeakCount>\n      <stageThreshold>{:?}</stageThreshold>\n      <weakClassifiers>\n",
                stage.classifiers.len(),
                stage.threshold
            );
            for c in &stage.classifiers {
                let nodes: Vec<String> = c
                    .nodes
                    .iter()
                    .map(|n| format!("{} {} {} {:?}", n.left.code(), n.right.code(), n.feature, n.threshold))
                    .collect();
                let leaves: Vec<String> = c.leaves.iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(
                    out,
                    "        <_>\n          <internalNodes>{}</internalNodes>\n          <leafValues>{}</leafValues></_>",
                    nodes.join(" "),
                    leaves.join(" ")
                );
            }
            out.push_str("      </weakClassifiers></_>\n");
        }
        out.push_str("  </stages>\n  <features>\n");
        for f in &self.features {
            out.push_str("    <_>\n      <rects>");
            for r in &f.rects {
                let _ = write!(out, "\n        <_>{} {} {} {} {:?}</_>", r.x, r.y, r.w, r.h, r.weight);
            }
            out.push_str("</rects></_>\n");
        }
        out.push_str("  </features>\n</cascade>\n</opencv_storage>\n");
        out
    }
}

fn validate_tree(c: &WeakClassifier, feature_count: usize) -> Result<()> {
    if c.nodes.is_empty() {
        return Err(Error::Schema("tree has no nodes".into()));
    }
    if let Some(v) = c.leaves.iter().find(|v| !v.is_finite()) {
        return Err(Error::Schema(format!("leaf value {v} is not finite")));
    }
    for (i, n) in c.nodes.iter().enumerate() {
        if n.feature >= feature_count {
            return Err(Error::Index {
                index: n.feature,
                count: feature_count,
            });
        }
        if !n.threshold.is_finite() {
            return Err(Error::Schema(format!("node {i} threshold is not finite")));
        }
        for child in [n.left, n.right] {
            match child {
                Child::Node(j) if j <= i || j >= c.nodes.len() => {
                    return Err(Error::Schema(format!("node {i} points to invalid node {j}")));
                }
                Child::Leaf(l) if l >= c.leaves.len() => {
                    return Err(Error::Schema(format!("node {i} points to missing leaf {l}")));
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Result<Node<'a, 'i>> {
    node.children()
        .find(|c| c.has_tag_name(name))
        .ok_or_else(|| Error::Schema(format!("<{}> is missing <{name}>", node.tag_name().name())))
}

fn items<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(|c| c.has_tag_name("_"))
}

fn text<'a>(node: Node<'a, '_>) -> &'a str {
    node.text().unwrap_or("").trim()
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Schema(format!("bad {what} value {s:?}")))
}

fn numbers<T: std::str::FromStr>(node: Node, what: &str) -> Result<Vec<T>> {
    text(node).split_whitespace().map(|t| parse_num(t, what)).collect()
}

/// Parses an OpenCV HAAR cascade document (the `opencv-cascade-classifier`
/// layout with `internalNodes` / `leafValues` and a shared feature table).
pub fn parse_cascade_xml(xml: &str) -> Result<CascadeModel> {
    let doc = Document::parse(xml).map_err(|e| Error::Schema(format!("malformed XML: {e}")))?;
    let root = doc.root_element();
    let cascade = if root.has_tag_name("cascade") { root } else { child(root, "cascade")? };

    if let Ok(kind) = child(cascade, "featureType") {
        if text(kind) != "HAAR" {
            return Err(Error::Schema(format!("unsupported featureType {:?}", text(kind))));
        }
    }
    if let Ok(kind) = child(cascade, "stageType") {
        if text(kind) != "BOOST" {
            return Err(Error::Schema(format!("unsupported stageType {:?}", text(kind))));
        }
    }
    let width: usize = parse_num(text(child(cascade, "width")?), "width")?;
    let height: usize = parse_num(text(child(cascade, "height")?), "height")?;

    let mut stages = Vec::new();
    for (si, s) in items(child(cascade, "stages")?).enumerate() {
        let threshold = parse_num(text(child(s, "stageThreshold")?), "stageThreshold")?;
        let mut classifiers = Vec::new();
        for wc in items(child(s, "weakClassifiers")?) {
            classifiers.push(parse_tree(wc).map_err(|e| match e {
                Error::Schema(m) => Error::Schema(format!("stage {si}: {m}")),
                other => other,
            })?);
        }
        stages.push(Stage { classifiers, threshold });
    }
    if let Ok(n) = child(cascade, "stageNum") {
        let declared: usize = parse_num(text(n), "stageNum")?;
        if declared != stages.len() {
            return Err(Error::Schema(format!("stageNum is {declared} but {} stages are present", stages.len())));
        }
    }

    let mut features = Vec::new();
    for (fi, f) in items(child(cascade, "features")?).enumerate() {
        if let Ok(t) = child(f, "tilted") {
            if text(t) != "0" {
                return Err(Error::Schema(format!("feature {fi} is tilted; tilted features are unsupported")));
            }
        }
        let mut rects = Vec::new();
        for r in items(child(f, "rects")?) {
            let v: Vec<f64> = numbers(r, "rect")?;
            if v.len() != 5 {
                return Err(Error::Schema(format!("feature {fi} rect needs 5 numbers, found {}", v.len())));
            }
            if v[..4].iter().any(|c| *c < 0.0 || c.fract() != 0.0) {
                return Err(Error::Schema(format!("feature {fi} rect has non-integer coordinates")));
            }
            rects.push(HaarRect {
                x: v[0] as usize,
                y: v[1] as usize,
                w: v[2] as usize,
                h: v[3] as usize,
                weight: v[4],
            });
        }
        features.push(HaarFeature { rects });
    }
    CascadeModel::new((width, height), stages, features)
}

fn parse_tree(wc: Node) -> Result<WeakClassifier> {
    let raw: Vec<&str> = text(child(wc, "internalNodes")?).split_whitespace().collect();
    if raw.is_empty() || raw.len() % 4 != 0 {
        return Err(Error::Schema(format!("internalNodes has {} values, expected groups of 4", raw.len())));
    }
    let mut nodes = Vec::new();
    for q in raw.chunks(4) {
        let left: i64 = parse_num(q[0], "internalNodes")?;
        let right: i64 = parse_num(q[1], "internalNodes")?;
        let feature: i64 = parse_num(q[2], "internalNodes")?;
        if feature < 0 {
            return Err(Error::Schema(format!("negative feature index {feature}")));
        }
        nodes.push(TreeNode {
            feature: feature as usize,
            threshold: parse_num(q[3], "internalNodes")?,
            left: Child::from_code(left),
            right: Child::from_code(right),
        });
    }
    let leaves = numbers(child(wc, "leafValues")?, "leafValues")?;
    Ok(WeakClassifier { nodes, leaves })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"<?xml version="1.0"?>
<opencv_storage>
<cascade type_id="opencv-cascade-classifier">
  <stageType>BOOST</stageType>
  <featureType>HAAR</featureType>
  <height>20</height>
  <width>24</width>
  <stageNum>1</stageNum>
  <stages>
    <_>
      <maxWeakCount>1</maxWeakCount>
      <stageThreshold>-1.25</stageThreshold>
      <weakClassifiers>
        <_>
          <internalNodes>0 -1 0 4.5e-03</internalNodes>
          <leafValues>-0.75 1.5</leafValues></_></weakClassifiers></_></stages>
  <features>
    <_>
      <rects>
        <_>2 3 10 6 -1.</_>
        <_>2 6 10 3 2.</_></rects>
      <tilted>0</tilted></_></features>
</cascade>
</opencv_storage>
"#;

    #[test]
    fn minimal_document_fields() {
        let c = parse_cascade_xml(MINIMAL).unwrap();
        assert_eq!(c.window(), (24, 20));
        assert_eq!(c.stages().len(), 1);
        assert_eq!(c.stages()[0].threshold, -1.25);
        assert_eq!(c.stages()[0].classifiers, vec![WeakClassifier::stump(0, 4.5e-3, -0.75, 1.5)]);
        assert_eq!(
            c.features()[0].rects,
            vec![
                HaarRect { x: 2, y: 3, w: 10, h: 6, weight: -1.0 },
                HaarRect { x: 2, y: 6, w: 10, h: 3, weight: 2.0 },
            ]
        );
        assert_eq!(parse_cascade_xml(&c.to_xml()).unwrap(), c);
    }

    #[test]
    fn dangling_feature_index() {
        let doc = MINIMAL.replace("0 -1 0 4.5e-03", "0 -1 3 4.5e-03");
        assert!(matches!(parse_cascade_xml(&doc), Err(Error::Index { index: 3, count: 1 })));
    }

    #[test]
    fn tilted_feature_rejected() {
        let doc = MINIMAL.replace("<tilted>0</tilted>", "<tilted>1</tilted>");
        assert!(matches!(parse_cascade_xml(&doc), Err(Error::Schema(m)) if m.contains("tilted")));
    }

    #[test]
    fn missing_element_is_named() {
        let doc = MINIMAL.replace("<leafValues>-0.75 1.5</leafValues>", "");
        assert!(matches!(parse_cascade_xml(&doc), Err(Error::Schema(m)) if m.contains("leafValues")));
        let doc = MINIMAL.replace("<width>24</width>", "");
        assert!(matches!(parse_cascade_xml(&doc), Err(Error::Schema(m)) if m.contains("width")));
    }

    #[test]
    fn leaf_reference_out_of_range() {
        let doc = MINIMAL.replace("0 -1 0 4.5e-03", "0 -2 0 4.5e-03");
        assert!(matches!(parse_cascade_xml(&doc), Err(Error::Schema(m)) if m.contains("leaf")));
    }

    #[test]
    fn frontal_face_asset() {
        let xml = include_str!("../../assets/haarcascade_frontalface_default.xml");
        let c = parse_cascade_xml(xml).unwrap();
        assert_eq!(c.window(), (24, 24));
        assert_eq!(c.stages().len(), 25);
        assert_eq!(c.stages()[0].classifiers.len(), 9);
        assert_eq!(c.stages()[0].threshold, -5.0425500869750977);
        assert_eq!(c.features()[0].rects[0], HaarRect { x: 6, y: 4, w: 12, h: 9, weight: -1.0 });
    }

    #[test]
    fn two_level_tree_walk() {
        let c = WeakClassifier {
            nodes: vec![
                TreeNode { feature: 0, threshold: 0.0, left: Child::Node(1), right: Child::Leaf(0) },
                TreeNode { feature: 1, threshold: 0.0, left: Child::Leaf(1), right: Child::Leaf(2) },
            ],
            leaves: vec![10.0, 20.0, 30.0],
        };
        assert_eq!(c.eval(|f, _| f == 0), 30.0);
        assert_eq!(c.eval(|_, _| true), 20.0);
        assert_eq!(c.eval(|_, _| false), 10.0);
    }
}
