//! VOC-style XML annotation reading and writing.
//!
//! Only the fields the pipeline consumes are handled: filename, image size,
//! and per-object name / difficult flag / bounding box. The writer emits a
//! fixed layout so parse -> write -> parse is the identity on these fields.

use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;

use zigzag_core::eval::{GroundTruth, GtObject};
use zigzag_core::model::BBox;

use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VocObject {
    pub name: String,
    pub difficult: bool,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocAnnotation {
    pub filename: String,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<VocObject>,
}

impl VocAnnotation {
    /// Ground truth plus the +1/-1 label vector over `classes`. Unknown
    /// object names are an error naming the offending file.
    pub fn to_ground_truth(&self, classes: &[String], path: &Path) -> Result<(GroundTruth, Vec<i8>)> {
        let mut objects = Vec::with_capacity(self.objects.len());
        let mut labels = vec![-1i8; classes.len()];
        for obj in &self.objects {
            let class_index = classes.iter().position(|c| c == &obj.name).ok_or_else(|| {
                HarnessError::invalid(path, format!("unknown class name {:?}", obj.name))
            })?;
            let bbox = BBox::new(obj.x_min, obj.y_min, obj.x_max, obj.y_max)
                .map_err(|e| HarnessError::invalid(path, e))?;
            labels[class_index] = 1;
            objects.push(GtObject { class_index, bbox, difficult: obj.difficult });
        }
        Ok((GroundTruth { image_id: self.filename.clone(), objects }, labels))
    }
}

fn num(value: f64) -> String {
    // integers stay integral, everything else keeps its digits
    if value.fract() == 0.0 && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        format!("{}", crate::formats::round_sig(value))
    }
}

/// Serialize with a fixed two-space indent layout.
pub fn write_annotation(ann: &VocAnnotation) -> String {
    let mut out = String::new();
    out.push_str("<annotation>\n");
    out.push_str(&format!("  <filename>{}</filename>\n", ann.filename));
    out.push_str("  <size>\n");
    out.push_str(&format!("    <width>{}</width>\n", num(ann.width)));
    out.push_str(&format!("    <height>{}</height>\n", num(ann.height)));
    out.push_str("    <depth>3</depth>\n");
    out.push_str("  </size>\n");
    for obj in &ann.objects {
        out.push_str("  <object>\n");
        out.push_str(&format!("    <name>{}</name>\n", obj.name));
        out.push_str(&format!("    <difficult>{}</difficult>\n", u8::from(obj.difficult)));
        out.push_str("    <bndbox>\n");
        out.push_str(&format!("      <xmin>{}</xmin>\n", num(obj.x_min)));
        out.push_str(&format!("      <ymin>{}</ymin>\n", num(obj.y_min)));
        out.push_str(&format!("      <xmax>{}</xmax>\n", num(obj.x_max)));
        out.push_str(&format!("      <ymax>{}</ymax>\n", num(obj.y_max)));
        out.push_str("    </bndbox>\n");
        out.push_str("  </object>\n");
    }
    out.push_str("</annotation>\n");
    out
}

pub fn save_annotation(path: &Path, ann: &VocAnnotation) -> Result<()> {
    std::fs::write(path, write_annotation(ann)).map_err(|source| HarnessError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_annotation(path: &Path) -> Result<VocAnnotation> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_annotation(&text, path)
}

/// Pull-parse the annotation. Malformed XML or missing fields produce an
/// error carrying the byte position quick-xml reports.
pub fn parse_annotation(text: &str, path: &Path) -> Result<VocAnnotation> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);

    let malformed = |reader: &Reader<&[u8]>, message: String| HarnessError::MalformedRecord {
        path: path.to_path_buf(),
        line: reader.buffer_position() as usize,
        message,
    };

    let mut stack: Vec<String> = Vec::new();
    let mut filename = None;
    let mut width = None;
    let mut height = None;
    let mut objects = Vec::new();

    // builder state for the <object> under construction
    let mut cur_name: Option<String> = None;
    let mut cur_difficult = false;
    let mut cur_box = [None::<f64>; 4];

    loop {
        match reader.read_event() {
            Ok(Event::Start(e)) => {
                let tag = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if tag == "object" {
                    cur_name = None;
                    cur_difficult = false;
                    cur_box = [None; 4];
                }
                stack.push(tag);
            }
            Ok(Event::End(e)) => {
                let tag = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if stack.pop().as_deref() != Some(tag.as_str()) {
                    return Err(malformed(&reader, format!("mismatched closing tag </{tag}>")));
                }
                if tag == "object" {
                    let name = cur_name
                        .take()
                        .ok_or_else(|| malformed(&reader, "object without <name>".into()))?;
                    let [x0, y0, x1, y1] = cur_box;
                    let (x0, y0, x1, y1) = match (x0, y0, x1, y1) {
                        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
                        _ => return Err(malformed(&reader, "object with incomplete <bndbox>".into())),
                    };
                    objects.push(VocObject {
                        name,
                        difficult: cur_difficult,
                        x_min: x0,
                        y_min: y0,
                        x_max: x1,
                        y_max: y1,
                    });
                }
            }
            Ok(Event::Text(t)) => {
                let value = t
                    .decode()
                    .map_err(|e| malformed(&reader, e.to_string()))?
                    .into_owned();
                let parse_num = |v: &str| -> Result<f64> {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| malformed(&reader, format!("expected a number, got {v:?}")))
                };
                match stack.last().map(String::as_str) {
                    Some("filename") => filename = Some(value),
                    Some("width") => width = Some(parse_num(&value)?),
                    Some("height") => height = Some(parse_num(&value)?),
                    Some("name") => cur_name = Some(value),
                    Some("difficult") => cur_difficult = value.trim() == "1",
                    Some("xmin") => cur_box[0] = Some(parse_num(&value)?),
                    Some("ymin") => cur_box[1] = Some(parse_num(&value)?),
                    Some("xmax") => cur_box[2] = Some(parse_num(&value)?),
                    Some("ymax") => cur_box[3] = Some(parse_num(&value)?),
                    _ => {}
                }
            }
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(e) => return Err(malformed(&reader, e.to_string())),
        }
    }
    if !stack.is_empty() {
        return Err(malformed(&reader, format!("unclosed tag <{}>", stack.last().unwrap())));
    }

    Ok(VocAnnotation {
        filename: filename
            .ok_or_else(|| HarnessError::invalid(path, "annotation without <filename>"))?,
        width: width.ok_or_else(|| HarnessError::invalid(path, "annotation without <width>"))?,
        height: height.ok_or_else(|| HarnessError::invalid(path, "annotation without <height>"))?,
        objects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn fixture() -> VocAnnotation {
        VocAnnotation {
            filename: "scene_000".to_string(),
            width: 128.0,
            height: 96.0,
            objects: vec![
                VocObject {
                    name: "dog".to_string(),
                    difficult: false,
                    x_min: 10.0,
                    y_min: 5.0,
                    x_max: 60.0,
                    y_max: 55.0,
                },
                VocObject {
                    name: "cat".to_string(),
                    difficult: true,
                    x_min: 70.5,
                    y_min: 20.0,
                    x_max: 100.0,
                    y_max: 90.0,
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let ann = fixture();
        let text = write_annotation(&ann);
        let parsed = parse_annotation(&text, &PathBuf::from("fixture.xml")).unwrap();
        assert_eq!(parsed, ann);
        // and a second cycle produces identical bytes
        assert_eq!(write_annotation(&parsed), text);
    }

    #[test]
    fn labels_derived_from_objects() {
        let classes: Vec<String> =
            ["cat", "dog", "bird"].iter().map(|s| s.to_string()).collect();
        let (gt, labels) =
            fixture().to_ground_truth(&classes, &PathBuf::from("fixture.xml")).unwrap();
        assert_eq!(labels, vec![1, 1, -1]);
        assert_eq!(gt.objects.len(), 2);
        assert_eq!(gt.objects[0].class_index, 1);
        assert!(gt.objects[1].difficult);
    }

    #[test]
    fn unknown_class_is_an_error() {
        let classes = vec!["bird".to_string()];
        let err = fixture().to_ground_truth(&classes, &PathBuf::from("f.xml")).unwrap_err();
        assert!(err.to_string().contains("unknown class name"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn malformed_xml_is_rejected_with_position() {
        let text = "<annotation><filename>x</filename><size><width>10</width>";
        let err = parse_annotation(text, &PathBuf::from("bad.xml")).unwrap_err();
        assert!(matches!(err, HarnessError::MalformedRecord { .. }));
        let text2 = "<annotation><size><width>oops</width></size></annotation>";
        assert!(parse_annotation(text2, &PathBuf::from("bad.xml")).is_err());
    }

    #[test]
    fn difficult_flag_preserved() {
        let text = write_annotation(&fixture());
        let parsed = parse_annotation(&text, &PathBuf::from("f.xml")).unwrap();
        assert!(!parsed.objects[0].difficult);
        assert!(parsed.objects[1].difficult);
    }
}
