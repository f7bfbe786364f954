//! Layout to text-prompt serialization and its inverse.
//!
//! Grammar (phrases joined by `", "`):
//!
//! ```text
//! An image of {view} camera with {class} <L_tl> <L_br>, ...
//! A {weather} {time} image of {view} camera with ...
//! An image with ...                     (no view, no attributes)
//! ```

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{ensure_valid, AnnotatedBox, Attributes, BBox2D, ClassTable, GeometricLayout};
use crate::rng::{substream, Stream};
use crate::token::{decode_token, encode_box, TokenVocabulary};

const BASE_PREFIX: &str = "An image of ";
const VIEWLESS_PREFIX: &str = "An image with ";
const EXTENDED_PREFIX: &str = "A ";
const EXTENDED_INFIX: &str = " image of ";
const VIEW_SUFFIX: &str = " camera with ";
const SEPARATOR: &str = ", ";

/// Null-text replacement probability used during training.
pub const DEFAULT_DROPOUT_P: f64 = 0.1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Template {
    /// Extended when weather and time are both present, base when a view is
    /// present, viewless when the layout has neither view nor attributes.
    #[default]
    Auto,
    /// `An image of {view} camera with {boxes}`.
    Base,
    /// `A {weather} {time} image of {view} camera with {boxes}`.
    Extended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptOptions {
    pub template: Template,
    pub dropout: bool,
    pub dropout_p: f64,
    pub null_text: String,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self { template: Template::Auto, dropout: false, dropout_p: DEFAULT_DROPOUT_P, null_text: String::new() }
    }
}

/// One serialized prompt. Field order is the JSON Lines wire order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub image_id: String,
    pub prompt: String,
    /// Box indices in the order they were serialized.
    pub order: Vec<usize>,
    pub dropped: bool,
    pub seed: u64,
}

fn header(layout: &GeometricLayout, template: Template) -> Result<String> {
    let view = layout.view.as_deref();
    let Attributes { weather, time_of_day } = &layout.attributes;
    let need_view = || view.ok_or_else(|| Error::Argument(format!("layout {} has no camera view", layout.image_id)));
    match template {
        Template::Base => Ok(format!("{BASE_PREFIX}{}{VIEW_SUFFIX}", need_view()?)),
        Template::Extended => match (weather, time_of_day) {
            (Some(w), Some(t)) => Ok(format!("{EXTENDED_PREFIX}{w} {t}{EXTENDED_INFIX}{}{VIEW_SUFFIX}", need_view()?)),
            _ => Err(Error::Argument(format!("layout {} needs both weather and time of day", layout.image_id))),
        },
        Template::Auto => match (weather, time_of_day, view) {
            (Some(_), Some(_), _) => header(layout, Template::Extended),
            (None, None, None) => Ok(VIEWLESS_PREFIX.to_string()),
            (None, None, Some(_)) => header(layout, Template::Base),
            _ => Err(Error::Argument(format!(
                "layout {} has a partial weather/time pair; both or neither are required",
                layout.image_id
            ))),
        },
    }
}

/// Serializes `layout` with a seeded box order.
///
/// The order depends only on `(seed, image_id)` and the dropout decision on a
/// separate substream, so toggling dropout never changes the order.
pub fn build_prompt(
    layout: &GeometricLayout,
    vocab: &TokenVocabulary,
    seed: u64,
    options: &PromptOptions,
) -> Result<PromptRecord> {
    ensure_valid(layout)?;
    let grid = vocab.grid();
    if (grid.width, grid.height) != (layout.width, layout.height) {
        return Err(Error::Argument(format!(
            "vocabulary grid is for {}x{} but layout {} is {}x{}",
            grid.width, grid.height, layout.image_id, layout.width, layout.height
        )));
    }

    let mut order: Vec<usize> = (0..layout.boxes.len()).collect();
    order.shuffle(&mut substream(seed, &layout.image_id, Stream::BoxOrder));

    let mut prompt = header(layout, options.template)?;
    prompt.reserve(order.len() * 24);
    for (k, &i) in order.iter().enumerate() {
        if k > 0 {
            prompt.push_str(SEPARATOR);
        }
        use std::fmt::Write;
        write!(prompt, "{}", encode_box(&layout.boxes[i], &grid)?).unwrap();
    }

    let dropped = options.dropout && substream(seed, &layout.image_id, Stream::Dropout).gen::<f64>() < options.dropout_p;
    if dropped {
        prompt = options.null_text.clone();
    }
    Ok(PromptRecord { image_id: layout.image_id.clone(), prompt, order, dropped, seed })
}

/// Recovers a layout from a prompt; boxes come back at bin-center resolution
/// and in prompt order.
pub fn parse_prompt(text: &str, vocab: &TokenVocabulary, classes: &ClassTable) -> Result<GeometricLayout> {
    let grid = vocab.grid();
    let mut layout = GeometricLayout::new("", grid.width, grid.height);
    let header_err = |m: &str| Error::Prompt { phrase: 0, message: m.to_string() };

    let boxes = if let Some(rest) = text.strip_prefix(VIEWLESS_PREFIX) {
        rest
    } else if let Some(rest) = text.strip_prefix(BASE_PREFIX) {
        let (view, boxes) = rest.split_once(VIEW_SUFFIX).ok_or_else(|| header_err("missing \" camera with \""))?;
        layout.view = Some(view.to_string());
        boxes
    } else if let Some(rest) = text.strip_prefix(EXTENDED_PREFIX) {
        let (attrs, rest) = rest.split_once(EXTENDED_INFIX).ok_or_else(|| header_err("missing \" image of \""))?;
        let (weather, time) = attrs.rsplit_once(' ').ok_or_else(|| header_err("expected \"{weather} {time}\""))?;
        if weather.is_empty() || time.is_empty() {
            return Err(header_err("empty weather or time"));
        }
        let (view, boxes) = rest.split_once(VIEW_SUFFIX).ok_or_else(|| header_err("missing \" camera with \""))?;
        layout.view = Some(view.to_string());
        layout.attributes = Attributes { weather: Some(weather.into()), time_of_day: Some(time.into()) };
        boxes
    } else {
        return Err(header_err("unrecognized template"));
    };
    if layout.view.as_deref() == Some("") {
        return Err(header_err("empty view"));
    }

    if boxes.is_empty() {
        return Ok(layout);
    }
    for (i, phrase) in boxes.split(SEPARATOR).enumerate() {
        let err = |m: String| Error::Prompt { phrase: i, message: m };
        let mut parts = phrase.rsplitn(3, ' ');
        let (br, tl, name) = match (parts.next(), parts.next(), parts.next()) {
            (Some(br), Some(tl), Some(name)) => (br, tl, name),
            _ => return Err(err(format!("expected \"class <L_i> <L_j>\", got {phrase:?}"))),
        };
        let class_id = classes.id(name).ok_or_else(|| err(format!("unknown class {name:?}")))?;
        let tl = vocab.parse(tl).map_err(|e| err(e.to_string()))?;
        let br = vocab.parse(br).map_err(|e| err(e.to_string()))?;
        let (x1, y1) = decode_token(tl, &grid)?;
        let (x2, y2) = decode_token(br, &grid)?;
        layout.boxes.push(AnnotatedBox::new(class_id, name, BBox2D::new(x1, y1, x2, y2)));
    }
    Ok(layout)
}

/// One JSON line per record, `\n` terminated.
pub fn write_jsonl(records: &[PromptRecord], out: &mut Vec<u8>) {
    for r in records {
        serde_json::to_writer(&mut *out, r).expect("records serialize");
        out.push(b'\n');
    }
}

pub fn parse_jsonl(bytes: &[u8]) -> Result<Vec<PromptRecord>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Line { line: i + 1, message: e.to_string() }))
        .collect()
}
