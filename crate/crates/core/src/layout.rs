//! Shared domain types: boxes, layouts, discretization grids and location tokens.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, origin at the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox2D {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Builds a box from COCO-style `[x, y, width, height]`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Intersects with `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> Self {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        Self::new(cx(self.x1), cy(self.y1), cx(self.x2), cy(self.y2))
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedBox {
    pub class_id: u64,
    /// Textual explanation of the class, used verbatim in prompts.
    pub class_name: String,
    pub bbox: BBox2D,
}

impl AnnotatedBox {
    pub fn new(class_id: u64, class_name: impl Into<String>, bbox: BBox2D) -> Self {
        Self { class_id, class_name: class_name.into(), bbox }
    }
}

/// Optional weather / time-of-day conditions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Attributes {
    pub weather: Option<String>,
    pub time_of_day: Option<String>,
}

impl Attributes {
    pub fn is_empty(&self) -> bool {
        self.weather.is_none() && self.time_of_day.is_none()
    }
}

/// One image's layout: size, optional camera view and attributes, and the
/// class-labelled boxes in annotation order.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricLayout {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub view: Option<String>,
    pub attributes: Attributes,
    pub boxes: Vec<AnnotatedBox>,
}

impl GeometricLayout {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            image_id: image_id.into(),
            width,
            height,
            view: None,
            attributes: Attributes::default(),
            boxes: Vec::new(),
        }
    }

    pub fn with_view(mut self, view: impl Into<String>) -> Self {
        self.view = Some(view.into());
        self
    }

    pub fn with_box(mut self, b: AnnotatedBox) -> Self {
        self.boxes.push(b);
        self
    }

    pub fn image_area(&self) -> f64 {
        self.width as f64 * self.height as f64
    }
}

/// Category id to textual explanation, with the reverse lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassTable {
    by_id: BTreeMap<u64, String>,
    by_name: HashMap<String, u64>,
}

impl ClassTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `id -> name`. Fails when either side is already bound differently.
    pub fn insert(&mut self, id: u64, name: impl Into<String>) -> Result<()> {
        let name = name.into();
        match (self.by_id.get(&id), self.by_name.get(&name)) {
            (Some(n), _) if *n != name => {
                Err(Error::Argument(format!("class id {id} already named {n:?}, not {name:?}")))
            }
            (_, Some(&i)) if i != id => {
                Err(Error::Argument(format!("class name {name:?} already has id {i}, not {id}")))
            }
            _ => {
                self.by_name.insert(name.clone(), id);
                self.by_id.insert(id, name);
                Ok(())
            }
        }
    }

    pub fn name(&self, id: u64) -> Option<&str> {
        self.by_id.get(&id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<u64> {
        self.by_name.get(name).copied()
    }

    pub fn next_id(&self) -> u64 {
        self.by_id.keys().next_back().map_or(1, |k| k + 1)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &str)> {
        self.by_id.iter().map(|(k, v)| (*k, v.as_str()))
    }
}

/// A broken invariant: which field, and which rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self { field: field.into(), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Separators the prompt grammar relies on. Labels containing them could not
/// be parsed back.
const PHRASE_SEPARATOR: &str = ", ";

/// Checks every layout invariant. An empty result means the layout is valid.
///
/// Besides geometry, labels are checked against the prompt grammar so that any
/// accepted layout can be serialized and parsed back.
pub fn validate_layout(layout: &GeometricLayout) -> Vec<Violation> {
    let mut out = Vec::new();
    if layout.width == 0 {
        out.push(Violation::new("width", "W > 0 broken"));
    }
    if layout.height == 0 {
        out.push(Violation::new("height", "H > 0 broken"));
    }
    let (w, h) = (layout.width as f64, layout.height as f64);
    for (i, b) in layout.boxes.iter().enumerate() {
        let field = |name: &str| format!("boxes[{i}].{name}");
        let BBox2D { x1, y1, x2, y2 } = b.bbox;
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            out.push(Violation::new(field("box"), "coordinates finite broken"));
            continue;
        }
        if x1 < 0.0 {
            out.push(Violation::new(field("x1"), "0 ≤ x1 broken"));
        }
        if y1 < 0.0 {
            out.push(Violation::new(field("y1"), "0 ≤ y1 broken"));
        }
        if x1 > x2 {
            out.push(Violation::new(field("x1"), "x1 ≤ x2 broken"));
        }
        if y1 > y2 {
            out.push(Violation::new(field("y1"), "y1 ≤ y2 broken"));
        }
        if x2 > w {
            out.push(Violation::new(field("x2"), "x2 ≤ W broken"));
        }
        if y2 > h {
            out.push(Violation::new(field("y2"), "y2 ≤ H broken"));
        }
        let name = &b.class_name;
        if name.trim().is_empty() {
            out.push(Violation::new(field("class_name"), "class name nonempty broken"));
        } else if name.contains(PHRASE_SEPARATOR) || name.contains("<L_") || name != name.trim() {
            out.push(Violation::new(field("class_name"), "class name must not contain \", \" or \"<L_\" or edge whitespace"));
        }
    }
    if let Some(view) = &layout.view {
        if view.trim().is_empty() || view.contains(" camera with ") {
            out.push(Violation::new("view", "view label nonempty and free of \" camera with \" broken"));
        }
    }
    if let Some(weather) = &layout.attributes.weather {
        if weather.trim().is_empty() || weather != weather.trim() || weather.contains(" image of ") {
            out.push(Violation::new("weather", "weather label nonempty and trimmed broken"));
        }
    }
    if let Some(time) = &layout.attributes.time_of_day {
        if time.is_empty() || time.contains(char::is_whitespace) {
            out.push(Violation::new("timeofday", "time-of-day label is a single word broken"));
        }
    }
    out
}

/// Like [`validate_layout`], additionally requiring the view to be one of `views`.
pub fn validate_layout_with_views(layout: &GeometricLayout, views: &[String]) -> Vec<Violation> {
    let mut out = validate_layout(layout);
    if let Some(view) = &layout.view {
        if !views.iter().any(|v| v == view) {
            out.push(Violation::new("view", format!("view \"{view}\" not in configured view set")));
        }
    }
    out
}

/// Returns the layout unchanged when valid, the violation list otherwise.
pub fn ensure_valid(layout: &GeometricLayout) -> Result<()> {
    let v = validate_layout(layout);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(v))
    }
}

/// The six NuImages camera views.
pub fn default_views() -> Vec<String> {
    ["front", "front left", "front right", "back", "back left", "back right"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Discretization grid of `w_bins x h_bins` location bins over a `width x height` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    pub w_bins: u32,
    pub h_bins: u32,
    pub width: u32,
    pub height: u32,
}

impl GridSpec {
    /// 400 x 228 bins over 800 x 456 pixels, i.e. 2 x 2 pixels per bin.
    pub const DEFAULT: GridSpec = GridSpec { w_bins: 400, h_bins: 228, width: 800, height: 456 };

    pub fn new(w_bins: u32, h_bins: u32, width: u32, height: u32) -> Result<Self> {
        if w_bins == 0 || h_bins == 0 {
            return Err(Error::Argument(format!("grid {w_bins}x{h_bins} must have at least one bin per axis")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!("image size {width}x{height} must be positive")));
        }
        Ok(Self { w_bins, h_bins, width, height })
    }

    /// Same bin counts over a different image size.
    pub fn for_image(&self, width: u32, height: u32) -> Result<Self> {
        Self::new(self.w_bins, self.h_bins, width, height)
    }

    pub fn token_count(&self) -> usize {
        self.w_bins as usize * self.h_bins as usize
    }

    pub fn bin_width(&self) -> f64 {
        self.width as f64 / self.w_bins as f64
    }

    pub fn bin_height(&self) -> f64 {
        self.height as f64 / self.h_bins as f64
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Zero-based index into the location-token vocabulary, rendered as `<L_{index}>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocationToken(pub usize);

impl LocationToken {
    pub fn index(self) -> usize {
        self.0
    }

    /// Parses the lexical form. Range checks are the vocabulary's job.
    pub fn parse(text: &str) -> Option<Self> {
        let digits = text.strip_prefix("<L_")?.strip_suffix('>')?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        // Reject leading zeros so every index has exactly one spelling.
        if digits.len() > 1 && digits.starts_with('0') {
            return None;
        }
        digits.parse().ok().map(LocationToken)
    }
}

impl fmt::Display for LocationToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<L_{}>", self.0)
    }
}
