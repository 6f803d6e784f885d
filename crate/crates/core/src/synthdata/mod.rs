//! Procedural shape scenes with templated captions and an exact pixel-rule
//! oracle.

mod caption;
mod export;
mod oracle;
mod render;
mod splits;

pub use caption::{caption, CaptionTokens, Vocab, CAPTION_LEN, NUM_TEMPLATES, PAD, TEMPLATES};
pub use export::{read_dataset_dir, read_ppm, write_dataset_dir, write_ppm};
pub use oracle::oracle;
pub use render::{render, salt_and_pepper, Image, BACKGROUND};
pub use splits::{build_splits, is_held_out, DataConfig, Sample, Splits, HELD_OUT};

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Size {
    Small,
    Large,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Position {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Cross];
    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
        }
    }
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];
    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }
}

impl Size {
    pub const ALL: [Size; 2] = [Size::Small, Size::Large];
    pub fn word(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Large => "large",
        }
    }
}

impl Position {
    pub const ALL: [Position; 5] = [
        Position::TopLeft,
        Position::TopRight,
        Position::BottomLeft,
        Position::BottomRight,
        Position::Center,
    ];
    pub fn word(self) -> &'static str {
        match self {
            Position::TopLeft => "top-left",
            Position::TopRight => "top-right",
            Position::BottomLeft => "bottom-left",
            Position::BottomRight => "bottom-right",
            Position::Center => "center",
        }
    }
}

/// Ground-truth attributes of one rendered scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SceneSpec {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
    pub position: Position,
}

pub const NUM_SPECS: usize = 160;

impl SceneSpec {
    pub fn new(shape: Shape, color: Color, size: Size, position: Position) -> Self {
        Self {
            shape,
            color,
            size,
            position,
        }
    }

    /// Dense index in `0..160`.
    pub fn id(&self) -> usize {
        (((self.shape as usize) * 4 + self.color as usize) * 2 + self.size as usize) * 5
            + self.position as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        if id >= NUM_SPECS {
            return None;
        }
        Some(Self {
            position: Position::ALL[id % 5],
            size: Size::ALL[(id / 5) % 2],
            color: Color::ALL[(id / 10) % 4],
            shape: Shape::ALL[id / 40],
        })
    }

    pub fn all() -> impl Iterator<Item = SceneSpec> {
        (0..NUM_SPECS).map(|i| SceneSpec::from_id(i).expect("in range"))
    }
}

impl fmt::Display for SceneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.size.word(),
            self.color.word(),
            self.shape.word(),
            self.position.word()
        )
    }
}
