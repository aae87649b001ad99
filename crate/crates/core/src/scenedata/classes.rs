/// Background vocabulary, in the order used for truncated background spaces.
pub const BACKGROUND_CLASSES: [&str; 25] = [
    "ground", "land", "grass", "tree", "building", "wall", "sky", "lake", "water", "river", "sea",
    "railway", "railroad", "keyboard", "helmet", "cloud", "house", "mountain", "ocean", "road",
    "rock", "street", "valley", "bridge", "sign",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
    Ring,
}

pub const SHAPES: [Shape; 5] = [
    Shape::Circle,
    Shape::Square,
    Shape::Triangle,
    Shape::Cross,
    Shape::Ring,
];

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
            Shape::Ring => "ring",
        }
    }
}

pub const COLORS: [(&str, [f64; 3]); 4] = [
    ("red", [215.0, 45.0, 40.0]),
    ("blue", [40.0, 75.0, 215.0]),
    ("yellow", [230.0, 205.0, 35.0]),
    ("purple", [150.0, 50.0, 185.0]),
];

/// A foreground class: one shape in one color, named `<color>_<shape>`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForegroundClass {
    pub name: String,
    pub shape: Shape,
    pub color: [f64; 3],
}

/// All 20 foreground classes, color-major: the first `k` entries of this list
/// form the `k`-class datasets.
pub fn foreground_catalog() -> Vec<ForegroundClass> {
    COLORS
        .iter()
        .flat_map(|(cname, rgb)| {
            SHAPES.iter().map(move |s| ForegroundClass {
                name: format!("{cname}_{}", s.name()),
                shape: *s,
                color: *rgb,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Texture {
    Speckle,
    Blotches,
    Bricks,
    GradientVertical,
    GradientDiagonal,
    Radial,
    Waves,
    StripesHorizontal,
    StripesVertical,
    StripesDiagonal,
    Checker,
}

/// Texture family and two endpoint colors per background class.
pub(crate) fn background_style(index: usize) -> (Texture, [f64; 3], [f64; 3]) {
    use Texture::*;
    match BACKGROUND_CLASSES[index] {
        "ground" => (Speckle, [120., 85., 50.], [70., 50., 30.]),
        "land" => (Blotches, [190., 165., 110.], [120., 125., 60.]),
        "grass" => (Speckle, [70., 160., 60.], [30., 90., 30.]),
        "tree" => (Blotches, [35., 95., 40.], [100., 70., 40.]),
        "building" => (Bricks, [150., 150., 155.], [80., 80., 85.]),
        "wall" => (Bricks, [220., 205., 175.], [170., 150., 120.]),
        "sky" => (GradientVertical, [110., 170., 235.], [235., 240., 250.]),
        "lake" => (Waves, [50., 110., 170.], [80., 160., 170.]),
        "water" => (Waves, [40., 90., 200.], [140., 190., 235.]),
        "river" => (StripesDiagonal, [60., 110., 190.], [130., 100., 70.]),
        "sea" => (GradientVertical, [20., 40., 110.], [50., 110., 200.]),
        "railway" => (StripesHorizontal, [110., 110., 110.], [100., 70., 40.]),
        "railroad" => (StripesVertical, [100., 70., 40.], [140., 140., 140.]),
        "keyboard" => (Checker, [30., 30., 30.], [150., 150., 150.]),
        "helmet" => (Radial, [240., 200., 40.], [220., 120., 30.]),
        "cloud" => (Blotches, [245., 245., 245.], [190., 195., 205.]),
        "house" => (Bricks, [160., 60., 45.], [230., 225., 215.]),
        "mountain" => (GradientDiagonal, [110., 105., 100.], [240., 240., 245.]),
        "ocean" => (Waves, [15., 45., 100.], [30., 130., 140.]),
        "road" => (Speckle, [60., 60., 62.], [25., 25., 25.]),
        "rock" => (Blotches, [130., 130., 125.], [75., 75., 70.]),
        "street" => (StripesHorizontal, [95., 95., 95.], [215., 190., 40.]),
        "valley" => (GradientDiagonal, [80., 150., 60.], [150., 110., 60.]),
        "bridge" => (Checker, [120., 85., 55.], [170., 170., 170.]),
        "sign" => (StripesDiagonal, [210., 40., 40.], [245., 245., 245.]),
        other => unreachable!("no style for background {other}"),
    }
}
