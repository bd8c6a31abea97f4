//! Detector and depth-estimator outputs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub label: String,
    pub score: f64,
}

impl BoundingBox {
    /// Checks normalized coordinates and score; the error names the offending field.
    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("field `{name}` = {v} is outside [0, 1]"))
            }
        };
        unit("x_min", self.x_min)?;
        unit("y_min", self.y_min)?;
        unit("x_max", self.x_max)?;
        unit("y_max", self.y_max)?;
        unit("score", self.score)?;
        if self.x_min >= self.x_max {
            return Err("field `x_max` must exceed `x_min`".into());
        }
        if self.y_min >= self.y_max {
            return Err("field `y_max` must exceed `y_min`".into());
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }
}

/// Relative distance per pixel, row-major. Larger values are farther away.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, String> {
        if width == 0 || height == 0 {
            return Err("depth map must have positive width and height".into());
        }
        if values.len() != width * height {
            return Err(format!(
                "depth map declares {width}x{height} but holds {} values",
                values.len()
            ));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(format!("depth value {bad} is not a nonnegative real"));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Mean depth over the pixels covered by a normalized box (at least one pixel).
    pub fn mean_in(&self, b: &BoundingBox) -> f64 {
        let span = |lo: f64, hi: f64, n: usize| {
            let start = ((lo * n as f64).floor() as usize).min(n - 1);
            let end = ((hi * n as f64).ceil() as usize).clamp(start + 1, n);
            (start, end)
        };
        let (x0, x1) = span(b.x_min, b.x_max, self.width);
        let (y0, y1) = span(b.y_min, b.y_max, self.height);
        let mut sum = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                sum += self.at(x, y);
            }
        }
        sum / ((x1 - x0) * (y1 - y0)) as f64
    }

    /// Text form: a `width height` line followed by `height` rows of `width` values.
    pub fn parse_text(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty depth file")?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format!("bad dimension `{t}`")))
            .collect::<Result<_, _>>()?;
        let [width, height] = dims[..] else {
            return Err("header must be `width height`".into());
        };
        let mut values = Vec::with_capacity(width * height);
        for (row, line) in lines.enumerate() {
            let before = values.len();
            for tok in line.split_whitespace() {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|_| format!("row {row}: bad value `{tok}`"))?,
                );
            }
            if values.len() - before != width {
                return Err(format!("row {row} has {} values, expected {width}", values.len() - before));
            }
        }
        Self::new(width, height, values)
    }
}
