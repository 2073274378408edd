use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleStatus {
    UpToScale,
    Metric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointSource {
    StructuredLight,
    Motion,
}

impl PointSource {
    fn code(self) -> u8 {
        match self {
            PointSource::StructuredLight => 0,
            PointSource::Motion => 1,
        }
    }
}

/// 3D points with their origin, a per-point label (spot id or
/// correspondence index) and optional overlay attributes. `NaN` values mark
/// points without overlay data.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    sources: Vec<PointSource>,
    labels: Vec<u64>,
    scale: ScaleStatus,
    values: Option<Vec<f64>>,
    colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(scale: ScaleStatus) -> Self {
        Self {
            points: Vec::new(),
            sources: Vec::new(),
            labels: Vec::new(),
            scale,
            values: None,
            colors: None,
        }
    }

    pub fn push(&mut self, p: Vector3<f64>, source: PointSource, label: u64) -> Result<(), GeometryError> {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(GeometryError::Invalid(format!("non-finite point for label {label}")));
        }
        self.points.push(p);
        self.sources.push(source);
        self.labels.push(label);
        if let Some(v) = &mut self.values {
            v.push(f64::NAN);
        }
        if let Some(c) = &mut self.colors {
            c.push([0, 0, 0]);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn sources(&self) -> &[PointSource] {
        &self.sources
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn scale_status(&self) -> ScaleStatus {
        self.scale
    }

    pub fn values(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn position_of(&self, label: u64) -> Option<Vector3<f64>> {
        self.labels.iter().position(|&l| l == label).map(|i| self.points[i])
    }

    pub fn set_values(&mut self, values: Vec<f64>) -> Result<(), GeometryError> {
        if values.len() != self.len() {
            return Err(GeometryError::Invalid(format!("{} values for {} points", values.len(), self.len())));
        }
        self.values = Some(values);
        Ok(())
    }

    pub fn set_colors(&mut self, colors: Vec<[u8; 3]>) -> Result<(), GeometryError> {
        if colors.len() != self.len() {
            return Err(GeometryError::Invalid(format!("{} colors for {} points", colors.len(), self.len())));
        }
        self.colors = Some(colors);
        Ok(())
    }

    /// Every point multiplied by `s`; the result is metric.
    pub(crate) fn scaled_to_metric(&self, s: f64) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p * s).collect(),
            scale: ScaleStatus::Metric,
            ..self.clone()
        }
    }

    /// Appends all points of `other`; both clouds must share a scale status.
    pub fn extend(&mut self, other: &PointCloud) -> Result<(), GeometryError> {
        if other.scale != self.scale {
            return Err(GeometryError::Invalid("cannot merge metric and up-to-scale clouds".into()));
        }
        for i in 0..other.len() {
            self.push(other.points[i], other.sources[i], other.labels[i])?;
            let last = self.len() - 1;
            if let (Some(v), Some(src)) = (&mut self.values, &other.values) {
                v[last] = src[i];
            }
            if let (Some(c), Some(src)) = (&mut self.colors, &other.colors) {
                c[last] = src[i];
            }
        }
        Ok(())
    }

    pub fn to_ply_string(&self) -> String {
        let mut out = String::from("ply\nformat ascii 1.0\n");
        let scale = match self.scale {
            ScaleStatus::Metric => "metric",
            ScaleStatus::UpToScale => "up_to_scale",
        };
        let _ = writeln!(out, "comment scale {scale}");
        let _ = writeln!(out, "element vertex {}", self.len());
        for p in ["x", "y", "z"] {
            let _ = writeln!(out, "property double {p}");
        }
        out.push_str("property uchar source\nproperty uint label\n");
        if self.values.is_some() {
            out.push_str("property double value\n");
        }
        if self.colors.is_some() {
            out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
        }
        out.push_str("end_header\n");
        for i in 0..self.len() {
            let p = self.points[i];
            let _ = write!(out, "{} {} {} {} {}", p.x, p.y, p.z, self.sources[i].code(), self.labels[i]);
            if let Some(v) = &self.values {
                let _ = write!(out, " {}", v[i]);
            }
            if let Some(c) = &self.colors {
                let _ = write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2]);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_ply_str(text: &str) -> Result<Self, GeometryError> {
        let bad = |line: usize, msg: &str| GeometryError::Ply { line, msg: msg.to_string() };
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l.trim()) != Some("ply") {
            return Err(bad(1, "missing ply magic"));
        }
        let mut scale = ScaleStatus::Metric;
        let mut count = None;
        let mut props = Vec::new();
        loop {
            let (i, line) = lines.next().ok_or_else(|| bad(0, "header never ends"))?;
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["format", "ascii", _] => {}
                ["format", ..] => return Err(bad(i + 1, "only ascii PLY is supported")),
                ["comment", "scale", "up_to_scale"] => scale = ScaleStatus::UpToScale,
                ["comment", ..] => {}
                ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad(i + 1, "bad vertex count"))?),
                ["element", ..] => return Err(bad(i + 1, "only vertex elements are supported")),
                ["property", _, name] => props.push(name.to_string()),
                ["end_header"] => break,
                _ => return Err(bad(i + 1, "unrecognized header line")),
            }
        }
        let count = count.ok_or_else(|| bad(0, "no vertex element"))?;
        let col = |name: &str| props.iter().position(|p| p == name);
        let (Some(x), Some(y), Some(z)) = (col("x"), col("y"), col("z")) else {
            return Err(bad(0, "vertices need x, y and z"));
        };
        let value = col("value");
        let rgb = match (col("red"), col("green"), col("blue")) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
        let mut cloud = PointCloud::new(scale);
        let mut values = Vec::new();
        let mut colors = Vec::new();
        for _ in 0..count {
            let (i, line) = lines.next().ok_or_else(|| bad(0, "fewer vertices than declared"))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != props.len() {
                return Err(bad(i + 1, "wrong number of vertex fields"));
            }
            let num = |k: usize| fields[k].parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
            let source = match col("source").map(num).transpose()? {
                Some(v) if v == 0.0 => PointSource::StructuredLight,
                _ => PointSource::Motion,
            };
            let label = col("label").map(num).transpose()?.unwrap_or(0.0) as u64;
            cloud.push(Vector3::new(num(x)?, num(y)?, num(z)?), source, label)?;
            if let Some(k) = value {
                values.push(num(k)?);
            }
            if let Some(ks) = rgb {
                colors.push(ks.map(|k| fields[k].parse::<u8>().unwrap_or(0)));
            }
        }
        if value.is_some() {
            cloud.set_values(values)?;
        }
        if rgb.is_some() {
            cloud.set_colors(colors)?;
        }
        Ok(cloud)
    }

    pub fn save_ply(&self, path: impl AsRef<Path>) -> Result<(), GeometryError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_ply_string()).map_err(|e| GeometryError::io(path, e))
    }

    pub fn load_ply(path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GeometryError::io(path, e))?;
        Self::from_ply_str(&text)
    }
}
