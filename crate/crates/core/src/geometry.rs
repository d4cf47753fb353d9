//! Circles, polylines and the corridor built from a centerline.

use std::sync::Arc;

use dcil_autodiff::{CustomOp, Graph, NodeId, Result as AdResult};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Circle {
    pub fn new(cx: f64, cy: f64, r: f64) -> Self {
        Self { cx, cy, r }
    }

    /// Signed distance from a point to the circle boundary (negative inside).
    ///
    /// Rendering, collision checks and the obstacle constraint rows all use
    /// this predicate.
    pub fn distance(&self, px: f64, py: f64) -> f64 {
        (px - self.cx).hypot(py - self.cy) - self.r
    }
}

/// Which side of a directed polyline counts as "inside".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
}

/// Closest-point query result on a polyline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub segment: usize,
    /// Segment parameter in `[0, 1]`.
    pub t: f64,
    pub distance: f64,
    /// Unit vector from the closest point towards the query point, or the
    /// segment's left normal when the point lies on the polyline.
    pub normal: [f64; 2],
    /// `+1` if the point is to the left of the closest segment.
    pub left: f64,
}

impl Polyline {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("polyline needs at least two points"));
        }
        for w in points.windows(2) {
            if w[0] == w[1] {
                return Err(Error::invalid(format!(
                    "duplicate consecutive polyline point {:?}",
                    w[0]
                )));
            }
        }
        Ok(Self { points })
    }

    fn segment(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        (self.points[i], self.points[i + 1])
    }

    /// Nearest point over all segments; ties go to the lower segment index.
    pub fn project(&self, px: f64, py: f64) -> Projection {
        let mut best: Option<Projection> = None;
        for i in 0..self.points.len() - 1 {
            let (a, b) = self.segment(i);
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let len2 = ex * ex + ey * ey;
            let t = (((px - a[0]) * ex + (py - a[1]) * ey) / len2).clamp(0.0, 1.0);
            let (qx, qy) = (a[0] + t * ex, a[1] + t * ey);
            let (dx, dy) = (px - qx, py - qy);
            let d = dx.hypot(dy);
            if best.map_or(true, |b| d < b.distance) {
                let cross = ex * (py - a[1]) - ey * (px - a[0]);
                let left = if cross >= 0.0 { 1.0 } else { -1.0 };
                let normal = if d > 0.0 {
                    [dx / d, dy / d]
                } else {
                    let l = len2.sqrt();
                    [-ey / l, ex / l]
                };
                best = Some(Projection {
                    segment: i,
                    t,
                    distance: d,
                    normal,
                    left,
                });
            }
        }
        best.expect("polyline has a segment")
    }

    /// Distance to the polyline, positive on the `inside` side.
    pub fn signed_distance(&self, px: f64, py: f64, inside: Side) -> f64 {
        let p = self.project(px, py);
        p.distance * side_sign(&p, inside)
    }

    /// Gradient of [`Polyline::signed_distance`] with respect to the point.
    pub fn signed_distance_gradient(&self, px: f64, py: f64, inside: Side) -> [f64; 2] {
        let p = self.project(px, py);
        if p.distance > 0.0 {
            let s = side_sign(&p, inside);
            [s * p.normal[0], s * p.normal[1]]
        } else {
            let s = if inside == Side::Left { 1.0 } else { -1.0 };
            [s * p.normal[0], s * p.normal[1]]
        }
    }

    /// The polyline shifted sideways by `offset` (positive to the left),
    /// using miter joins at interior vertices.
    pub fn offset(&self, offset: f64) -> Polyline {
        let n = self.points.len();
        let normals: Vec<[f64; 2]> = (0..n - 1)
            .map(|i| {
                let (a, b) = self.segment(i);
                let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
                let l = ex.hypot(ey);
                [-ey / l, ex / l]
            })
            .collect();
        let points = (0..n)
            .map(|i| {
                let p = self.points[i];
                let m = if i == 0 {
                    normals[0]
                } else if i == n - 1 {
                    normals[n - 2]
                } else {
                    let (a, b) = (normals[i - 1], normals[i]);
                    let (sx, sy) = (a[0] + b[0], a[1] + b[1]);
                    let l = sx.hypot(sy);
                    let m = [sx / l, sy / l];
                    let scale = 1.0 / (m[0] * b[0] + m[1] * b[1]);
                    [m[0] * scale, m[1] * scale]
                };
                [p[0] + offset * m[0], p[1] + offset * m[1]]
            })
            .collect();
        Polyline { points }
    }
}

fn side_sign(p: &Projection, inside: Side) -> f64 {
    match inside {
        Side::Left => p.left,
        Side::Right => -p.left,
    }
}

/// A footprint circle rigidly attached to the robot at `offset` metres along
/// its heading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootprintCircle {
    pub offset: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub left: Polyline,
    pub right: Polyline,
    pub footprint: Vec<FootprintCircle>,
}

impl Corridor {
    /// Offsets `centerline` by `±half_width` to obtain the two boundaries.
    pub fn from_centerline(
        centerline: &Polyline,
        half_width: f64,
        footprint: Vec<FootprintCircle>,
    ) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::invalid("corridor half width must be positive"));
        }
        let center = Polyline::new(centerline.points.clone())?;
        Ok(Self {
            left: center.offset(half_width),
            right: center.offset(-half_width),
            footprint,
        })
    }

    /// Four circles covering a car-sized footprint, measured from the rear
    /// axle.
    pub fn car_footprint() -> Vec<FootprintCircle> {
        [-0.5, 0.75, 2.0, 3.25]
            .into_iter()
            .map(|offset| FootprintCircle { offset, radius: 1.0 })
            .collect()
    }
}

pub fn corridor_from_polyline(centerline: &[[f64; 2]], half_width: f64) -> Result<Corridor> {
    Corridor::from_centerline(&Polyline::new(centerline.to_vec())?, half_width, Vec::new())
}

/// Element-wise signed distance from points `(px[k], py[k])` to a polyline.
#[derive(Debug)]
struct PolylineDistance {
    line: Arc<Polyline>,
    inside: Side,
}

/// One component of the gradient of [`PolylineDistance`]. Its own derivative
/// is taken as zero (the closest segment is locally fixed).
#[derive(Debug)]
struct PolylineNormal {
    line: Arc<Polyline>,
    inside: Side,
    axis: usize,
}

fn same_shape(inputs: &[&[usize]]) -> Vec<usize> {
    inputs[0].to_vec()
}

impl CustomOp for PolylineDistance {
    fn name(&self) -> &'static str {
        "polyline_distance"
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Vec<usize> {
        same_shape(inputs)
    }

    fn forward(&self, inputs: &[&[f64]]) -> Vec<f64> {
        inputs[0]
            .iter()
            .zip(inputs[1])
            .map(|(&x, &y)| self.line.signed_distance(x, y, self.inside))
            .collect()
    }

    fn backward(&self, index: usize, inputs: &[&[f64]], _output: &[f64], grad: &[f64], target: &mut [f64]) {
        for k in 0..grad.len() {
            let n = self.line.signed_distance_gradient(inputs[0][k], inputs[1][k], self.inside);
            target[k] += grad[k] * n[index];
        }
    }

    fn symbolic_backward(
        &self,
        graph: &mut Graph,
        index: usize,
        inputs: &[NodeId],
        _output: NodeId,
        grad: NodeId,
    ) -> AdResult<Option<NodeId>> {
        let n = graph.custom(
            Arc::new(PolylineNormal {
                line: self.line.clone(),
                inside: self.inside,
                axis: index,
            }),
            inputs,
        );
        Ok(Some(graph.mul(grad, n)))
    }

    fn nonsmooth_state(&self, inputs: &[&[f64]], out: &mut Vec<u64>) {
        for (&x, &y) in inputs[0].iter().zip(inputs[1]) {
            let p = self.line.project(x, y);
            let region = if p.t <= 0.0 {
                0
            } else if p.t >= 1.0 {
                2
            } else {
                1
            };
            out.push((p.segment as u64) * 4 + region);
        }
    }
}

impl CustomOp for PolylineNormal {
    fn name(&self) -> &'static str {
        "polyline_normal"
    }

    fn output_shape(&self, inputs: &[&[usize]]) -> Vec<usize> {
        same_shape(inputs)
    }

    fn forward(&self, inputs: &[&[f64]]) -> Vec<f64> {
        inputs[0]
            .iter()
            .zip(inputs[1])
            .map(|(&x, &y)| self.line.signed_distance_gradient(x, y, self.inside)[self.axis])
            .collect()
    }

    fn backward(&self, _: usize, _: &[&[f64]], _: &[f64], _: &[f64], _: &mut [f64]) {}

    fn symbolic_backward(
        &self,
        _graph: &mut Graph,
        _index: usize,
        _inputs: &[NodeId],
        _output: NodeId,
        _grad: NodeId,
    ) -> AdResult<Option<NodeId>> {
        Ok(None)
    }
}

/// Graph node computing the signed distance of each point to `line`.
pub fn polyline_distance_graph(g: &mut Graph, line: &Polyline, inside: Side, x: NodeId, y: NodeId) -> NodeId {
    g.custom(
        Arc::new(PolylineDistance {
            line: Arc::new(line.clone()),
            inside,
        }),
        &[x, y],
    )
}
