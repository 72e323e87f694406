use std::fmt::Write as _;

use serde::Serialize;

use crate::autodiff::{evaluate_logits, forward};
use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::linearized::{TaylorModel, TaylorOrder};
use crate::loss::{argmax_rows, LossKind};
use crate::model::NetworkSpec;
use crate::params::{dot, ParamVector};

use super::distance::function_distance_from_predictions;

pub const PLANE_CSV_HEADER: &str = "u,v,test_error,fn_dist,taylor_error";

/// Coordinates of a weight vector in the plane through the three anchors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Distance from the point to the plane.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlaneCell {
    pub u: f64,
    pub v: f64,
    pub test_error: f64,
    /// Function distance to the first child.
    pub fn_dist: f64,
    pub taylor_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlaneScan {
    pub coords: Vec<f64>,
    pub cells: Vec<PlaneCell>,
    pub projections: Vec<Projection>,
}

impl PlaneScan {
    pub fn cell(&self, u: f64, v: f64) -> Option<&PlaneCell> {
        self.cells.iter().find(|c| c.u == u && c.v == v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(PLANE_CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let t = c.taylor_error.map(|t| t.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", c.u, c.v, c.test_error, c.fn_dist, t);
        }
        out
    }
}

/// `n` coordinates spanning `[-0.5, 1.5]`.
pub fn plane_coords(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid("plane grid needs at least two points per axis"));
    }
    Ok((0..n).map(|i| -0.5 + 2.0 * i as f64 / (n - 1) as f64).collect())
}

/// `(1 - u - v) p + u a + v b`, which equals `p + u (a - p) + v (b - p)`.
pub fn plane_point(p: &[f64], a: &[f64], b: &[f64], u: f64, v: f64) -> Vec<f64> {
    let w = 1.0 - u - v;
    p.iter().zip(a).zip(b).map(|((p, a), b)| w * p + u * a + v * b).collect()
}

/// Plane through three anchors with least-squares projection.
pub struct Plane<'a> {
    p: &'a [f64],
    e1: Vec<f64>,
    e2: Vec<f64>,
    g: [f64; 3],
    det: f64,
}

impl<'a> Plane<'a> {
    pub fn new(p: &'a [f64], a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != p.len() || b.len() != p.len() {
            return Err(Error::shape("anchors differ in length"));
        }
        let e1: Vec<f64> = a.iter().zip(p).map(|(x, y)| x - y).collect();
        let e2: Vec<f64> = b.iter().zip(p).map(|(x, y)| x - y).collect();
        let g = [dot(&e1, &e1), dot(&e1, &e2), dot(&e2, &e2)];
        let det = g[0] * g[2] - g[1] * g[1];
        if !(det > 1e-12 * g[0] * g[2]) || g[0] == 0.0 || g[2] == 0.0 {
            return Err(Error::DegeneratePlane);
        }
        Ok(Plane { p, e1, e2, g, det })
    }

    pub fn project(&self, w: &[f64]) -> Result<Projection> {
        if w.len() != self.p.len() {
            return Err(Error::shape("point differs in length from anchors"));
        }
        let r: Vec<f64> = w.iter().zip(self.p).map(|(x, y)| x - y).collect();
        let (b1, b2) = (dot(&self.e1, &r), dot(&self.e2, &r));
        let u = (self.g[2] * b1 - self.g[1] * b2) / self.det;
        let v = (self.g[0] * b2 - self.g[1] * b1) / self.det;
        let residual = r
            .iter()
            .zip(&self.e1)
            .zip(&self.e2)
            .map(|((r, a), b)| (r - u * a - v * b).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(Projection { u, v, residual })
    }
}

pub struct PlaneRequest<'a> {
    pub parent: &'a ParamVector,
    pub child_a: &'a ParamVector,
    pub child_b: &'a ParamVector,
    pub grid: usize,
    /// Base point of an order-1 expansion evaluated on the same grid.
    pub tangent_anchor: Option<&'a ParamVector>,
    /// Weight vectors projected onto the plane.
    pub trajectory: &'a [Vec<f64>],
}

pub fn plane_scan(spec: &NetworkSpec, req: &PlaneRequest<'_>, test: &LabeledBatch) -> Result<PlaneScan> {
    let (p, a, b) = (req.parent.values(), req.child_a.values(), req.child_b.values());
    let plane = Plane::new(p, a, b)?;
    let coords = plane_coords(req.grid)?;
    let k = spec.classes;
    let reference = argmax_rows(forward(spec, req.child_a, &test.inputs)?.data(), k);
    let tangent = req
        .tangent_anchor
        .map(|t| TaylorModel::new(spec, t.clone(), TaylorOrder::First))
        .transpose()?;
    let mut cells = Vec::with_capacity(coords.len() * coords.len());
    for &u in &coords {
        for &v in &coords {
            let w = plane_point(p, a, b, u, v);
            let pw = req.parent.with_values(w.clone())?;
            let logits = forward(spec, &pw, &test.inputs)?;
            let ev = evaluate_logits(logits.data(), test, LossKind::CrossEntropy);
            let fn_dist = match function_distance_from_predictions(&ev.predictions, &reference, &test.labels, k) {
                Ok(x) => x,
                Err(Error::DegenerateNormalizer) => f64::NAN,
                Err(e) => return Err(e),
            };
            let taylor_error = match &tangent {
                Some(tm) => {
                    let delta: Vec<f64> = w.iter().zip(tm.base.values()).map(|(x, y)| x - y).collect();
                    let tm = tm.clone().with_delta(delta)?;
                    let lg = tm.logits(&test.inputs)?;
                    Some(evaluate_logits(lg.data(), test, LossKind::CrossEntropy).error)
                }
                None => None,
            };
            cells.push(PlaneCell { u, v, test_error: ev.error, fn_dist, taylor_error });
        }
    }
    let projections = req.trajectory.iter().map(|w| plane.project(w)).collect::<Result<Vec<_>>>()?;
    Ok(PlaneScan { coords, cells, projections })
}
