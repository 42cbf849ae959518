//! Per-mask fold geometry: extremal vertices, glottal midline, quadratic
//! midline correction and per-level left/right glottal angles, plus the
//! multi-channel angle-deviation series across a mask sequence.
//!
//! The midline from the vertex center C toward the bottom vertex D is clipped
//! to the mask, N-1 equidistant levels are probed orthogonally to find the
//! left/right boundary points, and a quadratic fit to those points (in the
//! frame rotated so the midline is vertical) refines the bottom point to D'.
//! Angles are measured at D' between each boundary point and C.
//!
//! All boundary intersections use discrete ray marching at `ray_step`
//! resolution: the last in-mask sample before the first exit. Degenerate
//! frames are data, not failures: they carry a reason and hold the last
//! valid channel values in the assembled series.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::MaskSequence;
use crate::model::{AngleSet, GlottisMask, Point2, SeriesChannel};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mask area {area} below minimum {min_area}")]
    MaskTooSmall { area: usize, min_area: usize },
    #[error("midline degenerate: |C-D| = {dist} px")]
    DegenerateMidline { dist: f64 },
    #[error("coincident points: angle vertex touches a ray endpoint")]
    CoincidentPoints,
    #[error("all {0} frames degenerate")]
    AllFramesDegenerate(usize),
}

fn default_n_levels() -> usize {
    10
}
fn default_ray_step() -> f64 {
    0.5
}
fn default_min_area() -> usize {
    20
}
fn default_fit_eps() -> f64 {
    1e-6
}

fn default_fit_probe_levels() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    /// Number of equidistant divisions N; levels are k = 1..N-1.
    #[serde(default = "default_n_levels")]
    pub n_levels: usize,
    /// Ray-marching step in pixels.
    #[serde(default = "default_ray_step")]
    pub ray_step: f64,
    /// Minimum mask area in pixels.
    #[serde(default = "default_min_area")]
    pub min_area: usize,
    /// Curvature threshold below which the quadratic fit is unusable.
    #[serde(default = "default_fit_eps")]
    pub fit_eps: f64,
    /// Probe density for the quadratic fit. The fit vertex is extrapolated
    /// beyond the deepest level, so its lateral noise scales with
    /// 1/sqrt(points); a denser probe set keeps the corrected bottom point
    /// within a fraction of a pixel of the symmetry axis.
    #[serde(default = "default_fit_probe_levels")]
    pub fit_probe_levels: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            n_levels: default_n_levels(),
            ray_step: default_ray_step(),
            min_area: default_min_area(),
            fit_eps: default_fit_eps(),
            fit_probe_levels: default_fit_probe_levels(),
        }
    }
}

/// Extremal mask pixels. Ties: U and D take the smallest x, L and R the
/// smallest y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vertices {
    pub u: Point2,
    pub d: Point2,
    pub l: Point2,
    pub r: Point2,
}

/// One probed level: midline point and the left/right boundary hits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelPoints {
    /// 1-based level index k.
    pub level: usize,
    pub center: Point2,
    pub left: Point2,
    pub right: Point2,
}

/// Coefficients of `y = a*x^2 + b*x + c` in the rotated frame centered on C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QuadraticFit {
    pub fn vertex(&self) -> Point2 {
        let x = -self.b / (2.0 * self.a);
        Point2::new(x, self.c - self.b * self.b / (4.0 * self.a))
    }
}

/// Why a frame produced no angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegeneracyReason {
    MaskTooSmall,
    DegenerateMidline,
    CenterOutsideMask,
    TooFewLevelPoints,
    CoincidentPoints,
}

/// Full geometric analysis of one mask. `angles` is present exactly when
/// `degenerate` is `None`; `fit_fallback` marks frames where the quadratic
/// correction was unusable and D' fell back to the original midline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldGeometry {
    pub degenerate: Option<DegeneracyReason>,
    pub fit_fallback: bool,
    pub vertices: Option<Vertices>,
    pub center: Option<Point2>,
    pub gamma_deg: Option<f64>,
    pub levels: Vec<LevelPoints>,
    pub fit: Option<QuadraticFit>,
    pub d_q: Option<Point2>,
    pub d_prime: Option<Point2>,
    pub angles: Option<AngleSet>,
}

impl FoldGeometry {
    fn degenerate(reason: DegeneracyReason) -> Self {
        FoldGeometry {
            degenerate: Some(reason),
            fit_fallback: false,
            vertices: None,
            center: None,
            gamma_deg: None,
            levels: Vec::new(),
            fit: None,
            d_q: None,
            d_prime: None,
            angles: None,
        }
    }
}

/// Per-frame geometry JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryFile {
    pub n_levels: usize,
    pub frames: Vec<FoldGeometry>,
}

/// Extremal-run midpoints: like [`extract_vertices`] but each vertex is the
/// sub-pixel midpoint of its extremal run (midpoint of the y_min row for U,
/// and so on). Used for the midline center, where the tie-broken pixel
/// choice of [`extract_vertices`] would skew the center sideways on flat
/// apex rows and break mirror covariance.
pub fn extremal_run_midpoints(
    mask: &GlottisMask,
    min_area: usize,
) -> Result<Vertices, GeometryError> {
    let v = extract_vertices(mask, min_area)?;
    let row_run = |y: usize| -> Point2 {
        let xs: Vec<usize> = (0..mask.width).filter(|&x| mask.get(x, y)).collect();
        Point2::new(
            (*xs.first().unwrap() as f64 + *xs.last().unwrap() as f64) / 2.0,
            y as f64,
        )
    };
    let col_run = |x: usize| -> Point2 {
        let ys: Vec<usize> = (0..mask.height).filter(|&y| mask.get(x, y)).collect();
        Point2::new(
            x as f64,
            (*ys.first().unwrap() as f64 + *ys.last().unwrap() as f64) / 2.0,
        )
    };
    Ok(Vertices {
        u: row_run(v.u.y as usize),
        d: row_run(v.d.y as usize),
        l: col_run(v.l.x as usize),
        r: col_run(v.r.x as usize),
    })
}

/// Extremal vertices of the mask.
pub fn extract_vertices(mask: &GlottisMask, min_area: usize) -> Result<Vertices, GeometryError> {
    let mut u: Option<(usize, usize)> = None;
    let mut d: Option<(usize, usize)> = None;
    let mut l: Option<(usize, usize)> = None;
    let mut r: Option<(usize, usize)> = None;
    let mut area = 0usize;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.get(x, y) {
                continue;
            }
            area += 1;
            // Scan order is y-major, x-ascending, so strict comparisons
            // implement the tie rules.
            if u.is_none() {
                u = Some((x, y));
            }
            if d.map(|(_, dy)| y > dy).unwrap_or(true) {
                d = Some((x, y));
            }
            if l.map(|(lx, _)| x < lx).unwrap_or(true) {
                l = Some((x, y));
            }
            if r.map(|(rx, _)| x > rx).unwrap_or(true) {
                r = Some((x, y));
            }
        }
    }
    if area < min_area {
        return Err(GeometryError::MaskTooSmall { area, min_area });
    }
    let p = |(x, y): (usize, usize)| Point2::new(x as f64, y as f64);
    Ok(Vertices {
        u: p(u.unwrap()),
        d: p(d.unwrap()),
        l: p(l.unwrap()),
        r: p(r.unwrap()),
    })
}

/// Vertex center and the unit direction C -> D. The line is kept parametric
/// so vertical midlines need no special casing.
pub fn midline(v: &Vertices) -> Result<(Point2, (f64, f64)), GeometryError> {
    let c = Point2::new(
        (v.u.x + v.d.x + v.l.x + v.r.x) / 4.0,
        (v.u.y + v.d.y + v.l.y + v.r.y) / 4.0,
    );
    let (dx, dy) = (v.d.x - c.x, v.d.y - c.y);
    let dist = dx.hypot(dy);
    if dist < 1.0 {
        return Err(GeometryError::DegenerateMidline { dist });
    }
    Ok((c, (dx / dist, dy / dist)))
}

fn direction(from: Point2, to: Point2) -> Option<(f64, f64)> {
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    let dist = dx.hypot(dy);
    if dist < 1.0 {
        return None;
    }
    Some((dx / dist, dy / dist))
}

/// March from `from` along `dir`, returning the first and last in-mask
/// samples of the first contiguous in-mask run (at `step` resolution).
fn march_run(
    mask: &GlottisMask,
    from: Point2,
    dir: (f64, f64),
    step: f64,
) -> Option<(Point2, Point2)> {
    let limit = ((mask.width + mask.height) as f64 / step).ceil() as usize + 2;
    let mut first: Option<Point2> = None;
    let mut last: Option<Point2> = None;
    for i in 0..=limit {
        let p = Point2::new(from.x + dir.0 * step * i as f64, from.y + dir.1 * step * i as f64);
        if mask.contains_point(p.x, p.y) {
            if first.is_none() {
                first = Some(p);
            }
            last = Some(p);
        } else if first.is_some() {
            break;
        }
    }
    first.map(|f| (f, last.unwrap()))
}

/// Probe the N-1 equidistant levels of the midline segment. Levels whose
/// midline point falls outside the mask are skipped.
pub fn level_points(
    mask: &GlottisMask,
    seg_start: Point2,
    seg_end: Point2,
    axis: (f64, f64),
    cfg: &GeometryConfig,
) -> Vec<LevelPoints> {
    // cross(axis, perp) = 1 > 0, so +perp probes the left side in image
    // coordinates (y down).
    let perp = (-axis.1, axis.0);
    let n = cfg.n_levels;
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for k in 1..n {
        let t = k as f64 / n as f64;
        let ck = Point2::new(
            seg_start.x + t * (seg_end.x - seg_start.x),
            seg_start.y + t * (seg_end.y - seg_start.y),
        );
        if !mask.contains_point(ck.x, ck.y) {
            continue; // level skipped, others unaffected
        }
        let left = match march_run(mask, ck, perp, cfg.ray_step) {
            Some((_, last)) => last,
            None => continue,
        };
        let right = match march_run(mask, ck, (-perp.0, -perp.1), cfg.ray_step) {
            Some((_, last)) => last,
            None => continue,
        };
        out.push(LevelPoints {
            level: k,
            center: ck,
            left,
            right,
        });
    }
    out
}

/// Least-squares fit of `y = a*x^2 + b*x + c`. The x values are centered
/// internally for conditioning. Returns `None` when the normal equations are
/// singular (fewer than 3 distinct x, or collinear in x^2).
pub fn fit_quadratic(points: &[(f64, f64)]) -> Option<QuadraticFit> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let x_mean = points.iter().map(|p| p.0).sum::<f64>() / n;
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    let (mut sy, mut sxy, mut sx2y) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let u = x - x_mean;
        let u2 = u * u;
        s1 += u;
        s2 += u2;
        s3 += u2 * u;
        s4 += u2 * u2;
        sy += y;
        sxy += u * y;
        sx2y += u2 * y;
    }
    let m = [[s4, s3, s2], [s3, s2, s1], [s2, s1, n]];
    let rhs = [sx2y, sxy, sy];
    let sol = solve3(m, rhs)?;
    let (a, b_u, c_u) = (sol[0], sol[1], sol[2]);
    // Undo the centering: y = a(x-x̄)² + b_u(x-x̄) + c_u.
    let b = b_u - 2.0 * a * x_mean;
    let c = c_u + a * x_mean * x_mean - b_u * x_mean;
    Some(QuadraticFit { a, b, c })
}

fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    let scale = m
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..3 {
        let pivot_row = (col..3)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        if m[pivot_row][col].abs() < 1e-12 * scale {
            return None;
        }
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut sol = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = rhs[row];
        for k in row + 1..3 {
            acc -= m[row][k] * sol[k];
        }
        sol[row] = acc / m[row][row];
    }
    Some(sol)
}

/// Outcome of the midline correction stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub gamma_deg: f64,
    pub fit: Option<QuadraticFit>,
    pub d_q: Point2,
    pub d_prime: Point2,
    /// True when the fit was unusable and the original midline was kept.
    pub fallback: bool,
}

/// Rotate the level points so the midline is vertical, fit a quadratic,
/// refine the bottom point to the parabola vertex and march the corrected
/// midline to its boundary point D'.
///
/// The fit is unusable (falls back to `d_q = D`, D' from the original
/// midline) when the normal equations are singular, |a| < `fit_eps`, the
/// parabola opens away from the bottom, or the vertex lands far outside the
/// probed region.
pub fn quadratic_correction(
    mask: &GlottisMask,
    levels: &[LevelPoints],
    c: Point2,
    d: Point2,
    axis: (f64, f64),
    seg_len: f64,
    cfg: &GeometryConfig,
) -> Correction {
    // Rotation taking `axis` onto (0, 1): rows (ay, -ax), (ax, ay).
    let (ax, ay) = axis;
    let gamma_deg = ax.atan2(ay).to_degrees();
    let rotate = |p: Point2| -> (f64, f64) {
        let (dx, dy) = (p.x - c.x, p.y - c.y);
        (ay * dx - ax * dy, ax * dx + ay * dy)
    };
    let unrotate = |(x, y): (f64, f64)| -> Point2 {
        Point2::new(c.x + ay * x + ax * y, c.y - ax * x + ay * y)
    };

    let points: Vec<(f64, f64)> = levels
        .iter()
        .flat_map(|lv| [rotate(lv.left), rotate(lv.right)])
        .collect();

    let fit = if points.len() >= 3 {
        fit_quadratic(&points)
    } else {
        None
    };

    let fallback_result = |fit: Option<QuadraticFit>| {
        let d_prime = march_run(mask, c, axis, cfg.ray_step)
            .map(|(_, last)| last)
            .unwrap_or(d);
        Correction {
            gamma_deg,
            fit,
            d_q: d,
            d_prime,
            fallback: true,
        }
    };

    let Some(fit) = fit else {
        return fallback_result(None);
    };
    // The level cloud narrows toward the bottom, so a usable parabola opens
    // toward smaller y (a < 0) and its vertex sits below C within reach of
    // the probed segment.
    if fit.a > -cfg.fit_eps {
        return fallback_result(Some(fit));
    }
    let vertex = fit.vertex();
    let x_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let span = (x_max - x_min).max(1.0);
    if vertex.x < x_min - span || vertex.x > x_max + span {
        return fallback_result(Some(fit));
    }
    if vertex.y <= 0.0 || vertex.y > 3.0 * seg_len {
        return fallback_result(Some(fit));
    }

    let d_q = unrotate((vertex.x, vertex.y));
    let (ddx, ddy) = (d_q.x - c.x, d_q.y - c.y);
    let dist = ddx.hypot(ddy);
    if dist < 1.0 {
        return fallback_result(Some(fit));
    }
    let dir = (ddx / dist, ddy / dist);
    match march_run(mask, c, dir, cfg.ray_step) {
        Some((_, d_prime)) => Correction {
            gamma_deg,
            fit: Some(fit),
            d_q,
            d_prime,
            fallback: false,
        },
        None => fallback_result(Some(fit)),
    }
}

/// Angles at D' between each boundary point and C, in degrees.
pub fn glottal_angles(
    levels: &[LevelPoints],
    c: Point2,
    d_prime: Point2,
) -> Result<AngleSet, GeometryError> {
    let angle_at = |p: Point2| -> Result<f64, GeometryError> {
        let (v1x, v1y) = (p.x - d_prime.x, p.y - d_prime.y);
        let (v2x, v2y) = (c.x - d_prime.x, c.y - d_prime.y);
        let n1 = v1x.hypot(v1y);
        let n2 = v2x.hypot(v2y);
        if n1 < 1e-9 || n2 < 1e-9 {
            return Err(GeometryError::CoincidentPoints);
        }
        let cosine = ((v1x * v2x + v1y * v2y) / (n1 * n2)).clamp(-1.0, 1.0);
        Ok(cosine.acos().to_degrees())
    };
    let mut set = AngleSet {
        levels: Vec::with_capacity(levels.len()),
        left: Vec::with_capacity(levels.len()),
        right: Vec::with_capacity(levels.len()),
    };
    for lv in levels {
        set.levels.push(lv.level);
        set.left.push(angle_at(lv.left)?);
        set.right.push(angle_at(lv.right)?);
    }
    Ok(set)
}

/// Run the full per-mask analysis. Degeneracies become flagged data, never
/// errors, so a sequence pass cannot abort mid-way.
pub fn analyze_frame(mask: &GlottisMask, cfg: &GeometryConfig) -> FoldGeometry {
    let vertices = match extract_vertices(mask, cfg.min_area) {
        Ok(v) => v,
        Err(_) => return FoldGeometry::degenerate(DegeneracyReason::MaskTooSmall),
    };
    let center_vertices = extremal_run_midpoints(mask, cfg.min_area).expect("area checked");
    let (c, axis) = match midline(&center_vertices) {
        Ok(m) => m,
        Err(_) => {
            let mut g = FoldGeometry::degenerate(DegeneracyReason::DegenerateMidline);
            g.vertices = Some(vertices);
            return g;
        }
    };
    let Some((seg_start, seg_end)) = march_run(mask, c, axis, cfg.ray_step) else {
        let mut g = FoldGeometry::degenerate(DegeneracyReason::CenterOutsideMask);
        g.vertices = Some(vertices);
        g.center = Some(c);
        return g;
    };
    let report_levels = level_points(mask, seg_start, seg_end, axis, cfg);
    if report_levels.len() < 2 {
        let mut g = FoldGeometry::degenerate(DegeneracyReason::TooFewLevelPoints);
        g.vertices = Some(vertices);
        g.center = Some(c);
        g.levels = report_levels;
        return g;
    }
    let dense_cfg = GeometryConfig {
        n_levels: cfg.fit_probe_levels.max(cfg.n_levels),
        ..cfg.clone()
    };
    let mut fit_levels = level_points(mask, seg_start, seg_end, axis, &dense_cfg);
    if fit_levels.len() < 2 {
        fit_levels = report_levels.clone();
    }
    let seg_len = seg_start.distance(&seg_end);
    let mut correction =
        quadratic_correction(mask, &fit_levels, c, vertices.d, axis, seg_len, cfg);
    let gamma_deg = correction.gamma_deg;
    // Refine toward the corrected midline: the initial C->D direction is
    // biased whenever the mask is tilted (the extremal bottom pixel sits off
    // the symmetry axis), and probes orthogonal to a skewed midline yield
    // skewed boundary points, which in turn skew the fit. Re-probing along
    // the corrected axis and re-fitting converges in a few passes.
    let mut axis_cur = axis;
    for _ in 0..12 {
        if correction.fallback {
            break;
        }
        let Some(dir) = direction(c, correction.d_prime) else {
            break;
        };
        let turn = (dir.0 - axis_cur.0).hypot(dir.1 - axis_cur.1);
        if turn < 1e-4 {
            break; // converged well below 0.01 degrees
        }
        let Some((s1, e1)) = march_run(mask, c, dir, cfg.ray_step) else {
            break;
        };
        let reprobed = level_points(mask, s1, e1, dir, &dense_cfg);
        if reprobed.len() < 2 {
            break;
        }
        fit_levels = reprobed;
        axis_cur = dir;
        let next =
            quadratic_correction(mask, &fit_levels, c, vertices.d, axis_cur, s1.distance(&e1), cfg);
        if next.fallback {
            break;
        }
        correction = next;
    }
    let correction = Correction {
        gamma_deg,
        ..correction
    };
    // Final angle levels are probed orthogonal to the corrected midline.
    let levels = match direction(c, correction.d_prime) {
        Some(dir) if !correction.fallback => match march_run(mask, c, dir, cfg.ray_step) {
            Some((s1, e1)) => {
                let lv = level_points(mask, s1, e1, dir, cfg);
                if lv.len() >= 2 {
                    lv
                } else {
                    report_levels
                }
            }
            None => report_levels,
        },
        _ => report_levels,
    };
    let angles = match glottal_angles(&levels, c, correction.d_prime) {
        Ok(a) => a,
        Err(_) => {
            let mut g = FoldGeometry::degenerate(DegeneracyReason::CoincidentPoints);
            g.vertices = Some(vertices);
            g.center = Some(c);
            g.gamma_deg = Some(correction.gamma_deg);
            g.levels = levels;
            g.fit = correction.fit;
            g.d_q = Some(correction.d_q);
            g.d_prime = Some(correction.d_prime);
            g.fit_fallback = correction.fallback;
            return g;
        }
    };
    FoldGeometry {
        degenerate: None,
        fit_fallback: correction.fallback,
        vertices: Some(vertices),
        center: Some(c),
        gamma_deg: Some(correction.gamma_deg),
        levels,
        fit: correction.fit,
        d_q: Some(correction.d_q),
        d_prime: Some(correction.d_prime),
        angles: Some(angles),
    }
}

/// Multi-channel left/right angle series across a mask sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VFDynSeries {
    pub n_levels: usize,
    pub left: Vec<SeriesChannel>,
    pub right: Vec<SeriesChannel>,
    /// False where the frame was degenerate or missing levels; such frames
    /// hold the nearest valid value so channels stay frame-aligned.
    pub frame_validity: Vec<bool>,
}

impl VFDynSeries {
    pub fn valid_frames(&self) -> usize {
        self.frame_validity.iter().filter(|&&v| v).count()
    }
}

/// Analyze every frame and assemble the per-level angle channels.
///
/// The angular reference must be stable across the sequence: a per-frame
/// corrected midline follows each frame's deformation, which would leak the
/// moving fold's motion into the other fold's channels and wash out the
/// left/right variance contrast. The valid frames' corrected directions are
/// averaged into one sequence direction and their centers reduced to the
/// componentwise median; every frame is then re-probed against that fixed
/// reference line. (This assumes a steady camera across the sequence, which
/// holds within one highlight segment.)
///
/// A frame is valid when it is non-degenerate and produced every level;
/// invalid frames carry the last valid value (leading invalid frames take
/// the first valid value).
pub fn vfdyn(seq: &MaskSequence, cfg: &GeometryConfig) -> Result<VFDynSeries, GeometryError> {
    let geometries: Vec<FoldGeometry> = seq
        .masks
        .par_iter()
        .map(|m| analyze_frame(m, cfg))
        .collect();
    vfdyn_with_geometries(seq, &geometries, cfg)
}

/// [`vfdyn`] with per-frame geometry already computed.
pub fn vfdyn_with_geometries(
    seq: &MaskSequence,
    geometries: &[FoldGeometry],
    cfg: &GeometryConfig,
) -> Result<VFDynSeries, GeometryError> {
    let n_channels = cfg.n_levels - 1;
    let n_frames = geometries.len();

    // Sequence reference line: mean of the valid corrected midline
    // directions through the median of the valid centers.
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    let mut cx = Vec::new();
    let mut cy = Vec::new();
    for geo in geometries {
        if geo.degenerate.is_some() {
            continue;
        }
        let (Some(c), Some(dp)) = (geo.center, geo.d_prime) else {
            continue;
        };
        if let Some(dir) = direction(c, dp) {
            sx += dir.0;
            sy += dir.1;
            cx.push(c.x);
            cy.push(c.y);
        }
    }
    let norm = sx.hypot(sy);
    if norm < 1e-9 || cx.is_empty() {
        return Err(GeometryError::AllFramesDegenerate(n_frames));
    }
    let ref_dir = (sx / norm, sy / norm);
    let ref_c = Point2::new(median(&mut cx), median(&mut cy));

    let per_frame: Vec<Option<AngleSet>> = geometries
        .par_iter()
        .zip(&seq.masks)
        .map(|(geo, mask)| {
            if geo.degenerate.is_some() {
                return None;
            }
            let (s1, e1) = march_run(mask, ref_c, ref_dir, cfg.ray_step)?;
            let levels = level_points(mask, s1, e1, ref_dir, cfg);
            if levels.len() != n_channels {
                return None;
            }
            let angles = glottal_angles(&levels, ref_c, e1).ok()?;
            Some(angles)
        })
        .collect();

    let mut validity = vec![false; n_frames];
    let mut left = vec![vec![f64::NAN; n_frames]; n_channels];
    let mut right = vec![vec![f64::NAN; n_frames]; n_channels];
    for (f, angles) in per_frame.iter().enumerate() {
        let Some(angles) = angles else { continue };
        validity[f] = true;
        for (i, &k) in angles.levels.iter().enumerate() {
            left[k - 1][f] = angles.left[i];
            right[k - 1][f] = angles.right[i];
        }
    }
    if !validity.iter().any(|&v| v) {
        return Err(GeometryError::AllFramesDegenerate(n_frames));
    }
    for ch in left.iter_mut().chain(right.iter_mut()) {
        fill_invalid(ch, &validity);
    }
    Ok(VFDynSeries {
        n_levels: cfg.n_levels,
        left: left
            .into_iter()
            .enumerate()
            .map(|(i, values)| SeriesChannel::new(format!("L{}", i + 1), values))
            .collect(),
        right: right
            .into_iter()
            .enumerate()
            .map(|(i, values)| SeriesChannel::new(format!("R{}", i + 1), values))
            .collect(),
        frame_validity: validity,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn fill_invalid(values: &mut [f64], validity: &[bool]) {
    let first_valid = validity.iter().position(|&v| v).expect("one valid frame");
    let mut last = values[first_valid];
    for (i, v) in values.iter_mut().enumerate() {
        if validity[i] {
            last = *v;
        } else {
            *v = last;
        }
    }
    // Leading invalid frames take the first valid value.
    for i in 0..first_valid {
        values[i] = values[first_valid];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_mask(x0: usize, y0: usize, w: usize, h: usize, canvas: (usize, usize)) -> GlottisMask {
        let mut m = GlottisMask::blank(canvas.0, canvas.1);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn vertices_of_rectangle_with_tie_breaks() {
        let mask = rect_mask(0, 0, 10, 20, (12, 24));
        let v = extract_vertices(&mask, 20).unwrap();
        assert_eq!(v.u, Point2::new(0.0, 0.0));
        assert_eq!(v.d, Point2::new(0.0, 19.0));
        assert_eq!(v.l, Point2::new(0.0, 0.0));
        assert_eq!(v.r, Point2::new(9.0, 0.0));
    }

    #[test]
    fn tiny_mask_is_rejected() {
        let mut mask = GlottisMask::blank(8, 8);
        mask.set(3, 3, true);
        assert!(matches!(
            extract_vertices(&mask, 20),
            Err(GeometryError::MaskTooSmall { area: 1, .. })
        ));
    }

    #[test]
    fn midline_of_square_edge_midpoints() {
        let v = Vertices {
            u: Point2::new(5.0, 0.0),
            d: Point2::new(5.0, 10.0),
            l: Point2::new(0.0, 5.0),
            r: Point2::new(10.0, 5.0),
        };
        let (c, axis) = midline(&v).unwrap();
        assert_eq!(c, Point2::new(5.0, 5.0));
        assert!((axis.0 - 0.0).abs() < 1e-12);
        assert!((axis.1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn midline_rejects_coincident_center_and_bottom() {
        let v = Vertices {
            u: Point2::new(5.0, 4.0),
            d: Point2::new(5.0, 5.0),
            l: Point2::new(4.0, 5.0),
            r: Point2::new(6.0, 6.0),
        };
        // C = (5, 5), D = (5, 5): coincident.
        assert!(matches!(
            midline(&v),
            Err(GeometryError::DegenerateMidline { .. })
        ));
    }

    #[test]
    fn rectangle_levels_have_constant_width() {
        let mask = rect_mask(10, 5, 21, 40, (41, 50));
        let cfg = GeometryConfig {
            n_levels: 4,
            ..GeometryConfig::default()
        };
        // Vertical midline through the rectangle center.
        let start = Point2::new(20.0, 25.0);
        let end = Point2::new(20.0, 44.0);
        let levels = level_points(&mask, start, end, (0.0, 1.0), &cfg);
        assert_eq!(levels.len(), 3);
        for lv in &levels {
            let width = lv.left.distance(&lv.right);
            assert!((width - 20.0).abs() <= 2.0 * cfg.ray_step, "width {width}");
            // Left is the smaller-x side under the image-coordinate cross rule.
            assert!(lv.left.x < lv.right.x);
        }
    }

    #[test]
    fn level_outside_concave_notch_is_skipped() {
        let mut mask = rect_mask(10, 5, 21, 40, (41, 50));
        // Carve a notch through the midline at mid-height.
        for y in 24..27 {
            for x in 15..26 {
                mask.set(x, y, false);
            }
        }
        let cfg = GeometryConfig {
            n_levels: 8,
            ..GeometryConfig::default()
        };
        let start = Point2::new(20.0, 6.0);
        let end = Point2::new(20.0, 44.0);
        let levels = level_points(&mask, start, end, (0.0, 1.0), &cfg);
        assert!(levels.len() < 7);
        assert!(levels.iter().all(|lv| mask.contains_point(lv.center.x, lv.center.y)));
    }

    #[test]
    fn quadratic_fit_is_exact_on_parabola_samples() {
        let points: Vec<(f64, f64)> = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]
            .iter()
            .map(|&x| (x, x * x))
            .collect();
        let fit = fit_quadratic(&points).unwrap();
        assert!((fit.a - 1.0).abs() < 1e-12);
        assert!(fit.b.abs() < 1e-12);
        assert!(fit.c.abs() < 1e-12);
        let vertex = fit.vertex();
        assert!(vertex.x.abs() < 1e-12 && vertex.y.abs() < 1e-12);
    }

    #[test]
    fn quadratic_fit_rejects_collinear_points() {
        let points: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        // Collinear points are fittable with a = 0; the correction stage must
        // then fall back because |a| < fit_eps.
        let fit = fit_quadratic(&points).unwrap();
        assert!(fit.a.abs() < 1e-9);
        // Points with a single distinct |x| are singular outright.
        let degenerate = vec![(1.0, 0.0), (1.0, 1.0), (1.0, 2.0)];
        assert!(fit_quadratic(&degenerate).is_none());
    }

    #[test]
    fn correction_round_trips_rotated_parabola() {
        // ∧-shaped cloud: y = 30 - 0.1 x², vertex (0, 30) relative to C,
        // rotated 30° and translated; the recovered D_q must match.
        let theta = 30f64.to_radians();
        let axis = (theta.sin(), theta.cos());
        let c = Point2::new(60.0, 40.0);
        let mask = rect_mask(0, 0, 120, 120, (120, 120));
        let cfg = GeometryConfig::default();
        let to_world = |x: f64, y: f64| {
            Point2::new(
                c.x + axis.1 * x + axis.0 * y,
                c.y - axis.0 * x + axis.1 * y,
            )
        };
        let levels: Vec<LevelPoints> = (1..7)
            .map(|k| {
                let x = k as f64 * 2.0;
                LevelPoints {
                    level: k,
                    center: to_world(0.0, 30.0 - 0.1 * x * x),
                    left: to_world(-x, 30.0 - 0.1 * x * x),
                    right: to_world(x, 30.0 - 0.1 * x * x),
                }
            })
            .collect();
        let d = to_world(0.0, 35.0);
        let correction = quadratic_correction(&mask, &levels, c, d, axis, 35.0, &cfg);
        assert!(!correction.fallback);
        let expected = to_world(0.0, 30.0);
        assert!(correction.d_q.distance(&expected) < 1e-6, "{:?}", correction.d_q);
    }

    #[test]
    fn collinear_levels_engage_fallback() {
        let mask = rect_mask(0, 0, 60, 60, (60, 60));
        let cfg = GeometryConfig::default();
        let c = Point2::new(30.0, 10.0);
        let d = Point2::new(30.0, 55.0);
        // All level points on two vertical lines: a = 0.
        let levels: Vec<LevelPoints> = (1..5)
            .map(|k| LevelPoints {
                level: k,
                center: Point2::new(30.0, 10.0 + 8.0 * k as f64),
                left: Point2::new(20.0, 10.0 + 8.0 * k as f64),
                right: Point2::new(40.0, 10.0 + 8.0 * k as f64),
            })
            .collect();
        let correction = quadratic_correction(&mask, &levels, c, d, (0.0, 1.0), 45.0, &cfg);
        assert!(correction.fallback);
        assert_eq!(correction.d_q, d);
        // D' marched down the original midline to the mask boundary.
        assert!((correction.d_prime.x - 30.0).abs() < 1e-9);
        assert!(correction.d_prime.y > 58.0);
    }

    #[test]
    fn perpendicular_and_collinear_angles() {
        let d_prime = Point2::new(10.0, 10.0);
        let c = Point2::new(10.0, 0.0); // directly above
        let levels = vec![LevelPoints {
            level: 1,
            center: Point2::new(10.0, 5.0),
            left: Point2::new(5.0, 10.0),  // directly left
            right: Point2::new(10.0, 5.0), // on the ray D' -> C
        }];
        let set = glottal_angles(&levels, c, d_prime).unwrap();
        assert!((set.left[0] - 90.0).abs() < 1e-9);
        assert!(set.right[0].abs() < 1e-9);
    }

    #[test]
    fn coincident_vertex_is_an_error() {
        let d_prime = Point2::new(10.0, 10.0);
        let levels = vec![LevelPoints {
            level: 1,
            center: Point2::new(10.0, 5.0),
            left: d_prime,
            right: Point2::new(12.0, 5.0),
        }];
        assert!(matches!(
            glottal_angles(&levels, Point2::new(10.0, 0.0), d_prime),
            Err(GeometryError::CoincidentPoints)
        ));
    }

    #[test]
    fn empty_mask_analyzes_as_degenerate() {
        let mask = GlottisMask::blank(16, 16);
        let geo = analyze_frame(&mask, &GeometryConfig::default());
        assert_eq!(geo.degenerate, Some(DegeneracyReason::MaskTooSmall));
        assert!(geo.angles.is_none());
    }

    #[test]
    fn vfdyn_constant_masks_give_constant_channels() {
        let mask = rect_mask(8, 4, 25, 52, (41, 60));
        let seq = MaskSequence::new(25.0, vec![mask; 4]).unwrap();
        let cfg = GeometryConfig::default();
        let series = vfdyn(&seq, &cfg).unwrap();
        assert_eq!(series.left.len(), 9);
        assert_eq!(series.right.len(), 9);
        assert_eq!(series.valid_frames(), 4);
        for ch in series.left.iter().chain(series.right.iter()) {
            let first = ch.values[0];
            assert!(ch.values.iter().all(|&v| (v - first).abs() < 1e-12));
        }
    }

    #[test]
    fn vfdyn_all_empty_sequence_errors() {
        let seq = MaskSequence::new(25.0, vec![GlottisMask::blank(16, 16); 3]).unwrap();
        assert!(matches!(
            vfdyn(&seq, &GeometryConfig::default()),
            Err(GeometryError::AllFramesDegenerate(3))
        ));
    }

    #[test]
    fn vfdyn_holds_last_valid_value_over_degenerate_frames() {
        let good = rect_mask(8, 4, 25, 52, (41, 60));
        let seq = MaskSequence::new(
            25.0,
            vec![GlottisMask::blank(41, 60), good.clone(), GlottisMask::blank(41, 60), good],
        )
        .unwrap();
        let series = vfdyn(&seq, &GeometryConfig::default()).unwrap();
        assert_eq!(series.frame_validity, vec![false, true, false, true]);
        for ch in series.left.iter().chain(series.right.iter()) {
            assert_eq!(ch.values[0], ch.values[1]); // leading backfill
            assert_eq!(ch.values[2], ch.values[1]); // hold last
        }
    }
}
