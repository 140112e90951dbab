//! Cross-sections of attraction basins on secant planes.

use crate::error::{check_dim, Error, Result};
use crate::fixedpoints::{newton_solve, FixedPoint, NewtonSettings, StabilityClass};
use crate::memory::MATCH_TOL;
use crate::model::{NetworkConfig, RetrievalField, WeightMatrix};
use crate::scalar::{dist_inf, Scalar};
use crate::simulate::{converge_in_field, ConvergenceSettings};
use rayon::prelude::*;

/// A square grid on two free coordinates with every other coordinate fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneSpec<T> {
    pub free_axes: (usize, usize),
    /// Value of every coordinate; the free ones are overwritten per node.
    pub fixed_values: Vec<T>,
    pub extent: (T, T),
    /// Nodes per axis, endpoints included.
    pub resolution: usize,
}

impl<T: Scalar> PlaneSpec<T> {
    /// Plane on the first two coordinates over `[-5, 5]²` with 101 nodes
    /// per axis.
    pub fn standard(fixed_values: Vec<T>) -> Self {
        Self {
            free_axes: (0, 1),
            fixed_values,
            extent: (T::of(-5.0), T::of(5.0)),
            resolution: 101,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        check_dim(n, self.fixed_values.len())?;
        let (a, b) = self.free_axes;
        if a == b || a >= n || b >= n {
            return Err(Error::Argument(format!("invalid free axes ({a}, {b}) for N = {n}")));
        }
        if self.resolution < 2 {
            return Err(Error::Argument("resolution must be at least 2".into()));
        }
        if !(self.extent.0 < self.extent.1) {
            return Err(Error::Argument("empty plane extent".into()));
        }
        Ok(())
    }

    pub fn step(&self) -> T {
        (self.extent.1 - self.extent.0) / T::of((self.resolution - 1) as f64)
    }

    pub fn node(&self, i: usize) -> T {
        self.extent.0 + self.step() * T::of(i as f64)
    }

    /// Full state at column `col` (first axis) and row `row` (second axis).
    pub fn state(&self, row: usize, col: usize) -> Vec<T> {
        let mut x = self.fixed_values.clone();
        x[self.free_axes.0] = self.node(col);
        x[self.free_axes.1] = self.node(row);
        x
    }

    /// Same plane with `2r - 1` nodes per axis, so every old node is kept.
    pub fn refined(&self) -> Self {
        Self {
            resolution: 2 * self.resolution - 1,
            ..self.clone()
        }
    }
}

/// Attractors of one snapshot. Ids are indices and stay fixed, so colours
/// agree across every raster of the snapshot.
#[derive(Clone, Debug, Default)]
pub struct AttractorCatalog<T> {
    pub attractors: Vec<Vec<T>>,
}

impl<T: Scalar> AttractorCatalog<T> {
    /// Catalog seeded with the stable points of a census, in census order.
    pub fn from_points(points: &[FixedPoint<T>]) -> Self {
        Self {
            attractors: points
                .iter()
                .filter(|p| p.stability_class == StabilityClass::Stable)
                .map(|p| p.location.clone())
                .collect(),
        }
    }

    pub fn find(&self, x: &[T]) -> Option<usize> {
        let tol = T::of(MATCH_TOL);
        self.attractors.iter().position(|a| dist_inf(a, x) < tol)
    }

    pub fn find_or_insert(&mut self, x: &[T]) -> usize {
        self.find(x).unwrap_or_else(|| {
            self.attractors.push(x.to_vec());
            self.attractors.len() - 1
        })
    }

    /// Id of the negated attractor.
    pub fn partner(&self, id: usize) -> Option<usize> {
        let neg: Vec<T> = self.attractors[id].iter().map(|&v| -v).collect();
        self.find(&neg)
    }

    pub fn len(&self) -> usize {
        self.attractors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attractors.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasinRaster<T> {
    pub plane: PlaneSpec<T>,
    /// Attractor id per node, `None` where the run did not converge;
    /// row-major with row 0 at the low end of the second axis.
    pub cells: Vec<Option<usize>>,
}

impl<T: Scalar> BasinRaster<T> {
    pub fn resolution(&self) -> usize {
        self.plane.resolution
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<usize> {
        self.cells[row * self.plane.resolution + col]
    }

    pub fn unresolved(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    /// Nodes with a 4-neighbour of a different colour.
    pub fn boundary_nodes(&self) -> Vec<(usize, usize)> {
        let r = self.resolution();
        let mut out = Vec::new();
        for row in 0..r {
            for col in 0..r {
                let c = self.cell(row, col);
                let differs = [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)].iter().any(|&(dr, dc)| {
                    let (rr, cc) = (row as i64 + dr, col as i64 + dc);
                    rr >= 0
                        && cc >= 0
                        && (rr as usize) < r
                        && (cc as usize) < r
                        && self.cell(rr as usize, cc as usize) != c
                });
                if differs {
                    out.push((row, col));
                }
            }
        }
        out
    }
}

/// Builds the raster of `plane`, extending `catalog` with any attractor the
/// runs find that it does not yet hold.
pub fn basin_section<T: Scalar>(
    w: &WeightMatrix<T>,
    cfg: &NetworkConfig<T>,
    plane: &PlaneSpec<T>,
    catalog: &mut AttractorCatalog<T>,
    settings: &ConvergenceSettings,
) -> Result<BasinRaster<T>> {
    plane.validate(cfg.n)?;
    let field = RetrievalField::new(w, cfg)?;
    let r = plane.resolution;
    let newton = NewtonSettings::default();
    let ends: Vec<Option<Vec<T>>> = (0..r * r)
        .into_par_iter()
        .map(|idx| {
            let x0 = plane.state(idx / r, idx % r);
            match converge_in_field(&field, &x0, settings) {
                Ok(res) => res.location().map(|x| {
                    newton_solve(&field, x, &newton)
                        .filter(|p| dist_inf(p, x) < T::of(1e-3))
                        .unwrap_or_else(|| x.to_vec())
                }),
                Err(_) => None,
            }
        })
        .collect();
    // Runs that stop on a saddle's stable manifold are not attracted.
    let mut rejected: Vec<Vec<T>> = Vec::new();
    let tol = T::of(MATCH_TOL);
    let cells = ends
        .iter()
        .map(|e| {
            let x = e.as_deref()?;
            if let Some(id) = catalog.find(x) {
                return Some(id);
            }
            if rejected.iter().any(|q| dist_inf(q, x) < tol) {
                return None;
            }
            let stable = crate::fixedpoints::classify_in_field(&field, x, &newton)
                .is_ok_and(|p| p.stability_class == StabilityClass::Stable);
            if stable {
                Some(catalog.find_or_insert(x))
            } else {
                rejected.push(x.to_vec());
                None
            }
        })
        .collect();
    Ok(BasinRaster {
        plane: plane.clone(),
        cells,
    })
}

/// Raster on the plane through a useful saddle, free on the first two
/// coordinates.
pub fn saddle_plane_section<T: Scalar>(
    saddle: &FixedPoint<T>,
    w: &WeightMatrix<T>,
    cfg: &NetworkConfig<T>,
    extent: (T, T),
    resolution: usize,
    catalog: &mut AttractorCatalog<T>,
    settings: &ConvergenceSettings,
) -> Result<BasinRaster<T>> {
    if saddle.stability_class != StabilityClass::UsefulSaddle {
        return Err(Error::Argument(format!(
            "saddle plane needs a useful saddle, got {}",
            saddle.stability_class.label()
        )));
    }
    let plane = PlaneSpec {
        free_axes: (0, 1),
        fixed_values: saddle.location.clone(),
        extent,
        resolution,
    };
    basin_section(w, cfg, &plane, catalog, settings)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaddleBoundaryEntry {
    /// Index into the saddle list.
    pub saddle: usize,
    /// Distance in grid steps from the saddle's projection to the nearest
    /// edge between nodes of different colour; `None` on a single-colour
    /// raster.
    pub distance_cells: Option<f64>,
    pub flagged: bool,
}

/// Distance of each on-plane saddle to the nearest basin boundary.
pub fn boundary_saddle_report<T: Scalar>(
    raster: &BasinRaster<T>,
    saddles: &[FixedPoint<T>],
) -> Vec<SaddleBoundaryEntry> {
    let plane = &raster.plane;
    let (a, b) = plane.free_axes;
    let step = plane.step().f64();
    let lo = plane.extent.0.f64();
    let r = plane.resolution;
    let mut edges: Vec<(f64, f64)> = Vec::new();
    for row in 0..r {
        for col in 0..r {
            let c = raster.cell(row, col);
            if col + 1 < r && raster.cell(row, col + 1) != c {
                edges.push((col as f64 + 0.5, row as f64));
            }
            if row + 1 < r && raster.cell(row + 1, col) != c {
                edges.push((col as f64, row as f64 + 0.5));
            }
        }
    }
    let mut out = Vec::new();
    for (i, s) in saddles.iter().enumerate() {
        let on_plane = s
            .location
            .iter()
            .zip(&plane.fixed_values)
            .enumerate()
            .all(|(k, (&x, &f))| k == a || k == b || (x - f).abs() <= T::of(1e-9));
        let (gx, gy) = ((s.location[a].f64() - lo) / step, (s.location[b].f64() - lo) / step);
        let inside = gx >= 0.0 && gy >= 0.0 && gx <= (r - 1) as f64 && gy <= (r - 1) as f64;
        if !on_plane || !inside {
            continue;
        }
        let distance_cells = edges
            .iter()
            .map(|&(ex, ey)| ((ex - gx).powi(2) + (ey - gy).powi(2)).sqrt())
            .min_by(|p, q| p.partial_cmp(q).unwrap());
        out.push(SaddleBoundaryEntry {
            saddle: i,
            flagged: distance_cells.is_none_or(|d| d > 1.0),
            distance_cells,
        });
    }
    out
}

/// Fraction of the coarse nodes whose colour differs at the same location
/// in `fine`, a raster of `coarse.plane.refined()`.
pub fn refinement_change<T: Scalar>(coarse: &BasinRaster<T>, fine: &BasinRaster<T>) -> Result<f64> {
    let r = coarse.resolution();
    if fine.resolution() != 2 * r - 1 {
        return Err(Error::Argument("fine raster must have 2r - 1 nodes per axis".into()));
    }
    let mut changed = 0usize;
    for row in 0..r {
        for col in 0..r {
            if coarse.cell(row, col) != fine.cell(2 * row, 2 * col) {
                changed += 1;
            }
        }
    }
    Ok(changed as f64 / (r * r) as f64)
}

/// Symmetric Hausdorff distance, in grid steps, between the boundary node
/// sets of two rasters of equal resolution.
pub fn boundary_hausdorff<T: Scalar>(a: &BasinRaster<T>, b: &BasinRaster<T>) -> Option<f64> {
    let pa = a.boundary_nodes();
    let pb = b.boundary_nodes();
    if pa.is_empty() || pb.is_empty() {
        return (pa.is_empty() && pb.is_empty()).then_some(0.0);
    }
    let directed = |p: &[(usize, usize)], q: &[(usize, usize)]| {
        p.iter()
            .map(|&(r0, c0)| {
                q.iter()
                    .map(|&(r1, c1)| ((r0 as f64 - r1 as f64).powi(2) + (c0 as f64 - c1 as f64).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Some(directed(&pa, &pb).max(directed(&pb, &pa)))
}

/// RGB colour of an attractor id; never equal to [`UNRESOLVED_RGB`].
pub fn palette_color(id: usize) -> [u8; 3] {
    const BASE: [[u8; 3]; 12] = [
        [31, 119, 180],
        [255, 127, 14],
        [44, 160, 44],
        [214, 39, 40],
        [148, 103, 189],
        [140, 86, 75],
        [227, 119, 194],
        [188, 189, 34],
        [23, 190, 207],
        [255, 187, 120],
        [152, 223, 138],
        [197, 176, 213],
    ];
    if id < BASE.len() {
        return BASE[id];
    }
    // Golden-ratio hue walk for larger catalogs.
    let h = (id as f64 * 0.618_033_988_75).fract();
    let (r, g, b) = hsv(h, 0.65, 0.9);
    [r, g, b]
}

pub const UNRESOLVED_RGB: [u8; 3] = [0, 0, 0];

fn hsv(h: f64, s: f64, v: f64) -> (u8, u8, u8) {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let c = |x: f64| (x * 255.0).round() as u8;
    (c(r), c(g), c(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoints::{find_fixed_points, NewtonSettings};

    fn n2() -> (WeightMatrix<f64>, NetworkConfig<f64>) {
        let cfg = NetworkConfig {
            g: 5.0,
            ..NetworkConfig::<f64>::with_n(2)
        };
        (WeightMatrix::from_fn(2, |_, _| 0.5), cfg)
    }

    fn small_plane(n: usize, res: usize) -> PlaneSpec<f64> {
        PlaneSpec {
            resolution: res,
            ..PlaneSpec::standard(vec![0.0; n])
        }
    }

    #[test]
    fn plane_nodes_follow_the_grid_convention() {
        let p: PlaneSpec<f64> = PlaneSpec::standard(vec![0.0; 3]);
        assert!((p.step() - 0.1f64).abs() < 1e-15);
        assert_eq!(p.node(0), -5.0);
        assert!((p.node(100) - 5.0f64).abs() < 1e-12);
        assert!(p.node(50).abs() < 1e-12f64);
        assert_eq!(p.refined().resolution, 201);
        assert!(PlaneSpec {
            free_axes: (1, 1),
            ..p.clone()
        }
        .validate(3)
        .is_err());
        assert!(PlaneSpec {
            resolution: 1,
            ..p.clone()
        }
        .validate(3)
        .is_err());
        assert!(p.validate(4).is_err());
    }

    #[test]
    fn zero_weights_give_one_colour() {
        let cfg = NetworkConfig::<f64>::with_n(3);
        let mut cat = AttractorCatalog::default();
        let r = basin_section(
            &WeightMatrix::zeros(3),
            &cfg,
            &small_plane(3, 11),
            &mut cat,
            &ConvergenceSettings::default(),
        )
        .unwrap();
        assert_eq!(cat.len(), 1);
        assert!(r.cells.iter().all(|&c| c == Some(0)));
        assert!(r.boundary_nodes().is_empty());
        assert!(boundary_saddle_report(&r, &[]).is_empty());
    }

    #[test]
    fn two_neuron_basins_split_along_the_origin_saddle() {
        let (w, cfg) = n2();
        let pts = find_fixed_points(
            &w,
            &cfg,
            &[vec![3.0, 3.0], vec![-3.0, -3.0]],
            &NewtonSettings::default(),
        )
        .unwrap();
        let mut cat = AttractorCatalog::from_points(&pts);
        assert_eq!(cat.len(), 2);
        let plane = small_plane(2, 41);
        let r = basin_section(&w, &cfg, &plane, &mut cat, &ConvergenceSettings::default()).unwrap();
        assert_eq!(cat.len(), 2);
        // Brute-force oracle: for a > 0 the basins are split by x1 + x2 = 0.
        for row in 0..41 {
            for col in 0..41 {
                let x = plane.state(row, col);
                let s = x[0] + x[1];
                if s.abs() > 1e-9 {
                    let expected = cat.find(
                        &pts.iter()
                            .find(|p| p.location[0] * s > 0.0 && !p.is_origin())
                            .unwrap()
                            .location,
                    );
                    assert_eq!(r.cell(row, col), expected, "node ({row}, {col})");
                }
            }
        }
        let saddle: Vec<_> = pts
            .iter()
            .filter(|p| p.stability_class == StabilityClass::UsefulSaddle)
            .cloned()
            .collect();
        let rep = boundary_saddle_report(&r, &saddle);
        assert_eq!(rep.len(), 1);
        assert!(rep[0].distance_cells.unwrap() <= 1.0 && !rep[0].flagged);
        assert_eq!(rep, boundary_saddle_report(&r, &saddle));
    }

    #[test]
    fn origin_plane_is_point_symmetric_with_partner_swap() {
        let cfg = NetworkConfig {
            g: 2.0,
            ..NetworkConfig::<f64>::with_n(4)
        };
        let mut r = crate::rng::stream(12);
        let w = WeightMatrix::from_fn(4, |_, _| crate::rng::uniform(&mut r, -0.8, 0.8));
        let mut cat = AttractorCatalog::default();
        let res = 31;
        let ras = basin_section(
            &w,
            &cfg,
            &small_plane(4, res),
            &mut cat,
            &ConvergenceSettings::default(),
        )
        .unwrap();
        assert!(cat.len() >= 2);
        for row in 0..res {
            for col in 0..res {
                let a = ras.cell(row, col);
                let b = ras.cell(res - 1 - row, res - 1 - col);
                if row == res / 2 && col == res / 2 {
                    continue;
                }
                assert_eq!(a.and_then(|id| cat.partner(id)), b);
            }
        }
    }

    #[test]
    fn saddle_plane_rejects_non_saddles() {
        let (w, cfg) = n2();
        let stable = find_fixed_points(&w, &cfg, &[vec![3.0, 3.0]], &NewtonSettings::default())
            .unwrap()
            .into_iter()
            .find(|p| p.stability_class == StabilityClass::Stable)
            .unwrap();
        let mut cat = AttractorCatalog::default();
        let err = saddle_plane_section(
            &stable,
            &w,
            &cfg,
            (-1.0, 1.0),
            5,
            &mut cat,
            &ConvergenceSettings::default(),
        );
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn refinement_keeps_colours_and_hausdorff_is_symmetric() {
        let (w, cfg) = n2();
        let mut cat = AttractorCatalog::default();
        let coarse_plane = small_plane(2, 21);
        let s = ConvergenceSettings::default();
        let coarse = basin_section(&w, &cfg, &coarse_plane, &mut cat, &s).unwrap();
        let fine = basin_section(&w, &cfg, &coarse_plane.refined(), &mut cat, &s).unwrap();
        assert!(refinement_change(&coarse, &fine).unwrap() < 0.05);
        assert_eq!(boundary_hausdorff(&coarse, &coarse), Some(0.0));
    }

    #[test]
    fn palette_never_uses_the_unresolved_colour() {
        for id in 0..500 {
            assert_ne!(palette_color(id), UNRESOLVED_RGB);
        }
    }
}
