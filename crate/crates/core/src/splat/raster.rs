//! Tile-based forward compositing and its adjoint.

use super::project::{backward_gaussian, project_gaussian, Projected, ScreenGrad};
use super::{PosedCloud, RenderConfig, SplatGradients};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{Image, Plane};
use crate::math::Vec3;
use crate::par::par_map;

/// Output of [`rasterize_forward`].
#[derive(Debug, Clone)]
pub struct RenderTarget {
    pub color: Image,
    /// 1 − final transmittance.
    pub alpha: Plane,
    state: Option<ForwardState>,
}

#[derive(Debug, Clone)]
struct ForwardState {
    camera: Camera,
    config: RenderConfig,
    cloud: PosedCloud,
    projections: Vec<Option<Projected>>,
    tiles: Vec<TileRecord>,
    final_t: Vec<f64>,
}

#[derive(Debug, Clone)]
struct TileRecord {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    /// Gaussians touching the tile, front to back.
    gaussians: Vec<u32>,
    /// Per pixel, the range of `contrib` holding its contributors.
    offsets: Vec<u32>,
    /// Indices into `gaussians`, in compositing order.
    contrib: Vec<u32>,
}

impl RenderTarget {
    /// A target with no retained forward state.
    pub fn detached(color: Image, alpha: Plane) -> Self {
        RenderTarget {
            color,
            alpha,
            state: None,
        }
    }

    pub fn has_forward_state(&self) -> bool {
        self.state.is_some()
    }

    /// Which Gaussians survived culling.
    pub fn visible(&self) -> Vec<bool> {
        self.state
            .as_ref()
            .map(|s| s.projections.iter().map(Option::is_some).collect())
            .unwrap_or_default()
    }

    /// Contributor indices of a pixel, front to back.
    pub fn contributors(&self, x: usize, y: usize) -> Vec<usize> {
        let Some(state) = &self.state else {
            return Vec::new();
        };
        let ts = state.config.tile_size;
        let tiles_x = state.camera.width.div_ceil(ts);
        let tile = &state.tiles[(y / ts) * tiles_x + x / ts];
        let local = (y - tile.y0) * (tile.x1 - tile.x0 + 1) + (x - tile.x0);
        let (a, b) = (tile.offsets[local] as usize, tile.offsets[local + 1] as usize);
        tile.contrib[a..b]
            .iter()
            .map(|&li| tile.gaussians[li as usize] as usize)
            .collect()
    }
}

/// Stable ascending permutation of `depths`.
pub fn depth_sort(depths: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..depths.len()).collect();
    order.sort_by(|&a, &b| depths[a].total_cmp(&depths[b]).then(a.cmp(&b)));
    order
}

#[inline]
fn power_at(p: &Projected, px: f64, py: f64) -> (f64, f64, f64) {
    let dx = px - p.mean.x;
    let dy = py - p.mean.y;
    let power = -0.5 * (p.conic[(0, 0)] * dx * dx + p.conic[(1, 1)] * dy * dy) - p.conic[(0, 1)] * dx * dy;
    (power, dx, dy)
}

#[inline]
fn covers(p: &Projected, x: usize, y: usize) -> bool {
    x >= p.rect[0] && x <= p.rect[2] && y >= p.rect[1] && y <= p.rect[3]
}

struct TileOutput {
    record: TileRecord,
    color: Vec<f64>,
    final_t: Vec<f64>,
}

fn composite_tile(
    mut record: TileRecord,
    projections: &[Option<Projected>],
    config: &RenderConfig,
) -> TileOutput {
    let npix = (record.x1 - record.x0 + 1) * (record.y1 - record.y0 + 1);
    let mut color = Vec::with_capacity(3 * npix);
    let mut final_t = Vec::with_capacity(npix);
    record.offsets.reserve(npix + 1);
    record.offsets.push(0);
    for y in record.y0..=record.y1 {
        for x in record.x0..=record.x1 {
            let (pxc, pyc) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = Vec3::zeros();
            for (li, &gi) in record.gaussians.iter().enumerate() {
                let p = projections[gi as usize].as_ref().expect("binned gaussian is visible");
                if !covers(p, x, y) {
                    continue;
                }
                let (power, _, _) = power_at(p, pxc, pyc);
                if power > 0.0 {
                    continue;
                }
                let alpha_raw = p.opacity * power.exp();
                if alpha_raw < config.alpha_min {
                    continue;
                }
                let alpha = alpha_raw.min(config.alpha_max);
                c += p.color * (t * alpha);
                record.contrib.push(li as u32);
                t *= 1.0 - alpha;
                if t < config.transmittance_min {
                    break;
                }
            }
            color.extend_from_slice(c.as_slice());
            final_t.push(t);
            record.offsets.push(record.contrib.len() as u32);
        }
    }
    TileOutput {
        record,
        color,
        final_t,
    }
}

fn forward(cloud: &PosedCloud, camera: &Camera, config: &RenderConfig, with_color: bool) -> RenderTarget {
    let (w, h) = (camera.width, camera.height);
    let projections: Vec<Option<Projected>> = par_map(&cloud.gaussians, |g| {
        project_gaussian(g, cloud.sh_degree, camera, config, with_color)
    });
    let depths: Vec<f64> = projections
        .iter()
        .map(|p| p.as_ref().map_or(f64::INFINITY, |p| p.depth))
        .collect();
    let order = depth_sort(&depths);

    let ts = config.tile_size.max(1);
    let (tiles_x, tiles_y) = (w.div_ceil(ts), h.div_ceil(ts));
    let mut records: Vec<TileRecord> = (0..tiles_x * tiles_y)
        .map(|i| {
            let (tx, ty) = (i % tiles_x, i / tiles_x);
            TileRecord {
                x0: tx * ts,
                y0: ty * ts,
                x1: ((tx + 1) * ts).min(w) - 1,
                y1: ((ty + 1) * ts).min(h) - 1,
                gaussians: Vec::new(),
                offsets: Vec::new(),
                contrib: Vec::new(),
            }
        })
        .collect();
    for &gi in &order {
        let Some(p) = &projections[gi] else { continue };
        for ty in p.rect[1] / ts..=p.rect[3] / ts {
            for tx in p.rect[0] / ts..=p.rect[2] / ts {
                records[ty * tiles_x + tx].gaussians.push(gi as u32);
            }
        }
    }

    let outputs = par_map(records, |r| composite_tile(r, &projections, config));

    let mut color = Image::new(w, h);
    let mut alpha = Plane::new(w, h);
    let mut final_t = vec![1.0; w * h];
    let mut tiles = Vec::with_capacity(outputs.len());
    for out in outputs {
        let r = &out.record;
        let mut k = 0;
        for y in r.y0..=r.y1 {
            for x in r.x0..=r.x1 {
                color.set(x, y, Vec3::new(out.color[3 * k], out.color[3 * k + 1], out.color[3 * k + 2]));
                alpha.set(x, y, 1.0 - out.final_t[k]);
                final_t[y * w + x] = out.final_t[k];
                k += 1;
            }
        }
        tiles.push(out.record);
    }

    RenderTarget {
        color,
        alpha,
        state: Some(ForwardState {
            camera: camera.clone(),
            config: *config,
            cloud: cloud.clone(),
            projections,
            tiles,
            final_t,
        }),
    }
}

/// Front-to-back alpha compositing of `cloud` as seen by `camera`.
pub fn rasterize_forward(cloud: &PosedCloud, camera: &Camera, config: &RenderConfig) -> RenderTarget {
    forward(cloud, camera, config, true)
}

/// Alpha plane only; SH colors are not evaluated.
pub fn render_silhouette(cloud: &PosedCloud, camera: &Camera, config: &RenderConfig) -> Plane {
    forward(cloud, camera, config, false).alpha
}

fn backward_tile(
    tile: &TileRecord,
    state: &ForwardState,
    d_color: Option<&Image>,
    d_alpha: Option<&Plane>,
) -> Vec<ScreenGrad> {
    let cfg = &state.config;
    let width = state.camera.width;
    let mut grads = vec![ScreenGrad::default(); tile.gaussians.len()];
    // (local index, alpha, clamped, gaussian value, dx, dy, transmittance before)
    let mut scratch: Vec<(usize, f64, bool, f64, f64, f64, f64)> = Vec::new();
    let mut k = 0;
    for y in tile.y0..=tile.y1 {
        for x in tile.x0..=tile.x1 {
            let range = tile.offsets[k] as usize..tile.offsets[k + 1] as usize;
            k += 1;
            if range.is_empty() {
                continue;
            }
            let dc = d_color.map_or(Vec3::zeros(), |img| img.get(x, y));
            let da = d_alpha.map_or(0.0, |a| a.get(x, y));
            if dc == Vec3::zeros() && da == 0.0 {
                continue;
            }
            let (pxc, pyc) = (x as f64 + 0.5, y as f64 + 0.5);
            scratch.clear();
            let mut t = 1.0;
            for &li in &tile.contrib[range] {
                let gi = tile.gaussians[li as usize] as usize;
                let p = state.projections[gi].as_ref().unwrap();
                let (power, dx, dy) = power_at(p, pxc, pyc);
                let g = power.exp();
                let alpha_raw = p.opacity * g;
                let alpha = alpha_raw.min(cfg.alpha_max);
                scratch.push((li as usize, alpha, alpha_raw > cfg.alpha_max, g, dx, dy, t));
                t *= 1.0 - alpha;
            }
            let t_final = state.final_t[y * width + x];
            let mut behind = Vec3::zeros();
            for &(li, alpha, clamped, g, dx, dy, t_i) in scratch.iter().rev() {
                let gi = tile.gaussians[li] as usize;
                let p = state.projections[gi].as_ref().unwrap();
                let one_minus = 1.0 - alpha;
                let d_alpha_i = dc.dot(&(p.color * t_i - behind / one_minus)) + da * t_final / one_minus;
                let sg = &mut grads[li];
                sg.color += dc * (t_i * alpha);
                behind += p.color * (t_i * alpha);
                if clamped {
                    continue;
                }
                sg.opacity += g * d_alpha_i;
                let d_power = g * p.opacity * d_alpha_i;
                let a = &p.conic;
                sg.mean.x += d_power * (a[(0, 0)] * dx + a[(0, 1)] * dy);
                sg.mean.y += d_power * (a[(1, 0)] * dx + a[(1, 1)] * dy);
                sg.conic += d_power * Vec3::new(-0.5 * dx * dx, -dx * dy, -0.5 * dy * dy);
            }
        }
    }
    grads
}

/// Exact gradients of a loss with upstream `d_color` / `d_alpha` with respect to
/// every Gaussian parameter of the cloud used in the forward pass.
pub fn rasterize_backward(
    target: &RenderTarget,
    d_color: Option<&Image>,
    d_alpha: Option<&Plane>,
) -> Result<SplatGradients> {
    let state = target
        .state
        .as_ref()
        .ok_or_else(|| Error::State("render target has no retained forward pass".into()))?;
    if let Some(dc) = d_color {
        dc.check_same_size(&target.color)?;
    }
    if let Some(da) = d_alpha {
        da.check_same_size(&target.alpha)?;
    }
    let n = state.cloud.len();
    let coeffs = 3 * crate::gaussian::sh::coeff_count(state.cloud.sh_degree);

    let tile_grads = par_map(&state.tiles, |tile| backward_tile(tile, state, d_color, d_alpha));
    // merge in tile order so sums do not depend on scheduling
    let mut screen = vec![ScreenGrad::default(); n];
    for (tile, grads) in state.tiles.iter().zip(&tile_grads) {
        for (&gi, g) in tile.gaussians.iter().zip(grads) {
            screen[gi as usize].add(g);
        }
    }

    let idx: Vec<usize> = (0..n).collect();
    let per = par_map(&idx, |&i| {
        state.projections[i].as_ref().map(|p| {
            backward_gaussian(&state.cloud.gaussians[i], p, &screen[i], state.cloud.sh_degree, &state.camera)
        })
    });
    let mut out = SplatGradients::zeros(n, coeffs);
    for (i, g) in per.into_iter().enumerate() {
        if let Some(g) = g {
            out.d_mu[i] = g.d_mu;
            out.d_rot[i] = g.d_rot;
            out.d_s[i] = g.d_s;
            out.d_eta[i] = g.d_eta;
            out.d_f[i] = g.d_f;
            out.visible[i] = true;
        }
    }
    Ok(out)
}
