
#[allow(unused_imports)]
use num_traits::Float;
use super::swc::SwcMorphology;
use crate::volume::LabelVolume;

/// Slack so voxel centers lying exactly on a surface count as inside.
const SURFACE_EPS: f64 = 1e-9;

/// Signed distance-like value `min_t |p - q(t)| - r(t)` for the frustum
/// swept from sphere (`a`, `ra`) to sphere (`b`, `rb`); `<= 0` means
/// inside. `q` and `r` interpolate linearly.
pub fn frustum_distance(p: [f64; 3], a: [f64; 3], ra: f64, b: [f64; 3], rb: f64) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let w = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let at = |u: f64| {
        // u is the arc position along the axis, in [0, len].
        let len = len2.sqrt();
        let t = if len > 0.0 { u / len } else { 0.0 };
        let q = [w[0] - t * d[0], w[1] - t * d[1], w[2] - t * d[2]];
        (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt() - (ra + t * (rb - ra))
    };
    if len2 == 0.0 {
        return (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt() - ra.max(rb);
    }
    let len = len2.sqrt();
    let s = (w[0] * d[0] + w[1] * d[1] + w[2] * d[2]) / len;
    let h2 = ((w[0] * w[0] + w[1] * w[1] + w[2] * w[2]) - s * s).max(0.0);
    let k = (rb - ra) / len;
    let mut best = at(0.0).min(at(len));
    if k.abs() < 1.0 {
        // Stationary point of the convex objective along the axis.
        let u = s + k * h2.sqrt() / (1.0 - k * k).sqrt();
        best = best.min(at(u.clamp(0.0, len)));
    }
    best
}

/// 0-1 labels: a voxel is set when its center lies inside the sphere of any
/// node or the frustum of any parent-child segment. Geometry outside the
/// volume is clipped.
pub fn rasterize(m: &SwcMorphology, dims: [usize; 3]) -> LabelVolume {
    let mut out = LabelVolume::filled(dims, 0).expect("non-zero extents");
    let nodes = m.nodes();
    let mut shape = |a: [f64; 3], ra: f64, b: [f64; 3], rb: f64| {
        let r = ra.max(rb);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for ax in 0..3 {
            let min = a[ax].min(b[ax]) - r;
            let max = a[ax].max(b[ax]) + r;
            if max < 0.0 || min > (dims[ax] - 1) as f64 {
                return;
            }
            lo[ax] = min.max(0.0).ceil() as usize;
            hi[ax] = (max.floor() as usize).min(dims[ax] - 1);
        }
        for z in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for x in lo[2]..=hi[2] {
                    let p = [z as f64, y as f64, x as f64];
                    if frustum_distance(p, a, ra, b, rb) <= SURFACE_EPS {
                        out.set(z, y, x, 1);
                    }
                }
            }
        }
    };
    for n in nodes {
        shape(n.zyx(), n.radius, n.zyx(), n.radius);
    }
    for (p, c) in m.edges() {
        let (p, c) = (&nodes[p], &nodes[c]);
        shape(p.zyx(), p.radius, c.zyx(), c.radius);
    }
    out
}
