/// One corner of a trilinear interpolation cell.
#[derive(Clone, Copy, Debug)]
pub struct Corner {
    /// Row-major flat index into a `(t, h, w)` grid.
    pub index: usize,
    pub weight: f64,
    /// Partial derivatives of `weight` with respect to the `(t, h, w)` coordinate.
    pub dweight: [f64; 3],
}

/// The eight interpolation corners of `coord` inside a grid of `dims`.
///
/// Coordinates are clamped into `[0, dim - 1]` per axis first. At the upper
/// boundary both corners of an axis collapse onto the last cell, so the
/// derivative along that axis is zero there.
pub fn trilinear_corners(coord: [f64; 3], dims: [usize; 3]) -> [Corner; 8] {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut frac = [0f64; 3];
    for axis in 0..3 {
        let top = (dims[axis] - 1) as f64;
        let c = coord[axis].clamp(0.0, top);
        let base = c.floor().min(top);
        lo[axis] = base as usize;
        hi[axis] = (lo[axis] + 1).min(dims[axis] - 1);
        frac[axis] = c - base;
    }
    let mut corners = [Corner {
        index: 0,
        weight: 0.0,
        dweight: [0.0; 3],
    }; 8];
    for (n, corner) in corners.iter_mut().enumerate() {
        let pick = [(n >> 2) & 1, (n >> 1) & 1, n & 1];
        let mut idx = [0usize; 3];
        let mut factor = [0f64; 3];
        let mut dfactor = [0f64; 3];
        for axis in 0..3 {
            if pick[axis] == 1 {
                idx[axis] = hi[axis];
                factor[axis] = frac[axis];
                dfactor[axis] = 1.0;
            } else {
                idx[axis] = lo[axis];
                factor[axis] = 1.0 - frac[axis];
                dfactor[axis] = -1.0;
            }
            if dims[axis] == 1 {
                dfactor[axis] = 0.0;
            }
        }
        corner.index = (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2];
        corner.weight = factor[0] * factor[1] * factor[2];
        corner.dweight = [
            dfactor[0] * factor[1] * factor[2],
            factor[0] * dfactor[1] * factor[2],
            factor[0] * factor[1] * dfactor[2],
        ];
    }
    corners
}
