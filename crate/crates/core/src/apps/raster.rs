//! Flat-color drawing in unit-square coordinates.

use crate::types::{FrameBuffer, Point, Rgb};

pub fn clear(fb: &mut FrameBuffer, c: Rgb) {
    for px in fb.data_mut().chunks_exact_mut(3) {
        px.copy_from_slice(&c);
    }
}

fn to_px(v: f64, extent: usize) -> usize {
    ((v * extent as f64).round().max(0.0) as usize).min(extent)
}

/// Axis-aligned rectangle given by its unit-square center and half extents.
pub fn fill_rect(fb: &mut FrameBuffer, center: Point, half_w: f64, half_h: f64, c: Rgb) {
    let (w, h) = (fb.width(), fb.height());
    let x0 = to_px(center.x - half_w, w);
    let x1 = to_px(center.x + half_w, w);
    let y0 = to_px(center.y - half_h, h);
    let y1 = to_px(center.y + half_h, h);
    if x0 >= x1 {
        return;
    }
    let data = fb.data_mut();
    for y in y0..y1 {
        let row = &mut data[(y * w + x0) * 3..(y * w + x1) * 3];
        for px in row.chunks_exact_mut(3) {
            px.copy_from_slice(&c);
        }
    }
}

/// Filled circle; the radius is measured in units of the frame width.
pub fn fill_circle(fb: &mut FrameBuffer, center: Point, radius: f64, c: Rgb) {
    let (w, h) = (fb.width() as f64, fb.height() as f64);
    let cx = center.x * w;
    let cy = center.y * h;
    let r = radius * w;
    let y0 = (cy - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil().max(0.0) as usize).min(fb.height());
    let x0 = (cx - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil().max(0.0) as usize).min(fb.width());
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= r * r {
                fb.set_pixel(x, y, c);
            }
        }
    }
}
