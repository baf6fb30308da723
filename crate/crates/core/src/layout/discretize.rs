use thiserror::Error;

use super::tree::{Bounds, GRID_HEIGHT, GRID_WIDTH};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid bounds {bounds:?} for a {width}x{height} screen")]
pub struct InvalidBounds {
    pub bounds: [f64; 4],
    pub width: f64,
    pub height: f64,
}

/// Maps pixel bounds on a `width x height` screen onto the 72x128 grid.
///
/// Coordinates are scaled and rounded to the nearest cell edge (halves round
/// up). A box that collapses to zero extent is widened by one cell, shifting
/// left or up instead when it sits on the far grid edge.
pub fn discretize_bounds(raw: [f64; 4], width: f64, height: f64) -> Result<Bounds, InvalidBounds> {
    let [x0, y0, x1, y1] = raw;
    let ok = width > 0.0
        && height > 0.0
        && raw.iter().all(|v| v.is_finite())
        && 0.0 <= x0
        && x0 <= x1
        && x1 <= width
        && 0.0 <= y0
        && y0 <= y1
        && y1 <= height;
    if !ok {
        return Err(InvalidBounds {
            bounds: raw,
            width,
            height,
        });
    }
    let sx = GRID_WIDTH as f64 / width;
    let sy = GRID_HEIGHT as f64 / height;
    let (gx0, gx1) = widen(
        scale(x0, sx, GRID_WIDTH),
        scale(x1, sx, GRID_WIDTH),
        0,
        GRID_WIDTH,
    );
    let (gy0, gy1) = widen(
        scale(y0, sy, GRID_HEIGHT),
        scale(y1, sy, GRID_HEIGHT),
        0,
        GRID_HEIGHT,
    );
    Ok(Bounds::new(gx0, gy0, gx1, gy1))
}

fn scale(v: f64, factor: f64, limit: i32) -> i32 {
    ((v * factor).round() as i32).clamp(0, limit)
}

/// Widens a zero-extent interval `[lo, hi]` inside `[min, max]` by one cell,
/// towards `max` unless it already touches it.
pub(crate) fn widen(lo: i32, hi: i32, min: i32, max: i32) -> (i32, i32) {
    if lo < hi || min >= max {
        (lo, hi)
    } else if hi < max {
        (lo, hi + 1)
    } else {
        (lo - 1, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_screen_maps_to_full_grid() {
        assert_eq!(
            discretize_bounds([0.0, 0.0, 1440.0, 2560.0], 1440.0, 2560.0).unwrap(),
            Bounds::screen()
        );
    }

    #[test]
    fn lower_right_quadrant() {
        let b = discretize_bounds([720.0, 1280.0, 1440.0, 2560.0], 1440.0, 2560.0).unwrap();
        assert_eq!(b, Bounds::new(36, 64, 72, 128));
    }

    #[test]
    fn tiny_box_is_widened() {
        let b = discretize_bounds([10.0, 10.0, 11.0, 11.0], 1440.0, 2560.0).unwrap();
        assert_eq!(b, Bounds::new(1, 1, 2, 2));
    }

    #[test]
    fn box_on_far_edge_widens_inward() {
        let b = discretize_bounds([1439.0, 2559.0, 1440.0, 2560.0], 1440.0, 2560.0).unwrap();
        assert_eq!(b, Bounds::new(71, 127, 72, 128));
    }

    #[test]
    fn rejects_out_of_screen_and_inverted() {
        assert!(discretize_bounds([0.0, 0.0, 1441.0, 10.0], 1440.0, 2560.0).is_err());
        assert!(discretize_bounds([20.0, 0.0, 10.0, 10.0], 1440.0, 2560.0).is_err());
        assert!(discretize_bounds([0.0, 0.0, 1.0, 1.0], 0.0, 2560.0).is_err());
    }

    proptest! {
        #[test]
        fn monotone_per_coordinate(a in 0.0f64..1440.0, b in 0.0f64..1440.0, y in 0.0f64..2560.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let first = discretize_bounds([lo, y, 1440.0, 2560.0], 1440.0, 2560.0).unwrap();
            let second = discretize_bounds([hi, y, 1440.0, 2560.0], 1440.0, 2560.0).unwrap();
            prop_assert!(first.x0 <= second.x0);
            let third = discretize_bounds([0.0, 0.0, lo, 2560.0], 1440.0, 2560.0).unwrap();
            let fourth = discretize_bounds([0.0, 0.0, hi, 2560.0], 1440.0, 2560.0).unwrap();
            prop_assert!(third.x1 <= fourth.x1);
            prop_assert!(first.has_area() && third.has_area());
        }
    }
}
