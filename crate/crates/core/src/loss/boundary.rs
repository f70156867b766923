use alloc::vec::Vec;

use crate::mask::Mask;

/// How pixels beyond the image edge are treated when testing neighbors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exterior {
    /// Only in-image neighbors count; an all-foreground mask has no boundary.
    Ignore,
    /// The exterior is background, so foreground touching the edge is boundary.
    Background,
}

/// Two-sided boundary of a 2-D mask with in-image neighbors only.
pub fn boundary_pixels(mask: &Mask) -> Vec<(usize, usize)> {
    boundary_pixels_with(mask, Exterior::Ignore)
}

/// Pixels whose label differs from at least one 4-connected neighbor,
/// in row-major order. Both the foreground rim and the background rim are
/// included.
pub fn boundary_pixels_with(mask: &Mask, exterior: Exterior) -> Vec<(usize, usize)> {
    let b = boundary_mask(mask, exterior);
    let w = mask.width();
    b.data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 1)
        .map(|(i, _)| (i / w, i % w))
        .collect()
}

pub fn boundary_mask(mask: &Mask, exterior: Exterior) -> Mask {
    assert_eq!(mask.shape().len(), 2, "boundary needs a 2-D mask");
    let (h, w) = (mask.height(), mask.width());
    Mask::from_fn2(h, w, |y, x| {
        let v = mask.get(y, x);
        let on_edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
        if v && on_edge && exterior == Exterior::Background {
            return true;
        }
        let mut differs = false;
        if y > 0 {
            differs |= mask.get(y - 1, x) != v;
        }
        if y + 1 < h {
            differs |= mask.get(y + 1, x) != v;
        }
        if x > 0 {
            differs |= mask.get(y, x - 1) != v;
        }
        if x + 1 < w {
            differs |= mask.get(y, x + 1) != v;
        }
        differs
    })
}
