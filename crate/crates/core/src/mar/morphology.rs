use super::MetalMask;

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offs = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                offs.push((dy, dx));
            }
        }
    }
    offs
}

/// Binary dilation with a disk of `radius` pixels.
pub fn dilate_mask(m: &MetalMask, radius: usize) -> MetalMask {
    if radius == 0 {
        return m.clone();
    }
    let g = m.grid;
    let offs = disk_offsets(radius);
    let mut out = vec![false; g.len()];
    for r in 0..g.height {
        for c in 0..g.width {
            if !m.get(r, c) {
                continue;
            }
            for &(dy, dx) in &offs {
                let rr = r as isize + dy;
                let cc = c as isize + dx;
                if rr >= 0 && rr < g.height as isize && cc >= 0 && cc < g.width as isize {
                    out[rr as usize * g.width + cc as usize] = true;
                }
            }
        }
    }
    MetalMask::new(g, out)
}

/// Binary erosion with a disk of `radius` pixels; pixels beyond the grid
/// count as background. May return an empty mask.
pub fn erode_mask(m: &MetalMask, radius: usize) -> MetalMask {
    if radius == 0 {
        return m.clone();
    }
    let g = m.grid;
    let offs = disk_offsets(radius);
    let mut out = vec![false; g.len()];
    for r in 0..g.height {
        for c in 0..g.width {
            if !m.get(r, c) {
                continue;
            }
            out[r * g.width + c] = offs.iter().all(|&(dy, dx)| {
                let rr = r as isize + dy;
                let cc = c as isize + dx;
                rr >= 0 && rr < g.height as isize && cc >= 0 && cc < g.width as isize && m.get(rr as usize, cc as usize)
            });
        }
    }
    MetalMask::new(g, out)
}
