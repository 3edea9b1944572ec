use crate::Image;

const CELL_BITS: usize = 5;
const CELLS: usize = 1 << CELL_BITS;

#[derive(Clone, Copy, Default)]
struct Cell {
    coord: [usize; 3],
    count: f64,
    sum: [f64; 3],
    sumsq: [f64; 3],
}

#[derive(Default, Clone, Copy)]
struct Moments {
    count: f64,
    sum: [f64; 3],
    sumsq: [f64; 3],
}

impl Moments {
    fn add(&mut self, c: &Cell) {
        self.count += c.count;
        for k in 0..3 {
            self.sum[k] += c.sum[k];
            self.sumsq[k] += c.sumsq[k];
        }
    }

    fn sub(&self, o: &Moments) -> Moments {
        let mut m = *self;
        m.count -= o.count;
        for k in 0..3 {
            m.sum[k] -= o.sum[k];
            m.sumsq[k] -= o.sumsq[k];
        }
        m
    }

    fn sse(&self) -> f64 {
        if self.count == 0.0 {
            return 0.0;
        }
        (0..3)
            .map(|k| self.sumsq[k] - self.sum[k] * self.sum[k] / self.count)
            .sum::<f64>()
            .max(0.0)
    }

    fn axis_variance(&self, k: usize) -> f64 {
        self.sumsq[k] / self.count - (self.sum[k] / self.count).powi(2)
    }

    fn mean(&self) -> [f64; 3] {
        self.sum.map(|s| s / self.count)
    }
}

fn moments(cells: &[Cell]) -> Moments {
    let mut m = Moments::default();
    for c in cells {
        m.add(c);
    }
    m
}

/// Palette of at most `colors` entries by recursive minimum-variance splitting
/// of a 5-bit-per-channel color histogram: the box with the largest squared
/// error is cut along its highest-variance axis where the summed error of the
/// two halves is smallest.
pub fn minimum_variance_palette(img: &Image, colors: usize) -> Vec<[f64; 3]> {
    let n = img.pixel_count();
    let mut grid = vec![Cell::default(); CELLS * CELLS * CELLS];
    let s = img.samples();
    for i in 0..n {
        let p = [s[i], s[n + i], s[2 * n + i]];
        let coord = p.map(|v| ((v * CELLS as f64) as usize).min(CELLS - 1));
        let idx = (coord[0] * CELLS + coord[1]) * CELLS + coord[2];
        let cell = &mut grid[idx];
        cell.coord = coord;
        cell.count += 1.0;
        for k in 0..3 {
            cell.sum[k] += p[k];
            cell.sumsq[k] += p[k] * p[k];
        }
    }
    let occupied: Vec<Cell> = grid.into_iter().filter(|c| c.count > 0.0).collect();
    let mut boxes: Vec<Vec<Cell>> = vec![occupied];
    while boxes.len() < colors.max(1) {
        let candidate = boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.len() > 1)
            .map(|(i, b)| (i, moments(b).sse()))
            .filter(|&(_, e)| e > 0.0)
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        let Some((index, _)) = candidate else { break };
        let cells = boxes.swap_remove(index);
        let (left, right) = split_box(cells);
        boxes.push(left);
        boxes.push(right);
    }
    boxes.iter().map(|b| moments(b).mean()).collect()
}

fn split_box(mut cells: Vec<Cell>) -> (Vec<Cell>, Vec<Cell>) {
    let total = moments(&cells);
    let axis = (0..3)
        .max_by(|&a, &b| total.axis_variance(a).total_cmp(&total.axis_variance(b)))
        .unwrap();
    cells.sort_by_key(|c| (c.coord[axis], c.coord));
    let mut left = Moments::default();
    let mut best = (f64::INFINITY, 1);
    for i in 0..cells.len() - 1 {
        left.add(&cells[i]);
        if cells[i].coord[axis] == cells[i + 1].coord[axis] {
            continue;
        }
        let err = left.sse() + total.sub(&left).sse();
        if err < best.0 {
            best = (err, i + 1);
        }
    }
    if !best.0.is_finite() {
        // Every cell shares the axis coordinate: split by position instead.
        best.1 = cells.len() / 2;
    }
    let right = cells.split_off(best.1);
    (cells, right)
}

/// Floyd–Steinberg error diffusion onto `palette`, raster order.
pub(crate) fn dither_to_palette(img: &Image, palette: &[[f64; 3]]) -> Image {
    let (w, h) = img.dims();
    let n = w * h;
    let s = img.samples();
    let mut work: Vec<[f64; 3]> = (0..n).map(|i| [s[i], s[n + i], s[2 * n + i]]).collect();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let p = work[i];
            let q = *palette
                .iter()
                .min_by(|a, b| dist2(a, &p).total_cmp(&dist2(b, &p)))
                .expect("palette is non-empty");
            for c in 0..3 {
                out.set(x, y, c, q[c]);
            }
            let err = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
            let mut spread = |xx: isize, yy: isize, f: f64| {
                if xx >= 0 && (xx as usize) < w && (yy as usize) < h {
                    let j = yy as usize * w + xx as usize;
                    for c in 0..3 {
                        work[j][c] += err[c] * f;
                    }
                }
            };
            let (xi, yi) = (x as isize, y as isize);
            spread(xi + 1, yi, 7.0 / 16.0);
            spread(xi - 1, yi + 1, 3.0 / 16.0);
            spread(xi, yi + 1, 5.0 / 16.0);
            spread(xi + 1, yi + 1, 1.0 / 16.0);
        }
    }
    out
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// `count` thresholds maximizing the between-class variance of a 256-bin
/// histogram of `values` (in `[0, 1]`). Exact, by dynamic programming over
/// contiguous bin ranges. Thresholds sit halfway between histogram bins.
pub fn multilevel_otsu(values: &[f64], count: usize) -> Vec<f64> {
    const BINS: usize = 256;
    let mut hist_n = [0.0f64; BINS];
    let mut hist_s = [0.0f64; BINS];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * 255.0).round() as usize).min(BINS - 1);
        hist_n[b] += 1.0;
        hist_s[b] += v;
    }
    let mut pn = vec![0.0; BINS + 1];
    let mut ps = vec![0.0; BINS + 1];
    for b in 0..BINS {
        pn[b + 1] = pn[b] + hist_n[b];
        ps[b + 1] = ps[b] + hist_s[b];
    }
    // Σ over classes of (class sum)² / (class count) ∝ between-class variance.
    let cost = |i: usize, j: usize| {
        let n = pn[j] - pn[i];
        if n > 0.0 {
            let s = ps[j] - ps[i];
            s * s / n
        } else {
            0.0
        }
    };
    let classes = count + 1;
    let mut dp = vec![vec![f64::NEG_INFINITY; BINS + 1]; classes + 1];
    let mut arg = vec![vec![0usize; BINS + 1]; classes + 1];
    for j in 0..=BINS {
        dp[1][j] = cost(0, j);
    }
    for k in 2..=classes {
        for j in 0..=BINS {
            for i in 0..=j {
                let v = dp[k - 1][i] + cost(i, j);
                if v > dp[k][j] {
                    dp[k][j] = v;
                    arg[k][j] = i;
                }
            }
        }
    }
    let mut starts = Vec::with_capacity(count);
    let mut j = BINS;
    for k in (2..=classes).rev() {
        let i = arg[k][j];
        starts.push(i);
        j = i;
    }
    starts.reverse();
    starts
        .into_iter()
        .map(|i| (i as f64 - 0.5) / 255.0)
        .collect()
}
