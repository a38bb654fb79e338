//! Uniform-grid spatial index for neighbour queries on planar point sets.

use std::collections::HashMap;

use crate::measure::Point;

pub struct GridIndex<'a> {
    pts: &'a [Point],
    cell: f64,
    cells: HashMap<(i64, i64), Vec<u32>>,
    key_box: ((i64, i64), (i64, i64)),
}

impl<'a> GridIndex<'a> {
    pub fn new(pts: &'a [Point]) -> Self {
        let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in pts {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let ext = (hi.x - lo.x).max(hi.y - lo.y);
        let n = pts.len().max(1) as f64;
        let cell = if ext > 0.0 { ext / n.sqrt() } else { 1.0 };
        let mut cells: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in pts.iter().enumerate() {
            cells.entry(Self::key(cell, *p)).or_default().push(i as u32);
        }
        let key_box = (Self::key(cell, lo), Self::key(cell, hi));
        GridIndex { pts, cell, cells, key_box }
    }

    fn key(cell: f64, p: Point) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    /// The `k` nearest other points of `i`, closest first.
    pub fn knn(&self, i: usize, k: usize) -> Vec<(f64, usize)> {
        self.search(self.pts[i], Some(i), k)
    }

    /// The `k` nearest indexed points of an arbitrary query point.
    pub fn query(&self, p: Point, k: usize) -> Vec<(f64, usize)> {
        self.search(p, None, k)
    }

    fn search(&self, p: Point, skip: Option<usize>, k: usize) -> Vec<(f64, usize)> {
        if k == 0 {
            return Vec::new();
        }
        let (cx, cy) = Self::key(self.cell, p);
        let (lo, hi) = self.key_box;
        let limit = (cx - lo.0).abs().max((cx - hi.0).abs()).max((cy - lo.1).abs()).max((cy - hi.1).abs());
        // rings closer than the key box are empty
        let gap = (lo.0 - cx).max(cx - hi.0).max(lo.1 - cy).max(cy - hi.1).max(0);
        let mut best: Vec<(f64, usize)> = Vec::new();
        let visit = |x: i64, y: i64, best: &mut Vec<(f64, usize)>| {
            if let Some(v) = self.cells.get(&(x, y)) {
                for &j in v {
                    let j = j as usize;
                    if Some(j) != skip {
                        best.push((p.dist(self.pts[j]), j));
                    }
                }
            }
        };
        let mut ring = gap;
        loop {
            let (x0, x1) = ((cx - ring).max(lo.0), (cx + ring).min(hi.0));
            let (y0, y1) = ((cy - ring).max(lo.1), (cy + ring).min(hi.1));
            for y in [cy - ring, cy + ring] {
                if y >= lo.1 && y <= hi.1 {
                    for x in x0..=x1 {
                        visit(x, y, &mut best);
                    }
                }
                if ring == 0 {
                    break;
                }
            }
            for x in [cx - ring, cx + ring] {
                if ring > 0 && x >= lo.0 && x <= hi.0 {
                    for y in y0.max(cy - ring + 1)..=y1.min(cy + ring - 1) {
                        visit(x, y, &mut best);
                    }
                }
            }
            if best.len() >= k {
                best.sort_by(|a, b| a.0.total_cmp(&b.0));
                best.truncate(k);
                // Every unseen point is farther than `ring · cell`.
                if best[k - 1].0 <= ring as f64 * self.cell {
                    return best;
                }
            }
            ring += 1;
            if ring > limit {
                best.sort_by(|a, b| a.0.total_cmp(&b.0));
                best.truncate(k);
                return best;
            }
        }
    }
}

pub fn nearest_neighbor_distances(pts: &[Point]) -> Vec<f64> {
    let idx = GridIndex::new(pts);
    (0..pts.len()).map(|i| idx.knn(i, 1).first().map_or(f64::INFINITY, |b| b.0)).collect()
}

/// KD-tree over weighted points answering "which `v` maximize `value_v − |p − x_v|`".
pub struct ValueTree {
    pts: Vec<Point>,
    vals: Vec<f64>,
    idx: Vec<u32>,
    nodes: Vec<Node>,
}

struct Node {
    lo: Point,
    hi: Point,
    max: f64,
    start: u32,
    end: u32,
    kids: Option<(u32, u32)>,
}

const LEAF: usize = 8;

impl ValueTree {
    pub fn new(pts: &[Point], vals: &[f64]) -> Self {
        let mut t = ValueTree { pts: pts.to_vec(), vals: vals.to_vec(), idx: (0..pts.len() as u32).collect(), nodes: Vec::new() };
        if !pts.is_empty() {
            t.build(0, pts.len());
        }
        t
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        let mut max = f64::NEG_INFINITY;
        for &i in &self.idx[start..end] {
            let p = self.pts[i as usize];
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
            max = max.max(self.vals[i as usize]);
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { lo, hi, max, start: start as u32, end: end as u32, kids: None });
        if end - start > LEAF {
            let mid = (start + end) / 2;
            let pts = &self.pts;
            let slice = &mut self.idx[start..end];
            if hi.x - lo.x >= hi.y - lo.y {
                slice.select_nth_unstable_by(mid - start, |a, b| pts[*a as usize].x.total_cmp(&pts[*b as usize].x));
            } else {
                slice.select_nth_unstable_by(mid - start, |a, b| pts[*a as usize].y.total_cmp(&pts[*b as usize].y));
            }
            let l = self.build(start, mid);
            let r = self.build(mid, end);
            self.nodes[id as usize].kids = Some((l, r));
        }
        id
    }

    /// Up to `k` points with `value_v − |p − x_v| > floor`, best first, as `(score, index)`.
    pub fn top_above(&self, p: Point, floor: f64, k: usize) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if self.nodes.is_empty() || k == 0 {
            return out;
        }
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            let bar = if out.len() == k { out[k - 1].0.max(floor) } else { floor };
            let dx = (node.lo.x - p.x).max(p.x - node.hi.x).max(0.0);
            let dy = (node.lo.y - p.y).max(p.y - node.hi.y).max(0.0);
            if node.max - dx.hypot(dy) <= bar {
                continue;
            }
            match node.kids {
                Some((l, r)) => {
                    stack.push(l);
                    stack.push(r);
                }
                None => {
                    for &i in &self.idx[node.start as usize..node.end as usize] {
                        let i = i as usize;
                        let score = self.vals[i] - p.dist(self.pts[i]);
                        let bar = if out.len() == k { out[k - 1].0.max(floor) } else { floor };
                        if score > bar {
                            let at = out.partition_point(|o| o.0 >= score);
                            out.insert(at, (score, i));
                            out.truncate(k);
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_matches_brute_force() {
        let pts: Vec<Point> = (0..300)
            .map(|i| {
                let t = i as f64 * 0.37;
                Point::new((t * 1.3).sin() * 3.0 + (i % 7) as f64 * 0.01, (t * 0.7).cos() * (i % 5) as f64)
            })
            .collect();
        let idx = GridIndex::new(&pts);
        for i in [0, 17, 150, 299] {
            let got = idx.knn(i, 6);
            let mut all: Vec<(f64, usize)> =
                (0..pts.len()).filter(|&j| j != i).map(|j| (pts[i].dist(pts[j]), j)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (g, e) in got.iter().zip(&all) {
                assert_eq!(g.0, e.0);
            }
        }
    }

    #[test]
    fn far_queries_match_brute_force() {
        let pts: Vec<Point> = (0..2000).map(|i| Point::new(i as f64 * 1e-3, ((i * 37) % 11) as f64 * 1e-4)).collect();
        let idx = GridIndex::new(&pts);
        for q in [Point::new(1e4, -3e3), Point::new(-50.0, 0.0), Point::new(0.7, 900.0), Point::new(0.5, 0.0)] {
            let got = idx.query(q, 5);
            let mut all: Vec<f64> = pts.iter().map(|p| q.dist(*p)).collect();
            all.sort_by(f64::total_cmp);
            assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), all[..5].to_vec());
        }
    }

    #[test]
    fn value_tree_matches_brute_force() {
        let pts: Vec<Point> = (0..500).map(|i| Point::new((i as f64 * 0.71).sin() * 4.0, (i as f64 * 1.13).cos() * 2.0)).collect();
        let vals: Vec<f64> = (0..500).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let tree = ValueTree::new(&pts, &vals);
        for q in [Point::new(0.0, 0.0), Point::new(3.0, -1.0), Point::new(10.0, 10.0)] {
            for floor in [-5.0, 0.0, 1.5] {
                let got = tree.top_above(q, floor, 4);
                let mut all: Vec<(f64, usize)> =
                    (0..pts.len()).map(|j| (vals[j] - q.dist(pts[j]), j)).filter(|s| s.0 > floor).collect();
                all.sort_by(|a, b| b.0.total_cmp(&a.0));
                all.truncate(4);
                assert_eq!(got.len(), all.len());
                for (g, e) in got.iter().zip(&all) {
                    assert_eq!(g.0, e.0);
                }
            }
        }
    }
}
