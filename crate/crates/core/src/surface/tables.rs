//! Marching-cubes case table, derived once from cube topology.
//!
//! Corner `c` sits at `(c & 1 ^ (c >> 1) & 1, (c >> 1) & 1, (c >> 2) & 1)`, i.e. the
//! usual ordering 0:(0,0,0) 1:(1,0,0) 2:(1,1,0) 3:(0,1,0) and the same shifted
//! up in z for 4..8. Edges 0..4 ring the bottom face, 4..8 the top, 8..12 are
//! vertical. For each of the 256 inside/outside corner masks the isosurface
//! polygons are traced across the six faces; on a face with alternating signs
//! the inside corners are always cut off separately. Since that decision
//! depends only on the face itself, neighbouring cells agree on shared faces
//! and the extracted surface has no cracks.

use std::sync::OnceLock;

pub const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

pub const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

const FACES: [[usize; 4]; 6] = [
    [0, 1, 2, 3],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [3, 2, 6, 7],
    [0, 3, 7, 4],
    [1, 2, 6, 5],
];

/// Triangles (as edge triples) for every corner mask; bit `c` set means corner
/// `c` is inside (below the iso value). Triangles are wound so their normal
/// points from inside to outside.
pub fn triangle_table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(build)
}

/// Bitmask of cut edges per case.
pub fn edge_mask(case: usize) -> u16 {
    EDGES
        .iter()
        .enumerate()
        .filter(|(_, [a, b])| (case >> a) & 1 != (case >> b) & 1)
        .fold(0, |m, (e, _)| m | (1 << e))
}

fn corner_pos(c: usize) -> [f64; 3] {
    CORNERS[c].map(|v| v as f64)
}

fn edge_of(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
        .expect("adjacent corners share an edge")
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Faces reordered counter-clockwise as seen from outside the cube.
fn oriented_faces() -> [[usize; 4]; 6] {
    FACES.map(|f| {
        let p: Vec<[f64; 3]> = f.iter().map(|&c| corner_pos(c)).collect();
        let n = cross(sub(p[1], p[0]), sub(p[2], p[1]));
        let center = [0.5; 3];
        let fc = [
            (p[0][0] + p[2][0]) / 2.0,
            (p[0][1] + p[2][1]) / 2.0,
            (p[0][2] + p[2][2]) / 2.0,
        ];
        if dot(n, sub(fc, center)) > 0.0 {
            f
        } else {
            [f[3], f[2], f[1], f[0]]
        }
    })
}

fn edge_mid(e: usize) -> [f64; 3] {
    let [a, b] = EDGES[e];
    let (pa, pb) = (corner_pos(a), corner_pos(b));
    [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0, (pa[2] + pb[2]) / 2.0]
}

fn trace(case: usize, faces: &[[usize; 4]; 6]) -> Vec<Vec<usize>> {
    let inside = |c: usize| (case >> c) & 1 == 1;
    // next[e] = edge following e along the polygon boundary.
    let mut next = [usize::MAX; 12];
    for f in faces {
        let mut crossings = Vec::new();
        for k in 0..4 {
            let (a, b) = (f[k], f[(k + 1) % 4]);
            if inside(a) != inside(b) {
                // true: outside -> inside when walking the face boundary.
                crossings.push((edge_of(a, b), inside(b)));
            }
        }
        let n = crossings.len();
        for i in 0..n {
            let (e, enters) = crossings[i];
            if enters {
                let exit = (1..n)
                    .map(|d| crossings[(i + d) % n])
                    .find(|&(_, en)| !en)
                    .expect("crossings alternate");
                next[e] = exit.0;
            }
        }
    }
    let mut seen = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut l = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            l.push(e);
            e = next[e];
        }
        loops.push(l);
    }
    loops
}

fn build() -> [Vec<[u8; 3]>; 256] {
    let faces = oriented_faces();
    // Orientation reference: corner 0 alone inside, normal must point away from it.
    let reference = trace(1, &faces);
    let l = &reference[0];
    let n = cross(
        sub(edge_mid(l[1]), edge_mid(l[0])),
        sub(edge_mid(l[2]), edge_mid(l[0])),
    );
    let flip = dot(n, edge_mid(l[0])) < 0.0;
    std::array::from_fn(|case| {
        let mut tris = Vec::new();
        for l in trace(case, &faces) {
            for k in 1..l.len() - 1 {
                let t = [l[0] as u8, l[k] as u8, l[k + 1] as u8];
                tris.push(if flip { [t[0], t[2], t[1]] } else { t });
            }
        }
        tris
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases_are_empty() {
        let t = triangle_table();
        assert!(t[0].is_empty());
        assert!(t[255].is_empty());
    }

    #[test]
    fn single_corner_is_one_triangle() {
        let t = triangle_table();
        for c in 0..8 {
            assert_eq!(t[1 << c].len(), 1);
            assert_eq!(t[255 ^ (1 << c)].len(), 1);
        }
    }

    #[test]
    fn triangles_use_only_cut_edges_and_each_cut_edge() {
        let t = triangle_table();
        for case in 0..256 {
            let mask = edge_mask(case);
            let mut used = 0u16;
            for tri in &t[case] {
                for &e in tri {
                    assert!(mask & (1 << e) != 0, "case {case} uses uncut edge {e}");
                    used |= 1 << e;
                }
            }
            assert_eq!(used, mask, "case {case}");
        }
    }

    #[test]
    fn known_case_sizes() {
        let t = triangle_table();
        // Two adjacent corners: a quad.
        assert_eq!(t[0b0000_0011].len(), 2);
        // Opposite corners of the cube: two separate triangles.
        assert_eq!(t[0b0100_0001].len(), 2);
        // Whole bottom face inside: a quad.
        assert_eq!(t[0b0000_1111].len(), 2);
    }
}
