//! Marker tracking between a rest and a deformed marker set.

use serde::{Deserialize, Serialize};

use crate::conversion::MarkerSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerMatch {
    pub rest_index: usize,
    pub deformed_index: usize,
    pub rest_uv: (f64, f64),
    pub deformed_uv: (f64, f64),
    pub du: f64,
    pub dv: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    pub matches: Vec<MarkerMatch>,
    pub unmatched_rest: usize,
    pub unmatched_deformed: usize,
}

/// Globally optimal one-to-one assignment of rest to deformed markers.
///
/// Pairs farther apart than `gate_px` are forbidden. Leaving a marker
/// unmatched costs `gate_px`, so any admissible pair is preferred to leaving
/// both ends unmatched, and among assignments the total Euclidean distance of
/// matched pairs plus that penalty is minimal.
pub fn track_markers(rest: &MarkerSet, deformed: &MarkerSet, gate_px: f64) -> DisplacementField {
    let n = rest.len();
    let m = deformed.len();
    if n == 0 || m == 0 {
        return DisplacementField {
            matches: Vec::new(),
            unmatched_rest: n,
            unmatched_deformed: m,
        };
    }
    let size = n + m;
    let forbidden = 1e9;
    let mut cost = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            cost[i * size + j] = match (i < n, j < m) {
                (true, true) => {
                    let (a, b) = (rest.centroids[i], deformed.centroids[j]);
                    let d = (b.0 - a.0).hypot(b.1 - a.1);
                    if d <= gate_px {
                        d
                    } else {
                        forbidden
                    }
                }
                (true, false) | (false, true) => gate_px,
                (false, false) => 0.0,
            };
        }
    }
    let assign = hungarian(&cost, size);

    let mut field = DisplacementField::default();
    let mut used_deformed = vec![false; m];
    for (i, &j) in assign.iter().enumerate().take(n) {
        if j < m && cost[i * size + j] < forbidden {
            let (a, b) = (rest.centroids[i], deformed.centroids[j]);
            used_deformed[j] = true;
            field.matches.push(MarkerMatch {
                rest_index: i,
                deformed_index: j,
                rest_uv: a,
                deformed_uv: b,
                du: b.0 - a.0,
                dv: b.1 - a.1,
            });
        } else {
            field.unmatched_rest += 1;
        }
    }
    field.unmatched_deformed = used_deformed.iter().filter(|u| !**u).count();
    field
}

/// Minimum-cost perfect assignment on a square matrix (row-major), using the
/// shortest augmenting path method with dual potentials. Returns the column
/// assigned to every row.
pub fn hungarian(cost: &[f64], size: usize) -> Vec<usize> {
    // 1-based arrays with a virtual column 0
    let inf = f64::INFINITY;
    let mut u = vec![0.0; size + 1];
    let mut v = vec![0.0; size + 1];
    let mut p = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=size {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * size + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; size];
    for j in 1..=size {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}
