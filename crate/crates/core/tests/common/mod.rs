//! Independent oracles and random case generators shared by the integration
//! and acceptance tests. The oracles never call into the library's solver or
//! sensitivity code.

#![allow(dead_code)]

use gridguard::state::make_system_state;
use gridguard::synth::{balanced_injections, connected_topology, meshed_grid, MeshSpec};
use gridguard::{Grid, SystemState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random connected topology on 3 to 20 buses with balanced injections.
pub fn random_case(seed: u64) -> (Grid, Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3 + (seed % 18) as usize;
    let extra = (seed / 18 % (n as u64 + 1)) as usize;
    let g = meshed_grid(
        MeshSpec {
            buses: n,
            lines: n - 1 + extra,
            generators: 2,
            loads: 2,
        },
        &mut rng,
    );
    let p = balanced_injections(&g, &mut rng);
    let s = connected_topology(&g, 0.2, &mut rng);
    (g, p, s)
}

/// Random grid and operating point with limits near the flows, so that
/// some lines sit close to or over their limit.
pub fn loaded_case(seed: u64) -> (Grid, SystemState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=16);
    let lines = rng.random_range(n - 1..=(2 * n).min(n * (n - 1) / 2));
    let mut g = meshed_grid(
        MeshSpec {
            buses: n,
            lines,
            generators: 3,
            loads: 4,
        },
        &mut rng,
    );
    let loads: Vec<f64> = (0..4).map(|_| rng.random_range(5.0..40.0)).collect();
    let mut gens: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..60.0)).collect();
    gens[g.slack_generator()] = 0.0;
    gens[g.slack_generator()] = loads.iter().sum::<f64>() - gens.iter().sum::<f64>();
    let status: Vec<bool> = (0..g.n_lines()).map(|_| rng.random::<f64>() > 0.1).collect();
    let status = if reachable(&g, &status, 0).iter().all(|&r| r) {
        status
    } else {
        vec![true; g.n_lines()]
    };
    let p = g.injections(&gens, &loads).unwrap();
    let flows = dc_flows(&g, &p, &status).unwrap();
    for (line, f) in g.lines.iter_mut().zip(&flows) {
        line.flow_limit = (f.abs() * rng.random_range(0.7..1.6)).max(1e-3);
    }
    let cooldown: Vec<u32> = (0..g.n_lines()).map(|_| if rng.random::<f64>() < 0.2 { 1 } else { 0 }).collect();
    let state = make_system_state(&g, gens, loads, status, vec![0; g.n_lines()], cooldown, 1).unwrap();
    (g, state)
}

/// DC flows by Gaussian elimination with partial pivoting on the reduced
/// susceptance matrix of the slack island. `None` if any bus with nonzero
/// injection sits outside the slack island.
pub fn dc_flows(grid: &Grid, p: &[f64], status: &[bool]) -> Option<Vec<f64>> {
    let n = grid.n_buses();
    let slack = grid.slack_index();
    let reach = reachable(grid, status, slack);
    if (0..n).any(|i| !reach[i] && p[i].abs() > 1e-12) {
        return None;
    }
    let idx: Vec<usize> = (0..n).filter(|&i| i != slack && reach[i]).collect();
    let pos = |i: usize| idx.iter().position(|&j| j == i);
    let m = idx.len();
    let mut a = vec![vec![0.0; m + 1]; m];
    for (l, line) in grid.lines.iter().enumerate() {
        if !status[l] {
            continue;
        }
        let (f, t) = grid.line_ends(l);
        let b = 1.0 / line.reactance;
        for (x, y) in [(f, t), (t, f)] {
            if let Some(r) = pos(x) {
                a[r][r] += b;
                if let Some(c) = pos(y) {
                    a[r][c] -= b;
                }
            }
        }
    }
    for (r, &i) in idx.iter().enumerate() {
        a[r][m] = p[i];
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        a.swap(col, piv);
        let d = a[col][col];
        if d.abs() < 1e-14 {
            return None;
        }
        for r in 0..m {
            if r != col {
                let k = a[r][col] / d;
                if k != 0.0 {
                    for c in col..=m {
                        a[r][c] -= k * a[col][c];
                    }
                }
            }
        }
    }
    let mut theta = vec![0.0; n];
    for (r, &i) in idx.iter().enumerate() {
        theta[i] = a[r][m] / a[r][r];
    }
    Some(
        grid.lines
            .iter()
            .enumerate()
            .map(|(l, line)| {
                if !status[l] {
                    return 0.0;
                }
                let (f, t) = grid.line_ends(l);
                (theta[f] - theta[t]) / line.reactance
            })
            .collect(),
    )
}

pub fn reachable(grid: &Grid, status: &[bool], from: usize) -> Vec<bool> {
    let mut seen = vec![false; grid.n_buses()];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(b) = stack.pop() {
        for l in 0..grid.n_lines() {
            if !status[l] {
                continue;
            }
            let (f, t) = grid.line_ends(l);
            let other = if f == b {
                t
            } else if t == b {
                f
            } else {
                continue;
            };
            if !seen[other] {
                seen[other] = true;
                stack.push(other);
            }
        }
    }
    seen
}

fn components(grid: &Grid, status: &[bool]) -> usize {
    let mut seen = vec![false; grid.n_buses()];
    let mut count = 0;
    for b in 0..grid.n_buses() {
        if !seen[b] {
            count += 1;
            for (i, r) in reachable(grid, status, b).into_iter().enumerate() {
                seen[i] |= r;
            }
        }
    }
    count
}

/// A line is a bridge iff dropping it increases the number of components.
pub fn bridges(grid: &Grid, status: &[bool]) -> Vec<bool> {
    let base = components(grid, status);
    (0..grid.n_lines())
        .map(|l| {
            if !status[l] {
                return false;
            }
            let mut s = status.to_vec();
            s[l] = false;
            components(grid, &s) > base
        })
        .collect()
}

/// Effective removal set by exhaustive re-solve: every operational,
/// non-bridge, off-cooldown line other than the most loaded one whose removal
/// brings that line within its limit and overloads no other line.
pub fn effective_removals_by_resolve(
    grid: &Grid,
    p: &[f64],
    status: &[bool],
    cooldown: &[u32],
) -> Vec<usize> {
    let flows = dc_flows(grid, p, status).expect("base case solves");
    let mut l_max = None;
    let mut best = 0.0;
    for l in 0..grid.n_lines() {
        if status[l] {
            let rho = flows[l].abs() / grid.lines[l].flow_limit;
            if l_max.is_none() || rho > best {
                best = rho;
                l_max = Some(l);
            }
        }
    }
    let Some(m) = l_max else { return Vec::new() };
    let br = bridges(grid, status);
    (0..grid.n_lines())
        .filter(|&k| status[k] && cooldown[k] == 0 && k != m && !br[k])
        .filter(|&k| {
            let mut s = status.to_vec();
            s[k] = false;
            let after = dc_flows(grid, p, &s).expect("non-bridge outage solves");
            (0..grid.n_lines()).all(|l| !s[l] || after[l].abs() <= grid.lines[l].flow_limit)
        })
        .collect()
}

/// Zero-sum vectors in {-1,0,1}^k, excluding zero, by brute force.
pub fn brute_force_combos(k: usize) -> Vec<Vec<i8>> {
    let mut out = Vec::new();
    for code in 0..3usize.pow(k as u32) {
        let mut c = code;
        let mut v = vec![0i8; k];
        for x in v.iter_mut().rev() {
            *x = (c % 3) as i8 - 1;
            c /= 3;
        }
        if v.iter().any(|&x| x != 0) && v.iter().map(|&x| x as i32).sum::<i32>() == 0 {
            out.push(v);
        }
    }
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Largest relative gap between the analytic gradient and central finite
/// differences over every parameter of a small network and batch.
pub fn gradient_check(seed: u64) -> f64 {
    use gridguard::dqn::{Dims, QNetwork, Sample};
    use gridguard::Exec;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims {
        kappa: 2,
        features: 3,
        actions: 4,
    };
    let net = QNetwork::seeded(dims, seed);
    let states: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..dims.input()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let batch: Vec<Sample<'_>> = states
        .iter()
        .map(|s| Sample {
            state: s,
            action: rng.random_range(0..dims.actions),
            target: rng.random_range(-2.0..2.0),
            weight: rng.random_range(0.1..1.0),
        })
        .collect();
    let (g, _) = net.gradient(&batch, Exec::Sequential).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..g.len() {
        let mut p = net.clone();
        p.params_mut()[i] += h;
        let up = p.loss(&batch).unwrap();
        p.params_mut()[i] -= 2.0 * h;
        let down = p.loss(&batch).unwrap();
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6));
    }
    worst
}

/// Ratio of draws of a boosted index to the mean draw count of the others,
/// with alpha = 1 and the boosted priority 100 times the rest.
pub fn boosted_sampling_ratio(seed: u64, size: usize, draws: usize) -> f64 {
    use gridguard::dqn::{ReplayBuffer, ReplayConfig, Transition};

    let mut buf = ReplayBuffer::new(ReplayConfig {
        capacity: size,
        alpha: 1.0,
        ..ReplayConfig::default()
    });
    for i in 0..size {
        buf.push(Transition {
            s: vec![i as f64],
            a: 0,
            r: 0.0,
            s_next: vec![i as f64],
            end: true,
        })
        .unwrap();
        buf.set_priority(i, 1.0).unwrap();
    }
    let boosted = size / 2;
    buf.set_priority(boosted, 100.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; size];
    for _ in 0..draws {
        counts[buf.sample_index(&mut rng)] += 1;
    }
    let others = (draws - counts[boosted]) as f64 / (size - 1) as f64;
    counts[boosted] as f64 / others
}
