//! Synthetic grids: random meshed networks for property tests and a
//! 36-bus, 59-line test system whose dispatchable units follow published
//! ramp/capacity/cost data.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grid::{Generator, Grid, Line, Load};

/// Shape of a random meshed grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSpec {
    pub buses: usize,
    pub lines: usize,
    pub generators: usize,
    pub loads: usize,
}

/// Random connected grid: a random spanning tree plus distinct extra
/// branches. Bus 1 is the slack and hosts generator 1.
pub fn meshed_grid(spec: MeshSpec, rng: &mut impl Rng) -> Grid {
    let n = spec.buses.max(2);
    let max_lines = n * (n - 1) / 2;
    let l = spec.lines.clamp(n - 1, max_lines);
    let mut pairs = std::collections::BTreeSet::new();
    let mut order: Vec<usize> = (2..=n).collect();
    order.shuffle(rng);
    let mut placed = vec![1usize];
    for b in order {
        let a = placed[rng.random_range(0..placed.len())];
        pairs.insert((a.min(b), a.max(b)));
        placed.push(b);
    }
    while pairs.len() < l {
        let a = rng.random_range(1..=n);
        let b = rng.random_range(1..=n);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
    pairs.shuffle(rng);
    let lines = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let (from, to) = if rng.random::<bool>() { (a, b) } else { (b, a) };
            Line {
                id: i + 1,
                from_bus: from,
                to_bus: to,
                reactance: (rng.random_range(0.05..1.0) * 1e4_f64).round() / 1e4,
                flow_limit: 100.0,
                switch_cost: 1.0,
            }
        })
        .collect();
    let generators = (0..spec.generators.max(1))
        .map(|j| Generator {
            id: j + 1,
            bus: if j == 0 { 1 } else { rng.random_range(1..=n) },
            p_min: 0.0,
            p_max: 100.0,
            ramp_limit: rng.random_range(1.0..10.0),
            cost_per_mw: rng.random_range(10.0..50.0),
            dispatchable: true,
        })
        .collect();
    let loads = (0..spec.loads)
        .map(|k| Load {
            id: k + 1,
            bus: rng.random_range(1..=n),
        })
        .collect();
    Grid::from_parts(100.0, 1, (1..=n).collect(), lines, generators, loads)
        .expect("random construction is valid")
}

/// Injection vector summing to zero: random values on every non-slack bus,
/// the slack bus takes the negative sum.
pub fn balanced_injections(grid: &Grid, rng: &mut impl Rng) -> Vec<f64> {
    let slack = grid.slack_index();
    let mut p: Vec<f64> = (0..grid.n_buses()).map(|_| rng.random_range(-1.0..1.0)).collect();
    p[slack] = 0.0;
    let sum: f64 = p.iter().sum();
    p[slack] = -sum;
    p
}

/// Random status vector with each line off with probability `p_off`,
/// restricted to topologies that keep every bus connected.
pub fn connected_topology(grid: &Grid, p_off: f64, rng: &mut impl Rng) -> Vec<bool> {
    let mut status = vec![true; grid.n_lines()];
    let mut order: Vec<usize> = (0..grid.n_lines()).collect();
    order.shuffle(rng);
    for l in order {
        if rng.random::<f64>() < p_off {
            status[l] = false;
            if grid.islands(&status).len() > 1 {
                status[l] = true;
            }
        }
    }
    status
}

/// Ramp (MW/step), capacity (MW) and cost ($/MW) of the five redispatch
/// units of the 36-bus system.
pub const GRID36_DISPATCH: [(f64, f64, f64); 5] = [
    (10.4, 250.0, 36.0),
    (9.9, 350.0, 40.0),
    (8.5, 300.0, 48.0),
    (4.3, 150.0, 46.0),
    (2.8, 100.0, 44.0),
];

/// Redispatch step used with the 36-bus system.
pub const GRID36_DELTA: f64 = 2.0;

/// The 36-bus test system: 59 lines, 10 generators, 37 loads. Generators
/// 1–5 are the redispatch units, 6 is the slack unit at bus 1, and 7–10
/// are non-dispatchable. Line limits sit at 1.6× the flows of a nominal
/// operating point (at least 20 MW).
pub fn grid36() -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let base = meshed_grid(
        MeshSpec {
            buses: 36,
            lines: 59,
            generators: 1,
            loads: 0,
        },
        &mut rng,
    );
    let mut gen_buses: Vec<usize> = (2..=36).collect();
    gen_buses.shuffle(&mut rng);
    let mut generators = Vec::new();
    for (j, &(ramp, p_max, cost)) in GRID36_DISPATCH.iter().enumerate() {
        generators.push(Generator {
            id: j + 1,
            bus: gen_buses[j],
            p_min: 0.0,
            p_max,
            ramp_limit: ramp,
            cost_per_mw: cost,
            dispatchable: true,
        });
    }
    generators.push(Generator {
        id: 6,
        bus: 1,
        p_min: 0.0,
        p_max: 1500.0,
        ramp_limit: 20.0,
        cost_per_mw: 30.0,
        dispatchable: true,
    });
    for j in 0..4 {
        generators.push(Generator {
            id: 7 + j,
            bus: gen_buses[5 + j],
            p_min: 0.0,
            p_max: 80.0,
            ramp_limit: 1.0,
            cost_per_mw: 0.0,
            dispatchable: false,
        });
    }
    let mut loads: Vec<Load> = (1..=36).map(|b| Load { id: b, bus: b }).collect();
    loads.push(Load {
        id: 37,
        bus: rng.random_range(2..=36),
    });

    let mut grid = Grid::from_parts(100.0, 1, base.buses.clone(), base.lines.clone(), generators, loads)
        .expect("36-bus construction is valid");

    // nominal point: loads around 25 MW, non-slack units at 40% of capacity
    let demand: Vec<f64> = (0..grid.n_loads()).map(|_| rng.random_range(15.0..35.0)).collect();
    let mut gen: Vec<f64> = grid.generators.iter().map(|g| 0.4 * g.p_max).collect();
    let slack = grid.slack_generator();
    gen[slack] = 0.0;
    gen[slack] = demand.iter().sum::<f64>() - gen.iter().sum::<f64>();
    let p = grid.injections(&gen, &demand).expect("dimensions match");
    let flows = grid
        .solve_dc(&p, &vec![true; grid.n_lines()])
        .expect("nominal point solves")
        .flows;
    for (line, f) in grid.lines.iter_mut().zip(flows) {
        line.flow_limit = (1.6 * f.abs()).max(20.0).round();
    }
    grid
}
