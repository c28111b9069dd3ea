//! Partitioning of a spiking network into tile-sized clusters, placement on a mesh of
//! tiles, and spike/routing energy accounting.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::SnnNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileGrid {
    pub rows: usize,
    pub cols: usize,
    pub max_neurons: usize,
    /// Incoming synapses a tile can host.
    pub max_synapses: usize,
    /// pJ per spike.
    pub e_spike: f64,
    /// pJ per tile boundary crossed.
    pub e_hop: f64,
}

impl Default for TileGrid {
    fn default() -> Self {
        TileGrid {
            rows: 4,
            cols: 4,
            max_neurons: 256,
            max_synapses: 65_536,
            e_spike: 23.6,
            e_hop: 3.0,
        }
    }
}

impl TileGrid {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.max_neurons == 0 || self.max_synapses == 0 {
            return Err(Error::InvalidArgument("tile grid dimensions and capacities must be >= 1".into()));
        }
        if !(self.e_spike > 0.0 && self.e_hop > 0.0) {
            return Err(Error::InvalidArgument("energy constants must be positive".into()));
        }
        Ok(())
    }

    pub fn tiles(&self) -> usize {
        self.rows * self.cols
    }

    pub fn coords(&self, tile: usize) -> (usize, usize) {
        (tile / self.cols, tile % self.cols)
    }

    pub fn distance(&self, a: usize, b: usize) -> u32 {
        let (ra, ca) = self.coords(a);
        let (rb, cb) = self.coords(b);
        (ra.abs_diff(rb) + ca.abs_diff(cb)) as u32
    }
}

/// Greedy packing in id (topological) order: a new cluster opens whenever adding the
/// next neuron would exceed the neuron or incoming-synapse capacity.
pub fn partition(net: &SnnNetwork, grid: &TileGrid) -> Result<Vec<Vec<u32>>> {
    grid.validate()?;
    let fan_in = net.fan_in();
    let mut clusters: Vec<Vec<u32>> = Vec::new();
    let mut cur: Vec<u32> = Vec::new();
    let mut syn = 0usize;
    for (i, &f) in fan_in.iter().enumerate() {
        let f = f as usize;
        if f > grid.max_synapses {
            return Err(Error::Capacity(format!("neuron {i} has {f} synapses, a tile holds {}", grid.max_synapses)));
        }
        if !cur.is_empty() && (cur.len() + 1 > grid.max_neurons || syn + f > grid.max_synapses) {
            clusters.push(std::mem::take(&mut cur));
            syn = 0;
        }
        cur.push(i as u32);
        syn += f;
    }
    if !cur.is_empty() {
        clusters.push(cur);
    }
    if clusters.len() > grid.tiles() {
        return Err(Error::Capacity(format!(
            "network needs {} clusters but the grid has {} tiles",
            clusters.len(),
            grid.tiles()
        )));
    }
    Ok(clusters)
}

pub fn cluster_index(net: &SnnNetwork, clusters: &[Vec<u32>]) -> Vec<u32> {
    let mut of = vec![u32::MAX; net.neurons.len()];
    for (c, members) in clusters.iter().enumerate() {
        for &n in members {
            of[n as usize] = c as u32;
        }
    }
    of
}

/// Distinct foreign destination clusters of every neuron.
fn destinations(net: &SnnNetwork, cluster_of: &[u32]) -> Vec<Vec<u32>> {
    let mut dest: Vec<Vec<u32>> = vec![Vec::new(); net.neurons.len()];
    for s in &net.synapses {
        let (a, b) = (cluster_of[s.pre as usize], cluster_of[s.post as usize]);
        if a != b {
            dest[s.pre as usize].push(b);
        }
    }
    for d in dest.iter_mut() {
        d.sort_unstable();
        d.dedup();
    }
    dest
}

/// `traffic[i][j]`: spikes sent from cluster `i` to cluster `j`, given per-neuron spike
/// counts (each spike is sent once per distinct destination cluster).
pub fn traffic(net: &SnnNetwork, clusters: &[Vec<u32>], counts: &[u64]) -> Result<Vec<Vec<f64>>> {
    if counts.len() != net.neurons.len() {
        return Err(Error::Shape(format!("{} counts for {} neurons", counts.len(), net.neurons.len())));
    }
    let of = cluster_index(net, clusters);
    let mut t = vec![vec![0.0; clusters.len()]; clusters.len()];
    for (n, d) in destinations(net, &of).iter().enumerate() {
        for &c in d {
            t[of[n] as usize][c as usize] += counts[n] as f64;
        }
    }
    Ok(t)
}

/// `sum traffic(i, j) * distance(tile_i, tile_j)`.
pub fn placement_cost(grid: &TileGrid, traffic: &[Vec<f64>], tiles: &[usize]) -> f64 {
    let mut cost = 0.0;
    for (i, row) in traffic.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                cost += v * grid.distance(tiles[i], tiles[j]) as f64;
            }
        }
    }
    cost
}

pub const SWAP_PASSES: usize = 50;

/// Greedy placement by descending traffic, then pairwise swaps (including moves to free
/// tiles) accepted only when they strictly lower the cost. Returns the tile per cluster
/// and the cost after each accepted refinement step.
pub fn place(n_clusters: usize, grid: &TileGrid, traffic: &[Vec<f64>]) -> Result<(Vec<usize>, Vec<f64>)> {
    grid.validate()?;
    let n_tiles = grid.tiles();
    if n_clusters > n_tiles {
        return Err(Error::Capacity(format!("{n_clusters} clusters for {n_tiles} tiles")));
    }
    let volume: Vec<f64> = (0..n_clusters)
        .map(|i| (0..n_clusters).map(|j| traffic[i][j] + traffic[j][i]).sum())
        .collect();
    let mut order: Vec<usize> = (0..n_clusters).collect();
    order.sort_by(|&a, &b| volume[b].total_cmp(&volume[a]).then(a.cmp(&b)));

    let mut tile_of = vec![usize::MAX; n_clusters];
    let mut used = vec![false; n_tiles];
    let center = (grid.rows / 2) * grid.cols + grid.cols / 2;
    for &c in &order {
        let placed: Vec<usize> = (0..n_clusters).filter(|&o| tile_of[o] != usize::MAX).collect();
        let mut best: Option<(f64, u32, usize)> = None;
        for t in (0..n_tiles).filter(|&t| !used[t]) {
            let cost: f64 = placed
                .iter()
                .map(|&o| (traffic[c][o] + traffic[o][c]) * grid.distance(t, tile_of[o]) as f64)
                .sum();
            let key = (cost, grid.distance(t, center), t);
            if best.is_none_or(|b| (key.0, key.1, key.2) < (b.0, b.1, b.2)) {
                best = Some(key);
            }
        }
        let t = best.expect("free tile exists").2;
        tile_of[c] = t;
        used[t] = true;
    }

    let mut cost = placement_cost(grid, traffic, &tile_of);
    let mut history = vec![cost];
    for _ in 0..SWAP_PASSES {
        let mut improved = false;
        for a in 0..n_clusters {
            // swap with another cluster or move into a free tile
            for t in 0..n_tiles {
                if t == tile_of[a] {
                    continue;
                }
                let other = (0..n_clusters).find(|&b| tile_of[b] == t);
                let old = tile_of[a];
                tile_of[a] = t;
                if let Some(b) = other {
                    tile_of[b] = old;
                }
                let c = placement_cost(grid, traffic, &tile_of);
                if c < cost {
                    assert!(c <= *history.last().unwrap());
                    cost = c;
                    history.push(c);
                    improved = true;
                } else {
                    tile_of[a] = old;
                    if let Some(b) = other {
                        tile_of[b] = t;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok((tile_of, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileMapping {
    pub clusters: Vec<Vec<u32>>,
    pub cluster_of: Vec<u32>,
    /// Tile index per cluster.
    pub tile_of: Vec<usize>,
    pub traffic: Vec<Vec<f64>>,
    /// Routing cost per spike of each neuron: summed hop distance to its distinct
    /// foreign destination tiles.
    pub hop_cost: Vec<u32>,
    pub initial_cost: f64,
    pub final_cost: f64,
}

/// Partition, derive traffic from `counts` (structural fan-out when `None`), and place.
pub fn map(net: &SnnNetwork, grid: &TileGrid, counts: Option<&[u64]>) -> Result<TileMapping> {
    let clusters = partition(net, grid)?;
    let ones;
    let counts = match counts {
        Some(c) => c,
        None => {
            ones = vec![1u64; net.neurons.len()];
            &ones
        }
    };
    let traffic = traffic(net, &clusters, counts)?;
    let (tile_of, history) = place(clusters.len(), grid, &traffic)?;
    let cluster_of = cluster_index(net, &clusters);
    let hop_cost = hop_costs(net, grid, &cluster_of, &tile_of);
    Ok(TileMapping {
        clusters,
        cluster_of,
        tile_of,
        traffic,
        hop_cost,
        initial_cost: history[0],
        final_cost: *history.last().unwrap(),
    })
}

fn hop_costs(net: &SnnNetwork, grid: &TileGrid, cluster_of: &[u32], tile_of: &[usize]) -> Vec<u32> {
    destinations(net, cluster_of)
        .iter()
        .enumerate()
        .map(|(n, d)| {
            let own = tile_of[cluster_of[n] as usize];
            d.iter().map(|&c| grid.distance(own, tile_of[c as usize])).sum()
        })
        .collect()
}

/// Rebuild a mapping from its CSV export. Traffic is recomputed from `counts`
/// (structural fan-out when `None`); both cost fields hold the placement cost.
pub fn read_mapping_csv(path: &Path, net: &SnnNetwork, grid: &TileGrid, counts: Option<&[u64]>) -> Result<TileMapping> {
    grid.validate()?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != MAPPING_HEADER {
        return Err(Error::schema(path, format!("expected header {MAPPING_HEADER:?}, got {header:?}")));
    }
    let n = net.neurons.len();
    let mut cluster_of = vec![u32::MAX; n];
    let mut tile_of: Vec<Option<usize>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<usize> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::parse(path, line, format!("column {}: expected a non-negative integer", MAPPING_HEADER[i])))
        };
        let (id, c, row, col) = (field(0)?, field(1)?, field(2)?, field(3)?);
        if id >= n || cluster_of[id] != u32::MAX {
            return Err(Error::parse(path, line, format!("neuron {id} is out of range or repeated")));
        }
        if row >= grid.rows || col >= grid.cols {
            return Err(Error::parse(path, line, format!("tile ({row}, {col}) is outside the grid")));
        }
        let tile = row * grid.cols + col;
        if tile_of.len() <= c {
            tile_of.resize(c + 1, None);
        }
        match tile_of[c] {
            Some(t) if t != tile => return Err(Error::parse(path, line, format!("cluster {c} spans two tiles"))),
            _ => tile_of[c] = Some(tile),
        }
        cluster_of[id] = c as u32;
    }
    if let Some(id) = cluster_of.iter().position(|&c| c == u32::MAX) {
        return Err(Error::schema(path, format!("neuron {id} is not mapped")));
    }
    let tile_of: Vec<usize> = tile_of
        .into_iter()
        .enumerate()
        .map(|(c, t)| t.ok_or_else(|| Error::schema(path, format!("cluster {c} has no neurons"))))
        .collect::<Result<_>>()?;
    let mut seen = vec![false; grid.tiles()];
    for &t in &tile_of {
        if std::mem::replace(&mut seen[t], true) {
            return Err(Error::schema(path, "two clusters share a tile"));
        }
    }
    let mut clusters = vec![Vec::new(); tile_of.len()];
    for (id, &c) in cluster_of.iter().enumerate() {
        clusters[c as usize].push(id as u32);
    }
    let fan_in = net.fan_in();
    for (c, members) in clusters.iter().enumerate() {
        let syn: usize = members.iter().map(|&m| fan_in[m as usize] as usize).sum();
        if members.len() > grid.max_neurons || syn > grid.max_synapses {
            return Err(Error::Capacity(format!("cluster {c} exceeds the tile capacity")));
        }
    }
    let ones;
    let counts = match counts {
        Some(c) => c,
        None => {
            ones = vec![1u64; n];
            &ones
        }
    };
    let traffic = traffic(net, &clusters, counts)?;
    let cost = placement_cost(grid, &traffic, &tile_of);
    let hop_cost = hop_costs(net, grid, &cluster_of, &tile_of);
    Ok(TileMapping {
        clusters,
        cluster_of,
        tile_of,
        traffic,
        hop_cost,
        initial_cost: cost,
        final_cost: cost,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnnEnergy {
    pub spikes: f64,
    pub hops: f64,
    pub total_pj: f64,
}

impl SnnEnergy {
    pub fn per_inference(self, n: usize) -> Self {
        let k = 1.0 / n.max(1) as f64;
        SnnEnergy {
            spikes: self.spikes * k,
            hops: self.hops * k,
            total_pj: self.total_pj * k,
        }
    }
}

/// `S e_spike + H e_hop` for per-neuron spike counts.
pub fn energy(counts: &[u64], mapping: &TileMapping, grid: &TileGrid) -> Result<SnnEnergy> {
    if counts.len() != mapping.hop_cost.len() {
        return Err(Error::Shape(format!(
            "trace covers {} neurons but the mapping covers {}",
            counts.len(),
            mapping.hop_cost.len()
        )));
    }
    let spikes: u64 = counts.iter().sum();
    let hops: u64 = counts.iter().zip(&mapping.hop_cost).map(|(&c, &h)| c * h as u64).sum();
    Ok(SnnEnergy {
        spikes: spikes as f64,
        hops: hops as f64,
        total_pj: spikes as f64 * grid.e_spike + hops as f64 * grid.e_hop,
    })
}

pub const MAPPING_HEADER: [&str; 4] = ["neuron_id", "cluster_id", "tile_row", "tile_col"];
pub const ENERGY_HEADER: [&str; 5] = ["model", "accuracy", "spikes", "hops", "energy_pj"];

pub fn write_mapping_csv<W: Write>(mapping: &TileMapping, grid: &TileGrid, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MAPPING_HEADER)?;
    for (n, &c) in mapping.cluster_of.iter().enumerate() {
        let (r, col) = grid.coords(mapping.tile_of[c as usize]);
        w.write_record([n.to_string(), c.to_string(), r.to_string(), col.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<mapping csv>", e))?;
    Ok(())
}

/// Rows of `(model, accuracy, energy)`; `None` spike/hop fields are left empty.
pub fn write_energy_csv<W: Write>(rows: &[(String, f64, Option<SnnEnergy>, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ENERGY_HEADER)?;
    for (name, acc, e, pj) in rows {
        let (s, h) = e.map_or((String::new(), String::new()), |e| (e.spikes.to_string(), e.hops.to_string()));
        w.write_record([name.clone(), acc.to_string(), s, h, pj.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<energy csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::snn::{LayerInfo, Neuron, NeuronKind, Synapse};
    use proptest::prelude::*;
    use rand::Rng;

    fn chain(n: usize, extra: &[(u32, u32)]) -> SnnNetwork {
        let nr = |kind| Neuron { kind, threshold: 1.0, bias: 0.0, v_init: 0.0, leak: 1.0, layer: 0 };
        let mut synapses: Vec<Synapse> = (1..n as u32).map(|i| Synapse { pre: i - 1, post: i, weight: 1.0 }).collect();
        synapses.extend(extra.iter().map(|&(pre, post)| Synapse { pre, post, weight: 0.5 }));
        SnnNetwork {
            neurons: (0..n).map(|i| nr(if i == 0 { NeuronKind::Input } else { NeuronKind::If })).collect(),
            synapses,
            layers: vec![LayerInfo { name: "all".into(), start: 0, len: n as u32, lambda: 1.0 }],
            inputs: vec![0],
            outputs: vec![n as u32 - 1],
            v_th: 1.0,
        }
    }

    #[test]
    fn cluster_counts() {
        let net = chain(10, &[]);
        let g = TileGrid { max_neurons: 4, ..TileGrid::default() };
        assert_eq!(partition(&net, &g).unwrap().len(), 3);
        let g = TileGrid { max_neurons: 100, ..TileGrid::default() };
        assert_eq!(partition(&net, &g).unwrap().len(), 1);
        let g = TileGrid { rows: 1, cols: 2, max_neurons: 4, ..TileGrid::default() };
        assert!(matches!(partition(&net, &g), Err(Error::Capacity(_))));
        // synapse capacity binds first
        let g = TileGrid { max_neurons: 100, max_synapses: 3, ..TileGrid::default() };
        let cl = partition(&net, &g).unwrap();
        assert!(cl.iter().all(|c| c.iter().filter(|&&i| i > 0).count() <= 3));
    }

    #[test]
    fn single_cluster_has_no_hops() {
        let net = chain(5, &[(0, 3)]);
        let m = map(&net, &TileGrid::default(), None).unwrap();
        assert!(m.hop_cost.iter().all(|&h| h == 0));
        let e = energy(&[1, 1, 1, 1, 1], &m, &TileGrid::default()).unwrap();
        assert_eq!(e.hops, 0.0);
    }

    #[test]
    fn two_clusters_sit_adjacent() {
        let net = chain(8, &[]);
        let g = TileGrid { rows: 2, cols: 2, max_neurons: 4, ..TileGrid::default() };
        let m = map(&net, &g, None).unwrap();
        assert_eq!(g.distance(m.tile_of[0], m.tile_of[1]), 1);
        assert_eq!(m.final_cost, 1.0);
    }

    #[test]
    fn energy_by_hand() {
        let net = chain(2, &[]);
        let g = TileGrid::default();
        let mut m = map(&net, &g, None).unwrap();
        assert_eq!(energy(&[0, 0], &m, &g).unwrap().total_pj, 0.0);
        let e = energy(&[100, 0], &m, &g).unwrap();
        assert!((e.total_pj - 2_360.0).abs() < 1e-9);
        m.hop_cost = vec![1, 0];
        let e = energy(&[20, 80], &m, &g).unwrap();
        assert_eq!((e.spikes, e.hops), (100.0, 20.0));
        assert!((e.total_pj - 2_420.0).abs() < 1e-9);
        assert!(energy(&[1], &m, &g).is_err());
    }

    fn random_net(seed: u64, n: usize) -> SnnNetwork {
        let mut r = rng::stream(seed, &[0]);
        let extra: Vec<(u32, u32)> = (0..3 * n)
            .filter_map(|_| {
                let a = r.random_range(0..n as u32);
                let b = r.random_range(0..n as u32);
                (a < b).then_some((a, b))
            })
            .collect();
        chain(n, &extra)
    }

    proptest! {
        #[test]
        fn partition_covers_each_neuron_once(seed in 0u64..1000, n in 2usize..60, cap in 1usize..12) {
            let net = random_net(seed, n);
            let g = TileGrid { rows: 8, cols: 8, max_neurons: cap, max_synapses: 4 * cap + 8, ..TileGrid::default() };
            if let Ok(cl) = partition(&net, &g) {
                let mut all: Vec<u32> = cl.iter().flatten().copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n as u32).collect::<Vec<_>>());
                let fan = net.fan_in();
                for c in &cl {
                    prop_assert!(c.len() <= g.max_neurons);
                    prop_assert!(c.iter().map(|&i| fan[i as usize] as usize).sum::<usize>() <= g.max_synapses);
                }
            }
        }

        #[test]
        fn refinement_never_increases_cost(seed in 0u64..1000, n in 4usize..50) {
            let net = random_net(seed, n);
            let g = TileGrid { rows: 3, cols: 4, max_neurons: (n / 6).max(1), ..TileGrid::default() };
            if let Ok(m) = map(&net, &g, None) {
                prop_assert!(m.final_cost <= m.initial_cost);
                let (_, hist) = place(m.clusters.len(), &g, &m.traffic).unwrap();
                prop_assert!(hist.windows(2).all(|w| w[1] < w[0]));
            }
        }

        #[test]
        fn energy_is_additive(seed in 0u64..1000, a in prop::collection::vec(0u64..50, 20), b in prop::collection::vec(0u64..50, 20)) {
            let net = random_net(seed, 20);
            let g = TileGrid { max_neurons: 5, ..TileGrid::default() };
            let m = map(&net, &g, None).unwrap();
            let sum: Vec<u64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let (ea, eb, es) = (energy(&a, &m, &g).unwrap(), energy(&b, &m, &g).unwrap(), energy(&sum, &m, &g).unwrap());
            prop_assert!((ea.total_pj + eb.total_pj - es.total_pj).abs() < 1e-6);
        }
    }

    #[test]
    fn mapping_csv_round_trip() {
        let net = chain(10, &[(0, 9), (2, 7)]);
        let grid = TileGrid { rows: 2, cols: 2, max_neurons: 3, ..TileGrid::default() };
        let m = map(&net, &grid, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mapping.csv");
        let mut buf = b"# header comment\n".to_vec();
        write_mapping_csv(&m, &grid, &mut buf).unwrap();
        std::fs::write(&path, &buf).unwrap();
        let back = read_mapping_csv(&path, &net, &grid, None).unwrap();
        assert_eq!(back.clusters, m.clusters);
        assert_eq!(back.tile_of, m.tile_of);
        assert_eq!(back.hop_cost, m.hop_cost);
        assert_eq!(back.final_cost, m.final_cost);
        std::fs::write(&path, "neuron_id,cluster_id,tile_row,tile_col\n0,0,0,0\n").unwrap();
        assert!(matches!(read_mapping_csv(&path, &net, &grid, None), Err(Error::Schema { .. })));
    }
}
