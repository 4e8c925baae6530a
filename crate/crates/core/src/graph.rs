//! Graph data model, dataset ingestion, synthetic generation and hop distances.
//!
//! A dataset directory holds:
//!
//! * `edges.tsv`: one undirected edge per line, two whitespace-separated
//!   zero-based node indices;
//! * `features.csv`: one row of comma-separated floats per node, no header;
//! * `labels.txt` (optional): one integer per node, `-1` for unlabeled;
//! * `splits.txt` (optional): one of `train`, `val`, `test`, `none` per node.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, RosaError};
use crate::rng::{self, Purpose};

/// Default hop cap; unreachable or farther pairs saturate at this value.
pub const DEFAULT_HOP_CAP: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    None,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "none" => Ok(Split::None),
            other => Err(format!("unknown split tag `{other}`")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        })
    }
}

/// An undirected, unweighted attributed graph. Immutable once built.
#[derive(Debug, Clone)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Array2<f64>,
    labels: Vec<Option<usize>>,
    splits: Vec<Split>,
}

/// Canonical undirected edge list: `(min, max)` pairs, sorted, deduplicated.
pub fn symmetrize(edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = edges
        .iter()
        .map(|&(a, b)| if a <= b { (a, b) } else { (b, a) })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

impl Graph {
    /// Builds a graph, canonicalizing the edge list. Self-loops are discarded.
    pub fn new(
        edges: &[(usize, usize)],
        features: Array2<f64>,
        labels: Option<Vec<Option<usize>>>,
        splits: Option<Vec<Split>>,
    ) -> Result<Self> {
        let num_nodes = features.nrows();
        for &(a, b) in edges {
            for idx in [a, b] {
                if idx >= num_nodes {
                    return Err(RosaError::IndexOutOfRange {
                        index: idx,
                        len: num_nodes,
                    });
                }
            }
        }
        let edges: Vec<(usize, usize)> = symmetrize(edges).into_iter().filter(|(a, b)| a != b).collect();
        let labels = labels.unwrap_or_else(|| vec![None; num_nodes]);
        let splits = splits.unwrap_or_else(|| vec![Split::None; num_nodes]);
        if labels.len() != num_nodes {
            return Err(RosaError::shape("graph", format!("{} labels for {num_nodes} nodes", labels.len())));
        }
        if splits.len() != num_nodes {
            return Err(RosaError::shape("graph", format!("{} split tags for {num_nodes} nodes", splits.len())));
        }
        let mut neighbors = vec![Vec::new(); num_nodes];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Graph {
            num_nodes,
            edges,
            neighbors,
            features,
            labels,
            splits,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored undirected edges.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn has_splits(&self) -> bool {
        self.splits.iter().any(|s| *s != Split::None)
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().flatten().map(|&l| l + 1).max().unwrap_or(0)
    }

    /// Dense symmetric 0/1 adjacency, no self-loops.
    pub fn adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.num_nodes, self.num_nodes));
        for &(i, j) in &self.edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    }

    /// Copy of the graph with the given split assignment.
    pub fn with_splits(&self, splits: Vec<Split>) -> Result<Self> {
        Graph::new(&self.edges, self.features.clone(), Some(self.labels.clone()), Some(splits))
    }

    /// The whole graph as a single subgraph rooted at node 0.
    pub fn as_subgraph(&self) -> Subgraph {
        Subgraph {
            central: 0,
            nodes: (0..self.num_nodes).collect(),
            edges: self.edges.clone(),
            features: self.features.clone(),
        }
    }

    fn check_node(&self, idx: usize) -> Result<()> {
        if idx >= self.num_nodes {
            Err(RosaError::IndexOutOfRange {
                index: idx,
                len: self.num_nodes,
            })
        } else {
            Ok(())
        }
    }
}

/// A view: a set of parent-graph nodes with their induced edges and features.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub central: usize,
    /// Parent-graph indices, `nodes[0] == central`.
    pub nodes: Vec<usize>,
    /// Induced edges in local indices, canonical `(min, max)` order.
    pub edges: Vec<(usize, usize)>,
    pub features: Array2<f64>,
}

impl Subgraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }
}

/// Induced subgraph on `nodes`, in the given order. The first node is the central one.
pub fn induced_subgraph(g: &Graph, nodes: &[usize]) -> Result<Subgraph> {
    if nodes.is_empty() {
        return Err(RosaError::shape("induced_subgraph", "empty node list"));
    }
    let mut local = HashMap::with_capacity(nodes.len());
    for (pos, &n) in nodes.iter().enumerate() {
        g.check_node(n)?;
        if local.insert(n, pos).is_some() {
            return Err(RosaError::DuplicateNode(n));
        }
    }
    let mut edges = Vec::new();
    for (pos, &n) in nodes.iter().enumerate() {
        for nb in g.neighbors(n) {
            if let Some(&other) = local.get(nb) {
                if pos < other {
                    edges.push((pos, other));
                }
            }
        }
    }
    edges.sort_unstable();
    let features = g.features.select(Axis(0), nodes);
    Ok(Subgraph {
        central: nodes[0],
        nodes: nodes.to_vec(),
        edges,
        features,
    })
}

/// Edge homophily ratio over the stored undirected edges.
pub fn homophily_ratio(g: &Graph) -> Result<f64> {
    if g.edges.is_empty() {
        return Ok(0.0);
    }
    let mut same = 0usize;
    for &(a, b) in &g.edges {
        match (g.labels[a], g.labels[b]) {
            (Some(x), Some(y)) => same += usize::from(x == y),
            _ => return Err(RosaError::UnlabeledEndpoint(a, b)),
        }
    }
    Ok(same as f64 / g.edges.len() as f64)
}

/// Breadth-first hop counts from `source` in `g`, truncated at `cap`.
/// Entries beyond the cap, or unreachable, hold `cap`.
pub fn bfs_capped(g: &Graph, source: usize, cap: usize) -> Vec<u8> {
    let cap8 = cap.min(u8::MAX as usize) as u8;
    let mut dist = vec![cap8; g.num_nodes];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u];
        if du + 1 >= cap8 {
            continue;
        }
        for &v in g.neighbors(u) {
            if v != source && dist[v] == cap8 {
                dist[v] = du + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Shortest-path hop counts between `sources` and `targets` in the full graph,
/// saturating at `cap`.
pub fn hop_distances(g: &Graph, sources: &[usize], targets: &[usize], cap: usize) -> Result<Array2<f64>> {
    if cap == 0 {
        return Err(RosaError::Config("hop cap must be at least 1".into()));
    }
    for &t in targets {
        g.check_node(t)?;
    }
    let mut out = Array2::zeros((sources.len(), targets.len()));
    for (r, &s) in sources.iter().enumerate() {
        g.check_node(s)?;
        let dist = bfs_capped(g, s, cap);
        for (c, &t) in targets.iter().enumerate() {
            out[[r, c]] = f64::from(dist[t]);
        }
    }
    Ok(out)
}

/// Memoized capped BFS rows, one per source node.
#[derive(Debug, Default)]
pub struct HopCache {
    cap: usize,
    rows: HashMap<usize, Vec<u8>>,
}

impl HopCache {
    pub fn new(cap: usize) -> Self {
        HopCache {
            cap: cap.max(1),
            rows: HashMap::new(),
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn row(&mut self, g: &Graph, source: usize) -> &[u8] {
        let cap = self.cap;
        self.rows.entry(source).or_insert_with(|| bfs_capped(g, source, cap))
    }

    /// Hop matrix between two node lists.
    pub fn matrix(&mut self, g: &Graph, sources: &[usize], targets: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((sources.len(), targets.len()));
        for (r, &s) in sources.iter().enumerate() {
            let row = self.row(g, s);
            for (c, &t) in targets.iter().enumerate() {
                out[[r, c]] = f64::from(row[t]);
            }
        }
        out
    }
}

/// Hop matrix computed inside the subgraph induced by the union of the two node lists.
pub fn union_hop_distances(g: &Graph, sources: &[usize], targets: &[usize], cap: usize) -> Result<Array2<f64>> {
    let mut union: Vec<usize> = Vec::new();
    let mut seen = HashSet::new();
    for &n in sources.iter().chain(targets) {
        if seen.insert(n) {
            union.push(n);
        }
    }
    let sub = induced_subgraph(g, &union)?;
    let local: HashMap<usize, usize> = union.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let sub_graph = Graph::new(&sub.edges, Array2::zeros((union.len(), 0)), None, None)?;
    let src: Vec<usize> = sources.iter().map(|n| local[n]).collect();
    let tgt: Vec<usize> = targets.iter().map(|n| local[n]).collect();
    hop_distances(&sub_graph, &src, &tgt, cap)
}

/// Stochastic block model with one-hot block features plus Gaussian noise.
/// Labels are block indices.
pub fn generate_sbm(
    blocks: usize,
    per_block: usize,
    p_in: f64,
    p_out: f64,
    dim: usize,
    noise: f64,
    seed: u64,
) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) || p_out > p_in {
        return Err(RosaError::Config(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}"
        )));
    }
    if per_block == 0 || blocks == 0 {
        return Err(RosaError::Config("blocks and per_block must be positive".into()));
    }
    if noise < 0.0 || !noise.is_finite() {
        return Err(RosaError::Config(format!("invalid noise stddev {noise}")));
    }
    let dim = dim.max(blocks);
    let n = blocks * per_block;
    let block = |i: usize| i / per_block;

    let mut edge_rng = rng::stream(seed, Purpose::Generator, &[0]);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if block(i) == block(j) { p_in } else { p_out };
            if edge_rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let mut feat_rng = rng::stream(seed, Purpose::Generator, &[1]);
    let normal = Normal::new(0.0, noise).map_err(|e| RosaError::Config(e.to_string()))?;
    let mut features = Array2::zeros((n, dim));
    for i in 0..n {
        for j in 0..dim {
            let base = if j == block(i) { 1.0 } else { 0.0 };
            features[[i, j]] = base + normal.sample(&mut feat_rng);
        }
    }
    let labels = (0..n).map(|i| Some(block(i))).collect();
    Graph::new(&edges, features, Some(labels), None)
}

/// Random train/val/test assignment with the given fractions; the rest go to test.
pub fn random_splits(num_nodes: usize, train: f64, val: f64, seed: u64) -> Vec<Split> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..num_nodes).collect();
    order.shuffle(&mut rng::stream(seed, Purpose::Split, &[]));
    let n_train = (train * num_nodes as f64).round() as usize;
    let n_val = (val * num_nodes as f64).round() as usize;
    let mut splits = vec![Split::Test; num_nodes];
    for (rank, &node) in order.iter().enumerate() {
        if rank < n_train {
            splits[node] = Split::Train;
        } else if rank < n_train + n_val {
            splits[node] = Split::Val;
        }
    }
    splits
}

fn read_lines(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| RosaError::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> RosaError {
    RosaError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a comma-separated float matrix, one row per non-empty line.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = read_lines(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, i + 1, format!("invalid number `{}`", tok.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("row has {} values, expected dimension {w}", row.len()),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = width.unwrap_or(0);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), width), flat).expect("rectangular rows"))
}

/// Loads a dataset directory; see the module docs for the file formats.
pub fn load_graph(dir: &Path) -> Result<Graph> {
    let edges_path = dir.join("edges.tsv");
    let features_path = dir.join("features.csv");
    for p in [&edges_path, &features_path] {
        if !p.is_file() {
            return Err(RosaError::MissingFile(p.clone()));
        }
    }
    let features = read_matrix_csv(&features_path)?;
    let n = features.nrows();

    let text = read_lines(&edges_path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(&edges_path, i + 1, format!("expected two node indices, got `{line}`")));
        }
        let mut pair = [0usize; 2];
        for (slot, tok) in pair.iter_mut().zip(&toks) {
            *slot = tok
                .parse()
                .map_err(|_| parse_err(&edges_path, i + 1, format!("invalid node index `{tok}`")))?;
            if *slot >= n {
                return Err(parse_err(
                    &edges_path,
                    i + 1,
                    format!("node index {} out of range for {n} nodes", *slot),
                ));
            }
        }
        edges.push((pair[0], pair[1]));
    }

    let labels_path = dir.join("labels.txt");
    let labels = if labels_path.is_file() {
        let text = read_lines(&labels_path)?;
        let mut labels = Vec::with_capacity(n);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: i64 = line
                .parse()
                .map_err(|_| parse_err(&labels_path, i + 1, format!("invalid label `{line}`")))?;
            labels.push(match v {
                -1 => None,
                v if v >= 0 => Some(v as usize),
                v => return Err(parse_err(&labels_path, i + 1, format!("negative label {v}"))),
            });
        }
        if labels.len() != n {
            return Err(parse_err(&labels_path, labels.len(), format!("{} labels for {n} nodes", labels.len())));
        }
        Some(labels)
    } else {
        None
    };

    let splits_path = dir.join("splits.txt");
    let splits = if splits_path.is_file() {
        let text = read_lines(&splits_path)?;
        let mut splits = Vec::with_capacity(n);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            splits.push(line.parse::<Split>().map_err(|m| parse_err(&splits_path, i + 1, m))?);
        }
        if splits.len() != n {
            return Err(parse_err(&splits_path, splits.len(), format!("{} split tags for {n} nodes", splits.len())));
        }
        Some(splits)
    } else {
        None
    };

    Graph::new(&edges, features, labels, splits)
}

/// Reads the LINQS citation layout: `<stem>.content` rows of
/// `id f_1 .. f_d class` and `<stem>.cites` rows of `cited citing`.
/// Nodes keep file order; class names are numbered in sorted order. Citations
/// naming an unknown paper are skipped, as in the public release.
pub fn load_linqs(dir: &Path, stem: &str) -> Result<Graph> {
    let content_path = dir.join(format!("{stem}.content"));
    let cites_path = dir.join(format!("{stem}.cites"));
    for p in [&content_path, &cites_path] {
        if !p.is_file() {
            return Err(RosaError::MissingFile(p.clone()));
        }
    }
    let text = read_lines(&content_path)?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut classes: Vec<String> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 3 {
            return Err(parse_err(&content_path, i + 1, "expected id, features and class"));
        }
        let row = toks[1..toks.len() - 1]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(&content_path, i + 1, format!("invalid feature `{t}`"))))
            .collect::<Result<Vec<f64>>>()?;
        if rows.first().is_some_and(|r| r.len() != row.len()) {
            return Err(parse_err(&content_path, i + 1, "ragged feature row"));
        }
        if ids.insert(toks[0].to_string(), rows.len()).is_some() {
            return Err(parse_err(&content_path, i + 1, format!("duplicate paper id `{}`", toks[0])));
        }
        rows.push(row);
        classes.push(toks[toks.len() - 1].to_string());
    }
    let mut names: Vec<&String> = classes.iter().collect();
    names.sort();
    names.dedup();
    let labels = classes
        .iter()
        .map(|c| Some(names.binary_search(&c).expect("collected")))
        .collect();

    let text = read_lines(&cites_path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[..] {
            [] => {}
            [a, b] => {
                if let (Some(&a), Some(&b)) = (ids.get(a), ids.get(b)) {
                    edges.push((a, b));
                }
            }
            _ => return Err(parse_err(&cites_path, i + 1, "expected two paper ids")),
        }
    }
    let width = rows.first().map_or(0, Vec::len);
    let features = Array2::from_shape_vec((rows.len(), width), rows.concat()).expect("rectangular rows");
    Graph::new(&edges, features, Some(labels), None)
}

/// Loads `dir` in the native layout, or the LINQS layout when the directory
/// holds a `*.content` file and no `edges.tsv`.
pub fn load_dataset(dir: &Path) -> Result<Graph> {
    if !dir.join("edges.tsv").exists() {
        if let Ok(entries) = fs::read_dir(dir) {
            let mut stems: Vec<String> = entries
                .filter_map(|e| e.ok())
                .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".content")).map(String::from))
                .collect();
            stems.sort();
            if let Some(stem) = stems.first() {
                return load_linqs(dir, stem);
            }
        }
    }
    load_graph(dir)
}

/// Writes `g` as a dataset directory readable by [`load_graph`].
pub fn write_graph(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| RosaError::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| RosaError::io(p, e))
    };
    let mut edges = String::new();
    for &(a, b) in g.edges() {
        edges.push_str(&format!("{a}\t{b}\n"));
    }
    write("edges.tsv", edges)?;
    write("features.csv", matrix_to_csv(g.features()))?;
    if g.labels.iter().any(Option::is_some) {
        let body: String = g
            .labels
            .iter()
            .map(|l| match l {
                Some(v) => format!("{v}\n"),
                None => "-1\n".to_string(),
            })
            .collect();
        write("labels.txt", body)?;
    }
    if g.has_splits() {
        let body: String = g.splits.iter().map(|s| format!("{s}\n")).collect();
        write("splits.txt", body)?;
    }
    Ok(())
}

/// Row-major CSV with shortest round-trip float formatting.
pub fn matrix_to_csv(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
