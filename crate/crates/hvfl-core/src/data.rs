//! Dataset representation, synthetic generation, CSV ingestion, and the
//! horizontal / vertical partitioners that realize the device topology.
//!
//! Horizontal devices receive disjoint sample shards over the full feature
//! set, with non-IID severity controlled by a symmetric Dirichlet
//! concentration: label skew for classification, label-quantile skew for
//! regression. Vertical devices all share one sample pool and split the
//! feature list into contiguous blocks, optionally extended by a fraction of
//! the next block (cyclically) to model partially overlapping features.
//! The two device groups draw from disjoint sample pools.

use crate::models::{CoordMask, ModelSpec};
use crate::numerics::{Matrix, RngStream, Vector};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("empty dataset: {path} has a header but no data rows")]
    EmptyDataset { path: String },
    #[error("{path} is missing column '{column}'")]
    MissingColumn { path: String, column: String },
    #[error("{path}: non-numeric cell '{cell}' at row {row}, column '{column}'")]
    NonNumericCell {
        path: String,
        row: usize,
        column: String,
        cell: String,
    },
    #[error("{path}: row {row} has {got} fields, expected {expected}")]
    RaggedRow {
        path: String,
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("label {label} at row {row} is not a valid class index for {n_classes} classes")]
    BadLabel {
        row: usize,
        label: f64,
        n_classes: usize,
    },
    #[error(
        "infeasible partition: {n_devices} devices * {min_per_device} min samples > {available} available"
    )]
    InfeasiblePartition {
        n_devices: usize,
        min_per_device: usize,
        available: usize,
    },
    #[error("infeasible vertical split: {n_features} features < {n_devices} devices")]
    InfeasibleVertical {
        n_features: usize,
        n_devices: usize,
    },
    #[error("topology needs at least one device")]
    NoDevices,
    #[error("sample pool too small: {pool} samples for {n_horizontal} horizontal + {n_vertical} vertical devices")]
    PoolTooSmall {
        pool: usize,
        n_horizontal: usize,
        n_vertical: usize,
    },
    #[error("coordinate {coordinate} is trained by no device")]
    UncoveredCoordinate { coordinate: usize },
}

/// Learning task of a dataset; classification labels are integers in
/// `[0, n_classes)` stored as floats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    BinaryClassification,
    Multiclass { n_classes: usize },
}

impl TaskKind {
    pub fn n_classes(&self) -> usize {
        match self {
            TaskKind::Regression => 0,
            TaskKind::BinaryClassification => 2,
            TaskKind::Multiclass { n_classes } => *n_classes,
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, TaskKind::Regression)
    }
}

/// Aligned sample-by-feature matrix with labels and identifiers.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vector,
    pub sample_ids: Vec<u64>,
    pub feature_ids: Vec<String>,
    pub task: TaskKind,
    /// Generating coefficients, recorded by the regression generator.
    pub true_weights: Option<Vector>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.x.rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }
}

/// Which side of the hybrid split a device belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Horizontal,
    Vertical,
}

/// One device's view of the data: its role, sample rows, and feature columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceShard {
    pub device_id: usize,
    pub role: Role,
    /// Ascending row indices into the dataset.
    pub sample_indices: Vec<usize>,
    /// Ascending column indices into the dataset.
    pub feature_indices: Vec<usize>,
}

impl DeviceShard {
    pub fn sample_count(&self) -> usize {
        self.sample_indices.len()
    }
}

/// The full device layout plus per-device trainable-coordinate masks.
#[derive(Debug, Clone)]
pub struct Topology {
    pub shards: Vec<DeviceShard>,
    pub masks: Vec<CoordMask>,
    pub n_horizontal: usize,
    pub n_vertical: usize,
    pub global_dim: usize,
}

impl Topology {
    pub fn n_devices(&self) -> usize {
        self.shards.len()
    }

    /// Deterministic JSON dump: device ids, roles, sorted index arrays.
    pub fn to_dump_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            global_dim: usize,
            n_horizontal: usize,
            n_vertical: usize,
            shards: &'a [DeviceShard],
        }
        serde_json::to_string_pretty(&Dump {
            global_dim: self.global_dim,
            n_horizontal: self.n_horizontal,
            n_vertical: self.n_vertical,
            shards: &self.shards,
        })
        .expect("topology serialize")
    }
}

/// Synthetic regression data: standard-normal features, `y = X w + noise`,
/// with the generating weights recorded in `true_weights`.
pub fn generate_regression(
    n_samples: usize,
    n_features: usize,
    noise_std: f64,
    seed: u64,
) -> Dataset {
    assert!(n_samples >= 1 && n_features >= 1);
    assert!(noise_std >= 0.0);
    let mut x_stream = RngStream::new(seed, 0);
    let mut w_stream = RngStream::new(seed, 1);
    let mut noise_stream = RngStream::new(seed, 2);
    let x = Matrix::from_row_major(
        n_samples,
        n_features,
        x_stream.gaussian(n_samples * n_features).as_slice().to_vec(),
    )
    .expect("generator shape");
    let w = w_stream.gaussian(n_features);
    let mut y = Vector::zeros(n_samples);
    for r in 0..n_samples {
        let mut acc = 0.0;
        for (f, wf) in w.iter().enumerate() {
            acc += x.get(r, f) * wf;
        }
        y[r] = acc + noise_std * noise_stream.standard_normal();
    }
    Dataset {
        x,
        y,
        sample_ids: (0..n_samples as u64).collect(),
        feature_ids: (0..n_features).map(|f| format!("f{f}")).collect(),
        task: TaskKind::Regression,
        true_weights: Some(w),
    }
}

/// Synthetic classification data: Gaussian clusters whose means are at
/// least `cluster_sep` apart, labels balanced within one sample.
pub fn generate_classification(
    n_samples: usize,
    n_features: usize,
    n_classes: usize,
    cluster_sep: f64,
    seed: u64,
) -> Dataset {
    assert!(n_classes >= 2);
    assert!(cluster_sep > 0.0);
    assert!(n_samples >= n_classes && n_features >= 1);
    let mut mean_stream = RngStream::new(seed, 3);
    let mut x_stream = RngStream::new(seed, 0);
    // Raw means, then rescale so the minimum pairwise distance is cluster_sep.
    let means: Vec<Vector> = (0..n_classes)
        .map(|_| mean_stream.gaussian(n_features))
        .collect();
    let mut min_dist = f64::INFINITY;
    for i in 0..n_classes {
        for j in (i + 1)..n_classes {
            min_dist = min_dist.min(means[i].distance(&means[j]).expect("same dim"));
        }
    }
    let scale = if min_dist > 0.0 {
        cluster_sep / min_dist
    } else {
        1.0
    };
    let x_len = n_samples * n_features;
    let mut x_data = Vec::with_capacity(x_len);
    let mut y = Vector::zeros(n_samples);
    for r in 0..n_samples {
        let label = r % n_classes;
        y[r] = label as f64;
        let noise = x_stream.gaussian(n_features);
        for f in 0..n_features {
            x_data.push(means[label][f] * scale + noise[f]);
        }
    }
    let task = if n_classes == 2 {
        TaskKind::BinaryClassification
    } else {
        TaskKind::Multiclass { n_classes }
    };
    Dataset {
        x: Matrix::from_row_major(n_samples, n_features, x_data).expect("generator shape"),
        y,
        sample_ids: (0..n_samples as u64).collect(),
        feature_ids: (0..n_features).map(|f| format!("f{f}")).collect(),
        task,
        true_weights: None,
    }
}

/// Column schema for CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Name of the label column.
    pub label_column: String,
    /// Feature columns in order; `None` takes every non-label column.
    pub feature_columns: Option<Vec<String>>,
    pub task: TaskKind,
}

/// Loads a comma-separated file with a header row into a [`Dataset`].
/// Row order is preserved; every cell parses as a 64-bit float.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: display.clone(),
        source,
    })?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| DataError::EmptyDataset {
        path: display.clone(),
    })?;
    let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let find = |name: &str| -> Result<usize, DataError> {
        columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DataError::MissingColumn {
                path: display.clone(),
                column: name.to_string(),
            })
    };
    let label_idx = find(&schema.label_column)?;
    let feature_cols: Vec<(usize, String)> = match &schema.feature_columns {
        Some(names) => names
            .iter()
            .map(|n| find(n).map(|i| (i, n.clone())))
            .collect::<Result<_, _>>()?,
        None => columns
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != label_idx)
            .map(|(i, n)| (i, n.clone()))
            .collect(),
    };
    let mut x_data = Vec::new();
    let mut y_data = Vec::new();
    let mut n_rows = 0usize;
    for (row_number, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(|c| c.trim()).collect();
        if cells.len() != columns.len() {
            return Err(DataError::RaggedRow {
                path: display.clone(),
                row: row_number + 1,
                expected: columns.len(),
                got: cells.len(),
            });
        }
        let parse = |idx: usize, name: &str| -> Result<f64, DataError> {
            cells[idx].parse::<f64>().map_err(|_| DataError::NonNumericCell {
                path: display.clone(),
                row: row_number + 1,
                column: name.to_string(),
                cell: cells[idx].to_string(),
            })
        };
        for (idx, name) in &feature_cols {
            x_data.push(parse(*idx, name)?);
        }
        let label = parse(label_idx, &schema.label_column)?;
        if schema.task.is_classification() {
            let k = schema.task.n_classes();
            if label.fract() != 0.0 || label < 0.0 || label >= k as f64 {
                return Err(DataError::BadLabel {
                    row: row_number + 1,
                    label,
                    n_classes: k,
                });
            }
        }
        y_data.push(label);
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(DataError::EmptyDataset { path: display });
    }
    Ok(Dataset {
        x: Matrix::from_row_major(n_rows, feature_cols.len(), x_data).expect("csv shape"),
        y: Vector::from_vec(y_data),
        sample_ids: (0..n_rows as u64).collect(),
        feature_ids: feature_cols.into_iter().map(|(_, n)| n).collect(),
        task: schema.task,
        true_weights: None,
    })
}

/// Writes a dataset back out in the same CSV layout `load_csv` reads.
/// Floats use shortest-round-trip formatting, so a write/load cycle is exact.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<(), DataError> {
    let display = path.display().to_string();
    let mut out = String::new();
    for id in &data.feature_ids {
        out.push_str(id);
        out.push(',');
    }
    out.push_str("label\n");
    for r in 0..data.n_samples() {
        for f in 0..data.n_features() {
            out.push_str(&format!("{},", data.x.get(r, f)));
        }
        out.push_str(&format!("{}\n", data.y[r]));
    }
    std::fs::write(path, out).map_err(|source| DataError::Io {
        path: display,
        source,
    })
}

/// Group key used for skewed horizontal splits: the class label for
/// classification, a label-quantile bucket for regression.
fn skew_groups(data: &Dataset, pool: &[usize], n_groups: usize) -> Vec<Vec<usize>> {
    match data.task {
        TaskKind::Regression => {
            let mut order: Vec<usize> = pool.to_vec();
            order.sort_by(|&a, &b| data.y[a].partial_cmp(&data.y[b]).expect("finite labels"));
            let k = n_groups.max(1).min(order.len());
            let mut groups = vec![Vec::new(); k];
            for (pos, row) in order.into_iter().enumerate() {
                groups[pos * k / pool.len()].push(row);
            }
            groups
        }
        _ => {
            let k = data.task.n_classes();
            let mut groups = vec![Vec::new(); k];
            for &row in pool {
                groups[data.y[row] as usize].push(row);
            }
            groups.retain(|g| !g.is_empty());
            groups
        }
    }
}

/// Splits `pool` into disjoint, exhaustive horizontal shards with Dirichlet
/// skew: each device draws group proportions from a symmetric
/// Dirichlet(`dirichlet_beta`), and each group's samples are divided across
/// devices proportionally. Shards below `min_per_device` are topped up from
/// the largest shard.
pub fn partition_horizontal(
    data: &Dataset,
    pool: &[usize],
    n_devices: usize,
    dirichlet_beta: f64,
    min_per_device: usize,
    rng: &mut RngStream,
) -> Result<Vec<DeviceShard>, DataError> {
    assert!(n_devices >= 1);
    assert!(dirichlet_beta > 0.0);
    assert!(min_per_device >= 1);
    if n_devices * min_per_device > pool.len() {
        return Err(DataError::InfeasiblePartition {
            n_devices,
            min_per_device,
            available: pool.len(),
        });
    }
    let mut groups = skew_groups(data, pool, n_devices);
    for g in &mut groups {
        rng.shuffle(g);
    }
    // Per-device proportions over groups.
    let proportions: Vec<Vec<f64>> = (0..n_devices)
        .map(|_| rng.dirichlet(dirichlet_beta, groups.len()))
        .collect();
    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); n_devices];
    for (g, members) in groups.iter().enumerate() {
        // Each device's share of group g, normalized over devices.
        let weights: Vec<f64> = proportions.iter().map(|p| p[g]).collect();
        let total: f64 = weights.iter().sum();
        let counts = largest_remainder_counts(&weights, total, members.len());
        let mut cursor = 0usize;
        for (d, &count) in counts.iter().enumerate() {
            assignments[d].extend_from_slice(&members[cursor..cursor + count]);
            cursor += count;
        }
    }
    // Rebalance: top up under-filled shards from the largest one.
    loop {
        let (small_idx, small_len) = assignments
            .iter()
            .enumerate()
            .map(|(i, a)| (i, a.len()))
            .min_by_key(|&(_, len)| len)
            .expect("at least one device");
        if small_len >= min_per_device {
            break;
        }
        let (big_idx, _) = assignments
            .iter()
            .enumerate()
            .map(|(i, a)| (i, a.len()))
            .max_by_key(|&(_, len)| len)
            .expect("at least one device");
        let moved = assignments[big_idx].pop().expect("largest shard nonempty");
        assignments[small_idx].push(moved);
    }
    let all_features: Vec<usize> = (0..data.n_features()).collect();
    Ok(assignments
        .into_iter()
        .enumerate()
        .map(|(d, mut rows)| {
            rows.sort_unstable();
            DeviceShard {
                device_id: d,
                role: Role::Horizontal,
                sample_indices: rows,
                feature_indices: all_features.clone(),
            }
        })
        .collect())
}

fn largest_remainder_counts(weights: &[f64], total: f64, n_items: usize) -> Vec<usize> {
    let n = weights.len();
    if total <= 0.0 {
        // Degenerate draw: give everything to the first device.
        let mut counts = vec![0; n];
        counts[0] = n_items;
        return counts;
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n_items as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).expect("finite remainders").then(a.cmp(&b))
    });
    for i in 0..(n_items - assigned) {
        counts[order[i % n]] += 1;
    }
    counts
}

/// Splits the feature list into `n_devices` contiguous near-equal blocks,
/// then extends each block with the first `overlap_fraction * block_size`
/// features of the next block (cyclically). Every shard holds the identical
/// sample pool.
pub fn partition_vertical(
    data: &Dataset,
    pool: &[usize],
    n_devices: usize,
    overlap_fraction: f64,
) -> Result<Vec<DeviceShard>, DataError> {
    assert!(n_devices >= 1);
    assert!((0.0..1.0).contains(&overlap_fraction));
    let d = data.n_features();
    if d < n_devices {
        return Err(DataError::InfeasibleVertical {
            n_features: d,
            n_devices,
        });
    }
    let base = d / n_devices;
    let extra = d % n_devices;
    let mut blocks: Vec<Vec<usize>> = Vec::with_capacity(n_devices);
    let mut start = 0usize;
    for b in 0..n_devices {
        let len = base + usize::from(b < extra);
        blocks.push((start..start + len).collect());
        start += len;
    }
    let mut rows: Vec<usize> = pool.to_vec();
    rows.sort_unstable();
    let shards = (0..n_devices)
        .map(|b| {
            let mut features = blocks[b].clone();
            let borrow = (overlap_fraction * blocks[b].len() as f64).floor() as usize;
            let next = &blocks[(b + 1) % n_devices];
            for &f in next.iter().take(borrow) {
                if !features.contains(&f) {
                    features.push(f);
                }
            }
            features.sort_unstable();
            DeviceShard {
                device_id: b,
                role: Role::Vertical,
                sample_indices: rows.clone(),
                feature_indices: features,
            }
        })
        .collect();
    Ok(shards)
}

/// Knobs for the horizontal partitioner.
#[derive(Debug, Clone, Copy)]
pub struct HorizontalParams {
    pub dirichlet_beta: f64,
    pub min_per_device: usize,
}

/// Knobs for the vertical partitioner.
#[derive(Debug, Clone, Copy)]
pub struct VerticalParams {
    pub overlap_fraction: f64,
}

/// Builds the hybrid topology over `train_pool`: the pool is shuffled and
/// split into disjoint horizontal and vertical sample pools (`pool_ratio`
/// is the horizontal share), each side is partitioned, and per-device
/// coordinate masks are derived from the model layout.
#[allow(clippy::too_many_arguments)]
pub fn build_topology(
    data: &Dataset,
    train_pool: &[usize],
    n_horizontal: usize,
    n_vertical: usize,
    h_params: HorizontalParams,
    v_params: VerticalParams,
    model: &ModelSpec,
    pool_ratio: f64,
    rng: &mut RngStream,
) -> Result<Topology, DataError> {
    if n_horizontal + n_vertical == 0 {
        return Err(DataError::NoDevices);
    }
    let mut pool: Vec<usize> = train_pool.to_vec();
    rng.shuffle(&mut pool);
    let (h_pool, v_pool): (Vec<usize>, Vec<usize>) = if n_horizontal == 0 {
        (Vec::new(), pool)
    } else if n_vertical == 0 {
        (pool, Vec::new())
    } else {
        let h_len = ((pool.len() as f64) * pool_ratio).round() as usize;
        let h_len = h_len
            .max(n_horizontal * h_params.min_per_device)
            .min(pool.len().saturating_sub(1));
        let v = pool.split_off(h_len);
        (pool, v)
    };
    if (n_horizontal > 0 && h_pool.len() < n_horizontal * h_params.min_per_device)
        || (n_vertical > 0 && v_pool.is_empty())
    {
        return Err(DataError::PoolTooSmall {
            pool: train_pool.len(),
            n_horizontal,
            n_vertical,
        });
    }
    let mut shards = Vec::with_capacity(n_horizontal + n_vertical);
    if n_horizontal > 0 {
        shards.extend(partition_horizontal(
            data,
            &h_pool,
            n_horizontal,
            h_params.dirichlet_beta,
            h_params.min_per_device,
            rng,
        )?);
    }
    if n_vertical > 0 {
        let mut vertical =
            partition_vertical(data, &v_pool, n_vertical, v_params.overlap_fraction)?;
        for shard in &mut vertical {
            shard.device_id += n_horizontal;
        }
        shards.extend(vertical);
    }
    let masks: Vec<CoordMask> = shards
        .iter()
        .map(|s| match s.role {
            Role::Horizontal => CoordMask::ones(model.dim()),
            Role::Vertical => model.mask_for_features(&s.feature_indices),
        })
        .collect();
    for c in 0..model.dim() {
        if !masks.iter().any(|m| m.is_set(c)) {
            return Err(DataError::UncoveredCoordinate { coordinate: c });
        }
    }
    Ok(Topology {
        shards,
        masks,
        n_horizontal,
        n_vertical,
        global_dim: model.dim(),
    })
}
