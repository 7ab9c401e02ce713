//! User grouping: semi-orthogonal user selection (SUS) on channels and
//! distance-enhanced flocking (DEF) on position estimates.

use std::io::Write;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{inner, norm};
use crate::model::{CsiSample, Position3};
use crate::precoding::{group_spectral_efficiency, LinkBudget, PrecodingScheme};

#[derive(Debug, Clone, PartialEq)]
pub struct PoolUser {
    pub user_ref: usize,
    pub csi: CsiSample,
    /// Estimated (or true) position, mm.
    pub position: Position3,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UserPool {
    pub users: Vec<PoolUser>,
}

impl UserPool {
    pub fn new(users: Vec<PoolUser>) -> Result<Self> {
        if let Some(first) = users.first() {
            if users.iter().any(|u| !u.csi.same_shape(&first.csi)) {
                return Err(Error::DimensionMismatch("user pool mixes CSI shapes".into()));
            }
        }
        if users.iter().any(|u| !u.position.is_finite()) {
            return Err(invalid("user positions must be finite"));
        }
        Ok(Self { users })
    }

    /// Users built from labelled samples; `user_ref` is the slice index.
    pub fn from_labelled(samples: Vec<CsiSample>) -> Result<Self> {
        let users = samples
            .into_iter()
            .enumerate()
            .map(|(i, csi)| {
                let position = csi.label.ok_or_else(|| Error::Unlabelled(csi.sample_id.to_string()))?;
                Ok(PoolUser { user_ref: i, csi, position })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(users)
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Ordered groups of pool indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub groups: Vec<Vec<usize>>,
    pub group_size: usize,
}

impl Schedule {
    /// Every index in `0..users` appears exactly once and no group exceeds the size.
    pub fn is_partition_of(&self, users: usize) -> bool {
        let mut seen = vec![false; users];
        for g in &self.groups {
            if g.is_empty() || g.len() > self.group_size {
                return false;
            }
            for &u in g {
                if u >= users || std::mem::replace(&mut seen[u], true) {
                    return false;
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// `group_id,user_id,x_mm,y_mm`; `user_id` is the pool user's reference.
    pub fn write_csv(&self, pool: &UserPool, mut out: impl Write) -> Result<()> {
        writeln!(out, "group_id,user_id,x_mm,y_mm")?;
        for (gid, group) in self.groups.iter().enumerate() {
            for &u in group {
                let user = &pool.users[u];
                writeln!(out, "{gid},{},{},{}", user.user_ref, user.position.x, user.position.y)?;
            }
        }
        Ok(())
    }
}

/// Greedy semi-orthogonal user selection over a subset of the pool.
///
/// Channels are the wideband (subcarrier-stacked) vectors. The first pick is
/// the strongest user; afterwards each pick maximises the component
/// orthogonal to the span already selected, and after every pick the
/// candidates whose normalised projection onto the new orthogonal direction
/// reaches `alpha` are dropped. Ties go to the lowest index.
pub fn sus_select_from(pool: &UserPool, subset: &[usize], alpha: f64, max_users: usize) -> Result<Vec<usize>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must be in (0, 1], got {alpha}")));
    }
    if pool.is_empty() {
        return Err(Error::Empty("user pool is empty".into()));
    }
    let channel = |u: usize| pool.users[u].csi.entries();
    let mut candidates: Vec<usize> = subset.iter().copied().filter(|&u| norm(channel(u)) > 0.0).collect();
    let mut basis: Vec<Vec<Complex64>> = Vec::new();
    let mut selected = Vec::new();

    while selected.len() < max_users && !candidates.is_empty() {
        let mut best: Option<(usize, Vec<Complex64>, f64)> = None;
        for &u in &candidates {
            let mut g = channel(u).to_vec();
            for b in &basis {
                let coeff = inner(b, &g);
                g.iter_mut().zip(b).for_each(|(x, y)| *x -= coeff * y);
            }
            let n = norm(&g);
            if best.as_ref().map_or(true, |(_, _, bn)| n > *bn) {
                best = Some((u, g, n));
            }
        }
        let (pick, g, n) = best.expect("candidates nonempty");
        if !(n > 1e-12 * norm(channel(pick))) {
            break;
        }
        selected.push(pick);
        let direction: Vec<Complex64> = g.iter().map(|c| c / n).collect();
        candidates.retain(|&u| {
            u != pick && inner(&direction, channel(u)).norm() / norm(channel(u)) < alpha
        });
        basis.push(direction);
    }
    Ok(selected)
}

/// SUS over the whole pool; returns pool indices in selection order.
pub fn sus_select(pool: &UserPool, alpha: f64, max_users: usize) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..pool.len()).collect();
    sus_select_from(pool, &all, alpha, max_users)
}

/// Groups the pool by running SUS repeatedly on the users not yet placed.
pub fn sus_schedule(pool: &UserPool, alpha: f64, group_size: usize) -> Result<Schedule> {
    if group_size == 0 {
        return Err(invalid("group size must be at least 1"));
    }
    let mut remaining: Vec<usize> = (0..pool.len()).collect();
    let mut groups = Vec::new();
    while !remaining.is_empty() {
        let mut group = sus_select_from(pool, &remaining, alpha, group_size)?;
        if group.is_empty() {
            // Only zero-norm channels left; they get a group each.
            group.push(remaining[0]);
        }
        remaining.retain(|u| !group.contains(u));
        groups.push(group);
    }
    Ok(Schedule { groups, group_size })
}

/// Distance-enhanced flocking ordering: a nearest-neighbour chain.
///
/// Starts at user 0 and repeatedly appends the unplaced user closest to the
/// last one placed, ties to the lowest index, so that neighbours in space
/// are neighbours in the order. O(K^2).
pub fn def_order(pool: &UserPool) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::Empty("user pool is empty".into()));
    }
    let k = pool.len();
    let pos = |u: usize| pool.users[u].position;
    let mut order = Vec::with_capacity(k);
    order.push(0usize);
    let mut placed = vec![false; k];
    placed[0] = true;
    while order.len() < k {
        let last = pos(order[order.len() - 1]);
        let mut best: Option<(usize, f64)> = None;
        for u in (0..k).filter(|&u| !placed[u]) {
            let d = pos(u).distance_mm(&last);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((u, d));
            }
        }
        let (u, _) = best.expect("an unplaced user remains");
        placed[u] = true;
        order.push(u);
    }
    Ok(order)
}

/// DEF schedule: [`def_order`] dealt round-robin into `ceil(K / N)` groups,
/// so users adjacent in the chain land in different groups. Group sizes
/// differ by at most one and never exceed `group_size`.
pub fn def_schedule(pool: &UserPool, group_size: usize) -> Result<Schedule> {
    if group_size == 0 {
        return Err(invalid("group size must be at least 1"));
    }
    let order = def_order(pool)?;
    let count = order.len().div_ceil(group_size);
    let mut groups = vec![Vec::with_capacity(group_size); count];
    for (i, u) in order.into_iter().enumerate() {
        groups[i % count].push(u);
    }
    Ok(Schedule { groups, group_size })
}

/// Uniformly random partition into consecutive blocks, for comparison.
pub fn random_schedule(users: usize, group_size: usize, seed: u64) -> Result<Schedule> {
    if group_size == 0 {
        return Err(invalid("group size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..users).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Schedule { groups: order.chunks(group_size).map(<[usize]>::to_vec).collect(), group_size })
}

/// Smallest pairwise distance between members of the same group; `None`
/// when no group has two members.
pub fn min_intra_group_distance(schedule: &Schedule, pool: &UserPool) -> Option<f64> {
    let mut best: Option<f64> = None;
    for g in &schedule.groups {
        for (i, &a) in g.iter().enumerate() {
            for &b in &g[i + 1..] {
                let d = pool.users[a].position.distance_mm(&pool.users[b].position);
                best = Some(best.map_or(d, |m: f64| m.min(d)));
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleReport {
    pub group_sum_se: Vec<f64>,
    pub mean_sum_se: f64,
    pub min_intra_group_distance_mm: Option<f64>,
}

/// Sum SE of each group served on its own, their mean, and the closest
/// pair of co-scheduled users.
pub fn evaluate_schedule(
    schedule: &Schedule,
    pool: &UserPool,
    scheme: PrecodingScheme,
    budget: &LinkBudget,
) -> Result<ScheduleReport> {
    if schedule.groups.is_empty() {
        return Err(Error::Empty("schedule has no groups".into()));
    }
    let antennas = pool.users.first().map_or(0, |u| u.csi.antennas());
    let mut group_sum_se = Vec::with_capacity(schedule.groups.len());
    for (gid, group) in schedule.groups.iter().enumerate() {
        if group.len() > antennas {
            return Err(invalid(format!(
                "group {gid} has {} users for {antennas} antennas",
                group.len()
            )));
        }
        if let Some(&bad) = group.iter().find(|&&u| u >= pool.len()) {
            return Err(invalid(format!("group {gid} references user {bad} outside the pool")));
        }
        let users: Vec<&CsiSample> = group.iter().map(|&u| &pool.users[u].csi).collect();
        group_sum_se.push(group_spectral_efficiency(&users, scheme, budget)?.sum);
    }
    let mean_sum_se = group_sum_se.iter().sum::<f64>() / group_sum_se.len() as f64;
    Ok(ScheduleReport {
        group_sum_se,
        mean_sum_se,
        min_intra_group_distance_mm: min_intra_group_distance(schedule, pool),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(i: usize, h: Vec<Complex64>, x_mm: f64) -> PoolUser {
        let n = h.len();
        PoolUser {
            user_ref: i,
            csi: CsiSample::new(n, 1, h).unwrap(),
            position: Position3::new(x_mm, 0.0, 0.0),
        }
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn orthogonal_users_all_selected() {
        let pool = UserPool::new(vec![
            user(0, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], 0.0),
            user(1, vec![c(0.0, 0.0), c(0.0, 2.0), c(0.0, 0.0)], 1.0),
            user(2, vec![c(0.0, 0.0), c(0.0, 0.0), c(3.0, 0.0)], 2.0),
        ])
        .unwrap();
        assert_eq!(sus_select(&pool, 0.5, 3).unwrap(), vec![2, 1, 0]);
        assert_eq!(sus_select(&pool, 0.5, 2).unwrap(), vec![2, 1]);
    }

    #[test]
    fn identical_channels_pick_one() {
        let h = vec![c(1.0, 1.0), c(-0.5, 2.0)];
        let pool = UserPool::new(vec![user(0, h.clone(), 0.0), user(1, h, 1.0)]).unwrap();
        assert_eq!(sus_select(&pool, 1.0, 2).unwrap(), vec![0]);
    }

    #[test]
    fn alpha_range() {
        let pool = UserPool::new(vec![user(0, vec![c(1.0, 0.0)], 0.0)]).unwrap();
        assert!(sus_select(&pool, 0.0, 1).is_err());
        assert!(sus_select(&pool, 1.5, 1).is_err());
        assert!(sus_select(&UserPool::default(), 0.5, 1).is_err());
    }

    #[test]
    fn def_collinear_example() {
        let pool = UserPool::new(
            (0..4).map(|i| user(i, vec![c(1.0, i as f64)], i as f64 * 1000.0)).collect(),
        )
        .unwrap();
        assert_eq!(def_order(&pool).unwrap(), vec![0, 1, 2, 3]);
        let s = def_schedule(&pool, 2).unwrap();
        // neighbours 1 m apart end up in different groups
        assert_eq!(s.groups, vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(min_intra_group_distance(&s, &pool), Some(2000.0));
        assert!(s.is_partition_of(4));
    }

    #[test]
    fn def_single_group_and_remainder() {
        let pool = UserPool::new((0..5).map(|i| user(i, vec![c(1.0, 0.0)], i as f64)).collect()).unwrap();
        let one = def_schedule(&pool, 5).unwrap();
        assert_eq!(one.groups.len(), 1);
        assert_eq!(one.groups[0].len(), 5);
        let split = def_schedule(&pool, 2).unwrap();
        assert_eq!(split.groups.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert_eq!(split.groups, vec![vec![0, 3], vec![1, 4], vec![2]]);
        assert!(split.is_partition_of(5));
        assert!(def_schedule(&pool, 0).is_err());
        assert!(def_schedule(&UserPool::default(), 2).is_err());
    }

    #[test]
    fn def_colocated_users_deterministic() {
        let pool = UserPool::new((0..7).map(|i| user(i, vec![c(1.0, 0.0)], 0.0)).collect()).unwrap();
        let a = def_schedule(&pool, 3).unwrap();
        assert_eq!(a, def_schedule(&pool, 3).unwrap());
        assert!(a.is_partition_of(7));
        assert_eq!(def_order(&pool).unwrap(), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn sus_schedule_partitions() {
        let pool = UserPool::new(vec![
            user(0, vec![c(1.0, 0.0), c(0.0, 0.0)], 0.0),
            user(1, vec![c(1.0, 0.0), c(0.0, 0.0)], 1.0),
            user(2, vec![c(0.0, 0.0), c(1.0, 0.0)], 2.0),
        ])
        .unwrap();
        let s = sus_schedule(&pool, 0.3, 2).unwrap();
        assert!(s.is_partition_of(3));
        assert_eq!(s.groups, vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn evaluate_single_user() {
        let pool = UserPool::new(vec![user(0, vec![c(0.0, 2.0)], 0.0)]).unwrap();
        let s = Schedule { groups: vec![vec![0]], group_size: 1 };
        let budget = LinkBudget::new(1.0, 4.0).unwrap();
        let r = evaluate_schedule(&s, &pool, PrecodingScheme::Zf, &budget).unwrap();
        assert!((r.mean_sum_se - 1.0).abs() < 1e-14);
        assert_eq!(r.min_intra_group_distance_mm, None);
    }

    #[test]
    fn evaluate_rejects_oversized_group() {
        let pool = UserPool::new((0..3).map(|i| user(i, vec![c(1.0, i as f64)], i as f64)).collect()).unwrap();
        let s = Schedule { groups: vec![vec![0, 1, 2]], group_size: 3 };
        assert!(evaluate_schedule(&s, &pool, PrecodingScheme::Zf, &LinkBudget::default()).is_err());
    }

    #[test]
    fn schedule_csv() {
        let pool = UserPool::new((0..3).map(|i| user(i, vec![c(1.0, 0.0)], i as f64 * 10.0)).collect()).unwrap();
        let s = Schedule { groups: vec![vec![2, 0], vec![1]], group_size: 2 };
        let mut buf = Vec::new();
        s.write_csv(&pool, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "group_id,user_id,x_mm,y_mm\n0,2,20,0\n0,0,0,0\n1,1,10,0\n");
    }
}
