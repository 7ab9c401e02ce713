//! Downlink precoding, received power and spectral efficiency.
//!
//! Conventions: a user's channel on subcarrier `k` is the row `h_k` across
//! the array and its received amplitude under weights `w` is `h_k^T w`.
//! Precoding is done independently per pilot subcarrier and spectral
//! efficiency is averaged over subcarriers. Power is split equally between
//! the users of a group.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm, right_pseudo_inverse};
use crate::model::CsiSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrecodingScheme {
    Mrt,
    Zf,
}

impl FromStr for PrecodingScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mrt" => Ok(Self::Mrt),
            "zf" => Ok(Self::Zf),
            other => Err(invalid(format!("unknown precoding scheme `{other}`"))),
        }
    }
}

impl fmt::Display for PrecodingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mrt => "mrt",
            Self::Zf => "zf",
        })
    }
}

/// Unit-norm beamforming vectors, one per (user, subcarrier).
#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingWeights {
    pub scheme: PrecodingScheme,
    users: usize,
    antennas: usize,
    subcarriers: usize,
    // [user][subcarrier][antenna]
    w: Vec<Complex64>,
}

impl PrecodingWeights {
    pub fn users(&self) -> usize {
        self.users
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn vector(&self, user: usize, subcarrier: usize) -> &[Complex64] {
        let start = (user * self.subcarriers + subcarrier) * self.antennas;
        &self.w[start..start + self.antennas]
    }
}

/// Transmit power and receiver noise, in the same linear unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub total_tx_power: f64,
    /// `0` models a noiseless receiver.
    pub noise_power: f64,
}

/// Receiver noise floor assumed by [`LinkBudget::default`].
pub const DEFAULT_NOISE_DBM: f64 = -90.0;

impl Default for LinkBudget {
    /// 18.5 dBm transmit, 15 dB receive gain, noise at [`DEFAULT_NOISE_DBM`]; units of mW.
    fn default() -> Self {
        Self::from_dbm(18.5 + 15.0, DEFAULT_NOISE_DBM)
    }
}

impl LinkBudget {
    pub fn new(total_tx_power: f64, noise_power: f64) -> Result<Self> {
        let b = Self { total_tx_power, noise_power };
        b.validate()?;
        Ok(b)
    }

    /// Effective transmit power (after gains) and noise, both in dBm; stored in mW.
    pub fn from_dbm(effective_tx_dbm: f64, noise_dbm: f64) -> Self {
        Self {
            total_tx_power: 10f64.powf(effective_tx_dbm / 10.0),
            noise_power: 10f64.powf(noise_dbm / 10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_tx_power > 0.0 && self.total_tx_power.is_finite()) {
            return Err(invalid(format!("transmit power must be positive, got {}", self.total_tx_power)));
        }
        if !(self.noise_power >= 0.0) {
            return Err(invalid(format!("noise power must be nonnegative, got {}", self.noise_power)));
        }
        Ok(())
    }

    pub fn per_user(&self, users: usize) -> f64 {
        self.total_tx_power / users.max(1) as f64
    }
}

/// Maximum ratio transmission: `w_k = conj(h_k) / ||h_k||` per subcarrier.
pub fn mrt_weights(h: &CsiSample) -> Result<PrecodingWeights> {
    let (m, f) = (h.antennas(), h.subcarriers());
    let mut w = Vec::with_capacity(m * f);
    for k in 0..f {
        let col = h.column(k);
        let n = norm(&col);
        if n == 0.0 {
            return Err(Error::ZeroChannel { subcarrier: k });
        }
        w.extend(col.iter().map(|c| c.conj() / n));
    }
    Ok(PrecodingWeights { scheme: PrecodingScheme::Mrt, users: 1, antennas: m, subcarriers: f, w })
}

fn check_group(users: &[&CsiSample]) -> Result<(usize, usize)> {
    let first = users.first().ok_or_else(|| Error::Empty("no users to precode".into()))?;
    if let Some(bad) = users.iter().position(|u| !u.same_shape(first)) {
        return Err(Error::DimensionMismatch(format!(
            "user {bad} is {}x{}, expected {}x{}",
            users[bad].antennas(),
            users[bad].subcarriers(),
            first.antennas(),
            first.subcarriers()
        )));
    }
    Ok((first.antennas(), first.subcarriers()))
}

/// Zero-forcing: normalised columns of `H^H (H H^H)^{-1}` per subcarrier.
pub fn zf_weights(users: &[&CsiSample]) -> Result<PrecodingWeights> {
    let (m, f) = check_group(users)?;
    let k_users = users.len();
    if k_users > m {
        return Err(invalid(format!("{k_users} users exceed {m} antennas")));
    }
    let mut w = vec![Complex64::new(0.0, 0.0); k_users * f * m];
    for k in 0..f {
        let rows: Vec<Vec<Complex64>> = users.iter().map(|u| u.column(k)).collect();
        let refs: Vec<&[Complex64]> = rows.iter().map(Vec::as_slice).collect();
        let cols = right_pseudo_inverse(&refs).ok_or(Error::RankDeficient { subcarrier: k })?;
        for (u, col) in cols.iter().enumerate() {
            let n = norm(col);
            let start = (u * f + k) * m;
            for (dst, c) in w[start..start + m].iter_mut().zip(col) {
                *dst = c / n;
            }
        }
    }
    Ok(PrecodingWeights { scheme: PrecodingScheme::Zf, users: k_users, antennas: m, subcarriers: f, w })
}

/// Weights for a group under `scheme`. MRT weights ignore the other users.
pub fn precode(users: &[&CsiSample], scheme: PrecodingScheme) -> Result<PrecodingWeights> {
    match scheme {
        PrecodingScheme::Zf => zf_weights(users),
        PrecodingScheme::Mrt => {
            let (m, f) = check_group(users)?;
            let mut w = Vec::with_capacity(users.len() * m * f);
            for u in users {
                w.extend(mrt_weights(u)?.w);
            }
            Ok(PrecodingWeights { scheme, users: users.len(), antennas: m, subcarriers: f, w })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedPower {
    pub per_subcarrier: Vec<f64>,
    /// Mean over subcarriers.
    pub mean: f64,
}

/// Power seen through `h_eval` from the beam of `user`:
/// `P_user |h_eval,k^T w_k|^2`, with `P_user` the equal share of the budget.
pub fn received_power(
    h_eval: &CsiSample,
    weights: &PrecodingWeights,
    user: usize,
    budget: &LinkBudget,
) -> Result<ReceivedPower> {
    if h_eval.antennas() != weights.antennas || h_eval.subcarriers() != weights.subcarriers {
        return Err(Error::DimensionMismatch(format!(
            "channel is {}x{}, weights are {}x{}",
            h_eval.antennas(),
            h_eval.subcarriers(),
            weights.antennas,
            weights.subcarriers
        )));
    }
    if user >= weights.users {
        return Err(invalid(format!("user {user} not in a {}-user precoder", weights.users)));
    }
    let p_user = budget.per_user(weights.users);
    let m = h_eval.antennas();
    let entries = h_eval.entries();
    let per_subcarrier: Vec<f64> = (0..weights.subcarriers)
        .map(|k| {
            let w = weights.vector(user, k);
            let amp: Complex64 = (0..m).map(|a| entries[a * weights.subcarriers + k] * w[a]).sum();
            p_user * amp.norm_sqr()
        })
        .collect();
    let mean = per_subcarrier.iter().sum::<f64>() / per_subcarrier.len() as f64;
    Ok(ReceivedPower { per_subcarrier, mean })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSe {
    /// bits/s/Hz per user, averaged over subcarriers.
    pub per_user: Vec<f64>,
    pub sum: f64,
}

/// Spectral efficiency of users served together:
/// `SINR_k = P_k |h_k^T w_k|^2 / (noise + sum_{j != k} P_j |h_k^T w_j|^2)`.
pub fn group_spectral_efficiency(
    users: &[&CsiSample],
    scheme: PrecodingScheme,
    budget: &LinkBudget,
) -> Result<GroupSe> {
    budget.validate()?;
    let weights = precode(users, scheme)?;
    let (f, k_users) = (weights.subcarriers, users.len());
    let p = budget.per_user(k_users);
    let mut per_user = vec![0.0; k_users];
    for k in 0..f {
        let rows: Vec<Vec<Complex64>> = users.iter().map(|u| u.column(k)).collect();
        for (i, h) in rows.iter().enumerate() {
            let signal = p * dot(h, weights.vector(i, k)).norm_sqr();
            let interference: f64 = (0..k_users)
                .filter(|&j| j != i)
                .map(|j| p * dot(h, weights.vector(j, k)).norm_sqr())
                .sum();
            per_user[i] += (1.0 + signal / (budget.noise_power + interference)).log2();
        }
    }
    per_user.iter_mut().for_each(|se| *se /= f as f64);
    let sum = per_user.iter().sum();
    Ok(GroupSe { per_user, sum })
}

/// Zero-forcing state for one subcarrier that grows one user at a time.
///
/// Holds the QR factors of `H^H` and `X = R^{-H}`, so the pseudo-inverse
/// columns are `Q X`. Because `Q` is orthonormal, `||w_k||^2` is the squared
/// norm of column `k` of `X`, and the ZF signal gain `1 / ||w_k||^2` follows
/// without forming `W`. Interference is zero by construction.
struct IncrementalZf {
    q: Vec<Vec<Complex64>>,
    // r[i][j], upper triangular, grown by columns
    r: Vec<Vec<Complex64>>,
    // x[t][col], lower triangular, grown by rows
    x: Vec<Vec<Complex64>>,
}

impl IncrementalZf {
    fn new() -> Self {
        Self { q: Vec::new(), r: Vec::new(), x: Vec::new() }
    }

    /// Appends a user; `false` if its channel is dependent on those present.
    fn push(&mut self, row: &[Complex64]) -> bool {
        let n = self.q.len();
        let mut v: Vec<Complex64> = row.iter().map(|c| c.conj()).collect();
        let original = norm(&v);
        if original == 0.0 {
            return false;
        }
        let mut rcol = vec![Complex64::new(0.0, 0.0); n + 1];
        for _ in 0..2 {
            for (i, qi) in self.q.iter().enumerate() {
                let coeff = crate::linalg::inner(qi, &v);
                rcol[i] += coeff;
                for (vv, qq) in v.iter_mut().zip(qi) {
                    *vv -= coeff * qq;
                }
            }
        }
        let diag = norm(&v);
        if !(diag > 1e-10 * original) {
            return false;
        }
        rcol[n] = Complex64::new(diag, 0.0);
        v.iter_mut().for_each(|c| *c /= diag);
        self.q.push(v);

        let mut xrow = vec![Complex64::new(0.0, 0.0); n + 1];
        for (col, slot) in xrow.iter_mut().enumerate() {
            let mut acc = if col == n { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
            for t in col..n {
                acc -= rcol[t].conj() * self.x[t][col];
            }
            *slot = acc / rcol[n].conj();
        }
        self.r.push(rcol);
        self.x.push(xrow);
        true
    }

    /// `1 / ||w_k||^2` for every user present.
    fn gains(&self) -> Vec<f64> {
        let n = self.x.len();
        (0..n)
            .map(|col| 1.0 / (col..n).map(|t| self.x[t][col].norm_sqr()).sum::<f64>())
            .collect()
    }
}

/// Largest number of users the array can serve at once under ZF with every
/// user at or above `se_threshold` bits/s/Hz.
///
/// Each trial draws users from the pool uniformly without replacement and
/// adds them one at a time until some user drops below the threshold, the
/// group becomes rank deficient, or the array or pool is exhausted. The
/// result is the lower median of the last feasible group size over trials.
pub fn max_served_users(
    pool: &[CsiSample],
    se_threshold: f64,
    trials: usize,
    seed: u64,
    budget: &LinkBudget,
) -> Result<usize> {
    let first = pool.first().ok_or_else(|| Error::Empty("user pool is empty".into()))?;
    if !(se_threshold > 0.0) {
        return Err(invalid(format!("SE threshold must be positive, got {se_threshold}")));
    }
    if trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    budget.validate()?;
    if pool.iter().any(|u| !u.same_shape(first)) {
        return Err(Error::DimensionMismatch("user pool mixes CSI shapes".into()));
    }
    let (m, f) = (first.antennas(), first.subcarriers());
    let limit = pool.len().min(m);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        let mut states: Vec<IncrementalZf> = (0..f).map(|_| IncrementalZf::new()).collect();
        let mut served = 0;
        'grow: for (added, &idx) in order.iter().take(limit).enumerate() {
            let k_users = added + 1;
            let mut se = vec![0.0; k_users];
            let p = budget.per_user(k_users);
            for (sc, state) in states.iter_mut().enumerate() {
                if !state.push(&pool[idx].column(sc)) {
                    break 'grow;
                }
                for (acc, g) in se.iter_mut().zip(state.gains()) {
                    *acc += (1.0 + p * g / budget.noise_power).log2();
                }
            }
            if se.iter().any(|s| s / (f as f64) < se_threshold) {
                break;
            }
            served = k_users;
        }
        counts.push(served);
    }
    counts.sort_unstable();
    Ok(counts[(counts.len() - 1) / 2])
}
