use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Finite MDP with explicit transition and expected-reward tables.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `[s][a][s']`
    transitions: Vec<f64>,
    /// `[s][a]`
    rewards: Vec<f64>,
    gamma: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::config("tabular MDP needs at least one state and one action"));
        }
        if transitions.len() != n_states * n_actions * n_states || rewards.len() != n_states * n_actions {
            return Err(Error::config("tabular MDP table sizes do not match state/action counts"));
        }
        let mdp = Self { n_states, n_actions, transitions, rewards, gamma };
        mdp.validate()?;
        Ok(mdp)
    }

    fn validate(&self) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.row(s, a);
                if row.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::config(format!("negative or NaN probability in row ({s}, {a})")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::config(format!("transition row ({s}, {a}) sums to {sum}, not 1")));
                }
                let r = self.reward(s, a);
                if !(-1.0..=0.0).contains(&r) {
                    return Err(Error::config(format!("reward {r} at ({s}, {a}) outside [-1, 0]")));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("discount {} outside [0, 1]", self.gamma)));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.row(s, a)[next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    /// The unique successor when the row is deterministic.
    pub fn successor(&self, s: usize, a: usize) -> Option<usize> {
        let row = self.row(s, a);
        row.iter().position(|&p| p == 1.0)
    }

    pub fn is_deterministic(&self) -> bool {
        (0..self.n_states).all(|s| (0..self.n_actions).all(|a| self.successor(s, a).is_some()))
    }
}

/// Action-value table `[s][a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn greedy(&self, s: usize) -> usize {
        let row = &self.values[s * self.n_actions..(s + 1) * self.n_actions];
        let mut best = 0;
        for (a, q) in row.iter().enumerate() {
            if *q > row[best] {
                best = a;
            }
        }
        best
    }

    /// `V(s) = Q(s, policy(s))`.
    pub fn state_value(&self, s: usize, policy: &[usize]) -> f64 {
        self.get(s, policy[s])
    }
}

/// Exact `Q^pi` for a deterministic policy table, or `Q*` when `policy` is
/// `None`, by iterating the Bellman operator until successive iterates
/// differ by at most `tol` in sup norm.
pub fn value_iteration(mdp: &TabularMdp, policy: Option<&[usize]>, tol: f64) -> Result<QTable> {
    mdp.validate()?;
    if !(mdp.gamma < 1.0) {
        return Err(Error::config(format!("value iteration needs gamma < 1, got {}", mdp.gamma)));
    }
    if let Some(p) = policy {
        if p.len() != mdp.n_states || p.iter().any(|&a| a >= mdp.n_actions) {
            return Err(Error::config("policy table does not match the MDP"));
        }
    }
    if !(tol > 0.0) {
        return Err(Error::config("tolerance must be positive"));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q = vec![0.0; ns * na];
    let mut v = vec![0.0; ns];
    loop {
        for s in 0..ns {
            let row = &q[s * na..(s + 1) * na];
            v[s] = match policy {
                Some(p) => row[p[s]],
                None => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
        }
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let expected: f64 = mdp.row(s, a).iter().zip(&v).map(|(p, vn)| p * vn).sum();
                let new = mdp.reward(s, a) + mdp.gamma * expected;
                delta = delta.max((new - q[s * na + a]).abs());
                q[s * na + a] = new;
            }
        }
        if delta <= tol {
            return Ok(QTable { n_actions: na, values: q });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic chain: action 0 stays, action 1 moves right (last cell
    /// absorbs). Reward -1 everywhere except staying in the last cell.
    fn chain3(gamma: f64) -> TabularMdp {
        let n = 3;
        let mut t = vec![0.0; n * 2 * n];
        let mut r = vec![-1.0; n * 2];
        for s in 0..n {
            t[(s * 2) * n + s] = 1.0;
            t[(s * 2 + 1) * n + (s + 1).min(n - 1)] = 1.0;
        }
        r[(n - 1) * 2] = 0.0;
        r[(n - 1) * 2 + 1] = 0.0;
        TabularMdp::new(n, 2, t, r, gamma).unwrap()
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let err = TabularMdp::new(2, 1, vec![0.5, 0.4, 0.0, 1.0], vec![0.0, 0.0], 0.9).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = TabularMdp::new(1, 1, vec![1.0], vec![0.5], 0.9).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn single_absorbing_state_has_zero_value() {
        let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![0.0, 0.0], 0.95).unwrap();
        let q = value_iteration(&mdp, None, 1e-12).unwrap();
        assert!(q.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_cost_chain_is_geometric_series() {
        // two states swapping or staying, reward -1 always
        let t = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let mdp = TabularMdp::new(2, 2, t, vec![-1.0; 4], 0.5).unwrap();
        for policy in [[0usize, 0], [1, 0], [0, 1], [1, 1]] {
            let q = value_iteration(&mdp, Some(&policy), 1e-13).unwrap();
            for v in q.values() {
                assert!((v + 2.0).abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn matches_finite_horizon_rollouts() {
        let gamma = 0.6;
        let mdp = chain3(gamma);
        let policy = [1usize, 0, 1];
        let q = value_iteration(&mdp, Some(&policy), 1e-14).unwrap();
        // gamma^50 is below 1e-11, so 50-step sums are exact to 1e-9
        for s in 0..3 {
            for a in 0..2 {
                let (mut st, mut act, mut disc, mut total) = (s, a, 1.0, 0.0);
                for _ in 0..50 {
                    total += disc * mdp.reward(st, act);
                    st = mdp.successor(st, act).unwrap();
                    act = policy[st];
                    disc *= gamma;
                }
                assert!((q.get(s, a) - total).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn optimal_values_prefer_moving_right() {
        let q = value_iteration(&chain3(0.9), None, 1e-12).unwrap();
        assert_eq!(q.greedy(0), 1);
        assert_eq!(q.greedy(1), 1);
        assert!((q.get(1, 1) + 1.0).abs() < 1e-9);
    }

    #[test]
    fn gamma_one_is_rejected() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![-1.0], 1.0).unwrap();
        assert!(value_iteration(&mdp, None, 1e-9).is_err());
    }
}
