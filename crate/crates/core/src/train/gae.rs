/// Generalized advantage estimates and value targets for one trajectory.
///
/// `bootstrap` is the value of the state after the last step; it is ignored
/// when the last step is terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert!(
        rewards.len() == values.len() && values.len() == dones.len(),
        "rewards, values and dones must have equal lengths"
    );
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(r: &[f64], v: &[f64], d: &[bool], boot: f64, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let next_v = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
        let delta = |t: usize| r[t] + g * next_v(t) * if d[t] { 0.0 } else { 1.0 } - v[t];
        (0..n)
            .map(|t| {
                let mut sum = 0.0;
                for k in 0..n - t {
                    if (t..t + k).any(|j| d[j]) {
                        break;
                    }
                    sum += (g * l).powi(k as i32) * delta(t + k);
                }
                sum
            })
            .collect()
    }

    #[test]
    fn single_terminal_step() {
        let (a, r) = compute_gae(&[1.0], &[0.0], &[true], 123.0, 0.99, 0.95);
        assert_eq!((a[0], r[0]), (1.0, 1.0));
    }

    #[test]
    fn lambda_one_gives_monte_carlo() {
        let r = [0.5, -0.2, 0.1, 0.3];
        let v = [0.1, 0.4, -0.3, 0.2];
        let boot = 0.7;
        let g: f64 = 0.9;
        let (a, _) = compute_gae(&r, &v, &[false; 4], boot, g, 1.0);
        for t in 0..4 {
            let mc: f64 = (t..4).map(|k| g.powi((k - t) as i32) * r[k]).sum::<f64>()
                + g.powi((4 - t) as i32) * boot;
            assert!((a[t] - (mc - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn five_step_example_matches_double_sum() {
        let r = [0.3, -0.1, 0.8, 0.0, -0.5];
        let v = [0.2, 0.1, -0.4, 0.6, 0.3];
        let d = [false, false, true, false, false];
        let (a, ret) = compute_gae(&r, &v, &d, 0.25, 0.99, 0.95);
        let want = brute_force(&r, &v, &d, 0.25, 0.99, 0.95);
        for t in 0..5 {
            assert!((a[t] - want[t]).abs() < 1e-10);
            assert!((ret[t] - (want[t] + v[t])).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn recursion_equals_double_sum(
            steps in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, prop::bool::weighted(0.1)), 1..64),
            boot in -1.0f64..1.0,
            g in 0.5f64..1.0,
            l in 0.5f64..1.0,
        ) {
            let r: Vec<f64> = steps.iter().map(|s| s.0).collect();
            let v: Vec<f64> = steps.iter().map(|s| s.1).collect();
            let d: Vec<bool> = steps.iter().map(|s| s.2).collect();
            let (a, _) = compute_gae(&r, &v, &d, boot, g, l);
            for (x, y) in a.iter().zip(brute_force(&r, &v, &d, boot, g, l)) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
