//! The shared actor-critic network: forward pass with a retained tape, exact
//! reverse pass, and He-style initialization.

use rand::Rng;

use super::config::{
    ActionSpace, NetConfig, ParamLayout, CONV1, CONV2, FC_GOAL_DIR, FC_GOAL_DIST, FC_LIDAR,
    FC_MERGE, FC_VEL, LOG_STD, POLICY, VALUE,
};
use super::dist::{ActionDistribution, Categorical, Gaussian};
use super::layers::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, relu, relu_backward, ConvGeom,
};
use super::scalar::{Scalar, View};
use super::NetError;
use crate::sim::{ObservationStack, MAX_ANGULAR, MAX_LINEAR};

/// Lidar ranges are divided by this before entering the network.
pub const LIDAR_SCALE: f64 = 20.0;
/// Goal distances are divided by this before entering the network.
pub const GOAL_DISTANCE_SCALE: f64 = 10.0;

/// Network inputs for a batch of observation stacks. Lidar is channels-last:
/// `lidar[(row * beams + beam) * frames + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch<S> {
    rows: usize,
    beams: usize,
    frames: usize,
    lidar: Vec<S>,
    goal_dir: Vec<S>,
    goal_dist: Vec<S>,
    velocity: Vec<S>,
}

impl<S: Scalar> InputBatch<S> {
    pub fn new(config: &NetConfig) -> Self {
        Self {
            rows: 0,
            beams: config.beams,
            frames: config.frames,
            lidar: Vec::new(),
            goal_dir: Vec::new(),
            goal_dist: Vec::new(),
            velocity: Vec::new(),
        }
    }

    pub fn from_stacks<'a>(
        config: &NetConfig,
        stacks: impl IntoIterator<Item = &'a ObservationStack>,
    ) -> Result<Self, NetError> {
        let mut b = Self::new(config);
        for s in stacks {
            b.push(s)?;
        }
        Ok(b)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn push(&mut self, stack: &ObservationStack) -> Result<(), NetError> {
        let frames = stack.frames();
        if frames.len() != self.frames {
            return Err(NetError::Shape(format!(
                "observation has {} frames, network expects {}",
                frames.len(),
                self.frames
            )));
        }
        if let Some(f) = frames.iter().find(|f| f.lidar.ranges.len() != self.beams) {
            return Err(NetError::Shape(format!(
                "observation has {} lidar beams, network expects {}",
                f.lidar.ranges.len(),
                self.beams
            )));
        }
        let start = self.lidar.len();
        self.lidar.resize(start + self.beams * self.frames, S::zero());
        let dst = &mut self.lidar[start..];
        for (fi, f) in frames.iter().enumerate() {
            for (bi, &r) in f.lidar.ranges.iter().enumerate() {
                dst[bi * self.frames + fi] = S::lit(r as f64 / LIDAR_SCALE);
            }
        }
        for f in frames {
            self.goal_dir.push(S::lit(f.goal_direction.x));
            self.goal_dir.push(S::lit(f.goal_direction.y));
            self.goal_dist.push(S::lit(f.goal_distance / GOAL_DISTANCE_SCALE));
            self.velocity.push(S::lit(f.velocity.v_lin / MAX_LINEAR));
            self.velocity.push(S::lit(f.velocity.v_ang / MAX_ANGULAR));
        }
        self.rows += 1;
        Ok(())
    }

    /// Rows `idx` in the given order.
    pub fn gather(&self, idx: &[usize]) -> Self {
        fn pick<S: Copy>(src: &[S], width: usize, idx: &[usize]) -> Vec<S> {
            let mut out = Vec::with_capacity(idx.len() * width);
            for &i in idx {
                out.extend_from_slice(&src[i * width..(i + 1) * width]);
            }
            out
        }
        Self {
            rows: idx.len(),
            beams: self.beams,
            frames: self.frames,
            lidar: pick(&self.lidar, self.beams * self.frames, idx),
            goal_dir: pick(&self.goal_dir, 2 * self.frames, idx),
            goal_dist: pick(&self.goal_dist, self.frames, idx),
            velocity: pick(&self.velocity, 2 * self.frames, idx),
        }
    }

    /// Appends all rows of `other`.
    pub fn extend(&mut self, other: &Self) -> Result<(), NetError> {
        if other.beams != self.beams || other.frames != self.frames {
            return Err(NetError::Shape("cannot merge batches of different shape".into()));
        }
        self.rows += other.rows;
        self.lidar.extend_from_slice(&other.lidar);
        self.goal_dir.extend_from_slice(&other.goal_dir);
        self.goal_dist.extend_from_slice(&other.goal_dist);
        self.velocity.extend_from_slice(&other.velocity);
        Ok(())
    }

    /// Raw input slices `(lidar, goal_dir, goal_dist, velocity)`.
    pub fn parts_mut(&mut self) -> (&mut [S], &mut [S], &mut [S], &mut [S]) {
        (&mut self.lidar, &mut self.goal_dir, &mut self.goal_dist, &mut self.velocity)
    }
}

/// Head outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs<S> {
    pub rows: usize,
    pub action_space: ActionSpace,
    /// `rows x policy_outputs`: logits or Gaussian means.
    pub policy: Vec<S>,
    pub value: Vec<S>,
    /// Shared log standard deviations of the Gaussian head; empty otherwise.
    pub log_std: Vec<S>,
}

impl<S: Scalar> Outputs<S> {
    pub fn policy_row(&self, row: usize) -> &[S] {
        let w = self.action_space.policy_outputs();
        &self.policy[row * w..(row + 1) * w]
    }

    pub fn distribution(&self, row: usize) -> ActionDistribution {
        let p: Vec<f64> = self.policy_row(row).iter().map(|v| v.f64()).collect();
        match self.action_space {
            ActionSpace::Discrete => ActionDistribution::Discrete(Categorical::from_logits(&p)),
            ActionSpace::Continuous => ActionDistribution::Continuous(Gaussian::new(
                p,
                self.log_std.iter().map(|v| v.f64()).collect(),
            )),
        }
    }
}

/// Activations retained by [`Network::forward`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct Tape<S> {
    rows: usize,
    conv1: Vec<S>,
    conv2: Vec<S>,
    concat: Vec<S>,
    merge: Vec<S>,
}

/// Loss gradient with respect to the head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads<S> {
    pub policy: Vec<S>,
    pub value: Vec<S>,
    pub log_std: Vec<S>,
}

impl<S: Scalar> OutputGrads<S> {
    pub fn zeros(config: &NetConfig, rows: usize) -> Self {
        let a = config.policy_outputs();
        Self {
            policy: vec![S::zero(); rows * a],
            value: vec![S::zero(); rows],
            log_std: match config.action_space {
                ActionSpace::Discrete => Vec::new(),
                ActionSpace::Continuous => vec![S::zero(); a],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    config: NetConfig,
    layout: ParamLayout,
    params: Vec<S>,
}

impl<S: Scalar> Network<S> {
    pub fn zeros(config: NetConfig) -> Result<Self, NetError> {
        let layout = config.layout()?;
        let params = vec![S::zero(); layout.total];
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    /// Uniform fan-in initialization, `U(-b, b)` with `b = sqrt(6 / fan_in)`;
    /// head weights are scaled by 0.01, biases and log-std start at 0.
    pub fn init<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self, NetError> {
        let mut net = Self::zeros(config)?;
        for (i, t) in net.layout.tensors.iter().enumerate() {
            if !t.name.ends_with(".weight") {
                continue;
            }
            let fan_in = t.shape[0] as f64;
            let gain = if i == POLICY || i == VALUE { 0.01 } else { 1.0 };
            let bound = gain * (6.0 / fan_in).sqrt();
            for p in &mut net.params[t.range()] {
                *p = S::lit(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn from_params(config: NetConfig, params: Vec<S>) -> Result<Self, NetError> {
        let layout = config.layout()?;
        if params.len() != layout.total {
            return Err(NetError::Shape(format!(
                "parameter vector has {} entries, layout needs {}",
                params.len(),
                layout.total
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NetError::NonFinite);
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&[S]> {
        self.layout.get(name).map(|t| &self.params[t.range()])
    }

    pub fn cast<T: Scalar>(&self) -> Network<T> {
        Network {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| T::lit(p.f64())).collect(),
        }
    }

    fn geoms(&self) -> (ConvGeom, ConvGeom) {
        let c = &self.config;
        let l1 = c.conv1_len().expect("validated");
        let g1 = ConvGeom {
            len: c.beams,
            channels: c.frames,
            kernel: c.conv1.kernel,
            stride: c.conv1.stride,
            filters: c.conv1.filters,
            out_len: l1,
        };
        let g2 = ConvGeom {
            len: l1,
            channels: c.conv1.filters,
            kernel: c.conv2.kernel,
            stride: c.conv2.stride,
            filters: c.conv2.filters,
            out_len: c.conv2_len().expect("validated"),
        };
        (g1, g2)
    }

    fn check_batch(&self, batch: &InputBatch<S>) -> Result<(), NetError> {
        if batch.beams != self.config.beams || batch.frames != self.config.frames {
            return Err(NetError::Shape(format!(
                "batch has {} beams x {} frames, network expects {} x {}",
                batch.beams, batch.frames, self.config.beams, self.config.frames
            )));
        }
        Ok(())
    }

    fn w(&self, index: usize) -> (&[S], &[S]) {
        let (w, b) = self.layout.layer(index);
        (&self.params[w], &self.params[b])
    }

    pub fn forward(&self, batch: &InputBatch<S>) -> Result<(Outputs<S>, Tape<S>), NetError> {
        self.check_batch(batch)?;
        let c = &self.config;
        let n = batch.rows;
        let (g1, g2) = self.geoms();

        let mut conv1 = vec![S::zero(); n * g1.out_len * g1.filters];
        let (w, b) = self.w(CONV1);
        conv1d_forward(&batch.lidar, n, g1, w, b, &mut conv1);
        relu(&mut conv1);

        let mut conv2 = vec![S::zero(); n * g2.out_len * g2.filters];
        let (w, b) = self.w(CONV2);
        conv1d_forward(&conv1, n, g2, w, b, &mut conv2);
        relu(&mut conv2);

        let width = c.concat_len();
        let mut concat = vec![S::zero(); n * width];
        let mut col = 0;
        for (index, input, inputs) in self.branches(batch, &conv2) {
            let (w, b) = self.w(index);
            dense_forward(View::rows(input, inputs), n, w, b, &mut concat[col..], width);
            col += b.len();
        }
        relu(&mut concat);

        let mut merge = vec![S::zero(); n * c.fc_merge];
        let (w, b) = self.w(FC_MERGE);
        dense_forward(View::rows(&concat, width), n, w, b, &mut merge, c.fc_merge);
        relu(&mut merge);

        let a = c.policy_outputs();
        let mut policy = vec![S::zero(); n * a];
        let (w, b) = self.w(POLICY);
        dense_forward(View::rows(&merge, c.fc_merge), n, w, b, &mut policy, a);
        let mut value = vec![S::zero(); n];
        let (w, b) = self.w(VALUE);
        dense_forward(View::rows(&merge, c.fc_merge), n, w, b, &mut value, 1);

        let log_std = match c.action_space {
            ActionSpace::Discrete => Vec::new(),
            ActionSpace::Continuous => self.params[self.layout.tensors[LOG_STD].range()].to_vec(),
        };
        let out = Outputs {
            rows: n,
            action_space: c.action_space,
            policy,
            value,
            log_std,
        };
        let tape = Tape {
            rows: n,
            conv1,
            conv2,
            concat,
            merge,
        };
        Ok((out, tape))
    }

    /// The four dense branches feeding the merge layer, in concatenation order.
    fn branches<'a>(
        &self,
        batch: &'a InputBatch<S>,
        conv2: &'a [S],
    ) -> [(usize, &'a [S], usize); 4] {
        let c = &self.config;
        [
            (FC_LIDAR, conv2, c.flatten_len().expect("validated")),
            (FC_GOAL_DIR, &batch.goal_dir[..], c.goal_dir_inputs()),
            (FC_GOAL_DIST, &batch.goal_dist[..], c.goal_dist_inputs()),
            (FC_VEL, &batch.velocity[..], c.vel_inputs()),
        ]
    }

    /// Exact parameter gradient of a loss whose gradient at the outputs is `grads`.
    pub fn backward(
        &self,
        batch: &InputBatch<S>,
        tape: &Tape<S>,
        grads: &OutputGrads<S>,
    ) -> Result<Vec<S>, NetError> {
        self.check_batch(batch)?;
        let c = &self.config;
        let n = batch.rows;
        let a = c.policy_outputs();
        if tape.rows != n || grads.policy.len() != n * a || grads.value.len() != n {
            return Err(NetError::Shape(format!(
                "backward: batch of {n} rows, tape of {}, gradients for {} rows",
                tape.rows,
                grads.value.len()
            )));
        }
        let (g1, g2) = self.geoms();
        let mut out = vec![S::zero(); self.layout.total];
        let p = &self.params;
        let lay = &self.layout;

        let mut d_merge = vec![S::zero(); n * c.fc_merge];
        let merge = View::rows(&tape.merge[..], c.fc_merge);
        {
            let (wr, br) = lay.layer(POLICY);
            let (dw, db) = split(&mut out, wr.clone(), br);
            dense_backward(merge, n, &p[wr], View::rows(&grads.policy, a), dw, db, Some((&mut d_merge, c.fc_merge)));
        }
        {
            let (wr, br) = lay.layer(VALUE);
            let mut d_from_value = vec![S::zero(); n * c.fc_merge];
            let (dw, db) = split(&mut out, wr.clone(), br);
            dense_backward(merge, n, &p[wr], View::rows(&grads.value, 1), dw, db, Some((&mut d_from_value, c.fc_merge)));
            for (d, v) in d_merge.iter_mut().zip(d_from_value) {
                *d = *d + v;
            }
        }
        if c.action_space == ActionSpace::Continuous {
            let r = lay.tensors[LOG_STD].range();
            if grads.log_std.len() != r.len() {
                return Err(NetError::Shape("log_std gradient has the wrong length".into()));
            }
            out[r].copy_from_slice(&grads.log_std);
        }
        relu_backward(&tape.merge, &mut d_merge);

        let width = c.concat_len();
        let mut d_concat = vec![S::zero(); n * width];
        {
            let (wr, br) = lay.layer(FC_MERGE);
            let (dw, db) = split(&mut out, wr.clone(), br);
            dense_backward(
                View::rows(&tape.concat[..], width),
                n,
                &p[wr],
                View::rows(&d_merge, c.fc_merge),
                dw,
                db,
                Some((&mut d_concat, width)),
            );
        }
        relu_backward(&tape.concat, &mut d_concat);

        let flat = c.flatten_len().expect("validated");
        let mut d_conv2 = vec![S::zero(); n * flat];
        let mut col = 0;
        for (index, input, inputs) in self.branches(batch, &tape.conv2) {
            let (wr, br) = lay.layer(index);
            let units = br.len();
            let (dw, db) = split(&mut out, wr.clone(), br);
            let dy = View::new(&d_concat[col..], width, 1);
            let dx = (index == FC_LIDAR).then_some((&mut d_conv2[..], flat));
            dense_backward(View::rows(input, inputs), n, &p[wr], dy, dw, db, dx);
            col += units;
        }
        relu_backward(&tape.conv2, &mut d_conv2);

        let mut d_conv1 = vec![S::zero(); tape.conv1.len()];
        {
            let (wr, br) = lay.layer(CONV2);
            let (dw, db) = split(&mut out, wr.clone(), br);
            conv1d_backward(&tape.conv1, n, g2, &p[wr], &d_conv2, dw, db, Some(&mut d_conv1));
        }
        relu_backward(&tape.conv1, &mut d_conv1);
        {
            let (wr, br) = lay.layer(CONV1);
            let (dw, db) = split(&mut out, wr.clone(), br);
            conv1d_backward(&batch.lidar, n, g1, &p[wr], &d_conv1, dw, db, None);
        }
        Ok(out)
    }
}

/// Disjoint mutable views of a weight range and the bias range that follows it.
fn split<S>(
    buf: &mut [S],
    w: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [S], &mut [S]) {
    debug_assert_eq!(w.end, b.start);
    let (dw, db) = buf[w.start..b.end].split_at_mut(w.len());
    (dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::sim::{Action, LidarScan, Observation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_stack(rng: &mut ChaCha8Rng, beams: usize) -> ObservationStack {
        let frame = |rng: &mut ChaCha8Rng| Observation {
            lidar: LidarScan {
                ranges: (0..beams).map(|_| rng.random_range(0.0..20.0f32)).collect(),
            },
            goal_direction: Vec2::from_angle(rng.random_range(-3.0..3.0)),
            goal_distance: rng.random_range(0.0..12.0),
            velocity: Action::new(rng.random_range(0.0..0.6), rng.random_range(-1.5..1.5)),
        };
        let mut s = ObservationStack::bootstrap(frame(rng));
        for _ in 0..3 {
            s = s.pushed(frame(rng));
        }
        s
    }

    #[test]
    fn zero_network_is_uniform() {
        let cfg = NetConfig::standard(ActionSpace::Discrete);
        let net = Network::<f32>::zeros(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = InputBatch::from_stacks(&cfg, &[random_stack(&mut rng, 1081)]).unwrap();
        let (out, _) = net.forward(&b).unwrap();
        assert!(out.policy.iter().all(|&z| z == 0.0));
        assert_eq!(out.value, vec![0.0]);
        let ActionDistribution::Discrete(d) = out.distribution(0) else { panic!() };
        for p in d.probs() {
            assert!((p - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let cfg = NetConfig::standard(ActionSpace::Continuous);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::<f32>::init(cfg.clone(), &mut rng).unwrap();
        let s = random_stack(&mut rng, 1081);
        let b = InputBatch::from_stacks(&cfg, [&s, &s]).unwrap();
        let (out, _) = net.forward(&b).unwrap();
        assert_eq!(out.policy_row(0), out.policy_row(1));
        assert_eq!(out.value[0], out.value[1]);
    }

    #[test]
    fn batch_order_equivariance() {
        let cfg = NetConfig::tiny(ActionSpace::Discrete);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::<f64>::init(cfg.clone(), &mut rng).unwrap();
        let stacks: Vec<_> = (0..5).map(|_| random_stack(&mut rng, 8)).collect();
        let b = InputBatch::from_stacks(&cfg, &stacks).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let (o1, _) = net.forward(&b).unwrap();
        let (o2, _) = net.forward(&b.gather(&perm)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(o2.policy_row(k), o1.policy_row(i));
            assert_eq!(o2.value[k], o1.value[i]);
        }
    }

    #[test]
    fn wrong_beam_count_is_a_shape_error() {
        let cfg = NetConfig::standard(ActionSpace::Discrete);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_stack(&mut rng, 720);
        assert!(matches!(InputBatch::<f32>::from_stacks(&cfg, [&s]), Err(NetError::Shape(_))));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradient() {
        let cfg = NetConfig::tiny(ActionSpace::Continuous);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Network::<f64>::init(cfg.clone(), &mut rng).unwrap();
        let stacks: Vec<_> = (0..3).map(|_| random_stack(&mut rng, 8)).collect();
        let b = InputBatch::from_stacks(&cfg, &stacks).unwrap();
        let (_, tape) = net.forward(&b).unwrap();
        let g = net.backward(&b, &tape, &OutputGrads::zeros(&cfg, 3)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn policy_loss_leaves_value_head_untouched() {
        let cfg = NetConfig::tiny(ActionSpace::Discrete);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::<f64>::init(cfg.clone(), &mut rng).unwrap();
        let stacks: Vec<_> = (0..3).map(|_| random_stack(&mut rng, 8)).collect();
        let b = InputBatch::from_stacks(&cfg, &stacks).unwrap();
        let (_, tape) = net.forward(&b).unwrap();
        let mut og = OutputGrads::zeros(&cfg, 3);
        og.policy.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let g = net.backward(&b, &tape, &og).unwrap();
        let l = net.layout();
        for name in ["value.weight", "value.bias"] {
            assert!(g[l.get(name).unwrap().range()].iter().all(|&v| v == 0.0));
        }
        assert!(g[l.get("policy.weight").unwrap().range()].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn mismatched_tape_is_rejected() {
        let cfg = NetConfig::tiny(ActionSpace::Discrete);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = Network::<f64>::init(cfg.clone(), &mut rng).unwrap();
        let s = random_stack(&mut rng, 8);
        let one = InputBatch::from_stacks(&cfg, [&s]).unwrap();
        let two = InputBatch::from_stacks(&cfg, [&s, &s]).unwrap();
        let (_, tape) = net.forward(&one).unwrap();
        assert!(net.backward(&two, &tape, &OutputGrads::zeros(&cfg, 2)).is_err());
    }

    #[test]
    fn f32_and_f64_agree() {
        let cfg = NetConfig::standard(ActionSpace::Discrete);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Network::<f64>::init(cfg.clone(), &mut rng).unwrap();
        let net32 = net.cast::<f32>();
        let s = random_stack(&mut rng, 1081);
        let (o64, _) = net.forward(&InputBatch::from_stacks(&cfg, [&s]).unwrap()).unwrap();
        let (o32, _) = net32.forward(&InputBatch::from_stacks(&cfg, [&s]).unwrap()).unwrap();
        for (a, b) in o64.policy.iter().zip(&o32.policy) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }
}
