//! Pose-conditioned per-point offset network: (pose, μ) → 64 → 64 → 3.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::Pose;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::par::par_map;

pub const HIDDEN: usize = 64;
const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major, `outputs × inputs`.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn xavier(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        Dense {
            inputs,
            outputs,
            w: (0..inputs * outputs).map(|_| dist.sample(rng)).collect(),
            b: vec![0.0; outputs],
        }
    }

    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.w[o * self.inputs..(o + 1) * self.inputs]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Tape {
    pose: Vec<f64>,
    mus: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualNet {
    joints: usize,
    layers: [Dense; 3],
    #[serde(skip)]
    grad: Vec<f64>,
    #[serde(skip)]
    tape: Option<Tape>,
}

struct Activations {
    h1: [f64; HIDDEN],
    h2: [f64; HIDDEN],
    out: Vec3,
}

impl ResidualNet {
    /// Xavier-uniform hidden layers and an all-zero output layer.
    pub fn new(joints: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = 3 * joints + 3;
        let layers = [
            Dense::xavier(inputs, HIDDEN, &mut rng),
            Dense::xavier(HIDDEN, HIDDEN, &mut rng),
            Dense::zeros(HIDDEN, 3),
        ];
        let n = layers.iter().map(Dense::len).sum();
        ResidualNet {
            joints,
            layers,
            grad: vec![0.0; n],
            tape: None,
        }
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn input_dim(&self) -> usize {
        3 * self.joints + 3
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    /// All weights and biases, layer by layer (weights row-major, then biases).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::arg(format!(
                "{} residual parameters given, expected {}",
                values.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&values[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Accumulated weight gradients, laid out like [`ResidualNet::params`].
    pub fn grads(&self) -> &[f64] {
        &self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.clear();
        self.grad.resize(self.param_count(), 0.0);
    }

    fn check_pose(&self, pose: &Pose) -> Result<()> {
        if pose.joint_count() != self.joints {
            return Err(Error::arg(format!(
                "pose has {} joints, residual network expects {}",
                pose.joint_count(),
                self.joints
            )));
        }
        Ok(())
    }

    /// First-layer pre-activation contribution of the pose (shared by all points).
    fn pose_term(&self, pose: &[f64]) -> [f64; HIDDEN] {
        let l = &self.layers[0];
        let mut z = [0.0; HIDDEN];
        for (o, zo) in z.iter_mut().enumerate() {
            let row = l.row(o);
            *zo = l.b[o] + row[..pose.len()].iter().zip(pose).map(|(w, x)| w * x).sum::<f64>();
        }
        z
    }

    fn eval(&self, pose_term: &[f64; HIDDEN], mu: &Vec3) -> Activations {
        let [l1, l2, l3] = &self.layers;
        let k3 = 3 * self.joints;
        let mut h1 = [0.0; HIDDEN];
        for (o, h) in h1.iter_mut().enumerate() {
            let row = l1.row(o);
            *h = (pose_term[o] + row[k3] * mu.x + row[k3 + 1] * mu.y + row[k3 + 2] * mu.z).tanh();
        }
        let mut h2 = [0.0; HIDDEN];
        for (o, h) in h2.iter_mut().enumerate() {
            *h = (l2.b[o] + l2.row(o).iter().zip(&h1).map(|(w, x)| w * x).sum::<f64>()).tanh();
        }
        let mut out = Vec3::zeros();
        for o in 0..3 {
            out[o] = l3.b[o] + l3.row(o).iter().zip(&h2).map(|(w, x)| w * x).sum::<f64>();
        }
        Activations { h1, h2, out }
    }

    /// Offset for one canonical position; does not touch the tape.
    pub fn forward(&self, pose: &Pose, mu: &Vec3) -> Result<Vec3> {
        self.check_pose(pose)?;
        let term = self.pose_term(&pose.flat_rotations());
        Ok(self.eval(&term, mu).out)
    }

    /// Offsets for many points; records what [`ResidualNet::backward`] needs.
    pub fn forward_batch(&mut self, pose: &Pose, mus: &[Vec3]) -> Result<Vec<Vec3>> {
        self.check_pose(pose)?;
        let flat = pose.flat_rotations();
        let term = self.pose_term(&flat);
        let out = par_map(mus, |mu| self.eval(&term, mu).out);
        self.tape = Some(Tape {
            pose: flat,
            mus: mus.to_vec(),
        });
        Ok(out)
    }

    /// Backpropagates `upstream` (one gradient per point of the last batch),
    /// accumulating weight gradients; returns gradients on the input positions.
    pub fn backward(&mut self, upstream: &[Vec3]) -> Result<Vec<Vec3>> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("residual backward called without a recorded forward pass".into()))?;
        if upstream.len() != tape.mus.len() {
            return Err(Error::arg(format!(
                "{} upstream gradients for {} points",
                upstream.len(),
                tape.mus.len()
            )));
        }
        let term = self.pose_term(&tape.pose);
        let chunks: Vec<(usize, usize)> = (0..tape.mus.len())
            .step_by(CHUNK)
            .map(|s| (s, (s + CHUNK).min(tape.mus.len())))
            .collect();
        let parts = par_map(&chunks, |&(a, b)| self.backward_chunk(&term, &tape.mus[a..b], &upstream[a..b]));

        if self.grad.len() != self.param_count() {
            self.zero_grad();
        }
        let k3 = 3 * self.joints;
        let inputs = self.input_dim();
        let mut dmu = Vec::with_capacity(tape.mus.len());
        for (g, dz1_sum, d) in parts {
            for (acc, v) in self.grad.iter_mut().zip(&g) {
                *acc += v;
            }
            // pose columns of the first layer see the same input for every point
            for (o, s) in dz1_sum.iter().enumerate() {
                for (i, p) in tape.pose.iter().enumerate() {
                    self.grad[o * inputs + i] += s * p;
                }
            }
            dmu.extend(d);
        }
        debug_assert_eq!(k3 + 3, inputs);
        Ok(dmu)
    }

    fn backward_chunk(&self, term: &[f64; HIDDEN], mus: &[Vec3], upstream: &[Vec3]) -> (Vec<f64>, [f64; HIDDEN], Vec<Vec3>) {
        let [l1, l2, l3] = &self.layers;
        let inputs = self.input_dim();
        let k3 = 3 * self.joints;
        let off_b1 = l1.w.len();
        let off_w2 = off_b1 + l1.b.len();
        let off_b2 = off_w2 + l2.w.len();
        let off_w3 = off_b2 + l2.b.len();
        let off_b3 = off_w3 + l3.w.len();
        let mut g = vec![0.0; self.param_count()];
        let mut dz1_sum = [0.0; HIDDEN];
        let mut dmu = Vec::with_capacity(mus.len());
        for (mu, dy) in mus.iter().zip(upstream) {
            if *dy == Vec3::zeros() {
                dmu.push(Vec3::zeros());
                continue;
            }
            let act = self.eval(term, mu);
            let mut dh2 = [0.0; HIDDEN];
            for o in 0..3 {
                g[off_b3 + o] += dy[o];
                let row = l3.row(o);
                for i in 0..HIDDEN {
                    g[off_w3 + o * HIDDEN + i] += dy[o] * act.h2[i];
                    dh2[i] += row[i] * dy[o];
                }
            }
            let mut dh1 = [0.0; HIDDEN];
            for o in 0..HIDDEN {
                let dz = dh2[o] * (1.0 - act.h2[o] * act.h2[o]);
                if dz == 0.0 {
                    continue;
                }
                g[off_b2 + o] += dz;
                let row = l2.row(o);
                for i in 0..HIDDEN {
                    g[off_w2 + o * HIDDEN + i] += dz * act.h1[i];
                    dh1[i] += row[i] * dz;
                }
            }
            let mut d = Vec3::zeros();
            for o in 0..HIDDEN {
                let dz = dh1[o] * (1.0 - act.h1[o] * act.h1[o]);
                g[off_b1 + o] += dz;
                dz1_sum[o] += dz;
                let row = l1.row(o);
                for c in 0..3 {
                    g[o * inputs + k3 + c] += dz * mu[c];
                    d[c] += row[k3 + c] * dz;
                }
            }
            dmu.push(d);
        }
        (g, dz1_sum, dmu)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut net: ResidualNet =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("residual network: {e}")))?;
        let inputs = 3 * net.joints + 3;
        let shapes = [(inputs, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, 3)];
        for (l, (i, o)) in net.layers.iter().zip(shapes) {
            if l.inputs != i || l.outputs != o || l.w.len() != i * o || l.b.len() != o {
                return Err(Error::Format("residual network layer shapes do not match".into()));
            }
        }
        net.zero_grad();
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_net(joints: usize, seed: u64) -> ResidualNet {
        let mut net = ResidualNet::new(joints, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let p: Vec<f64> = net.params().iter().map(|_| rng.gen_range(-0.5..0.5)).collect();
        net.set_params(&p).unwrap();
        net
    }

    fn pose(joints: usize, seed: u64) -> Pose {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Pose::new(
            (0..joints).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()) - Vec3::repeat(0.5)).collect(),
            Vec3::zeros(),
        )
    }

    #[test]
    fn fresh_net_outputs_zero() {
        let net = ResidualNet::new(3, 0);
        for s in 0..5 {
            let mu = Vec3::new(s as f64, -1.0, 2.5);
            assert_eq!(net.forward(&pose(3, s), &mu).unwrap(), Vec3::zeros());
        }
    }

    #[test]
    fn seeded_nets_are_reproducible() {
        let a = random_net(2, 4);
        let b = random_net(2, 4);
        let mu = Vec3::new(0.1, 0.2, 0.3);
        assert_eq!(a.forward(&pose(2, 1), &mu).unwrap(), b.forward(&pose(2, 1), &mu).unwrap());
        assert_eq!(ResidualNet::new(2, 9).params(), ResidualNet::new(2, 9).params());
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut net = ResidualNet::new(2, 0);
        assert!(matches!(net.backward(&[Vec3::zeros()]), Err(Error::State(_))));
        net.forward_batch(&pose(2, 0), &[Vec3::zeros()]).unwrap();
        net.backward(&[Vec3::x()]).unwrap();
        assert!(matches!(net.backward(&[Vec3::x()]), Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut net = random_net(2, 3);
        net.forward_batch(&pose(2, 0), &[Vec3::new(0.3, 0.1, 0.2)]).unwrap();
        let d = net.backward(&[Vec3::zeros()]).unwrap();
        assert!(net.grads().iter().all(|&g| g == 0.0));
        assert_eq!(d, vec![Vec3::zeros()]);
    }

    /// Loss = Σ_points upstream · output.
    fn loss(net: &ResidualNet, pose: &Pose, mus: &[Vec3], up: &[Vec3]) -> f64 {
        mus.iter().zip(up).map(|(m, u)| net.forward(pose, m).unwrap().dot(u)).sum()
    }

    #[test]
    fn weight_and_input_gradients_match_finite_differences() {
        let h = 1e-5;
        let net0 = random_net(3, 11);
        let p = pose(3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mus: Vec<Vec3> = (0..3).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let up: Vec<Vec3> = (0..3).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()) - Vec3::repeat(0.5)).collect();
        let mut net = net0.clone();
        net.zero_grad();
        net.forward_batch(&p, &mus).unwrap();
        let dmu = net.backward(&up).unwrap();
        let base = net0.params();
        let mut worst: f64 = 0.0;
        for k in 0..base.len() {
            let mut plus = net0.clone();
            let mut minus = net0.clone();
            let mut v = base.clone();
            v[k] += h;
            plus.set_params(&v).unwrap();
            v[k] -= 2.0 * h;
            minus.set_params(&v).unwrap();
            let fd = (loss(&plus, &p, &mus, &up) - loss(&minus, &p, &mus, &up)) / (2.0 * h);
            let a = net.grads()[k];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
        for (i, mu) in mus.iter().enumerate() {
            for c in 0..3 {
                let mut a = mus.clone();
                a[i][c] = mu[c] + h;
                let mut b = mus.clone();
                b[i][c] = mu[c] - h;
                let fd = (loss(&net0, &p, &a, &up) - loss(&net0, &p, &b, &up)) / (2.0 * h);
                assert!((dmu[i][c] - fd).abs() / dmu[i][c].abs().max(1e-6) < 1e-5);
            }
        }
    }

    #[test]
    fn gradients_add_over_points() {
        let p = pose(2, 2);
        let mus = [Vec3::new(0.1, 0.5, -0.2), Vec3::new(-0.4, 0.0, 0.9)];
        let up = [Vec3::new(1.0, -0.5, 0.25), Vec3::new(0.3, 0.2, -1.0)];
        let grads = |mus: &[Vec3], up: &[Vec3]| {
            let mut net = random_net(2, 7);
            net.zero_grad();
            net.forward_batch(&p, mus).unwrap();
            net.backward(up).unwrap();
            net.grads().to_vec()
        };
        let both = grads(&mus, &up);
        let a = grads(&mus[..1], &up[..1]);
        let b = grads(&mus[1..], &up[1..]);
        for k in 0..both.len() {
            assert!((a[k] + b[k] - both[k]).abs() <= 1e-12 * (1.0 + both[k].abs()));
        }
    }

    #[test]
    fn json_round_trip() {
        let net = random_net(2, 1);
        let back = ResidualNet::from_json(&net.to_json()).unwrap();
        assert_eq!(back.params(), net.params());
        assert!(ResidualNet::from_json("{\"joints\": 2}").is_err());
    }
}
