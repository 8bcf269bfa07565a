use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Backend, Reader, Writer};
use super::tabular::{read_continuation, write_continuation};
use super::{
    backup_target, CheckpointError, Continuation, DistanceHistogram, EvalError,
    FeasibilityEvaluator, TrainableEvaluator,
};
use crate::envs::{Action, Embedding, Target};
use crate::relabel::RelabeledSample;
use crate::scalar::Scalar;

/// Source `(x, y, sword, shield)`, target `(x, y, sword, shield)`, one-hot action.
pub const N_FEATURES: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardConfig<F> {
    pub t_bins: usize,
    pub hidden: Vec<usize>,
    /// Adam step size.
    pub lr: F,
    pub sync_period: u64,
    pub continuation: Continuation<F>,
    /// Grid extent used to scale coordinates into roughly `[0, 1]`.
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl<F: Scalar> FeedforwardConfig<F> {
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        Self {
            t_bins: super::DEFAULT_T,
            hidden: vec![128; 3],
            lr: F::of(1e-3),
            sync_period: 1000,
            continuation: Continuation::Control,
            width,
            height,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer<F> {
    n_in: usize,
    n_out: usize,
    /// Row-major `n_out x n_in`.
    w: Vec<F>,
    b: Vec<F>,
}

impl<F: Scalar> Layer<F> {
    fn forward(&self, x: &[F], out: &mut Vec<F>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.b[o];
            for (w, v) in row.iter().zip(x) {
                acc += *w * *v;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Net<F> {
    layers: Vec<Layer<F>>,
}

impl<F: Scalar> Net<F> {
    fn init(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|p| {
                let (n_in, n_out) = (p[0], p[1]);
                let bound = 1.0 / (n_in as f64).sqrt();
                Layer {
                    n_in,
                    n_out,
                    w: (0..n_in * n_out)
                        .map(|_| F::of(rng.random_range(-bound..bound)))
                        .collect(),
                    b: vec![F::zero(); n_out],
                }
            })
            .collect();
        Self { layers }
    }

    /// Activations of every layer, input first; hidden layers after ReLU, the
    /// last entry holds raw logits.
    fn forward(&self, x: &[F]) -> Vec<Vec<F>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.n_out);
            layer.forward(acts.last().expect("non-empty"), &mut out);
            if i < last {
                for v in &mut out {
                    *v = v.max(F::zero());
                }
            }
            acts.push(out);
        }
        acts
    }

    fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn params(&self) -> impl Iterator<Item = &F> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }
}

fn softmax<F: Scalar>(z: &[F]) -> Vec<F> {
    let m = z.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: F = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax<F: Scalar>(z: &[F]) -> Vec<F> {
    let m = z.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<F>().ln();
    z.iter().map(|&v| v - lse).collect()
}

/// Mean cross-entropy of a batch and its gradient, flattened like
/// [`Net::params`].
fn loss_and_grad<F: Scalar>(net: &Net<F>, inputs: &[Vec<F>], targets: &[Vec<F>]) -> (F, Vec<F>) {
    let mut grads: Vec<Layer<F>> = net
        .layers
        .iter()
        .map(|l| Layer {
            n_in: l.n_in,
            n_out: l.n_out,
            w: vec![F::zero(); l.w.len()],
            b: vec![F::zero(); l.b.len()],
        })
        .collect();
    let n = F::of_usize(inputs.len());
    let mut loss = F::zero();
    for (x, b) in inputs.iter().zip(targets) {
        let acts = net.forward(x);
        let z = acts.last().expect("output layer");
        let ls = log_softmax(z);
        loss -= b.iter().zip(&ls).map(|(&bi, &l)| bi * l).sum::<F>();
        let mut delta: Vec<F> = ls
            .iter()
            .zip(b)
            .map(|(&l, &bi)| (l.exp() - bi) / n)
            .collect();
        for li in (0..net.layers.len()).rev() {
            let layer = &net.layers[li];
            let input = &acts[li];
            let g = &mut grads[li];
            for o in 0..layer.n_out {
                let d = delta[o];
                g.b[o] += d;
                let row = &mut g.w[o * layer.n_in..(o + 1) * layer.n_in];
                for (gw, &v) in row.iter_mut().zip(input) {
                    *gw += d * v;
                }
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![F::zero(); layer.n_in];
            for o in 0..layer.n_out {
                let d = delta[o];
                let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // ReLU derivative, taken from the post-activation values
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= F::zero() {
                    *p = F::zero();
                }
            }
            delta = prev;
        }
    }
    let flat = grads
        .into_iter()
        .flat_map(|l| l.w.into_iter().chain(l.b))
        .collect();
    (loss / n, flat)
}

#[derive(Debug, Clone, PartialEq)]
struct Adam<F> {
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Scalar> Adam<F> {
    fn new(n: usize) -> Self {
        Self {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Net<F>, grad: &[F], lr: F) {
        let (b1, b2, eps) = (F::of(0.9), F::of(0.999), F::of(1e-8));
        self.t += 1;
        let c1 = F::one() - b1.powi(self.t);
        let c2 = F::one() - b2.powi(self.t);
        for (((p, &g), m), v) in net
            .params_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Multilayer perceptron evaluator with a softmax histogram head.
#[derive(Debug, Clone)]
pub struct FeedforwardEvaluator<F> {
    config: FeedforwardConfig<F>,
    online: Net<F>,
    target: Net<F>,
    adam: Adam<F>,
    steps: u64,
}

impl<F: Scalar> FeedforwardEvaluator<F> {
    pub fn new(config: FeedforwardConfig<F>) -> Self {
        assert!(config.t_bins >= 2 && config.sync_period >= 1);
        let mut sizes = vec![N_FEATURES];
        sizes.extend(&config.hidden);
        sizes.push(config.t_bins);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let online = Net::init(&sizes, &mut rng);
        let adam = Adam::new(online.n_params());
        Self {
            target: online.clone(),
            online,
            adam,
            config,
            steps: 0,
        }
    }

    pub fn config(&self) -> &FeedforwardConfig<F> {
        &self.config
    }

    pub fn features(&self, source: &Embedding, action: Action, target: &Target) -> Vec<F> {
        let sx = F::one() / F::of_usize(self.config.width.max(2) - 1);
        let sy = F::one() / F::of_usize(self.config.height.max(2) - 1);
        let flag = |b: bool| if b { F::one() } else { F::zero() };
        let t = &target.embedding;
        let mut x = vec![
            F::of(source.x as f64) * sx,
            F::of(source.y as f64) * sy,
            flag(source.has_sword),
            flag(source.has_shield),
            F::of(t.x as f64) * sx,
            F::of(t.y as f64) * sy,
            flag(t.has_sword),
            flag(t.has_shield),
            F::zero(),
            F::zero(),
            F::zero(),
            F::zero(),
        ];
        x[8 + action.index()] = F::one();
        x
    }

    fn run(&self, net: &Net<F>, source: &Embedding, action: Action, target: &Target) -> DistanceHistogram<F> {
        let acts = net.forward(&self.features(source, action, target));
        DistanceHistogram::from_vec(softmax(acts.last().expect("output layer")))
    }

    pub fn sync(&mut self) {
        self.target = self.online.clone();
    }

    pub fn backup(&self, s: &RelabeledSample) -> DistanceHistogram<F> {
        let t = self.config.t_bins;
        let tr = &s.transition;
        if s.h_flag || tr.terminal() {
            return backup_target(t, s.h_flag, tr.terminal(), None);
        }
        let next = tr.next.embedding();
        let per_action = Action::ALL.map(|a| self.run(&self.target, &next, a, &s.target));
        backup_target(t, false, false, Some(&self.config.continuation.combine(&per_action)))
    }

    pub(crate) fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(Backend::Feedforward);
        let c = &self.config;
        w.u64(c.t_bins as u64);
        w.u64(c.hidden.len() as u64);
        for &h in &c.hidden {
            w.u64(h as u64);
        }
        w.f(c.lr);
        w.u64(c.sync_period);
        write_continuation(&mut w, &c.continuation);
        w.u64(c.width as u64);
        w.u64(c.height as u64);
        w.u64(c.seed);
        w.u64(self.steps);
        w.u64(self.adam.t as u64);
        for net in [&self.online, &self.target] {
            for &p in net.params() {
                w.f(p);
            }
        }
        for &p in self.adam.m.iter().chain(&self.adam.v) {
            w.f(p);
        }
        w.finish()
    }

    pub(crate) fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader::new(bytes, Backend::Feedforward)?;
        let t_bins = r.u64()? as usize;
        let n_hidden = r.u64()? as usize;
        if t_bins < 2 || n_hidden > 64 {
            return Err(CheckpointError::Corrupt("implausible shape".into()));
        }
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            hidden.push(r.u64()? as usize);
        }
        if hidden.iter().any(|&h| h == 0 || h > 1 << 16) {
            return Err(CheckpointError::Corrupt("implausible layer width".into()));
        }
        let lr = r.f()?;
        let sync_period = r.u64()?.max(1);
        let continuation = read_continuation(&mut r)?;
        let width = r.u64()? as usize;
        let height = r.u64()? as usize;
        let seed = r.u64()?;
        let mut me = Self::new(FeedforwardConfig {
            t_bins,
            hidden,
            lr,
            sync_period,
            continuation,
            width,
            height,
            seed,
        });
        me.steps = r.u64()?;
        me.adam.t = r.u64()? as i32;
        for p in me.online.params_mut() {
            *p = r.f()?;
        }
        for p in me.target.params_mut() {
            *p = r.f()?;
        }
        for p in me.adam.m.iter_mut().chain(me.adam.v.iter_mut()) {
            *p = r.f()?;
        }
        r.end()?;
        Ok(me)
    }
}

impl<F: Scalar> FeasibilityEvaluator<F> for FeedforwardEvaluator<F> {
    fn t_bins(&self) -> usize {
        self.config.t_bins
    }

    fn predict(
        &self,
        _task_id: u64,
        source: &Embedding,
        action: Option<Action>,
        target: &Target,
    ) -> DistanceHistogram<F> {
        match action {
            Some(a) => self.run(&self.online, source, a, target),
            None => self
                .config
                .continuation
                .combine(&Action::ALL.map(|a| self.run(&self.online, source, a, target))),
        }
    }
}

impl<F: Scalar> TrainableEvaluator<F> for FeedforwardEvaluator<F> {
    fn train_batch(&mut self, samples: &[RelabeledSample]) -> Result<F, EvalError> {
        if samples.is_empty() {
            return Err(EvalError::EmptyBatch);
        }
        let inputs: Vec<Vec<F>> = samples
            .iter()
            .map(|s| self.features(&s.transition.s.embedding(), s.transition.action, &s.target))
            .collect();
        let targets: Vec<Vec<F>> = samples.iter().map(|s| self.backup(s).into_vec()).collect();
        let (loss, grad) = loss_and_grad(&self.online, &inputs, &targets);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(EvalError::NonFiniteLoss {
                step: self.steps,
                batch: samples.len(),
                task_id: samples[0].transition.task_id,
            });
        }
        let lr = self.config.lr;
        self.adam.step(&mut self.online, &grad, lr);
        self.steps += 1;
        if self.steps.is_multiple_of(self.config.sync_period) {
            self.sync();
        }
        Ok(loss)
    }

    fn steps(&self) -> u64 {
        self.steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{step, EnvState, Family, GridTask, StateSpace};
    use crate::relabel::{Strategy, Transition};

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Net::<f64>::init(&[5, 7, 6, 4], &mut rng);
        let inputs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let (_, grad) = loss_and_grad(&net, &inputs, &targets);
        let h = 1e-6;
        for k in 0..net.n_params() {
            let mut plus = net.clone();
            *plus.params_mut().nth(k).unwrap() += h;
            let mut minus = net.clone();
            *minus.params_mut().nth(k).unwrap() -= h;
            let num = (loss_and_grad(&plus, &inputs, &targets).0
                - loss_and_grad(&minus, &inputs, &targets).0)
                / (2.0 * h);
            let ana = grad[k];
            let rel = (num - ana).abs() / (num.abs() + ana.abs()).max(1e-7);
            assert!(rel < 1e-4, "param {k}: numeric {num} analytic {ana}");
        }
    }

    #[test]
    fn predictions_are_normalized() {
        let ev = FeedforwardEvaluator::<f32>::new(FeedforwardConfig::new(8, 8, 1));
        let h = ev.predict(0, &Embedding::new(1, 2, true, false), None, &Target::singleton(Embedding::new(5, 5, true, true)));
        assert!(h.is_normalized(1e-5));
        assert_eq!(h.t_bins(), 16);
    }

    #[test]
    fn learns_a_corridor() {
        let task = GridTask::from_layout(Family::Rds, &["...G"]).unwrap();
        let space = StateSpace::new(&task);
        let target = Target::singleton(space.state(2).embedding());
        let mut cfg = FeedforwardConfig::<f64>::new(4, 1, 7);
        cfg.hidden = vec![32, 32, 32];
        cfg.lr = 3e-3;
        cfg.sync_period = 20;
        let mut ev = FeedforwardEvaluator::new(cfg);
        let mut data = Vec::new();
        for i in space.nonterminal() {
            for a in Action::ALL {
                let s: EnvState = *space.state(i);
                let (next, r, _) = step(&task, &s, a).unwrap();
                data.push(RelabeledSample {
                    transition: Transition { task_id: 0, episode_id: 0, t: 0, s, action: a, reward: r, next },
                    target,
                    h_flag: crate::envs::indicator(&next, &target),
                    strategy: Strategy::Episode,
                });
            }
        }
        for _ in 0..1500 {
            ev.train_batch(&data).unwrap();
        }
        let h = ev.predict(0, &space.state(0).embedding(), Some(Action::Right), &target);
        assert!(h.p(2) > 0.9, "{:?}", h.probs());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut cfg = FeedforwardConfig::<f64>::new(4, 4, 2);
        cfg.hidden = vec![8, 8];
        let ev = FeedforwardEvaluator::new(cfg);
        let back = FeedforwardEvaluator::<f64>::from_bytes(&ev.to_bytes()).unwrap();
        assert_eq!(back.online, ev.online);
        assert_eq!(back.to_bytes(), ev.to_bytes());
    }
}
